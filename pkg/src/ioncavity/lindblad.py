"""Master-equation engine for the 18-level ion coupled to two cavity modes.

Rotating frame
--------------
Every coherent coupling is rendered time-independent by assigning each
manifold (and the photon modes) its own rotation frequency along the
coupling tree. With delta_drv the first drive tone's detuning,
delta_rep1/delta_rep2 the repump detunings and delta_cav the cavity
detuning from the P3/2 <-> D5/2 line, the diagonal offsets are

    S1/2:   Zeeman
    P3/2:   Zeeman - delta_drv
    D5/2:   Zeeman - delta_drv + delta_ref
    D3/2:   Zeeman
    P1/2:   Zeeman - delta_rep2
    photon: delta_cav - delta_ref      (per photon, either mode)

where delta_ref = delta_rep1 when the 854 nm repump is on, else
delta_cav. The cavity edge changes photon number, so the apparent loop
(repump and cavity both addressing P3/2 <-> D5/2) is in fact a tree in
the joint atom-photon level graph and a fully static frame exists; the
photon bookkeeping absorbs the frequency difference. Two-photon
resonances are frame-independent. Only a multi-tone drive leaves an
explicit oscillation, at the tone difference frequency.

Dissipation
-----------
One collapse operator per spontaneous sub-channel
(upper sub-state -> lower sub-state, q) with rate
Gamma_branch * cg^2, plus sqrt(2 kappa) a for each cavity mode, so
photon number decays at 2 kappa. Vectorization is column-stacking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .atom import decay_channels, zeeman_shift
from .errors import SteadyStateError, StiffnessError
from .hilbert import (
    HilbertLayout,
    commutator_superoperator,
    dissipator_superoperator,
    unvec,
    vec,
)
from .polarization import spherical_unit_vector
from .system import SystemModel

TRANSITION_MANIFOLDS = {
    "drive": ("S1/2", "P3/2"),
    "repump_854": ("D5/2", "P3/2"),
    "repump_866": ("D3/2", "P1/2"),
}


@dataclass
class DensityMatrix:
    """Trace-one Hermitian state on the truncated atom (x) cavity space."""

    matrix: np.ndarray
    time: float = 0.0

    def validate(self, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8):
        m = self.matrix
        herm = np.max(np.abs(m - m.conj().T))
        if herm > herm_tol:
            raise ValueError(f"not Hermitian: max asymmetry {herm:.2e}")
        tr = np.trace(m).real
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace {tr!r} differs from 1")
        min_eig = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min())
        if min_eig < -eig_tol:
            raise ValueError(f"negative eigenvalue {min_eig:.2e}")
        return self

    @property
    def trace(self) -> complex:
        return np.trace(self.matrix)

    def min_eigenvalue(self) -> float:
        m = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(m).min())


@dataclass
class HamiltonianParts:
    """Static and explicitly time-dependent pieces of H in the rotating frame."""

    static: sp.csr_matrix  # diagonal + repumps + cavity couplings
    drive_coupling: sp.csr_matrix | None  # first-tone coupling + h.c. (Hermitian)
    beat_operators: list  # [(A_k, freq_k)] for extra drive tones; term A e^{-i f t} + h.c.
    envelope: object  # callable t -> [0, 1] scaling all drive terms

    def at_time(self, t: float) -> sp.csr_matrix:
        h = self.static.copy()
        env = self.envelope(t)
        if env != 0.0 and self.drive_coupling is not None:
            h = h + env * self.drive_coupling
        for a_op, freq in self.beat_operators:
            phase = env * np.exp(-1j * freq * t)
            h = h + phase * a_op + np.conj(phase) * a_op.conj().T
        return h.tocsr()

    @property
    def is_static(self) -> bool:
        env_const = getattr(self.envelope, "is_constant", False)
        return env_const and not self.beat_operators

    def full_static(self) -> sp.csr_matrix:
        if not self.is_static:
            raise ValueError("Hamiltonian has explicit time dependence")
        if self.drive_coupling is None:
            return self.static
        return (self.static + self.drive_coupling).tocsr()


def _coupling_operator(layout, lower_label, upper_label, polarization, amplitude):
    """Sum over Zeeman paths of (amplitude/2) c_q cg |upper><lower|."""
    atom = layout.atom
    op = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    from .atom import ZeemanState, cg_coefficient

    for lo in atom[lower_label].sublevels():
        for q in (-1, 0, 1):
            c = polarization.component(q)
            if abs(c) < 1e-15:
                continue
            two_m_up = lo.two_m + 2 * q
            if abs(two_m_up) > atom[upper_label].two_j:
                continue
            up = ZeemanState(atom[upper_label], two_m_up)
            cg = cg_coefficient(lo, up, q)
            if cg == 0.0:
                continue
            op = op + (amplitude / 2.0) * c * cg * layout.transition(up, lo)
    return op.tocsr()


def _cavity_coupling(model: SystemModel, layout: HilbertLayout) -> sp.csr_matrix:
    """g-weighted P3/2 <-> D5/2 couplings to both polarization modes."""
    atom = layout.atom
    basis = model.mode_basis
    from .atom import ZeemanState, cg_coefficient

    op = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    if model.cavity.g == 0.0:
        return op
    for channel in ("H", "V"):
        a_mode = layout.destroy(channel)
        mode_vec = basis.mode_vector(channel)
        for d in atom["D5/2"].sublevels():
            for q in (-1, 0, 1):
                proj = np.vdot(mode_vec, spherical_unit_vector(q))
                if abs(proj) < 1e-15:
                    continue
                two_m_p = d.two_m + 2 * q
                if abs(two_m_p) > atom["P3/2"].two_j:
                    continue
                p = ZeemanState(atom["P3/2"], two_m_p)
                cg = cg_coefficient(d, p, q)
                if cg == 0.0:
                    continue
                raise_op = layout.transition(p, d) @ a_mode
                coup = model.cavity.g * proj * cg
                op = op + coup * raise_op + np.conj(coup) * raise_op.conj().T
    return op.tocsr()


def frame_offsets(model: SystemModel) -> dict[str, float]:
    """Per-manifold diagonal offsets and the photon offset of the frame."""
    drive = model.laser("drive")
    rep1 = model.laser("repump_854")
    rep2 = model.laser("repump_866")
    delta_drv = drive.detuning if drive else 0.0
    delta_ref = rep1.detuning if rep1 else model.cavity.delta_cav
    return {
        "S1/2": 0.0,
        "P3/2": -delta_drv,
        "D5/2": -delta_drv + delta_ref,
        "D3/2": 0.0,
        "P1/2": -(rep2.detuning if rep2 else 0.0),
        "photon": model.cavity.delta_cav - delta_ref,
    }


def build_hamiltonian(model: SystemModel, layout: HilbertLayout) -> HamiltonianParts:
    """Rotating-frame Hamiltonian of the full system, in rad/s."""
    offsets = frame_offsets(model)
    diag = np.zeros(layout.dim)
    for state in layout.atom.all_states():
        energy = zeeman_shift(state, model.b_gauss) + offsets[state.manifold.label]
        nd = layout.mode_dim
        base = layout.atom_index(state) * nd * nd
        for rem in range(nd * nd):
            diag[base + rem] += energy
    n_total = layout.number("H") + layout.number("V")
    h_static = sp.diags(diag).tocsr() + offsets["photon"] * n_total

    for role in ("repump_854", "repump_866"):
        laser = model.laser(role)
        if laser is None:
            continue
        lower, upper = TRANSITION_MANIFOLDS[role]
        a_op = _coupling_operator(
            layout, lower, upper, laser.polarization, laser.tones[0].amplitude
        )
        h_static = h_static + a_op + a_op.conj().T

    h_static = (h_static + _cavity_coupling(model, layout)).tocsr()

    from .system import Envelope

    drive = model.laser("drive")
    drive_coupling = None
    beats = []
    envelope = drive.envelope if drive else Envelope()
    if drive is not None:
        lower, upper = TRANSITION_MANIFOLDS["drive"]
        a1 = _coupling_operator(
            layout, lower, upper, drive.polarization, drive.tones[0].amplitude
        )
        drive_coupling = (a1 + a1.conj().T).tocsr()
        for tone in drive.tones[1:]:
            a_k = _coupling_operator(layout, lower, upper, drive.polarization, tone.amplitude)
            beats.append((a_k.tocsr(), tone.detuning - drive.tones[0].detuning))

    parts = HamiltonianParts(
        static=h_static, drive_coupling=drive_coupling, beat_operators=beats, envelope=envelope
    )
    if parts.is_static:
        h_full = parts.full_static()
        asym = abs(h_full - h_full.conj().T).max()
        if asym > 1e-12 * max(1.0, abs(h_full).max()):
            raise ValueError(f"static Hamiltonian not Hermitian: {asym:.2e}")
    return parts


def collapse_operators(model: SystemModel, layout: HilbertLayout):
    """Labelled collapse operators: spontaneous sub-channels plus cavity decay."""
    ops = []
    for upper_label in ("P3/2", "P1/2", "D5/2", "D3/2"):
        for up, lo, q, rate in decay_channels(layout.atom, upper_label):
            label = f"spont:{up.label}->{lo.label},q={q:+d}"
            ops.append((label, math.sqrt(rate) * layout.transition(lo, up)))
    if model.cavity.kappa > 0:
        for channel in ("H", "V"):
            ops.append(
                (f"cavity:{channel}", math.sqrt(2 * model.cavity.kappa) * layout.destroy(channel))
            )
    return ops


@dataclass
class Liouvillian:
    """Sparse superoperator plus its components, over vectorized states."""

    layout: HilbertLayout
    parts: HamiltonianParts
    collapses: list
    static_part: sp.csr_matrix
    td_terms: list = field(default_factory=list)  # [(superop, f(t))]

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def is_static(self) -> bool:
        return not self.td_terms

    @property
    def matrix(self) -> sp.csr_matrix:
        if not self.is_static:
            raise ValueError("Liouvillian has explicit time dependence")
        return self.static_part

    def apply(self, t: float, v: np.ndarray) -> np.ndarray:
        out = self.static_part @ v
        for superop, f in self.td_terms:
            c = f(t)
            if c != 0.0:
                out = out + c * (superop @ v)
        return out

    def trace_preservation_defect(self) -> float:
        """sup-norm of the adjoint applied to the identity; 0 if trace-preserving."""
        ident = vec(np.eye(self.dim, dtype=complex))
        defect = self.static_part.conj().T @ ident
        worst = np.max(np.abs(defect))
        for superop, _ in self.td_terms:
            worst = max(worst, np.max(np.abs(superop.conj().T @ ident)))
        return float(worst)

    def dump_operators(self, directory):
        """Sparse-triplet text dump (row, col, re, im) of H and collapse operators."""
        import pathlib

        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)

        def write(name, op):
            coo = sp.csr_matrix(op).tocoo()
            with open(directory / f"{name}.txt", "w", newline="\n") as fh:
                for r, c, x in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{r} {c} {x.real:.17g} {x.imag:.17g}\n")

        write("hamiltonian_static", self.parts.static)
        if self.parts.drive_coupling is not None:
            write("hamiltonian_drive", self.parts.drive_coupling)
        for i, (label, op) in enumerate(self.collapses):
            safe = label.replace("/", "").replace(":", "_").replace(">", "").replace("<", "")
            write(f"collapse_{i:02d}_{safe}", op)


def build_liouvillian(
    model: SystemModel, layout: HilbertLayout, extra_hamiltonian: sp.spmatrix | None = None
) -> Liouvillian:
    """Assemble L(rho) = -i[H, rho] + sum_c D[c] rho in vectorized form."""
    parts = build_hamiltonian(model, layout)
    collapses = collapse_operators(model, layout)

    h_static = parts.static
    if extra_hamiltonian is not None:
        h_static = (h_static + extra_hamiltonian).tocsr()
    static = commutator_superoperator(h_static)
    for _, c_op in collapses:
        static = static + dissipator_superoperator(c_op)

    td_terms = []
    env = parts.envelope
    env_const = getattr(env, "is_constant", False)
    if parts.drive_coupling is not None:
        drive_super = commutator_superoperator(parts.drive_coupling)
        if env_const and not parts.beat_operators:
            static = static + drive_super
        elif env_const:
            static = static + drive_super
        else:
            td_terms.append((drive_super, lambda t, e=env: e(t)))
    for a_op, freq in parts.beat_operators:
        m_super = commutator_superoperator_nonherm(a_op)
        n_super = commutator_superoperator_nonherm(a_op.conj().T.tocsr())
        td_terms.append(
            (m_super, lambda t, f=freq, e=env: e(t) * np.exp(-1j * f * t))
        )
        td_terms.append(
            (n_super, lambda t, f=freq, e=env: e(t) * np.exp(+1j * f * t))
        )

    return Liouvillian(
        layout=layout,
        parts=parts,
        collapses=collapses,
        static_part=static.tocsr(),
        td_terms=td_terms,
    )


def commutator_superoperator_nonherm(a: sp.spmatrix) -> sp.csr_matrix:
    """Superoperator of -i[A, .] for one (non-Hermitian) operator A."""
    n = a.shape[0]
    eye = sp.identity(n, format="csr")
    return (-1j * (sp.kron(eye, a) - sp.kron(a.T, eye))).tocsr()


def drive_detuning_shift_superoperator(layout: HilbertLayout) -> sp.csr_matrix:
    """d L / d delta_drv: commutator with -(P_{P3/2} + P_{D5/2}).

    The drive detuning enters the frame only through the P3/2 and D5/2
    diagonal offsets, so a detuning scan is L(d) = L(d0) - (d - d0) * S
    with S this fixed sparse superoperator.
    """
    proj = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    for label in ("P3/2", "D5/2"):
        for state in layout.atom[label].sublevels():
            proj = proj + layout.projector(state)
    return commutator_superoperator(proj.tocsr())


# -- steady state ------------------------------------------------------------


def steady_state(
    liouv: Liouvillian, check_unique: bool = True, return_info: bool = False
):
    """Stationary density matrix of a static Liouvillian.

    Direct sparse solve of the vectorized system with one row replaced
    by the trace constraint; falls back to shifted inverse iteration if
    the factorization fails. The residual ||L rho|| must come out below
    1e-10 * ||L||; optionally the null space is probed for a second
    near-zero eigenvalue, which would mean the stationary state is not
    unique.
    """
    if not liouv.is_static:
        raise SteadyStateError("steady state requires a time-independent Liouvillian")
    L = liouv.static_part.tocsc()
    n = liouv.dim
    scale = float(abs(L).max())
    if scale == 0.0:
        raise SteadyStateError("Liouvillian is identically zero")

    trace_row = sp.csc_matrix(
        (np.full(n, scale), (np.zeros(n, dtype=int), np.arange(n) * (n + 1))),
        shape=(1, n * n),
    )
    modified = sp.vstack([trace_row, L.tocsr()[1:, :]]).tocsc()
    rhs = np.zeros(n * n, dtype=complex)
    rhs[0] = scale

    rho_vec = None
    try:
        lu = spla.splu(modified)
        rho_vec = lu.solve(rhs)
    except RuntimeError:
        rho_vec = None
    if rho_vec is None or not np.all(np.isfinite(rho_vec)):
        rho_vec = _inverse_iteration(L, scale, n)

    rho = unvec(rho_vec, n)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(L @ vec(rho)))
    if residual > 1e-10 * scale:
        rho_vec = _inverse_iteration(L, scale, n, start=vec(rho))
        rho = unvec(rho_vec, n)
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        residual = float(np.linalg.norm(L @ vec(rho)))
        if residual > 1e-10 * scale:
            raise SteadyStateError(
                f"steady-state residual {residual:.2e} exceeds {1e-10 * scale:.2e}"
            )

    if check_unique:
        _check_uniqueness(L, scale, vec(rho))

    state = DensityMatrix(matrix=rho, time=math.inf)
    if return_info:
        return state, {"residual": residual, "residual_scale": scale}
    return state


def _inverse_iteration(L, scale, n, start=None, shift=None, iterations=50):
    sigma = shift if shift is not None else -1e-9 * scale
    try:
        lu = spla.splu((L - sigma * sp.identity(n * n, format="csc")).tocsc())
    except RuntimeError as exc:
        raise SteadyStateError(f"inverse-iteration factorization failed: {exc}") from exc
    rng = np.random.default_rng(7)
    v = start if start is not None else rng.standard_normal(n * n) + 0j
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
        if np.linalg.norm(L @ v) <= 1e-12 * scale:
            break
    return v


def _check_uniqueness(L, scale, known_null, iterations=40):
    """Probe for a second null vector: a degenerate stationary manifold.

    Deflated inverse iteration: starting orthogonal to the known
    stationary vector and re-orthogonalizing each sweep, convergence of
    ||L v|| to (numerical) zero exposes a second zero eigenvalue. In a
    system with a unique stationary state the iteration settles on the
    slowest relaxation mode instead, whose rate is physical (>> 0).
    """
    n2 = L.shape[0]
    sigma = -1e-9 * scale
    try:
        lu = spla.splu((L - sigma * sp.identity(n2, format="csc")).tocsc())
    except RuntimeError as exc:
        raise SteadyStateError(f"uniqueness probe factorization failed: {exc}") from exc
    null = known_null / np.linalg.norm(known_null)
    rng = np.random.default_rng(11)
    v = rng.standard_normal(n2) + 1j * rng.standard_normal(n2)
    v -= null * np.vdot(null, v)
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        v = lu.solve(v)
        v -= null * np.vdot(null, v)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return
        v /= norm
    second_rate = float(np.linalg.norm(L @ v))
    if second_rate <= 1e-9 * scale:
        raise SteadyStateError(
            "stationary state is not unique: found a second null vector "
            f"(|L v| = {second_rate:.3e} against scale {scale:.3e})"
        )


# -- time evolution ----------------------------------------------------------

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.zeros((7, 7))
_DP_A[1, :1] = [1 / 5]
_DP_A[2, :2] = [3 / 40, 9 / 40]
_DP_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_DP_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_DP_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_DP_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_ERR = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


@dataclass
class Trajectory:
    """Time-ordered density matrices plus integrator statistics."""

    times: np.ndarray
    states: list
    n_steps: int
    n_rejected: int
    max_trace_drift: float

    def __iter__(self):
        return iter(self.states)

    def __len__(self):
        return len(self.states)

    def expectations(self, operator) -> np.ndarray:
        return np.array([expectation(s, operator) for s in self.states])

    def min_eigenvalue(self) -> float:
        return min(s.min_eigenvalue() for s in self.states)


def evolve(
    liouv: Liouvillian,
    rho0: np.ndarray | DensityMatrix,
    t_grid,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    max_steps: int = 20_000_000,
) -> Trajectory:
    """Adaptive embedded Runge-Kutta (Dormand-Prince 5(4)) integration.

    ``t_grid`` must be increasing; the integrator clamps steps to hit
    every requested time exactly. Raises :class:`StiffnessError` with a
    fastest-timescale diagnostic if the step size underflows, and
    reports the worst trace drift across the run (guaranteed <= 1e-7
    for a trace-preserving Liouvillian at these tolerances).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be an increasing array of at least two times")
    rho0_mat = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, complex)
    y = vec(rho0_mat).astype(complex)
    t = float(t_grid[0])

    rhs = liouv.apply if liouv.td_terms else (lambda _t, v: liouv.static_part @ v)

    states = [DensityMatrix(matrix=rho0_mat.copy(), time=t)]
    trace0 = float(np.trace(rho0_mat).real)
    max_drift = 0.0

    k = np.empty((7, y.size), dtype=complex)
    k[0] = rhs(t, y)
    h = _initial_step(rhs, t, y, k[0], rtol, atol)
    t_end = float(t_grid[-1])
    next_out = 1
    n_steps = n_rejected = 0
    h_floor = max(1e-14 * (t_end - t), np.finfo(float).tiny * 1e3)

    while t < t_end:
        if n_steps + n_rejected >= max_steps:
            raise StiffnessError(
                f"step budget {max_steps} exhausted at t = {t:.3e} s",
                fastest_timescale=_fastest_timescale(liouv),
            )
        clamped = False
        if t + h >= t_grid[next_out]:
            h_try = t_grid[next_out] - t
            clamped = True
        else:
            h_try = h
        if h_try < h_floor:
            raise StiffnessError(
                f"step size underflow ({h_try:.3e} s) at t = {t:.3e} s; "
                "the dynamics contain a timescale the tolerance cannot absorb",
                fastest_timescale=_fastest_timescale(liouv),
            )

        for i in range(1, 7):
            yi = y + h_try * (_DP_A[i, :i] @ k[:i])
            k[i] = rhs(t + _DP_C[i] * h_try, yi)
        y_new = y + h_try * (_DP_B5 @ k)
        err_vec = h_try * (_DP_ERR @ k)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(float(np.mean(np.abs(err_vec / sc) ** 2)))

        if err <= 1.0:
            t = t_grid[next_out] if clamped else t + h_try
            y = y_new
            k[0] = k[6]  # FSAL
            n_steps += 1
            if clamped:
                rho = unvec(y, liouv.dim)
                states.append(DensityMatrix(matrix=rho, time=t))
                drift = abs(float(np.trace(rho).real) - trace0)
                max_drift = max(max_drift, drift)
                next_out += 1
        else:
            n_rejected += 1  # FSAL stage k[0] still holds f(t, y)
        factor = 0.9 * err ** -0.2 if err > 0 else 5.0
        h = h_try * min(5.0, max(0.2, factor))

    if max_drift > 1e-7:
        raise StiffnessError(
            f"trace drifted by {max_drift:.2e} (> 1e-7); Liouvillian may not be "
            "trace-preserving or tolerances are too loose",
            fastest_timescale=_fastest_timescale(liouv),
        )
    return Trajectory(
        times=t_grid,
        states=states,
        n_steps=n_steps,
        n_rejected=n_rejected,
        max_trace_drift=max_drift,
    )


def _initial_step(rhs, t, y, f0, rtol, atol):
    sc = atol + rtol * np.abs(y)
    d0 = math.sqrt(float(np.mean(np.abs(y / sc) ** 2)))
    d1 = math.sqrt(float(np.mean(np.abs(f0 / sc) ** 2)))
    if d0 < 1e-5 or d1 < 1e-5:
        return 1e-9
    return 0.01 * d0 / d1


def _fastest_timescale(liouv: Liouvillian) -> float:
    h = liouv.parts.static
    fastest = float(np.max(np.abs(h.diagonal()))) if h.nnz else 0.0
    for _, c in liouv.collapses:
        fastest = max(fastest, float(abs(c).max()) ** 2)
    return 1.0 / fastest if fastest > 0 else math.inf


# -- observables -------------------------------------------------------------


def expectation(rho: DensityMatrix | np.ndarray, operator) -> complex:
    """Tr(rho O); raises on dimension mismatch."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if sp.issparse(operator):
        if operator.shape[0] != m.shape[0]:
            raise ValueError(
                f"operator dimension {operator.shape} does not match state {m.shape}"
            )
        return complex((operator.T.multiply(m)).sum())
    operator = np.asarray(operator)
    if operator.shape != m.shape:
        raise ValueError(
            f"operator dimension {operator.shape} does not match state {m.shape}"
        )
    return complex(np.sum(operator.T * m))


def detected_mode_numbers(rho, layout: HilbertLayout, chain) -> np.ndarray:
    """Photon-number expectations of the two detected (analysis-basis) modes."""
    a_h, a_v = layout.destroy("H"), layout.destroy("V")
    n_h = expectation(rho, (a_h.conj().T @ a_h).tocsr()).real
    n_v = expectation(rho, (a_v.conj().T @ a_v).tocsr()).real
    cross = expectation(rho, (a_h.conj().T @ a_v).tocsr())
    u = chain.analysis_basis
    out = []
    for i in range(2):
        val = (
            abs(u[i, 0]) ** 2 * n_h
            + abs(u[i, 1]) ** 2 * n_v
            + 2 * (np.conj(u[i, 0]) * u[i, 1] * cross).real
        )
        out.append(max(val, 0.0))
    return np.array(out)


def photon_flux(
    rho, layout: HilbertLayout, kappa: float, chain, include_dark: bool = True
) -> np.ndarray:
    """Detected count rate per channel: 2 kappa <n_det> x efficiency (+ dark)."""
    from .cavity import channel_efficiency

    numbers = detected_mode_numbers(rho, layout, chain)
    eff = channel_efficiency(chain)
    flux = 2 * kappa * numbers * np.array(eff)
    if include_dark:
        flux = flux + np.array(chain.dark_counts)
    return flux


def manifold_populations(rho, layout: HilbertLayout) -> dict[str, float]:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    diag = np.real(np.diag(m))
    nd = layout.mode_dim
    out = {}
    for label in ("S1/2", "D3/2", "D5/2", "P1/2", "P3/2"):
        total = 0.0
        for state in layout.atom[label].sublevels():
            base = layout.atom_index(state) * nd * nd
            total += float(np.sum(diag[base : base + nd * nd]))
        out[label] = total
    return out


def state_population(rho, layout: HilbertLayout, state) -> float:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    diag = np.real(np.diag(m))
    nd = layout.mode_dim
    base = layout.atom_index(state) * nd * nd
    return float(np.sum(diag[base : base + nd * nd]))
