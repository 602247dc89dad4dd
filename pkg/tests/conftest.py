import numpy as np
import pytest

from ioncavity.atom import load_atom
from ioncavity.hilbert import HilbertLayout


@pytest.fixture(scope="session")
def atom():
    return load_atom()


@pytest.fixture(scope="session")
def layout(atom):
    return HilbertLayout(atom=atom, n_max=1)


@pytest.fixture(scope="session")
def atom_no_decay():
    return load_atom(
        overrides={
            "P3/2": {"decay_rate_hz": 0.0, "branching": {}},
            "P1/2": {"decay_rate_hz": 0.0, "branching": {}},
        }
    )


@pytest.fixture(scope="session")
def atom_closed_tls():
    """P3/2 decays only to S1/2: the sigma-minus cycle is a closed two-level system."""
    return load_atom(overrides={"P3/2": {"branching": {"S1/2": 1.0}}})


def assert_density_matrix(rho, tol=1e-8):
    m = rho.matrix if hasattr(rho, "matrix") else np.asarray(rho)
    assert np.max(np.abs(m - m.conj().T)) < 1e-10
    assert abs(np.trace(m).real - 1.0) < tol
    assert np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() > -1e-7
