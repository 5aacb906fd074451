import numpy as np
import pytest
from hypothesis import strategies as st

from rydlti.liouvillian import LiouvillianPair
from rydlti.params import TWO_PI, default_params
from rydlti.steady_state import solve_steady_state


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def pair(params):
    return LiouvillianPair.from_params(params)


@pytest.fixture(scope="session")
def rho_ss(pair):
    return solve_steady_state(pair)


def lindblad_superoperator(p, dp=None, dc=None, omega_rf=None):
    """Row-major Lindblad generator built from H and collapse operators.

    Written independently of the block tables: Hamiltonian in the rotating
    frame (Rabi terms with the sign convention of the coupling blocks) and
    explicit jump operators for every decay channel.
    """
    dp = p.delta_p if dp is None else dp
    dc = p.delta_c if dc is None else dc
    orf = p.omega_lo if omega_rf is None else omega_rf
    h = 0.5 * np.array([
        [0, -p.omega_p, 0, 0, 0],
        [-p.omega_p, -2 * dp, -p.omega_c, 0, 0],
        [0, -p.omega_c, -2 * (dp + dc), -orf, 0],
        [0, 0, -orf, -2 * (dp + dc + p.delta_rf), 0],
        [0, 0, 0, 0, 0]], dtype=complex)
    eye = np.eye(5)
    # vec(X rho Y) = kron(X, Y^T) vec(rho) for row-major flattening
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    channels = [(p.gamma_21, 2, 1), (p.gamma_32, 3, 2), (p.gamma_dsg, 3, 5),
                (p.gamma_dsg, 4, 5), (p.gamma_t, 3, 1), (p.gamma_t, 4, 1),
                (p.gamma_dsr, 5, 1)]
    for rate, src, dst in channels:
        c = np.zeros((5, 5))
        c[dst - 1, src - 1] = np.sqrt(rate)
        cdc = c.T @ c
        sup += np.kron(c, c) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return sup


def random_params(rng, base=None):
    """Random but physical parameter set (rates 2*pi*[0.01, 20] MHz)."""
    base = default_params() if base is None else base
    rates = {k: TWO_PI * 10 ** rng.uniform(4, 7.3) for k in
             ("omega_p", "omega_c", "omega_lo", "gamma_21", "gamma_32", "gamma_t",
              "gamma_dsg", "gamma_dsr")}
    dets = {k: TWO_PI * rng.normal(0, 5e6) for k in ("delta_p", "delta_c", "delta_rf")}
    return base.replace(**rates, **dets)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
