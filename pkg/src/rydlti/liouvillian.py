"""Drift and perturbation matrices of the vectorized 4+1 level master equation.

The density matrix is flattened row-major, so element ``rho[i, j]`` (1-based
levels) lives at ``idx(i, j) = 5 * (i - 1) + (j - 1)``.  The drift matrix is
written out block by block: block ``(r, c)`` maps the row ``rho[c, :]`` of the
density matrix into the time derivative of the row ``rho[r, :]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import SensorParams

N_LEVELS = 5
N_STATE = N_LEVELS * N_LEVELS


def idx(i: int, j: int) -> int:
    """Flat index of ``rho[i, j]`` for 1-based level labels."""
    if not (1 <= i <= N_LEVELS and 1 <= j <= N_LEVELS):
        raise ValueError(f"level labels must be in 1..{N_LEVELS}, got ({i}, {j})")
    return N_LEVELS * (i - 1) + (j - 1)


def flatten(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(N_STATE)


def unflatten(vec: np.ndarray) -> np.ndarray:
    return np.asarray(vec, dtype=complex).reshape(N_LEVELS, N_LEVELS)


def transpose_permutation() -> np.ndarray:
    """Index map sending ``idx(i, j)`` to ``idx(j, i)``."""
    return np.arange(N_STATE).reshape(N_LEVELS, N_LEVELS).T.reshape(N_STATE)


def _blocks(p: SensorParams, dp: float, dc: float, omega_rf: float):
    """The nonzero 5x5 blocks of the drift matrix, keyed by 1-based block position."""
    op, oc, orf = p.omega_p, p.omega_c, omega_rf
    drf = p.delta_rf
    g21, g32 = p.gamma_21, p.gamma_32
    gt, gdsg, gdsr = p.gamma_t, p.gamma_dsg, p.gamma_dsr
    gtil = p.gamma_tilde
    j = 1j
    hp, hc, hr = j * op / 2, j * oc / 2, j * orf / 2
    eye = np.eye(N_LEVELS, dtype=complex)

    def single(row, col, value):
        m = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
        m[row - 1, col - 1] = value
        return m

    a11 = np.array([
        [0, -hp, 0, 0, 0],
        [-hp, -g21 / 2 - j * dp, -hc, 0, 0],
        [0, -hc, -(gtil + g32) / 2 - j * (dp + dc), -hr, 0],
        [0, 0, -hr, -gtil / 2 - j * (dp + dc + drf), 0],
        [0, 0, 0, 0, -gdsr / 2],
    ], dtype=complex)
    a12 = hp * eye
    a12[0, 1] = g21
    a22 = np.array([
        [-g21 / 2 + j * dp, -hp, 0, 0, 0],
        [-hp, -g21, -hc, 0, 0],
        [0, -hc, -(gtil + g21 + g32) / 2 - j * dc, -hr, 0],
        [0, 0, -hr, -(gtil + g21) / 2 - j * (dc + drf), 0],
        [0, 0, 0, 0, -(gdsr + g21) / 2 + j * dp],
    ], dtype=complex)
    a23 = hc * eye
    a23[1, 2] = g32
    a33 = np.array([
        [-(gtil + g32) / 2 + j * (dp + dc), -hp, 0, 0, 0],
        [-hp, -(gtil + g21 + g32) / 2 + j * dc, -hc, 0, 0],
        [0, -hc, -gtil - g32, -hr, 0],
        [0, 0, -hr, -gdsg - gt - g32 / 2 - j * drf, 0],
        [0, 0, 0, 0, -(gtil + gdsr + g32) / 2 + j * (dp + dc)],
    ], dtype=complex)
    a44 = np.array([
        [-gtil / 2 + j * (dp + dc + drf), -hp, 0, 0, 0],
        [-hp, -(gtil + g21) / 2 + j * (dc + drf), -hc, 0, 0],
        [0, -hc, -gtil - g32 / 2 + j * drf, -hr, 0],
        [0, 0, -hr, -gdsg - gt, 0],
        [0, 0, 0, 0, -(gtil + gdsr) / 2 + j * (dp + dc + drf)],
    ], dtype=complex)
    # (3,3) entry: the ρ53 coherence shares the dephasing rate of ρ35.
    a55 = np.array([
        [-gdsr / 2, -hp, 0, 0, 0],
        [-hp, -(gdsr + g21) / 2 - j * dp, -hc, 0, 0],
        [0, -hc, -(gtil + gdsr + g32) / 2 - j * (dp + dc), -hr, 0],
        [0, 0, -hr, -(gtil + gdsr) / 2 - j * (dp + dc + drf), 0],
        [0, 0, 0, 0, -gdsr],
    ], dtype=complex)

    return {
        (1, 1): a11,
        (1, 2): a12,
        (1, 3): single(1, 3, gt),
        (1, 4): single(1, 4, gt),
        (1, 5): single(1, 5, gdsr),
        (2, 1): hp * eye,
        (2, 2): a22,
        (2, 3): a23,
        (3, 2): hc * eye,
        (3, 3): a33,
        (3, 4): hr * eye,
        (4, 3): hr * eye,
        (4, 4): a44,
        (5, 3): single(5, 3, gdsg),
        (5, 4): single(5, 4, gdsg),
        (5, 5): a55,
    }


def _assemble(blocks) -> np.ndarray:
    out = np.zeros((N_STATE, N_STATE), dtype=complex)
    for (r, c), block in blocks.items():
        out[5 * (r - 1):5 * r, 5 * (c - 1):5 * c] = block
    return out


def build_drift_matrix(params: SensorParams, delta_p_eff: float | None = None,
                       delta_c_eff: float | None = None,
                       omega_rf: float | None = None) -> np.ndarray:
    """Assemble the 25x25 drift matrix ``A``.

    Parameters
    ----------
    params : SensorParams
        Sensor configuration, angular units.
    delta_p_eff, delta_c_eff : float, optional
        Probe and control detunings to use in place of ``params.delta_p`` and
        ``params.delta_c`` (e.g. Doppler-shifted values for one velocity class).
    omega_rf : float, optional
        RF Rabi frequency on the 3-4 transition; defaults to the local
        oscillator ``params.omega_lo``.

    Returns
    -------
    ndarray, shape (25, 25), complex
    """
    dp = params.delta_p if delta_p_eff is None else float(delta_p_eff)
    dc = params.delta_c if delta_c_eff is None else float(delta_c_eff)
    orf = params.omega_lo if omega_rf is None else float(omega_rf)
    if not np.all(np.isfinite([dp, dc, orf])):
        raise ValueError("detunings and RF Rabi frequency must be finite")
    return _assemble(_blocks(params, dp, dc, orf))


def build_perturbation_matrix() -> np.ndarray:
    """Coupling matrix ``B = dA/dOmega_RF``; parameter independent, 20 nonzeros."""
    diag = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    diag[2, 3] = diag[3, 2] = -0.5j
    off = 0.5j * np.eye(N_LEVELS, dtype=complex)
    blocks = {(k, k): diag for k in range(1, 6)}
    blocks[(3, 4)] = off
    blocks[(4, 3)] = off
    return _assemble(blocks)


@dataclass(frozen=True)
class LiouvillianPair:
    """Drift matrix ``a`` (LO included) and RF coupling matrix ``b``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("a", "b"):
            m = np.array(getattr(self, name), dtype=complex)
            if m.shape != (N_STATE, N_STATE):
                raise ValueError(f"{name} must be {N_STATE}x{N_STATE}, got {m.shape}")
            m.flags.writeable = False
            object.__setattr__(self, name, m)

    @classmethod
    def from_params(cls, params: SensorParams, delta_p_eff: float | None = None,
                    delta_c_eff: float | None = None) -> "LiouvillianPair":
        return cls(build_drift_matrix(params, delta_p_eff, delta_c_eff),
                   build_perturbation_matrix())

    def generator(self, omega_rf1: float) -> np.ndarray:
        """Full generator ``A + omega_rf1 * B`` for an RF perturbation ``omega_rf1``."""
        return self.a + omega_rf1 * self.b
