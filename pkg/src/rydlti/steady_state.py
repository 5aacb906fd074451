"""Equilibrium operating point: the unit-trace null vector of the drift matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liouvillian import N_LEVELS, N_STATE, LiouvillianPair, idx, transpose_permutation

NULL_RTOL = 1e-12
_DIAG = np.array([idx(k, k) for k in range(1, N_LEVELS + 1)])


class SteadyStateError(ArithmeticError):
    """The drift matrix has no unique normalizable steady state."""


@dataclass(frozen=True)
class DensityVector:
    """Flattened (row-major) 5x5 density matrix."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=complex).reshape(N_STATE)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def __getitem__(self, ij: tuple[int, int]) -> complex:
        """1-based element access, ``rho[1, 2]``."""
        return complex(self.data[idx(*ij)])

    @property
    def matrix(self) -> np.ndarray:
        return self.data.reshape(N_LEVELS, N_LEVELS)

    @property
    def populations(self) -> np.ndarray:
        return self.data[_DIAG].real.copy()

    @property
    def trace(self) -> complex:
        return complex(self.data[_DIAG].sum())

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data[transpose_permutation()].conj())))

    @classmethod
    def ground_state(cls) -> "DensityVector":
        data = np.zeros(N_STATE, dtype=complex)
        data[idx(1, 1)] = 1.0
        return cls(data)


def null_space_dimension(a: np.ndarray, rtol: float = NULL_RTOL) -> tuple[int, np.ndarray]:
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s < rtol * s[0])) if s[0] > 0 else a.shape[0], s


def solve_steady_state(liouvillian: LiouvillianPair | np.ndarray) -> DensityVector:
    """Unit-trace null vector of ``A``.

    The null direction is the right singular vector of the smallest singular
    value; uniqueness is judged with a cutoff relative to the largest one.

    Raises
    ------
    SteadyStateError
        If the null space is not one dimensional or the null vector has
        (numerically) zero trace.
    """
    a = liouvillian.a if isinstance(liouvillian, LiouvillianPair) else np.asarray(liouvillian)
    _, s, vh = np.linalg.svd(a)
    if s[0] == 0:
        raise SteadyStateError(f"null space has dimension {a.shape[0]} (zero matrix)")
    dim = int(np.sum(s < NULL_RTOL * s[0]))
    if dim != 1:
        raise SteadyStateError(f"null space has dimension {dim}, expected 1 "
                               f"(smallest singular values {s[-3:]})")
    vec = vh[-1].conj()
    tr = vec[_DIAG].sum()
    if abs(tr) < 1e-14:
        raise SteadyStateError(f"null vector trace {abs(tr):.3e} too small to normalize")
    vec = vec / tr
    # enforce exact Hermiticity and real populations
    vec = 0.5 * (vec + vec[transpose_permutation()].conj())
    vec[_DIAG] = vec[_DIAG].real
    return DensityVector(vec)
