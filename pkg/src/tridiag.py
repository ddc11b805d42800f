"""Tridiagonal matrices on the interior nodes and the Thomas algorithm.

Storage follows the usual three-vector convention: for a system of size n,
``lower`` holds (0, a_2, ..., a_n), ``main`` holds (b_1, ..., b_n) and
``upper`` holds (c_1, ..., c_{n-1}, 0). All three vectors have length n.
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class TridiagonalSystem:
    lower: np.ndarray
    main: np.ndarray
    upper: np.ndarray
    role: str = "generic"

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.main = np.asarray(self.main, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.main.shape[0]
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError(
                f"Diagonals must all have length {n}, got "
                f"{self.lower.shape[0]}/{n}/{self.upper.shape[0]}"
            )

    @property
    def size(self) -> int:
        return self.main.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = self.main * v
        out[1:] += self.lower[1:] * v[:-1]
        out[:-1] += self.upper[:-1] * v[1:]
        return out

    def to_dense(self) -> np.ndarray:
        n = self.size
        dense = np.diag(self.main)
        if n > 1:
            dense += np.diag(self.lower[1:], k=-1) + np.diag(self.upper[:-1], k=1)
        return dense

    def is_symmetric(self, rtol: float = 1e-14) -> bool:
        return bool(np.allclose(self.lower[1:], self.upper[:-1], rtol=rtol, atol=0.0))

    def combine(self, other: "TridiagonalSystem", a: float, b: float, role: str = "combined"):
        """Return a*self + b*other."""
        return TridiagonalSystem(
            lower=a * self.lower + b * other.lower,
            main=a * self.main + b * other.main,
            upper=a * self.upper + b * other.upper,
            role=role,
        )

    def gershgorin_bounds(self) -> tuple[float, float]:
        """Lower and upper Gershgorin bounds on the spectrum."""
        radius = np.abs(self.lower) + np.abs(self.upper)
        return float(np.min(self.main - radius)), float(np.max(self.main + radius))


class ThomasFactorization:
    """Forward-elimination coefficients of a tridiagonal matrix.

    The matrix is factored once; each ``solve`` then costs two sweeps. No
    pivoting is done, which is safe for the symmetric positive definite
    systems produced by the finite element assembly.
    """

    def __init__(self, system: TridiagonalSystem):
        self.size = system.size
        self._lower = system.lower.tolist()
        main = system.main.tolist()
        upper = system.upper.tolist()

        denom = [0.0] * self.size
        c_prime = [0.0] * self.size
        denom[0] = main[0]
        c_prime[0] = upper[0] / denom[0]
        for i in range(1, self.size):
            denom[i] = main[i] - self._lower[i] * c_prime[i - 1]
            c_prime[i] = upper[i] / denom[i]
        self._denom = denom
        self._c_prime = c_prime

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        d = np.asarray(rhs, dtype=float).tolist()
        if len(d) != self.size:
            raise ValueError(f"Right-hand side has length {len(d)}, expected {self.size}")

        lower, denom, c_prime = self._lower, self._denom, self._c_prime
        d[0] = d[0] / denom[0]
        for i in range(1, self.size):
            d[i] = (d[i] - lower[i] * d[i - 1]) / denom[i]
        for i in range(self.size - 2, -1, -1):
            d[i] -= c_prime[i] * d[i + 1]
        return np.array(d)


def thomas_solve(system: TridiagonalSystem, rhs: np.ndarray) -> np.ndarray:
    """Solve ``system @ x = rhs`` with the Thomas algorithm."""
    return ThomasFactorization(system).solve(rhs)
