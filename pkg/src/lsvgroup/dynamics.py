"""The Liverani-Saussol-Vaienti intermittency map and its branch structure.

``f(x) = x (1 + 2^g x^g)`` on ``[0, 1/2]`` and ``2x - 1`` on ``(1/2, 1]``.
The return set is ``Y = [1/2, 1]``; the cylinders ``Z_n`` of return time ``n``
are delimited by the preimages ``c_k`` of ``1/2`` under the left branch.

The scalar kernels are numba-compiled so that every consumer (ensemble
simulation, inducing, Ulam assembly) iterates bit-identical orbits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "MapParams",
    "BranchPoints",
    "DomainError",
    "ConvergenceError",
    "ReturnCapExceeded",
    "apply_map",
    "left_branch_inverse",
    "branch_points",
    "return_time_orbit",
    "return_time",
    "classify_return_time",
]

BISECTION_TOL = 1e-14
BISECTION_ITERS = 200
MAX_RETURN = 10_000_000


class DomainError(ValueError):
    """Argument outside the domain of the map."""


class ConvergenceError(RuntimeError):
    """Root finder did not reach the requested tolerance."""


class ReturnCapExceeded(RuntimeError):
    """An excursion away from ``Y`` lasted longer than ``max_return`` steps."""


@dataclass(frozen=True)
class MapParams:
    gamma: float
    bisection_tol: float = BISECTION_TOL
    max_return: int = MAX_RETURN

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.bisection_tol > 0:
            raise ValueError("bisection_tol must be positive")
        if self.max_return < 1:
            raise ValueError("max_return must be >= 1")

    @property
    def coef(self) -> float:
        """The constant ``2**gamma`` of the left branch."""
        return 2.0 ** self.gamma


@dataclass(frozen=True)
class BranchPoints:
    """Decreasing sequence ``c_0 = 1/2 > c_1 > ... > c_N`` with ``f(c_k) = c_{k-1}``."""

    points: np.ndarray
    gamma: float

    def __len__(self):
        return len(self.points)

    def __getitem__(self, k):
        return self.points[k]


# --- compiled kernels -------------------------------------------------------

@njit(cache=True, nogil=True)
def lsv_step(x, gamma, coef):
    if x <= 0.5:
        y = x * (1.0 + coef * x ** gamma)
        return 1.0 if y > 1.0 else y
    return 2.0 * x - 1.0


@njit(cache=True, nogil=True)
def left_branch(x, gamma, coef):
    return x * (1.0 + coef * x ** gamma)


@njit(cache=True, nogil=True)
def left_branch_deriv(x, gamma, coef):
    return 1.0 + coef * (1.0 + gamma) * x ** gamma


@njit(cache=True, nogil=True)
def left_inverse_kernel(z, gamma, coef, tol, max_iter):
    """Bisection for ``g_L(x) = z`` on ``[0, 1/2]``, run to float resolution.

    Returns ``(x, ok)``; ``ok`` is False if the residual exceeds ``tol``.
    """
    if z <= 0.0:
        return 0.0, True
    if z >= 1.0:
        return 0.5, True
    lo = 0.0
    hi = 0.5
    # g_L(x) >= x, so the root lies below z
    if z < hi:
        hi = z
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if left_branch(mid, gamma, coef) < z:
            lo = mid
        else:
            hi = mid
    rlo = abs(left_branch(lo, gamma, coef) - z)
    rhi = abs(left_branch(hi, gamma, coef) - z)
    x = lo if rlo < rhi else hi
    return x, min(rlo, rhi) <= tol


@njit(cache=True, nogil=True)
def branch_points_kernel(n, gamma, coef, tol, max_iter):
    c = np.empty(n + 1)
    c[0] = 0.5
    for k in range(1, n + 1):
        x, ok = left_inverse_kernel(c[k - 1], gamma, coef, tol, max_iter)
        if not ok:
            return c[:k], False
        c[k] = x
    return c, True


@njit(cache=True, nogil=True)
def return_time_kernel(y, gamma, coef, cap):
    """First return time of ``y`` to ``[1/2, 1]``; ``-1`` if it exceeds ``cap``."""
    x = lsv_step(y, gamma, coef)
    r = 1
    while x < 0.5:
        if r >= cap:
            return -1
        x = lsv_step(x, gamma, coef)
        r += 1
    return r


@njit(cache=True, nogil=True)
def orbit_kernel(y, r, gamma, coef):
    out = np.empty(r)
    x = y
    for j in range(r):
        out[j] = x
        x = lsv_step(x, gamma, coef)
    return out


@njit(cache=True, nogil=True)
def return_times_kernel(ys, gamma, coef, cap):
    out = np.empty(ys.shape[0], dtype=np.int64)
    for i in range(ys.shape[0]):
        out[i] = return_time_kernel(ys[i], gamma, coef, cap)
    return out


@njit(cache=True, nogil=True)
def classify_kernel(ys, c):
    """Return time from branch points: ``r = n`` iff ``2y - 1`` in ``[c_{n-1}, c_{n-2})``.

    ``c`` is decreasing; points beyond the table get ``len(c) + 1``.
    """
    out = np.empty(ys.shape[0], dtype=np.int64)
    nc = c.shape[0]
    for i in range(ys.shape[0]):
        x1 = 2.0 * ys[i] - 1.0
        # y = 1/2 takes the left branch straight to 1
        if x1 >= c[0] or ys[i] == 0.5:
            out[i] = 1
            continue
        # smallest k with c[k] <= x1; then r = k + 1
        lo = 0
        hi = nc
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if c[mid] <= x1:
                hi = mid
            else:
                lo = mid
        out[i] = hi + 1 if hi < nc else nc + 1
    return out


# --- public API ---------------------------------------------------------------

def _check_unit(x, name="x"):
    if not math.isfinite(x) or x < 0.0 or x > 1.0:
        raise DomainError(f"{name}={x!r} is not a finite number in [0, 1]")


def apply_map(params: MapParams, x: float) -> float:
    _check_unit(x)
    return float(lsv_step(float(x), params.gamma, params.coef))


def left_branch_inverse(params: MapParams, z: float) -> float:
    """Solve ``x (1 + 2^g x^g) = z`` for ``x`` in ``[0, 1/2]``."""
    _check_unit(z, "z")
    x, ok = left_inverse_kernel(float(z), params.gamma, params.coef,
                                params.bisection_tol, BISECTION_ITERS)
    if not ok:
        raise ConvergenceError(f"left-branch inverse of {z!r} missed tol {params.bisection_tol}")
    return float(x)


def branch_points(params: MapParams, n: int) -> BranchPoints:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, ok = branch_points_kernel(int(n), params.gamma, params.coef,
                                 params.bisection_tol, BISECTION_ITERS)
    if not ok:
        raise ConvergenceError(f"branch point c_{len(c)} did not converge")
    return BranchPoints(points=c, gamma=params.gamma)


def return_time(params: MapParams, y: float) -> int:
    if not (0.5 <= y <= 1.0):
        raise DomainError(f"y={y!r} is not in Y=[1/2, 1]")
    r = return_time_kernel(float(y), params.gamma, params.coef, params.max_return)
    if r < 0:
        raise ReturnCapExceeded(f"return time of y={y!r} exceeds {params.max_return}")
    return int(r)


def return_time_orbit(params: MapParams, y: float) -> tuple[int, np.ndarray]:
    """Return time ``r`` and the orbit ``(y, f y, ..., f^{r-1} y)``."""
    r = return_time(params, y)
    return r, orbit_kernel(float(y), r, params.gamma, params.coef)


def classify_return_time(ys, bp: BranchPoints) -> np.ndarray:
    """Return times of points of ``Y`` read off the cylinder endpoints."""
    return classify_kernel(np.ascontiguousarray(ys, dtype=np.float64), bp.points)
