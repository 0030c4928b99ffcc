"""Parametric observables ``v: [0, 1] -> R^d`` and their compiled evaluator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

__all__ = ["OBSERVABLE_KINDS", "ObservableSpec", "obs_into"]

OBSERVABLE_KINDS = ("constant", "holder_power", "trigonometric", "indicator", "table")
_CODE = {k: i for i, k in enumerate(OBSERVABLE_KINDS)}


@dataclass(frozen=True)
class ObservableSpec:
    """Observable family keyed by ``kind``.

    constant       v(x) = v0
    holder_power   v(x) = v0 + x^eta * direction
    trigonometric  v(x) = v0 cos(2 pi x) + direction sin(2 pi x)
    indicator      v(x) = v0 + direction * 1[x >= 1/2]
    table          piecewise-linear interpolation of ``table_v`` at ``table_x``

    ``centering_offset`` is subtracted from every value.
    """

    kind: str
    v0: np.ndarray
    direction: np.ndarray = None
    holder_exponent: float = 1.0
    table_x: np.ndarray = None
    table_v: np.ndarray = None
    centering_offset: np.ndarray = None

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        v0 = np.atleast_1d(np.asarray(self.v0, dtype=np.float64)).copy()
        d = v0.shape[0]
        u = np.zeros(d) if self.direction is None else np.atleast_1d(
            np.asarray(self.direction, dtype=np.float64)).copy()
        if u.shape != (d,):
            raise ValueError("direction must have the dimension of v0")
        if not (0.0 < self.holder_exponent <= 1.0):
            raise ValueError("holder_exponent must lie in (0, 1]")
        if self.kind == "table":
            tx = np.asarray(self.table_x, dtype=np.float64)
            tv = np.asarray(self.table_v, dtype=np.float64).reshape(len(tx), -1)
            if tv.shape[1] != d or np.any(np.diff(tx) <= 0) or tx[0] > 0 or tx[-1] < 1:
                raise ValueError("table must be increasing, cover [0, 1] and match v0's dimension")
        else:
            tx = np.zeros(1)
            tv = np.zeros((1, d))
        off = np.zeros(d) if self.centering_offset is None else np.asarray(
            self.centering_offset, dtype=np.float64).copy()
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "direction", u)
        object.__setattr__(self, "table_x", np.ascontiguousarray(tx))
        object.__setattr__(self, "table_v", np.ascontiguousarray(tv))
        object.__setattr__(self, "centering_offset", off)

    @property
    def dim(self) -> int:
        return self.v0.shape[0]

    @property
    def code(self) -> int:
        return _CODE[self.kind]

    def kernel_args(self):
        return (self.code, self.v0, self.direction, self.holder_exponent,
                self.table_x, self.table_v, self.centering_offset)

    def __call__(self, x) -> np.ndarray:
        out = np.empty(self.dim)
        obs_into(float(x), *self.kernel_args(), out)
        return out

    def value_at_zero(self) -> np.ndarray:
        return self(0.0)

    def sup_norm(self) -> float:
        if self.kind == "constant":
            return float(np.linalg.norm(self.v0 - self.centering_offset))
        if self.kind in ("holder_power", "indicator") and not np.any(self.centering_offset):
            # norm is convex in t = x^eta, so the max sits at an endpoint
            return float(max(np.linalg.norm(self.v0), np.linalg.norm(self.v0 + self.direction)))
        if self.kind == "table" and not np.any(self.centering_offset):
            return float(np.max(np.linalg.norm(self.table_v, axis=1)))
        xs = np.linspace(0.0, 1.0, 20001)
        return float(max(np.linalg.norm(self(x)) for x in xs))

    def with_v0(self, v0) -> "ObservableSpec":
        return replace(self, v0=np.asarray(v0, dtype=np.float64))

    def centered(self, offset) -> "ObservableSpec":
        return replace(self, centering_offset=np.asarray(offset, dtype=np.float64))


@njit(cache=True, nogil=True, _nrt=False)
def obs_into(x, kind, v0, u, eta, tx, tv, offset, out):
    d = v0.shape[0]
    if kind == 0:
        for i in range(d):
            out[i] = v0[i] - offset[i]
    elif kind == 1:
        if eta == 1.0:
            t = x
        elif x > 0.0:
            t = x ** eta
        else:
            t = 0.0
        for i in range(d):
            out[i] = v0[i] + t * u[i] - offset[i]
    elif kind == 2:
        c = math.cos(2.0 * math.pi * x)
        s = math.sin(2.0 * math.pi * x)
        for i in range(d):
            out[i] = v0[i] * c + u[i] * s - offset[i]
    elif kind == 3:
        ind = 1.0 if x >= 0.5 else 0.0
        for i in range(d):
            out[i] = v0[i] + ind * u[i] - offset[i]
    else:
        n = tx.shape[0]
        lo = 0
        hi = n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tx[mid] <= x:
                lo = mid
            else:
                hi = mid
        w = (x - tx[lo]) / (tx[hi] - tx[lo])
        for i in range(d):
            out[i] = (1.0 - w) * tv[lo, i] + w * tv[hi, i] - offset[i]
