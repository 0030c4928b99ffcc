"""Orthogonal-group fibres: skew exponentials, Hölder cocycles and fixed spaces.

Cocycles are the family ``h(x) = exp(S0 + x^eta S1)`` with ``S0, S1``
skew-symmetric, so ``h(0) = exp(S0)`` and the Hölder exponent are exact.
Matrix distances are max-entry distances throughout.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import MapParams, lsv_step

__all__ = [
    "GROUP_KINDS",
    "GroupElement",
    "CocycleSpec",
    "FixSpace",
    "IllConditionedRank",
    "ZeroProjectionWarning",
    "matrix_exp_skew",
    "evaluate_cocycle",
    "cocycle_product",
    "fix_space",
    "project_dichotomy",
    "rotated_sum_sup",
    "haar_sample",
    "rotation2",
    "axis_generator",
    "golden_angle",
]

GROUP_KINDS = ("trivial", "SO2", "SO3", "SOd", "torus")
KIND_CODE = {k: i for i, k in enumerate(GROUP_KINDS)}

ORTHO_TOL = 1e-10
DET_TOL = 1e-8
FIX_THRESHOLD = 1e-8


class IllConditionedRank(ValueError):
    """A singular value of ``g - I`` sits too close to the rank threshold."""


class ZeroProjectionWarning(UserWarning):
    pass


def golden_angle() -> float:
    """``2 pi (2 - phi)``, the default badly-approximable rotation angle."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    return 2.0 * math.pi * (2.0 - phi)


@dataclass(frozen=True)
class GroupElement:
    matrix: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("group element must be a square matrix")
        object.__setattr__(self, "matrix", q)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def orthogonality_defect(self) -> float:
        q = self.matrix
        return float(np.max(np.abs(q.T @ q - np.eye(self.dim))))

    def check(self) -> "GroupElement":
        if self.orthogonality_defect() > ORTHO_TOL:
            raise ValueError(f"not orthogonal: defect {self.orthogonality_defect():.3e}")
        if abs(np.linalg.det(self.matrix) - 1.0) > DET_TOL:
            raise ValueError("determinant is not +1")
        return self

    def __matmul__(self, other):
        if isinstance(other, GroupElement):
            return GroupElement(self.matrix @ other.matrix)
        return self.matrix @ np.asarray(other)


def _antisym(a):
    a = np.asarray(a, dtype=np.float64)
    return 0.5 * (a - a.T)


def rotation2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def axis_generator(axis, angle: float = 1.0) -> np.ndarray:
    """Skew matrix ``angle * [axis]_x`` generating rotation about ``axis`` in R^3."""
    w = np.asarray(axis, dtype=np.float64)
    w = angle * w / np.linalg.norm(w)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


@dataclass(frozen=True)
class CocycleSpec:
    """``h(x) = exp(S0 + x^eta S1)`` with values in a group of kind ``group_kind``.

    ``torus`` is the maximal torus of SO(2k): generators are projected onto
    the 2x2 diagonal blocks. ``trivial`` forces both generators to zero.
    """

    group_kind: str
    base_generator: np.ndarray
    modulation_generator: np.ndarray
    holder_exponent: float = 1.0

    def __post_init__(self):
        if self.group_kind not in GROUP_KINDS:
            raise ValueError(f"unknown group kind {self.group_kind!r}")
        if not (0.0 < self.holder_exponent <= 1.0):
            raise ValueError("holder_exponent must lie in (0, 1]")
        s0 = _antisym(self.base_generator)
        s1 = _antisym(self.modulation_generator)
        if s0.shape != s1.shape or s0.ndim != 2:
            raise ValueError("generators must be square matrices of equal size")
        d = s0.shape[0]
        kind = self.group_kind
        if kind == "SO2" and d != 2:
            raise ValueError("SO2 acts on R^2")
        if kind == "SO3" and d != 3:
            raise ValueError("SO3 acts on R^3")
        if kind == "torus":
            if d % 2:
                raise ValueError("torus kind needs even dimension")
            mask = np.zeros((d, d), dtype=bool)
            for b in range(d // 2):
                mask[2 * b:2 * b + 2, 2 * b:2 * b + 2] = True
            s0 = np.where(mask, s0, 0.0)
            s1 = np.where(mask, s1, 0.0)
        if kind == "trivial":
            s0 = np.zeros_like(s0)
            s1 = np.zeros_like(s1)
        object.__setattr__(self, "base_generator", s0)
        object.__setattr__(self, "modulation_generator", s1)

    @property
    def dim(self) -> int:
        return self.base_generator.shape[0]

    @property
    def kind_code(self) -> int:
        return KIND_CODE[self.group_kind]

    @property
    def is_constant(self) -> bool:
        return not np.any(self.modulation_generator)

    def h0(self) -> GroupElement:
        return matrix_exp_skew(self.base_generator)

    def holder_constant(self) -> float:
        """Family constant ``2 ||S1||_2`` bounding the max-entry Hölder quotient."""
        return 2.0 * float(np.linalg.norm(self.modulation_generator, 2)) if self.dim else 0.0

    # convenience constructors

    @classmethod
    def so2(cls, omega0: float, omega1: float = 0.0, eta: float = 1.0):
        return cls("SO2", rotation2_generator(omega0), rotation2_generator(omega1), eta)

    @classmethod
    def so3_axis(cls, omega0: float, omega1: float = 0.0, eta: float = 1.0,
                 axis=(0.0, 0.0, 1.0), modulation_axis=(1.0, 0.0, 0.0)):
        return cls("SO3", axis_generator(axis, omega0),
                   axis_generator(modulation_axis, omega1), eta)

    @classmethod
    def torus(cls, omegas0, omegas1=None, eta: float = 1.0):
        k = len(omegas0)
        omegas1 = np.zeros(k) if omegas1 is None else omegas1
        s0 = np.zeros((2 * k, 2 * k))
        s1 = np.zeros((2 * k, 2 * k))
        for b in range(k):
            s0[2 * b:2 * b + 2, 2 * b:2 * b + 2] = rotation2_generator(omegas0[b])
            s1[2 * b:2 * b + 2, 2 * b:2 * b + 2] = rotation2_generator(omegas1[b])
        return cls("torus", s0, s1, eta)

    @classmethod
    def trivial(cls, d: int):
        z = np.zeros((d, d))
        return cls("trivial", z, z, 1.0)

    @classmethod
    def random_sod(cls, d: int, rng, scale0: float = 1.0, scale1: float = 0.3,
                   eta: float = 1.0):
        a = rng.standard_normal((d, d))
        b = rng.standard_normal((d, d))
        return cls("SOd", scale0 * _antisym(a), scale1 * _antisym(b), eta)


def rotation2_generator(angle: float) -> np.ndarray:
    return np.array([[0.0, -angle], [angle, 0.0]])


# --- compiled exponentials -----------------------------------------------------

# Helpers below never allocate and are compiled without the refcounting
# runtime: passing arrays into them from a hot loop is then free.

@njit(cache=True, nogil=True, _nrt=False)
def _exp2_into(a, out):
    t = a[1, 0]
    c = math.cos(t)
    s = math.sin(t)
    out[0, 0] = c
    out[0, 1] = -s
    out[1, 0] = s
    out[1, 1] = c


@njit(cache=True, nogil=True, _nrt=False)
def _exp3_into(a, out):
    wx = a[2, 1]
    wy = a[0, 2]
    wz = a[1, 0]
    th2 = wx * wx + wy * wy + wz * wz
    th = math.sqrt(th2)
    if th < 1e-6:
        # series to O(th^4)
        s1 = 1.0 - th2 / 6.0
        s2 = 0.5 - th2 / 24.0
    else:
        s1 = math.sin(th) / th
        s2 = (1.0 - math.cos(th)) / th2
    # exp(A) = I + s1 A + s2 A^2, A^2 = w w^T - th^2 I
    w = (wx, wy, wz)
    for i in range(3):
        for j in range(3):
            out[i, j] = s2 * w[i] * w[j] + s1 * a[i, j]
        out[i, i] += 1.0 - s2 * th2


@njit(cache=True, nogil=True, _nrt=False)
def _expd_into(a, out, scr):
    """Scaling and squaring with a degree-18 Taylor polynomial; ``scr`` is (3, d, d)."""
    d = a.shape[0]
    nrm = 0.0
    for i in range(d):
        row = 0.0
        for j in range(d):
            row += abs(a[i, j])
        if row > nrm:
            nrm = row
    s = 0
    while nrm > 0.5:
        nrm *= 0.5
        s += 1
    scale = 0.5 ** s
    for i in range(d):
        for j in range(d):
            scr[2, i, j] = a[i, j] * scale
            scr[0, i, j] = 1.0 if i == j else 0.0
            out[i, j] = scr[0, i, j]
    for k in range(1, 19):
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for q in range(d):
                    acc += scr[0, i, q] * scr[2, q, j]
                scr[1, i, j] = acc / k
        for i in range(d):
            for j in range(d):
                scr[0, i, j] = scr[1, i, j]
                out[i, j] += scr[1, i, j]
    for _ in range(s):
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for q in range(d):
                    acc += out[i, q] * out[q, j]
                scr[1, i, j] = acc
        for i in range(d):
            for j in range(d):
                out[i, j] = scr[1, i, j]


@njit(cache=True, nogil=True, _nrt=False)
def _exp_torus_into(a, out):
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = 0.0
    for b in range(d // 2):
        t = a[2 * b + 1, 2 * b]
        c = math.cos(t)
        s = math.sin(t)
        out[2 * b, 2 * b] = c
        out[2 * b, 2 * b + 1] = -s
        out[2 * b + 1, 2 * b] = s
        out[2 * b + 1, 2 * b + 1] = c


@njit(cache=True, nogil=True, _nrt=False)
def exp_skew_into(a, kind, out, scr):
    """``out = exp(a)`` for skew ``a``; ``kind`` selects the closed form."""
    d = a.shape[0]
    if kind == 0:
        for i in range(d):
            for j in range(d):
                out[i, j] = 1.0 if i == j else 0.0
    elif d == 2:
        _exp2_into(a, out)
    elif d == 3:
        _exp3_into(a, out)
    elif kind == 4:
        _exp_torus_into(a, out)
    else:
        _expd_into(a, out, scr)


@njit(cache=True, nogil=True, _nrt=False)
def cocycle_into(x, s0, s1, eta, kind, work, out):
    """``out = h(x) = exp(s0 + x^eta s1)``; ``work`` is a (4, d, d) scratch array."""
    d = s0.shape[0]
    if eta == 1.0:
        xe = x
    elif x > 0.0:
        xe = x ** eta
    else:
        xe = 0.0
    for i in range(d):
        for j in range(d):
            work[3, i, j] = s0[i, j] + xe * s1[i, j]
    exp_skew_into(work[3], kind, out, work)


@njit(cache=True, nogil=True, _nrt=False)
def matmul_into(a, b, out):
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@njit(cache=True, nogil=True, _nrt=False)
def reorthonormalize(g):
    """Modified Gram-Schmidt on the columns; commutes with left multiplication."""
    d = g.shape[0]
    for j in range(d):
        for k in range(j):
            dot = 0.0
            for i in range(d):
                dot += g[i, k] * g[i, j]
            for i in range(d):
                g[i, j] -= dot * g[i, k]
        nrm = 0.0
        for i in range(d):
            nrm += g[i, j] * g[i, j]
        nrm = math.sqrt(nrm)
        for i in range(d):
            g[i, j] /= nrm


@njit(cache=True, nogil=True)
def _cocycle_product_kernel(y, j, gamma, coef, s0, s1, eta, kind):
    d = s0.shape[0]
    acc = np.eye(d)
    h = np.empty((d, d))
    work = np.empty((4, d, d))
    tmp = np.empty((d, d))
    x = y
    for _ in range(j):
        cocycle_into(x, s0, s1, eta, kind, work, h)
        matmul_into(acc, h, tmp)
        acc[:, :] = tmp
        x = lsv_step(x, gamma, coef)
    return acc


@njit(cache=True, nogil=True)
def _rotated_sums_kernel(g0, v0, L):
    """Compensated partial sums ``sum_{j<=l} g0^j v0``; returns max norm over l <= L."""
    d = v0.shape[0]
    s = np.zeros(d)
    comp = np.zeros(d)
    w = v0.copy()
    tmp = np.empty(d)
    best = 0.0
    for ell in range(L + 1):
        for i in range(d):
            yk = w[i] - comp[i]
            t = s[i] + yk
            comp[i] = (t - s[i]) - yk
            s[i] = t
        nrm = 0.0
        for i in range(d):
            nrm += s[i] * s[i]
        nrm = math.sqrt(nrm)
        if nrm > best:
            best = nrm
        for i in range(d):
            acc = 0.0
            for k in range(d):
                acc += g0[i, k] * w[k]
            tmp[i] = acc
        w[:] = tmp
    return best


# --- public API ------------------------------------------------------------------

def _kind_for_dim(d: int) -> int:
    return {1: KIND_CODE["trivial"], 2: KIND_CODE["SO2"], 3: KIND_CODE["SO3"]}.get(d, KIND_CODE["SOd"])


def matrix_exp_skew(s) -> GroupElement:
    """``exp(S)`` for skew-symmetric ``S``: closed forms for d = 2, 3, scaling and squaring above."""
    s = _antisym(s)
    d = s.shape[0]
    out = np.empty((d, d))
    if d == 1:
        out[0, 0] = 1.0
    else:
        exp_skew_into(s, _kind_for_dim(d), out, np.empty((3, d, d)))
    return GroupElement(out)


def evaluate_cocycle(spec: CocycleSpec, x: float) -> GroupElement:
    if not math.isfinite(x) or not (0.0 <= x <= 1.0):
        raise ValueError(f"x={x!r} outside [0, 1]")
    d = spec.dim
    out = np.empty((d, d))
    work = np.empty((4, d, d))
    cocycle_into(float(x), spec.base_generator, spec.modulation_generator,
                 spec.holder_exponent, spec.kind_code, work, out)
    return GroupElement(out)


def cocycle_product(spec: CocycleSpec, params: MapParams, y: float, j: int) -> GroupElement:
    """Ordered product ``h(y) h(f y) ... h(f^{j-1} y)``; identity for ``j = 0``."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    if not (0.0 <= y <= 1.0):
        raise ValueError(f"y={y!r} outside [0, 1]")
    m = _cocycle_product_kernel(float(y), int(j), params.gamma, params.coef,
                                spec.base_generator, spec.modulation_generator,
                                spec.holder_exponent, spec.kind_code)
    return GroupElement(m)


@dataclass(frozen=True)
class FixSpace:
    fix_basis: np.ndarray      # (rank, d), orthonormal rows
    perp_basis: np.ndarray     # (d - rank, d)
    rank: int
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.fix_basis.shape[1]

    def fix_projector(self) -> np.ndarray:
        return self.fix_basis.T @ self.fix_basis


def fix_space(g, threshold: float = FIX_THRESHOLD) -> FixSpace:
    """Numerical null space of ``g - I`` via SVD."""
    q = g.matrix if isinstance(g, GroupElement) else np.asarray(g, dtype=np.float64)
    d = q.shape[0]
    _, sv, vt = np.linalg.svd(q - np.eye(d))
    ambiguous = (sv > threshold / 10.0) & (sv < threshold * 10.0)
    if np.any(ambiguous):
        raise IllConditionedRank(
            f"singular values {sv[ambiguous]} within a factor 10 of threshold {threshold}")
    fixed = sv <= threshold
    rank = int(fixed.sum())
    return FixSpace(fix_basis=vt[fixed], perp_basis=vt[~fixed], rank=rank,
                    singular_values=sv)


def project_dichotomy(v0, fs: FixSpace, mode: str) -> np.ndarray:
    """Orthogonal projection onto ``(Fix h(0))^perp`` (``perp``) or ``Fix h(0)`` (``fix``)."""
    v0 = np.asarray(v0, dtype=np.float64)
    p_fix = fs.fix_projector() if fs.rank else np.zeros((fs.dim, fs.dim))
    if mode == "fix":
        out = p_fix @ v0
    elif mode == "perp":
        out = v0 - p_fix @ v0
    elif mode == "raw":
        return v0.copy()
    else:
        raise ValueError(f"mode must be 'perp', 'fix' or 'raw', got {mode!r}")
    if np.linalg.norm(out) < 1e-10 * np.linalg.norm(v0):
        warnings.warn(f"projection of v0 in mode {mode!r} vanishes", ZeroProjectionWarning,
                      stacklevel=2)
    return out


def rotated_sum_sup(g0, v0, L: int) -> float:
    """``max_{0 <= l <= L} |sum_{j=0}^{l} g0^j v0|``."""
    q = g0.matrix if isinstance(g0, GroupElement) else np.asarray(g0, dtype=np.float64)
    return float(_rotated_sums_kernel(np.ascontiguousarray(q),
                                      np.asarray(v0, dtype=np.float64), int(L)))


def haar_sample(kind: str, d: int, rng) -> GroupElement:
    """Haar-distributed element of the group of the given kind acting on R^d."""
    if kind == "trivial" or d == 1:
        return GroupElement(np.eye(d))
    if kind == "torus":
        out = np.zeros((d, d))
        for b in range(d // 2):
            out[2 * b:2 * b + 2, 2 * b:2 * b + 2] = rotation2(rng.uniform(0.0, 2.0 * math.pi))
        return GroupElement(out)
    z = rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return GroupElement(q)
