"""Ulam discretisation of the induced map and of its twisted transfer operator.

``Y`` is cut into ``m`` equal bins. For every target bin ``B_j`` and return
time ``n`` the inverse branch ``psi_n`` of ``F`` on ``Z_n`` is followed
backwards from the bin edges and from four Gauss nodes, so each piece
``B_i ∩ psi_n(B_j)`` gets its exact Lebesgue length and node averages of
``H``, ``V`` and their products. Everything is carried in the coordinate
``u = 2y - 1``, where deep cylinders keep full relative precision.

Two conventions are kept side by side:

* the Koopman matrix ``K`` with d x d blocks ``sum w H`` acts on bin
  vectors as ``(K W)_i ~ H W∘F``;
* the transfer matrix ``M = D^{-1} K^T D`` (``D`` the invariant bin
  masses) is the discretised ``M_H`` with blocks carrying ``H^{-1}``.

Cylinders lying entirely inside the first bin are merged into one piece per
target bin; returns beyond ``N_max`` are lumped onto those pieces with the
target profile and node values of branch ``N_max``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .dynamics import MapParams
from .groups import CocycleSpec, cocycle_into, matmul_into, reorthonormalize
from .inducing import ReturnPartition, _cocycle_args
from .observables import ObservableSpec, obs_into

__all__ = [
    "UlamOperator",
    "SpectralReport",
    "ChiResult",
    "SpectralRadiusError",
    "NonConvergence",
    "TruncationWarning",
    "build_ulam",
    "leading_spectrum",
    "subspace_iteration",
    "solve_chi",
    "chi_refinement_check",
    "greenkubo_sigma",
    "haar_average",
    "induced_mean",
    "caricature_chi",
    "caricature_sigma",
]

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(4)
GAUSS_X = 0.5 * (GAUSS_X + 1.0)
GAUSS_W = 0.5 * GAUSS_W


class SpectralRadiusError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class TruncationWarning(UserWarning):
    pass


# --- compiled sweeps --------------------------------------------------------------

@njit(cache=True, nogil=True, _nrt=False)
def _left_inv(z, gamma, coef):
    """Inverse of the left branch by Newton from below (convex branch)."""
    if z <= 0.0:
        return 0.0
    if gamma == 0.0:
        return 0.5 * z
    x = z / (1.0 + coef * z ** gamma)
    for _ in range(60):
        xg = x ** gamma
        dx = (x * (1.0 + coef * xg) - z) / (1.0 + coef * (1.0 + gamma) * xg)
        x -= dx
        if abs(dx) <= 2e-16 * x:
            break
    return x


@njit(cache=True, nogil=True, _nrt=False)
def _left_deriv(x, gamma, coef):
    if gamma == 0.0:
        return 2.0
    return 1.0 + coef * (1.0 + gamma) * x ** gamma


@njit(cache=True, nogil=True, _nrt=False)
def _add_piece(k, i, j, n, length, sel_lo, sel_hi, Hq, Vq, omega,
               src, tgt, brn, wt, wn, wH, wV, wVV, wVH):
    """Accumulate ``length`` times node averages over nodes ``sel_lo..sel_hi``."""
    d = Vq.shape[1]
    tot = 0.0
    for q in range(sel_lo, sel_hi):
        tot += omega[q]
    src[k] = i
    tgt[k] = j
    brn[k] = n
    wt[k] += length
    wn[k] += length * n
    for q in range(sel_lo, sel_hi):
        c = length * omega[q] / tot
        for a in range(d):
            wV[k, a] += c * Vq[q, a]
            for b in range(d):
                wH[k, a, b] += c * Hq[q, a, b]
                wVV[k, a, b] += c * Vq[q, a] * Vq[q, b]
                for e in range(d):
                    wVH[k, a, b, e] += c * Vq[q, a] * Hq[q, b, e]


@njit(cache=True, nogil=True)
def _assemble_kernel(j0, j1, m, nmax, nsplit, gamma, coef, s0, s1, eta, gkind,
                     okind, v0, u, oeta, tx, tv, off, gx, gw,
                     src, tgt, brn, wt, wn, wH, wV, wVV, wVH,
                     last_len, last_H, last_V):
    d = v0.shape[0]
    nq = gx.shape[0]
    S = 2 * (nsplit - 1) + 1
    work = np.empty((4, d, d))
    h = np.empty((d, d))
    tmp = np.empty((d, d))
    vb = np.empty(d)
    P = np.empty((nq, d, d))
    R = np.empty((nq, d))
    Hq = np.empty((nq, d, d))
    Vq = np.empty((nq, d))
    wq = np.empty(nq)
    der = np.empty(nq)
    omega = np.empty(nq)
    order = np.arange(nq)
    for j in range(j0, j1):
        zl = 0.5 + j / (2.0 * m)
        zh = 0.5 + (j + 1) / (2.0 * m)
        a = zl
        b = zh
        for q in range(nq):
            wq[q] = zl + gx[q] * (zh - zl)
            der[q] = 1.0
            for r_ in range(d):
                R[q, r_] = 0.0
                for c_ in range(d):
                    P[q, r_, c_] = 1.0 if r_ == c_ else 0.0
        base = j * S
        for n in range(1, nmax + 1):
            for q in range(nq):
                y = 0.5 * (1.0 + wq[q])
                obs_into(y, okind, v0, u, oeta, tx, tv, off, vb)
                if gkind == 0:
                    for r_ in range(d):
                        Vq[q, r_] = vb[r_] + R[q, r_]
                        for c_ in range(d):
                            Hq[q, r_, c_] = 1.0 if r_ == c_ else 0.0
                else:
                    cocycle_into(y, s0, s1, eta, gkind, work, h)
                    matmul_into(h, P[q], Hq[q])
                    for r_ in range(d):
                        acc = vb[r_]
                        for c_ in range(d):
                            acc += h[r_, c_] * R[q, c_]
                        Vq[q, r_] = acc
                omega[q] = gw[q] * der[q]
            # nodes are ordered by u (psi_n is increasing)
            i0 = int(a * m)
            if i0 > m - 1:
                i0 = m - 1
            i1 = int(math.ceil(b * m)) - 1
            if i1 < i0:
                i1 = i0
            if i1 > m - 1:
                i1 = m - 1
            if n < nsplit:
                k0 = base + 2 * (n - 1)
            else:
                k0 = base + S - 1
            if i0 == i1:
                _add_piece(k0, i0, j, n, (b - a) * m, 0, nq, Hq, Vq, omega,
                           src, tgt, brn, wt, wn, wH, wV, wVV, wVH)
            else:
                t = i1 / m
                cut = 0
                while cut < nq and wq[order[cut]] < t:
                    cut += 1
                lo_a, lo_b = (0, cut) if cut > 0 else (0, 1)
                hi_a, hi_b = (cut, nq) if cut < nq else (nq - 1, nq)
                _add_piece(k0, i0, j, n, (t - a) * m, lo_a, lo_b, Hq, Vq, omega,
                           src, tgt, brn, wt, wn, wH, wV, wVV, wVH)
                _add_piece(k0 + 1, i1, j, n, (b - t) * m, hi_a, hi_b, Hq, Vq, omega,
                           src, tgt, brn, wt, wn, wH, wV, wVV, wVH)
            if n == nmax:
                tot = 0.0
                for q in range(nq):
                    tot += omega[q]
                last_len[j] = (b - a) * m
                for r_ in range(d):
                    acc = 0.0
                    for q in range(nq):
                        acc += omega[q] * Vq[q, r_]
                    last_V[j, r_] = acc / tot
                    for c_ in range(d):
                        acc = 0.0
                        for q in range(nq):
                            acc += omega[q] * Hq[q, r_, c_]
                        last_H[j, r_, c_] = acc / tot
                break
            a = _left_inv(a, gamma, coef)
            b = _left_inv(b, gamma, coef)
            for q in range(nq):
                w = _left_inv(wq[q], gamma, coef)
                der[q] /= _left_deriv(w, gamma, coef)
                obs_into(w, okind, v0, u, oeta, tx, tv, off, vb)
                if gkind == 0:
                    for r_ in range(d):
                        R[q, r_] += vb[r_]
                else:
                    cocycle_into(w, s0, s1, eta, gkind, work, h)
                    for r_ in range(d):
                        acc = vb[r_]
                        for c_ in range(d):
                            acc += h[r_, c_] * R[q, c_]
                        tmp[0, r_] = acc
                    for r_ in range(d):
                        R[q, r_] = tmp[0, r_]
                    matmul_into(h, P[q], tmp)
                    P[q, :, :] = tmp
                    if n % 512 == 0:
                        reorthonormalize(P[q])
                wq[q] = w


@njit(cache=True, nogil=True)
def _residual_kernel(zs, m, nmax, gamma, coef, s0, s1, eta, gkind,
                     okind, v0, u, oeta, tx, tv, off, exact_v, vbins, chi, rho, out, qsum):
    """``(M_H Vhat)(z)`` with the branch sum evaluated along exact inverse orbits.

    ``Vhat = V - H chi∘F + chi`` with ``chi`` piecewise constant on the bins
    and ``rho`` the bin densities, linearly interpolated between centres.
    """
    d = v0.shape[0]
    work = np.empty((4, d, d))
    h = np.empty((d, d))
    H = np.empty((d, d))
    P = np.empty((d, d))
    tmp = np.empty((d, d))
    vb = np.empty(d)
    V = np.empty(d)
    R = np.empty(d)
    acc = np.empty(d)
    for k in range(zs.shape[0]):
        z = zs[k]
        uz = 2.0 * z - 1.0
        iz = min(int(uz * m), m - 1)
        rz = _interp_density(uz, rho, m)
        w = z
        der = 1.0
        for r_ in range(d):
            R[r_] = 0.0
            acc[r_] = 0.0
            for c_ in range(d):
                P[r_, c_] = 1.0 if r_ == c_ else 0.0
        qs = 0.0
        for n in range(1, nmax + 1):
            y = 0.5 * (1.0 + w)
            i = min(int(w * m), m - 1)
            if gkind == 0:
                for r_ in range(d):
                    for c_ in range(d):
                        H[r_, c_] = 1.0 if r_ == c_ else 0.0
            else:
                cocycle_into(y, s0, s1, eta, gkind, work, h)
                matmul_into(h, P, H)
            if exact_v:
                obs_into(y, okind, v0, u, oeta, tx, tv, off, vb)
                for r_ in range(d):
                    s = vb[r_]
                    if gkind == 0:
                        s += R[r_]
                    else:
                        for c_ in range(d):
                            s += h[r_, c_] * R[c_]
                    V[r_] = s
            else:
                for r_ in range(d):
                    V[r_] = vbins[i, r_]
            q = 0.5 * der * _interp_density(w, rho, m) / rz
            qs += q
            for r_ in range(d):
                s = 0.0
                for c_ in range(d):
                    s += H[c_, r_] * (V[c_] + chi[i, c_])
                acc[r_] += q * s
            if n == nmax:
                break
            w_next = _left_inv(w, gamma, coef)
            der /= _left_deriv(w_next, gamma, coef)
            w = w_next
            if exact_v:
                obs_into(w, okind, v0, u, oeta, tx, tv, off, vb)
            if gkind == 0:
                if exact_v:
                    for r_ in range(d):
                        R[r_] += vb[r_]
            else:
                cocycle_into(w, s0, s1, eta, gkind, work, h)
                if exact_v:
                    for r_ in range(d):
                        s = vb[r_]
                        for c_ in range(d):
                            s += h[r_, c_] * R[c_]
                        tmp[0, r_] = s
                    for r_ in range(d):
                        R[r_] = tmp[0, r_]
                matmul_into(h, P, tmp)
                P[:, :] = tmp
                if n % 512 == 0:
                    reorthonormalize(P)
        for r_ in range(d):
            out[k, r_] = acc[r_] - qs * chi[iz, r_]
        qsum[k] = qs


@njit(cache=True, nogil=True, _nrt=False)
def _interp_density(uu, rho, m):
    t = uu * m - 0.5
    if t <= 0.0:
        return rho[0]
    if t >= m - 1:
        return rho[m - 1]
    i = int(t)
    f = t - i
    return (1.0 - f) * rho[i] + f * rho[i + 1]


# --- operator --------------------------------------------------------------------------

@dataclass
class Pieces:
    """Per-piece moments; every field is already multiplied by the piece weight.

    ``wt`` is the fraction of the source bin covered by the piece, so
    ``sum_p pi[src] * wt * f`` integrates ``f`` against the invariant law.
    """

    src: np.ndarray
    tgt: np.ndarray
    branch: np.ndarray
    wt: np.ndarray
    wn: np.ndarray
    wH: np.ndarray
    wV: np.ndarray
    wVV: np.ndarray
    wVH: np.ndarray
    tail: np.ndarray      # True for lumped returns beyond N_max

    def __len__(self):
        return self.src.size


@dataclass
class UlamOperator:
    m: int
    d_rep: int
    N_max: int
    n_split: int
    gamma: float
    twisted: bool
    stochastic: sp.csr_matrix           # untwisted row-stochastic matrix (m x m)
    matrix: sp.csr_matrix               # transfer convention M_H, (m d_rep)^2
    koopman: sp.csr_matrix              # Koopman convention K
    pi: np.ndarray                      # invariant bin masses
    pieces: Pieces = field(repr=False)
    truncated_length: float = 0.0       # u-length of {r > N_max}
    truncated_mass: float = 0.0
    tail_sum: float = 0.0               # sum_{k >= N_max} c_k
    branch_c: np.ndarray = field(default=None, repr=False)
    params: MapParams = field(default=None, repr=False)
    cocycle: CocycleSpec = field(default=None, repr=False)
    observable: ObservableSpec = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.pieces.wV.shape[1]

    @property
    def density(self) -> np.ndarray:
        """Invariant density on ``Y`` w.r.t. normalised Lebesgue (mean 1)."""
        return self.pi * self.m

    @property
    def quadrature_nodes(self) -> np.ndarray:
        return GAUSS_X.copy()

    def trivial_projector(self) -> np.ndarray:
        if not self.twisted:
            return np.eye(self.dim)
        from .ensemble import trivial_projector
        return trivial_projector(self.cocycle)

    def apply(self, X) -> np.ndarray:
        """``M_H`` on bin vectors of shape ``(m, d_rep)``."""
        X = np.asarray(X, dtype=np.float64).reshape(self.m, self.d_rep)
        return (self.matrix @ X.reshape(-1)).reshape(self.m, self.d_rep)

    def apply_koopman(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(self.m, self.d_rep)
        return (self.koopman @ X.reshape(-1)).reshape(self.m, self.d_rep)

    def integrate(self, X) -> np.ndarray:
        """``int X dmu_Y`` for bin vectors."""
        return self.pi @ np.asarray(X).reshape(self.m, -1)

    def V_bins(self) -> np.ndarray:
        """Bin averages of ``V`` with respect to the invariant law."""
        p = self.pieces
        num = np.zeros((self.m, self.dim))
        np.add.at(num, p.src, p.wV)
        den = np.bincount(p.src, weights=p.wt, minlength=self.m)
        return num / den[:, None]

    def MV_pieces(self) -> np.ndarray:
        """``M_H V`` on bins with ``V`` resolved on every piece.

        ``V`` jumps across cylinder boundaries inside a bin, so this is far
        more accurate than applying the matrix to :meth:`V_bins`.
        """
        p = self.pieces
        htv = np.einsum("paac->pc", p.wVH)      # sum_w H^T V
        num = np.zeros((self.m, self.dim))
        np.add.at(num, p.tgt, self.pi[p.src][:, None] * htv)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.pi[:, None] > 0, num / self.pi[:, None], 0.0)

    def deflate(self, X) -> np.ndarray:
        """Remove the invariant mean from the trivially acted components."""
        P = self.trivial_projector()
        if not np.any(P):
            return X
        X = np.asarray(X).reshape(self.m, -1)
        return X - (P @ self.integrate(X))[None, :]

    def mean_return_time(self) -> float:
        p = self.pieces
        main = float(np.sum(self.pi[p.src[~p.tail]] * p.wn[~p.tail]))
        rho0 = self.pi[0] * self.m
        return main + rho0 * ((self.N_max + 1) * self.truncated_length + self.tail_sum)

    def induced_observable_mean(self) -> np.ndarray:
        """``int V dmu_Y``, tail returns extrapolated by ``V_N + (n - N) v(0)``."""
        p = self.pieces
        keep = ~p.tail
        main = (self.pi[p.src[keep]][:, None] * p.wV[keep]).sum(axis=0)
        if self.truncated_length == 0.0:
            return main
        rho0 = self.pi[0] * self.m
        t = p.tail
        vN = (p.wV[t].sum(axis=0) / p.wt[t].sum()) if np.any(t) else np.zeros(self.dim)
        v0 = self.observable.value_at_zero() if self.observable is not None else np.zeros(self.dim)
        L, N = self.truncated_length, self.N_max
        extra = (N + 1) * L + self.tail_sum - N * L
        return main + rho0 * (L * vN + v0 * (extra - L))


def _tail_sum(c: np.ndarray, N: int, gamma: float) -> float:
    """``sum_{k >= N} c_k`` from the computed points and a power-law tail."""
    if gamma == 0.0:
        return float(c[N - 1])
    k_hi = N - 1
    k_lo = max(1, k_hi // 2)
    if k_hi <= k_lo:
        s = 1.0 / gamma
    else:
        s = math.log(c[k_lo] / c[k_hi]) / math.log(k_hi / k_lo)
    s = max(s, 1.0 + 1e-3)
    # c_k ~ c_{N-1} (k / (N-1))^{-s}; midpoint rule for the sum
    return float(c[k_hi] * (k_hi ** s) * (N - 0.5) ** (1.0 - s) / (s - 1.0))


def _invariant_masses(P: sp.csr_matrix) -> np.ndarray:
    m = P.shape[0]
    A = (P.T - sp.identity(m, format="csr")).tolil()
    A[m - 1, :] = np.ones(m)
    b = np.zeros(m)
    b[m - 1] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    # one step of the iteration removes solver noise
    pi = P.T @ pi
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def build_ulam(params: MapParams, partition: ReturnPartition, cocycle: CocycleSpec = None,
               m: int = 512, N_max: int = None, *, observable: ObservableSpec = None,
               threads: int = 1, trunc_warn: float = 0.01) -> UlamOperator:
    """Assemble the (twisted) Ulam operator of the induced map.

    Parameters
    ----------
    partition
        Provides the branch points; it must cover ``n <= N_max``.
    cocycle
        ``None`` gives the untwisted operator (``d_rep = 1``).
    observable
        Optional; its induced ``V`` is averaged on the same pieces for
        :func:`solve_chi` and :func:`greenkubo_sigma`.
    """
    from .ensemble import _run_chunks
    N = partition.n_max if N_max is None else int(N_max)
    if N < 1 or N > partition.n_max:
        raise ValueError(f"partition covers n <= {partition.n_max}, N_max={N} requested")
    if m < 2:
        raise ValueError("m must be >= 2")
    c = np.asarray(partition.branch)
    twisted = cocycle is not None
    if observable is None:
        d = cocycle.dim if twisted else 1
        observable = ObservableSpec("constant", np.zeros(d))
    d = observable.dim
    if twisted and cocycle.dim != d:
        raise ValueError("cocycle and observable dimensions differ")
    cargs = _cocycle_args(cocycle) if twisted else (np.zeros((d, d)), np.zeros((d, d)), 1.0, 0)
    # Z_n lies inside the first bin once its upper end c_{n-2} <= 1/m
    nsplit = N + 1
    for n in range(2, N + 1):
        if c[n - 2] <= 1.0 / m:
            nsplit = n
            break
    S = 2 * (nsplit - 1) + 1
    P_ = m * S
    src = np.full(P_, -1, dtype=np.int64)
    tgt = np.zeros(P_, dtype=np.int64)
    brn = np.zeros(P_, dtype=np.int64)
    wt = np.zeros(P_)
    wn = np.zeros(P_)
    wH = np.zeros((P_, d, d))
    wV = np.zeros((P_, d))
    wVV = np.zeros((P_, d, d))
    wVH = np.zeros((P_, d, d, d))
    last_len = np.zeros(m)
    last_H = np.zeros((m, d, d))
    last_V = np.zeros((m, d))
    oargs = observable.kernel_args()

    def work(a, b):
        _assemble_kernel(a, b, m, N, nsplit, params.gamma, params.coef, *cargs, *oargs,
                         GAUSS_X, GAUSS_W, src, tgt, brn, wt, wn, wH, wV, wVV, wVH,
                         last_len, last_H, last_V)

    _run_chunks(work, m, threads, chunk=max(1, m // (4 * max(1, threads))))
    keep = src >= 0
    arrays = [src[keep], tgt[keep], brn[keep], wt[keep], wn[keep], wH[keep], wV[keep],
              wVV[keep], wVH[keep]]
    tail_flag = [np.zeros(keep.sum(), dtype=bool)]

    # returns beyond N_max, spread over the targets like branch N_max
    L = float(c[N - 1])
    if L > 0 and last_len.sum() > 0:
        share = last_len / last_len.sum()
        edges = np.arange(m + 1) / m
        cover = np.clip(np.minimum(edges[1:], L) - edges[:-1], 0.0, None) * m
        for i in np.nonzero(cover > 0)[0]:
            w = cover[i] * share
            nz = w > 0
            k = int(nz.sum())
            arrays[0] = np.concatenate([arrays[0], np.full(k, i, dtype=np.int64)])
            arrays[1] = np.concatenate([arrays[1], np.nonzero(nz)[0]])
            arrays[2] = np.concatenate([arrays[2], np.full(k, N + 1, dtype=np.int64)])
            arrays[3] = np.concatenate([arrays[3], w[nz]])
            arrays[4] = np.concatenate([arrays[4], w[nz] * (N + 1)])
            arrays[5] = np.concatenate([arrays[5], w[nz, None, None] * last_H[nz]])
            arrays[6] = np.concatenate([arrays[6], w[nz, None] * last_V[nz]])
            arrays[7] = np.concatenate([arrays[7], w[nz, None, None]
                                        * np.einsum("ja,jb->jab", last_V[nz], last_V[nz])])
            arrays[8] = np.concatenate([arrays[8], w[nz, None, None, None]
                                        * np.einsum("ja,jbc->jabc", last_V[nz], last_H[nz])])
            tail_flag.append(np.ones(k, dtype=bool))
    pieces = Pieces(*arrays, tail=np.concatenate(tail_flag))

    Pm = sp.coo_matrix((pieces.wt, (pieces.src, pieces.tgt)), shape=(m, m)).tocsr()
    pi = _invariant_masses(Pm)
    if twisted:
        dr = d
        rows = (pieces.src[:, None, None] * d + np.arange(d)[None, :, None]) * np.ones((1, 1, d))
        cols = (pieces.tgt[:, None, None] * d + np.arange(d)[None, None, :]) * np.ones((1, d, 1))
        K = sp.coo_matrix((pieces.wH.ravel(), (rows.ravel().astype(np.int64),
                                               cols.ravel().astype(np.int64))),
                          shape=(m * d, m * d)).tocsr()
        Dpi = np.repeat(pi, d)
    else:
        dr = 1
        K = Pm
        Dpi = pi
    with np.errstate(divide="ignore"):
        inv = np.where(Dpi > 0, 1.0 / Dpi, 0.0)
    M = (sp.diags(inv) @ K.T @ sp.diags(Dpi)).tocsr()
    op = UlamOperator(m=m, d_rep=dr, N_max=N, n_split=nsplit, gamma=params.gamma,
                      twisted=twisted, stochastic=Pm, matrix=M, koopman=K, pi=pi,
                      pieces=pieces, truncated_length=L, branch_c=c, params=params,
                      cocycle=cocycle, observable=observable)
    op.truncated_mass = float(pi[0] * m * L)
    op.tail_sum = _tail_sum(c, N, params.gamma) if L > 0 else 0.0
    if op.truncated_mass > trunc_warn:
        warnings.warn(f"truncated mass {op.truncated_mass:.3g} above {trunc_warn}",
                      TruncationWarning, stacklevel=2)
    return op


# --- spectra --------------------------------------------------------------------------------

@dataclass
class SpectralReport:
    eigenvalues: np.ndarray             # magnitude-sorted, descending
    magnitudes: np.ndarray
    density: np.ndarray
    leading_vector: np.ndarray
    spectral_radius: float
    delta: float
    gap: float
    truncation_mass: float
    m: int
    near_unit: list
    deflated_radius: float = float("nan")
    method: str = "arpack"

    def to_dict(self) -> dict:
        return {"eigenvalues_re": self.eigenvalues.real.tolist(),
                "eigenvalues_im": self.eigenvalues.imag.tolist(),
                "magnitudes": self.magnitudes.tolist(), "spectral_radius": self.spectral_radius,
                "delta": self.delta, "gap": self.gap, "truncation_mass": self.truncation_mass,
                "m": self.m, "near_unit": self.near_unit,
                "deflated_radius": self.deflated_radius, "method": self.method}


def subspace_iteration(A, k: int = 4, *, block: int = None, maxiter: int = 20000,
                       tol: float = 1e-12, deflate=None, seed: int = 0, check_every: int = 10):
    """Orthogonal iteration with Rayleigh-Ritz for the ``k`` dominant eigenvalues.

    ``A`` is a matrix or a callable acting on column blocks; ``deflate``
    (optional) is applied to every iterate, restricting the iteration to
    an invariant complement.
    """
    n = A.shape[0] if hasattr(A, "shape") else None
    mv = A if callable(A) else (lambda X: A @ X)
    p = block or k + 4
    rng = np.random.default_rng(seed)
    if n is None:
        raise ValueError("A must expose its shape")
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    if deflate is not None:
        Q, _ = np.linalg.qr(deflate(Q))
    prev = None
    for it in range(1, maxiter + 1):
        Z = mv(Q)
        if deflate is not None:
            Z = deflate(Z)
        if it % check_every == 0:
            T = Q.T @ Z
            ev = np.linalg.eigvals(T)
            ev = ev[np.argsort(-np.abs(ev))][:k]
            mags = np.abs(ev)
            if prev is not None and np.max(np.abs(mags - prev)) < tol * max(1.0, mags[0]):
                return ev, it
            prev = mags
        Q, _ = np.linalg.qr(Z)
    raise NonConvergence(f"subspace iteration did not converge in {maxiter} steps")


def _deflator(op: UlamOperator):
    Pt = op.trivial_projector()
    if not np.any(Pt):
        return None
    m, d = op.m, op.d_rep

    def f(Z):
        Z3 = Z.reshape(m, d, -1)
        mean = np.einsum("i,iak->ak", op.pi, Z3)
        return (Z3 - (Pt @ mean)[None]).reshape(m * d, -1)

    return f


DENSE_MAX = 1024


def _dense_eig(A, k):
    w, vv = np.linalg.eig(A.toarray())
    idx = np.argsort(-np.abs(w), kind="stable")[:k]
    return w[idx], vv[:, idx]


def leading_spectrum(op: UlamOperator, k: int = 6, *, tol: float = 1e-12,
                     maxiter: int = 100000, near_unit: float = 0.99) -> SpectralReport:
    """Top-``k`` eigenvalues of ``M_H``: dense up to ``DENSE_MAX`` rows, ARPACK above.

    ``deflated_radius`` is the spectral radius on the complement of the
    constants in trivially acted components (the relevant one for the
    coboundary solve); it comes from deflated subspace iteration.
    """
    A = op.matrix
    n = A.shape[0]
    k = min(k, n - 2)
    method = "dense"
    if n <= DENSE_MAX:
        # small operators: a dense solve is cheap and does not depend on ARPACK's
        # process-wide random state, which enters on Arnoldi breakdown
        vals, vecs = _dense_eig(A, k)
    else:
        try:
            vals, vecs = spla.eigs(A, k=k, which="LM", tol=tol, maxiter=maxiter,
                                   ncv=min(n - 1, max(4 * k, 60)),
                                   v0=np.full(n, 1.0 / math.sqrt(n)))
            method = "arpack"
        except spla.ArpackError as exc:
            # the bulk near zero is highly non-normal (nilpotent at gamma = 0), which can
            # stall the implicit restarts
            if n > 6000:
                raise NonConvergence(str(exc)) from exc
            vals, vecs = _dense_eig(A, k)
    idx = np.argsort(-np.abs(vals))
    vals, vecs = vals[idx], vecs[:, idx]
    mags = np.abs(vals)
    lead = vecs[:, 0]
    lead = lead / lead[np.argmax(np.abs(lead))]
    near = [{"magnitude": float(abs(v)), "phase": float(np.angle(v))}
            for v in vals if abs(v) >= near_unit]
    rad = float(mags[0])
    report = SpectralReport(eigenvalues=vals, magnitudes=mags, density=op.density,
                            leading_vector=lead, spectral_radius=rad, delta=1.0 - rad,
                            gap=float(mags[0] - mags[1]) if mags.size > 1 else float("nan"),
                            truncation_mass=op.truncated_mass, m=op.m, near_unit=near,
                            method=method)
    defl = _deflator(op)
    if defl is not None:
        report.deflated_radius = deflated_radius(op)
    else:
        report.deflated_radius = rad
    return report


def deflated_radius(op: UlamOperator, seed: int = 0) -> float:
    if "deflated_radius" not in op._cache:
        defl = _deflator(op)
        if defl is None:
            # fixed start vector: ARPACK's default draws from a process-wide state
            n = op.matrix.shape[0]
            if n <= DENSE_MAX:
                vals = _dense_eig(op.matrix, 1)[0]
            else:
                vals = spla.eigs(op.matrix, k=1, which="LM", tol=1e-12, maxiter=100000,
                                 v0=np.full(n, 1.0 / math.sqrt(n)), return_eigenvectors=False)
            op._cache["deflated_radius"] = float(np.abs(vals).max())
        else:
            # unnormalised probe first: a (numerically) nilpotent restriction
            # only yields an upper bound from the collapse rate
            X = defl(np.random.default_rng(seed).standard_normal((op.matrix.shape[0], 4)))
            x0 = np.linalg.norm(X)
            for k in range(1, 61):
                X = defl(op.matrix @ X)
                nx = np.linalg.norm(X)
                if nx < 1e-14 * x0:
                    op._cache["deflated_radius"] = float((nx / x0) ** (1.0 / k))
                    return op._cache["deflated_radius"]
            ev, _ = subspace_iteration(op.matrix, k=2, deflate=defl, seed=seed, tol=1e-10)
            op._cache["deflated_radius"] = float(np.abs(ev[0]))
    return op._cache["deflated_radius"]


# --- coboundary -----------------------------------------------------------------------------

@dataclass
class ChiResult:
    chi: np.ndarray
    iterations: int
    radius: float
    direct_difference: float
    vhat_nodes: np.ndarray = field(repr=False)
    residual_sup: float = float("nan")
    residual_points: np.ndarray = field(default=None, repr=False)
    residual_values: np.ndarray = field(default=None, repr=False)
    branch_mass: tuple = None

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "radius": self.radius,
                "direct_difference": self.direct_difference,
                "residual_sup": self.residual_sup, "branch_mass": self.branch_mass,
                "chi_sup": float(np.linalg.norm(self.chi, axis=1).max())}


def _sup(X):
    X = np.asarray(X)
    return float(np.linalg.norm(X.reshape(X.shape[0], -1), axis=1).max()) if X.size else 0.0


def solve_chi(op: UlamOperator, V=None, *, tol: float = 1e-13, maxiter: int = 200000,
              residual_points=None, residual: bool = True) -> ChiResult:
    """``chi = sum_{j >= 1} M_H^j V`` by Neumann iteration.

    A sparse direct solve of ``(I - M_H) chi = M_H V`` on the deflated space
    is run alongside and the two are compared. ``V`` defaults to the bin
    averages of the operator's observable. The residual ``sup |M_H Vhat|``
    is evaluated with the exact branch sum at ``residual_points`` (default:
    bin midpoints).
    """
    m, d = op.m, op.d_rep
    exact_v = V is None
    Vb = op.V_bins() if V is None else np.asarray(V, dtype=np.float64).reshape(m, d)
    Vb = op.deflate(Vb)
    rad = deflated_radius(op)
    if rad >= 1.0 - 1e-9:
        raise SpectralRadiusError(f"spectral radius {rad:.12f} >= 1")
    first = op.deflate(op.MV_pieces() if exact_v else op.apply(Vb))
    t = first.copy()
    chi = t.copy()
    it = 1
    while True:
        if _sup(t) <= tol * max(_sup(chi), 1e-300):
            break
        if it >= maxiter:
            raise NonConvergence(f"Neumann iteration not converged after {maxiter} terms")
        t = op.deflate(op.apply(t))
        chi += t
        it += 1
    # direct route
    Pt = op.trivial_projector()
    A = sp.identity(m * d, format="csr") - op.matrix
    if np.any(Pt):
        E = sp.kron(np.ones((m, 1)) @ op.pi[None, :], Pt) if d > 1 or op.twisted else \
            sp.csr_matrix(np.ones((m, 1)) @ op.pi[None, :])
        A = A + sp.csr_matrix(E)
    rhs = first.reshape(-1)
    chi_d = spla.spsolve(A.tocsc(), rhs).reshape(m, d)
    ddiff = _sup(chi - chi_d) / max(_sup(chi), 1e-300)

    p = op.pieces
    if op.twisted:
        Hc = np.einsum("pab,pb->pa", p.wH, chi[p.tgt])
    else:
        Hc = p.wt[:, None] * chi[p.tgt]
    vnode = p.wV if exact_v else p.wt[:, None] * Vb[p.src]
    vhat = (vnode - Hc + p.wt[:, None] * chi[p.src]) / p.wt[:, None]
    res = ChiResult(chi=chi, iterations=it, radius=rad, direct_difference=float(ddiff),
                    vhat_nodes=vhat)
    if residual:
        zs = (0.5 + (np.arange(m) + 0.5) / (2 * m)) if residual_points is None \
            else np.asarray(residual_points, dtype=np.float64)
        out, qs = _residual(op, zs, exact_v, Vb, chi)
        res.residual_points = zs
        res.residual_values = out
        res.residual_sup = _sup(out)
        res.branch_mass = (float(qs.min()), float(qs.max()))
    return res


def _residual(op: UlamOperator, zs, exact_v, Vb, chi):
    m, d = op.m, op.d_rep
    if op.twisted:
        cargs = _cocycle_args(op.cocycle)
    else:
        cargs = (np.zeros((d, d)), np.zeros((d, d)), 1.0, 0)
    obs = op.observable
    if obs is None or obs.dim != d:
        obs = ObservableSpec("constant", np.zeros(d))
        exact_v = False
    out = np.empty((zs.size, d))
    qs = np.empty(zs.size)
    rho = np.ascontiguousarray(op.density)
    _residual_kernel(zs, m, op.N_max, op.params.gamma, op.params.coef, *cargs,
                     *obs.kernel_args(), bool(exact_v), np.ascontiguousarray(Vb),
                     np.ascontiguousarray(chi), rho, out, qs)
    return out, qs


def restrict(chi_fine: np.ndarray, pi_fine: np.ndarray, factor: int) -> np.ndarray:
    """Invariant-mass weighted average of ``factor`` consecutive fine bins."""
    mf, d = chi_fine.shape
    w = pi_fine.reshape(mf // factor, factor)
    x = chi_fine.reshape(mf // factor, factor, d)
    return np.einsum("ik,ikd->id", w, x) / w.sum(axis=1)[:, None]


def chi_refinement_check(params: MapParams, partition: ReturnPartition, cocycle: CocycleSpec,
                         observable: ObservableSpec, m: int = 512, m_ref: int = 2048,
                         N_max: int = None, factor: float = 5.0, threads: int = 1) -> dict:
    """Martingale residual at ``m`` against the refinement error ``|chi_m - R chi_ref|``."""
    if m_ref % m:
        raise ValueError("m_ref must be a multiple of m")
    op = build_ulam(params, partition, cocycle, m, N_max, observable=observable, threads=threads)
    ref = build_ulam(params, partition, cocycle, m_ref, N_max, observable=observable,
                     threads=threads)
    a = solve_chi(op)
    b = solve_chi(ref, residual=False)
    err = _sup(a.chi - restrict(b.chi, ref.pi, m_ref // m))
    return {"m": m, "m_ref": m_ref, "residual_sup": a.residual_sup, "refinement_error": err,
            "ratio": a.residual_sup / err if err > 0 else float("inf"),
            "ok": bool(a.residual_sup <= factor * err), "factor": factor,
            "radius": a.radius, "direct_difference": a.direct_difference,
            "branch_mass": a.branch_mass}


# --- Green-Kubo -----------------------------------------------------------------------------

def haar_average(A, cocycle: CocycleSpec = None) -> np.ndarray:
    """``int g A g^T dHaar(g)`` over the group of the cocycle's kind."""
    A = np.asarray(A, dtype=np.float64)
    if cocycle is None or cocycle.group_kind == "trivial":
        return A.copy()
    d = A.shape[0]
    kind = cocycle.group_kind
    if kind == "SO2":
        return 0.5 * np.trace(A) * np.eye(2) + 0.5 * (A - A.T)
    if kind == "torus":
        out = np.zeros_like(A)
        for b in range(d // 2):
            blk = A[2 * b:2 * b + 2, 2 * b:2 * b + 2]
            out[2 * b:2 * b + 2, 2 * b:2 * b + 2] = (0.5 * np.trace(blk) * np.eye(2)
                                                     + 0.5 * (blk - blk.T))
        return out
    return np.trace(A) / d * np.eye(d)


def greenkubo_sigma(op: UlamOperator, V=None, r_bar: float = None, *, tol: float = 1e-12,
                    maxterms: int = 200000, average: bool = True) -> dict:
    """Covariance from the correlation series of the induced observable.

    ``c_n = int V (H_n V∘F^n)^T dmu_Y``: the first step is resolved at piece
    level and later steps with the Koopman matrix on bin averages. The
    induced covariance is ``c_0 + sum_n (c_n + c_n^T)`` averaged over the
    group (the fibre is Haar distributed under the skew-product measure);
    dividing by ``r_bar`` gives the covariance of the original system.
    """
    if op.twisted and deflated_radius(op) >= 1.0 - 1e-9:
        raise SpectralRadiusError("twisted spectral radius >= 1")
    p = op.pieces
    pis = op.pi[p.src]
    d = op.dim
    if V is None:
        Vb = op.V_bins()
        c0 = np.einsum("p,pab->ab", pis, p.wVV)
        wVH = p.wVH
    else:
        Vb = np.asarray(V, dtype=np.float64).reshape(op.m, d)
        Vp = Vb[p.src]
        c0 = np.einsum("p,pa,pb->ab", pis * p.wt, Vp, Vp)
        Hb = p.wH if op.twisted else p.wt[:, None, None] * np.eye(d)[None]
        wVH = np.einsum("pa,pbc->pabc", Vp, Hb)
    mean = op.integrate(Vb)
    Pt = op.trivial_projector()
    drift = float(np.linalg.norm(Pt @ mean))
    if drift > 1e-6 * max(1.0, math.sqrt(np.trace(c0))):
        warnings.warn(f"induced observable has mean {drift:.3g} on trivial components; "
                      "deflating at bin level only", RuntimeWarning, stacklevel=2)
    X = op.deflate(Vb) if np.any(Pt) else Vb
    total = c0.copy()
    norms = []
    ref = max(np.linalg.norm(c0), 1e-300)
    n = 0
    while True:
        n += 1
        cn = np.einsum("p,pabc,pc->ab", pis, wVH, X[p.tgt])
        total += cn + cn.T
        nr = float(np.linalg.norm(cn))
        norms.append(nr)
        ref = max(ref, np.linalg.norm(total))
        if nr < tol * ref and n > 2:
            break
        if n >= maxterms:
            raise NonConvergence("correlation series did not converge")
        if op.twisted:
            X = op.apply_koopman(X)
        else:
            X = (op.stochastic @ X)
        if np.any(Pt):
            X = op.deflate(X)
    if np.linalg.norm(c0) == 0.0:
        sig = np.zeros((d, d))
    else:
        sig = haar_average(total, op.cocycle if op.twisted else None) if average else total
    sig = 0.5 * (sig + sig.T)
    rb = op.mean_return_time() if r_bar is None else float(r_bar)
    nrm = np.array(norms)
    tail = nrm[nrm > 0]
    ratio = float("nan")
    if tail.size >= 8:
        h = tail.size // 2
        slope = np.polyfit(np.arange(h, tail.size), np.log(tail[h:]), 1)[0]
        ratio = float(np.exp(slope))
    return {"sigma_induced": sig, "sigma_full": sig / rb, "r_bar": rb, "terms": n,
            "term_norms": norms, "decay_ratio": ratio, "unaveraged": 0.5 * (total + total.T)}


def induced_mean(params: MapParams, partition: ReturnPartition, observable: ObservableSpec,
                 m: int = 512, N_max: int = None, threads: int = 1) -> dict:
    """``int v dmu`` as ``int V dmu_Y / r_bar`` from the untwisted operator."""
    op = build_ulam(params, partition, None, m, N_max, observable=observable, threads=threads)
    ev = op.induced_observable_mean()
    rb = op.mean_return_time()
    return {"mean": ev / rb, "induced_mean": ev, "r_bar": rb,
            "truncated_mass": op.truncated_mass, "m": m, "N_max": op.N_max}


# --- single-branch caricature ------------------------------------------------------------

def caricature_chi(H, V) -> np.ndarray:
    """Closed form for one full branch with constant ``H`` and constant ``V``.

    ``M_H`` acts on constants as ``H^{-1}``, so ``chi = sum_j H^{-j} V``
    ``= (I - H^T)^{-1} H^T V``.
    """
    H = np.asarray(H, dtype=np.float64)
    d = H.shape[0]
    return np.linalg.solve(np.eye(d) - H.T, H.T @ np.asarray(V, dtype=np.float64))


def caricature_sigma(H, V) -> np.ndarray:
    """Unaveraged correlation series for one full branch with constant ``H`` and ``V``.

    ``c_n = V (H^n V)^T`` and the series sums to ``V V^T + X + X^T`` with
    ``X = V V^T H^T (I - H^T)^{-1}``.
    """
    H = np.asarray(H, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    d = H.shape[0]
    vv = np.outer(V, V)
    X = vv @ H.T @ np.linalg.inv(np.eye(d) - H.T)
    return vv + X + X.T
