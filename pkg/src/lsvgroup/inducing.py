"""First-return system on ``Y = [1/2, 1]``.

Builds the return-time partition ``{Z_n}``, evaluates the induced cocycle
``H = h_r`` and the induced observables ``V`` and ``V*``, and turns samples
into growth, tail and summability diagnostics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import (BISECTION_ITERS, MapParams, ReturnCapExceeded,
                       branch_points_kernel, ConvergenceError, DomainError,
                       lsv_step)
from .groups import CocycleSpec, GroupElement, cocycle_into, matmul_into, reorthonormalize
from .observables import ObservableSpec, obs_into
from . import rng as _rng
from .rng import splitmix64

__all__ = [
    "ReturnPartition",
    "InducedSample",
    "InsufficientData",
    "build_return_partition",
    "induced_values",
    "induced_batch",
    "sample_cylinders",
    "tail_exponent_fit",
    "TailFit",
    "vstar_scaling_fit",
    "verify_growth_bounds",
    "verify_summability",
    "kac_product",
    "orbit_return_statistics",
]

REORTHO_EVERY = 1024


class InsufficientData(ValueError):
    pass


# --- partition -----------------------------------------------------------------

@dataclass
class ReturnPartition:
    """Cylinders ``Z_n = [left_n, right_n)`` for ``n = 1..N_max`` (``Z_1`` closed at 1).

    ``empirical_mu`` comes from an ensemble of short induced orbits and
    ``mu_long`` from a single long orbit; ``tail_*`` refer to ``r > N_max``.
    """

    gamma: float
    n: np.ndarray
    left: np.ndarray
    right: np.ndarray
    branch: np.ndarray
    empirical_mu: np.ndarray = None
    tail_mass: float = float("nan")
    mu_long: np.ndarray = None
    tail_mass_long: float = float("nan")
    time_fraction_Y: float = float("nan")
    n_returns: int = 0
    orbit_length: int = 0

    @property
    def n_max(self) -> int:
        return int(self.n[-1])

    @property
    def lengths(self) -> np.ndarray:
        return self.right - self.left

    @property
    def tail_length(self) -> float:
        return float(self.left[-1] - 0.5)

    @property
    def cylinders(self):
        return list(zip(self.n.tolist(), self.left.tolist(), self.right.tolist()))

    def density_near_half(self, n_from: int = None, min_count: int = 2000) -> float:
        """Pooled ``mu / length`` over the deep cylinders, a proxy for the density at ``1/2``.

        By default the pool starts at ``N_max / 10`` or deeper, but never so deep
        that it holds fewer than ``min_count`` sampled returns.
        """
        if self.empirical_mu is None:
            raise InsufficientData("partition carries no mass estimates")
        if n_from is None:
            counts = np.append(self.empirical_mu, self.tail_mass) * max(self.n_returns, 1)
            deep = np.cumsum(counts[::-1])[::-1]          # returns with r >= n
            enough = np.flatnonzero(deep[:-1] >= min_count)
            n_from = max(self.n_max // 10, 2)
            if enough.size:
                n_from = max(2, min(n_from, int(enough[-1]) + 1))
        sel = self.n >= n_from
        mass = self.empirical_mu[sel].sum() + self.tail_mass
        length = self.lengths[sel].sum() + self.tail_length
        return float(mass / length)

    def model_mass(self, min_count: int = 50) -> np.ndarray:
        """Empirical masses where well sampled, ``density * length`` deeper down."""
        mu = self.empirical_mu.copy()
        counts = mu * max(self.n_returns, 1)
        rho = self.density_near_half()
        thin = counts < min_count
        mu[thin] = rho * self.lengths[thin]
        return mu


@njit(cache=True, nogil=True)
def _step(x, gamma, coef, key, k):
    """One map step; a nonzero ``key`` flips the last bit half of the time.

    In double precision the doubling map (gamma = 0) reaches the fixed point 1
    within about 53 steps; the random last bit keeps Lebesgue-typical behaviour.
    """
    x = lsv_step(x, gamma, coef)
    if key != 0 and (splitmix64(key, np.uint64(k)) & np.uint64(1)):
        x = x + 1.1102230246251565e-16 if x < 1.0 else x - 1.1102230246251565e-16
    return x


@njit(cache=True, nogil=True)
def _orbit_returns_kernel(x0, burn, n_steps, gamma, coef, nmax, cap, key):
    """Long-orbit bookkeeping: histogram of completed excursion lengths and time in Y."""
    x = x0
    for i in range(burn):
        x = _step(x, gamma, coef, key, i)
    hist = np.zeros(nmax + 2, dtype=np.int64)
    in_y = 0
    last = -1
    longest = 0
    for k in range(n_steps):
        if x >= 0.5:
            in_y += 1
            if last >= 0:
                r = k - last
                if r > longest:
                    longest = r
                hist[min(r, nmax + 1)] += 1
            last = k
        elif last >= 0 and k - last > cap:
            return hist, in_y, longest, False
        x = _step(x, gamma, coef, key, burn + k)
    return hist, in_y, longest, True


@njit(cache=True, nogil=True)
def _short_orbits_kernel(y0s, burn, n_ret, gamma, coef, nmax, cap, keys):
    """Induced orbits from Lebesgue-uniform starts on Y; burn-in returns are discarded."""
    hist = np.zeros(nmax + 2, dtype=np.int64)
    samples = np.empty(y0s.shape[0] * n_ret, dtype=np.int64)
    ok = True
    pos = 0
    for i in range(y0s.shape[0]):
        y = y0s[i]
        key = keys[i]
        k = 0
        for j in range(burn + n_ret):
            x = _step(y, gamma, coef, key, k)
            k += 1
            r = 1
            while x < 0.5:
                if r >= cap:
                    return hist, samples[:pos], False
                x = _step(x, gamma, coef, key, k)
                k += 1
                r += 1
            if j >= burn:
                hist[min(r, nmax + 1)] += 1
                samples[pos] = r
                pos += 1
            y = x
    return hist, samples[:pos], ok


def _dither_key(g, on: bool):
    # zero disables the refresh in the kernels
    return np.uint64(int(g.integers(1, 2**63)) if on else 0)


def _cylinder_table(params: MapParams, nmax: int):
    c, ok = branch_points_kernel(int(nmax), params.gamma, params.coef,
                                 params.bisection_tol, BISECTION_ITERS)
    if not ok:
        raise ConvergenceError(f"branch point c_{len(c)} did not converge")
    n = np.arange(1, nmax + 1)
    # Z_n = {y : 2y - 1 in [c_{n-1}, c_{n-2})}, c_{-1} = 1
    upper = np.concatenate(([1.0], c[:nmax - 1]))
    lower = c[:nmax]
    return n, 0.5 * (1.0 + lower), 0.5 * (1.0 + upper), c


def build_return_partition(params: MapParams, n_max: int, *, orbit_length: int = 10_000_000,
                           burn_in: int = 100_000, short_orbits: int = 1000,
                           short_returns: int = 2000, short_burn: int = 20,
                           seed: int = 0, estimate: bool = True,
                           return_samples: bool = False):
    """Exact cylinder endpoints plus two independent mass estimates.

    Parameters
    ----------
    orbit_length, burn_in
        Long single orbit from a Lebesgue-random start.
    short_orbits, short_returns, short_burn
        Ensemble of induced orbits; ``short_burn`` induced steps are dropped
        so the start law has relaxed to ``mu_Y``.
    return_samples
        Also return the ensemble's return-time sample.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n, left, right, c = _cylinder_table(params, n_max)
    part = ReturnPartition(gamma=params.gamma, n=n, left=left, right=right, branch=c)
    samples = None
    if estimate:
        dither = params.gamma == 0.0
        g = _rng.stream(seed, 0)
        x0 = _rng.open_unit(g)
        hist, in_y, _, ok = _orbit_returns_kernel(x0, int(burn_in), int(orbit_length),
                                                  params.gamma, params.coef, n_max,
                                                  params.max_return, _dither_key(g, dither))
        if not ok:
            raise ReturnCapExceeded(f"long orbit excursion exceeded {params.max_return}")
        tot = hist.sum()
        part.mu_long = hist[1:n_max + 1] / max(tot, 1)
        part.tail_mass_long = float(hist[n_max + 1] / max(tot, 1))
        part.time_fraction_Y = in_y / orbit_length
        part.orbit_length = int(orbit_length)

        gens = [_rng.stream(seed, 1 + i) for i in range(short_orbits)]
        y0 = np.array([0.5 + 0.5 * _rng.open_unit(gi) for gi in gens])
        keys = np.array([_dither_key(gi, dither) for gi in gens], dtype=np.uint64)
        hist, samples, ok = _short_orbits_kernel(y0, int(short_burn), int(short_returns),
                                                 params.gamma, params.coef, n_max,
                                                 params.max_return, keys)
        if not ok:
            raise ReturnCapExceeded(f"induced orbit exceeded {params.max_return}")
        tot = hist.sum()
        part.empirical_mu = hist[1:n_max + 1] / tot
        part.tail_mass = float(hist[n_max + 1] / tot)
        part.n_returns = int(tot)
    if return_samples:
        return part, samples
    return part


def orbit_return_statistics(params: MapParams, n_steps: int, seed: int = 0,
                            burn_in: int = 100_000, n_max: int = 10_000):
    """Time fraction in ``Y`` and mean excursion length along one long orbit."""
    g = _rng.stream(seed, 0)
    x0 = _rng.open_unit(g)
    hist, in_y, longest, ok = _orbit_returns_kernel(x0, int(burn_in), int(n_steps),
                                                    params.gamma, params.coef, n_max,
                                                    params.max_return,
                                                    _dither_key(g, params.gamma == 0.0))
    if not ok:
        raise ReturnCapExceeded("excursion exceeded max_return")
    return {"time_fraction_Y": in_y / n_steps, "visits": int(in_y),
            "longest_excursion": int(longest)}


# --- induced values ----------------------------------------------------------------

@dataclass
class InducedSample:
    y: float
    r: int
    H: GroupElement
    V: np.ndarray
    Vstar: float
    orbit: np.ndarray = field(default=None, repr=False)


@njit(cache=True, nogil=True)
def _induced_one(y, gamma, coef, cap, s0, s1, eta, gkind,
                 okind, v0, u, oeta, tx, tv, off, H, V):
    """Fills ``H`` and ``V``; returns ``(r, Vstar)`` or ``(-1, nan)`` past ``cap``."""
    d = v0.shape[0]
    work = np.empty((4, d, d))
    h = np.empty((d, d))
    tmp = np.empty((d, d))
    vb = np.empty(d)
    comp = np.zeros(d)
    for i in range(d):
        V[i] = 0.0
        for j in range(d):
            H[i, j] = 1.0 if i == j else 0.0
    vstar = 0.0
    x = y
    r = 0
    while True:
        obs_into(x, okind, v0, u, oeta, tx, tv, off, vb)
        nrm = 0.0
        for i in range(d):
            acc = 0.0
            if gkind == 0:
                acc = vb[i]
            else:
                for k in range(d):
                    acc += H[i, k] * vb[k]
            yk = acc - comp[i]
            t = V[i] + yk
            comp[i] = (t - V[i]) - yk
            V[i] = t
            nrm += t * t
        nrm = math.sqrt(nrm)
        if nrm > vstar:
            vstar = nrm
        if gkind != 0:
            cocycle_into(x, s0, s1, eta, gkind, work, h)
            matmul_into(H, h, tmp)
            H[:, :] = tmp
            if (r + 1) % 1024 == 0:
                reorthonormalize(H)
        x = lsv_step(x, gamma, coef)
        r += 1
        if x >= 0.5:
            return r, vstar
        if r >= cap:
            return -1, math.nan


@njit(cache=True, nogil=True)
def _induced_batch_kernel(ys, gamma, coef, cap, s0, s1, eta, gkind,
                          okind, v0, u, oeta, tx, tv, off, rs, Hs, Vs, vstars):
    for i in range(ys.shape[0]):
        r, vs = _induced_one(ys[i], gamma, coef, cap, s0, s1, eta, gkind,
                             okind, v0, u, oeta, tx, tv, off, Hs[i], Vs[i])
        rs[i] = r
        vstars[i] = vs


def _cocycle_args(c: CocycleSpec):
    return (np.ascontiguousarray(c.base_generator), np.ascontiguousarray(c.modulation_generator),
            float(c.holder_exponent), c.kind_code)


def induced_batch(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec, ys):
    """Vectorised :func:`induced_values`: returns ``(r, H, V, Vstar)`` arrays."""
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if np.any((ys < 0.5) | (ys > 1.0)):
        raise DomainError("induced values are defined on Y = [1/2, 1]")
    if cocycle.dim != observable.dim:
        raise ValueError("cocycle and observable dimensions differ")
    d = observable.dim
    b = ys.shape[0]
    rs = np.empty(b, dtype=np.int64)
    Hs = np.empty((b, d, d))
    Vs = np.empty((b, d))
    vst = np.empty(b)
    _induced_batch_kernel(ys, params.gamma, params.coef, params.max_return,
                          *_cocycle_args(cocycle), *observable.kernel_args(),
                          rs, Hs, Vs, vst)
    if np.any(rs < 0):
        i = int(np.argmax(rs < 0))
        raise ReturnCapExceeded(f"return time of y={ys[i]!r} exceeds {params.max_return}")
    return rs, Hs, Vs, vst


def induced_values(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec,
                   y: float, keep_orbit: bool = False) -> InducedSample:
    """``r``, ``H = h_r``, ``V`` and ``V*`` at ``y`` from a single pass over the excursion."""
    if not (0.5 <= y <= 1.0):
        raise DomainError(f"y={y!r} is not in Y=[1/2, 1]")
    rs, Hs, Vs, vst = induced_batch(params, cocycle, observable, np.array([float(y)]))
    orbit = None
    if keep_orbit:
        from .dynamics import orbit_kernel
        orbit = orbit_kernel(float(y), int(rs[0]), params.gamma, params.coef)
    return InducedSample(y=float(y), r=int(rs[0]), H=GroupElement(Hs[0]), V=Vs[0],
                         Vstar=float(vst[0]), orbit=orbit)


def sample_cylinders(partition: ReturnPartition, ns, per_cylinder: int, rng) -> tuple:
    """Uniform points inside the requested cylinders; returns ``(n_labels, ys)``."""
    ns = np.asarray(ns, dtype=np.int64)
    if np.any(ns < 1) or np.any(ns > partition.n_max):
        raise ValueError("cylinder index outside the partition")
    lab = np.repeat(ns, per_cylinder)
    lo = partition.left[lab - 1]
    hi = partition.right[lab - 1]
    ys = lo + (hi - lo) * rng.random(lab.shape[0])
    ys = np.minimum(np.maximum(ys, lo), np.nextafter(hi, lo))
    return lab, ys


# --- fits -------------------------------------------------------------------------------

def _linfit(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise InsufficientData("need at least three points for a fit")
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    dof = max(x.size - 2, 1)
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.inv(a.T @ a)
    return float(coef[0]), float(coef[1]), float(math.sqrt(max(cov[0, 0], 0.0)))


@dataclass
class TailFit:
    slope: float
    intercept: float
    stderr: float
    window: tuple
    local_slopes: tuple
    curvature: float
    power_law: bool
    n_points: int

    def __iter__(self):
        return iter((self.slope, self.intercept, self.stderr))


CURVATURE_THRESHOLD = 0.5


def tail_exponent_fit(data, window=(10, 1000), *, n_points: int = 30,
                      min_exceedances: int = 10, tail=None,
                      curvature_threshold: float = CURVATURE_THRESHOLD) -> TailFit:
    """Log-log regression of the return-time survival function.

    ``data`` is a :class:`ReturnPartition` (the tail ``c_{n-1}/2`` of
    Lebesgue length below ``Z_n`` is used, which is deterministic), a sample of
    return times, or an array of ``n`` values with ``tail`` supplying
    ``P(r > n)``. The curvature diagnostic is the difference between the
    slopes on the two halves of the window; geometric tails fail it.
    """
    lo, hi = window
    if isinstance(data, ReturnPartition):
        if data.n_max < 1000 and hi > data.n_max:
            raise InsufficientData("partition needs N_max >= 10^3 or a window inside it")
        hi = min(hi, data.n_max)
        ns = np.unique(np.round(np.geomspace(lo, hi, n_points)).astype(np.int64))
        # P(r > n) is the length of [1/2, left_n) up to the density near 1/2
        tails = data.left[ns - 1] - 0.5
    elif tail is not None:
        ns = np.asarray(data, dtype=np.float64)
        tails = np.asarray(tail, dtype=np.float64)
        sel = (ns >= lo) & (ns <= hi)
        ns, tails = ns[sel], tails[sel]
    else:
        r = np.sort(np.asarray(data, dtype=np.int64))
        if r.size < 10_000:
            raise InsufficientData("need at least 10^4 return-time observations")
        ns = np.unique(np.round(np.geomspace(lo, hi, n_points)).astype(np.int64))
        exceed = r.size - np.searchsorted(r, ns, side="right")
        keep = exceed >= min_exceedances
        ns, tails = ns[keep], exceed[keep] / r.size
    keep = tails > 0
    ns, tails = ns[keep], tails[keep]
    if ns.size < 4:
        raise InsufficientData("too few tail points inside the window")
    lx, ly = np.log(ns), np.log(tails)
    slope, icpt, err = _linfit(lx, ly)
    h = ns.size // 2
    s1 = _linfit(lx[:h + 1], ly[:h + 1])[0] if h + 1 >= 3 else slope
    s2 = _linfit(lx[h:], ly[h:])[0] if ns.size - h >= 3 else slope
    curv = abs(s2 - s1)
    return TailFit(slope=slope, intercept=icpt, stderr=err, window=(float(ns[0]), float(ns[-1])),
                   local_slopes=(s1, s2), curvature=curv,
                   power_law=bool(curv <= curvature_threshold), n_points=int(ns.size))


BOUNDED_EXPONENT = 0.1


def vstar_scaling_fit(ns, vstars, window=None, min_per_decade: int = 10) -> dict:
    """Exponent of ``max_{Z_n} V*`` against ``n`` by log-log regression.

    Returns a dict with ``exponent``, ``stderr``, the per-cylinder maxima and
    a ``bounded`` flag (exponent below 0.1, negative values included).
    """
    ns = np.asarray(ns, dtype=np.int64)
    vstars = np.asarray(vstars, dtype=np.float64)
    if window is not None:
        sel = (ns >= window[0]) & (ns <= window[1])
        ns, vstars = ns[sel], vstars[sel]
    uniq = np.unique(ns)
    if uniq.size < 3:
        raise InsufficientData("need samples in at least three cylinders")
    decades = math.log10(uniq[-1] / uniq[0]) if uniq[0] > 0 else 0.0
    if decades > 0 and uniq.size / decades < min_per_decade:
        raise InsufficientData(f"need >= {min_per_decade} cylinders per decade")
    mx = np.array([vstars[ns == k].max() for k in uniq])
    if np.any(mx <= 0):
        raise InsufficientData("nonpositive V* maxima cannot be fitted in log scale")
    slope, icpt, err = _linfit(np.log(uniq), np.log(mx))
    return {"exponent": slope, "intercept": icpt, "stderr": err, "n": uniq, "max_vstar": mx,
            "bounded": bool(slope < BOUNDED_EXPONENT)}


def verify_growth_bounds(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec,
                         partition: ReturnPartition, ns, per_cylinder: int = 20,
                         seed: int = 0, trend_tol: float = 0.05) -> dict:
    """Empirical ratios behind the cylinder-wise growth bounds.

    For each ``n``: ``sup_{Z_n}|V|/n`` (must not exceed ``|v|_inf``), the
    pairwise oscillation of ``H`` divided by ``n |F y - F y'|^eta`` (a
    finite-difference surrogate for the symbolic Hölder seminorm, since ``F``
    maps ``Z_n`` onto ``Y``), and ``max_{1<=k<n} |f^k y| (n-k)^{1/gamma}``.
    A ratio counts as bounded when its log-log slope is at most ``trend_tol``.
    """
    from .dynamics import orbit_kernel
    g = _rng.stream(seed, 0)
    ns = np.asarray(sorted(set(int(k) for k in ns)), dtype=np.int64)
    lab, ys = sample_cylinders(partition, ns, per_cylinder, g)
    rs, Hs, Vs, _ = induced_batch(params, cocycle, observable, ys)
    if np.any(rs != lab):
        raise AssertionError("cylinder sampling disagrees with the orbit return time")
    vinf = observable.sup_norm()
    eta = cocycle.holder_exponent
    v_ratio, h_osc, h_ratio, geo = [], [], [], []
    for k in ns:
        sel = np.flatnonzero(lab == k)
        v_ratio.append(float(np.max(np.linalg.norm(Vs[sel], axis=1)) / k))
        fy = np.empty(sel.size)
        gmax = 0.0
        for t, i in enumerate(sel):
            orb = orbit_kernel(ys[i], int(k) + 1, params.gamma, params.coef)
            fy[t] = orb[-1]
            if k > 1:
                kk = np.arange(1, k)
                gmax = max(gmax, float(np.max(orb[1:k] * (k - kk) ** (1.0 / params.gamma)))
                           if params.gamma > 0 else float(np.max(orb[1:k] * 2.0 ** (k - kk))))
        geo.append(gmax)
        best_osc, best_ratio = 0.0, 0.0
        for a in range(sel.size):
            for b in range(a + 1, sel.size):
                diff = float(np.max(np.abs(Hs[sel[a]] - Hs[sel[b]])))
                dist = abs(fy[a] - fy[b])
                if dist <= 0:
                    continue
                best_osc = max(best_osc, diff)
                best_ratio = max(best_ratio, diff / (k * dist ** eta))
        h_osc.append(best_osc)
        h_ratio.append(best_ratio)
    v_ratio = np.array(v_ratio)
    h_osc = np.array(h_osc)
    h_ratio = np.array(h_ratio)
    geo = np.array(geo)

    def _slope(vals):
        ok = vals > 0
        if ok.sum() < 3:
            return float("nan")
        return _linfit(np.log(ns[ok]), np.log(vals[ok]))[0]

    rep = {
        "n": ns,
        "v_ratio": v_ratio,
        "v_sup_norm": vinf,
        # triangle inequality; the allowance is float rounding only
        "v_bound_ok": bool(np.all(v_ratio <= vinf * (1.0 + 1e-12))),
        "h_oscillation": h_osc,
        "h_oscillation_slope": _slope(h_osc),
        "h_ratio": h_ratio,
        "h_ratio_slope": _slope(h_ratio),
        "geometry_ratio": geo,
        "geometry_slope": _slope(geo),
        "surrogate": "finite-difference oscillation over sampled pairs, distance |F y - F y'|",
        "samples_per_cylinder": int(per_cylinder),
    }
    rep["bounded"] = bool(rep["v_bound_ok"]
                          and not (rep["h_ratio_slope"] > trend_tol)
                          and not (rep["geometry_slope"] > trend_tol))
    return rep


def verify_summability(partition: ReturnPartition, p: float = None, epsilon: float = None,
                       tail_window=(100, None), decades=None, cauchy_ratio: float = 0.5) -> dict:
    """Partial sums ``sum_{n<=N} mu(Z_n) n^s`` with a power-law tail extrapolation.

    ``s = 1`` for condition (i), ``s = 2 epsilon + 1`` for (ii)/(iii) and
    ``s = p`` for ``r in L^p``. With ``mu(r > n) ~ c n^{-a}`` the tail beyond
    ``N`` behaves like ``sum n^{s-a-1}``, so the verdict is CONVERGENT iff
    ``s < a`` with ``a`` the fitted exponent. The analytic comparison uses
    ``a = 1/gamma``.
    """
    if partition.empirical_mu is None:
        raise InsufficientData("summability needs empirical cylinder masses")
    nmax = partition.n_max
    hi = tail_window[1] or nmax
    fit = tail_exponent_fit(partition, window=(tail_window[0], hi))
    a_hat = -fit.slope
    a_true = 1.0 / partition.gamma if partition.gamma > 0 else float("inf")
    mu = partition.model_mass()
    n = partition.n.astype(np.float64)
    if decades is None:
        top = int(math.floor(math.log10(nmax)))
        decades = [10 ** k for k in range(1, top + 1)]
    rho = partition.density_near_half()
    # mu(r > N) ~ rho * (left_{N} - 1/2) ~ C N^{-a}; C from the last cylinder
    c_tail = rho * (partition.left[-1] - 0.5) * nmax ** a_hat

    def one(label, s, analytic_threshold):
        terms = mu * n ** s
        partial = {int(N): float(terms[:N].sum()) for N in decades}
        inc = np.diff([0.0] + [partial[int(N)] for N in decades])
        ratios = [float(inc[i + 1] / inc[i]) if inc[i] > 0 else (0.0 if inc[i + 1] == 0 else
                                                                  float("inf"))
                  for i in range(len(inc) - 1)]
        if s < a_hat:
            # sum_{n>N} a C n^{-a-1} n^s  ~  a C N^{s-a} / (a - s)
            tail = a_hat * c_tail * nmax ** (s - a_hat) / (a_hat - s)
            verdict = "CONVERGENT"
        else:
            tail = float("inf")
            verdict = "DIVERGENT"
        analytic = "CONVERGENT" if s < analytic_threshold else "DIVERGENT"
        return {"condition": label, "exponent": s, "partial_sums": partial,
                "decade_increment_ratios": ratios,
                "cauchy": bool(ratios and all(r < cauchy_ratio for r in ratios[-2:])),
                "tail_extrapolation": float(tail),
                "total": float(terms.sum() + tail),
                "verdict": verdict, "analytic_verdict": analytic,
                "matches_analytic": verdict == analytic}

    out = {"gamma": partition.gamma, "tail_exponent": a_hat, "tail_stderr": fit.stderr,
           "tail_exponent_analytic": a_true, "conditions": []}
    out["conditions"].append(one("(i)", 1.0, a_true))
    if epsilon is not None:
        if not (0.0 < epsilon <= 1.0):
            raise ValueError("epsilon must lie in (0, 1]")
        out["epsilon"] = epsilon
        out["conditions"].append(one("(ii)-(iii)", 2.0 * epsilon + 1.0, a_true))
    if p is not None:
        if p <= 1:
            raise ValueError("p must exceed 1")
        out["p"] = p
        out["conditions"].append(one(f"r in L^{p:g}", float(p), a_true))
    out["all_match_analytic"] = all(c["matches_analytic"] for c in out["conditions"])
    return out


def kac_product(partition: ReturnPartition) -> dict:
    """``r_bar * mu_hat(Y)``: mean return time from the induced ensemble times the
    long-orbit fraction of time spent in ``Y``; equals 1 by Kac's formula."""
    mu = partition.model_mass()
    n = partition.n.astype(np.float64)
    rbar = float((mu * n).sum())
    fit = None
    if partition.gamma > 0 and partition.n_max >= 100:
        fit = tail_exponent_fit(partition, window=(max(10, partition.n_max // 10), partition.n_max))
        a = -fit.slope
        rho = partition.density_near_half()
        # E[r; r > N] = N mu(r > N) + sum_{n>N} mu(r > n)
        tail_n = rho * (partition.left[-1] - 0.5)
        if a > 1:
            rbar += tail_n * partition.n_max * (1.0 + 1.0 / (a - 1.0))
        else:
            rbar = float("inf")
    return {"r_bar": rbar, "mu_Y": partition.time_fraction_Y,
            "product": rbar * partition.time_fraction_Y,
            "n_returns": partition.n_returns, "orbit_length": partition.orbit_length}
