"""Monte Carlo Birkhoff sums over the skew product ``(x, g) -> (f x, g h(x))``.

Every trajectory has its own counter-based stream (initial point, initial
fibre element, refresh-bit key), and trajectories are written to fixed
slots, so an ensemble is bit-identical for any thread count.

At ``gamma = 0`` the doubling map exhausts the 53 mantissa bits of a float
start in 53 steps and then sits on the fixed point. The kernel therefore
refreshes the lowest mantissa bit after each step from the trajectory's
bit stream; both branches are exact on the grid ``2^-53 Z``, so the orbit
is the exact shift on an infinite fair-coin sequence. For ``gamma > 0``
the plain map is iterated, bit-identical with the other modules.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng as _rng
from .dynamics import MapParams, ReturnCapExceeded, lsv_step
from .groups import (CocycleSpec, GroupElement, cocycle_into, haar_sample, matmul_into,
                     reorthonormalize)
from .inducing import induced_batch, _cocycle_args
from .observables import ObservableSpec, obs_into
from .rng import splitmix64

__all__ = [
    "ObservableSpec",
    "PathEnsemble",
    "PathProcess",
    "GridMismatch",
    "CenteringDriftWarning",
    "TrajectoryFailure",
    "default_grid",
    "simulate",
    "simulate_ensemble",
    "simulate_euclidean",
    "initial_conditions",
    "trivial_projector",
    "estimate_centering",
    "instrumented_trajectory",
    "lap_and_tower_checks",
    "path_process",
]

REORTHO_EVERY = 1024
STATUS_OK, STATUS_NAN, STATUS_CAP = 0, 1, 2


class GridMismatch(ValueError):
    pass


class CenteringDriftWarning(UserWarning):
    pass


class TrajectoryFailure(RuntimeError):
    pass


def default_grid(lo_exp: float = 3.0, hi_exp: float = 6.0, step: float = 0.5) -> np.ndarray:
    e = np.arange(lo_exp, hi_exp + 1e-9, step)
    return np.unique(np.round(10.0 ** e).astype(np.int64))


@dataclass
class PathEnsemble:
    """Per-trajectory records of one Monte Carlo run.

    phi       (T, G, d) Birkhoff sums at the grid times
    laps      (T, G) number of visits to Y at times 1..n
    path      (T, P, d) Birkhoff sums at k = 0, s, 2s, ... <= path_n
    path_max  (T, d) coordinatewise max of phi_k over k <= path_n
    status    0 ok, 1 NaN guard, 2 excursion longer than max_return
    """

    grid: np.ndarray
    phi: np.ndarray
    laps: np.ndarray
    path: np.ndarray
    path_max: np.ndarray
    path_n: int
    path_stride: int
    status: np.ndarray
    seed: int
    stream_ids: np.ndarray
    x0: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.phi.shape[0]

    @property
    def dim(self) -> int:
        return self.phi.shape[2]

    def index(self, n: int) -> int:
        hit = np.flatnonzero(self.grid == n)
        if hit.size == 0:
            raise GridMismatch(f"n={n} is not on the ensemble grid")
        return int(hit[0])

    def at(self, n: int, valid_only: bool = True) -> np.ndarray:
        out = self.phi[:, self.index(n), :]
        if valid_only:
            out = out[self.status == STATUS_OK]
        return out

    def failures(self) -> dict:
        bad = np.flatnonzero(self.status != STATUS_OK)
        return {int(self.stream_ids[i]): int(self.status[i]) for i in bad}


@njit(cache=True, nogil=True)
def _ensemble_kernel(x0s, g0s, keys, gamma, coef, dither,
                     s0, s1, eta, gkind, const_h, h0,
                     okind, v0, u, oeta, tx, tv, off,
                     grid, path_n, stride, cap,
                     phi_out, laps_out, path_out, pmax_out, status_out):
    n_traj = x0s.shape[0]
    d = v0.shape[0]
    ng = grid.shape[0]
    n_end = grid[ng - 1]
    if path_n > n_end:
        n_end = path_n
    g = np.empty((d, d))
    h = np.empty((d, d))
    work = np.empty((4, d, d))
    tmp = np.empty((d, d))
    vb = np.empty(d)
    s = np.empty(d)
    comp = np.empty(d)
    for t in range(n_traj):
        x = x0s[t]
        g[:, :] = g0s[t]
        for i in range(d):
            s[i] = 0.0
            comp[i] = 0.0
            pmax_out[t, i] = 0.0
        key = keys[t]
        word = np.uint64(0)
        bitpos = 64
        ctr = np.uint64(0)
        gp = 0
        pp = 0
        if path_n >= 0 and path_out.shape[1] > 0:
            for i in range(d):
                path_out[t, 0, i] = 0.0
            pp = 1
        laps = 0
        exc = 0
        status = 0
        for k in range(1, n_end + 1):
            obs_into(x, okind, v0, u, oeta, tx, tv, off, vb)
            finite = True
            for i in range(d):
                if gkind == 0:
                    acc = vb[i]
                else:
                    acc = 0.0
                    for j in range(d):
                        acc += g[i, j] * vb[j]
                yk = acc - comp[i]
                tt = s[i] + yk
                comp[i] = (tt - s[i]) - yk
                s[i] = tt
                if not math.isfinite(tt):
                    finite = False
            if gkind != 0:
                if const_h:
                    matmul_into(g, h0, tmp)
                else:
                    cocycle_into(x, s0, s1, eta, gkind, work, h)
                    matmul_into(g, h, tmp)
                g[:, :] = tmp
                if k % 1024 == 0:
                    reorthonormalize(g)
            x = lsv_step(x, gamma, coef)
            if dither:
                if bitpos == 64:
                    word = splitmix64(key, ctr)
                    ctr += np.uint64(1)
                    bitpos = 0
                bit = (word >> np.uint64(bitpos)) & np.uint64(1)
                bitpos += 1
                if bit:
                    if x < 1.0:
                        x = x + 1.1102230246251565e-16
                    else:
                        x = x - 1.1102230246251565e-16
            if not finite or not math.isfinite(x):
                status = 1
                break
            if x >= 0.5:
                laps += 1
                exc = 0
            else:
                exc += 1
                if exc > cap:
                    status = 2
                    break
            while gp < ng and grid[gp] == k:
                for i in range(d):
                    phi_out[t, gp, i] = s[i]
                laps_out[t, gp] = laps
                gp += 1
            if k <= path_n:
                for i in range(d):
                    if s[i] > pmax_out[t, i]:
                        pmax_out[t, i] = s[i]
                if k % stride == 0:
                    for i in range(d):
                        path_out[t, pp, i] = s[i]
                    pp += 1
        if status != 0:
            while gp < ng:
                for i in range(d):
                    phi_out[t, gp, i] = math.nan
                laps_out[t, gp] = -1
                gp += 1
        status_out[t] = status


def trivial_projector(cocycle: CocycleSpec, tol: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the vectors fixed by every ``h(x)``.

    This is the common kernel of ``S0`` and ``S1``; for the trivial kind it
    is the identity. A nonzero projector means the action has a trivial
    component and the observable needs centering there.
    """
    d = cocycle.dim
    if cocycle.group_kind == "trivial":
        return np.eye(d)
    stack = np.vstack([cocycle.base_generator, cocycle.modulation_generator])
    _, sv, vt = np.linalg.svd(stack)
    sv = np.concatenate([sv, np.zeros(d - sv.size)])
    null = vt[sv <= tol * max(1.0, sv.max() if sv.size else 1.0)]
    return null.T @ null


def initial_conditions(seed: int, ids, start: str, g0_mode: str, cocycle: CocycleSpec):
    """Initial points, fibre elements and refresh keys from per-trajectory streams."""
    if start not in ("lebesgue", "Y-uniform"):
        raise ValueError(f"start must be 'lebesgue' or 'Y-uniform', got {start!r}")
    if g0_mode not in ("identity", "haar"):
        raise ValueError(f"g0 must be 'identity' or 'haar', got {g0_mode!r}")
    ids = np.asarray(ids, dtype=np.int64)
    d = cocycle.dim
    x0 = np.empty(ids.size)
    keys = np.empty(ids.size, dtype=np.uint64)
    g0 = np.empty((ids.size, d, d))
    eye = np.eye(d)
    for t, i in enumerate(ids):
        g = _rng.stream(seed, int(i))
        u = _rng.open_unit(g)
        x0[t] = u if start == "lebesgue" else 0.5 + 0.5 * u
        keys[t] = g.integers(0, 2 ** 64, dtype=np.uint64)
        g0[t] = haar_sample(cocycle.group_kind, d, g).matrix if g0_mode == "haar" else eye
    return x0, g0, keys


def _run_chunks(fn, n, threads, chunk=None):
    threads = max(1, int(threads))
    if chunk is None:
        chunk = max(1, min(256, -(-n // (4 * threads))))
    spans = [(a, min(n, a + chunk)) for a in range(0, n, chunk)]
    if threads == 1:
        for a, b in spans:
            fn(a, b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda ab: fn(*ab), spans))


def simulate(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec, grid,
             samples: int, seed: int, *, start: str = "lebesgue", g0: str = "identity",
             path_n: int = 0, path_stride: int = 1, threads: int = 1, first_id: int = 0,
             dither=None, x0s=None, g0s=None, keys=None, strict: bool = False,
             meta=None) -> PathEnsemble:
    """Simulate ``samples`` trajectories and record ``phi_n`` on ``grid``.

    Parameters
    ----------
    grid : increasing positive integers
    path_n, path_stride
        Record ``phi_k`` at ``k = 0, s, 2s, ... <= path_n`` and the running
        coordinatewise maximum up to ``path_n``.
    dither
        Low-bit refresh (see module docstring); defaults to ``gamma == 0``.
    x0s, g0s, keys
        Override the stream-drawn initial data (same length as ``samples``).
    strict
        Raise :class:`TrajectoryFailure` instead of flagging failed trajectories.
    """
    if seed is None:
        raise ValueError("a seed is required")
    if cocycle.dim != observable.dim:
        raise ValueError("cocycle and observable dimensions differ")
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 1) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be a nonempty increasing sequence of positive integers")
    if path_stride < 1 or path_n < 0:
        raise ValueError("path_n >= 0 and path_stride >= 1 required")
    ids = np.arange(first_id, first_id + samples, dtype=np.int64)
    dx0, dg0, dkeys = initial_conditions(seed, ids, start, g0, cocycle)
    x0s = dx0 if x0s is None else np.ascontiguousarray(x0s, dtype=np.float64)
    g0s = dg0 if g0s is None else np.ascontiguousarray(g0s, dtype=np.float64)
    keys = dkeys if keys is None else np.ascontiguousarray(keys, dtype=np.uint64)
    if dither is None:
        dither = params.gamma == 0.0
    d = observable.dim
    n_path = path_n // path_stride + 1 if path_n > 0 else 0
    phi = np.empty((samples, grid.size, d))
    laps = np.empty((samples, grid.size), dtype=np.int64)
    path = np.empty((samples, n_path, d))
    pmax = np.empty((samples, d))
    status = np.empty(samples, dtype=np.int8)
    s0, s1, eta, gkind = _cocycle_args(cocycle)
    const_h = cocycle.is_constant
    h0 = np.ascontiguousarray(cocycle.h0().matrix)
    oargs = observable.kernel_args()

    def work(a, b):
        _ensemble_kernel(x0s[a:b], g0s[a:b], keys[a:b], params.gamma, params.coef, bool(dither),
                         s0, s1, eta, gkind, const_h, h0, *oargs,
                         grid, int(path_n), int(path_stride), int(params.max_return),
                         phi[a:b], laps[a:b], path[a:b], pmax[a:b], status[a:b])

    _run_chunks(work, samples, threads)
    ens = PathEnsemble(grid=grid, phi=phi, laps=laps, path=path, path_max=pmax,
                       path_n=int(path_n), path_stride=int(path_stride), status=status,
                       seed=int(seed), stream_ids=ids, x0=x0s, meta=dict(meta or {}))
    ens.meta.update({"gamma": params.gamma, "group_kind": cocycle.group_kind,
                     "observable_kind": observable.kind, "dither": bool(dither),
                     "samples": int(samples), "start": start, "g0": g0})
    fails = ens.failures()
    if fails:
        ens.meta["failures"] = fails
        if strict:
            tid, st = next(iter(fails.items()))
            what = "NaN guard" if st == STATUS_NAN else f"excursion cap {params.max_return}"
            raise TrajectoryFailure(f"trajectory {tid} aborted ({what})")
    return ens


def simulate_ensemble(config) -> PathEnsemble:
    """Run the ensemble described by an :class:`~lsvgroup.config.ExperimentConfig`."""
    params = config.map_params()
    cocycle = config.cocycle_spec()
    obs, info = config.observable_spec(with_info=True)
    sim = config.simulation
    ens = simulate(params, cocycle, obs, sim.grid, sim.samples, sim.seed, start=sim.start,
                   g0=sim.g0, path_n=sim.path_n, path_stride=sim.path_stride,
                   threads=sim.threads, meta={"config_hash": config.config_hash()})
    ens.meta["observable"] = info
    return ens


# --- Euclidean extension -------------------------------------------------------------

@njit(cache=True, nogil=True)
def _euclid_kernel(x0s, g0s, gamma, coef, s0, s1, eta, gkind,
                   okind, v0, u, oeta, tx, tv, off, n, p_out):
    """Iterate ``(x, g, p) -> (f x, g h(x), p + g v(x))`` on ``G x| R^d``."""
    d = v0.shape[0]
    g = np.empty((d, d))
    h = np.empty((d, d))
    work = np.empty((4, d, d))
    tmp = np.empty((d, d))
    vb = np.empty(d)
    p = np.empty(d)
    comp = np.empty(d)
    for t in range(x0s.shape[0]):
        x = x0s[t]
        g[:, :] = g0s[t]
        for i in range(d):
            p[i] = 0.0
            comp[i] = 0.0
        for k in range(1, n + 1):
            # semidirect product (g, p) * (h, v) = (g h, p + g v)
            obs_into(x, okind, v0, u, oeta, tx, tv, off, vb)
            for i in range(d):
                if gkind == 0:
                    acc = vb[i]
                else:
                    acc = 0.0
                    for j in range(d):
                        acc += g[i, j] * vb[j]
                yk = acc - comp[i]
                tt = p[i] + yk
                comp[i] = (tt - p[i]) - yk
                p[i] = tt
            if gkind != 0:
                cocycle_into(x, s0, s1, eta, gkind, work, h)
                matmul_into(g, h, tmp)
                g[:, :] = tmp
                if k % 1024 == 0:
                    reorthonormalize(g)
            x = lsv_step(x, gamma, coef)
        p_out[t, :] = p


def simulate_euclidean(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec,
                       x0s, g0s, n: int) -> np.ndarray:
    """Translation part ``p_n`` of the Euclidean-type extension (plain map, no refresh)."""
    x0s = np.ascontiguousarray(x0s, dtype=np.float64)
    g0s = np.ascontiguousarray(g0s, dtype=np.float64)
    out = np.empty((x0s.size, observable.dim))
    _euclid_kernel(x0s, g0s, params.gamma, params.coef, *_cocycle_args(cocycle),
                   *observable.kernel_args(), int(n), out)
    return out


# --- centering -------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _orbit_mean_kernel(x0, key, burn, n, gamma, coef, dither,
                       okind, v0, u, oeta, tx, tv, off):
    d = v0.shape[0]
    vb = np.empty(d)
    sums = np.zeros((2, d))
    comp = np.zeros((2, d))
    x = x0
    word = np.uint64(0)
    bitpos = 64
    ctr = np.uint64(0)
    half = n // 2
    for k in range(burn + n):
        if k >= burn:
            obs_into(x, okind, v0, u, oeta, tx, tv, off, vb)
            h = 0 if k - burn < half else 1
            for i in range(d):
                yk = vb[i] - comp[h, i]
                tt = sums[h, i] + yk
                comp[h, i] = (tt - sums[h, i]) - yk
                sums[h, i] = tt
        x = lsv_step(x, gamma, coef)
        if dither:
            if bitpos == 64:
                word = splitmix64(key, ctr)
                ctr += np.uint64(1)
                bitpos = 0
            bit = (word >> np.uint64(bitpos)) & np.uint64(1)
            bitpos += 1
            if bit:
                if x < 1.0:
                    x = x + 1.1102230246251565e-16
                else:
                    x = x - 1.1102230246251565e-16
    out = np.empty((2, d))
    for i in range(d):
        out[0, i] = sums[0, i] / half
        out[1, i] = sums[1, i] / (n - half)
    return out


def estimate_centering(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec,
                       n_c: int, seed: int, *, burn_in: int = 100_000, tol: float = 1e-2,
                       stream_id: int = 2 ** 62, force: bool = False):
    """Time average of ``v`` along one long orbit, projected on the trivial component.

    Returns ``(offset, info)``. The offset is zero (and no orbit is run) when
    the action has no trivial component, unless ``force`` is set. A
    :class:`CenteringDriftWarning` is emitted when the two half-orbit means
    differ by more than ``tol``; in the anomalous regime this is expected.
    """
    proj = trivial_projector(cocycle)
    d = observable.dim
    if not force and not np.any(proj):
        return np.zeros(d), {"skipped": True, "reason": "fixed-point free action"}
    raw = ObservableSpec(observable.kind, observable.v0, observable.direction,
                         observable.holder_exponent, observable.table_x, observable.table_v)
    g = _rng.stream(seed, stream_id)
    x0 = _rng.open_unit(g)
    key = g.integers(0, 2 ** 64, dtype=np.uint64)
    halves = _orbit_mean_kernel(x0, key, int(burn_in), int(n_c), params.gamma, params.coef,
                                params.gamma == 0.0, *raw.kernel_args())
    mean = 0.5 * (halves[0] + halves[1]) if n_c % 2 == 0 else (
        (halves[0] * (n_c // 2) + halves[1] * (n_c - n_c // 2)) / n_c)
    drift = float(np.max(np.abs(halves[0] - halves[1])))
    info = {"skipped": False, "n_c": int(n_c), "burn_in": int(burn_in), "mean": mean.tolist(),
            "half_means": halves.tolist(), "drift": drift, "tol": tol}
    if drift > tol:
        info["warning"] = "half-orbit means differ beyond tolerance"
        warnings.warn(f"centering drift {drift:.3g} exceeds {tol:.3g}", CenteringDriftWarning,
                      stacklevel=2)
    return proj @ mean, info


# --- instrumented trajectories ------------------------------------------------------------

@njit(cache=True, nogil=True)
def _instrumented_kernel(y0, g0, n, gamma, coef, s0, s1, eta, gkind,
                         okind, v0, u, oeta, tx, tv, off,
                         xs, phis, absmass, ret_idx, g_ret, psi):
    """Full record of one trajectory started on Y.

    ``ret_idx`` lists the visit times to Y (starting with 0), ``g_ret`` the
    fibre element at each visit and ``psi`` the running excursion maximum
    ``max |phi_k - phi_{t_j}|`` over ``t_j <= k < t_{j+1}``.
    Returns the number of visits recorded.
    """
    d = v0.shape[0]
    g = g0.copy()
    h = np.empty((d, d))
    work = np.empty((4, d, d))
    tmp = np.empty((d, d))
    vb = np.empty(d)
    s = np.zeros(d)
    comp = np.zeros(d)
    base = np.zeros(d)
    x = y0
    mass = 0.0
    nret = 1
    ret_idx[0] = 0
    g_ret[0] = g
    psi[0] = 0.0
    xs[0] = x
    for i in range(d):
        phis[0, i] = 0.0
    absmass[0] = 0.0
    for k in range(1, n + 1):
        obs_into(x, okind, v0, u, oeta, tx, tv, off, vb)
        for i in range(d):
            if gkind == 0:
                acc = vb[i]
            else:
                acc = 0.0
                for j in range(d):
                    acc += g[i, j] * vb[j]
            mass += abs(acc)
            yk = acc - comp[i]
            tt = s[i] + yk
            comp[i] = (tt - s[i]) - yk
            s[i] = tt
        if gkind != 0:
            cocycle_into(x, s0, s1, eta, gkind, work, h)
            matmul_into(g, h, tmp)
            g[:, :] = tmp
            if k % 1024 == 0:
                reorthonormalize(g)
        x = lsv_step(x, gamma, coef)
        xs[k] = x
        absmass[k] = mass
        for i in range(d):
            phis[k, i] = s[i]
        if x >= 0.5:
            ret_idx[nret] = k
            g_ret[nret] = g
            psi[nret] = 0.0
            for i in range(d):
                base[i] = s[i]
            nret += 1
        else:
            nrm = 0.0
            for i in range(d):
                dd = s[i] - base[i]
                nrm += dd * dd
            nrm = math.sqrt(nrm)
            if nrm > psi[nret - 1]:
                psi[nret - 1] = nrm
    return nret


@dataclass
class InstrumentedTrajectory:
    y0: float
    n: int
    xs: np.ndarray
    phi: np.ndarray
    abs_mass: np.ndarray
    returns: np.ndarray
    g_at_returns: np.ndarray
    psi: np.ndarray


def instrumented_trajectory(params: MapParams, cocycle: CocycleSpec, observable: ObservableSpec,
                            n: int, seed: int, traj_id: int = 0, g0=None) -> InstrumentedTrajectory:
    """Trajectory of ``n`` steps from a uniform start on Y with full return bookkeeping."""
    g = _rng.stream(seed, traj_id)
    y0 = 0.5 + 0.5 * _rng.open_unit(g)
    d = observable.dim
    g0 = np.eye(d) if g0 is None else np.ascontiguousarray(g0, dtype=np.float64)
    xs = np.empty(n + 1)
    phis = np.empty((n + 1, d))
    mass = np.empty(n + 1)
    ret = np.empty(n + 1, dtype=np.int64)
    gret = np.empty((n + 1, d, d))
    psi = np.empty(n + 1)
    nret = _instrumented_kernel(y0, g0, int(n), params.gamma, params.coef,
                                *_cocycle_args(cocycle), *observable.kernel_args(),
                                xs, phis, mass, ret, gret, psi)
    return InstrumentedTrajectory(y0=y0, n=int(n), xs=xs, phi=phis, abs_mass=mass,
                                  returns=ret[:nret].copy(), g_at_returns=gret[:nret].copy(),
                                  psi=psi[:nret].copy())


@njit(cache=True, nogil=True)
def _excursion_sums_kernel(xs, starts, stops, g_ret, gamma, coef, s0, s1, eta, gkind,
                           okind, v0, u, oeta, tx, tv, off, out):
    """``out[k] = R_k``: the partial sum from the last visit ``t_j <= k`` up to ``k``,
    recomputed by iterating the map afresh from ``y_j = xs[t_j]``."""
    d = v0.shape[0]
    h = np.empty((d, d))
    work = np.empty((4, d, d))
    tmp = np.empty((d, d))
    g = np.empty((d, d))
    vb = np.empty(d)
    s = np.empty(d)
    comp = np.empty(d)
    for j in range(starts.shape[0]):
        a = starts[j]
        b = stops[j]
        x = xs[a]
        g[:, :] = g_ret[j]
        for i in range(d):
            s[i] = 0.0
            comp[i] = 0.0
            out[a, i] = 0.0
        for k in range(a + 1, b + 1):
            obs_into(x, okind, v0, u, oeta, tx, tv, off, vb)
            for i in range(d):
                if gkind == 0:
                    acc = vb[i]
                else:
                    acc = 0.0
                    for q in range(d):
                        acc += g[i, q] * vb[q]
                yk = acc - comp[i]
                tt = s[i] + yk
                comp[i] = (tt - s[i]) - yk
                s[i] = tt
            if gkind != 0:
                cocycle_into(x, s0, s1, eta, gkind, work, h)
                matmul_into(g, h, tmp)
                g[:, :] = tmp
                if (k - a) % 1024 == 0:
                    reorthonormalize(g)
            x = lsv_step(x, gamma, coef)
            if k < b:
                for i in range(d):
                    out[k, i] = s[i]


def lap_and_tower_checks(traj: InstrumentedTrajectory, params: MapParams, cocycle: CocycleSpec,
                         observable: ObservableSpec, r_bar: float, grid=None,
                         rel_tol: float = 1e-8, lap_tol: float = 0.01) -> dict:
    """Decomposition identities and the excursion bound along one trajectory.

    (1) ``phi_{t_n} = Phi_n`` with ``Phi_n = sum_{j<n} g_{t_j} V(y_j)`` from
        :func:`~lsvgroup.inducing.induced_batch`;
    (2) ``phi_k - Phi_{N_k} - R_k = 0`` with ``R_k`` recomputed over the
        unfinished excursion;
    (3) ``max_{k<=n} |phi_k - phi_{t_{N_k}}| <= max_{j<=n} Psi_j`` at each grid
        ``n`` (both sides scaled by ``n^{-1/2}``);
    (4) ``|N_K/K - 1/r_bar| < lap_tol``.

    Errors are relative to ``max(1, sum_{j<k} |g_j v(x_j)|)``, which bounds
    the size of every partial sum. The Psi values recorded in the kernel are
    compared with a recomputation from the stored sums.
    """
    K = traj.n
    t = traj.returns
    phi = traj.phi
    scale = np.maximum(1.0, traj.abs_mass)
    complete = t[1:]  # visit times after the start
    nvis = t.size
    # induced values at every visit with a completed excursion
    ys = traj.xs[t[:-1]]
    rs, _, Vs, _ = induced_batch(params, cocycle, observable, ys)
    if np.any(rs != np.diff(t)):
        j = int(np.argmax(rs != np.diff(t)))
        raise AssertionError(f"induced return time disagrees with the orbit at visit {j}")
    terms = np.einsum("jab,jb->ja", traj.g_at_returns[:-1], Vs)
    Phi = np.vstack([np.zeros((1, phi.shape[1])), np.cumsum(terms, axis=0)])
    err1 = np.linalg.norm(phi[t] - Phi, axis=1) / scale[t]
    bad1 = np.flatnonzero(err1 > rel_tol)
    # lap numbers N_k = #{j >= 1 : t_j <= k}
    N = np.searchsorted(complete, np.arange(K + 1), side="right")
    R = np.empty_like(phi)
    # the unfinished last excursion runs through K
    stops = np.append(t[1:], K + 1)
    _excursion_sums_kernel(traj.xs, t, stops, traj.g_at_returns, params.gamma, params.coef,
                           *_cocycle_args(cocycle), *observable.kernel_args(), R)
    err2 = np.linalg.norm(phi - Phi[N] - R, axis=1) / scale
    bad2 = np.flatnonzero(err2 > rel_tol)
    # excursion maxima from the stored record
    psi_brute = np.empty(nvis)
    for j in range(nvis):
        a = t[j]
        b = t[j + 1] if j + 1 < nvis else K + 1
        seg = phi[a:b] - phi[a]
        psi_brute[j] = np.sqrt(np.sum(seg * seg, axis=1)).max()
    psi_exact = bool(np.array_equal(psi_brute, traj.psi))
    # pathwise bound at the grid points
    if grid is None:
        grid = np.unique(np.round(np.geomspace(10, K, 20)).astype(np.int64))
    grid = np.asarray([g for g in grid if g <= K], dtype=np.int64)
    dev = phi - phi[t[N]]
    dev_norm = np.sqrt(np.sum(dev * dev, axis=1))
    run_dev = np.maximum.accumulate(dev_norm)
    run_psi = np.maximum.accumulate(traj.psi)
    lhs = run_dev[grid] / np.sqrt(grid)
    # indices j <= n are all visits with t_j <= n plus the excursion containing n
    rhs = run_psi[np.minimum(N[grid], nvis - 1)] / np.sqrt(grid)
    slack = rhs - lhs
    # same bound with U_n built from the induced sums
    dev_ind = np.linalg.norm(phi - Phi[N], axis=1)
    lhs_ind = np.maximum.accumulate(dev_ind)[grid] / np.sqrt(grid)
    lap = float(N[K] / K)
    rep = {
        "n_steps": int(K), "visits": int(nvis),
        "identity_phi_Phi_max_rel_err": float(err1.max()),
        "identity_phi_Phi_ok": bad1.size == 0,
        "identity_phi_Phi_first_violation": int(t[bad1[0]]) if bad1.size else None,
        "decomposition_max_rel_err": float(err2.max()),
        "decomposition_ok": bad2.size == 0,
        "decomposition_first_violation": int(bad2[0]) if bad2.size else None,
        "psi_bookkeeping_exact": psi_exact,
        "grid": grid, "bound_lhs": lhs, "bound_rhs": rhs, "bound_slack": slack,
        "bound_ok": bool(np.all(slack >= 0)),
        "bound_first_violation": int(grid[np.argmax(slack < 0)]) if np.any(slack < 0) else None,
        "bound_slack_induced_min": float(np.min(rhs - lhs_ind)),
        "lap_ratio": lap, "inverse_r_bar": 1.0 / r_bar,
        "lap_error": abs(lap - 1.0 / r_bar), "lap_ok": abs(lap - 1.0 / r_bar) < lap_tol,
    }
    rep["ok"] = bool(rep["identity_phi_Phi_ok"] and rep["decomposition_ok"] and psi_exact
                     and rep["bound_ok"])
    return rep


# --- path process ------------------------------------------------------------------------------

@dataclass
class PathProcess:
    """``W_n(t) = n^{-1/2} phi_{nt}`` at the recorded knots, linear in between."""

    n: int
    T: float
    t: np.ndarray          # knot times k / n
    values: np.ndarray     # (T_traj, knots, d)

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        if np.any(s < 0) or np.any(s > self.T + 1e-15):
            raise GridMismatch("evaluation time outside [0, T]")
        out = np.empty((self.values.shape[0], s.size, self.values.shape[2]))
        for i in range(self.values.shape[2]):
            for j in range(self.values.shape[0]):
                out[j, :, i] = np.interp(s, self.t, self.values[j, :, i])
        return out

    def sup(self) -> np.ndarray:
        """``sup_t W_n(t)`` per trajectory and coordinate (a maximum over knots)."""
        return self.values.max(axis=1)


def path_process(ens: PathEnsemble, n: int, T: float = 1.0) -> PathProcess:
    """Piecewise-linear rescaled path on ``[0, T]`` from the intra-grid records."""
    kmax = int(math.floor(n * T + 1e-9))
    if ens.path_n < kmax or ens.path.shape[1] == 0:
        raise GridMismatch(f"paths recorded up to {ens.path_n}, need {kmax}")
    if ens.path_stride != 1 and n % ens.path_stride:
        raise GridMismatch("path stride does not divide n")
    last = kmax // ens.path_stride
    ks = np.arange(last + 1) * ens.path_stride
    vals = ens.path[:, :last + 1, :] / math.sqrt(n)
    return PathProcess(n=int(n), T=float(T), t=ks / n, values=vals)
