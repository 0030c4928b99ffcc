"""Estimators and checks that turn ensembles into verdicts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf
from scipy.stats import chi2

__all__ = [
    "StatsReport",
    "InsufficientSamples",
    "DegenerateVariance",
    "estimate_covariance",
    "equivariance_defect",
    "isotropy_defect",
    "ks_normal",
    "diffusion_exponent",
    "stable_index",
    "log_normalization_probe",
    "normal_cdf",
]


class InsufficientSamples(ValueError):
    pass


class DegenerateVariance(ValueError):
    pass


@dataclass
class StatsReport:
    sigma_hat: np.ndarray
    n: int
    n_samples: int
    equivariance_defect: float = float("nan")
    isotropy_defect: float = float("nan")
    ks_statistic: list = field(default_factory=list)
    diffusion_exponent: tuple = None
    stable_index: dict = None
    min_eigenvalue: float = float("nan")
    grid: list = None

    def to_dict(self) -> dict:
        return {
            "sigma_hat": np.asarray(self.sigma_hat).tolist(),
            "n": int(self.n), "n_samples": int(self.n_samples),
            "equivariance_defect": self.equivariance_defect,
            "isotropy_defect": self.isotropy_defect,
            "ks_statistic": list(self.ks_statistic),
            "diffusion_exponent": None if self.diffusion_exponent is None
            else list(self.diffusion_exponent),
            "stable_index": self.stable_index,
            "min_eigenvalue": self.min_eigenvalue,
            "grid": self.grid,
        }


def _samples_at(source, n):
    if hasattr(source, "at"):
        return np.asarray(source.at(n), dtype=np.float64)
    x = np.asarray(source, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def estimate_covariance(source, n: int, min_samples: int = 100) -> np.ndarray:
    """``(1/n)`` times the sample mean of ``phi_n phi_n^T``, symmetrised.

    ``source`` is a :class:`~lsvgroup.ensemble.PathEnsemble` (read at grid
    point ``n``) or an array of samples of ``phi_n``.
    """
    x = _samples_at(source, n)
    if x.shape[0] < min_samples:
        raise InsufficientSamples(f"need >= {min_samples} samples, got {x.shape[0]}")
    s = (x.T @ x) / (x.shape[0] * n)
    return 0.5 * (s + s.T)


def equivariance_defect(sigma, group_samples, generators=None, with_flag: bool = False):
    """``max ||g S - S g||_F / ||S||_F`` over group samples.

    Generators ``A`` (skew matrices) enter as ``||A S - S A||_F / (||A||_F ||S||_F)``.
    A zero ``sigma`` gives 0; ``with_flag`` also returns whether that guard fired.
    """
    s = np.asarray(sigma, dtype=np.float64)
    nrm = np.linalg.norm(s)
    if nrm == 0.0:
        return (0.0, True) if with_flag else 0.0
    best = 0.0
    for g in group_samples:
        g = getattr(g, "matrix", g)
        best = max(best, float(np.linalg.norm(g @ s - s @ g) / nrm))
    for a in generators or ():
        an = np.linalg.norm(a)
        if an > 0:
            best = max(best, float(np.linalg.norm(a @ s - s @ a) / (an * nrm)))
    return (best, False) if with_flag else best


def isotropy_defect(sigma) -> float:
    """``||S - (tr S / d) I||_F / ||S||_F``."""
    s = np.asarray(sigma, dtype=np.float64)
    nrm = np.linalg.norm(s)
    if nrm == 0.0:
        return 0.0
    d = s.shape[0]
    return float(np.linalg.norm(s - np.trace(s) / d * np.eye(d)) / nrm)


def normal_cdf(x):
    return 0.5 * (1.0 + erf(np.asarray(x) / math.sqrt(2.0)))


def ks_normal(samples, direction=None, standardize: bool = True, min_samples: int = 1000) -> float:
    """One-sample Kolmogorov-Smirnov distance to the standard normal law.

    Multivariate samples are projected on ``direction`` (unit-normalised).
    With ``standardize`` the projections are centred and scaled by their
    sample mean and standard deviation; zero spread then raises
    :class:`DegenerateVariance`.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        if direction is None:
            if x.shape[1] != 1:
                raise ValueError("direction required for multivariate samples")
            x = x[:, 0]
        else:
            u = np.asarray(direction, dtype=np.float64)
            x = x @ (u / np.linalg.norm(u))
    if x.size < min_samples:
        raise InsufficientSamples(f"need >= {min_samples} samples, got {x.size}")
    if standardize:
        sd = x.std()
        if not sd > 0:
            raise DegenerateVariance("projected samples have zero variance")
        x = (x - x.mean()) / sd
    x = np.sort(x)
    n = x.size
    cdf = normal_cdf(x)
    hi = np.arange(1, n + 1) / n - cdf
    lo = cdf - np.arange(0, n) / n
    return float(min(1.0, max(hi.max(), lo.max(), 0.0)))


def _norms(x):
    x = np.asarray(x, dtype=np.float64)
    return np.abs(x) if x.ndim == 1 else np.linalg.norm(x, axis=1)


def _grid_and_samples(source, ns=None):
    if hasattr(source, "grid"):
        ns = source.grid if ns is None else np.asarray(ns)
        return np.asarray(ns, dtype=np.int64), [source.at(int(n)) for n in ns]
    if ns is None:
        raise ValueError("n values required with raw samples")
    return np.asarray(ns, dtype=np.int64), list(source)


def diffusion_exponent(source, ns=None, window=None, min_decades: float = 3.0):
    """Slope and standard error of ``log median |phi_n|`` against ``log n``.

    ``source`` is an ensemble (its grid is used, optionally restricted to
    ``window``) or a sequence of sample arrays aligned with ``ns``.
    """
    ns, samples = _grid_and_samples(source, ns)
    if window is not None:
        keep = [(n, s) for n, s in zip(ns, samples) if window[0] <= n <= window[1]]
        ns = np.array([k[0] for k in keep], dtype=np.int64)
        samples = [k[1] for k in keep]
    if ns.size < 3 or math.log10(ns.max() / ns.min()) < min_decades - 1e-9:
        raise InsufficientSamples(f"need >= 3 grid points spanning {min_decades} decades")
    med = np.array([np.median(_norms(s)) for s in samples])
    if np.any(med <= 0):
        raise DegenerateVariance("zero median norm")
    lx, ly = np.log(ns.astype(np.float64)), np.log(med)
    a = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(a, ly, rcond=None)
    resid = ly - a @ coef
    dof = max(lx.size - 2, 1)
    cov = (resid @ resid / dof) * np.linalg.inv(a.T @ a)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


def stable_index(samples, fractions=(0.01, 0.05), n_cuts: int = 9, min_samples: int = 10_000,
                 boundary: float = 2.0) -> dict:
    """Hill estimate of the tail index of ``|phi_n|``.

    Hill estimates are computed for cut fractions spread over ``fractions``;
    ``alpha`` is their mean, ``band`` their range across the cuts and
    ``stderr`` is ``alpha / sqrt(k)`` at the middle cut. Values at or above
    ``boundary`` set ``at_boundary`` (light tails: the Gaussian domain).
    """
    r = _norms(samples)
    if r.size < min_samples:
        raise InsufficientSamples(f"need >= {min_samples} samples, got {r.size}")
    r = np.sort(r)[::-1]
    if r[0] <= 0:
        raise DegenerateVariance("all samples are zero")
    fr = np.linspace(fractions[0], fractions[1], n_cuts)
    est = []
    ks = []
    for f in fr:
        k = int(round(f * r.size))
        if k < 10 or r[k] <= 0:
            raise InsufficientSamples("too few positive order statistics in the tail")
        est.append(1.0 / np.mean(np.log(r[:k] / r[k])))
        ks.append(k)
    est = np.array(est)
    alpha = float(est.mean())
    kmid = ks[len(ks) // 2]
    return {"alpha": alpha, "stderr": alpha / math.sqrt(kmid),
            "band": [float(est.min()), float(est.max())], "fractions": fr.tolist(),
            "per_cut": est.tolist(), "n_samples": int(r.size),
            "at_boundary": bool(alpha >= boundary)}


def log_normalization_probe(source, ns=None) -> dict:
    """Regression of ``median(|phi_n|)^2 / n`` on ``log n``.

    A positive slope signals the ``(n log n)^{1/2}`` normalisation. If
    ``phi_n`` is centred Gaussian with covariance ``a n log n I_d`` the slope
    equals ``a`` times the median of chi-square(d), so ``coefficient`` recovers
    ``a``. Exploratory: nothing is asserted.
    """
    ns, samples = _grid_and_samples(source, ns)
    if ns.size < 3:
        raise InsufficientSamples("need >= 3 grid points")
    d = 1 if np.asarray(samples[0]).ndim == 1 else np.asarray(samples[0]).shape[1]
    y = np.array([np.median(_norms(s)) ** 2 / n for s, n in zip(samples, ns)])
    lx = np.log(ns.astype(np.float64))
    a = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    dof = max(lx.size - 2, 1)
    cov = (resid @ resid / dof) * np.linalg.inv(a.T @ a)
    slope = float(coef[0])
    return {"slope": slope, "stderr": float(math.sqrt(max(cov[0, 0], 0.0))),
            "intercept": float(coef[1]), "coefficient": slope / float(chi2.ppf(0.5, d)),
            "n": ns.tolist(), "normalized_median_sq": y.tolist()}
