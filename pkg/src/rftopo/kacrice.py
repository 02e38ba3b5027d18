"""Kac-Rice densities of critical points by Monte Carlo over the conditional Hessian law.

For a stationary unit-variance field the expected number of index-i critical
points with value <= u, per unit Lebesgue volume, is

    (2 pi)^(-n/2) sqrt(det Lambda) E[ |det H| 1{ind H = i} 1{f <= u} ]

where f ~ N(0, 1) and, given f, H ~ N(-f I, kappa - I (x) I) in coordinates
where the metric is the identity.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .covariance import Envelope, SpectralModel, conditional_hessian_law, sym_basis
from .theory import DomainSpec, lk_curvatures

__all__ = [
    "KacRiceEstimate",
    "NonmaxFraction",
    "critical_density_mc",
    "critical_density_asymptotic",
    "critical_total_asymptotic",
    "nonmax_fraction",
]

BATCH = 1 << 17


@dataclass(frozen=True)
class KacRiceEstimate:
    """Critical-point densities per unit volume below level u.

    ``density[i]`` and ``stderr[i]`` are per Morse index; ``asymptotic`` is
    the large-|u| total density (nan when u > -1).
    """

    u: float
    density: np.ndarray
    stderr: np.ndarray
    total: float
    total_stderr: float
    asymptotic: float
    envelope: Envelope
    n_samples: int


def _index(h):
    """Number of negative eigenvalues of a stack of symmetric matrices, and |det|."""
    n = h.shape[-1]
    if n == 1:
        return (h[..., 0, 0] < 0).astype(int), np.abs(h[..., 0, 0])
    if n == 2:
        det = h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] ** 2
        tr = h[..., 0, 0] + h[..., 1, 1]
        ind = np.where(det < 0, 1, np.where(tr < 0, 2, 0))
        return ind, np.abs(det)
    eig = np.linalg.eigvalsh(h)
    return (eig < 0).sum(axis=-1), np.abs(np.prod(eig, axis=-1))


def _batch_rngs(seed, n_samples):
    """Generators and sizes of fixed-size batches; independent of how they are consumed."""
    nb = max(1, math.ceil(n_samples / BATCH))
    ss = np.random.SeedSequence(int(seed))
    for b, child in enumerate(ss.spawn(nb)):
        size = min(BATCH, n_samples - b * BATCH)
        yield np.random.default_rng(child), size


class _Moments:
    """Running mean and co-moment matrix of the columns (Chan merge)."""

    def __init__(self, width):
        self.count = 0
        self.mean = np.zeros(width)
        self.comoment = np.zeros((width, width))

    def add(self, x):
        nb = len(x)
        if nb == 0:
            return
        mb = x.mean(axis=0)
        dev = x - mb
        cb = dev.T @ dev
        tot = self.count + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / tot
        self.comoment = self.comoment + cb + np.outer(delta, delta) * self.count * nb / tot
        self.count = tot

    def covariance(self):
        return self.comoment / max(self.count - 1, 1)

    def stderr(self):
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(np.diag(self.covariance()) / self.count)


def _weighted_draws(law, u_levels, rng, size):
    """Per level: Kac-Rice weights w |det H| and Morse indices, with common random numbers."""
    uniform = rng.random(size)
    pairs = len(law.covariance)
    z = rng.standard_normal((size, pairs))
    out = []
    for u in u_levels:
        mass = special.ndtr(u)
        if mass == 0.0:
            out.append((np.zeros(size), np.zeros(size, dtype=int)))
            continue
        # f from N(0,1) truncated to (-inf, u] by inverse CDF, weight P(f <= u)
        f = special.ndtri(uniform * mass) if np.isfinite(u) else special.ndtri(uniform)
        f = np.where(np.isfinite(f), f, 0.0)
        h = _hessians(law, f, z)
        ind, adet = _index(h)
        out.append((mass * adet, ind))
    return out


def _hessians(law, t, z):
    """Hessians -t I + Z with Z from the law's factorization of standard normals z."""
    n = law.dimension
    pairs, w = sym_basis(n)
    coords = z @ law.factor.T
    h = np.empty(t.shape + (n, n))
    for p, (k, l) in enumerate(pairs):
        h[..., k, l] = coords[..., p] / w[p]
        h[..., l, k] = h[..., k, l]
    idx = np.arange(n)
    h[..., idx, idx] -= t[:, None]
    return h


def critical_density_asymptotic(model: SpectralModel, u):
    """(2 pi)^-(n+1)/2 sqrt(det Lambda) |u|^(n-1) exp(-u^2/2), the large-|u| total density."""
    n = model.dimension
    u = np.asarray(u, dtype=float)
    return (2 * math.pi) ** (-(n + 1) / 2) * model.c_n * np.abs(u) ** (n - 1) * np.exp(-0.5 * u * u)


def critical_density_mc(model: SpectralModel, u=np.inf, index=None, n_samples=10**6, seed=0):
    """Monte-Carlo Kac-Rice density of critical points with value <= u.

    Parameters
    ----------
    model : SpectralModel
    u : float
        Level (sojourn convention); ``inf`` counts all critical points.
    index : int, optional
        Restrict the reported total to one Morse index.
    n_samples : int
    seed : int

    Returns
    -------
    KacRiceEstimate
    """
    est = _density_levels(model, [u], n_samples, seed)[0]
    if index is None:
        return est
    if not 0 <= index <= model.dimension:
        raise ValueError("index out of range")
    return KacRiceEstimate(
        est.u, est.density, est.stderr, float(est.density[index]), float(est.stderr[index]),
        est.asymptotic, est.envelope, est.n_samples,
    )


def _density_levels(model, u_levels, n_samples, seed):
    law = conditional_hessian_law(model)
    n = model.dimension
    scale = (2 * math.pi) ** (-n / 2) * model.c_n
    acc = [_Moments(n + 2) for _ in u_levels]
    for rng, size in _batch_rngs(seed, n_samples):
        for a, (wdet, ind) in zip(acc, _weighted_draws(law, u_levels, rng, size)):
            cols = np.zeros((size, n + 2))
            cols[np.arange(size), ind] = wdet
            cols[:, n + 1] = wdet
            a.add(cols)
    out = []
    for u, a in zip(u_levels, acc):
        mean, se = scale * a.mean, scale * a.stderr()
        asym = float(critical_density_asymptotic(model, u)) if -np.inf < u <= -1 else math.nan
        out.append(
            KacRiceEstimate(float(u), mean[: n + 1], se[: n + 1], float(mean[n + 1]),
                            float(se[n + 1]), asym, law.envelope, n_samples)
        )
    return out


def critical_total_asymptotic(model: SpectralModel, domain: DomainSpec, u):
    """(2 pi)^-(n+1)/2 vol_g(M) |u|^(n-1) exp(-u^2/2), expected critical points below u.

    Valid as u -> -inf; requires u <= -1.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u > -1):
        raise ValueError("the critical-point asymptotic needs u <= -1")
    if domain.n != model.dimension:
        raise ValueError("domain and model dimensions differ")
    n = domain.n
    vol_g = lk_curvatures(domain, model.second_moment)[n]
    return (2 * math.pi) ** (-(n + 1) / 2) * vol_g * np.abs(u) ** (n - 1) * np.exp(-0.5 * u * u)


@dataclass(frozen=True)
class NonmaxFraction:
    """Fractions (C - C_0)/C of critical points below u that are not minima.

    ``slope`` is the weighted least-squares slope of log(fraction) against
    u^2 over the finite levels; ``rate`` is the envelope's -theta/2.
    """

    u: np.ndarray
    fraction: np.ndarray
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    rate: float

    def rows(self):
        return list(zip(self.u.tolist(), self.fraction.tolist(), self.stderr.tolist()))


def nonmax_fraction(model: SpectralModel, u_grid, n_samples=10**6, seed=0) -> NonmaxFraction:
    """Monte-Carlo fraction of non-minimum critical points below each level.

    Finite levels must satisfy u <= -u_0 from the model's envelope; ``inf``
    is allowed and gives the model constant 1 - d_0/total over all levels.
    The same random numbers are reused at every level, so differences
    between levels are much less noisy than the fractions themselves.
    """
    law = conditional_hessian_law(model)
    u_grid = np.asarray(u_grid, dtype=float)
    finite = np.isfinite(u_grid)
    if np.any(u_grid[finite] > -law.envelope.u0):
        raise ValueError(f"finite levels must be <= -u0 = {-law.envelope.u0:.4g}")
    n = model.dimension
    acc = [_Moments(2) for _ in u_grid]
    hits = np.zeros(len(u_grid), dtype=np.int64)
    for rng, size in _batch_rngs(seed, n_samples):
        for j, (wdet, ind) in enumerate(_weighted_draws(law, u_grid, rng, size)):
            nonmin = np.where(ind != 0, wdet, 0.0)
            hits[j] += np.count_nonzero(nonmin)
            acc[j].add(np.column_stack([nonmin, wdet]))
    frac = np.empty(len(u_grid))
    se = np.empty(len(u_grid))
    for j, a in enumerate(acc):
        num, den = a.mean
        frac[j] = num / den if den > 0 else math.nan
        # delta method for a ratio of means: Var(a - R b) / (N B^2)
        c = a.covariance()
        var = c[0, 0] - 2 * frac[j] * c[0, 1] + frac[j] ** 2 * c[1, 1]
        se[j] = math.sqrt(max(var, 0.0) / a.count) / den if den > 0 else math.nan
    low = hits < 30
    if np.any(low):
        warnings.warn(
            f"fewer than 30 non-minimum samples at u = {u_grid[low].tolist()}; fractions unresolved",
            stacklevel=2,
        )
    slope, slope_se = _fit_slope(u_grid[finite], frac[finite], se[finite])
    return NonmaxFraction(u_grid, frac, se, slope, slope_se, -law.envelope.theta / 2)


def _fit_slope(u, frac, se):
    ok = (frac > 0) & np.isfinite(frac) & (se > 0)
    if ok.sum() < 2:
        return math.nan, math.nan
    x = u[ok] ** 2
    y = np.log(frac[ok])
    w = (frac[ok] / se[ok]) ** 2
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    return float(slope), float(math.sqrt(1.0 / sxx))
