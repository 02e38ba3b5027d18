"""Closed-form expectations for excursion-set topology of unit-variance fields.

All level-dependent functions accept scalar or array ``u``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import special

from .covariance import SpectralModel, conditional_hessian_law

__all__ = [
    "AsymptoticRegimeWarning",
    "DomainSpec",
    "LKCurvatures",
    "torus",
    "box",
    "interval",
    "hermite",
    "gaussian_tail",
    "lk_curvatures",
    "expected_euler",
    "expected_components_asymptotic",
    "error_regime",
    "nazarov_sodin_cz",
]


class AsymptoticRegimeWarning(UserWarning):
    """Level below the threshold where the asymptotic error control starts."""


@dataclass(frozen=True)
class DomainSpec:
    """A flat domain: a torus (periodic box), a box, or an interval."""

    shape: str
    side_lengths: tuple

    def __post_init__(self):
        if self.shape not in ("torus", "box", "interval"):
            raise ValueError(f"unsupported domain shape {self.shape!r}")
        sides = tuple(float(s) for s in np.atleast_1d(self.side_lengths))
        if not sides or min(sides) <= 0:
            raise ValueError("side lengths must be positive")
        if self.shape == "interval" and len(sides) != 1:
            raise ValueError("an interval has exactly one side")
        object.__setattr__(self, "side_lengths", sides)

    @property
    def n(self):
        return len(self.side_lengths)

    @property
    def volume(self):
        return float(np.prod(self.side_lengths))

    def faces(self, k):
        """Number of k-dimensional faces of a box (each stratum of dim k)."""
        if self.shape == "torus":
            return 1 if k == self.n else 0
        return math.comb(self.n, k) * 2 ** (self.n - k)

    def label(self):
        return f"{self.shape}:" + "x".join(f"{s:g}" for s in self.side_lengths)


def torus(*sides):
    return DomainSpec("torus", sides)


def box(*sides):
    return DomainSpec("box", sides)


def interval(length):
    return DomainSpec("interval", (length,))


@dataclass(frozen=True)
class LKCurvatures:
    """Lipschitz-Killing curvatures L_0..L_n of a flat domain in the induced metric."""

    values: tuple
    domain: DomainSpec
    metric_scale: tuple

    def __getitem__(self, k):
        return self.values[k]

    def __len__(self):
        return len(self.values)


def gaussian_tail(x):
    """Psi(x) = P(N(0,1) > x)."""
    return special.ndtr(-np.asarray(x, dtype=float))


def hermite(j: int, x):
    """Probabilists' Hermite polynomial H_j, with H_{-1}(x) = sqrt(2 pi) Psi(x) exp(x^2/2).

    For ``j >= 0`` this evaluates the explicit sum
    j! sum_l (-1)^l x^(j-2l) / (l! (j-2l)! 2^l). The ``j = -1`` branch uses the
    scaled complementary error function so large ``x`` neither overflows nor
    underflows.
    """
    if j < -1:
        raise ValueError("Hermite index must be >= -1")
    x = np.asarray(x, dtype=float)
    if j == -1:
        return math.sqrt(2 * math.pi) * 0.5 * special.erfcx(x / math.sqrt(2.0))
    out = np.zeros_like(x)
    for ell in range(j // 2 + 1):
        coef = math.factorial(j) * (-1) ** ell / (
            math.factorial(ell) * math.factorial(j - 2 * ell) * 2**ell
        )
        out = out + coef * x ** (j - 2 * ell)
    return out


def _metric_scales(metric, n):
    lam = np.asarray(metric, dtype=float)
    if lam.ndim == 0:
        return np.full(n, math.sqrt(float(lam)))
    if lam.ndim == 1:
        return np.sqrt(lam)
    if not np.allclose(lam, np.diag(np.diag(lam))):
        raise ValueError("only diagonal metrics are supported on boxes")
    return np.sqrt(np.diag(lam))


def lk_curvatures(domain: DomainSpec, metric) -> LKCurvatures:
    """Lipschitz-Killing curvatures of a flat box or torus.

    ``metric`` is lambda_2 (isotropic), a diagonal vector, or the diagonal
    matrix Lambda. With flat strata only the zeroth-order curvature term
    survives: for a box each k-face contributes its g-volume times the
    inward normal-cone fraction 2^-(n-k), giving the elementary symmetric
    polynomial e_k of the g-lengths of the sides. A flat torus has only
    L_n = vol_g.
    """
    n = domain.n
    scales = _metric_scales(metric, n)
    if np.asarray(metric).ndim == 2 and domain.shape == "torus":
        gvol = math.sqrt(np.linalg.det(np.asarray(metric, dtype=float))) * domain.volume
    else:
        gvol = float(np.prod(scales)) * domain.volume
    if domain.shape == "torus":
        values = (0.0,) * n + (gvol,)
    else:
        g_sides = scales * np.array(domain.side_lengths)
        values = tuple(
            float(sum(np.prod(c) for c in combinations(g_sides, k))) if k else 1.0
            for k in range(n + 1)
        )
    return LKCurvatures(values, domain, tuple(float(s) for s in scales))


def expected_euler(lk: LKCurvatures, u):
    """E chi of the excursion set {f >= u}; exact at every level."""
    u = np.asarray(u, dtype=float)
    total = lk[0] * gaussian_tail(u)  # k = 0 term: L_0 Psi(u)
    gauss = np.exp(-0.5 * u * u)
    for k in range(1, len(lk)):
        if lk[k]:
            total = total + (2 * math.pi) ** (-(k + 1) / 2) * lk[k] * hermite(k - 1, u) * gauss
    return total


def error_regime(refined: bool) -> str:
    """Relative-error tag of a component-count prediction."""
    return "exp(-c u^2)" if refined else "1/u"


def expected_components_asymptotic(domain: DomainSpec, model: SpectralModel, u, refined=False):
    """Large-level prediction for E N(E_u), E N_ball(E_u), E N(Z_u), E N_sphere(Z_u).

    The leading form is (2 pi)^-(n+1)/2 vol_g u^(n-1) exp(-u^2/2) with
    relative error O(1/u). ``refined=True`` returns the Hermite form with
    relative error O(exp(-c u^2)): vol_g H_{n-1}(u) on a torus, and the full
    Lipschitz-Killing sum on a box or interval.

    Warns with :class:`AsymptoticRegimeWarning` when u is below u_1 of the
    model's conditional Hessian envelope.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("component asymptotics need u > 0")
    if domain.n != model.dimension:
        raise ValueError("domain and model dimensions differ")
    u1 = conditional_hessian_law(model).envelope.u1
    if np.any(u < u1):
        warnings.warn(
            f"level below u1 = {u1:.3g}; asymptotic error control not guaranteed",
            AsymptoticRegimeWarning,
            stacklevel=2,
        )
    n = domain.n
    lk = lk_curvatures(domain, model.second_moment)
    gvol = lk[n]
    gauss = np.exp(-0.5 * u * u)
    if not refined:
        return (2 * math.pi) ** (-(n + 1) / 2) * gvol * u ** (n - 1) * gauss
    if domain.shape == "torus":
        return (2 * math.pi) ** (-(n + 1) / 2) * gvol * hermite(n - 1, u) * gauss
    return expected_euler(lk, u)


def nazarov_sodin_cz(model: SpectralModel, u):
    """Asymptotic volume density of level-set components at level u."""
    n = model.dimension
    u = np.asarray(u, dtype=float)
    return (2 * math.pi) ** (-(n + 1) / 2) * model.c_n * hermite(n - 1, u) * np.exp(-0.5 * u * u)
