"""Stationary covariance models and the conditional Hessian law.

A model is described by its correlation function ``k(x) = E f(0) f(x)``
(unit variance), its spectral probability measure, and the derivative jets
of ``k`` at the origin::

    second_moment  Lambda_ij   = -d_i d_j k(0)       = E[xi_i xi_j]
    fourth_moment  kappa_ijkl  =  d_i d_j d_k d_l k(0) = E[xi_i xi_j xi_k xi_l]

``Lambda`` is also the metric induced by the field on its domain.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

KINDS = ("bargmann_fock", "random_waves", "full_band_random_waves", "custom")

__all__ = [
    "KINDS",
    "SpectralModel",
    "GaussianHessianLaw",
    "Envelope",
    "make_model",
    "model_from_descriptor",
    "covariance_eval",
    "finite_difference_jets",
    "conditional_hessian_law",
    "sample_conditional_hessian",
    "sym_basis",
]


def _sphere_area(n):
    """Area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _bessel_kernel(nu, r):
    """Gamma(nu+1) (2/r)^nu J_nu(r), continuous at r = 0 where it equals 1."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    small = r < 1e-3
    if np.any(small):
        z = -(r[small] ** 2) / 4.0
        # three terms of the power series are exact to ~1e-19 here
        out[small] = 1.0 + z / (nu + 1) + z**2 / (2 * (nu + 1) * (nu + 2))
    big = ~small
    if np.any(big):
        rb = r[big]
        if nu == 0:
            jv = special.j0(rb)
        elif nu == 1:
            jv = special.j1(rb)
        else:
            jv = special.jv(nu, rb)
        out[big] = math.gamma(nu + 1) * (2.0 / rb) ** nu * jv
    return out


def _isotropic_jets(n, m2, m4):
    """Second/fourth moment tensors of an isotropic measure with E|xi|^2 = m2, E|xi|^4 = m4."""
    eye = np.eye(n)
    lam = (m2 / n) * eye
    kappa = (m4 / (n * (n + 2))) * (
        np.einsum("ij,kl->ijkl", eye, eye)
        + np.einsum("ik,jl->ijkl", eye, eye)
        + np.einsum("il,jk->ijkl", eye, eye)
    )
    return lam, kappa


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """A unit-variance stationary covariance on R^n.

    Attributes
    ----------
    name : str
        One of :data:`KINDS`.
    dimension : int
    radial_covariance : callable
        ``r -> k(r)`` for isotropic models (vectorized over ``r``).
    sampler : callable
        ``(rng, size) -> array (size, n)`` of spectral frequencies.
    second_moment, fourth_moment : ndarray
        ``Lambda`` (n, n) and ``kappa`` (n, n, n, n).
    spectral_density : callable or None
        ``xi (..., n) -> density``; None for singular spectral measures.
    band_limit : float or None
        Radius of the spectral support when it is compact.
    params : dict
        Construction parameters, echoed into descriptors.
    """

    name: str
    dimension: int
    radial_covariance: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    sampler: Callable = field(repr=False)
    second_moment: np.ndarray = field(repr=False)
    fourth_moment: np.ndarray = field(repr=False)
    spectral_density: Optional[Callable] = field(default=None, repr=False)
    band_limit: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.second_moment, self.fourth_moment):
            arr.setflags(write=False)

    @property
    def n(self):
        return self.dimension

    def covariance(self, x):
        """k(x) for lag vectors ``x`` of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        if self.dimension == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return self.radial_covariance(np.linalg.norm(x, axis=-1))

    @property
    def c_n(self):
        """sqrt(det Lambda): ratio of g-volume to Lebesgue volume."""
        return float(np.sqrt(np.linalg.det(self.second_moment)))

    @property
    def lambda2(self):
        """Mean diagonal second spectral moment."""
        return float(np.trace(self.second_moment) / self.dimension)

    @cached_property
    def correlation_length(self):
        """Smallest r beyond which |k| stays below 0.01 (scanned along one axis)."""
        if self.name == "bargmann_fock":
            return math.sqrt(2.0 * math.log(100.0))
        r_max = 2e4 if self.name != "custom" else 200.0
        step = 0.02 if self.name != "custom" else 0.1
        r = np.arange(0.0, r_max, step)
        k = np.abs(self.radial_covariance(r))
        above = np.nonzero(k >= 0.01)[0]
        if above[-1] == len(r) - 1:
            return math.inf
        return float(r[above[-1] + 1])

    @cached_property
    def truncation_radius(self):
        """Radius beyond which |k| < 1e-12, or inf when it is not reached quickly."""
        if self.name == "bargmann_fock":
            return math.sqrt(2.0 * math.log(1e12))
        return math.inf

    def descriptor(self):
        """JSON-ready description used in run manifests and field headers."""
        return {
            "name": self.name,
            "n": self.dimension,
            "params": {k: v for k, v in self.params.items() if _jsonable(v)},
            "lambda_matrix": self.second_moment.tolist(),
            "kappa_tensor": self.fourth_moment.tolist(),
        }


def _jsonable(v):
    return isinstance(v, (int, float, str, bool, type(None), list, tuple))


def _gaussian_sampler(n):
    def sample(rng, size):
        return rng.standard_normal((size, n))

    return sample


def _sphere_sampler(n):
    def sample(rng, size):
        z = rng.standard_normal((size, n))
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    return sample


def _ball_sampler(n):
    sphere = _sphere_sampler(n)

    def sample(rng, size):
        d = sphere(rng, size)
        return d * rng.random((size, 1)) ** (1.0 / n)

    return sample


def make_model(kind: str, n: int, *, radial_density=None, name=None) -> SpectralModel:
    """Build a :class:`SpectralModel`.

    Parameters
    ----------
    kind : {'bargmann_fock', 'random_waves', 'full_band_random_waves', 'custom'}
        ``bargmann_fock``: k = exp(-|x|^2/2), Gaussian spectrum.
        ``random_waves``: spectral measure uniform on the unit sphere.
        ``full_band_random_waves``: spectral measure uniform on the unit ball.
        ``custom``: isotropic spectrum with density ``radial_density(|xi|)``.
    n : int
        Dimension, at least 1.
    radial_density : callable, optional
        Required for ``custom``; must integrate to one over R^n.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if kind == "bargmann_fock":
        lam, kappa = _isotropic_jets(n, float(n), float(n * (n + 2)))

        def density(xi):
            xi = np.asarray(xi, dtype=float)
            return (2 * math.pi) ** (-n / 2) * np.exp(-0.5 * np.sum(xi**2, axis=-1))

        return SpectralModel(
            "bargmann_fock", n, lambda r: np.exp(-0.5 * np.asarray(r, dtype=float) ** 2),
            _gaussian_sampler(n), lam, kappa, density, None, {},
        )
    if kind == "random_waves":
        if n < 2:
            # spectral measure on S^0 is two point masses: f, f'' are collinear
            raise ValueError("random_waves needs n >= 2 (n = 1 is a degenerate cosine)")
        nu = (n - 2) / 2.0
        lam, kappa = _isotropic_jets(n, 1.0, 1.0)
        return SpectralModel(
            "random_waves", n, lambda r: _bessel_kernel(nu, r),
            _sphere_sampler(n), lam, kappa, None, 1.0, {},
        )
    if kind == "full_band_random_waves":
        nu = n / 2.0
        lam, kappa = _isotropic_jets(n, n / (n + 2.0), n / (n + 4.0))
        vol_ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1)

        def density(xi):
            xi = np.asarray(xi, dtype=float)
            return (np.sum(xi**2, axis=-1) <= 1.0) / vol_ball

        return SpectralModel(
            "full_band_random_waves", n, lambda r: _bessel_kernel(nu, r),
            _ball_sampler(n), lam, kappa, density, 1.0, {},
        )
    if kind == "custom":
        if radial_density is None:
            raise ValueError("custom models need a radial_density")
        return _custom_model(n, radial_density, name or "custom")
    raise ValueError(f"unknown model kind {kind!r}")


def _custom_model(n, rho, label):
    area = _sphere_area(n)

    def moment(p):
        val, _ = integrate.quad(lambda r: rho(r) * r ** (n - 1 + p), 0, np.inf, limit=400)
        return area * val

    mass = moment(0)
    if not np.isfinite(mass) or abs(mass - 1.0) > 1e-6:
        raise ValueError(f"spectral density has mass {mass}, expected 1")
    with np.errstate(all="ignore"):
        m4 = moment(4)
    if not np.isfinite(m4) or m4 > 1e12:
        raise ValueError("spectral density has no finite fourth moment")
    nu = (n - 2) / 2.0

    def radial_cov(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for idx, ri in np.ndenumerate(r):
            val, _ = integrate.quad(
                lambda s: rho(s) * s ** (n - 1) * _bessel_kernel(nu, np.array([s * ri]))[0],
                0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-13,
            )
            out[idx] = area * val
        return out

    # radial CDF table for inverse-transform sampling
    grid = np.linspace(0.0, 1.0, 4001) ** 2
    r_hi = 1.0
    while _moment_tail(rho, n, area, r_hi) > 1e-12:
        r_hi *= 2.0
    radii = grid * r_hi
    pdf = area * np.array([rho(r) for r in radii]) * radii ** (n - 1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(radii))])
    cdf /= cdf[-1]
    sphere = _sphere_sampler(n)

    def sample(rng, size):
        radius = np.interp(rng.random(size), cdf, radii)
        return sphere(rng, size) * radius[:, None]

    def density(xi):
        r = np.linalg.norm(np.asarray(xi, dtype=float), axis=-1)
        return np.vectorize(rho, otypes=[float])(r)

    model = SpectralModel(
        "custom", n, radial_cov, sample,
        np.zeros((n, n)), np.zeros((n,) * 4), density, None, {"label": label},
    )
    lam, kappa = finite_difference_jets(model)
    object.__setattr__(model, "second_moment", lam)
    object.__setattr__(model, "fourth_moment", kappa)
    model.__post_init__()
    _check_nondegenerate(model)
    return model


def _moment_tail(rho, n, area, r0):
    val, _ = integrate.quad(lambda r: rho(r) * r ** (n - 1), r0, np.inf, limit=200)
    return area * val


def _check_nondegenerate(model):
    if np.linalg.eigvalsh(model.second_moment).min() <= 0:
        raise ValueError("second spectral moment is not positive definite")


def model_from_descriptor(desc: dict) -> SpectralModel:
    """Rebuild a built-in model from :meth:`SpectralModel.descriptor` output."""
    if desc["name"] == "custom":
        raise ValueError("custom models cannot be rebuilt from a descriptor")
    return make_model(desc["name"], int(desc["n"]))


def covariance_eval(model: SpectralModel, x) -> np.ndarray:
    """k(x) for a lag vector (or array of lag vectors) ``x``."""
    return model.covariance(x)


# second-order central difference stencils by derivative order
_STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def _fd_derivative(func, n, orders, h):
    stencils = [_STENCILS[o] for o in orders]
    total = 0.0
    for offsets in itertools.product(*[s.items() for s in stencils]):
        weight = np.prod([w for _, w in offsets])
        point = np.array([o for o, _ in offsets], dtype=float) * h
        total += weight * float(np.squeeze(func(point)))
    return total / h ** sum(orders)


def finite_difference_jets(model: SpectralModel, h: float = 1e-2):
    """Lambda and kappa from Richardson-extrapolated central differences of k."""
    n = model.dimension
    func = model.covariance

    def deriv(idx):
        orders = [idx.count(a) for a in range(n)]
        d1 = _fd_derivative(func, n, orders, h)
        d2 = _fd_derivative(func, n, orders, h / 2)
        return (4.0 * d2 - d1) / 3.0

    lam = np.empty((n, n))
    for i, j in itertools.combinations_with_replacement(range(n), 2):
        lam[i, j] = lam[j, i] = -deriv((i, j))
    kappa = np.empty((n,) * 4)
    for idx in itertools.combinations_with_replacement(range(n), 4):
        val = deriv(idx)
        for perm in set(itertools.permutations(idx)):
            kappa[perm] = val
    return lam, kappa


def sym_basis(n):
    """Index pairs (k, l), k <= l, and the weights making tr(RS) the dot product."""
    pairs = [(k, l) for k in range(n) for l in range(k, n)]
    weights = np.array([1.0 if k == l else math.sqrt(2.0) for k, l in pairs])
    return pairs, weights


@dataclass(frozen=True)
class Envelope:
    """Error-envelope constants of the conditional Hessian law."""

    sigma: float
    rho: float
    s: float
    theta: float
    u0: float
    u1: float


@dataclass(frozen=True, eq=False)
class GaussianHessianLaw:
    """Law of the Hessian given f = t and grad f = 0, in g-orthonormal coordinates.

    ``covariance`` is the operator on Sym(n) in the orthonormal basis of
    :func:`sym_basis` (inner product tr(RS)).
    """

    dimension: int
    covariance: np.ndarray = field(repr=False)
    envelope: Envelope
    factor: np.ndarray = field(repr=False)

    def mean_at(self, t):
        """Conditional mean -t I."""
        return -float(t) * np.eye(self.dimension)

    def entry_covariance(self):
        """Cov(H_ij, H_kl) as an (n, n, n, n) tensor."""
        n = self.dimension
        pairs, w = sym_basis(n)
        out = np.empty((n,) * 4)
        for p, (i, j) in enumerate(pairs):
            for q, (k, l) in enumerate(pairs):
                c = self.covariance[p, q] / (w[p] * w[q])
                for a, b in ((i, j), (j, i)):
                    for cc, d in ((k, l), (l, k)):
                        out[a, b, cc, d] = c
        return out


def conditional_hessian_law(model: SpectralModel, domain_metric=None) -> GaussianHessianLaw:
    """Gaussian regression of the Hessian on (f, grad f) at one point.

    Coordinates are rescaled by Lambda^{-1/2} so the metric is the identity.
    Stationarity makes grad f independent of (f, H); Cov(f, H) = -I and
    Cov(H, H) = kappa in these coordinates, so the conditional law is
    N(-t I, kappa - I (x) I).

    Raises
    ------
    ValueError
        If the regression covariance has an eigenvalue below -1e-10.
    """
    lam = model.second_moment if domain_metric is None else np.asarray(domain_metric, float)
    n = model.dimension
    w_eig, v_eig = np.linalg.eigh(lam)
    a = v_eig @ np.diag(w_eig**-0.5) @ v_eig.T
    kt = np.einsum("ai,bj,ck,dl,ijkl->abcd", a, a, a, a, model.fourth_moment)
    pairs, w = sym_basis(n)
    m = len(pairs)
    cov = np.empty((m, m))
    for p, (i, j) in enumerate(pairs):
        for q, (k, l) in enumerate(pairs):
            cov[p, q] = w[p] * w[q] * (kt[i, j, k, l] - (i == j) * (k == l))
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < -1e-10:
        raise ValueError(f"conditional Hessian covariance is not PSD (min eig {evals.min():.3g})")
    evals = np.clip(evals, 0.0, None)
    sigma = float(evals.max())
    rho = float(math.sqrt(abs(np.prod(evals))))
    s = 0.0
    theta = 1.0 / max(s * s + sigma, (s + 1.0) ** 2)
    u0 = (1.0 + s) * max(1.0, math.sqrt(sigma))
    u1 = max(u0, (n * n + 2) / theta)
    factor = evecs * np.sqrt(evals)
    return GaussianHessianLaw(n, cov, Envelope(sigma, rho, s, theta, u0, u1), factor)


def sample_conditional_hessian(law: GaussianHessianLaw, t, rng, size=None):
    """Draw Hessians from N(-t I, covariance).

    ``t`` may be a scalar or an array; ``size`` (when given) is the number of
    draws for scalar ``t``. Returns an array (..., n, n).
    """
    n = law.dimension
    t = np.asarray(t, dtype=float)
    shape = t.shape if size is None else (size,) + t.shape
    pairs, w = sym_basis(n)
    z = rng.standard_normal(shape + (len(pairs),))
    coords = z @ law.factor.T
    h = np.empty(shape + (n, n))
    for p, (k, l) in enumerate(pairs):
        h[..., k, l] = coords[..., p] / w[p]
        h[..., l, k] = h[..., k, l]
    idx = np.arange(n)
    h[..., idx, idx] -= np.broadcast_to(t, shape)[..., None]
    return h
