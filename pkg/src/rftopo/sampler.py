"""Realizations of stationary Gaussian fields.

Torus fields are exact trigonometric polynomials synthesized by FFT from the
circulant covariance of the grid; scattered-point fields use a random-feature
(random Fourier phase) superposition.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .covariance import SpectralModel

__all__ = [
    "GridField",
    "replicate_rng",
    "sample_torus",
    "sample_random_features",
    "eval_spectral",
    "save_field",
    "load_field",
]

CLIP_WARN = 1e-8
CLIP_FAIL = 1e-4
_MAGIC = b"RFTF\x01"


def replicate_rng(master_seed, replicate=None):
    """Generator for one replicate, independent of how many others are drawn."""
    if replicate is None:
        return np.random.default_rng(master_seed)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate),)))


def _frequencies(shape, sides):
    """Signed angular frequency vectors per axis, in FFT order."""
    return [2 * math.pi * np.fft.fftfreq(m, d=1.0 / m) / L for m, L in zip(shape, sides)]


def _nyquist_mask(shape):
    """True on coefficients that sit on an even-length axis' Nyquist frequency."""
    mask = np.zeros(shape, dtype=bool)
    for a, m in enumerate(shape):
        if m % 2 == 0:
            idx = [slice(None)] * len(shape)
            idx[a] = m // 2
            mask[tuple(idx)] = True
    return mask


@dataclass(eq=False)
class GridField:
    """A field sampled on the vertices of a periodic grid.

    Vertex ``j`` sits at ``x = j * h`` with ``h = L / m`` per axis. When
    ``coefficients`` is present the field is the trigonometric polynomial
    ``f(x) = Re sum_k c_k exp(i xi_k . x)`` with ``c = fftn(values) / N``.
    """

    values: np.ndarray
    sides: tuple
    coefficients: Optional[np.ndarray] = field(default=None, repr=False)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.values.setflags(write=False)
        self.sides = tuple(float(s) for s in np.atleast_1d(self.sides))
        if len(self.sides) != self.values.ndim:
            raise ValueError("one period per axis required")

    @classmethod
    def from_values(cls, values, sides, provenance=None):
        """Wrap a periodic array, deriving its Fourier coefficients.

        Nyquist modes are dropped so that off-grid evaluation stays real.
        """
        values = np.asarray(values, dtype=float)
        coef = np.fft.fftn(values) / values.size
        nyq = _nyquist_mask(values.shape)
        if np.any(nyq):
            lost = np.abs(coef[nyq]).max()
            if lost > 1e-8 * max(np.abs(coef).max(), 1e-300):
                warnings.warn(f"dropping Nyquist modes of amplitude {lost:.3g}", stacklevel=2)
            coef[nyq] = 0.0
            values = np.fft.ifftn(coef * values.size).real
        return cls(values, sides, coef, dict(provenance or {}))

    @property
    def n(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def spacing(self):
        return tuple(L / m for L, m in zip(self.sides, self.shape))

    @property
    def volume(self):
        return float(np.prod(self.sides))

    def vertex_positions(self):
        """Array (..., n) of vertex coordinates."""
        axes = [np.arange(m) * h for m, h in zip(self.shape, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def _band(self):
        """Coefficient block restricted to the frequencies that matter."""
        if self.coefficients is None:
            raise ValueError("field has no spectral representation")
        coef = self.coefficients
        amp = np.abs(coef)
        keep = amp > 1e-15 * amp.max()
        freqs = _frequencies(self.shape, self.sides)
        index = []
        for a, m in enumerate(self.shape):
            other = tuple(b for b in range(self.n) if b != a)
            used = np.any(keep, axis=other) if other else keep
            signed = np.fft.fftfreq(m, d=1.0 / m).astype(int)
            kmax = int(np.abs(signed[used]).max()) if np.any(used) else 0
            index.append(np.nonzero(np.abs(signed) <= kmax)[0])
        block = coef[np.ix_(*index)]
        return block, [f[i] for f, i in zip(freqs, index)]

    def spectral_gradient(self):
        """Exact gradient on the grid, shape (n,) + grid shape."""
        if self.coefficients is None:
            raise ValueError("field has no spectral representation")
        freqs = _frequencies(self.shape, self.sides)
        out = []
        for a in range(self.n):
            shape = [1] * self.n
            shape[a] = -1
            d = 1j * freqs[a].reshape(shape)
            out.append(np.fft.ifftn(self.coefficients * d * self.values.size).real)
        return np.stack(out)


def _check_resolution(model, sides, shape):
    h = np.array(sides) / np.array(shape)
    if model.band_limit is not None:
        # at least 8 vertices per shortest wavelength
        if np.any(h > 2 * math.pi / (8 * model.band_limit)):
            raise ValueError("grid does not resolve the spectral band (need 8 points per wavelength)")


def _circulant_weights(model, sides, shape):
    """Eigenvalues of the periodized grid covariance (real, FFT layout)."""
    n = len(shape)
    rt = model.truncation_radius
    axes = [np.arange(m) * L / m for m, L in zip(shape, sides)]
    grids = np.meshgrid(*axes, indexing="ij")
    images = [range(-int(math.ceil(rt / L)) - 1, int(math.ceil(rt / L)) + 2) for L in sides]
    cov = np.zeros(shape)
    for shift in np.array(np.meshgrid(*images, indexing="ij")).reshape(n, -1).T:
        disp = [g + s * L for g, s, L in zip(grids, shift, sides)]
        r = np.sqrt(sum(d * d for d in disp))
        if r.min() > rt:
            continue
        cov += model.radial_covariance(r)
    return np.fft.fftn(cov).real


def _density_weights(model, sides, shape):
    """Spectral density sampled on the dual lattice, normalized to unit variance."""
    freqs = _frequencies(shape, sides)
    xi = np.stack(np.meshgrid(*freqs, indexing="ij"), axis=-1)
    weights = model.spectral_density(xi) * np.prod([2 * math.pi / L for L in sides])
    total = weights.sum()
    if total <= 0:
        raise ValueError("no dual-lattice frequency carries spectral mass")
    return weights * (np.prod(shape) / total)


def _grid_weights(model, sides, shape):
    if math.isfinite(model.truncation_radius):
        lam = _circulant_weights(model, sides, shape)
    elif model.spectral_density is not None:
        lam = _density_weights(model, sides, shape)
    else:
        raise ValueError(
            f"{model.name} has neither a fast-decaying covariance nor a spectral density; "
            "use sample_random_features"
        )
    total = np.abs(lam).sum()
    clipped = -lam[lam < 0].sum()
    nyq = _nyquist_mask(shape)
    clipped += np.clip(lam[nyq], 0, None).sum()
    frac = clipped / total
    if frac > CLIP_FAIL:
        raise ValueError(f"clipped spectral mass {frac:.3g} exceeds {CLIP_FAIL}")
    if frac > CLIP_WARN:
        warnings.warn(f"clipped spectral mass {frac:.3g}", stacklevel=3)
    lam = np.clip(lam, 0.0, None)
    lam[nyq] = 0.0
    # FFT roundoff leaves ~1e-13 noise in the tail; it would break k <-> -k symmetry
    lam[lam < 1e-12 * lam.max()] = 0.0
    return 0.5 * (lam + _reflect(lam))


def _reflect(arr):
    """arr[-k] in FFT index layout."""
    return np.roll(np.flip(arr), 1, axis=tuple(range(arr.ndim)))


_WEIGHT_CACHE: dict = {}


def sample_torus(model: SpectralModel, sides, shape, seed, replicate=None) -> GridField:
    """Exact stationary field on the flat torus prod [0, L_i).

    Parameters
    ----------
    model : SpectralModel
    sides : sequence of float
        Periods L_i, each at least ten correlation lengths.
    shape : sequence of int
        Vertices per axis.
    seed : int or numpy Generator
        Master seed (combined with ``replicate``) or a ready generator.
    replicate : int, optional
        Replicate index mixed into the master seed.
    """
    sides = tuple(float(s) for s in np.atleast_1d(sides))
    shape = tuple(int(m) for m in np.atleast_1d(shape))
    if len(sides) != model.dimension or len(shape) != model.dimension:
        raise ValueError("sides/shape must match the model dimension")
    if min(sides) < 10 * model.correlation_length:
        raise ValueError(
            f"periods {sides} shorter than 10 correlation lengths ({model.correlation_length:.3g})"
        )
    _check_resolution(model, sides, shape)
    key = (id(model), sides, shape)
    lam = _WEIGHT_CACHE.get(key)
    if lam is None or lam[0] is not model:
        lam = (model, _grid_weights(model, sides, shape))
        _WEIGHT_CACHE.clear()
        _WEIGHT_CACHE[key] = lam
    weights = lam[1]
    rng = seed if isinstance(seed, np.random.Generator) else replicate_rng(seed, replicate)
    white = rng.standard_normal(shape)
    coef = np.sqrt(weights) * np.fft.fftn(white) / white.size
    values = np.fft.ifftn(coef * white.size).real
    prov = {
        "model": model.descriptor(),
        "seed": None if isinstance(seed, np.random.Generator) else int(seed),
        "replicate": replicate,
        "sides": list(sides),
        "shape": list(shape),
    }
    return GridField(values, sides, coef, prov)


def sample_random_features(model: SpectralModel, points, m_features: int, seed):
    """sqrt(2/m) sum_j cos(<xi_j, x> + phi_j) at each point (rows of ``points``)."""
    if m_features < 1:
        raise ValueError("m_features must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if model.dimension == 1 else pts[None, :]
    xi = model.sampler(rng, m_features)
    phi = rng.uniform(0.0, 2 * math.pi, m_features)
    return math.sqrt(2.0 / m_features) * np.cos(pts @ xi.T + phi).sum(axis=1)


def eval_spectral(field: GridField, x):
    """Value, gradient and Hessian of the trigonometric interpolant.

    ``x`` has shape (n,) or (P, n). Returns arrays of shape (P,), (P, n),
    (P, n, n) (leading axis dropped for a single point).
    """
    block, freqs = field._band
    n = field.n
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if n == 1 and pts.shape[-1] != 1:
        pts = pts.reshape(-1, 1)
    npts = pts.shape[0]
    # per-axis phase factors with 0th/1st/2nd derivative weights
    phase = []
    for a in range(n):
        e = np.exp(1j * pts[:, a : a + 1] * freqs[a][None, :])
        ik = 1j * freqs[a][None, :]
        phase.append((e, e * ik, e * ik * ik))
    # contract the last axis by a matrix product, the rest point-wise
    last = block.reshape(-1, block.shape[-1])
    partial = {
        o: (last @ phase[n - 1][o].T).reshape(block.shape[:-1] + (npts,)) for o in range(3)
    }
    partial = {(o,): v for o, v in partial.items()}
    for a in range(n - 2, -1, -1):
        nxt = {}
        for orders, arr in partial.items():
            for o in range(3 - sum(orders)):
                nxt[(o,) + orders] = np.einsum("...kp,pk->...p", arr, phase[a][o])
        partial = nxt
    value = np.empty(npts)
    grad = np.empty((npts, n))
    hess = np.empty((npts, n, n))
    for orders, arr in partial.items():
        total = sum(orders)
        if total > 2:
            continue
        re = arr.real
        if total == 0:
            value[:] = re
        elif total == 1:
            grad[:, orders.index(1)] = re
        else:
            nz = [a for a, o in enumerate(orders) for _ in range(o)]
            hess[:, nz[0], nz[1]] = re
            hess[:, nz[1], nz[0]] = re
    if single:
        return value[0], grad[0], hess[0]
    return value, grad, hess


def save_field(path, field: GridField):
    """Write a field container: magic, header length, JSON header, float64 LE payload."""
    header = json.dumps(
        {"shape": list(field.shape), "sides": list(field.sides), "provenance": field.provenance},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def load_field(path) -> GridField:
    """Read a container written by :func:`save_field`; values are bit-identical."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path} is not a field container")
    off = len(_MAGIC)
    (hlen,) = struct.unpack("<Q", data[off : off + 8])
    off += 8
    header = json.loads(data[off : off + hlen])
    off += hlen
    values = np.frombuffer(data[off:], dtype="<f8").reshape(header["shape"]).astype(float)
    coef = np.fft.fftn(values) / values.size
    coef[_nyquist_mask(values.shape)] = 0.0
    return GridField(values, tuple(header["sides"]), coef, header["provenance"])
