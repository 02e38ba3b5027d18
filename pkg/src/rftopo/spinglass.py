"""The spherical p-spin model on the sphere of radius sqrt(n).

f(x) = n^((1-p)/2) sum a_{i1..ip} x_i1 ... x_ip with iid standard Gaussian
coefficients, so that E f(x) f(y) = n^(1-p) <x, y>^p.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

__all__ = [
    "SpinGlassModel",
    "make_spin_glass",
    "eval_sphere",
    "tangent_basis",
    "sample_goe",
    "energy_threshold",
    "expected_crit_goe",
    "complexity_probe",
    "SphereCriticalPoints",
    "brute_force_crit_search",
]

MAX_ENTRIES = 10**7
GOE_BATCH = 2048
STALL_WINDOW = 25


@dataclass(frozen=True, eq=False)
class SpinGlassModel:
    """One draw of the p-spin Hamiltonian.

    ``coefficients`` is the raw tensor; ``symmetric`` its average over index
    permutations, which defines the same polynomial.
    """

    p: int
    n: int
    seed: int
    coefficients: np.ndarray

    @property
    def scale(self):
        return self.n ** ((1 - self.p) / 2)

    @property
    def symmetric(self):
        sym = self.__dict__.get("_sym")
        if sym is None:
            a = self.coefficients
            perms = list(permutations(range(self.p)))
            sym = sum(np.transpose(a, q) for q in perms) / len(perms)
            object.__setattr__(self, "_sym", sym)
        return sym


def make_spin_glass(p: int, n: int, seed) -> SpinGlassModel:
    if p < 2 or n < 2:
        raise ValueError("need p >= 2 and n >= 2")
    if n**p > MAX_ENTRIES:
        raise ValueError(f"n^p = {n**p} exceeds the {MAX_ENTRIES} entry limit")
    rng = np.random.default_rng(seed)
    return SpinGlassModel(p, n, int(seed) if np.isscalar(seed) else 0, rng.standard_normal((n,) * p))


def _contract(t, x, times):
    """Contract the leading ``times`` axes of t with x (batch rows of x)."""
    out = np.tensordot(x, t, axes=([1], [0]))
    for _ in range(times - 1):
        out = np.einsum("bi,bi...->b...", x, out)
    return out


def _check_on_sphere(model, x):
    r2 = np.sum(x * x, axis=-1)
    if np.any(np.abs(r2 - model.n) > 1e-9 * max(model.n, 1)):
        raise ValueError("points must lie on the sphere of radius sqrt(n)")


def eval_sphere(model: SpinGlassModel, x):
    """Value, Riemannian gradient and Riemannian Hessian at x (or rows of x).

    The Hessian is P (D^2 f) P - (<grad f, x> / n) P with P the projector
    orthogonal to x; it acts on the ambient space and annihilates x.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    _check_on_sphere(model, xb)
    p, n, c = model.p, model.n, model.scale
    s = model.symmetric
    if p == 2:
        d2 = np.broadcast_to(s, (len(xb), n, n))
    else:
        d2 = _contract(s, xb, p - 2)
    grad = np.einsum("bij,bj->bi", d2, xb)
    val = c * np.einsum("bi,bi->b", grad, xb)
    egrad = c * p * grad
    ehess = c * p * (p - 1) * d2
    proj = np.eye(n) - xb[:, :, None] * xb[:, None, :] / n
    rgrad = np.einsum("bij,bj->bi", proj, egrad)
    radial = np.einsum("bi,bi->b", egrad, xb) / n
    rhess = proj @ ehess @ proj - radial[:, None, None] * proj
    if single:
        return val[0], rgrad[0], rhess[0]
    return val, rgrad, rhess


def tangent_basis(x):
    """Orthonormal basis (n, n-1) of the tangent space at x (or (B, n, n-1))."""
    x = np.asarray(x, dtype=float)
    xb = np.atleast_2d(x)
    n = xb.shape[1]
    v = xb / np.linalg.norm(xb, axis=1, keepdims=True)
    # Householder reflection sending e_0 to v; its other columns span v-perp
    e0 = np.zeros(n)
    e0[0] = 1.0
    w = v - e0
    norm = np.linalg.norm(w, axis=1, keepdims=True)
    near = norm[:, 0] < 1e-12
    w = np.where(near[:, None], 0.0, w / np.where(near[:, None], 1.0, norm))
    refl = np.eye(n) - 2 * w[:, :, None] * w[:, None, :]
    basis = refl[:, :, 1:]
    return basis[0] if x.ndim == 1 else basis


def sample_goe(n, size, rng):
    """GOE_n draws with off-diagonal variance 1/(2n) and diagonal variance 1/n.

    The spectrum fills [-sqrt(2), sqrt(2)] as n grows.
    """
    g = rng.standard_normal((size, n, n))
    return (g + np.swapaxes(g, 1, 2)) / (2 * math.sqrt(n))


def energy_threshold(p):
    """E_inf = 2 sqrt((p - 1) / p)."""
    return 2 * math.sqrt((p - 1) / p)


def _goe_rngs(seed, n_samples):
    ss = np.random.SeedSequence(int(seed))
    nb = max(1, math.ceil(n_samples / GOE_BATCH))
    for b, child in enumerate(ss.spawn(nb)):
        yield np.random.default_rng(child), min(GOE_BATCH, n_samples - b * GOE_BATCH)


def expected_crit_goe(p, n, index, u, n_samples=10**4, seed=0, *, exponent=None):
    """Monte-Carlo value of E C_i of the sojourn set {f <= n u}.

    sqrt(8/p) (p-1)^(n/2) E[exp(-n c lambda_i^2) 1{lambda_i <= sqrt(p/(2(p-1))) u}]
    over GOE_n, with c = (p-2)/(2p) unless ``exponent`` overrides it.

    Returns
    -------
    (estimate, stderr)
    """
    if n < 2 or not 0 <= index < n:
        raise ValueError("need n >= 2 and 0 <= index < n")
    c = (p - 2) / (2 * p) if exponent is None else exponent
    thresh = math.sqrt(p / (2 * (p - 1))) * u
    total = total_sq = 0.0
    passed = 0
    for rng, size in _goe_rngs(seed, n_samples):
        lam = np.linalg.eigvalsh(sample_goe(n, size, rng))[:, index]
        hit = lam <= thresh
        passed += int(hit.sum())
        w = np.where(hit, np.exp(-n * c * lam * lam), 0.0)
        total += w.sum()
        total_sq += np.sum(w * w)
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    pref = math.sqrt(8 / p) * (p - 1) ** (n / 2)
    if passed < 30:
        warnings.warn(f"only {passed} GOE samples below the threshold", stacklevel=2)
    return pref * mean, pref * math.sqrt(var / max(n_samples - 1, 1))


def complexity_probe(p, u, n_list, n_samples=10**4, seed=0):
    """(1/n) log E C_0(S_nu) for each n, plus the successive gaps.

    Returns
    -------
    rows : list of (n, value, stderr)
    gaps : list of value[k+1] - value[k]
    """
    if u >= -energy_threshold(p):
        raise ValueError("the probe is meant for u < -E_inf")
    rows = []
    for k, n in enumerate(n_list):
        est, se = expected_crit_goe(p, n, 0, u, n_samples, seed + k)
        value = math.log(est) / n if est > 0 else -math.inf
        rows.append((n, value, se / (n * est) if est > 0 else math.nan))
    gaps = [b[1] - a[1] for a, b in zip(rows, rows[1:])]
    return rows, gaps


@dataclass
class SphereCriticalPoints:
    positions: np.ndarray
    values: np.ndarray
    index: np.ndarray
    residuals: np.ndarray
    n_starts: int
    failed: int

    def counts(self, n):
        return np.bincount(self.index, minlength=n)

    def euler(self):
        return int(np.sum((-1.0) ** self.index))


def _tangent_system(model, x):
    _, g, h = eval_sphere(model, x)
    q = tangent_basis(x)
    ht = np.swapaxes(q, 1, 2) @ h @ q
    gt = np.einsum("bji,bj->bi", q, g)
    return q, ht, gt


def _retract(x, q, step):
    n = x.shape[1]
    y = x + np.einsum("bij,bj->bi", q, step)
    return y * (math.sqrt(n) / np.linalg.norm(y, axis=1, keepdims=True))


def brute_force_crit_search(model: SpinGlassModel, n_starts=10**4, tol=1e-9, seed=0, max_iter=200):
    """All critical points found by Riemannian Levenberg-Marquardt from uniform random starts.

    Each start solves grad f = 0 in its tangent plane with the damped step
    -(H^2 + mu I)^-1 H g, pulled back to the sphere by normalization. A
    step is accepted only if it lowers |grad f|, and mu shrinks on success
    so the iteration ends in plain Newton. A start whose damping blows up,
    or whose residual fails to halve within 25 iterations, is heading for a
    non-critical minimum of |grad f| and is re-drawn. Starts still short
    of ``tol`` after ``max_iter`` get a few plain Newton steps; those that
    still fail are counted in ``failed``. Converged points
    within geodesic distance 1e-4 are merged; indices come from the tangent
    Hessian.
    """
    n = model.n
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_starts, n))
    x *= math.sqrt(n) / np.linalg.norm(x, axis=1, keepdims=True)
    mu = np.full(n_starts, 1e-3)
    q, ht, gt = _tangent_system(model, x)
    res = np.linalg.norm(gt, axis=1)
    eye = np.eye(n - 1)
    checkpoint = res.copy()
    for it in range(max_iter):
        act = np.nonzero(res >= tol)[0]
        if act.size == 0:
            break
        h, g = ht[act], gt[act]
        lhs = h @ h + mu[act, None, None] * eye
        step = -np.linalg.solve(lhs, np.einsum("bij,bj->bi", h, g)[..., None])[..., 0]
        y = _retract(x[act], q[act], step)
        qy, hy, gy = _tangent_system(model, y)
        ry = np.linalg.norm(gy, axis=1)
        good = ry < res[act]
        acc = act[good]
        x[acc], q[acc], ht[acc], gt[acc], res[acc] = y[good], qy[good], hy[good], gy[good], ry[good]
        mu[acc] = np.maximum(mu[acc] / 10, 1e-12)
        mu[act[~good]] *= 10
        # a start trapped at, or creeping into, a non-critical minimum of |grad f|
        # is re-drawn
        stuck = mu > 1e8
        if (it + 1) % STALL_WINDOW == 0:
            stuck |= (res >= tol) & (res > 0.5 * checkpoint)
            checkpoint = res.copy()
        stuck = np.nonzero(stuck)[0]
        if stuck.size:
            z = rng.standard_normal((stuck.size, n))
            x[stuck] = z * (math.sqrt(n) / np.linalg.norm(z, axis=1, keepdims=True))
            q[stuck], ht[stuck], gt[stuck] = _tangent_system(model, x[stuck])
            res[stuck] = np.linalg.norm(gt[stuck], axis=1)
            mu[stuck] = 1e-3
            checkpoint[stuck] = res[stuck]
    # a short undamped Newton polish settles starts that were still closing in
    bad = np.nonzero(res >= tol)[0]
    if bad.size:
        x[bad], ht[bad], res[bad] = _polish(model, x[bad], q[bad], ht[bad], gt[bad], tol)
    ok = res < tol
    failed = int(np.sum(~ok))
    if failed > n_starts // 2:
        warnings.warn(f"{failed} of {n_starts} starts did not converge", stacklevel=2)
    x, ht, res = x[ok], ht[ok], res[ok]
    keep = _dedup_sphere(x, res, 1e-4)
    x, ht, res = x[keep], ht[keep], res[keep]
    val = eval_sphere(model, x)[0] if len(x) else np.empty(0)
    index = (np.linalg.eigvalsh(ht) < 0).sum(axis=1) if len(x) else np.empty(0, dtype=int)
    order = np.argsort(val, kind="stable")
    return SphereCriticalPoints(x[order], val[order], index[order], res[order], n_starts, failed)


def _polish(model, x, q, ht, gt, tol, iters=30):
    """Plain Newton steps in the tangent plane; returns positions, tangent Hessians, residuals."""
    res = np.linalg.norm(gt, axis=1)
    for _ in range(iters):
        act = np.nonzero((res >= tol) & np.isfinite(res))[0]
        if act.size == 0:
            break
        try:
            step = -np.linalg.solve(ht[act], gt[act][..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        y = _retract(x[act], q[act], step)
        qy, hy, gy = _tangent_system(model, y)
        x[act], q[act], ht[act], gt[act] = y, qy, hy, gy
        res[act] = np.linalg.norm(gy, axis=1)
    res = np.where(np.isfinite(res), res, np.inf)
    return x, ht, res


def _dedup_sphere(x, res, radius):
    if len(x) == 0:
        return np.array([], dtype=int)
    # repeated hits of one point agree far below the radius: collapse those first
    key = np.round(x / (radius * 1e-3)).astype(np.int64)
    _, group = np.unique(key, axis=0, return_inverse=True)
    group = group.ravel()
    order = np.lexsort((res, group))
    first = np.ones(len(order), dtype=bool)
    first[1:] = group[order][1:] != group[order][:-1]
    reps = order[first]
    # chord and geodesic distance agree to third order at this scale
    pairs = cKDTree(x[reps]).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(reps),) * 2)
    _, comp = connected_components(graph, directed=False)
    sub = np.lexsort((res[reps], comp))
    keep = np.ones(len(sub), dtype=bool)
    keep[1:] = comp[sub][1:] != comp[sub][:-1]
    return np.sort(reps[sub[keep]])
