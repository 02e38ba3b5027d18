"""Critical points of the trigonometric interpolant of a torus field."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .sampler import GridField, eval_spectral

__all__ = [
    "CriticalPoint",
    "CriticalPoints",
    "find_critical_points",
    "count_by_index_below",
    "write_critical_csv",
]

DEGENERATE_EIG = 1e-8
MERGE_RADIUS = 1e-6


@dataclass(frozen=True)
class CriticalPoint:
    position: np.ndarray
    value: float
    index: int
    residual: float


@dataclass
class CriticalPoints:
    """Deduplicated critical points, sorted by value.

    ``index`` is the number of negative Hessian eigenvalues, or -1 for a
    degenerate point (smallest |eigenvalue| below 1e-8). ``failed_seeds``
    holds the start positions whose Newton iteration did not converge.
    """

    positions: np.ndarray
    values: np.ndarray
    index: np.ndarray
    residuals: np.ndarray
    min_abs_eig: np.ndarray
    dimension: int
    failed_seeds: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    n_seeds: int = 0

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        for x, v, i, r in zip(self.positions, self.values, self.index, self.residuals):
            yield CriticalPoint(x, float(v), int(i), float(r))

    def counts(self):
        """Totals per index 0..n (degenerate points excluded)."""
        ok = self.index >= 0
        return np.bincount(self.index[ok], minlength=self.dimension + 1)

    def subset(self, mask):
        return CriticalPoints(
            self.positions[mask], self.values[mask], self.index[mask], self.residuals[mask],
            self.min_abs_eig[mask], self.dimension, self.failed_seeds, self.n_seeds,
        )


def _default_tol(field):
    lam = field.provenance.get("model", {}).get("lambda_matrix")
    if lam is not None:
        lambda2 = float(np.trace(np.asarray(lam)) / field.n)
    else:
        g = field.spectral_gradient()
        lambda2 = float(np.mean(g**2))
    return 1e-9 * math.sqrt(lambda2)


def _corner_shifts(n):
    return [tuple((c >> a) & 1 for a in range(n)) for c in range(2**n)]


def _roll_to(arr, shift):
    """arr[v + shift] at anchor v (periodic)."""
    axes = tuple(range(arr.ndim))
    return np.roll(arr, tuple(-s for s in shift), axis=axes)


def _cell_margin(field, safety=1.5):
    """Bound on how far a critical value inside a cell can exceed its corner values.

    At a critical point x* the gradient vanishes, so each corner c obeys
    f(c) >= f(x*) - |H|max |c - x*|^2 / 2 with |c - x*| at most half the cell
    diagonal. |H|max is the largest Frobenius norm of the grid Hessian,
    inflated by ``safety`` for the maximum between vertices.
    """
    n = field.n
    freqs = np.meshgrid(*_axis_frequencies(field), indexing="ij", sparse=True)
    frob = np.zeros(field.shape)
    for a in range(n):
        for b in range(a, n):
            hab = np.fft.ifftn(-field.coefficients * freqs[a] * freqs[b] * field.values.size).real
            frob += (1 if a == b else 2) * hab * hab
    hmax = safety * math.sqrt(frob.max())
    return hmax * sum(h * h for h in field.spacing) / 8


def _axis_frequencies(field):
    return [2 * math.pi * np.fft.fftfreq(m, d=h) for m, h in zip(field.shape, field.spacing)]


def _seeds(field, min_value, max_value):
    n = field.n
    vals = field.values
    grad = field.spectral_gradient()
    h = np.array(field.spacing)
    corners = _corner_shifts(n)
    cell_max = np.max([_roll_to(vals, c) for c in corners], axis=0)
    cell_min = np.min([_roll_to(vals, c) for c in corners], axis=0)
    sign_change = np.ones(vals.shape, dtype=bool)
    for a in range(n):
        stack = np.array([_roll_to(grad[a], c) for c in corners])
        sign_change &= (stack.min(axis=0) <= 0) & (stack.max(axis=0) >= 0)
    margin = _cell_margin(field) if np.isfinite(min_value) or np.isfinite(max_value) else 0.0
    lo, hi = min_value - margin, max_value + margin
    sign_change &= (cell_max >= lo) & (cell_min <= hi)
    cells = np.argwhere(sign_change) * h + h / 2
    # corners of flagged cells too: one cell can hold a close pair of roots
    corner_mask = np.zeros(vals.shape, dtype=bool)
    for c in corners:
        corner_mask |= _roll_to(sign_change, tuple(-s for s in c))
    corner_pts = np.argwhere(corner_mask) * h
    # strict discrete extrema over the full 3^n - 1 neighbourhood
    offsets = [np.array(o) - 1 for o in np.ndindex(*(3,) * n) if any(x != 1 for x in o)]
    is_max = np.ones(vals.shape, dtype=bool)
    is_min = np.ones(vals.shape, dtype=bool)
    for o in offsets:
        nb = _roll_to(vals, tuple(o))
        is_max &= vals > nb
        is_min &= vals < nb
    ext = (is_max | is_min) & (vals >= lo) & (vals <= hi)
    verts = np.argwhere(ext) * h
    return np.concatenate([cells, corner_pts, verts]).reshape(-1, n)


def _newton(field, x, tol, max_iter):
    sides = np.array(field.sides)
    step_cap = min(field.spacing)
    x = x.copy()
    done = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break
        _, g, hess = eval_spectral(field, x[act])
        res = np.linalg.norm(g, axis=1)
        conv = res < tol
        done[act[conv]] = True
        act, g, hess = act[~conv], g[~conv], hess[~conv]
        if act.size == 0:
            break
        try:
            step = -np.linalg.solve(hess, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.empty_like(g)
            for k in range(len(act)):
                step[k] = -np.linalg.lstsq(hess[k], g[k], rcond=None)[0]
        norm = np.linalg.norm(step, axis=1)
        scale = np.minimum(1.0, step_cap / np.maximum(norm, 1e-300))
        x[act] = np.mod(x[act] + step * scale[:, None], sides)
    val, g, hess = eval_spectral(field, x)
    res = np.linalg.norm(g, axis=1)
    return x, val, hess, res


def _stalled(x, hess, field):
    """Mask of unconverged seeds that Kantorovich's test places next to a root.

    Newton from x converges to a root when eta * gamma / sigma <= 1/2, with
    eta the step length, sigma the smallest |eigenvalue| of the Hessian and
    gamma its Lipschitz constant (estimated along the step). Seeds circling a
    fold, where |grad f| has a positive minimum, fail the test.
    """
    out = np.zeros(len(x), dtype=bool)
    if len(x) == 0:
        return out
    _, g, _ = eval_spectral(field, x)
    eig = np.abs(np.linalg.eigvalsh(hess)).min(axis=1)
    good = np.nonzero(eig > 0)[0]
    if len(good) == 0:
        return out
    step = np.linalg.solve(hess[good], g[good][..., None])[..., 0]
    eta = np.linalg.norm(step, axis=1)
    _, _, h2 = eval_spectral(field, x[good] - step)
    gamma = np.linalg.norm(h2 - hess[good], axis=(1, 2)) / np.maximum(eta, 1e-300)
    out[good] = eta * gamma / eig[good] <= 0.5
    return out


def _partner_seeds(x, hess, h, soft=0.5):
    """Offsets along the softest Hessian direction of nearly degenerate points."""
    if len(x) == 0:
        return x
    eig, vec = np.linalg.eigh(hess)
    k = np.argmin(np.abs(eig), axis=1)
    soft_eig = np.abs(eig[np.arange(len(x)), k])
    pick = soft_eig < soft * np.median(np.abs(eig))
    if not pick.any():
        return x[:0]
    v = vec[pick, :, k[pick]]
    out = [x[pick] + t * h * v for t in (-1.0, -0.5, -0.25, 0.25, 0.5, 1.0)]
    return np.concatenate(out)


def _wrap(x, sides):
    """Positions reduced into [0, L), guarding against mod rounding up to L."""
    pos = np.mod(x, sides)
    return np.where(pos >= sides, 0.0, pos)


def _dedup(x, res, sides, radius):
    if len(x) == 0:
        return np.array([], dtype=int)
    pos = _wrap(x, sides)
    tree = cKDTree(pos, boxsize=sides)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    nodes = len(pos)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(nodes, nodes))
    _, comp = connected_components(graph, directed=False)
    # keep the best-converged member of each cluster
    order = np.lexsort((res, comp))
    first = np.ones(len(order), dtype=bool)
    first[1:] = comp[order][1:] != comp[order][:-1]
    return order[first]


def find_critical_points(
    field: GridField, tol=None, *, min_value=-np.inf, max_value=np.inf, max_iter=50
) -> CriticalPoints:
    """Locate and classify the critical points of the field's interpolant.

    Newton iterations on the exact gradient start from every cell whose
    corner gradients change sign in each component and from every strict
    discrete extremum, then from both sides of every nearly degenerate root
    along its soft direction. Converged points closer than 1e-6 h (torus
    distance) are merged, since genuine critical points can sit much closer
    than one cell. Only cells touching ``[min_value, max_value]`` are seeded
    and only points with values in that range are returned, so a level
    window is much cheaper than a full search.

    Seeds that fail to converge within ``max_iter`` iterations are kept in
    :attr:`CriticalPoints.failed_seeds`; a warning is raised only for those
    that stalled close to a root no other seed reached.
    """
    if field.coefficients is None:
        raise ValueError("field has no spectral representation")
    n = field.n
    tol = _default_tol(field) if tol is None else tol
    seeds = _seeds(field, min_value, max_value)
    x, val, hess, res = _newton(field, seeds, tol, max_iter)
    ok = res < tol
    failed = seeds[~ok]
    # seeds far from any root wander off, and near folds |grad f| has a positive
    # minimum; only a short, well-conditioned Newton step signals a root
    near = ~ok & (res < 1e5 * tol)
    suspect = x[near][_stalled(x[near], hess[near], field)]
    # a close min/saddle (or max/saddle) pair lies along the soft eigendirection
    extra = _partner_seeds(x[ok], hess[ok], min(field.spacing))
    if len(extra):
        x2, val2, hess2, res2 = _newton(field, extra, tol, max_iter)
        ok2 = res2 < tol
        x = np.concatenate([x[ok], x2[ok2]])
        val = np.concatenate([val[ok], val2[ok2]])
        hess = np.concatenate([hess[ok], hess2[ok2]])
        res = np.concatenate([res[ok], res2[ok2]])
        ok = np.ones(len(x), dtype=bool)
    x, val, hess, res = x[ok], val[ok], hess[ok], res[ok]
    inside = (val >= min_value) & (val <= max_value)
    x, val, hess, res = x[inside], val[inside], hess[inside], res[inside]
    sides = np.array(field.sides)
    keep = _dedup(x, res, sides, MERGE_RADIUS * min(field.spacing))
    x, val, hess, res = x[keep], val[keep], hess[keep], res[keep]
    if len(suspect):
        # a seed stuck at the roundoff floor next to a root found from elsewhere is fine
        sval = eval_spectral(field, suspect)[0]
        suspect = suspect[(sval >= min_value) & (sval <= max_value)]
        dist = np.full(len(suspect), np.inf)
        if len(x) and len(suspect):
            dist = cKDTree(_wrap(x, sides), boxsize=sides).query(_wrap(suspect, sides))[0]
        missed = int(np.sum(dist > min(field.spacing)))
        if missed:
            warnings.warn(f"{missed} of {len(seeds)} Newton seeds stalled near an unlisted root",
                          stacklevel=2)
    eig = np.linalg.eigvalsh(hess) if len(x) else np.empty((0, n))
    min_abs = np.abs(eig).min(axis=1) if len(x) else np.empty(0)
    index = (eig < 0).sum(axis=1)
    index = np.where(min_abs < DEGENERATE_EIG, -1, index)
    order = np.lexsort(tuple(x.T[::-1]) + (val,)) if len(x) else np.array([], dtype=int)
    return CriticalPoints(
        np.mod(x[order], field.sides), val[order], index[order].astype(int), res[order],
        min_abs[order], n, failed, len(seeds),
    )


def count_by_index_below(points: CriticalPoints, u) -> np.ndarray:
    """C_0..C_n of the sojourn set {f <= u}."""
    sel = (points.values <= u) & (points.index >= 0)
    return np.bincount(points.index[sel], minlength=points.dimension + 1)


def write_critical_csv(path, points: CriticalPoints):
    """One row per point: coordinates, value, index."""
    n = points.dimension
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{a}" for a in range(n)] + ["value", "index"])
        for x, v, i in zip(points.positions, points.values, points.index):
            w.writerow([f"{c:.17g}" for c in x] + [f"{v:.17g}", int(i)])
