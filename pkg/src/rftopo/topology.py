"""Topology of excursion, sojourn and nodal sets of periodic grid fields.

A set is the collection of grid vertices on one side of a level. Vertices are
joined along grid edges (face connectivity) with torus wrap-around, and the
set is read as the cubical complex of all cells whose corners it contains.
The complement uses the dual full (3^n - 1 neighbour) connectivity.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .sampler import GridField

__all__ = [
    "LevelTopology",
    "SIDES",
    "level_mask",
    "component_count",
    "euler_characteristic",
    "component_euler",
    "sublevel_persistence",
    "running_count",
    "ball_component_count",
    "nodal_component_count",
    "betti_numbers",
    "level_topology",
]

SIDES = ("excursion", "sojourn")


@dataclass
class LevelTopology:
    """All observables of one field at one level.

    ``crit_counts`` holds, per Morse index, the number of critical points
    inside the set: indices of f for a sojourn {f <= u}, indices of -f for an
    excursion {f >= u} (so entry 0 counts the maxima of f).
    """

    u: float
    side: str
    n_components: int
    n_ball_components: int
    n_nodal_components: int
    n_sphere_components: int
    euler_characteristic: int
    betti: tuple
    crit_counts: tuple = field(default=())

    def as_record(self):
        return {
            "u": float(self.u),
            "side": self.side,
            "n_components": int(self.n_components),
            "n_ball": int(self.n_ball_components),
            "n_nodal": int(self.n_nodal_components),
            "n_sphere": int(self.n_sphere_components),
            "euler": int(self.euler_characteristic),
            "betti": [int(b) for b in self.betti],
            "crit_counts": [int(c) for c in self.crit_counts],
        }


def _values(field):
    return field.values if isinstance(field, GridField) else np.asarray(field, dtype=float)


def _check_side(side):
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")


def _offset_level(values, u, side):
    """Move u off the sampled values by one ulp, away from the set."""
    u = float(u)
    toward = np.inf if side == "excursion" else -np.inf
    while np.any(values == u):
        u = float(np.nextafter(u, toward))
    return u


def level_mask(field, u, side="excursion"):
    """Boolean vertex mask of {f >= u} or {f <= u}, after the tie offset."""
    _check_side(side)
    vals = _values(field)
    u = _offset_level(vals, u, side)
    return vals >= u if side == "excursion" else vals <= u


def _roll_to(arr, shift):
    """arr[v + shift] at v (periodic)."""
    return np.roll(arr, tuple(-s for s in shift), axis=tuple(range(arr.ndim)))


# ---------------------------------------------------------------------------
# periodic labeling


def _label_pieces(mask, full):
    """Label the wrap-padded mask; return the padded labels and the gluing edges.

    Each padded label is a piece with a consistent lift to the universal
    cover. The gluing edges ``(a, b, k)`` say that piece ``a`` seen at
    offset ``k`` periods is the same vertex as piece ``b``.
    """
    n = mask.ndim
    if min(mask.shape) < 3:
        raise ValueError("periodic labeling needs at least 3 vertices per axis")
    padded = np.pad(mask, 1, mode="wrap")
    structure = ndimage.generate_binary_structure(n, n if full else 1)
    lab, count = ndimage.label(padded, structure)
    shape = np.array(mask.shape)
    halo = np.ones(padded.shape, dtype=bool)
    halo[(slice(1, -1),) * n] = False
    pos = np.nonzero(halo & (lab > 0))
    p = np.stack(pos, axis=1) - 1
    k = np.floor_divide(p, shape)
    q = p - k * shape + 1
    a = lab[pos]
    b = lab[tuple(q.T)]
    edges = np.unique(np.column_stack([a, b, k]), axis=0) if len(a) else np.empty((0, 2 + n), int)
    return lab, count, edges


def _components_from_pieces(lab, count, edges, mask_shape):
    n = len(mask_shape)
    graph = coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(count + 1, count + 1)
    )
    _, comp = connected_components(graph, directed=False)
    core = lab[(slice(1, -1),) * n]
    fg = core > 0
    labels = np.zeros(mask_shape, dtype=np.int64)
    used, dense = np.unique(comp[core[fg]], return_inverse=True)
    labels[fg] = dense + 1
    # piece -> final label (0 for pieces living only in the halo)
    piece_label = np.zeros(count + 1, dtype=np.int64)
    if len(used):
        slot = np.minimum(np.searchsorted(used, comp), len(used) - 1)
        piece_label = np.where(used[slot] == comp, slot + 1, 0)
        piece_label[0] = 0
    return len(used), labels, piece_label


def _periodic_label(mask, full=False):
    lab, count, edges = _label_pieces(mask, full)
    nlab, labels, _ = _components_from_pieces(lab, count, edges, mask.shape)
    return nlab, labels


def _wrapping_components(mask, full):
    """Labels plus a flag per component: does it contain a non-contractible loop?"""
    lab, count, edges = _label_pieces(mask, full)
    nlab, labels, piece_label = _components_from_pieces(lab, count, edges, mask.shape)
    n = mask.ndim
    adj = {}
    wraps = np.zeros(nlab + 1, dtype=bool)
    for row in edges:
        a, b, k = int(row[0]), int(row[1]), row[2:]
        if a == b:
            if np.any(k):
                wraps[piece_label[a]] = True
            continue
        adj.setdefault(a, []).append((b, k))
        adj.setdefault(b, []).append((a, -k))
    lift = {}
    for start in adj:
        if start in lift:
            continue
        lift[start] = np.zeros(n, dtype=np.int64)
        queue = deque([start])
        while queue:
            a = queue.popleft()
            for b, k in adj[a]:
                # vertex of b equals vertex of a shifted by k periods
                want = lift[a] + k
                if b not in lift:
                    lift[b] = want
                    queue.append(b)
                elif np.any(lift[b] != want):
                    wraps[piece_label[a]] = True
    return nlab, labels, wraps[1:]


# ---------------------------------------------------------------------------
# observables


def component_count(field, u, side="excursion"):
    """Number of face-connected components of the set and their labels.

    Returns
    -------
    count : int
    labels : ndarray of int
        0 off the set, 1..count on it.
    """
    mask = level_mask(field, u, side)
    return _periodic_label(mask, full=False)


def _cell_counts(mask):
    """Number of d-cells of the cubical complex per axis subset, as anchor masks."""
    n = mask.ndim
    out = []
    for d in range(n + 1):
        for axes in combinations(range(n), d):
            cell = mask.copy()
            for c in range(1, 2**d):
                shift = [0] * n
                for j, a in enumerate(axes):
                    if (c >> j) & 1:
                        shift[a] = 1
                cell &= _roll_to(mask, shift)
            out.append((d, cell))
    return out


def _euler_of_mask(mask):
    return int(sum((-1) ** d * int(np.count_nonzero(cell)) for d, cell in _cell_counts(mask)))


def euler_characteristic(field, u, side="excursion") -> int:
    """Euler characteristic of the cubical complex of the set (torus identifications)."""
    return _euler_of_mask(level_mask(field, u, side))


def component_euler(mask, labels, count):
    """Euler characteristic of each labelled component (index 0 is component 1).

    Every cell lies inside one component, so it is charged to the label of
    its anchor vertex.
    """
    chi = np.zeros(count + 1, dtype=np.int64)
    for d, cell in _cell_counts(mask):
        chi += (-1) ** d * np.bincount(labels[cell], minlength=count + 1)
    return chi[1:]


def _face_neighbours(shape):
    """Flat-index neighbour arrays along each axis, both directions."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    out = []
    for a in range(len(shape)):
        out.append(np.roll(idx, -1, axis=a).ravel())
        out.append(np.roll(idx, 1, axis=a).ravel())
    return np.stack(out, axis=1)


def sublevel_persistence(field):
    """0-dimensional persistence of the sublevel filtration.

    Vertices enter in increasing value (ties by flat, i.e. lexicographic,
    index) and join their face neighbours already present. When two
    components merge the younger one dies (elder rule).

    Returns
    -------
    list of (birth_value, death_value, birth_vertex)
        ``death_value`` is ``inf`` for the surviving component.
        ``birth_vertex`` is a multi-index tuple.
    """
    vals = _values(field)
    shape = vals.shape
    flat = vals.ravel()
    order = np.argsort(flat, kind="stable")
    nbrs = _face_neighbours(shape)
    parent = np.full(flat.size, -1, dtype=np.int64)
    birth = {}
    pairs = []

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    rank = np.empty(flat.size, dtype=np.int64)
    rank[order] = np.arange(flat.size)
    for v in order:
        v = int(v)
        parent[v] = v
        roots = {find(int(w)) for w in nbrs[v] if parent[w] >= 0 and w != v}
        if not roots:
            birth[v] = v
            continue
        # oldest root is the one whose birth vertex entered first
        roots = sorted(roots, key=lambda r: rank[birth[r]])
        keep = roots[0]
        for r in roots[1:]:
            b = birth.pop(r)
            pairs.append((float(flat[b]), float(flat[v]), np.unravel_index(b, shape)))
            parent[r] = keep
        parent[v] = keep
    for r, b in birth.items():
        pairs.append((float(flat[b]), np.inf, np.unravel_index(b, shape)))
    pairs.sort(key=lambda p: (p[0], rank[np.ravel_multi_index(p[2], shape)]))
    return [(b, d, tuple(int(i) for i in v)) for b, d, v in pairs]


def running_count(pairs, u):
    """Component count of {f <= u} from persistence pairs."""
    births = np.array([p[0] for p in pairs])
    deaths = np.array([p[1] for p in pairs])
    return int(np.sum(births <= u) - np.sum(deaths <= u))


def _assign_points(points, mask, labels, spacing):
    """Component label of each critical point (0 when no cell corner is in the set).

    The point is attached to the in-set corner of its cell nearest to it.
    """
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    h = np.array(spacing)
    shape = np.array(mask.shape)
    base = np.floor(points.positions / h).astype(np.int64)
    frac = points.positions / h - base
    best = np.full(len(base), np.inf)
    out = np.zeros(len(base), dtype=np.int64)
    n = mask.ndim
    for c in range(2**n):
        corner = np.array([(c >> a) & 1 for a in range(n)])
        v = np.mod(base + corner, shape)
        inside = mask[tuple(v.T)]
        dist = np.sum(((frac - corner) * h) ** 2, axis=1)
        take = inside & (dist < best)
        best[take] = dist[take]
        out[take] = labels[tuple(v[take].T)]
    return out


def _points_for(field, u, side, points):
    from .critical import find_critical_points

    if points is None:
        if side == "excursion":
            points = find_critical_points(field, min_value=u)
        else:
            points = find_critical_points(field, max_value=u)
    sel = points.values >= u if side == "excursion" else points.values <= u
    return points.subset(sel)


def _ball_flags(field, u, side, mask, labels, count, points):
    """Per-component ball flag: one critical point (the right extremum) and chi = 1."""
    pts = _points_for(field, u, side, points)
    owner = _assign_points(pts, mask, labels, field.spacing)
    n_crit = np.bincount(owner, minlength=count + 1)[1:]
    extremum = field.n if side == "excursion" else 0
    n_ext = np.bincount(owner[pts.index == extremum], minlength=count + 1)[1:]
    chi = component_euler(mask, labels, count)
    return (n_crit == 1) & (n_ext == 1) & (chi == 1), pts


def ball_component_count(field: GridField, u, side="excursion", points=None) -> int:
    """Components holding exactly one critical point, a maximum (minimum for a sojourn), with chi = 1.

    ``points`` may be a precomputed :class:`CriticalPoints` covering at
    least the values on the chosen side of ``u``; otherwise the search is
    run restricted to that window.
    """
    mask = level_mask(field, u, side)
    u = _offset_level(field.values, u, side)
    count, labels = _periodic_label(mask)
    flags, _ = _ball_flags(field, u, side, mask, labels, count, points)
    return int(flags.sum())


def _nodal_faces(mask):
    """Components of the level-crossing (n-1)-faces.

    Returns the number of components, and for every component the label-free
    list of in-set endpoint vertices (as flat indices) of its crossing edges.
    """
    n = mask.ndim
    size = mask.size
    cross = [mask != _roll_to(mask, tuple(int(b == a) for b in range(n))) for a in range(n)]
    node = np.arange(n * size).reshape((n,) + mask.shape)
    rows, cols = [], []

    def link(sel, e1, e2):
        rows.append(e1[sel])
        cols.append(e2[sel])

    for a, b in combinations(range(n), 2):
        ea = tuple(int(c == a) for c in range(n))
        eb = tuple(int(c == b) for c in range(n))
        eab = tuple(int(c in (a, b)) for c in range(n))
        # the four edges of the square anchored at v in the (a, b) plane
        a0, a1 = node[a], _roll_to(node[a], eb)
        b0, b1 = node[b], _roll_to(node[b], ea)
        ca0, ca1 = cross[a], _roll_to(cross[a], eb)
        cb0, cb1 = cross[b], _roll_to(cross[b], ea)
        m00, m10, m01, m11 = mask, _roll_to(mask, ea), _roll_to(mask, eb), _roll_to(mask, eab)
        ncross = ca0.astype(int) + ca1 + cb0 + cb1
        two = ncross == 2
        # corners with both incident edges crossing; with four crossings only
        # the in-set corners are joined, keeping diagonal set vertices apart
        for both, fg, e1, e2 in (
            (ca0 & cb0, m00, a0, b0),
            (ca0 & cb1, m10, a0, b1),
            (ca1 & cb0, m01, a1, b0),
            (ca1 & cb1, m11, a1, b1),
        ):
            link(both & (two | fg), e1, e2)
        link(two & ca0 & ca1, a0, a1)
        link(two & cb0 & cb1, b0, b1)
    crossing = np.concatenate([c.ravel() for c in cross])
    ids = np.nonzero(crossing)[0]
    if len(ids) == 0:
        return 0, np.zeros(0, dtype=np.int64), ids
    remap = np.full(n * size, -1, dtype=np.int64)
    remap[ids] = np.arange(len(ids))
    r = remap[np.concatenate(rows)] if rows else np.zeros(0, dtype=np.int64)
    c = remap[np.concatenate(cols)] if cols else np.zeros(0, dtype=np.int64)
    graph = coo_matrix((np.ones(len(r)), (r, c)), shape=(len(ids), len(ids)))
    ncomp, comp = connected_components(graph, directed=False)
    # in-set endpoint of each crossing edge
    axis, flat = np.divmod(ids, size)
    start = np.unravel_index(flat, mask.shape)
    end = tuple(np.mod(s + (axis == a), m) for a, (s, m) in enumerate(zip(start, mask.shape)))
    inside_start = mask[start]
    fg_vertex = np.where(inside_start, flat, np.ravel_multi_index(end, mask.shape))
    return ncomp, comp, fg_vertex


def nodal_component_count(field: GridField, u, points=None):
    """Components of the level set {f = u} and how many bound a ball.

    The level set is the union of grid faces separating a vertex with
    f >= u from one with f < u. A nodal component counts as a sphere when
    its positive side is a ball component that has no other nodal component.

    Returns
    -------
    (n_nodal, n_sphere)
    """
    mask = level_mask(field, u, "excursion")
    ncomp, comp, fg_vertex = _nodal_faces(mask)
    if ncomp == 0:
        return 0, 0
    count, labels = _periodic_label(mask)
    u = _offset_level(field.values, u, "excursion")
    flags, _ = _ball_flags(field, u, "excursion", mask, labels, count, points)
    return ncomp, _sphere_count(comp, fg_vertex, labels, flags, ncomp)


def _sphere_count(comp, fg_vertex, labels, ball, ncomp):
    owner = labels.ravel()[fg_vertex]
    # one positive-side component per nodal component
    side_of = np.zeros(ncomp, dtype=np.int64)
    side_of[comp] = owner
    per_comp = np.bincount(side_of, minlength=len(ball) + 1)[1:]
    ok = ball & (per_comp == 1)
    return int(np.sum(ok[side_of - 1]))


def _betti_from(mask, b0, chi):
    n = mask.ndim
    if n not in (2, 3):
        raise ValueError("Betti numbers are implemented for n = 2 and 3 only")
    top = int(mask.all())
    if n == 2:
        return (b0, b0 + top - chi, top)
    if top:
        return (1, 3, 3, 1)
    ncomp, _, wraps = _wrapping_components(~mask, full=True)
    b2 = int(ncomp - wraps.sum())
    return (b0, b0 + b2 - chi, b2, 0)


def betti_numbers(field, u, side="excursion"):
    """Betti numbers (b_0, ..., b_n) of the set, n in {2, 3}.

    In 2-D, b_2 is 1 only for the whole torus and b_1 follows from chi. In
    3-D, b_2 counts complement components (full connectivity) containing no
    non-contractible loop of the torus, and b_1 follows from chi. Sets whose
    complement wraps while enclosing torus cycles themselves are outside the
    small-component regime this rule is meant for.
    """
    mask = level_mask(field, u, side)
    b0, _ = _periodic_label(mask)
    return _betti_from(mask, b0, _euler_of_mask(mask))


def _negate(field):
    if not isinstance(field, GridField):
        return -np.asarray(field, dtype=float)
    coef = None if field.coefficients is None else -field.coefficients
    return GridField(-field.values, field.sides, coef, field.provenance)


def _negate_points(points, n):
    from .critical import CriticalPoints

    index = np.where(points.index >= 0, n - points.index, points.index)
    return CriticalPoints(points.positions, -points.values, index, points.residuals,
                          points.min_abs_eig, points.dimension, points.failed_seeds, points.n_seeds)


def level_topology(field: GridField, u, side="excursion", points=None, *, with_balls=True):
    """Every observable of ``field`` at level ``u``.

    A sojourn set {f <= u} is analysed as the excursion set {-f >= -u}, so
    the two sides agree exactly under negation, nodal linking included.

    Parameters
    ----------
    points : CriticalPoints, optional
        Precomputed critical points of ``field`` covering the set. When
        ``with_balls`` is False no critical points are needed and the ball,
        sphere and critical-count entries are reported as -1 / empty.
    """
    _check_side(side)
    if side == "sojourn":
        neg_points = None if points is None else _negate_points(points, points.dimension)
        res = level_topology(_negate(field), -float(u), "excursion", neg_points, with_balls=with_balls)
        return replace(res, u=float(u), side="sojourn")
    vals = _values(field)
    uu = _offset_level(vals, u, side)
    mask = vals >= uu
    count, labels = _periodic_label(mask)
    chi = _euler_of_mask(mask)
    betti = _betti_from(mask, count, chi) if mask.ndim in (2, 3) else ()
    ncomp, comp, fg_vertex = _nodal_faces(mask)
    n_ball = n_sphere = -1
    crit = ()
    if with_balls:
        flags, pts = _ball_flags(field, uu, side, mask, labels, count, points)
        n_ball = int(flags.sum())
        # indices of -f, so that sum (-1)^i C_i = chi on either side
        crit = tuple(int(c) for c in pts.counts()[::-1])
        n_sphere = _sphere_count(comp, fg_vertex, labels, flags, ncomp) if ncomp else 0
    return LevelTopology(float(u), side, count, n_ball, ncomp, n_sphere, chi, betti, crit)
