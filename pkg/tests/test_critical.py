import csv
import math

import numpy as np
import pytest

from conftest import grid
from rftopo.covariance import make_model
from rftopo.critical import count_by_index_below, find_critical_points, write_critical_csv
from rftopo.sampler import GridField, eval_spectral, sample_torus

BF2 = make_model("bargmann_fock", 2)


def cos_cos(L=32.0, m=64, phase=0.3):
    x, y = grid((m, m), (L, L))
    vals = np.cos(2 * math.pi * (x + phase) / L) * np.cos(2 * math.pi * (y + phase) / L)
    return GridField.from_values(vals, (L, L))


def test_cos_cos_critical_points():
    pts = find_critical_points(cos_cos())
    assert len(pts) == 8
    assert tuple(pts.counts()) == (2, 4, 2)
    np.testing.assert_allclose(np.sort(pts.values), [-1, -1, 0, 0, 0, 0, 1, 1], atol=1e-12)


def test_cos_cos_counts_below():
    pts = find_critical_points(cos_cos())
    assert tuple(count_by_index_below(pts, 0.5)) == (2, 4, 0)
    assert tuple(count_by_index_below(pts, math.inf)) == (2, 4, 2)
    assert tuple(count_by_index_below(pts, -2.0)) == (0, 0, 0)


def test_alternating_sum_vanishes_on_torus():
    for r in range(5):
        pts = find_critical_points(sample_torus(BF2, (32, 32), (128, 128), 21, r))
        c = pts.counts()
        assert c[0] - c[1] + c[2] == 0
        assert np.all(pts.index >= 0)


def _discrete_minima(vals):
    is_min = np.ones(vals.shape, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_min &= vals < np.roll(vals, (dx, dy), axis=(0, 1))
    return int(is_min.sum())


def test_minima_match_discrete_minima():
    # h = 1/8; on coarse grids min/saddle pairs inside one cell hide discrete
    # minima, and shallow valleys between vertices fake a few
    discrete = found = 0
    for r in range(4):
        f = sample_torus(BF2, (32, 32), (256, 256), 22, r)
        discrete += _discrete_minima(f.values)
        found += int(find_critical_points(f).counts()[0])
    assert abs(found - discrete) <= 0.02 * discrete


def test_points_are_converged_roots():
    f = sample_torus(BF2, (32, 32), (128, 128), 23, 0)
    pts = find_critical_points(f)
    _, g, hess = eval_spectral(f, pts.positions)
    tol = 1e-9
    assert np.all(np.linalg.norm(g, axis=1) < tol)
    assert np.all(pts.residuals < tol)
    assert np.all((pts.positions >= 0) & (pts.positions < 32))
    idx = (np.linalg.eigvalsh(hess) < 0).sum(axis=1)
    np.testing.assert_array_equal(idx, pts.index)
    assert np.all(np.diff(pts.values) >= 0)


def test_points_are_distinct():
    f = sample_torus(BF2, (32, 32), (128, 128), 24, 0)
    pts = find_critical_points(f)
    d = pts.positions[:, None, :] - pts.positions[None, :, :]
    d = (d + 16) % 32 - 16
    dist = np.sqrt((d**2).sum(-1)) + np.eye(len(pts)) * 1e9
    assert dist.min() > 1e-6 * 0.25


def test_level_window_matches_full_search():
    f = sample_torus(BF2, (32, 32), (128, 128), 25, 0)
    full = find_critical_points(f)
    win = find_critical_points(f, min_value=1.0)
    sel = full.values >= 1.0
    np.testing.assert_allclose(win.values, full.values[sel], atol=1e-12)
    np.testing.assert_array_equal(win.index, full.index[sel])


def test_refinement_leaves_points_unchanged():
    # the critical set belongs to the trigonometric polynomial, not the grid
    f = sample_torus(BF2, (32, 32), (64, 64), 26, 0)
    m = 128
    coef = np.zeros((m, m), dtype=complex)
    k = np.fft.fftfreq(64, d=1 / 64).astype(int) % m
    coef[np.ix_(k, k)] = f.coefficients
    fine = GridField.from_values(np.fft.ifftn(coef * m * m).real, f.sides)
    a, b = find_critical_points(f), find_critical_points(fine)
    assert len(a) == len(b)
    np.testing.assert_allclose(a.values, b.values, atol=1e-9)


def test_requires_spectrum():
    with pytest.raises(ValueError):
        find_critical_points(GridField(np.zeros((8, 8)), (8.0, 8.0)))


def test_one_dimensional_field():
    m = make_model("bargmann_fock", 1)
    f = sample_torus(m, (100.0,), (1024,), 27, 0)
    pts = find_critical_points(f)
    c = pts.counts()
    assert c[0] == c[1]
    # count agrees with sign changes of the derivative on the grid
    g = f.spectral_gradient()[0]
    assert c.sum() == int(np.sum(np.sign(g) != np.sign(np.roll(g, -1))))


def test_csv_output(tmp_path):
    pts = find_critical_points(cos_cos())
    write_critical_csv(tmp_path / "c.csv", pts)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["x0", "x1", "value", "index"]
    assert len(rows) == 9
    assert float(rows[1][2]) == pts.values[0]
