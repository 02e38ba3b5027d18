import math

import numpy as np
import pytest

from rftopo.spinglass import (
    SpinGlassModel,
    brute_force_crit_search,
    complexity_probe,
    energy_threshold,
    eval_sphere,
    expected_crit_goe,
    make_spin_glass,
    sample_goe,
    tangent_basis,
)


def on_sphere(n, rng):
    x = rng.standard_normal(n)
    return x * math.sqrt(n) / np.linalg.norm(x)


def geodesic(x, v, t):
    """Point at arc length t along the great circle through x with unit tangent v."""
    r = np.linalg.norm(x)
    return x * math.cos(t / r) + r * v * math.sin(t / r)


def test_p2_critical_points_are_scaled_eigenvectors():
    model = make_spin_glass(2, 5, 3)
    evals, evecs = np.linalg.eigh(model.symmetric)
    for k in range(5):
        x = math.sqrt(5) * evecs[:, k]
        f, g, _ = eval_sphere(model, x)
        assert np.linalg.norm(g) < 1e-10
        assert f == pytest.approx(model.scale * 5 * evals[k], rel=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for p, n in [(2, 4), (3, 5), (4, 3)]:
        model = make_spin_glass(p, n, 7)
        x = on_sphere(n, rng)
        v = tangent_basis(x) @ rng.standard_normal(n - 1)
        v /= np.linalg.norm(v)
        h = 1e-5
        fd = (eval_sphere(model, geodesic(x, v, h))[0] - eval_sphere(model, geodesic(x, v, -h))[0]) / (2 * h)
        g = eval_sphere(model, x)[1]
        assert abs(fd - g @ v) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_hessian_is_second_derivative_along_geodesics():
    rng = np.random.default_rng(1)
    model = make_spin_glass(3, 4, 2)
    x = on_sphere(4, rng)
    v = tangent_basis(x) @ rng.standard_normal(3)
    v /= np.linalg.norm(v)
    h = 1e-4
    f0 = eval_sphere(model, x)[0]
    fp = eval_sphere(model, geodesic(x, v, h))[0]
    fm = eval_sphere(model, geodesic(x, v, -h))[0]
    hess = eval_sphere(model, x)[2]
    assert (fp - 2 * f0 + fm) / h**2 == pytest.approx(v @ hess @ v, abs=1e-5)
    # the Hessian annihilates the normal direction
    assert np.allclose(hess @ x, 0, atol=1e-10)


def test_batch_evaluation_matches_single():
    rng = np.random.default_rng(2)
    model = make_spin_glass(3, 4, 0)
    xs = np.array([on_sphere(4, rng) for _ in range(5)])
    vals, grads, hess = eval_sphere(model, xs)
    for k, x in enumerate(xs):
        v, g, h = eval_sphere(model, x)
        assert vals[k] == pytest.approx(v)
        assert np.allclose(grads[k], g) and np.allclose(hess[k], h)


def test_variance_over_redraws_is_n():
    n, p = 4, 3
    x = on_sphere(n, np.random.default_rng(3))
    vals = np.array([eval_sphere(make_spin_glass(p, n, s), x)[0] for s in range(10**4)])
    se = vals.var() * math.sqrt(2 / len(vals))
    assert abs(vals.var() - n) < 3 * se


def test_covariance_spot_check():
    n, p = 3, 3
    rng = np.random.default_rng(4)
    x, y = on_sphere(n, rng), on_sphere(n, rng)
    fx, fy = [], []
    for s in range(10**4):
        m = make_spin_glass(p, n, s)
        fx.append(eval_sphere(m, x)[0])
        fy.append(eval_sphere(m, y)[0])
    prod = np.array(fx) * np.array(fy)
    target = n ** (1 - p) * (x @ y) ** p
    assert abs(prod.mean() - target) < 4 * prod.std() / math.sqrt(len(prod))


def test_rejects_off_sphere_and_oversized_models():
    model = make_spin_glass(3, 3, 0)
    with pytest.raises(ValueError):
        eval_sphere(model, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        make_spin_glass(4, 100, 0)
    with pytest.raises(ValueError):
        make_spin_glass(1, 3, 0)


def test_tangent_basis_is_orthonormal_and_normal_to_x():
    rng = np.random.default_rng(5)
    for x in [on_sphere(5, rng), np.sqrt(5) * np.eye(5)[0]]:
        q = tangent_basis(x)
        assert np.allclose(q.T @ q, np.eye(4), atol=1e-12)
        assert np.allclose(q.T @ x, 0, atol=1e-12)


def test_goe_edge_at_sqrt2():
    lam = np.linalg.eigvalsh(sample_goe(200, 20, np.random.default_rng(6)))
    assert abs(lam[:, 0].mean() + math.sqrt(2)) < 0.1
    assert abs(lam[:, -1].mean() - math.sqrt(2)) < 0.1


def test_threshold_identity():
    for p in (2, 3, 4, 7):
        e = energy_threshold(p)
        assert math.sqrt(p / (2 * (p - 1))) * e == pytest.approx(math.sqrt(2))
    assert energy_threshold(2) == pytest.approx(math.sqrt(2))


@pytest.mark.filterwarnings("ignore:only .* GOE samples")
def test_minima_dominate_deep_below_threshold():
    c0, _ = expected_crit_goe(3, 20, 0, -1.8, 10**5, seed=1)
    c1, _ = expected_crit_goe(3, 20, 1, -1.8, 10**5, seed=1)
    assert c0 > 0 and c1 / c0 < 0.2


@pytest.mark.filterwarnings("ignore:only .* GOE samples")
def test_goe_estimate_increases_with_level():
    lo, _ = expected_crit_goe(3, 20, 0, -1.9, 10**4, seed=2)
    hi, _ = expected_crit_goe(3, 20, 0, -1.7, 10**4, seed=2)
    assert lo < hi


def test_goe_estimate_warns_when_threshold_unreachable():
    with pytest.warns(UserWarning):
        expected_crit_goe(3, 20, 0, -3.0, 1000, seed=0)
    with pytest.raises(ValueError):
        expected_crit_goe(3, 5, 5, -1.0)


def test_complexity_probe_gaps_shrink():
    rows, gaps = complexity_probe(3, -1.8, (10, 20, 40), 10**4, seed=0)
    assert [r[0] for r in rows] == [10, 20, 40]
    assert abs(gaps[1]) < abs(gaps[0])
    with pytest.raises(ValueError):
        complexity_probe(3, -1.0, (10, 20))


def test_brute_force_p2_finds_eigenvector_pairs():
    for seed in range(5):
        pts = brute_force_crit_search(make_spin_glass(2, 4, seed), 2000, seed=seed)
        assert len(pts.values) == 8
        assert list(pts.counts(4)) == [2, 2, 2, 2]
        assert pts.failed == 0


def test_brute_force_p3_euler_and_residuals():
    for seed in range(12):
        pts = brute_force_crit_search(make_spin_glass(3, 3, seed), 2000, seed=seed)
        assert pts.euler() == 2
        assert np.all(pts.residuals < 1e-9)
        # cubic forms are odd: minima and maxima pair up
        c = pts.counts(3)
        assert c[0] == c[2]


def test_brute_force_negation_reverses_indices():
    m = make_spin_glass(3, 3, 4)
    neg = SpinGlassModel(m.p, m.n, m.seed, -m.coefficients)
    a = brute_force_crit_search(m, 2000, seed=0)
    b = brute_force_crit_search(neg, 2000, seed=0)
    assert list(b.counts(3)) == list(a.counts(3)[::-1])


def test_brute_force_agrees_with_goe_formula():
    counts = np.array(
        [brute_force_crit_search(make_spin_glass(3, 3, s), 2000, seed=s).counts(3) for s in range(40)]
    )
    for i in range(3):
        goe, goe_se = expected_crit_goe(3, 3, i, math.inf, 10**5, seed=0)
        se = math.hypot(counts[:, i].std(ddof=1) / math.sqrt(len(counts)), goe_se)
        assert abs(counts[:, i].mean() - goe) < 4 * se
