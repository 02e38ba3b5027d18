import math

import numpy as np
import pytest

from rftopo.covariance import make_model
from rftopo.theory import (
    AsymptoticRegimeWarning,
    box,
    error_regime,
    expected_components_asymptotic,
    expected_euler,
    gaussian_tail,
    hermite,
    interval,
    lk_curvatures,
    nazarov_sodin_cz,
    torus,
)


def test_hermite_values():
    assert hermite(2, 3.0) == pytest.approx(8.0)
    np.testing.assert_array_equal(hermite(0, np.linspace(-3, 3, 7)), 1.0)
    assert hermite(-1, 0.0) == pytest.approx(math.sqrt(2 * math.pi) / 2)


def test_hermite_minus_one_is_scaled_tail():
    x = np.linspace(-2, 5, 8)
    np.testing.assert_allclose(
        hermite(-1, x), math.sqrt(2 * math.pi) * np.exp(x * x / 2) * gaussian_tail(x), rtol=1e-12
    )


def test_hermite_recurrence():
    x = np.linspace(-4, 4, 41)
    for j in range(1, 10):
        np.testing.assert_allclose(
            hermite(j + 1, x), x * hermite(j, x) - j * hermite(j - 1, x), atol=1e-9
        )


def test_hermite_derivative():
    x = np.linspace(-3, 3, 13)
    h = 1e-5
    for j in range(1, 9):
        fd = (hermite(j, x + h) - hermite(j, x - h)) / (2 * h)
        np.testing.assert_allclose(fd, j * hermite(j - 1, x), atol=1e-6 * max(1.0, math.factorial(j)))


def test_hermite_orthogonality():
    nodes, weights = np.polynomial.hermite_e.hermegauss(200)
    weights = weights / math.sqrt(2 * math.pi)
    for j in range(9):
        for k in range(9):
            val = np.sum(weights * hermite(j, nodes) * hermite(k, nodes))
            expect = math.factorial(j) if j == k else 0.0
            assert val == pytest.approx(expect, abs=1e-8)


def test_lk_curvatures():
    assert lk_curvatures(box(1.0, 1.0), np.eye(2)).values == pytest.approx((1, 2, 1))
    assert lk_curvatures(torus(50.0, 50.0), np.eye(2)).values == pytest.approx((0, 0, 2500))
    assert lk_curvatures(interval(7.0), np.eye(1)).values == pytest.approx((1, 7))


def test_lk_curvatures_scale_with_metric():
    lk = lk_curvatures(torus(10.0, 10.0), np.eye(2) / 2)
    assert lk.values[2] == pytest.approx(50.0)


def test_expected_euler_values():
    lk = lk_curvatures(interval(10.0), np.eye(1))
    assert expected_euler(lk, 0.0) == pytest.approx(0.5 + 10 / (2 * math.pi))
    lk = lk_curvatures(torus(50.0, 50.0), np.eye(2))
    assert expected_euler(lk, 3.0) == pytest.approx(5.290, abs=5e-4)
    assert expected_euler(lk, 0.0) == 0.0


def test_component_asymptotics():
    m = make_model("bargmann_fock", 2)
    dom = torus(40.0, 40.0)
    with pytest.warns(AsymptoticRegimeWarning):
        lead = expected_components_asymptotic(dom, m, 3.0)
        refined = expected_components_asymptotic(dom, m, 3.0, refined=True)
    assert lead == pytest.approx(3.386, abs=5e-4)
    assert refined == pytest.approx(lead)


def test_refined_3d_ratio():
    m = make_model("bargmann_fock", 3)
    dom = torus(10.0, 10.0, 10.0)
    for u in (2.0, 3.5):
        with pytest.warns(AsymptoticRegimeWarning):
            ratio = expected_components_asymptotic(dom, m, u, refined=True) / (
                expected_components_asymptotic(dom, m, u)
            )
        assert ratio == pytest.approx(1 - u**-2)


def test_component_asymptotic_rejects_nonpositive_level():
    with pytest.raises(ValueError):
        expected_components_asymptotic(torus(10.0, 10.0), make_model("bargmann_fock", 2), 0.0)


def test_error_regime_tags():
    assert error_regime(False) != error_regime(True)


def test_nodal_density_constant():
    direct = (2 * math.pi) ** -1.5 * 3.0 * math.exp(-4.5)
    assert nazarov_sodin_cz(make_model("bargmann_fock", 2), 3.0) == pytest.approx(direct, rel=1e-12)
    assert direct == pytest.approx(2.116e-3, abs=1e-6)
    u = 2.2
    rw = nazarov_sodin_cz(make_model("random_waves", 2), u)
    assert rw == pytest.approx(0.5 * (2 * math.pi) ** -1.5 * u * math.exp(-u * u / 2))
