from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tamedms import model as md


def linear_model(a: float, sigma: float = 0.0) -> md.ModelSpec:
    return md.ModelSpec(
        "linear", d=1, m=1, states=1,
        drift=lambda x, s: a * x,
        diffusion=lambda x, s: (sigma * x)[..., None],
        drift_jacobian=lambda x, s: np.full(x.shape + (1,), a),
        diffusion_jacobian=lambda x, s: np.full(x.shape[:-1] + (1, 1, 1), sigma),
        rho=0.0, commutative=True)


def test_tamed_drift_hand_value():
    m1 = md.get_model("M1")
    # b(2) = 2 - 8 = -6, denominator 1 + 2^4 / 4 = 5
    assert md.tamed_drift(m1, 4, np.array([2.0]), 0)[0] == pytest.approx(-1.2, abs=1e-15)


def test_tamed_drift_at_origin_is_raw_drift():
    m1 = md.get_model("M1")
    x = np.zeros(1)
    for s in (0, 1):
        np.testing.assert_array_equal(md.tamed_drift(m1, 16, x, s), m1.drift(x, s))


def test_tamed_drift_limit_bound():
    m1 = md.get_model("M1")
    x = np.linspace(-3, 3, 121)[:, None]
    s = np.zeros(len(x), dtype=int)
    b = m1.drift(x, s)[:, 0]
    for n in (4, 64, 1024):
        bn = md.tamed_drift(m1, n, x, s)[:, 0]
        bound = np.abs(b) * np.abs(x[:, 0]) ** 4 / n
        # the subtraction itself carries one ulp of |b|
        assert np.all(np.abs(bn - b) <= bound + 2 * np.finfo(float).eps * np.abs(b))


def test_infinite_n_disables_taming():
    m1 = md.get_model("M1")
    x = np.array([[3.0], [-7.5]])
    s = np.array([0, 1])
    np.testing.assert_array_equal(md.tamed_drift(m1, np.inf, x, s), m1.drift(x, s))


points = arrays(float, (2,), elements=st.floats(-50, 50, allow_nan=False))


@given(points, st.integers(1, 10_000), st.integers(0, 1))
def test_taming_keeps_direction_and_shrinks(x, n, s):
    m3 = md.get_model("M3")
    b = m3.drift(x, np.asarray(s))
    bn = md.tamed_drift(m3, n, x, np.asarray(s))
    assert np.linalg.norm(bn) <= np.linalg.norm(b)
    # positive multiple: bn = c b, 0 < c <= 1
    if np.linalg.norm(b) > 0:
        c = np.dot(bn, b) / np.dot(b, b)
        assert 0 < c <= 1
        np.testing.assert_allclose(bn, c * b, rtol=1e-12, atol=1e-300)


def test_rho1_defaults_to_three_rho():
    assert md.get_model("M1").rho1 == 6.0
    assert md.get_model("M2").rho1 == 0.0


def test_invalid_spec_rejected():
    m1 = md.get_model("M1")
    with pytest.raises(ValueError):
        replace(m1, rho=-1.0)
    with pytest.raises(ValueError):
        replace(m1, x0=(1.0, 2.0))


def test_cubic_one_sided_lipschitz():
    m1 = md.get_model("M1")
    rep = md.check_assumptions(m1, 10.0, 10_000, [16], np.random.default_rng(0))
    # state 0 has (x-y)(b(x)-b(y)) <= |x-y|^2; state 1 is dissipative
    assert rep.ratios["drift_one_sided"] <= 1.0 + 1e-9


def test_linear_lipschitz_constant_approaches_slope():
    rep = md.check_assumptions(linear_model(-2.5, 0.3), 1.0, 5000, [16], np.random.default_rng(1))
    assert rep.ratios["drift_one_sided"] == pytest.approx(-2.5, abs=1e-9)
    assert rep.ratios["diffusion_lipschitz"] == pytest.approx(0.09, abs=1e-12)


def test_h5_bounds_hold_with_recorded_constants():
    m1 = md.get_model("M1")
    n_list = [16, 64, 256]
    rep = md.check_assumptions(m1, 5.0, 2000, n_list, np.random.default_rng(2))
    c1, c2 = rep.ratios["tamed_growth_c1"], rep.ratios["tamed_growth_c2"]
    x = np.random.default_rng(3).uniform(-5, 5, size=(2000, 1))
    s = np.zeros(2000, dtype=int)
    for n in n_list:
        bn = np.abs(md.tamed_drift(m1, n, x, s)[:, 0])
        one = 1 + np.abs(x[:, 0])
        # a fresh sample stays inside the bound up to the sampling margin
        assert np.all(bn <= np.minimum(np.sqrt(n) * c1 * one, c2 * one ** 7) * 1.05)


def test_wrong_taming_is_flagged():
    m1 = md.get_model("M1")
    broken = replace(m1, rho1=0.0, taming=lambda x, s, n: np.zeros_like(x))
    small = md.check_assumptions(broken, 5.0, 2000, [16], np.random.default_rng(4))
    large = md.check_assumptions(broken, 10.0, 2000, [16], np.random.default_rng(4))
    assert "taming_gap" in small.flag_divergent(large)
    good_small = md.check_assumptions(m1, 5.0, 2000, [16], np.random.default_rng(4))
    good_large = md.check_assumptions(m1, 10.0, 2000, [16], np.random.default_rng(4))
    assert "taming_gap" not in good_small.flag_divergent(good_large)


def test_commutativity_single_column_is_zero():
    assert md.check_commutativity(md.get_model("M1")) == 0.0


def test_commutativity_hand_example():
    m3 = md.get_model("M3")
    rng = np.random.default_rng(5)
    res = md.check_commutativity(m3, 2.0, 256, rng)
    # residual at x is g |(x1, -x2)| with gain g <= 1; max over the box approaches 2 sqrt(2)
    x = np.random.default_rng(5).uniform(-2, 2, size=(256, 2))
    assert res == pytest.approx(np.max(np.linalg.norm(x, axis=1)), rel=1e-12)
    assert 0 < res <= 2 * np.sqrt(2)


def test_commutativity_scalar_state_two_columns():
    # d = 1 with sigma1 = x, sigma2 = 1: sigma1' sigma2 = 1 but sigma2' sigma1 = 0
    spec = md.ModelSpec(
        "scalar2", d=1, m=2, states=1,
        drift=lambda x, s: -x,
        diffusion=lambda x, s: np.stack([x, np.ones_like(x)], axis=-1),
        drift_jacobian=lambda x, s: -np.ones(x.shape + (1,)),
        diffusion_jacobian=lambda x, s: np.stack(
            [np.ones(x.shape[:-1] + (1, 1)), np.zeros(x.shape[:-1] + (1, 1))], axis=-3),
        rho=0.0)
    assert md.check_commutativity(spec) == pytest.approx(1.0)


def test_jacobian_check_linear():
    err = md.finite_difference_jacobian_check(linear_model(1.7, 0.4), [0.3], 0, 1e-5)
    assert err < 1e-10


def test_jacobian_check_cubic():
    assert md.finite_difference_jacobian_check(md.get_model("M1"), [1.0], 0, 1e-5) < 1e-8
    m3 = md.get_model("M3")
    for s in (0, 1):
        assert md.finite_difference_jacobian_check(m3, [0.7, -1.3], s, 1e-5) < 1e-8


def test_jacobian_check_sign_flip():
    m1 = md.get_model("M1")
    flipped = replace(m1, drift_jacobian=lambda x, s: -m1.drift_jacobian(x, s))
    assert md.finite_difference_jacobian_check(flipped, [0.3], 0, 1e-5) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(ValueError):
        md.finite_difference_jacobian_check(m1, [0.3], 0, 0.0)


@given(arrays(float, (3, 2), elements=st.floats(-3, 3)))
@settings(max_examples=30)
def test_batched_coefficients_match_pointwise(x):
    m3 = md.get_model("M3")
    s = np.array([0, 1, 0])
    for fn in (m3.drift, m3.diffusion, m3.drift_jacobian, m3.diffusion_jacobian):
        batch = fn(x, s)
        for i in range(3):
            np.testing.assert_array_equal(batch[i], fn(x[i], s[i]))


def test_m2_exact_solution():
    assert md.m2_exact(2.0, np.array([0.3, 0.7])) == pytest.approx(2.0 * np.exp(-0.4))


def test_catalog():
    assert md.get_model("M3").commutative is False
    assert md.get_model("M1").chain_dependent_diffusion()
    assert not md.get_model("M2").chain_dependent_diffusion()
    with pytest.raises(md.UnknownModel):
        md.get_model("M9")
