import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tamedms import noise as nz
from tamedms.chain import TimeOutOfRange
from tamedms.rng import stream


def test_single_increment_grid():
    g = nz.generate_brownian(1, 1.0, 1, np.random.default_rng(0))
    assert g.increments.shape == (1, 1)
    np.testing.assert_array_equal(g.cumulative, [[0.0], g.increments[0]])


def test_increment_variance():
    n = 2 ** 14
    pooled = np.concatenate([nz.generate_brownian(2, 1.0, n, stream(3, s, "brownian")).increments
                             for s in range(100)])
    for l in range(2):
        x = pooled[:, l]
        var = x.var(ddof=1)
        se = (1.0 / n) * np.sqrt(2.0 / (x.size - 1))
        assert abs(var - 1.0 / n) <= 3 * se


def test_same_seed_same_grid():
    a = nz.generate_brownian(2, 1.0, 64, stream(9, 4, "brownian"))
    b = nz.generate_brownian(2, 1.0, 64, stream(9, 4, "brownian"))
    assert a.increments.tobytes() == b.increments.tobytes()


def test_coarse_increment():
    g = nz.generate_brownian(2, 1.0, 4, np.random.default_rng(1))
    np.testing.assert_array_equal(nz.coarse_increment(g, 4, 3), g.increments[3])
    two = nz.coarse_increment(g, 2, 0)
    np.testing.assert_array_equal(two, g.cumulative[2] - g.cumulative[0])
    np.testing.assert_array_equal(two, g.increments[0] + g.increments[1])
    with pytest.raises(nz.GridMismatch):
        nz.coarse_increment(g, 3, 0)


@given(st.integers(0, 6), st.integers(0, 2 ** 31))
def test_coarsening_is_telescoping(level, seed):
    g = nz.generate_brownian(1, 1.0, 64, np.random.default_rng(seed))
    n = 2 ** level
    inc = nz.coarse_increments(g, n)
    assert inc.shape == (n, 1)
    np.testing.assert_allclose(inc.sum(axis=0), g.cumulative[-1], atol=1e-14)
    r = 64 // n
    for k in range(n):
        manual = g.increments[k * r].copy()
        for j in range(k * r + 1, (k + 1) * r):
            manual += g.increments[j]
        np.testing.assert_array_equal(inc[k], manual)


def test_value_at_grid_point_is_stored_value():
    g = nz.generate_brownian(1, 1.0, 8, np.random.default_rng(2))
    np.testing.assert_array_equal(nz.value_at(g, 0.375), g.cumulative[3])
    assert g.bridge_cache == {}


def test_bridge_moments():
    h = 1.0 / 8
    g = nz.grid_from_increments([0.3, -0.1, 0.2, 0.05, 0.0, 0.1, -0.2, 0.4], T=1.0)
    rng = np.random.default_rng(3)
    draws = np.array([nz.value_at(g, h / 2, rng, cache=False)[0] for _ in range(100_000)])
    wa, wb = g.cumulative[0, 0], g.cumulative[1, 0]
    se_mean = np.sqrt(h / 4 / draws.size)
    assert abs(draws.mean() - (wa + wb) / 2) <= 3 * se_mean
    se_var = (h / 4) * np.sqrt(2.0 / (draws.size - 1))
    assert abs(draws.var(ddof=1) - h / 4) <= 3 * se_var


def test_bridge_cache_and_out_of_range():
    g = nz.generate_brownian(2, 1.0, 8, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    first = nz.value_at(g, 0.3, rng)
    again = nz.value_at(g, 0.3, rng)
    assert first is again
    before = g.increments.copy()
    nz.value_at(g, 0.31, rng)
    np.testing.assert_array_equal(g.increments, before)
    with pytest.raises(TimeOutOfRange):
        nz.value_at(g, 1.2, rng)
    with pytest.raises(ValueError):
        nz.value_at(g, 0.55)


def test_bridge_conditions_on_nearest_known_values():
    # second query inside the same fine step brackets against the cached first one
    g = nz.grid_from_increments([1.0], T=1.0)
    g.bridge_cache[0.5] = np.array([10.0])
    g.bridge_times.append(0.5)
    a, b, wa, wb = nz._known_neighbours(g, 0.75)
    assert (a, b) == (0.5, 1.0)
    assert wa[0] == 10.0 and wb[0] == 1.0


def test_iterated_m1_modes_agree():
    g = nz.generate_brownian(1, 1.0, 64, np.random.default_rng(6))
    for k in range(8):
        a = nz.iterated_integrals(g, 8, k, "exact_diagonal")
        b = nz.iterated_integrals(g, 8, k, "fine_sum")
        dw = nz.coarse_increment(g, 8, k)[0]
        assert a.values[0, 0] == b.values[0, 0] == (dw * dw - 1 / 8) / 2


def test_iterated_zero_increment():
    g = nz.grid_from_increments(np.zeros((16, 2)), T=1.0)
    it = nz.iterated_integrals(g, 4, 1, "fine_sum")
    np.testing.assert_array_equal(np.diag(it.values), [-1 / 8, -1 / 8])


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 4, 8]))
@settings(max_examples=30)
def test_diagonal_identity(seed, coarse_n):
    g = nz.generate_brownian(3, 1.0, 32, np.random.default_rng(seed))
    h = 1.0 / coarse_n
    for k in range(coarse_n):
        dw = nz.coarse_increment(g, coarse_n, k)
        for mode in ("exact_diagonal", "fine_sum"):
            it = nz.iterated_integrals(g, coarse_n, k, mode)
            assert np.max(np.abs(np.diag(it.values) - (dw ** 2 - h) / 2)) <= 4 * np.finfo(float).eps * h
        sym = nz.iterated_integrals(g, coarse_n, k, "exact_diagonal")
        assert sym.symmetry_residual(dw) <= 1e-15


def test_fine_sum_symmetrisation_residual_shrinks():
    # residual of the left-point sum is -sum_j dW0_j dW1_j, RMS h / sqrt(r)
    h = 1.0 / 16
    rms = {}
    for r in (4, 16, 64):
        res = []
        for s in range(63):
            g = nz.generate_brownian(2, 1.0, 16 * 64, stream(11, s, "brownian"))
            for k in range(16):
                it = nz.iterated_integrals(g, 16, k, "fine_sum", refinement_ratio=r)
                dw = nz.coarse_increment(g, 16, k)
                res.append(it.values[0, 1] + it.values[1, 0] - dw[0] * dw[1])
        rms[r] = float(np.sqrt(np.mean(np.square(res))))
        assert rms[r] == pytest.approx(h / np.sqrt(r), rel=0.1)
    slope = np.polyfit(np.log([4, 16, 64]), np.log([rms[r] for r in (4, 16, 64)]), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.15)


def test_refinement_ratio_must_divide():
    g = nz.generate_brownian(2, 1.0, 64, np.random.default_rng(0))
    with pytest.raises(nz.GridMismatch):
        nz.iterated_integrals(g, 16, 0, "fine_sum", refinement_ratio=3)
