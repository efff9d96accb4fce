import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamedms import convergence as cv
from tamedms.chain import StepTooLarge
from tamedms.scheme import NotCommutative

N_LIST = [2 ** k for k in range(4, 10)]


def test_fit_exact_power_laws():
    fit = cv.fit_order([(n, 3.0 / n) for n in N_LIST])
    assert fit.order == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(fit.residuals)) < 1e-12
    assert cv.fit_order([(n, 0.2 / np.sqrt(n)) for n in N_LIST]).order == pytest.approx(0.5)


def test_fit_mixed_power_law_drifts_to_one():
    def err(n):
        return 1.0 / n + 10.0 / n ** 2
    whole = cv.fit_order([(n, err(n)) for n in N_LIST]).order
    assert 1.0 < whole < 2.0
    windows = [cv.fit_order([(n, err(n)) for n in N_LIST[i:i + 3]]).order for i in range(4)]
    assert all(b < a for a, b in zip(windows, windows[1:]))
    assert windows[-1] - 1.0 < 0.05


@given(st.floats(0.1, 2.0), st.floats(1e-3, 10.0))
def test_fit_recovers_any_slope(order, c):
    assert cv.fit_order([(n, c * n ** -order) for n in N_LIST]).order == pytest.approx(order, abs=1e-9)


def test_fit_rejects_degenerate():
    with pytest.raises(cv.DegenerateErrors):
        cv.fit_order([(16, 0.1), (32, 0.0), (64, 0.02)])
    with pytest.raises(ValueError):
        cv.fit_order([(16, 0.1), (32, 0.05)])


def small(**kw):
    base = dict(model="M1", schemes=["tamed_milstein", "tamed_em"], n_list=[16, 32, 64],
                n_ref=512, samples=60, seed=3, x0=[0.25], chunk_size=25)
    base.update(kw)
    return cv.ExperimentConfig(**base)


def test_zero_model_reports_exact():
    rep = cv.run_experiment(small(model="zero", x0=None, schemes=["tamed_milstein"]))
    assert all(e.error == 0.0 for e in rep.estimates)
    assert rep.order("tamed_milstein") == "exact"


@pytest.mark.parametrize("kw, exc", [
    (dict(n_ref=256), cv.ConfigError),
    (dict(n_list=[16, 48], n_ref=1024), cv.ConfigError),
    (dict(samples=1), cv.ConfigError),
    (dict(model="M3", x0=None, schemes=["commutative_milstein"]), NotCommutative),
    (dict(generator=[[-20, 20], [20, -20]]), StepTooLarge),
    (dict(reference="exact"), cv.ConfigError),
])
def test_config_invariants(kw, exc):
    with pytest.raises(exc):
        small(**kw).validate()


def test_report_shape_and_monotone_errors():
    rep = cv.run_experiment(small(samples=100))
    assert len(rep.csv_rows()) == 6
    for scheme in ("tamed_milstein", "tamed_em"):
        est = [rep.estimate(scheme, n) for n in (16, 32, 64)]
        for a, b in zip(est, est[1:]):
            assert b.error <= a.error + 2 * np.hypot(a.stderr, b.stderr)
        assert all(e.blow_ups == 0 and e.error >= 0 for e in est)
    d = rep.as_dict()
    assert d["config"]["seed"] == 3 and d["config_digest"] == rep.config_digest


def test_parallel_and_chunking_do_not_change_numbers():
    serial = cv.run_experiment(small())
    threaded = cv.run_experiment(small(workers=3))
    rechunked = cv.run_experiment(small(chunk_size=7))
    assert serial.csv_rows() == threaded.csv_rows() == rechunked.csv_rows()
    assert serial.config_digest == threaded.config_digest


def test_ordered_sum_is_order_fixed():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((1000, 4)) * 10.0 ** rng.integers(-8, 8, size=(1000, 1))
    assert cv._ordered_sum(a).tobytes() == cv._ordered_sum(a.copy(order="F")).tobytes()


def test_seed_changes_results():
    a = cv.run_experiment(small(samples=30)).csv_rows()
    b = cv.run_experiment(small(samples=30, seed=4)).csv_rows()
    assert a != b


def test_m2_exact_reference_first_order():
    cfg = cv.ExperimentConfig(model="M2", schemes=["tamed_milstein"], n_list=[16, 32, 64, 128],
                              n_ref=1024, samples=200, seed=5, reference="exact")
    fit = cv.run_experiment(cfg).order("tamed_milstein")
    assert 0.85 <= fit.order <= 1.15


def test_ablation_needs_switching_diffusion():
    with pytest.raises(cv.AblationVacuous):
        cv.ablation_study(small(model="M2", x0=None))


def test_ablation_report_fields():
    res = cv.ablation_study(small(samples=40))
    assert set(res["error_ratio"]) == {"16", "32", "64"}
    assert res["order_gap"] == pytest.approx(res["full_order"] - res["ablated_order"])


def test_diagnostics_zero_generator():
    cfg = small(generator=[[0, 0], [0, 0]], samples=20)
    diag = cv.run_diagnostics(cfg, jump_samples=1000)
    for stat in diag["jump_statistics"].values():
        assert stat["mean"]["value"] == 0.0
        assert all(v["p"] == 0.0 for v in stat["tail"].values())
    assert diag["mean_jumps_slope"] is None
    assert set(diag["moments"]) == {"16", "32", "64"}


def test_diagnostics_tail_bound():
    cfg = small(n_list=[64], n_ref=512, samples=10)
    diag = cv.run_diagnostics(cfg, jump_samples=100_000)
    stat = diag["jump_statistics"]["64"]
    assert stat["tail_bound_holds"]["2"]
    assert stat["second_moment_ok"]


def test_kendall_trend():
    assert cv.kendall_trend([1, 2, 3, 4, 5])["tau"] == pytest.approx(1.0)
    assert cv.kendall_trend([1, 2, 3, 4, 5])["trend"]
    assert not cv.kendall_trend([2.0, 2.0, 2.0])["trend"]
    assert not cv.kendall_trend([1.0, 3.0, 2.0, 1.5, 2.5, 1.2])["trend"]


def test_moment_profile_bounded_for_tamed():
    prof = cv.moment_profile(small(schemes=["tamed_milstein"], x0=[1.0], samples=50))
    assert all(np.isfinite(v) and v < 10 for v in prof.values())
