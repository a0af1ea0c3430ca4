import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planoforge.edgesim import (
    LatencyModel,
    LoadScenario,
    poisson_scenario,
    render_table2,
    run_load,
    steady_latency,
    table2,
)


@pytest.mark.parametrize("k", [0.0, 1.0, 10.0, 1e4])
def test_formula_n1_is_450(k):
    assert steady_latency(1, LatencyModel(mode="formula", scaling_factor=k)) == 450.0


def test_formula_n10():
    assert steady_latency(10, LatencyModel(mode="formula", scaling_factor=10, log_base=10)) == pytest.approx(460.0)


def test_fitted_rows():
    got = [r["response_time_ms"] for r in table2()]
    assert got == [450.0, 460.0, 475.0, 495.0, 497.0]
    assert round(table2()[-1]["latency_increase_pct"], 1) == 10.4
    assert "10.4%" in render_table2(table2())


@pytest.mark.parametrize("mode", ["fitted", "formula"])
def test_monotone_and_concave(mode):
    m = LatencyModel(mode=mode)
    n = np.arange(1, 30000, 7)
    lat = np.array([steady_latency(int(v), m) for v in n])
    assert np.all(np.diff(lat) >= 0)
    slopes = np.diff(lat) / np.diff(n)
    assert np.all(np.diff(slopes) <= 1e-9)


def test_bad_model():
    with pytest.raises(ValueError):
        LatencyModel(log_base=1.0)
    with pytest.raises(ValueError):
        LatencyModel(profile=((1, 450.0), (10, 440.0)))


def test_single_request():
    stats = run_load(LoadScenario(((0.0, 1),)), LatencyModel(provisioned_concurrency=1))
    assert stats.p50_ms == stats.p99_ms == steady_latency(1)
    assert stats.cold_starts == 0


def test_enough_provisioning_means_no_cold_starts():
    sc = poisson_scenario(30, 20, seed=3)
    peak = run_load(sc, LatencyModel()).max_in_flight
    assert run_load(sc, LatencyModel(provisioned_concurrency=peak)).cold_starts == 0


def test_replay_is_deterministic():
    sc = poisson_scenario(25, 10, seed=9)
    sc = LoadScenario(sc.arrivals, sc.duration_ms, 4, jitter_ms=20.0)
    assert run_load(sc) == run_load(sc)


def test_timestamps_must_be_sorted():
    with pytest.raises(ValueError):
        LoadScenario(((5.0, 1), (1.0, 1)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 30), st.floats(1.0, 60.0))
def test_less_provisioning_never_faster(seed, provisioned, rate):
    sc = poisson_scenario(rate, 5, seed=seed)
    more = run_load(sc, LatencyModel(provisioned_concurrency=provisioned + 5))
    less = run_load(sc, LatencyModel(provisioned_concurrency=provisioned))
    for q in ("p50_ms", "p95_ms", "p99_ms"):
        assert getattr(less, q) >= getattr(more, q) - 1e-9
