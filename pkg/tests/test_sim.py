import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointsched.demand import BinomialMinislot
from jointsched.experiments import linear_sanity_config
from jointsched.model import LogUtility, Monomial, SystemConfig
from jointsched.schedulers import Scheduler, SchedulerSpec, StaticScheduler
from jointsched.sim import SimulationError, UrllcQueue, run_simulation, sum_utility, urllc_queue_step


def test_queue_burst_is_served_over_three_minislots():
    q = UrllcQueue(0.1)
    delays = []
    for arrival in (0.3, 0.0, 0.0, 0.0):
        _, dl = urllc_queue_step(q, arrival)
        delays += dl
    assert [d for _, d in delays] == [0, 1, 2]
    assert np.allclose([v for v, _ in delays], 0.1)
    assert q.backlog == pytest.approx(0.0, abs=1e-15)


def test_queue_rate_matched_arrivals_never_wait():
    q = UrllcQueue(0.1)
    for _ in range(50):
        served, dl = urllc_queue_step(q, 0.1)
        assert served == pytest.approx(0.1)
        assert all(d == 0 for _, d in dl)


def test_queue_rejects_negative_arrivals():
    with pytest.raises(ValueError):
        urllc_queue_step(UrllcQueue(0.1), -0.5)


@settings(max_examples=50, deadline=None)
@given(arrivals=st.lists(st.floats(0, 0.5), min_size=1, max_size=40))
def test_queue_conserves_volume(arrivals):
    q = UrllcQueue(0.125)
    for a in arrivals:
        urllc_queue_step(q, a)
    assert q.arrived == pytest.approx(q.served + q.backlog, abs=1e-12)


def test_sum_utility_examples():
    utils = (LogUtility(), LogUtility(1.0))
    assert sum_utility([2.0, 1.0], utils) == pytest.approx(np.log(2) + 1.0)
    with pytest.raises(ValueError):
        sum_utility([0.0, 1.0], utils)


def test_same_seed_gives_identical_trace_bytes(tmp_path, two_by_two):
    paths = []
    for name in ("a", "b"):
        trace = run_simulation(two_by_two, "sa", seed=11, slots=200, record=True)
        path = tmp_path / f"{name}.csv"
        trace.write_csv(path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    other = run_simulation(two_by_two, "sa", seed=12, slots=200)
    assert not np.allclose(other.summary.mean_rates, trace.summary.mean_rates)


@pytest.mark.parametrize("spec", ["sa", "gradient-rp", "gradient-random", "static-opportunistic"])
def test_trace_invariants(two_by_two, spec):
    rec = run_simulation(two_by_two, spec, seed=3, slots=300, record=True).records
    peak = two_by_two.peak_rates[:, rec["state"]].T
    assert np.all(rec["rates"] <= peak * rec["phi"] + 1e-12)
    assert np.all(rec["rates"] >= -1e-12)
    assert np.allclose(rec["loads"].sum(axis=1), rec["demand"].sum(axis=1), atol=1e-9)
    assert np.allclose(rec["phi"].sum(axis=1), 1.0)


def test_blocking_and_conservation(two_by_two):
    summary = run_simulation(two_by_two, "gradient-rp", seed=0, slots=500).summary
    assert summary.arrived_volume == pytest.approx(summary.served_volume + summary.blocked_volume)
    assert summary.backlog == 0.0


def test_queue_mode_records_delays(two_by_two):
    summary = run_simulation(two_by_two, "gradient-rp", seed=0, slots=300, queue=True).summary
    assert summary.blocked_volume == 0.0
    assert summary.arrived_volume == pytest.approx(summary.served_volume + summary.backlog)
    assert sum(summary.delay_hist.values()) == pytest.approx(summary.served_volume)
    assert 0.0 <= summary.delay_tail <= 1.0


@pytest.mark.parametrize("placement", ["random", "opportunistic", "rp"])
def test_oblivious_fast_path_matches_slot_loop(placement):
    cfg = linear_sanity_config(0.5)
    spec = SchedulerSpec("static", placement)
    fast = run_simulation(cfg, spec, seed=4, slots=2000).summary
    slow = run_simulation(cfg, spec, seed=4, slots=2000, record=True).summary
    assert np.allclose(fast.mean_rates, slow.mean_rates, rtol=1e-12)
    assert fast.any_loss_prob == slow.any_loss_prob
    assert np.allclose(fast.final_r_bar, slow.final_r_bar, rtol=1e-10)


class _Broken(Scheduler):
    def decide(self, t, state):
        if t == 7:
            raise ZeroDivisionError("boom")
        return StaticScheduler(self.cfg).decide(t, state)

    def step(self, t):
        return 0.1


def test_failure_reports_slot_index(two_by_two):
    with pytest.raises(SimulationError) as err:
        run_simulation(two_by_two, _Broken(two_by_two), seed=0, slots=20)
    assert err.value.slot == 7
    assert "slot 7" in str(err.value)


def test_summary_round_trips_to_json(tmp_path, two_by_two):
    trace = run_simulation(two_by_two, "gradient-rp", seed=0, slots=100, record=True)
    trace.write_summary(tmp_path / "s.json")
    import json

    data = json.loads((tmp_path / "s.json").read_text())
    assert data["slots"] == 100 and set(data["class_rates"]) == {"robust", "sensitive"}


def test_write_csv_needs_records(tmp_path, two_by_two):
    trace = run_simulation(two_by_two, "gradient-rp", seed=0, slots=10)
    with pytest.raises(ValueError):
        trace.write_csv(tmp_path / "x.csv")


def test_no_urllc_means_no_losses():
    cfg = SystemConfig(
        num_users=2,
        state_probs=np.array([1.0]),
        peak_rates=np.array([[2.0], [3.0]]),
        utilities=(LogUtility(),) * 2,
        loss_models=(Monomial(1, 2),) * 2,
        demand=BinomialMinislot(1.0, 0.3),
        delta=0.3,
    )
    summary = run_simulation(cfg, "sa", seed=0, slots=200).summary
    assert summary.any_loss_prob == 0.0 and summary.served_volume == 0.0
