import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointsched.demand import BinomialMinislot, TruncatedParetoAggregate
from jointsched.experiments import threshold_config
from jointsched.model import LogUtility, Monomial, SystemConfig, Threshold
from jointsched.schedulers import (
    GradientScheduler,
    RateEstimates,
    SAScheduler,
    SchedulerSpec,
    StaticScheduler,
    StepSchedule,
    _fast_rb_counts,
    convex_sa_slot,
    linear_gradient_slot,
    opportunistic_placement,
    proportional_loads,
    rp_placement,
    step_size,
    threshold_factors,
    threshold_gradient_slot,
    uniform_random_placement,
    update_average,
)
from jointsched.sim import run_simulation


def _log_config(users=4, states=3, seed=0):
    rng = np.random.default_rng(seed)
    return SystemConfig(
        num_users=users,
        state_probs=np.full(states, 1.0 / states),
        peak_rates=rng.uniform(1, 10, size=(users, states)),
        utilities=tuple(LogUtility() for _ in range(users)),
        loss_models=(Monomial(1, 1),) * users,
        demand=BinomialMinislot(0.5, 0.3),
        delta=0.3,
        rb_count=50,
    )


def test_step_sizes():
    assert step_size(1, StepSchedule("constant", eps=0.05)) == 0.05
    assert step_size(1, StepSchedule()) == pytest.approx(0.1)
    assert step_size(91, StepSchedule()) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        step_size(0, StepSchedule())
    with pytest.raises(ValueError):
        StepSchedule("weird")
    with pytest.raises(ValueError):
        StepSchedule("constant", eps=0.0)


def test_decaying_steps_sum_diverges_and_squares_converge():
    steps = np.array([step_size(t, StepSchedule()) for t in range(1, 200_001)])
    assert steps.sum() == pytest.approx(np.log(200_009.5 / 9.5), rel=1e-3)
    assert np.sum(steps**2) < 0.2


@pytest.mark.parametrize("seed", range(5))
def test_fast_rb_counts_match_verbatim_loop(seed):
    cfg = _log_config(seed=seed)
    rng = np.random.default_rng(seed)
    est = RateEstimates(rng.uniform(0.1, 3, cfg.num_users))
    for state in range(cfg.num_states):
        owners, _, phi = linear_gradient_slot(state, est, 0.3, cfg.rb_count, 0.01, cfg)
        counts = _fast_rb_counts(cfg.peak_rates[:, state], np.full(cfg.num_users, 0.7), est.r_bar, cfg.rb_count, 0.01)
        assert np.array_equal(np.bincount(owners, minlength=cfg.num_users), counts)
        assert phi.sum() == pytest.approx(1.0)


def test_gradient_fast_and_verbatim_runs_agree():
    cfg = _log_config(seed=7)
    fast = run_simulation(cfg, GradientScheduler(cfg, "rp"), seed=1, slots=300)
    slow = run_simulation(cfg, GradientScheduler(cfg, "rp", verbatim=True), seed=1, slots=300)
    assert np.allclose(fast.summary.mean_rates, slow.summary.mean_rates, rtol=1e-12)


def test_gradient_first_rb_goes_to_best_marginal():
    cfg = _log_config(users=3, states=1)
    est = RateEstimates(np.array([1.0, 1.0, 1.0]))
    owners, new_est, _ = linear_gradient_slot(0, est, 0.0, 1, 0.5, cfg)
    assert owners[0] == int(np.argmax(cfg.peak_rates[:, 0]))
    assert new_est.r_tilde is not None and est.r_tilde is None


def test_gradient_rates_approach_proportional_fair_point_without_urllc():
    # one state, three users: the log-utility optimum splits time equally
    cfg = SystemConfig(
        num_users=3,
        state_probs=np.array([1.0]),
        peak_rates=np.array([[2.0], [4.0], [8.0]]),
        utilities=(LogUtility(),) * 3,
        loss_models=(Monomial(),) * 3,
        demand=BinomialMinislot(1.0, 0.3),
        delta=0.3,
        rb_count=30,
    )
    res = run_simulation(cfg, GradientScheduler(cfg, "rp"), seed=0, slots=3000)
    assert np.allclose(res.summary.mean_rates, [2 / 3, 4 / 3, 8 / 3], rtol=0.02)


@settings(max_examples=50, deadline=None)
@given(
    demands=st.lists(st.floats(0, 1 / 8), min_size=8, max_size=8),
    shares=st.lists(st.floats(0.01, 1), min_size=1, max_size=6),
    seed=st.integers(0, 10**6),
)
def test_random_placement_conserves_load(demands, shares, seed):
    phi = np.array(shares) / np.sum(shares)
    loads = uniform_random_placement(demands, phi, np.random.default_rng(seed))
    assert loads.sum() == pytest.approx(np.sum(demands), abs=1e-12)
    assert np.all(loads >= 0)
    assert np.all(loads <= phi + 1e-12)


def test_random_placement_is_fair_on_average():
    phi = np.array([0.2, 0.3, 0.5])
    demands = np.full((20000, 8), 0.05)
    loads = uniform_random_placement(demands, phi, np.random.default_rng(0))
    assert np.allclose(loads.mean(axis=0) / 0.4, phi, atol=0.01)


@settings(max_examples=50, deadline=None)
@given(
    total=st.floats(0, 1),
    shares=st.lists(st.floats(0.01, 1), min_size=1, max_size=6),
    rates=st.lists(st.sampled_from([1.0, 2.0, 3.0]), min_size=6, max_size=6),
)
def test_opportunistic_placement_respects_shares(total, shares, rates):
    phi = np.array(shares) / np.sum(shares)
    loads = opportunistic_placement(total, rates[: phi.size], phi)
    assert loads.sum() == pytest.approx(min(total, 1.0), abs=1e-12)
    assert np.all(loads <= phi + 1e-12)


def test_opportunistic_placement_hits_weakest_first():
    loads = opportunistic_placement(0.3, [4.0, 1.0, 2.0], np.array([0.4, 0.2, 0.4]))
    assert np.allclose(loads, [0.0, 0.2, 0.1])
    batch = opportunistic_placement(np.array([0.1, 0.3]), [4.0, 1.0, 2.0], np.array([0.4, 0.2, 0.4]))
    assert np.allclose(batch, [[0, 0.1, 0], [0, 0.2, 0.1]])


def test_rp_and_proportional_loads():
    phi = np.array([0.25, 0.75])
    assert np.array_equal(rp_placement(phi), phi)
    assert np.allclose(proportional_loads([0.1, 0.1, 0.2], phi), [0.1, 0.3])


def test_update_average_and_floor():
    est = RateEstimates(np.array([1.0, 1.0]))
    out = update_average(est, [3.0, 0.0], 0.5)
    assert np.allclose(out.r_bar, [2.0, 0.5])
    assert np.all(update_average(est, [0.0, 0.0], 1.0).r_bar == 1e-3)


def test_threshold_factors_use_strict_cdf():
    cfg = threshold_config(0.2)
    fac = threshold_factors(cfg, 0)
    assert np.allclose(fac, cfg.demand.cdf_left(0.3))
    fac_hi = threshold_factors(cfg, 99)
    assert np.all(fac_hi >= fac)


def test_threshold_gradient_slot_weights():
    cfg = threshold_config(0.2)
    est = RateEstimates.initial(cfg.num_users)
    _, _, phi, gamma = threshold_gradient_slot(0, est, 0.3, cfg.rb_count, 0.01, cfg)
    assert gamma.sum() == pytest.approx(1.0)
    assert np.allclose(gamma[phi > 0], phi[phi > 0] / phi.sum())


def test_threshold_factors_reject_convex_models():
    with pytest.raises(ValueError):
        threshold_factors(_log_config(), 0)


def test_convex_sa_slot_moves_estimates_only_with_demands(two_by_two):
    est = RateEstimates(np.array([1.0, 1.0]))
    phi, gamma, same = convex_sa_slot(0, est, two_by_two)
    assert same is est
    assert phi.sum() == pytest.approx(1.0) and gamma.sum() == pytest.approx(1.0)
    _, _, moved = convex_sa_slot(0, est, two_by_two, t=1, demands=np.full(8, 0.0125))
    assert not np.allclose(moved.r_bar, est.r_bar)


def test_sa_solver_variants_agree(two_by_two):
    a = SAScheduler(two_by_two).decide(1, 0)
    b = SAScheduler(two_by_two, solver="pg").decide(1, 0)
    assert np.allclose(a.phi, b.phi, atol=1e-4)
    with pytest.raises(ValueError):
        SAScheduler(two_by_two, solver="magic")


def test_scheduler_spec_parse_and_label():
    assert SchedulerSpec.parse("sa").label == "sa-optimal"
    assert SchedulerSpec.parse("sa-optimal").kind == "sa"
    spec = SchedulerSpec.parse("gradient-tp")
    assert (spec.kind, spec.placement, spec.label) == ("gradient", "tp", "gradient-tp")
    assert SchedulerSpec.parse("static-opportunistic").label == "static-opportunistic"
    for bad in ("gradient", "bogus-rp", "", "static"):
        with pytest.raises(ValueError):
            SchedulerSpec.parse(bad)


def test_scheduler_spec_builds_right_types(two_by_two):
    assert isinstance(SchedulerSpec("sa").build(two_by_two), SAScheduler)
    assert isinstance(SchedulerSpec("gradient", "rp").build(two_by_two), GradientScheduler)
    assert isinstance(SchedulerSpec("static", "random").build(two_by_two), StaticScheduler)
    with pytest.raises(ValueError):
        SchedulerSpec("nope").build(two_by_two)
    with pytest.raises(ValueError):
        GradientScheduler(two_by_two, "sideways")


def test_static_scheduler_is_equal_split(two_by_two):
    dec = StaticScheduler(two_by_two).decide(5, 1)
    assert np.allclose(dec.phi, [0.5, 0.5]) and dec.gamma is None


def test_pareto_threshold_config_gradient_tp_runs():
    law = TruncatedParetoAggregate(2.0, 0.1, 0.05, 0.9)
    cfg = SystemConfig(
        num_users=2,
        state_probs=np.array([1.0]),
        peak_rates=np.array([[3.0], [5.0]]),
        utilities=(LogUtility(1.0),) * 2,
        loss_models=(Threshold(0.5),) * 2,
        demand=law,
        delta=0.1,
    )
    res = run_simulation(cfg, "gradient-tp", seed=0, slots=200)
    assert np.all(res.summary.mean_rates > 0)
