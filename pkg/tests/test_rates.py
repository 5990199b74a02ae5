import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointsched.demand import BinomialMinislot, TruncatedParetoAggregate, UniformMinislot, make_rng
from jointsched.model import Exponential, Monomial, PiecewiseQuadratic, Threshold
from jointsched.rates import (
    concavity_probe,
    expected_rate_convex,
    expected_rate_threshold,
    feasible_pair_domain,
    loss_fraction,
    loss_probability,
    pooled_loss_bound,
    rate_terms,
    realized_rate,
    realized_rates,
    tp_weights,
)

CONVEX = [Monomial(1, 1), Monomial(1, 2), Monomial(0.5, 3), Exponential(0.7), PiecewiseQuadratic(0.7)]
LAWS = [BinomialMinislot(0.5, 0.3), UniformMinislot(0.0, 1 / 8, 0.3), TruncatedParetoAggregate(2.0, 0.3, 0.1, 0.7)]


def test_linear_realized_rate_is_unpunctured_share():
    res = realized_rate(10.0, 0.5, 0.2, Monomial(1, 1))
    assert res.rate == pytest.approx(3.0)
    assert res.loss_fraction == pytest.approx(0.4)


def test_threshold_loss_is_strict_below_threshold():
    thr = Threshold(0.5)
    assert realized_rate(4.0, 0.4, 0.19, thr).rate == pytest.approx(1.6)
    assert realized_rate(4.0, 0.4, 0.2, thr).rate == 0.0


def test_load_above_share_rejected():
    with pytest.raises(ValueError):
        realized_rate(1.0, 0.2, 0.3, Monomial())
    with pytest.raises(ValueError):
        loss_fraction(Monomial(), 1.5)


def test_idle_user_gets_nothing():
    assert realized_rate(5.0, 0.0, 0.0, Monomial()).rate == 0.0


def test_vector_rates_match_scalar():
    models = (Monomial(1, 2), Threshold(0.3), Exponential(0.2))
    r_hat, phi, loads = np.array([3.0, 4.0, 5.0]), np.array([0.2, 0.5, 0.3]), np.array([0.1, 0.1, 0.3])
    vec = realized_rates(r_hat, phi, loads, models)
    for i, m in enumerate(models):
        assert vec[i] == pytest.approx(realized_rate(r_hat[i], phi[i], loads[i], m).rate)


@pytest.mark.parametrize("law", LAWS, ids=lambda d: type(d).__name__)
@pytest.mark.parametrize("model", CONVEX, ids=repr)
def test_expected_rate_matches_monte_carlo(model, law):
    phi, gamma, r_hat = 0.4, 0.3, 5.0
    served, _ = law.sample_minislots(make_rng(11, 1), 100_000)
    x = gamma * served.sum(axis=1) / phi
    samples = r_hat * phi * (1.0 - model.h(x))
    se = samples.std() / np.sqrt(samples.size)
    assert abs(expected_rate_convex(r_hat, phi, gamma, law, model) - samples.mean()) <= 4 * se + 2e-4


def test_expected_threshold_rate_matches_monte_carlo():
    law = TruncatedParetoAggregate(2.0, 0.1, 0.05, 0.9)
    phi, gamma, alpha = 0.3, 0.4, 0.5
    served, _ = law.sample_minislots(make_rng(2, 1), 200_000)
    lost = gamma * served.sum(axis=1) >= phi * alpha
    samples = 2.0 * phi * (1 - lost)
    se = samples.std() / np.sqrt(samples.size)
    assert abs(expected_rate_threshold(2.0, phi, gamma, alpha, law) - samples.mean()) <= 4 * se


def test_infeasible_pair_rejected():
    with pytest.raises(ValueError):
        expected_rate_convex(1.0, 0.1, 0.9, LAWS[0], Monomial())


@pytest.mark.parametrize("law", LAWS, ids=lambda d: type(d).__name__)
@pytest.mark.parametrize("model", CONVEX[:4] + [Threshold(0.5)], ids=repr)
@settings(max_examples=25, deadline=None)
@given(u=st.floats(0.05, 0.95), v=st.floats(0.05, 0.95))
def test_partials_match_finite_differences(model, law, u, v):
    if isinstance(model, Threshold) and not isinstance(law, TruncatedParetoAggregate):
        return  # step CDFs have no derivative
    gamma = v
    phi = (1 - law.delta) * gamma + u * (1 - (1 - law.delta) * gamma)
    g, dphi, dgam = rate_terms(model, law, 3.0, phi, gamma)
    h = 1e-6
    fd_phi = (rate_terms(model, law, 3.0, phi + h, gamma)[0] - rate_terms(model, law, 3.0, phi - h, gamma)[0]) / (2 * h)
    fd_gam = (rate_terms(model, law, 3.0, phi, gamma + h)[0] - rate_terms(model, law, 3.0, phi, gamma - h)[0]) / (2 * h)
    assert dphi == pytest.approx(fd_phi, rel=1e-4, abs=1e-4)
    assert dgam == pytest.approx(fd_gam, rel=1e-4, abs=1e-4)


@pytest.mark.parametrize("model", CONVEX, ids=repr)
@settings(max_examples=30, deadline=None)
@given(phi=st.floats(0.05, 1.0), frac=st.floats(0.0, 1.0), scale=st.floats(0.1, 1.0))
def test_rates_are_positively_homogeneous(model, phi, frac, scale):
    law = LAWS[0]
    gamma = frac * phi / (1 - law.delta)
    g = rate_terms(model, law, 2.0, phi, gamma)[0]
    assert rate_terms(model, law, 2.0, scale * phi, scale * gamma)[0] == pytest.approx(scale * g, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(phi=st.floats(0.0, 1.0), load=st.floats(0.0, 1.0), r_hat=st.floats(0.0, 10.0))
def test_realized_rate_bounded_by_peak(phi, load, r_hat):
    load = min(load, phi)
    for model in CONVEX + [Threshold(0.4)]:
        res = realized_rate(r_hat, phi, load, model)
        assert -1e-12 <= res.rate <= r_hat * phi + 1e-12


def test_concavity_probe_separates_smooth_and_step_laws():
    pareto = TruncatedParetoAggregate(2.0, 0.1, 0.05, 0.9)
    smooth = concavity_probe(lambda x: float(rate_terms(Threshold(0.5), pareto, 1.0, x[0], x[1])[0]),
                             feasible_pair_domain(0.1, 1e-3), num_pairs=2000)
    assert smooth.concave
    step = BinomialMinislot(0.5, 0.1)
    jagged = concavity_probe(lambda x: float(rate_terms(Threshold(0.5), step, 1.0, x[0], x[1])[0]),
                             feasible_pair_domain(0.1, 1e-3), num_pairs=2000)
    assert not jagged.concave and jagged.worst > 1e-9


def test_tp_equalises_loss_probabilities():
    law = TruncatedParetoAggregate(2.0, 0.1, 0.05, 0.9)
    phi = np.array([0.2, 0.3, 0.5])
    alpha = [Threshold(0.3), Threshold(0.7), Threshold(0.5)]
    gamma = tp_weights(phi, alpha)
    assert gamma == pytest.approx(phi * [0.3, 0.7, 0.5] / np.sum(phi * [0.3, 0.7, 0.5]))
    probs = loss_probability(phi, gamma, alpha, law)
    assert np.allclose(probs, pooled_loss_bound(phi, alpha, law), atol=1e-12)


def test_tp_undefined_when_all_weights_vanish():
    with pytest.raises(ValueError, match="TP undefined"):
        tp_weights([0.5, 0.5], 0.0)
