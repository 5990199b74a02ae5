"""Numerical self-checks behind ``jointsched verify``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .demand import BinomialMinislot, TruncatedParetoAggregate, UniformMinislot
from .model import Exponential, Monomial, PiecewiseQuadratic, Threshold, check_joint_feasibility
from .oracle import (
    MinislotLaw,
    any_loss_frequency,
    minislot_dependent_bruteforce,
    slicing_comparison,
    theorem1_construction,
    two_user_linear_example,
)
from .rates import loss_probability, pooled_loss_bound, tp_weights
from .solver import SlotProblem, grid_oracle, solve_per_slot, solve_per_slot_pairs


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_linear_example() -> CheckResult:
    got = two_user_linear_example()
    want = {"static_random": 1.5, "opportunistic_embb_random_punct": 0.75, "opportunistic_puncture": 0.875}
    return CheckResult("two-user linear example", got == want, ", ".join(f"{k}={v}" for k, v in got.items()))


def check_rescaling(instances: int = 200, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        users, states = rng.integers(2, 8), rng.integers(1, 5)
        rho = rng.uniform(0.0, 0.9)
        phi = rng.dirichlet(np.ones(users), size=states).T
        lbar = phi * rng.dirichlet(np.ones(users), size=states).T
        lbar *= rho / lbar.sum(axis=0)
        if np.any(lbar > phi):
            lbar = rho * phi
        r_hat = rng.uniform(1, 10, size=phi.shape)
        new = theorem1_construction(phi, lbar, rho)
        worst = max(worst, float(np.max(np.abs(r_hat * (phi - lbar) - r_hat * new * (1 - rho)))),
                    float(np.max(np.abs(new.sum(axis=0) - 1))))
    return CheckResult("proportional rescaling of mean loads", worst <= 1e-12, f"max error {worst:.2e}")


def check_minislot_dependence() -> CheckResult:
    gaps = []
    for model in (Monomial(1, 1), Monomial(1, 2)):
        res = minislot_dependent_bruteforce(model, 0.35, r_hat=(2.0, 1.0), weights=(1.0, 1.5))
        gaps.append(res.dependent - res.homogeneous)
    return CheckResult("causal placement gains nothing", max(gaps) <= 1e-9, "gaps " + ", ".join(f"{g:.2e}" for g in gaps))


def random_slicing_instance(rng):
    m1, m2 = (int(x) for x in rng.integers(1, 6, size=2))
    scale = 1.0 / (m1 + m2)
    h = [Monomial(1, 2), Monomial(rng.uniform(0.5, 1), 3), Exponential(rng.uniform(0.1, 3)), Monomial(1, 1.5)][rng.integers(4)]
    if rng.random() < 0.5:
        k = int(rng.integers(2, 4))
        law = MinislotLaw.discrete(np.sort(rng.uniform(0, scale, k)), rng.dirichlet(np.ones(k)))
    else:
        law = MinislotLaw.uniform(0.0, rng.uniform(0.2, 1.0) * scale)
    return h, m1, m2, law


def check_slicing(instances: int = 100, seed: int = 0, samples: int = 100_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    failed = 0
    for _ in range(instances):
        h, m1, m2, law = random_slicing_instance(rng)
        if not slicing_comparison(h, m1, m2, law, samples, rng).holds:
            failed += 1
    lin = slicing_comparison(Monomial(1, 1), 3, 2, MinislotLaw.discrete([0, 0.1, 0.2], [0.5, 0.3, 0.2]))
    sq = slicing_comparison(Monomial(1, 2), 1, 1, MinislotLaw.discrete([0, 1], [0.5, 0.5]))
    ok = failed == 0 and abs(lin.lhs - lin.rhs) <= 1e-12 and abs(sq.lhs - 0.5) <= 1e-12 and abs(sq.rhs - 0.375) <= 1e-12
    return CheckResult("dedicated slices lose more than shared", ok, f"{failed}/{instances} failed; x^2 case {sq.lhs}, {sq.rhs}")


def random_threshold_instance(rng):
    users = int(rng.integers(2, 7))
    delta = rng.uniform(0.05, 0.4)
    if rng.random() < 0.5:
        dist = TruncatedParetoAggregate(rng.uniform(1, 3), delta, rng.uniform(0.02, 0.2), 1.0 - delta)
    else:
        dist = BinomialMinislot(rng.uniform(0.2, 0.9), delta)
    phi = rng.dirichlet(np.ones(users))
    alpha = rng.uniform(0.1, 0.9, size=users)
    return phi, alpha, dist


def check_threshold_placement(instances: int = 100, seed: int = 0, slots: int = 100_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, failed = 0.0, 0
    for _ in range(instances):
        phi, alpha, dist = random_threshold_instance(rng)
        gamma = tp_weights(phi, alpha)
        bound = pooled_loss_bound(phi, alpha, dist)
        worst = max(worst, float(np.max(np.abs(loss_probability(phi, gamma, alpha, dist) - bound))))
        for placement in ("rp", "random"):
            freq, se = any_loss_frequency(phi, alpha, dist, placement, slots, rng)
            if freq < bound - 3 * se:
                failed += 1
    return CheckResult("threshold-proportional placement is loss-optimal", worst <= 1e-12 and failed == 0,
                       f"bound error {worst:.2e}; {failed} simulated placements beat the bound")


def random_slot_problem(rng, users: int = 2):
    delta = rng.uniform(0.1, 0.6)
    dist = [
        BinomialMinislot(rng.uniform(0.2, 0.9), delta),
        UniformMinislot(0.0, rng.uniform(0.05, 0.2), delta),
        TruncatedParetoAggregate(2.0, delta, 0.1, 1.0 - delta),
    ][rng.integers(3)]

    def model():
        pick = rng.integers(4)
        if pick == 0:
            return Monomial(1.0, float(rng.choice([1, 2, 3])))
        if pick == 1:
            return Exponential(rng.uniform(0.2, 2.0))
        if pick == 2:
            return PiecewiseQuadratic(0.7)
        return Threshold(rng.uniform(0.2, 0.8))

    models = [model() for _ in range(users)]
    if not isinstance(dist, TruncatedParetoAggregate):
        models = [Monomial(1, 2) if isinstance(m, Threshold) else m for m in models]
    return SlotProblem(rng.uniform(0.2, 2, users), rng.uniform(1, 10, users), models, dist, delta)


def check_solver(instances: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, infeasible = -np.inf, 0
    for _ in range(instances):
        prob = random_slot_problem(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = solve_per_slot(prob)
        if not check_joint_feasibility(res.phi, res.gamma, prob.delta):
            infeasible += 1
        worst = max(worst, grid_oracle(prob, 0.01)[2] - res.objective)
    return CheckResult("projected gradient vs grid", worst <= 1e-3 and infeasible == 0,
                       f"worst grid excess {worst:.2e}; {infeasible} infeasible")


def check_pair_solver(instances: int = 30, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(instances):
        prob = random_slot_problem(rng, int(rng.integers(2, 6)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pg = solve_per_slot(prob)
        pair = solve_per_slot_pairs(prob)
        worst = max(worst, pg.objective - pair.objective)
    return CheckResult("two-user structure solver vs projected gradient", worst <= 1e-4, f"worst shortfall {worst:.2e}")


SUITES = {
    "theorems": (check_linear_example, check_rescaling, check_minislot_dependence, check_slicing, check_threshold_placement),
    "solver": (check_solver, check_pair_solver),
}


def run_suite(name: str) -> list[CheckResult]:
    names = list(SUITES) if name == "all" else [name]
    if any(n not in SUITES for n in names):
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return [check() for n in names for check in SUITES[n]]
