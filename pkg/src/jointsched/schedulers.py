"""Joint eMBB/URLLC schedulers, URLLC placement rules and step-size schedules."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

import numpy as np

from .model import SystemConfig, Threshold
from .rates import realized_rates, tp_weights
from .solver import SlotProblem, solve_per_slot, solve_per_slot_pairs

RATE_FLOOR = 1e-3


@dataclass(frozen=True)
class StepSchedule:
    """Either a constant step ``eps`` or the decaying step ``a / (b + t)``."""

    kind: str = "decay"
    eps: float = 0.01
    a: float = 1.0
    b: float = 9.0

    def __post_init__(self):
        if self.kind not in ("constant", "decay"):
            raise ValueError(f"unknown step schedule {self.kind!r}")
        if self.kind == "decay" and self.a <= 0:
            raise ValueError("step numerator a must be positive")
        if self.kind == "constant" and not 0 < self.eps <= 1:
            raise ValueError("constant step must lie in (0, 1]")


def step_size(t: int, schedule: StepSchedule) -> float:
    if t < 1:
        raise ValueError("slot index starts at 1")
    if schedule.kind == "constant":
        return schedule.eps
    return min(1.0, schedule.a / (schedule.b + t))


@dataclass
class RateEstimates:
    """Running average rates ``r_bar`` and the intra-slot tracker ``r_tilde``."""

    r_bar: np.ndarray
    r_tilde: np.ndarray | None = None

    @classmethod
    def initial(cls, num_users: int, floor: float = RATE_FLOOR) -> "RateEstimates":
        return cls(np.full(num_users, floor))

    def copy(self) -> "RateEstimates":
        return RateEstimates(
            self.r_bar.copy(), None if self.r_tilde is None else self.r_tilde.copy()
        )


# ------------------------------------------------------------------ placement


def rp_placement(phi) -> np.ndarray:
    """Resource-proportional placement: URLLC shares follow eMBB shares."""
    return np.array(phi, dtype=float)


def proportional_loads(demands, gamma) -> np.ndarray:
    """Fluid placement of the slot's served demand in fixed proportions ``gamma``."""
    return np.asarray(gamma, dtype=float) * float(np.sum(demands))


def uniform_random_placement(demands, phi, rng: np.random.Generator, minislot_cap: float | None = None):
    """Place each minislot's demand on a uniformly random stretch of spectrum.

    Users own contiguous frequency bands of widths ``phi``.  In minislot
    ``m`` the demand covers a circular interval of relative width
    ``demands[m] / minislot_cap`` starting at a uniform position; a user's
    load is the demand volume landing in its band.  ``demands`` may carry
    leading slot axes; the result then has shape ``(..., users)``.
    """
    demands = np.asarray(demands, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cap = minislot_cap if minislot_cap is not None else 1.0 / demands.shape[-1]
    width = np.clip(demands / cap, 0.0, 1.0)[..., None, :]
    start = rng.random(demands.shape)[..., None, :]
    edges = np.concatenate([[0.0], np.cumsum(phi)])
    edges[-1] = 1.0
    lo, hi = edges[:-1, None], edges[1:, None]

    def overlap(a, b):
        return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)

    cover = overlap(start, start + width) + overlap(start - 1.0, start + width - 1.0)
    return (cover * cap).sum(axis=-1)


def opportunistic_placement(demand_total, pre_rates, phi) -> np.ndarray:
    """Puncture the users with the lowest pre-puncture rate first.

    Users with equal rates share the load in proportion to their shares;
    no user carries more than its own share ``phi``.  A vector of slot
    totals gives one row of loads per slot.
    """
    phi = np.asarray(phi, dtype=float)
    pre_rates = np.asarray(pre_rates, dtype=float)
    remaining = np.array(demand_total, dtype=float)
    loads = np.zeros(remaining.shape + phi.shape)
    for rate in np.unique(pre_rates):
        idx = np.nonzero((pre_rates == rate) & (phi > 0))[0]
        room = phi[idx].sum()
        if room <= 0:
            continue
        take = np.minimum(remaining, room)
        loads[..., idx] = take[..., None] * phi[idx] / room
        remaining = remaining - take
    return loads


# -------------------------------------------------------- gradient schedulers


def linear_gradient_slot(state: int, estimates: RateEstimates, rho: float, B: int, epsilon: float, cfg: SystemConfig, factors=None):
    """Iterative per-RB gradient allocation for one slot.

    Each RB goes to ``argmax_u r_hat[u] * U_u'(r_tilde[u])``; after every RB
    all trackers decay by ``1 - epsilon`` and the winner gains
    ``epsilon * r_hat * factor / B`` with ``factor = 1 - rho`` unless
    per-user ``factors`` are supplied.  Returns the RB owners, the updated
    estimates and the implied shares.
    """
    r_hat = cfg.peak_rates[:, state]
    factor = np.full(cfg.num_users, 1.0 - rho) if factors is None else np.asarray(factors, float)
    est = estimates.copy()
    r_tilde = est.r_bar.copy()
    owners = np.empty(B, dtype=int)
    for b in range(B):
        marg = np.array([r_hat[u] * cfg.utilities[u].deriv(r_tilde[u]) for u in range(cfg.num_users)])
        u = int(np.argmax(marg))
        owners[b] = u
        r_tilde *= 1.0 - epsilon
        r_tilde[u] += epsilon * r_hat[u] * factor[u] / B
    est.r_tilde = r_tilde
    return owners, est, np.bincount(owners, minlength=cfg.num_users) / B


def _fast_rb_counts(r_hat, factor, r_bar, B, epsilon):
    # Log utility: argmax of r_hat / r_tilde is unchanged when every tracker is
    # rescaled by the common decay, so only the winner's entry needs updating.
    heap = [(-(r_hat[u] / r_bar[u]), u) for u in range(r_hat.size) if r_hat[u] > 0]
    if not heap:
        return np.concatenate([[B], np.zeros(r_hat.size - 1, dtype=int)]).astype(int)
    heapq.heapify(heap)
    y = r_bar.astype(float).copy()
    counts = np.zeros(r_hat.size, dtype=int)
    scale = 1.0
    for _ in range(B):
        _, u = heap[0]
        counts[u] += 1
        scale /= 1.0 - epsilon
        y[u] += epsilon * r_hat[u] * factor[u] / B * scale
        heapq.heapreplace(heap, (-(r_hat[u] / y[u]), u))
    return counts


def threshold_factors(cfg: SystemConfig, state: int) -> np.ndarray:
    """Per-user ``P(D < alpha_u^s)``: the no-loss probability under TP placement."""
    out = np.empty(cfg.num_users)
    for u, m in enumerate(cfg.loss_models):
        if not isinstance(m, Threshold) or m.exponent != 0:
            raise ValueError("threshold gradient needs constant relative thresholds")
        out[u] = float(cfg.demand.cdf_left(m.alpha_at(state)))
    return out


def threshold_gradient_slot(state: int, estimates: RateEstimates, alpha, B: int, epsilon: float, cfg: SystemConfig):
    """Gradient allocation with the ``1 - rho`` factor replaced by ``F_D(alpha^s)``."""
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (cfg.num_users,))
    factors = cfg.demand.cdf_left(alpha)
    owners, est, phi = linear_gradient_slot(state, estimates, 0.0, B, epsilon, cfg, factors)
    models = [Threshold(float(a)) for a in alpha]
    gamma = tp_weights(phi, models) if np.any(phi * alpha > 0) else rp_placement(phi)
    return owners, est, phi, gamma


def convex_sa_slot(
    state: int,
    estimates: RateEstimates,
    cfg: SystemConfig,
    solver=solve_per_slot,
    t: int = 1,
    demands=None,
    schedule: StepSchedule = StepSchedule(),
    start=None,
):
    """One slot of the stochastic-approximation scheduler.

    Solves the per-slot problem with weights ``U'(r_bar)``.  When the
    slot's minislot ``demands`` are given, the URLLC load is placed with
    proportions ``gamma``, realised rates are computed and ``r_bar`` moves
    by the step ``step_size(t, schedule)``; otherwise the estimates are
    returned unchanged.
    """
    weights = np.array([u.deriv(r) for u, r in zip(cfg.utilities, estimates.r_bar)], dtype=float)
    prob = SlotProblem(weights, cfg.peak_rates[:, state], cfg.loss_models, cfg.demand, cfg.delta, state)
    res = solver(prob, start=start) if start is not None else solver(prob)
    if demands is None:
        return res.phi, res.gamma, estimates
    loads = np.minimum(proportional_loads(demands, res.gamma), res.phi)
    rates = realized_rates(cfg.peak_rates[:, state], res.phi, loads, cfg.loss_models, state)
    return res.phi, res.gamma, update_average(estimates, rates, step_size(t, schedule))


def update_average(estimates: RateEstimates, rates, eps: float, floor: float = RATE_FLOOR) -> RateEstimates:
    r_bar = (1.0 - eps) * estimates.r_bar + eps * np.asarray(rates, dtype=float)
    return RateEstimates(np.maximum(r_bar, floor), estimates.r_tilde)


# ------------------------------------------------------- stateful schedulers


@dataclass
class Decision:
    phi: np.ndarray
    gamma: np.ndarray | None


class Scheduler:
    """Base class; a scheduler owns its estimates for one simulation run."""

    name = "base"
    placement = "rp"
    oblivious = False  # decisions ignore rate feedback

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.estimates = RateEstimates.initial(cfg.num_users)

    def decide(self, t: int, state: int) -> Decision:
        raise NotImplementedError

    def step(self, t: int) -> float:
        raise NotImplementedError

    def observe(self, t: int, rates) -> None:
        self.estimates = update_average(self.estimates, rates, self.step(t))

    def place(self, demands, decision: Decision, state: int, rng: np.random.Generator) -> np.ndarray:
        kind = self.placement
        if kind == "random":
            return uniform_random_placement(demands, decision.phi, rng, self.cfg.minislot_cap)
        if kind == "opportunistic":
            pre = self.cfg.peak_rates[:, state] * decision.phi
            return opportunistic_placement(float(np.sum(demands)), pre, decision.phi)
        gamma = decision.gamma if decision.gamma is not None else rp_placement(decision.phi)
        # the coupling constraint keeps gamma * D <= phi; clip float rounding only
        return np.minimum(proportional_loads(demands, gamma), decision.phi)


class GradientScheduler(Scheduler):
    """Per-RB gradient eMBB scheduler with a fixed averaging step.

    ``placement`` is ``"random"``, ``"rp"`` or ``"tp"``; with ``"tp"`` the
    rate factor per user is ``F_D(alpha_u^s)`` instead of ``1 - rho``.
    """

    name = "gradient"

    def __init__(self, cfg: SystemConfig, placement: str = "rp", epsilon: float = 0.01, verbatim: bool = False):
        super().__init__(cfg)
        if placement not in ("random", "rp", "tp", "opportunistic"):
            raise ValueError(f"unknown placement {placement!r}")
        self.placement = placement
        self.epsilon = epsilon
        self.verbatim = verbatim
        self._factors = {}
        self._log = all(type(u).__name__ == "LogUtility" for u in cfg.utilities)

    def factors(self, state: int) -> np.ndarray:
        if state not in self._factors:
            if self.placement == "tp":
                self._factors[state] = threshold_factors(self.cfg, state)
            else:
                self._factors[state] = np.full(self.cfg.num_users, 1.0 - self.cfg.rho)
        return self._factors[state]

    def decide(self, t, state):
        B = self.cfg.rb_count
        fac = self.factors(state)
        if self.verbatim or not self._log:
            _, _, phi = linear_gradient_slot(state, self.estimates, 0.0, B, self.epsilon, self.cfg, fac)
        else:
            counts = _fast_rb_counts(self.cfg.peak_rates[:, state], fac, self.estimates.r_bar, B, self.epsilon)
            phi = counts / B
        gamma = None
        if self.placement == "tp":
            alpha = np.array([m.alpha_at(state) for m in self.cfg.loss_models])
            w = phi * alpha
            gamma = w / w.sum() if w.sum() > 0 else rp_placement(phi)
        return Decision(phi, gamma)

    def step(self, t):
        return self.epsilon


class SAScheduler(Scheduler):
    """Stochastic-approximation scheduler solving the weighted per-slot problem."""

    name = "sa"
    placement = "solver"

    def __init__(
        self,
        cfg: SystemConfig,
        schedule: StepSchedule = StepSchedule(),
        solver: str = "dual",
        warm_start: bool = True,
        tol: float = 1e-9,
    ):
        super().__init__(cfg)
        if solver not in ("dual", "pg"):
            raise ValueError(f"unknown solver {solver!r}")
        self.schedule = schedule
        self.solver = solver
        self.warm_start = warm_start
        self.tol = tol
        self._last: dict = {}

    def decide(self, t, state):
        if self.solver == "dual":
            phi, gamma, _ = convex_sa_slot(state, self.estimates, self.cfg, solve_per_slot_pairs)
            return Decision(phi, gamma)
        start = self._last.get(state) if self.warm_start else None

        def solver(prob, start=None):
            return solve_per_slot(prob, tol=self.tol, start=start)

        phi, gamma, _ = convex_sa_slot(state, self.estimates, self.cfg, solver, start=start)
        if self.warm_start:
            self._last[state] = (phi, gamma)
        return Decision(phi, gamma)

    def step(self, t):
        return step_size(t, self.schedule)


class StaticScheduler(Scheduler):
    """Fixed shares in every state (equal split by default)."""

    name = "static"
    oblivious = True

    def __init__(self, cfg: SystemConfig, phi=None, placement: str = "random", epsilon: float = 0.01):
        super().__init__(cfg)
        n = cfg.num_users
        self.phi = np.full(n, 1.0 / n) if phi is None else np.asarray(phi, dtype=float)
        self.placement = placement
        self.epsilon = epsilon

    def decide(self, t, state):
        return Decision(self.phi.copy(), None)

    def step(self, t):
        return self.epsilon


@dataclass(frozen=True)
class SchedulerSpec:
    """Serializable description of a scheduler; ``build`` instantiates it."""

    kind: str = "sa"
    placement: str = "rp"
    epsilon: float = 0.01
    a: float = 1.0
    b: float = 9.0
    options: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def label(self) -> str:
        if self.kind == "sa":
            return "sa-optimal"
        return f"{self.kind}-{self.placement}"

    def with_(self, **kw) -> "SchedulerSpec":
        return replace(self, **kw)

    def build(self, cfg: SystemConfig) -> Scheduler:
        if self.kind == "sa":
            return SAScheduler(cfg, StepSchedule("decay", a=self.a, b=self.b), **self.options)
        if self.kind == "gradient":
            return GradientScheduler(cfg, self.placement, self.epsilon, **self.options)
        if self.kind == "static":
            return StaticScheduler(cfg, placement=self.placement, epsilon=self.epsilon, **self.options)
        raise ValueError(f"unknown scheduler kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "SchedulerSpec":
        """``sa``, ``sa-optimal``, ``gradient-rp``, ``gradient-tp``, ``static-random`` ..."""
        if text in ("sa", "sa-optimal"):
            return cls("sa")
        kind, _, placement = text.partition("-")
        if kind not in ("gradient", "static") or not placement:
            raise ValueError(f"unknown scheduler {text!r}")
        return cls(kind, placement)
