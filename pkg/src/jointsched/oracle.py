"""Reference computations that the schedulers and solvers are checked against."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import optimize

from .model import Monomial, SystemConfig, Threshold
from .rates import group_users, rate_terms
from .solver import SlotProblem, grid_oracle, project_simplex, spg_ascent

# ------------------------------------------------------------ offline optimum


@dataclass
class OfflineResult:
    phi: np.ndarray  # (states, users)
    gamma: np.ndarray
    rates: np.ndarray
    utility: float
    iterations: int


def state_rate_terms(cfg: SystemConfig, phi: np.ndarray, gamma: np.ndarray):
    """Expected rates and partials for every (state, user); inputs are ``(S, U)``."""
    g = np.empty(np.broadcast(phi, gamma).shape)
    dphi, dgam = np.empty_like(g), np.empty_like(g)
    peak = cfg.peak_rates.T  # (S, U)
    for model, idx in group_users(cfg.loss_models).items():
        if isinstance(model, Threshold):
            for s in range(cfg.num_states):
                out = rate_terms(model, cfg.demand, peak[s, idx], phi[..., s, idx], gamma[..., s, idx], s)
                g[..., s, idx], dphi[..., s, idx], dgam[..., s, idx] = out
        else:
            out = rate_terms(model, cfg.demand, peak[:, idx], phi[..., idx], gamma[..., idx])
            g[..., idx], dphi[..., idx], dgam[..., idx] = out
    return g, dphi, dgam


def _utility(cfg: SystemConfig, rates) -> float:
    if np.any(rates <= 0):
        return -np.inf
    return float(sum(u.value(r) for u, r in zip(cfg.utilities, rates)))


def offline_optimum(cfg: SystemConfig, tol: float = 1e-13, max_iters: int = 20_000, start=None) -> OfflineResult:
    """Best stationary per-state policy for the long-run sum utility.

    Maximises ``sum_u U_u(sum_s p_s g_u^s(phi^s, gamma^s))`` jointly over all
    states by projected gradient ascent on the product of per-state polytopes.
    """
    S, n, delta = cfg.num_states, cfg.num_users, cfg.delta
    a = 1.0 - delta
    p = np.asarray(cfg.state_probs, dtype=float)
    if start is None:
        gam = np.full((S, n), 1.0 / n)
        z = np.full((S, n), delta / n)
    else:
        gam = project_simplex(start[1])
        z = project_simplex(np.asarray(start[0], float) - a * gam, delta)

    def evaluate(gam, z):
        phi = a * gam + z
        idle = phi <= 1e-14
        if idle.any():
            probe_phi = np.stack([phi, np.where(idle, a, phi)])
            probe_gam = np.stack([gam, np.where(idle, 1.0, gam)])
            g, dphi, dgam = state_rate_terms(cfg, probe_phi, probe_gam)
            d_gam = np.where(idle, g[1], dgam[0] + a * dphi[0])
            g, dphi = g[0], dphi[0]
        else:
            g, dphi, dgam = state_rate_terms(cfg, phi, gam)
            d_gam = dgam + a * dphi
        rates = p @ g
        f = _utility(cfg, rates)
        if not np.isfinite(f):
            return f, np.zeros_like(gam), np.zeros_like(z)
        marg = np.array([u.deriv(r) for u, r in zip(cfg.utilities, rates)])
        w = p[:, None] * marg[None, :]
        return f, w * d_gam, w * dphi

    gam, z, f, it, _ = spg_ascent(evaluate, gam, z, delta, tol, max_iters)
    phi = a * gam + z
    rates = p @ state_rate_terms(cfg, phi, gam)[0]
    return OfflineResult(phi, gam, rates, _utility(cfg, rates), it)


def grid_composition(cfg: SystemConfig, weights, resolution: float = 0.01):
    """Per-state grid maximisers of the weighted rate, composed into long-run rates.

    Returns ``(phi, gamma, rates, utility)``.  With ``weights`` set to the
    marginal utilities at a candidate optimum this certifies it: no grid
    policy can beat a true optimum by more than the grid error.
    """
    S, n = cfg.num_states, cfg.num_users
    phi, gam = np.empty((S, n)), np.empty((S, n))
    for s in range(S):
        prob = SlotProblem(weights, cfg.peak_rates[:, s], cfg.loss_models, cfg.demand, cfg.delta, s)
        phi[s], gam[s], _ = grid_oracle(prob, resolution)
    rates = np.asarray(cfg.state_probs, float) @ state_rate_terms(cfg, phi, gam)[0]
    return phi, gam, rates, _utility(cfg, rates)


def joint_grid_optimum(cfg: SystemConfig, resolution: float = 0.02):
    """Exhaustive search over per-state grid policies for two users and two states."""
    if cfg.num_users != 2 or cfg.num_states != 2:
        raise ValueError("joint grid search supports exactly 2 users and 2 states")
    steps = int(round(1.0 / resolution))
    t = np.arange(steps + 1) / steps
    ph1, ga1 = (x.ravel() for x in np.meshgrid(t, t, indexing="ij"))
    a = 1.0 - cfg.delta
    ok = (a * ga1 <= ph1 + 1e-12) & (a * (1 - ga1) <= (1 - ph1) + 1e-12)
    phi = np.stack([ph1[ok], 1 - ph1[ok]], axis=-1)
    gam = np.stack([ga1[ok], 1 - ga1[ok]], axis=-1)
    p = np.asarray(cfg.state_probs, float)
    per_state = []
    for s in range(2):
        both = np.stack([phi, phi], axis=-2)  # (K, S, U) with only state s used
        g = state_rate_terms(cfg, both, np.stack([gam, gam], axis=-2))[0][:, s, :]
        per_state.append(p[s] * g)
    best, arg = -np.inf, None
    for i in range(per_state[0].shape[0]):
        r = per_state[0][i] + per_state[1]
        vals = sum(u.value(np.maximum(r[:, k], 1e-300)) for k, u in enumerate(cfg.utilities))
        j = int(np.argmax(vals))
        if vals[j] > best:
            best, arg = float(vals[j]), (i, j)
    i, j = arg
    return np.stack([phi[i], phi[j]]), np.stack([gam[i], gam[j]]), per_state[0][i] + per_state[1][j], best


# ------------------------------------------------------ two-user linear example

TWO_USER_CHANNELS = (2, 4)
TWO_USER_LOAD = Fraction(1, 2)


def _opportunistic_split(pre_rates, phi, load):
    loads = [Fraction(0)] * len(phi)
    remaining = load
    for rate in sorted(set(pre_rates)):
        idx = [i for i, r in enumerate(pre_rates) if r == rate and phi[i] > 0]
        room = sum(phi[i] for i in idx)
        take = min(remaining, room)
        for i in idx:
            loads[i] = take * phi[i] / room
        remaining -= take
    return loads


def two_user_linear_example() -> dict:
    """Per-user rates of a static equal split over two i.i.d. {2, 4} channels.

    ``static_random``: no URLLC traffic; ``opportunistic_embb_random_punct``:
    half the bandwidth punctured uniformly at random; ``opportunistic_puncture``:
    the same load always placed on the user with the lower current rate.
    Computed exactly with rationals.
    """
    phi = (Fraction(1, 2), Fraction(1, 2))
    states = list(itertools.product(TWO_USER_CHANNELS, repeat=2))
    prob = Fraction(1, len(states))
    clean = random = opportunistic = Fraction(0)
    for r_hat in states:
        clean += prob * r_hat[0] * phi[0]
        random += prob * r_hat[0] * (phi[0] - TWO_USER_LOAD * phi[0])
        loads = _opportunistic_split([r * f for r, f in zip(r_hat, phi)], phi, TWO_USER_LOAD)
        opportunistic += prob * r_hat[0] * (phi[0] - loads[0])
    return {
        "static_random": float(clean),
        "opportunistic_embb_random_punct": float(random),
        "opportunistic_puncture": float(opportunistic),
    }


# ------------------------------------------------------- allocation rescaling


def theorem1_construction(phi, lbar, rho: float, tol: float = 1e-12) -> np.ndarray:
    """Shares that reproduce ``r_hat * (phi - lbar)`` under proportional puncturing.

    ``phi`` and ``lbar`` are per-user columns (or ``(U, S)`` matrices) of
    allocations and mean URLLC loads; each column of ``lbar`` must sum to
    ``rho``.
    """
    phi = np.asarray(phi, dtype=float)
    lbar = np.asarray(lbar, dtype=float)
    if phi.shape != lbar.shape:
        raise ValueError("phi and lbar shapes differ")
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    if np.any(lbar < -tol) or np.any(phi - lbar < -tol):
        raise ValueError("infeasible mean loads: lbar must satisfy 0 <= lbar <= phi")
    if np.any(np.abs(lbar.sum(axis=0) - rho) > 1e-9) or np.any(np.abs(phi.sum(axis=0) - 1) > 1e-9):
        raise ValueError("each state's loads must sum to rho and shares to 1")
    return np.maximum(phi - lbar, 0.0) / (1.0 - rho)


# ------------------------------------------- minislot-dependent brute force


@dataclass
class BruteForceResult:
    dependent: float  # best causal minislot-dependent grid policy
    homogeneous_grid: float  # best minislot-homogeneous policy on the same grid
    homogeneous: float  # continuous minislot-homogeneous optimum
    dependent_policy: tuple


def _tiny_rates(model: Monomial, r_hat, w, phi1, loads1, loads2):
    """Weighted rate sum for two users given per-outcome loads of user 1."""
    k, q = model.k, model.q
    total = 0.0
    for phi, load, rh, wt in ((phi1, loads1, r_hat[0], w[0]), (1 - phi1, loads2, r_hat[1], w[1])):
        with np.errstate(divide="ignore", invalid="ignore"):
            lost = np.where(phi > 0, k * load**q / np.where(phi > 0, phi, 1.0) ** (q - 1), 0.0)
        total = total + wt * rh * (phi - lost)
    return total


def minislot_dependent_bruteforce(
    model,
    d: float,
    p_demand: float = 0.5,
    delta: float = 0.3,
    step: float = 0.02,
    r_hat=(1.0, 1.0),
    weights=(1.0, 1.0),
    minislots: int = 2,
) -> BruteForceResult:
    """Two users, two minislots, per-minislot demand ``d`` w.p. ``p_demand`` else 0.

    A causal placement may pick the minislot-2 split after seeing D(1).  Each
    minislot's load on a user must fit its share of that minislot:
    ``gamma * d <= phi / M``.  The loss is ``Monomial`` (convex for ``q >= 1``).
    """
    if minislots != 2:
        raise ValueError("brute force supports exactly 2 minislots and 2 users")
    if not isinstance(model, Monomial) or model.q < 1:
        raise ValueError("brute force needs a convex Monomial loss")
    f = 1.0 / minislots
    if d > (1.0 - delta) * f + 1e-12 or d <= 0:
        raise ValueError("demand d must lie in (0, (1 - delta) / M]")
    steps = int(round(1.0 / step))
    grid = np.arange(steps + 1) / steps
    outcomes = [(x1, x2, (p_demand if x1 else 1 - p_demand) * (p_demand if x2 else 1 - p_demand))
                for x1 in (0.0, d) for x2 in (0.0, d)]
    r_hat, weights = tuple(r_hat), tuple(weights)

    def objective(phi1, g1, g2a, g2b):
        val = 0.0
        for x1, x2, pr in outcomes:
            g2 = g2b if x1 else g2a
            l1 = g1 * x1 + g2 * x2
            l2 = (1 - g1) * x1 + (1 - g2) * x2
            val = val + pr * _tiny_rates(model, r_hat, weights, phi1, l1, l2)
        return val

    def allowed(phi1, g):
        return (g * d <= phi1 * f + 1e-12) & ((1 - g) * d <= (1 - phi1) * f + 1e-12)

    g1, g2a, g2b = (x.ravel() for x in np.meshgrid(grid, grid, grid, indexing="ij"))
    best_dep, best_pol, best_hom = -np.inf, None, -np.inf
    for phi1 in grid:
        ok = allowed(phi1, g1) & allowed(phi1, g2a) & allowed(phi1, g2b)
        if not ok.any():
            continue
        vals = np.where(ok, objective(phi1, g1, g2a, g2b), -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_dep:
            best_dep, best_pol = float(vals[i]), (float(phi1), float(g1[i]), float(g2a[i]), float(g2b[i]))
        hom = allowed(phi1, grid)
        if hom.any():
            best_hom = max(best_hom, float(np.max(np.where(hom, objective(phi1, grid, grid, grid), -np.inf))))
    return BruteForceResult(best_dep, best_hom, _homogeneous_optimum(objective, d, f), best_pol)


def _homogeneous_optimum(objective, d, f):
    """Nested bounded searches; the objective is jointly concave for convex losses."""

    def gamma_range(phi1):
        return max(0.0, 1.0 - (1.0 - phi1) * f / d), min(1.0, phi1 * f / d)

    def inner(phi1):
        lo, hi = gamma_range(phi1)
        if hi < lo:
            return -np.inf, lo
        if hi - lo < 1e-15:
            return float(objective(phi1, lo, lo, lo)), lo
        res = optimize.minimize_scalar(
            lambda g: -objective(phi1, g, g, g), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13}
        )
        cands = [(float(objective(phi1, g, g, g)), g) for g in (lo, hi, res.x)]
        return max(cands)

    res = optimize.minimize_scalar(lambda x: -inner(x)[0], bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-13})
    return max(inner(x)[0] for x in (0.0, 1.0, res.x))


# ------------------------------------------------------- slicing comparison


@dataclass(frozen=True)
class MinislotLaw:
    """Per-minislot demand: discrete ``(values, probs)`` or ``Uniform[lo, hi]``."""

    values: tuple = ()
    probs: tuple = ()
    lo: float = 0.0
    hi: float = 0.0

    @classmethod
    def discrete(cls, values, probs):
        return cls(values=tuple(map(float, values)), probs=tuple(map(float, probs)))

    @classmethod
    def uniform(cls, lo, hi):
        return cls(lo=float(lo), hi=float(hi))

    @property
    def is_discrete(self) -> bool:
        return bool(self.values)

    @property
    def max_value(self) -> float:
        return max(self.values) if self.is_discrete else self.hi

    def sample(self, rng: np.random.Generator, shape):
        if self.is_discrete:
            return rng.choice(np.array(self.values), size=shape, p=np.array(self.probs))
        return rng.uniform(self.lo, self.hi, size=shape)

    def sum_law(self, count: int) -> dict:
        """Exact law of the sum of ``count`` i.i.d. copies (discrete only)."""
        law = {0.0: 1.0}
        for _ in range(count):
            nxt: dict = {}
            for x, p in law.items():
                for v, q in zip(self.values, self.probs):
                    key = round(x + v, 12)
                    nxt[key] = nxt.get(key, 0.0) + p * q
            law = nxt
        return law


@dataclass(frozen=True)
class SlicingResult:
    lhs: float
    rhs: float
    sigma: float
    holds: bool
    exact: bool


EXACT_SUPPORT_LIMIT = 10**6


def slicing_comparison(h, m1: int, m2: int, dist: MinislotLaw, N: int = 100_000, rng=None) -> SlicingResult:
    """Mean loss of a dedicated ``m1``-minislot slice versus a ``phi1`` share of all minislots.

    ``lhs = E[h(D(1) + ... + D(m1))]`` and ``rhs = E[h(phi1 * (D(1) + ... + D(M)))]``
    with ``phi1 = m1 / M``.  Discrete laws with a small joint support are
    evaluated exactly; otherwise both sides share the same ``N`` samples and
    ``sigma`` is the standard error of their difference.
    """
    total = m1 + m2
    phi1 = m1 / total
    if m1 * dist.max_value > 1 + 1e-12:
        raise ValueError("slice load can exceed 1; scale the demand down")
    loss = h.h if hasattr(h, "h") else h
    if dist.is_discrete and len(dist.values) ** total <= EXACT_SUPPORT_LIMIT:
        lhs = sum(p * float(loss(x)) for x, p in dist.sum_law(m1).items())
        rhs = sum(p * float(loss(phi1 * x)) for x, p in dist.sum_law(total).items())
        return SlicingResult(lhs, rhs, 0.0, bool(lhs >= rhs - 1e-12), True)
    rng = rng if rng is not None else np.random.default_rng(0)
    demand = dist.sample(rng, (N, total))
    left = loss(np.minimum(demand[:, :m1].sum(axis=1), 1.0))
    right = loss(np.minimum(phi1 * demand.sum(axis=1), 1.0))
    diff = left - right
    sigma = float(diff.std(ddof=1) / np.sqrt(N))
    lhs, rhs = float(left.mean()), float(right.mean())
    return SlicingResult(lhs, rhs, sigma, bool(lhs >= rhs - 3 * sigma), False)


# ------------------------------------------------- threshold any-loss events


def any_loss_frequency(phi, thresholds, dist, placement: str, slots: int, rng) -> tuple[float, float]:
    """Fraction of slots in which at least one threshold user loses its transmission.

    ``placement`` is ``"rp"`` (load proportional to ``phi``) or ``"random"``
    (uniformly random spectrum positions per minislot).  Returns the
    frequency and its binomial standard error.
    """
    from .schedulers import uniform_random_placement

    phi = np.asarray(phi, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    served, _ = dist.sample_minislots(rng, slots)
    if placement == "rp":
        loads = served.sum(axis=1)[:, None] * phi[None, :]
    elif placement == "random":
        loads = uniform_random_placement(served, phi, rng, dist.cap)
    else:
        raise ValueError(f"unknown placement {placement!r}")
    active = phi > 0
    lost = (loads[:, active] >= phi[active] * thresholds[active] - 1e-15).any(axis=1)
    p = float(lost.mean())
    return p, float(np.sqrt(max(p * (1 - p), 1e-300) / slots))
