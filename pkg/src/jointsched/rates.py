"""Rate and loss mathematics for punctured eMBB transmissions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, partial
from typing import Callable

import numpy as np

from .demand import DemandDistribution
from .model import Exponential, Monomial, PiecewiseQuadratic, Threshold

FD_STEP = 1e-6
_LOAD_TOL = 1e-12


@dataclass(frozen=True)
class RateResult:
    rate: float
    loss_fraction: float


def loss_fraction(model, x, *, phi: float = 1.0, state: int = 0):
    """Relative eMBB rate loss at relative URLLC load ``x``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < -_LOAD_TOL) or np.any(xa > 1 + _LOAD_TOL):
        raise ValueError("relative load outside [0,1]")
    xa = np.clip(xa, 0.0, 1.0)
    if isinstance(model, Threshold):
        out = model.h(xa, phi, state)
    else:
        out = model.h(xa)
    return out[()] if np.ndim(out) == 0 else out


def realized_rate(r_hat: float, phi: float, load: float, model, state: int = 0) -> RateResult:
    """Rate actually delivered when ``load`` of the user's ``phi`` share is punctured."""
    if load > phi + _LOAD_TOL:
        raise ValueError(f"load {load} exceeds allocated share {phi}")
    if phi <= 0:
        return RateResult(0.0, 0.0)
    x = min(max(load, 0.0) / phi, 1.0)
    if isinstance(model, Threshold):
        lost = 0.0 if x < float(model.t(phi, state)) else 1.0
    else:
        lost = float(model.h(x))
    return RateResult(r_hat * phi * (1.0 - lost), lost)


def realized_rates(r_hat, phi, loads, models, state: int = 0) -> np.ndarray:
    """Vector form of ``realized_rate`` for one slot."""
    r_hat, phi, loads = (np.asarray(a, dtype=float) for a in (r_hat, phi, loads))
    if np.any(loads > phi + _LOAD_TOL):
        raise ValueError("a user's load exceeds its allocated share")
    out = np.zeros_like(phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(phi > 0, np.clip(loads / phi, 0.0, 1.0), 0.0)
    for model, idx in group_users(models).items():
        if isinstance(model, Threshold):
            lost = (x[idx] >= model.t(phi[idx], state)).astype(float)
        else:
            lost = model.h(x[idx])
        out[idx] = r_hat[idx] * phi[idx] * (1.0 - lost)
    return out


def group_users(models) -> dict:
    """Map each distinct loss model to the indices of users sharing it."""
    groups: dict = {}
    for i, m in enumerate(models):
        groups.setdefault(m, []).append(i)
    return {m: np.array(ix) for m, ix in groups.items()}


# ------------------------------------------------------------- expected rates


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


@lru_cache(maxsize=512)
def terms_fn(model, dist: DemandDistribution, state: int = 0):
    """Vectorised ``(r_hat, phi, gamma) -> (g, dg/dphi, dg/dgamma)`` for one model.

    Distribution constants (moments, nodes) are bound once so repeated
    evaluation inside the solver stays cheap.
    """
    if isinstance(model, Threshold):
        return partial(threshold_terms, model, dist, state=state)
    if isinstance(model, Monomial):
        k, q = model.k, model.q
        c = k * dist.moment(q)

        def monomial(r_hat, phi, gamma):
            y = _ratio(gamma, phi)
            yq1 = y ** (q - 1) if q != 1 else np.ones_like(y)
            g = r_hat * (phi - c * gamma * yq1)
            return g, r_hat * (1.0 + c * (q - 1) * yq1 * y), -r_hat * c * q * yq1

        return monomial
    if isinstance(model, Exponential):
        kap = model.kappa
        ek = np.exp(-kap)

        def exponential(r_hat, phi, gamma):
            s = kap * _ratio(gamma, phi)
            m0, m1 = dist.mgf(s), dist.mgf_deriv(s)
            g = r_hat * phi * (1.0 - ek * m0)
            return g, r_hat * (1.0 - ek * (m0 - s * m1)), -r_hat * kap * ek * m1

        return exponential
    if isinstance(model, PiecewiseQuadratic):
        v, w = dist.nodes()
        v2w = v * v * w
        tau2 = model.tau**2
        above = 0.0 if model.paper_literal_loss else 1.0

        def piecewise(r_hat, phi, gamma):
            y = _ratio(gamma, phi)
            inside = np.multiply.outer(y, v) <= model.tau
            m2 = inside @ v2w  # E[D^2; inside]
            sq = y * y * m2 / tau2
            p_out = 1.0 - inside @ w
            g = r_hat * phi * (1.0 - sq - above * p_out)
            return g, r_hat * (1.0 + sq - above * p_out), -2.0 * r_hat * y * m2 / tau2

        return piecewise
    raise TypeError(f"unsupported loss model: {model!r}")


def convex_terms(model, dist: DemandDistribution, r_hat, phi, gamma):
    """Expected rate and its partial derivatives for a convex loss model.

    Vectorised over users sharing ``model``; returns ``(g, dg/dphi, dg/dgamma)``.
    At ``phi = gamma = 0`` the derivatives are one-sided along ``gamma = 0``.
    """
    if isinstance(model, Threshold):
        raise TypeError("threshold model is not a convex loss")
    r_hat, phi, gamma = (np.asarray(a, dtype=float) for a in (r_hat, phi, gamma))
    return terms_fn(model, dist)(r_hat, phi, gamma)


def threshold_terms(model: Threshold, dist: DemandDistribution, r_hat, phi, gamma, state: int = 0):
    """Expected rate ``r_hat * phi * P(D < phi t(phi) / gamma)`` and derivatives."""
    r_hat, phi, gamma = (np.asarray(a, dtype=float) for a in (r_hat, phi, gamma))
    beta = model.exponent
    unpunctured = gamma <= 0
    arg = _ratio(phi * model.t(phi, state), gamma)
    cdf = np.where(unpunctured, 1.0, dist.cdf_left(arg))
    g = r_hat * phi * cdf
    pdf = dist.pdf(arg)
    if pdf is None:
        lo = dist.cdf_left(np.maximum(arg - FD_STEP, 0.0))
        hi = dist.cdf_left(arg + FD_STEP)
        pdf = (hi - lo) / (2 * FD_STEP)
    pdf = np.where(unpunctured, 0.0, pdf)
    # d arg / d phi = (1 + beta) arg / phi ; d arg / d gamma = -arg / gamma
    dphi = r_hat * (cdf + (1.0 + beta) * pdf * arg)
    dgam = -r_hat * _ratio(phi * pdf * arg, gamma)
    return g, dphi, dgam


def rate_terms(model, dist, r_hat, phi, gamma, state: int = 0):
    return terms_fn(model, dist, state if isinstance(model, Threshold) else 0)(
        np.asarray(r_hat, dtype=float), np.asarray(phi, dtype=float), np.asarray(gamma, dtype=float)
    )


def _check_pair(phi, gamma, delta):
    if phi < 0 or gamma < 0 or (1.0 - delta) * gamma > phi + 1e-9:
        raise ValueError(f"infeasible pair phi={phi}, gamma={gamma} for delta={delta}")


def expected_rate_convex(r_hat: float, phi: float, gamma: float, dist: DemandDistribution, model) -> float:
    """Mean rate ``r_hat * phi * (1 - E[h(gamma D / phi)])`` over the demand law."""
    _check_pair(phi, gamma, dist.delta)
    if phi == 0:
        return 0.0
    return float(convex_terms(model, dist, r_hat, phi, gamma)[0])


def _as_threshold(t_fn) -> Threshold:
    if isinstance(t_fn, Threshold):
        return t_fn
    return Threshold(float(t_fn))


def expected_rate_threshold(r_hat: float, phi: float, gamma: float, t_fn, dist, state: int = 0) -> float:
    """Mean rate under the all-or-nothing threshold loss."""
    if phi <= 0:
        return 0.0
    return float(threshold_terms(_as_threshold(t_fn), dist, r_hat, phi, gamma, state)[0])


# ------------------------------------------------------- threshold placements


def _thresholds(phi: np.ndarray, t_fn, state: int = 0) -> np.ndarray:
    """Per-user ``t_u(phi_u)``.

    ``t_fn`` may be a callable of the share vector, a sequence of per-user
    ``Threshold`` models or constants, or a single constant.
    """
    if callable(t_fn):
        return np.asarray(t_fn(phi), dtype=float)
    if isinstance(t_fn, Threshold):
        return t_fn.t(phi, state)
    if np.ndim(t_fn) == 0:
        return np.full_like(phi, float(t_fn))
    out = []
    for p, t in zip(phi, t_fn):
        out.append(float(t.t(p, state)) if isinstance(t, Threshold) else float(t))
    return np.array(out)


def tp_weights(phi, t_fn, state: int = 0) -> np.ndarray:
    """Threshold-proportional placement: ``gamma_u`` proportional to ``phi_u t_u(phi_u)``."""
    phi = np.asarray(phi, dtype=float)
    w = phi * _thresholds(phi, t_fn, state)
    total = w.sum()
    if total <= 0:
        raise ValueError("TP undefined: all threshold-weighted shares are zero")
    return w / total


def loss_probability(phi, gamma, t_fn, dist: DemandDistribution, state: int = 0) -> np.ndarray:
    """Per-user probability ``P(D >= phi_u t_u / gamma_u)`` of losing the slot."""
    phi = np.asarray(phi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    arg = _ratio(phi * _thresholds(phi, t_fn, state), gamma)
    return np.where(gamma > 0, 1.0 - dist.cdf_left(arg), 0.0)


def pooled_loss_bound(phi, t_fn, dist: DemandDistribution, state: int = 0) -> float:
    """``P(D >= sum_u phi_u t_u(phi_u))``: no placement loses less often."""
    phi = np.asarray(phi, dtype=float)
    return float(1.0 - dist.cdf_left(float(np.sum(phi * _thresholds(phi, t_fn, state)))))


# ------------------------------------------------------------ concavity probe


@dataclass(frozen=True)
class ConcavityReport:
    pairs: int
    violations: int
    worst: float
    worst_pair: tuple | None

    @property
    def concave(self) -> bool:
        return self.violations == 0


def concavity_probe(
    g: Callable[[np.ndarray], float],
    domain: Callable[[np.random.Generator], np.ndarray],
    num_pairs: int = 10_000,
    tol: float = 1e-9,
    rng: np.random.Generator | None = None,
) -> ConcavityReport:
    """Midpoint test ``g((x+y)/2) >= (g(x)+g(y))/2 - tol`` on random pairs.

    ``domain`` draws one point of a convex set per call.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    count, worst, worst_pair = 0, 0.0, None
    for _ in range(num_pairs):
        x, y = domain(rng), domain(rng)
        gap = 0.5 * (g(x) + g(y)) - g(0.5 * (x + y))
        if gap > tol:
            count += 1
        if gap > worst:
            worst, worst_pair = gap, (x, y)
    return ConcavityReport(num_pairs, count, worst, worst_pair)


def feasible_pair_domain(delta: float, gamma_min: float = 0.0):
    """Sampler of ``(phi, gamma)`` with ``(1-delta) gamma <= phi <= 1``."""

    def draw(rng: np.random.Generator) -> np.ndarray:
        gamma = rng.uniform(gamma_min, 1.0)
        phi = rng.uniform((1.0 - delta) * gamma, 1.0)
        return np.array([phi, gamma])

    return draw
