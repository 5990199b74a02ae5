"""Domain types, feasibility checks and JSON (de)serialisation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .demand import (
    DemandDistribution,
    DiscreteMinislot,
    demand_from_dict,
)

FEAS_TOL = 1e-9
CONFIG_KEYS = (
    "users",
    "states",
    "minislots",
    "delta",
    "rb_count",
    "state_probs",
    "peak_rates",
    "utilities",
    "loss_models",
    "demand",
)


class ConfigError(ValueError):
    """Malformed configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, constraint: str):
        super().__init__(f"{field_name}: {constraint}")
        self.field = field_name
        self.constraint = constraint


# ---------------------------------------------------------------- loss models


@dataclass(frozen=True)
class Monomial:
    """``h(x) = k * x**q``; ``Monomial(1, 1)`` is the linear model."""

    k: float = 1.0
    q: float = 1.0
    kind = "monomial"

    def h(self, x):
        return self.k * np.asarray(x, dtype=float) ** self.q

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "q": self.q}


def Linear() -> Monomial:
    return Monomial(1.0, 1.0)


@dataclass(frozen=True)
class Exponential:
    """``h(x) = exp(kappa * (x - 1))``; note ``h(0) = exp(-kappa) > 0``."""

    kappa: float
    kind = "exponential"

    def h(self, x):
        return np.exp(self.kappa * (np.asarray(x, dtype=float) - 1.0))

    def to_dict(self):
        return {"kind": self.kind, "kappa": self.kappa}


@dataclass(frozen=True)
class PiecewiseQuadratic:
    """``h(x) = min((x / tau)**2, 1)``.

    With ``paper_literal_loss`` the loss drops back to 0 above ``tau``
    instead of saturating at 1.
    """

    tau: float = 0.7
    paper_literal_loss: bool = False
    kind = "piecewise_quadratic"

    def h(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x / self.tau) ** 2
        above = 0.0 if self.paper_literal_loss else 1.0
        return np.where(x <= self.tau, inside, above)

    def to_dict(self):
        d = {"kind": self.kind, "tau": self.tau}
        if self.paper_literal_loss:
            d["paper_literal_loss"] = True
        return d


@dataclass(frozen=True)
class Threshold:
    """All-or-nothing loss once the relative load reaches ``t(phi)``.

    ``t(phi) = alpha * phi**exponent``; ``alpha`` is either one number or a
    tuple with one entry per channel state.
    """

    alpha: float | tuple = 0.5
    exponent: float = 0.0
    kind = "threshold"

    def __post_init__(self):
        if isinstance(self.alpha, (list, tuple, np.ndarray)):
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        else:
            object.__setattr__(self, "alpha", float(self.alpha))

    def alpha_at(self, state: int = 0) -> float:
        return self.alpha[state] if isinstance(self.alpha, tuple) else self.alpha

    def t(self, phi, state: int = 0):
        phi = np.asarray(phi, dtype=float)
        if self.exponent == 0:
            return np.full_like(phi, self.alpha_at(state))
        return self.alpha_at(state) * phi**self.exponent

    def h(self, x, phi=1.0, state: int = 0):
        return (np.asarray(x, dtype=float) >= self.t(phi, state)).astype(float)

    def to_dict(self):
        a = list(self.alpha) if isinstance(self.alpha, tuple) else self.alpha
        d = {"kind": self.kind, "alpha": a}
        if self.exponent:
            d["exponent"] = self.exponent
        return d


LossModel = Monomial | Exponential | PiecewiseQuadratic | Threshold


def loss_model_from_dict(d: dict) -> LossModel:
    kind = d.get("kind")
    try:
        if kind == "linear":
            return Linear()
        if kind == "monomial":
            return Monomial(float(d.get("k", 1.0)), float(d.get("q", 1.0)))
        if kind == "exponential":
            return Exponential(float(d["kappa"]))
        if kind == "piecewise_quadratic":
            return PiecewiseQuadratic(float(d.get("tau", 0.7)), bool(d.get("paper_literal_loss", False)))
        if kind == "threshold":
            return Threshold(d["alpha"], float(d.get("exponent", 0.0)))
    except KeyError as exc:
        raise ConfigError("loss_models", f"missing field {exc.args[0]!r} for kind {kind!r}") from None
    raise ConfigError("loss_models", f"unknown kind {kind!r}")


# ------------------------------------------------------------------ utilities


@dataclass(frozen=True)
class LogUtility:
    """``U(r) = log(r) + offset``; ``label`` tags a user class for reporting."""

    offset: float = 0.0
    label: str = ""

    def value(self, r):
        return np.log(r) + self.offset

    def deriv(self, r):
        return 1.0 / np.asarray(r, dtype=float)

    def to_dict(self):
        d = {"offset": self.offset}
        if self.label:
            d["class"] = self.label
        return d


# ---------------------------------------------------------------------- config


@dataclass(frozen=True, eq=False)
class SystemConfig:
    num_users: int
    state_probs: np.ndarray
    peak_rates: np.ndarray  # shape (users, states)
    utilities: tuple
    loss_models: tuple
    demand: DemandDistribution
    delta: float
    num_minislots: int = 8
    rb_count: int = 100

    def __post_init__(self):
        for name in ("state_probs", "peak_rates"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "utilities", tuple(self.utilities))
        object.__setattr__(self, "loss_models", tuple(self.loss_models))

    @property
    def num_states(self) -> int:
        return int(self.state_probs.size)

    @property
    def minislot_cap(self) -> float:
        return 1.0 / self.num_minislots

    @property
    def rho(self) -> float:
        return self.demand.rho

    @property
    def user_classes(self) -> tuple:
        return tuple(u.label for u in self.utilities)

    def to_dict(self) -> dict:
        return {
            "users": self.num_users,
            "states": self.num_states,
            "minislots": self.num_minislots,
            "delta": self.delta,
            "rb_count": self.rb_count,
            "state_probs": self.state_probs.tolist(),
            "peak_rates": self.peak_rates.tolist(),
            "utilities": [u.to_dict() for u in self.utilities],
            "loss_models": [m.to_dict() for m in self.loss_models],
            "demand": self.demand.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        missing = [k for k in CONFIG_KEYS if k not in d]
        if missing:
            raise ConfigError(missing[0], "required key missing")
        extra = sorted(set(d) - set(CONFIG_KEYS))
        if extra:
            raise ConfigError(extra[0], "unknown key")
        try:
            users = int(d["users"])
            minislots = int(d["minislots"])
            delta = float(d["delta"])
            probs = np.asarray(d["state_probs"], dtype=float)
            peak = np.asarray(d["peak_rates"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("config", f"non-numeric value ({exc})") from None
        if peak.ndim != 2:
            raise ConfigError("peak_rates", "must be a users x states matrix")
        if probs.size != int(d["states"]):
            raise ConfigError("state_probs", "length differs from states")
        utils = tuple(
            LogUtility(float(u.get("offset", 0.0)), str(u.get("class", ""))) for u in d["utilities"]
        )
        models = tuple(loss_model_from_dict(m) for m in d["loss_models"])
        if not isinstance(d["demand"], dict):
            raise ConfigError("demand", "must be an object")
        try:
            demand = demand_from_dict(d["demand"], delta, minislots)
        except ValueError as exc:
            raise ConfigError("demand", str(exc)) from None
        return cls(
            num_users=users,
            state_probs=probs,
            peak_rates=peak,
            utilities=utils,
            loss_models=models,
            demand=demand,
            delta=delta,
            num_minislots=minislots,
            rb_count=int(d["rb_count"]),
        )


def load_config(path: str | Path) -> SystemConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return SystemConfig.from_dict(raw)


def save_config(cfg: SystemConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


# ------------------------------------------------------------------ validation


def _model_violations(i: int, m, num_states: int) -> list[str]:
    out = []
    where = f"loss_models[{i}]"
    if isinstance(m, Monomial):
        if m.k < 0 or m.q < 1:
            out.append(f"{where}: monomial needs k >= 0 and q >= 1")
    elif isinstance(m, Exponential):
        if not m.kappa > 0:
            out.append(f"{where}: kappa must be positive")
    elif isinstance(m, PiecewiseQuadratic):
        if not 0 < m.tau <= 1:
            out.append(f"{where}: tau outside (0,1]")
    elif isinstance(m, Threshold):
        alphas = m.alpha if isinstance(m.alpha, tuple) else (m.alpha,)
        if isinstance(m.alpha, tuple) and len(alphas) != num_states:
            out.append(f"{where}: per-state alpha length differs from states")
        if any(not 0 <= a <= 1 for a in alphas):
            out.append(f"{where}: alpha outside [0,1]")
        return out
    else:
        return [f"{where}: unknown loss model"]
    if out:
        return out
    xs = np.linspace(0.0, 1.0, 1001)
    hs = m.h(xs)
    if hs.min() < -1e-12 or hs.max() > 1 + 1e-12:
        out.append(f"{where}: h does not map [0,1] into [0,1]")
    if np.any(np.diff(hs) < -1e-12):
        out.append(f"{where}: h is not non-decreasing")
    return out


def validate_config(cfg: SystemConfig) -> list[str]:
    """List every violated invariant of ``cfg`` (empty list means valid)."""
    errs = []
    if cfg.num_users < 1:
        errs.append("users: must be at least 1")
    if cfg.num_minislots < 1:
        errs.append("minislots: must be at least 1")
    if cfg.rb_count < 1:
        errs.append("rb_count: must be at least 1")
    if not (0 < cfg.delta < 1):
        errs.append("delta outside (0,1)")
    p = cfg.state_probs
    if p.ndim != 1 or p.size == 0:
        errs.append("state_probs: must be a non-empty vector")
    else:
        if np.any(p < 0):
            errs.append("state_probs: negative entry")
        if abs(p.sum() - 1.0) > 1e-12:
            errs.append(f"state_probs sum ≠ 1 (got {p.sum():.12g})")
    if cfg.peak_rates.shape != (cfg.num_users, p.size):
        errs.append(f"peak_rates: shape {cfg.peak_rates.shape} != (users, states)")
    if np.any(~np.isfinite(cfg.peak_rates)) or np.any(cfg.peak_rates < 0):
        errs.append("peak_rates: entries must be finite and >= 0")
    if len(cfg.utilities) != cfg.num_users:
        errs.append("utilities: one entry per user required")
    if len(cfg.loss_models) != cfg.num_users:
        errs.append("loss_models: one entry per user required")
    for i, m in enumerate(cfg.loss_models):
        errs.extend(_model_violations(i, m, p.size))
    d = cfg.demand
    if d.minislots != cfg.num_minislots or d.delta != cfg.delta:
        errs.append("demand: slot geometry differs from config")
    if isinstance(d, DiscreteMinislot):
        if min(d.values) < 0:
            errs.append("demand: negative minislot value")
        if max(d.values) > d.cap + 1e-12:
            errs.append("demand: minislot value above the (1-delta)/minislots cap")
    if not math.isclose(cfg.minislot_cap * cfg.num_minislots, 1.0, rel_tol=0, abs_tol=1e-12):
        errs.append("minislot cap times minislots must equal 1")
    return errs


def check_joint_feasibility(phi, gamma, delta: float, tol: float = FEAS_TOL) -> bool:
    """True iff both share vectors sum to one per state and ``(1-delta) gamma <= phi``.

    Rows are users; a 2-d input holds one column per channel state.
    """
    phi = np.asarray(phi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if phi.shape != gamma.shape:
        raise ValueError(f"shape mismatch: {phi.shape} vs {gamma.shape}")
    for x in (phi, gamma):
        if np.any(x < -tol) or np.any(x > 1 + tol):
            return False
        if np.any(np.abs(x.sum(axis=0) - 1.0) > tol):
            return False
    return bool(np.all((1.0 - delta) * gamma <= phi + tol))

