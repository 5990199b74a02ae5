"""URLLC demand laws, channel-state sampling and seeded random streams.

Demands are normalised so that one eMBB slot carries at most one unit of
resource and each of its ``minislots`` minislots at most ``1/minislots``.
With a ``(1 - delta)`` sharing factor a single minislot may carry at most
``(1 - delta) / minislots`` of URLLC traffic; anything above that is
truncated and reported as blocked volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

QUAD_POINTS = 2000
# float sums of atoms (e.g. 4 * 0.0875) may land one ulp above the exact value
CDF_EPS = 1e-12


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for ``seed`` and an optional stream path.

    Streams with different ``keys`` are statistically independent
    (``SeedSequence`` spawn keys), so replications and purposes never share
    random numbers.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def _check_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a non-empty 1-d array")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("probability vector must be non-negative and sum to 1")
    return p


def sample_channel_state(p_s, rng: np.random.Generator, size=None):
    """Draw i.i.d. channel-state indices with pmf ``p_s``."""
    p = _check_probs(p_s)
    return rng.choice(p.size, p=p, size=size)


def truncated_pareto_cdf(x, x_min: float, eta: float, x_max: float = 1.0):
    """CDF of a Pareto law with tail exponent ``eta`` truncated to ``[x_min, x_max]``."""
    if not 0 < x_min < x_max <= 1:
        raise ValueError("need 0 < x_min < x_max <= 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    x = np.asarray(x, dtype=float)
    z = 1.0 - (x_min / x_max) ** eta
    with np.errstate(divide="ignore"):
        body = (1.0 - (x_min / np.maximum(x, x_min)) ** eta) / z
    out = np.where(x <= x_min, 0.0, np.where(x >= x_max, 1.0, body))
    return out[()] if out.ndim == 0 else out


def _irwin_hall_cdf(y, n: int):
    """CDF of the sum of ``n`` i.i.d. U[0,1] variables (n small)."""
    y = np.asarray(y, dtype=float)
    if n == 0:
        return (y >= 0).astype(float)
    out = np.zeros_like(y)
    yc = np.clip(y, 0.0, float(n))
    for j in range(n + 1):
        out += (-1) ** j * special.comb(n, j) * np.where(yc > j, (yc - j) ** n, 0.0)
    out /= math.factorial(n)
    return np.clip(np.where(y >= n, 1.0, out), 0.0, 1.0)


def _midpoint_nodes(cdf, lo: float, hi: float, n: int):
    edges = np.linspace(lo, hi, n + 1)
    # alternating-sum CDFs can wobble by rounding in the far tails
    weights = np.diff(np.maximum.accumulate(np.clip(cdf(edges), 0.0, 1.0)))
    return 0.5 * (edges[:-1] + edges[1:]), weights


class DemandDistribution:
    """Common interface of all demand laws.

    Subclasses provide per-minislot sampling and the law of the served
    aggregate slot demand ``D``: ``cdf``, ``cdf_left`` and ``nodes``, the
    latter being an exact support (discrete laws) or a 2000-bin midpoint
    quadrature rule plus atoms (continuous laws).
    """

    kind = "abstract"
    minislots: int
    delta: float

    @property
    def cap(self) -> float:
        """Largest URLLC demand a single minislot may carry."""
        return (1.0 - self.delta) / self.minislots

    @property
    def is_discrete(self) -> bool:
        return False

    def sample_arrivals(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Raw per-minislot URLLC arrivals for ``n`` slots, shape (n, M), before any cap."""
        raise NotImplementedError

    def sample_minislots(self, rng: np.random.Generator, n: int):
        """Return ``(demands, blocked)`` for ``n`` slots; demands has shape (n, M).

        Arrivals above the minislot cap are truncated; ``blocked`` is the
        truncated volume per slot.
        """
        raw = self.sample_arrivals(rng, n)
        served = np.minimum(raw, self.cap)
        return served, (raw - served).sum(axis=1)

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        """``P(D < x)``; equals ``cdf`` away from atoms."""
        return self.cdf(x)

    def pdf(self, x):
        return None

    def nodes(self):
        raise NotImplementedError

    @property
    def max_aggregate(self) -> float:
        v, w = self.nodes()
        return float(v[w > 0].max())

    @cached_property
    def rho(self) -> float:
        return self.expect(lambda d: d)

    def expect(self, fn) -> float:
        v, w = self.nodes()
        return float(w @ fn(v))

    def moment(self, q: float) -> float:
        return self._moments(float(q))

    def _moments(self, q):
        cache = self.__dict__.setdefault("_moment_cache", {})
        if q not in cache:
            cache[q] = self.expect(lambda d: d**q)
        return cache[q]

    def mgf(self, t):
        """``E[exp(t D)]`` for an array of ``t``."""
        v, w = self.nodes()
        t = np.asarray(t, dtype=float)
        return np.exp(np.multiply.outer(t, v)) @ w

    def mgf_deriv(self, t):
        v, w = self.nodes()
        t = np.asarray(t, dtype=float)
        return np.exp(np.multiply.outer(t, v)) @ (w * v)

    def to_dict(self) -> dict:
        raise NotImplementedError


class _DiscreteLaw(DemandDistribution):
    """Aggregate of ``minislots`` i.i.d. discrete per-minislot demands."""

    @property
    def is_discrete(self) -> bool:
        return True

    def _minislot_law(self):
        raise NotImplementedError

    @cached_property
    def _support(self):
        vals, probs = self._minislot_law()
        vals = np.minimum(vals, self.cap)
        dist = {0.0: 1.0}
        for _ in range(self.minislots):
            nxt: dict[float, float] = {}
            for a, pa in dist.items():
                for b, pb in zip(vals, probs):
                    key = round(a + b, 12)
                    nxt[key] = nxt.get(key, 0.0) + pa * pb
            dist = nxt
        support = np.array(sorted(dist))
        pmf = np.array([dist[k] for k in support])
        return support, pmf

    def nodes(self):
        return self._support

    def cdf(self, x):
        s, p = self._support
        c = np.concatenate([[0.0], np.cumsum(p)])
        out = np.minimum(c[np.searchsorted(s, np.asarray(x, float) + CDF_EPS, side="right")], 1.0)
        return out[()] if np.ndim(out) == 0 else out

    def cdf_left(self, x):
        s, p = self._support
        c = np.concatenate([[0.0], np.cumsum(p)])
        out = np.minimum(c[np.searchsorted(s, np.asarray(x, float) - CDF_EPS, side="left")], 1.0)
        return out[()] if np.ndim(out) == 0 else out

    def sample_arrivals(self, rng, n):
        vals, probs = self._minislot_law()
        return rng.choice(np.asarray(vals, float), p=np.asarray(probs, float), size=(n, self.minislots))


@dataclass(frozen=True)
class BinomialMinislot(_DiscreteLaw):
    """Each minislot carries 0 w.p. ``p0`` and the full cap otherwise."""

    p0: float
    delta: float
    minislots: int = 8
    kind = "binomial"

    def __post_init__(self):
        if not 0 <= self.p0 <= 1:
            raise ValueError("p0 must lie in [0, 1]")

    def _minislot_law(self):
        return np.array([0.0, self.cap]), np.array([self.p0, 1.0 - self.p0])

    @cached_property
    def _support(self):
        k = np.arange(self.minislots + 1)
        return k * self.cap, special.comb(self.minislots, k) * (1 - self.p0) ** k * self.p0 ** (
            self.minislots - k
        )

    @cached_property
    def rho(self) -> float:
        return (1.0 - self.p0) * (1.0 - self.delta)

    def to_dict(self):
        return {"kind": self.kind, "p0": self.p0}


@dataclass(frozen=True)
class DiscreteMinislot(_DiscreteLaw):
    """Arbitrary finite per-minislot law."""

    values: tuple
    probs: tuple
    delta: float
    minislots: int = 8
    kind = "discrete"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs must have equal length")
        _check_probs(self.probs)

    def _minislot_law(self):
        return np.array(self.values), np.array(self.probs)

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class UniformMinislot(DemandDistribution):
    """Per-minislot demand U[lo, hi], truncated at the minislot cap."""

    lo: float
    hi: float
    delta: float
    minislots: int = 8
    kind = "uniform"

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise ValueError("need 0 <= lo < hi")

    @cached_property
    def _parts(self):
        # continuous part on [a, b] with density 1/(hi-lo); atom at cap with mass q
        c = self.cap
        a, b = min(self.lo, c), min(self.hi, c)
        q = float(np.clip((self.hi - c) / (self.hi - self.lo), 0.0, 1.0))
        return a, b, q

    def sample_arrivals(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=(n, self.minislots))

    def cdf(self, x):
        a, b, q = self._parts
        x = np.asarray(x, dtype=float) + CDF_EPS
        m, c = self.minislots, self.cap
        out = np.zeros_like(x)
        for k in range(m + 1):
            pk = special.comb(m, k) * q**k * (1 - q) ** (m - k)
            if pk == 0:
                continue
            shift = k * c + (m - k) * a
            if b > a:
                out += pk * _irwin_hall_cdf((x - shift) / (b - a), m - k)
            else:
                out += pk * (x >= shift)
        out = np.clip(out, 0.0, 1.0)
        return out[()] if out.ndim == 0 else out

    def cdf_left(self, x):
        a, b, q = self._parts
        x = np.asarray(x, dtype=float)
        atom = self._atom()
        out = self.cdf(x - 2 * CDF_EPS)
        if atom is not None:
            # only the all-truncated outcome (or a degenerate law) is an atom
            out = np.where(np.abs(x - atom[0]) <= CDF_EPS, self.cdf(x) - atom[1], out)
        return out[()] if np.ndim(out) == 0 else out

    def _atom(self):
        a, b, q = self._parts
        if b <= a:
            return self.minislots * self.cap, 1.0
        if q > 0:
            return self.minislots * self.cap, q**self.minislots
        return None

    @cached_property
    def _nodes(self):
        a, b, q = self._parts
        m = self.minislots
        atom = self._atom()
        if b <= a:
            return np.array([m * a if q == 0 else m * self.cap]), np.array([1.0])
        hi = m * (self.cap if q > 0 else b)
        v, w = _midpoint_nodes(self.cdf, m * a, hi, QUAD_POINTS)
        if atom is not None:
            w[-1] -= atom[1]
            v, w = np.append(v, atom[0]), np.append(w, atom[1])
        return v, w

    def nodes(self):
        return self._nodes

    @cached_property
    def rho(self) -> float:
        a, b, q = self._parts
        per = (b * b - a * a) / (2 * (self.hi - self.lo)) + q * self.cap
        return self.minislots * per

    @cached_property
    def _gl(self):
        a, b, _ = self._parts
        x, w = np.polynomial.legendre.leggauss(24)
        return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w / (self.hi - self.lo)

    def _per_minislot_mgf(self, t):
        xs, ws = self._gl
        _, _, q = self._parts
        t = np.asarray(t, dtype=float)
        e = np.exp(np.multiply.outer(t, xs))
        return e @ ws + q * np.exp(t * self.cap), e @ (ws * xs) + q * self.cap * np.exp(t * self.cap)

    def mgf(self, t):
        m1, _ = self._per_minislot_mgf(t)
        return m1**self.minislots

    def mgf_deriv(self, t):
        m1, d1 = self._per_minislot_mgf(t)
        return self.minislots * m1 ** (self.minislots - 1) * d1

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TruncatedParetoAggregate(DemandDistribution):
    """Aggregate slot demand drawn from a truncated Pareto law.

    The aggregate is split evenly over the minislots.  When ``x_max`` exceeds
    the peak admissible load ``1 - delta`` the excess is truncated and
    counted as blocked, so the served law has an atom at ``1 - delta``.
    """

    eta: float
    delta: float
    x_min: float = 0.1
    x_max: float = 1.0
    minislots: int = 8
    kind = "pareto"

    def __post_init__(self):
        if not 0 < self.x_min < self.x_max <= 1:
            raise ValueError("need 0 < x_min < x_max <= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def served_max(self) -> float:
        return min(self.x_max, 1.0 - self.delta)

    def raw_cdf(self, x):
        return truncated_pareto_cdf(x, self.x_min, self.eta, self.x_max)

    def sample_aggregate_raw(self, rng, n):
        u = rng.random(n)
        z = 1.0 - (self.x_min / self.x_max) ** self.eta
        return self.x_min * (1.0 - u * z) ** (-1.0 / self.eta)

    def sample_arrivals(self, rng, n):
        raw = self.sample_aggregate_raw(rng, n)
        return np.repeat((raw / self.minislots)[:, None], self.minislots, axis=1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= self.served_max - CDF_EPS, 1.0, self.raw_cdf(x))
        return out[()] if out.ndim == 0 else out

    def cdf_left(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > self.served_max + CDF_EPS, 1.0, self.raw_cdf(np.minimum(x, self.served_max)))
        return out[()] if out.ndim == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = 1.0 - (self.x_min / self.x_max) ** self.eta
        inside = (x > self.x_min) & (x < self.served_max)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = self.eta * self.x_min**self.eta * np.maximum(x, self.x_min) ** (-self.eta - 1) / z
        return np.where(inside, dens, 0.0)

    @cached_property
    def _nodes(self):
        top = self.served_max
        v, w = _midpoint_nodes(self.raw_cdf, self.x_min, top, QUAD_POINTS)
        atom = 1.0 - float(self.raw_cdf(top))
        if atom > 0 and self.x_max > top:
            v, w = np.append(v, top), np.append(w, atom)
        return v, w

    def nodes(self):
        return self._nodes

    @cached_property
    def rho(self) -> float:
        # E[min(X, top)] = x_min + integral of the raw survival function up to top
        top, lo, eta = self.served_max, self.x_min, self.eta
        floor = (lo / self.x_max) ** eta
        if eta == 1.0:
            head = lo * np.log(top / lo)
        else:
            head = lo**eta * (top ** (1.0 - eta) - lo ** (1.0 - eta)) / (1.0 - eta)
        return float(lo + (head - floor * (top - lo)) / (1.0 - floor))

    def to_dict(self):
        return {"kind": self.kind, "eta": self.eta, "x_min": self.x_min, "x_max": self.x_max}


def demand_from_dict(spec: dict, delta: float, minislots: int) -> DemandDistribution:
    """Build a demand law from its JSON form, binding the slot geometry."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "binomial":
            return BinomialMinislot(float(spec["p0"]), delta, minislots)
        if kind == "uniform":
            return UniformMinislot(float(spec["lo"]), float(spec["hi"]), delta, minislots)
        if kind == "pareto":
            return TruncatedParetoAggregate(
                float(spec["eta"]),
                delta,
                float(spec.get("x_min", 0.1)),
                float(spec.get("x_max", 1.0)),
                minislots,
            )
        if kind == "discrete":
            return DiscreteMinislot(spec["values"], spec["probs"], delta, minislots)
    except KeyError as exc:
        raise ValueError(f"demand: missing field {exc.args[0]!r} for kind {kind!r}") from None
    raise ValueError(f"demand: unknown kind {kind!r}")


def sample_minislot_demands(dist: DemandDistribution, rng: np.random.Generator, m: int | None = None):
    """One slot of per-minislot demands, each within the minislot cap."""
    if m is not None and m != dist.minislots:
        raise ValueError("minislot count does not match the demand law")
    demands, _ = dist.sample_minislots(rng, 1)
    return demands[0]


def aggregate_cdf(dist: DemandDistribution, x):
    """``F_D(x)`` of the served aggregate slot demand."""
    return dist.cdf(x)
