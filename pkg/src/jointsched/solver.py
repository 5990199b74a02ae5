"""Per-slot weighted rate maximisation over the coupled allocation/placement polytope.

The feasible set is ``{sum(phi) = 1, sum(gamma) = 1, gamma >= 0,
phi >= (1 - delta) * gamma}``.  The solver works in the coordinates
``gamma`` and ``z = phi - (1 - delta) * gamma``, which turn the set into a
product of two scaled simplices with a cheap exact projection.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .demand import DemandDistribution
from .rates import group_users, rate_terms

GRID_CHUNK = 20_000  # candidate (phi, gamma) pairs per batch


class ConcavityWarning(RuntimeWarning):
    """The line search could not make progress; the problem is likely not concave there."""


class ProjectionError(RuntimeError):
    pass


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}`` (sort based)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - total
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    k = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, k[..., None], axis=-1) / (k[..., None] + 1)
    out = np.maximum(v - theta, 0.0)
    # large inputs lose digits in v - theta; restore the exact total
    mass = out.sum(axis=-1, keepdims=True)
    return np.divide(out * total, mass, out=out, where=mass > 0)


def _project_coupling(phi, gamma, delta):
    # per-coordinate projection onto {phi >= (1 - delta) gamma}
    a = 1.0 - delta
    viol = a * gamma - phi
    bad = viol > 0
    step = np.where(bad, viol / (1.0 + a * a), 0.0)
    return phi + step, gamma - a * step


def project_feasible(phi, gamma, delta: float, max_cycles: int = 10_000, tol: float = 1e-10):
    """Euclidean projection of ``(phi, gamma)`` onto the feasible polytope (Dykstra)."""
    x = np.concatenate([np.asarray(phi, float), np.asarray(gamma, float)])
    n = x.size // 2
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_cycles):
        y = x + p
        y_new = np.concatenate([project_simplex(y[:n]), project_simplex(y[n:])])
        p = y - y_new
        z = y_new + q
        ph, ga = _project_coupling(z[:n], z[n:], delta)
        x_new = np.concatenate([ph, ga])
        q = z - x_new
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    else:
        resid = _residual(x[:n], x[n:], delta)
        raise ProjectionError(f"Dykstra projection did not converge (residual {resid:.3g})")
    return x[:n], x[n:]


def _residual(phi, gamma, delta):
    return max(
        abs(phi.sum() - 1),
        abs(gamma.sum() - 1),
        float(np.max(np.maximum(-phi, 0))),
        float(np.max(np.maximum(-gamma, 0))),
        float(np.max(np.maximum((1 - delta) * gamma - phi, 0))),
    )


@dataclass
class SlotProblem:
    """Maximise ``sum_u weights[u] * g_u(phi_u, gamma_u)`` in one channel state."""

    weights: np.ndarray
    r_hat: np.ndarray
    models: tuple
    dist: DemandDistribution
    delta: float
    state: int = 0
    _groups: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.r_hat = np.asarray(self.r_hat, dtype=float)
        self.models = tuple(self.models)
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        self._groups = group_users(self.models)

    @property
    def num_users(self) -> int:
        return self.weights.size

    def rate_terms(self, phi, gamma):
        """Per-user expected rates and partials; last axis indexes users."""
        phi = np.asarray(phi, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        g = np.empty(np.broadcast(phi, gamma).shape)
        dphi, dgam = np.empty_like(g), np.empty_like(g)
        for model, idx in self._groups.items():
            a, b, c = rate_terms(
                model, self.dist, self.r_hat[idx], phi[..., idx], gamma[..., idx], self.state
            )
            g[..., idx], dphi[..., idx], dgam[..., idx] = a, b, c
        return g, dphi, dgam

    def rates(self, phi, gamma):
        return self.rate_terms(phi, gamma)[0]

    def objective(self, phi, gamma):
        return self.rates(phi, gamma) @ self.weights


@dataclass
class SolveResult:
    phi: np.ndarray
    gamma: np.ndarray
    objective: float
    iterations: int
    history: list


def spg_ascent(evaluate, gam, z, delta: float, tol: float = 1e-9, max_iters: int = 5000, record: bool = False):
    """Spectral projected gradient ascent over ``gamma`` and ``z`` (last axis = users).

    ``evaluate(gam, z)`` returns the objective and its gradients with respect
    to both blocks.  Leading axes are independent simplices (e.g. one per
    channel state) sharing a single objective.
    """
    a = 1.0 - delta
    f, gg, gz = evaluate(gam, z)
    history = [f] if record else []
    step = 1.0 / max(np.max(np.abs(np.concatenate([gg.ravel(), gz.ravel()]))), 1e-12)
    small = 0
    it = 0
    for it in range(1, max_iters + 1):
        dg = project_simplex(gam + step * gg) - gam
        dz = project_simplex(z + step * gz, delta) - z
        slope = float(np.vdot(gg, dg) + np.vdot(gz, dz))
        scale = max(1.0, abs(f))
        if max(np.max(np.abs(dg)), np.max(np.abs(dz))) < 1e-14 or slope <= 1e-13 * scale:
            break
        lam = 1.0
        while True:
            gam_t, z_t = gam + lam * dg, z + lam * dz
            f_t, gg_t, gz_t = evaluate(gam_t, z_t)
            if f_t >= f + 1e-4 * lam * slope:
                break
            # safeguarded quadratic interpolation of f along the step
            denom = 2.0 * (f_t - f - lam * slope)
            lam_q = -slope * lam * lam / denom if denom < 0 else 0.5 * lam
            lam = min(max(lam_q, 0.1 * lam), 0.5 * lam)
            if lam < 1e-10:
                f_t = None
                break
        if f_t is None:
            if slope <= 1e-8 * scale or np.min(a * gam + z) <= 1e-9:
                break  # stationary up to rounding, or stuck on a face where g has a kink
            warnings.warn(
                f"line search failed at objective {f:.6g}; returning best iterate", ConcavityWarning, stacklevel=3
            )
            break
        sg, sz = gam_t - gam, z_t - z
        yg, yz = gg_t - gg, gz_t - gz
        ss = float(np.vdot(sg, sg) + np.vdot(sz, sz))
        sy = -float(np.vdot(sg, yg) + np.vdot(sz, yz))
        step = min(max(ss / sy, 1e-10), 1e10) if sy > 0 else 1e10 if ss > 0 else step
        gain = f_t - f
        gam, z, f, gg, gz = gam_t, z_t, f_t, gg_t, gz_t
        if record:
            history.append(f)
        small = small + 1 if gain < tol * max(1.0, abs(f)) else 0
        if small >= 2:
            break
    return gam, z, f, it, history


def solve_per_slot(
    problem: SlotProblem,
    tol: float = 1e-9,
    max_iters: int = 5000,
    start: tuple | None = None,
    record: bool = False,
) -> SolveResult:
    """Spectral projected gradient ascent.

    Starts from the uniform point (or ``start = (phi, gamma)``), takes
    Barzilai-Borwein steps safeguarded by an Armijo line search, and stops
    once the objective gains less than ``tol`` (relative to ``max(1, |f|)``)
    on two consecutive iterations.
    """
    n, delta, w = problem.num_users, problem.delta, problem.weights
    a = 1.0 - delta
    if n == 1:
        one = np.ones(1)
        return SolveResult(one, one.copy(), float(problem.objective(one, one)), 0, [])
    if start is None:
        gam = np.full(n, 1.0 / n)
        z = np.full(n, delta / n)
    else:
        gam = project_simplex(start[1])
        z = project_simplex(np.asarray(start[0], float) - a * gam, delta)

    def evaluate(gam, z):
        phi = a * gam + z
        idle = phi <= 1e-14
        if not idle.any():
            g, dphi, dgam = problem.rate_terms(phi, gam)
            return float(g @ w), w * (dgam + a * dphi), w * dphi
        # g is positively homogeneous and not differentiable where a user holds
        # nothing; use its exact directional derivatives along the two axes.
        probe_phi = np.stack([phi, np.where(idle, a, phi)])
        probe_gam = np.stack([gam, np.where(idle, 1.0, gam)])
        g, dphi, dgam = problem.rate_terms(probe_phi, probe_gam)
        d_gam = np.where(idle, g[1], dgam[0] + a * dphi[0])
        return float(g[0] @ w), w * d_gam, w * dphi[0]

    gam, z, f, it, history = spg_ascent(evaluate, gam, z, delta, tol, max_iters, record)
    phi = a * gam + z
    return SolveResult(phi, gam, f, it, history)


def _grid_simplex(n: int, steps: int) -> np.ndarray:
    """All points of the n-simplex with coordinates on a 1/steps grid."""
    pts = []
    for c in itertools.product(range(steps + 1), repeat=n - 1):
        if sum(c) <= steps:
            pts.append(c + (steps - sum(c),))
    return np.array(pts, dtype=float) / steps


def grid_oracle(problem: SlotProblem, resolution: float = 0.01):
    """Exhaustive scan of feasible grid points; returns ``(phi, gamma, objective)``."""
    n = problem.num_users
    if n > 3:
        raise ValueError("grid oracle supports at most 3 users")
    steps = int(round(1.0 / resolution))
    pts = _grid_simplex(n, steps)
    a = 1.0 - problem.delta
    best_f, best = -np.inf, None
    chunk = max(1, GRID_CHUNK // len(pts))
    for i in range(0, len(pts), chunk):
        phi = pts[i : i + chunk]
        ok = np.all(a * pts[None, :, :] <= phi[:, None, :] + 1e-12, axis=-1)
        pi, gi = np.nonzero(ok)
        if pi.size == 0:
            continue
        vals = problem.objective(phi[pi], pts[gi])
        k = int(np.argmax(vals))
        if vals[k] > best_f:
            best_f, best = float(vals[k]), (phi[pi[k]].copy(), pts[gi[k]].copy())
    return best[0], best[1], best_f


# ------------------------------------------------------------ two-user solver
#
# Every homogeneous rate function is a perspective: g(phi, gamma) = phi * G(y)
# with y = gamma / phi and G(y) = g(1, y).  For fixed ratios y the per-slot
# problem is a linear program in phi with two equality constraints
# (sum(phi) = 1, sum(phi * y) = 1), so some optimum serves at most two users:
# one with y <= 1 and one with y >= 1.  For a given pair the best ratios are
# found by a one-dimensional root search on the slope mu of the line joining
# the two chosen points of (y, w r G(y)).


def _is_homogeneous(model) -> bool:
    return getattr(model, "exponent", 0.0) == 0.0


def _upper_hull(ys, gs):
    hull = [0]
    for j in range(1, ys.size):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            if (gs[i1] - gs[i0]) * (ys[j] - ys[i0]) <= (gs[j] - gs[i0]) * (ys[i1] - ys[i0]):
                hull.pop()
            else:
                break
        hull.append(j)
    hy, hg = ys[hull], gs[hull]
    return hy, hg, -np.diff(hg) / np.diff(hy)  # negated slopes increase


@lru_cache(maxsize=1024)
def _ratio_tables(model, dist, state: int, a: float, points: int):
    """Upper hulls of ``y -> G(y)`` on ``[0, 1]`` and on ``[1, 1/a]`` (unit peak rate)."""
    left = np.linspace(0.0, 1.0, points)
    right = np.linspace(1.0, 1.0 / a, max(2, int(points * (1.0 / a - 1.0)) + 1))
    out = []
    for ys in (left, right):
        gs = rate_terms(model, dist, 1.0, np.ones_like(ys), ys, state)[0]
        out.append(_upper_hull(ys, gs))
    return tuple(out)


class _PairSearch:
    def __init__(self, problem: SlotProblem, points: int):
        a = 1.0 - problem.delta
        n = problem.num_users
        self.c = problem.weights * problem.r_hat
        self.n = n
        self.groups = []
        for model, idx in problem._groups.items():
            st = problem.state if hasattr(model, "alpha_at") else 0
            self.groups.append((idx, _ratio_tables(model, problem.dist, st, a, points)))
        self.scale = float(self.c.max())

    def side(self, mu: float, side: int, penalty):
        """Best value ``max_y c G(y) - mu (y - 1)`` per user on one side of y = 1."""
        vals = penalty.copy()
        ys = np.ones(self.n)
        for idx, tabs in self.groups:
            hy, hg, negs = tabs[side]
            c = self.c[idx]
            k = negs.searchsorted(-mu / c)
            ys[idx] = hy[k]
            vals[idx] += c * hg[k] - mu * (hy[k] - 1.0)
        return vals, ys

    def solve(self, lmask, rmask):
        """Root of ``max(left) - max(right)`` in the slope ``mu``.

        Both maxima are piecewise linear in ``mu``, so a safeguarded Newton
        iteration on the active lines usually lands on the root exactly.
        """
        pen_l = np.where(lmask, 0.0, -np.inf)
        pen_r = np.where(rmask, 0.0, -np.inf)

        def at(mu):
            lv, ly = self.side(mu, 0, pen_l)
            rv, ry = self.side(mu, 1, pen_r)
            u, v = int(np.argmax(lv)), int(np.argmax(rv))
            return lv[u] - rv[v], u, ly[u], lv[u], v, ry[v], rv[v]

        span = 10.0 * self.scale + 1.0
        tol = 1e-13 * span
        lo, hi, mu = -np.inf, np.inf, 0.0
        for it in range(400):
            gap, u, yl, lval, v, yr, rval = at(mu)
            if abs(gap) <= 1e-12 * self.scale:
                break
            if gap < 0:
                lo = mu
            else:
                hi = mu
            if hi - lo <= tol:
                break
            nxt = mu - gap / (yr - yl) if yr != yl else None
            if nxt is None or not lo < nxt < hi or it >= 30:
                if np.isfinite(lo) and np.isfinite(hi):
                    nxt = 0.5 * (lo + hi)
                else:
                    nxt = lo + span if np.isfinite(lo) else hi - span
                    span *= 4.0
            mu = nxt
        return u, float(yl), v, float(yr), max(lval, rval)

    def best(self, lmask, rmask, depth: int = 0):
        """Best legitimate pair (distinct users unless one sits at y = 1)."""
        if not lmask.any() or not rmask.any():
            return None
        u, yl, v, yr, val = self.solve(lmask, rmask)
        if u != v or yl == 1.0 or yr == 1.0 or depth > 6:
            return u, yl, v, yr, val
        options = []
        for lm, rm in ((_only(u, self.n), _without(rmask, u)), (_without(lmask, u), _only(u, self.n)), (_without(lmask, u), _without(rmask, u))):
            lm, rm = lm & lmask, rm & rmask
            res = self.best(lm, rm, depth + 1)
            if res is not None:
                options.append(res)
        return max(options, key=lambda r: r[4]) if options else None


def _only(u, n):
    m = np.zeros(n, dtype=bool)
    m[u] = True
    return m


def _without(mask, u):
    m = mask.copy()
    m[u] = False
    return m


def solve_per_slot_pairs(problem: SlotProblem, points: int = 2001, **_) -> SolveResult:
    """Per-slot optimum through the two-user structure of homogeneous rates.

    Ratios are restricted to a grid of ``points`` values on ``[0, 1]`` (and a
    matching spacing above 1); the returned objective is evaluated exactly.
    Non-homogeneous thresholds fall back to :func:`solve_per_slot`.
    """
    n = problem.num_users
    if n == 1 or not all(_is_homogeneous(m) for m in problem.models):
        return solve_per_slot(problem)
    search = _PairSearch(problem, points)
    live = search.c > 0
    phi = np.zeros(n)
    gam = np.zeros(n)
    if not live.any():
        phi[0] = gam[0] = 1.0
        return SolveResult(phi, gam, float(problem.objective(phi, gam)), 0, [])
    search.c = np.where(live, search.c, 1e-300)
    u, yl, v, yr, _ = search.best(live, live)
    if yl == 1.0 or yr == yl:
        phi[u] = gam[u] = 1.0
    elif yr == 1.0:
        phi[v] = gam[v] = 1.0
    else:
        theta = (yr - 1.0) / (yr - yl)
        phi[u] += theta
        phi[v] += 1.0 - theta
        gam[u] += theta * yl
        gam[v] += (1.0 - theta) * yr
    gam /= gam.sum()
    phi = np.maximum(phi, (1.0 - problem.delta) * gam)
    phi /= phi.sum()
    return SolveResult(phi, gam, float(problem.objective(phi, gam)), 0, [])
