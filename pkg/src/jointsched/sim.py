"""Slot/minislot simulation loop, URLLC FCFS queue and run summaries."""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demand import make_rng, sample_channel_state
from .model import SystemConfig, Threshold
from .rates import group_users, realized_rates
from .schedulers import (
    Scheduler,
    SchedulerSpec,
    opportunistic_placement,
    proportional_loads,
    uniform_random_placement,
    update_average,
)

STREAM_STATE, STREAM_DEMAND, STREAM_PLACEMENT = 0, 1, 2
TAIL_DELAY = 2  # minislots
_CONSERVATION_TOL = 1e-9


class SimulationError(RuntimeError):
    def __init__(self, slot: int, cause: Exception):
        super().__init__(f"slot {slot}: {cause}")
        self.slot = slot


# ----------------------------------------------------------------- URLLC queue


@dataclass
class UrllcQueue:
    """FCFS fluid queue; ``chunks`` holds ``[volume, arrival minislot]`` pairs."""

    capacity: float
    chunks: deque = field(default_factory=deque)
    now: int = 0
    arrived: float = 0.0
    served: float = 0.0

    @property
    def backlog(self) -> float:
        return float(sum(c[0] for c in self.chunks))


def urllc_queue_step(queue: UrllcQueue, arrival: float, capacity: float | None = None):
    """Admit ``arrival`` and serve up to ``capacity`` FIFO in the current minislot.

    Returns the served volume and a list of ``(volume, delay)`` pairs where
    the delay counts whole minislots spent waiting.
    """
    if arrival < 0:
        raise ValueError("arrival must be non-negative")
    cap = queue.capacity if capacity is None else capacity
    if arrival > 0:
        queue.chunks.append([float(arrival), queue.now])
        queue.arrived += float(arrival)
    room = cap
    delays = []
    while queue.chunks and room > 1e-15:
        chunk = queue.chunks[0]
        take = min(chunk[0], room)
        delays.append((take, queue.now - chunk[1]))
        room -= take
        chunk[0] -= take
        if chunk[0] <= 1e-15:
            queue.chunks.popleft()
    served = cap - room
    queue.served += served
    queue.now += 1
    return served, delays


# ---------------------------------------------------------------------- traces


def sum_utility(r_bar, utilities) -> float:
    r_bar = np.asarray(r_bar, dtype=float)
    if np.any(r_bar <= 0):
        raise ValueError("sum utility needs strictly positive rates")
    return float(sum(u.value(r) for u, r in zip(utilities, r_bar)))


@dataclass
class SimSummary:
    slots: int
    warmup: int
    final_r_bar: np.ndarray
    mean_rates: np.ndarray
    sum_utility: float
    class_rates: dict
    any_loss_prob: float
    blocked_volume: float
    arrived_volume: float
    served_volume: float
    backlog: float
    delay_hist: dict
    delay_tail: float

    def to_dict(self) -> dict:
        return {
            "slots": self.slots,
            "warmup": self.warmup,
            "final_r_bar": self.final_r_bar.tolist(),
            "mean_rates": self.mean_rates.tolist(),
            "sum_utility": self.sum_utility,
            "class_rates": self.class_rates,
            "any_loss_prob": self.any_loss_prob,
            "blocked_volume": self.blocked_volume,
            "arrived_volume": self.arrived_volume,
            "served_volume": self.served_volume,
            "backlog": self.backlog,
            "delay_hist": {str(k): v for k, v in sorted(self.delay_hist.items())},
            "delay_tail": self.delay_tail,
        }


@dataclass
class SimTrace:
    summary: SimSummary
    records: dict | None = None

    def write_csv(self, path: str | Path) -> None:
        """One row per slot; requires a run with ``record=True``."""
        if self.records is None:
            raise ValueError("trace was run without per-slot records")
        rec = self.records
        n_users = rec["phi"].shape[1]
        n_mini = rec["demand"].shape[1]
        header = ["slot", "state"]
        for name in ("phi", "gamma", "load", "rate", "r_bar"):
            header += [f"{name}_{u}" for u in range(n_users)]
        header += [f"demand_{m}" for m in range(n_mini)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(rec["state"].size):
                row = [t + 1, int(rec["state"][t])]
                for name in ("phi", "gamma", "loads", "rates", "r_bar"):
                    row += [repr(float(x)) for x in rec[name][t]]
                row += [repr(float(x)) for x in rec["demand"][t]]
                w.writerow(row)

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary.to_dict(), indent=2))


def _class_means(cfg: SystemConfig, rates: np.ndarray) -> dict:
    out = {}
    for label in sorted(set(cfg.user_classes)):
        idx = [i for i, c in enumerate(cfg.user_classes) if c == label]
        out[label or "all"] = float(rates[idx].mean())
    return out


def _oblivious_slots(cfg: SystemConfig, sched: Scheduler, states, served, rng):
    """Loads and rates of all slots at once for a scheduler that ignores feedback.

    Only valid when the scheduler picks the same decision in every state.
    Returns ``(phi, loads, rates)`` with one row per slot.
    """
    dec = sched.decide(1, int(states[0]))
    phi = dec.phi
    totals = served.sum(axis=1)
    if sched.placement == "random":
        loads = uniform_random_placement(served, phi, rng, cfg.minislot_cap)
    elif sched.placement == "opportunistic":
        loads = np.empty((states.size, phi.size))
        for s in np.unique(states):
            idx = states == s
            loads[idx] = opportunistic_placement(totals[idx], cfg.peak_rates[:, s] * phi, phi)
    else:
        gamma = dec.gamma if dec.gamma is not None else phi
        loads = np.minimum(proportional_loads(np.ones(1), gamma)[None, :] * totals[:, None], phi)
    if np.any(np.abs(loads.sum(axis=1) - totals) > 1e-9):
        raise SimulationError(int(np.argmax(np.abs(loads.sum(axis=1) - totals))) + 1,
                              RuntimeError("placed load does not match served demand"))
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(phi > 0, np.clip(loads / np.where(phi > 0, phi, 1.0), 0.0, 1.0), 0.0)
    peak = cfg.peak_rates[:, states].T
    rates = np.empty_like(loads)
    for model, idx in group_users(cfg.loss_models).items():
        if isinstance(model, Threshold):
            thr = np.stack([model.t(phi[idx], int(s)) for s in states])
            lost = (x[:, idx] >= thr).astype(float)
        else:
            lost = model.h(x[:, idx])
        rates[:, idx] = peak[:, idx] * phi[idx] * (1.0 - lost)
    return np.broadcast_to(phi, loads.shape), loads, rates


def run_simulation(
    cfg: SystemConfig,
    scheduler: SchedulerSpec | str | Scheduler,
    seed: int,
    slots: int,
    replication: int = 0,
    record: bool = False,
    queue: bool = False,
    warmup_frac: float = 0.1,
) -> SimTrace:
    """Simulate ``slots`` eMBB slots; deterministic in ``(cfg, scheduler, seed, replication)``.

    With ``queue=True`` per-minislot URLLC arrivals pass through an FCFS
    queue served at ``(1 - delta) / M`` per minislot and the served volume
    punctures eMBB; otherwise arrivals above the cap are blocked.
    """
    if isinstance(scheduler, str):
        scheduler = SchedulerSpec.parse(scheduler)
    sched = scheduler.build(cfg) if isinstance(scheduler, SchedulerSpec) else scheduler
    n, m = cfg.num_users, cfg.num_minislots
    rng_s = make_rng(seed, replication, STREAM_STATE)
    rng_d = make_rng(seed, replication, STREAM_DEMAND)
    rng_p = make_rng(seed, replication, STREAM_PLACEMENT)
    states = sample_channel_state(cfg.state_probs, rng_s, size=slots)
    cap = cfg.demand.cap
    if queue:
        arrivals = cfg.demand.sample_arrivals(rng_d, slots)
        urllc = UrllcQueue(cap)
        blocked = np.zeros(slots)
    else:
        served_all, blocked = cfg.demand.sample_minislots(rng_d, slots)
        urllc = None
    delay_hist: dict = {}

    warm = int(warmup_frac * slots)
    if sched.oblivious and not queue and not record:
        phis, loads, rates = _oblivious_slots(cfg, sched, states, served_all, rng_p)
        for t in range(1, slots + 1):
            sched.estimates = update_average(sched.estimates, rates[t - 1], sched.step(t))
        pre = cfg.peak_rates[:, states].T * phis
        lossy = np.any((phis > 0) & (rates < pre * (1 - 1e-12)), axis=1)
        return _summarize(cfg, sched, slots, warm, rates[warm:].sum(axis=0), int(lossy[warm:].sum()),
                          float(served_all.sum()), blocked, None, delay_hist, None)
    rate_sum = np.zeros(n)
    losses = 0
    served_total = 0.0
    peak = cfg.peak_rates
    if record:
        rec = {
            "state": states.copy(),
            "phi": np.zeros((slots, n)),
            "gamma": np.zeros((slots, n)),
            "loads": np.zeros((slots, n)),
            "rates": np.zeros((slots, n)),
            "r_bar": np.zeros((slots, n)),
            "demand": np.zeros((slots, m)),
        }
    for i in range(slots):
        t = i + 1
        s = int(states[i])
        try:
            if queue:
                served = np.empty(m)
                for k in range(m):
                    served[k], dl = urllc_queue_step(urllc, float(arrivals[i, k]))
                    for vol, d in dl:
                        delay_hist[d] = delay_hist.get(d, 0.0) + vol
            else:
                served = served_all[i]
            dec = sched.decide(t, s)
            loads = sched.place(served, dec, s, rng_p)
            if abs(loads.sum() - served.sum()) > 1e-9:
                raise RuntimeError("placed load does not match served demand")
            rates = realized_rates(peak[:, s], dec.phi, loads, cfg.loss_models, s)
            sched.observe(t, rates)
        except Exception as exc:  # noqa: BLE001 - re-raised with slot context
            raise SimulationError(t, exc) from exc
        served_total += float(served.sum())
        if i >= warm:
            rate_sum += rates
            pre = peak[:, s] * dec.phi
            if np.any((dec.phi > 0) & (rates < pre * (1 - 1e-12))):
                losses += 1
        if record:
            rec["phi"][i] = dec.phi
            rec["gamma"][i] = dec.gamma if dec.gamma is not None else np.nan
            rec["loads"][i] = loads
            rec["rates"][i] = rates
            rec["r_bar"][i] = sched.estimates.r_bar
            rec["demand"][i] = served

    return _summarize(cfg, sched, slots, warm, rate_sum, losses, served_total, blocked, urllc, delay_hist,
                      rec if record else None)


def _summarize(cfg, sched, slots, warm, rate_sum, losses, served_total, blocked, urllc, delay_hist, records):
    counted = max(slots - warm, 1)
    mean_rates = rate_sum / counted
    if urllc is not None:
        arrived, backlog = urllc.arrived, urllc.backlog
    else:
        arrived, backlog = served_total + float(blocked.sum()), 0.0
    if abs(arrived - (served_total + float(blocked.sum()) + backlog)) > _CONSERVATION_TOL * max(1.0, arrived):
        raise RuntimeError("URLLC volume not conserved")
    total_delayed = sum(delay_hist.values())
    tail = sum(v for d, v in delay_hist.items() if d > TAIL_DELAY) / total_delayed if total_delayed > 0 else 0.0
    positive = np.maximum(mean_rates, 1e-300)
    summary = SimSummary(
        slots=slots,
        warmup=warm,
        final_r_bar=sched.estimates.r_bar.copy(),
        mean_rates=mean_rates,
        sum_utility=sum_utility(positive, cfg.utilities),
        class_rates=_class_means(cfg, mean_rates),
        any_loss_prob=losses / counted,
        blocked_volume=float(blocked.sum()),
        arrived_volume=float(arrived),
        served_volume=served_total,
        backlog=float(backlog),
        delay_hist=delay_hist,
        delay_tail=float(tail),
    )
    return SimTrace(summary, records)
