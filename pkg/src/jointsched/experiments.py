"""Experiment presets, sweep runner and CSV output."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize

from .demand import (
    BinomialMinislot,
    DiscreteMinislot,
    TruncatedParetoAggregate,
    UniformMinislot,
    make_rng,
)
from .model import Exponential, LogUtility, Monomial, PiecewiseQuadratic, SystemConfig, Threshold, validate_config
from .oracle import two_user_linear_example
from .schedulers import SchedulerSpec
from .sim import run_simulation

CSV_COLUMNS = (
    "preset",
    "scheduler",
    "rho_or_delta",
    "seed",
    "sum_utility",
    "mean_rate_robust",
    "mean_rate_sensitive",
    "any_loss_prob",
    "urllc_delay_tail",
)
DEFAULT_SEEDS = 5
DEFAULT_SLOTS = 10_000
THREADS_ENV = "SCHED_SIM_THREADS"

NUM_USERS = 20
NUM_STATES = 100
RB_COUNT = 100
ROBUST_RATES = np.arange(4, 11)  # uniform, mean 7 Mbps
SENSITIVE_RATES = np.arange(1, 6)  # uniform, mean 3 Mbps
STREAM_RATES = 3


def class_rate_matrix(seed: int, users: int = NUM_USERS, states: int = NUM_STATES) -> np.ndarray:
    """Peak rates: first half 'robust' users, second half 'sensitive' users."""
    rng = make_rng(seed, STREAM_RATES)
    half = users // 2
    robust = rng.choice(ROBUST_RATES, size=(half, states))
    sensitive = rng.choice(SENSITIVE_RATES, size=(users - half, states))
    return np.vstack([robust, sensitive]).astype(float)


def _class_utilities(offset: float, users: int = NUM_USERS):
    half = users // 2
    return tuple([LogUtility(offset, "robust")] * half + [LogUtility(offset, "sensitive")] * (users - half))


def _uniform_states(states: int = NUM_STATES) -> np.ndarray:
    return np.full(states, 1.0 / states)


# ------------------------------------------------------------------- presets


def convex_vs_rp_config(rho: float, seed: int = 0) -> SystemConfig:
    delta = 0.3
    half = NUM_USERS // 2
    models = tuple([Monomial(1.0, 2.0)] * half + [PiecewiseQuadratic(0.7)] * (NUM_USERS - half))
    return SystemConfig(
        num_users=NUM_USERS,
        state_probs=_uniform_states(),
        peak_rates=class_rate_matrix(seed),
        utilities=_class_utilities(0.0),
        loss_models=models,
        demand=BinomialMinislot(1.0 - rho / (1.0 - delta), delta),
        delta=delta,
        rb_count=RB_COUNT,
    )


def pareto_for_load(rho: float, delta: float = 0.1, eta: float = 2.0) -> TruncatedParetoAggregate:
    """Truncated Pareto on ``[x_min, 1 - delta]`` whose mean is ``rho``."""
    x_max = 1.0 - delta

    def mean_gap(x_min):
        return TruncatedParetoAggregate(eta, delta, x_min, x_max).rho - rho

    x_min = optimize.brentq(mean_gap, 1e-6, 0.999 * rho, xtol=1e-14)
    return TruncatedParetoAggregate(eta, delta, x_min, x_max)


def threshold_config(rho: float, seed: int = 0) -> SystemConfig:
    delta = 0.1
    alpha = tuple(0.3 if s < NUM_STATES // 2 else 0.7 for s in range(NUM_STATES))
    return SystemConfig(
        num_users=NUM_USERS,
        state_probs=_uniform_states(),
        peak_rates=class_rate_matrix(seed),
        utilities=_class_utilities(6.5),
        loss_models=(Threshold(alpha),) * NUM_USERS,
        demand=pareto_for_load(rho, delta),
        delta=delta,
        rb_count=RB_COUNT,
    )


def delta_tradeoff_config(delta: float, seed: int = 0) -> SystemConfig:
    half = NUM_USERS // 2
    models = tuple([Exponential(0.2)] * half + [Exponential(0.7)] * (NUM_USERS - half))
    return SystemConfig(
        num_users=NUM_USERS,
        state_probs=_uniform_states(),
        peak_rates=class_rate_matrix(seed),
        utilities=_class_utilities(4.2),
        loss_models=models,
        demand=UniformMinislot(0.0, 1.0 / 8, delta),
        delta=delta,
        rb_count=RB_COUNT,
    )


def linear_sanity_config(load: float = 0.5, seed: int = 0) -> SystemConfig:
    """Two users, independent {2, 4} channels, deterministic URLLC ``load`` per slot."""
    m = 8
    delta = 1.0 - load
    return SystemConfig(
        num_users=2,
        state_probs=np.full(4, 0.25),
        peak_rates=np.array([[2.0, 2.0, 4.0, 4.0], [2.0, 4.0, 2.0, 4.0]]),
        utilities=(LogUtility(), LogUtility()),
        loss_models=(Monomial(), Monomial()),
        demand=DiscreteMinislot((load / m,), (1.0,), delta) if load > 0 else DiscreteMinislot((0.0,), (1.0,), 0.5),
        delta=delta if load > 0 else 0.5,
        rb_count=RB_COUNT,
    )


@dataclass(frozen=True)
class Preset:
    name: str
    sweep: tuple
    schedulers: tuple
    build: Callable[[float, int], SystemConfig]
    queue: bool = False


LINEAR_SANITY_RUNS = (
    # (label, scheduler, URLLC load, analytic key)
    ("static-none", SchedulerSpec("static", "random"), 0.0, "static_random"),
    ("static-random", SchedulerSpec("static", "random"), 0.5, "opportunistic_embb_random_punct"),
    ("static-opportunistic", SchedulerSpec("static", "opportunistic"), 0.5, "opportunistic_puncture"),
)

PRESETS = {
    "convex-vs-rp": Preset(
        "convex-vs-rp", (0.1, 0.2, 0.3, 0.4, 0.5, 0.6), (SchedulerSpec("sa"), SchedulerSpec("gradient", "rp")), convex_vs_rp_config
    ),
    "threshold": Preset(
        "threshold", (0.05, 0.1, 0.15, 0.2, 0.25, 0.3), (SchedulerSpec("sa"), SchedulerSpec("gradient", "tp")), threshold_config
    ),
    "delta-tradeoff": Preset(
        "delta-tradeoff", (0.1, 0.2, 0.3, 0.4, 0.5), (SchedulerSpec("sa"),), delta_tradeoff_config, queue=True
    ),
    "linear-sanity": Preset(
        "linear-sanity", (0.0, 0.5), tuple(r[1] for r in LINEAR_SANITY_RUNS), linear_sanity_config
    ),
}


def preset_config(name: str, param: float | None = None, seed: int = 0):
    """Configuration and scheduler specs of a preset at one sweep value."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    preset = PRESETS[name]
    value = preset.sweep[-1] if param is None else param
    cfg = preset.build(value, seed)
    problems = validate_config(cfg)
    if problems:
        raise ValueError(f"preset {name} is invalid: {problems}")
    return cfg, preset.schedulers


# -------------------------------------------------------------------- runner


@dataclass(frozen=True)
class Job:
    preset: str
    label: str
    spec: SchedulerSpec
    param: float
    seed: int
    slots: int
    queue: bool


def _class_rate(summary, label: str) -> float:
    rates = summary.class_rates
    return float(rates.get(label, rates.get("all", float(np.mean(summary.mean_rates)))))


def run_job(job: Job) -> dict:
    preset = PRESETS[job.preset]
    cfg = preset.build(job.param, job.seed)
    summary = run_simulation(cfg, job.spec, job.seed, job.slots, queue=job.queue).summary
    return {
        "preset": job.preset,
        "scheduler": job.label,
        "rho_or_delta": job.param,
        "seed": job.seed,
        "sum_utility": summary.sum_utility,
        "mean_rate_robust": _class_rate(summary, "robust"),
        "mean_rate_sensitive": _class_rate(summary, "sensitive"),
        "any_loss_prob": summary.any_loss_prob,
        "urllc_delay_tail": summary.delay_tail,
        "_mean_rates": summary.mean_rates.tolist(),
    }


def experiment_jobs(name: str, seeds: int = DEFAULT_SEEDS, slots: int = DEFAULT_SLOTS, sweep=None) -> list:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    preset = PRESETS[name]
    jobs = []
    if name == "linear-sanity":
        for label, spec, load, _ in LINEAR_SANITY_RUNS:
            for seed in range(seeds):
                jobs.append(Job(name, label, spec, load, seed, slots, False))
        return jobs
    for value in preset.sweep if sweep is None else sweep:
        for spec in preset.schedulers:
            for seed in range(seeds):
                jobs.append(Job(name, spec.label, spec, float(value), seed, slots, preset.queue))
    return jobs


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(cap, os.cpu_count() or 1))


def run_jobs(jobs: list, workers: int | None = None) -> list:
    """Run jobs, possibly in parallel; results keep the job order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_job, jobs))


def write_rows(path: str | Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([row[c] if isinstance(row[c], str) else repr(row[c]) for c in CSV_COLUMNS])


def write_linear_sanity(path: str | Path, rows: list) -> list:
    """Analytic versus simulated per-user rates for the two-user example."""
    analytic = two_user_linear_example()
    out = []
    for label, _, _, key in LINEAR_SANITY_RUNS:
        sims = [np.mean(r["_mean_rates"]) for r in rows if r["scheduler"] == label]
        out.append((key, label, analytic[key], float(np.mean(sims))))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("quantity", "scheduler", "analytic", "simulated"))
        for key, label, a, s in out:
            w.writerow((key, label, repr(a), repr(s)))
    return out


def run_experiment(name: str, out_dir: str | Path, seeds: int = DEFAULT_SEEDS, slots: int = DEFAULT_SLOTS,
                   workers: int | None = None, plots: bool = True) -> list:
    """Run a preset sweep and write ``<preset>.csv`` (plus figures) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_jobs(experiment_jobs(name, seeds, slots), workers)
    write_rows(out / f"{name}.csv", rows)
    if name == "linear-sanity":
        write_linear_sanity(out / "linear_sanity.csv", rows)
    if plots:
        from .plotting import plot_experiment

        plot_experiment(name, rows, out)
    return rows


def aggregate(rows: list, column: str) -> dict:
    """Mean and standard error of ``column`` per ``(scheduler, rho_or_delta)``."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["scheduler"], r["rho_or_delta"]), []).append(r[column])
    out = {}
    for key, vals in groups.items():
        v = np.asarray(vals, dtype=float)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        out[key] = (float(v.mean()), se)
    return out
