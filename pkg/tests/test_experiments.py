import csv

import numpy as np
import pytest

from jointsched.experiments import (
    CSV_COLUMNS,
    PRESETS,
    THREADS_ENV,
    Job,
    aggregate,
    class_rate_matrix,
    experiment_jobs,
    pareto_for_load,
    preset_config,
    run_job,
    run_jobs,
    worker_count,
    write_rows,
)
from jointsched.schedulers import SchedulerSpec


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("end", [0, -1])
def test_presets_validate_at_sweep_ends(name, end):
    cfg, specs = preset_config(name, PRESETS[name].sweep[end])
    assert specs and cfg.num_users >= 2


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset_config("nonsense")
    with pytest.raises(ValueError):
        experiment_jobs("nonsense")


def test_class_rate_means():
    rates = class_rate_matrix(0)
    assert rates.shape == (20, 100)
    assert rates[:10].mean() == pytest.approx(7.0, abs=0.2)
    assert rates[10:].mean() == pytest.approx(3.0, abs=0.15)
    assert np.array_equal(rates, class_rate_matrix(0))
    assert not np.array_equal(rates, class_rate_matrix(1))


@pytest.mark.parametrize("rho", [0.05, 0.15, 0.3])
def test_pareto_load_matches_target(rho):
    law = pareto_for_load(rho)
    assert law.rho == pytest.approx(rho, abs=1e-10)


def test_convex_preset_load_matches_sweep_value():
    for rho in PRESETS["convex-vs-rp"].sweep:
        cfg, _ = preset_config("convex-vs-rp", rho)
        assert cfg.rho == pytest.approx(rho, abs=1e-12)


def test_job_listing_sizes():
    assert len(experiment_jobs("convex-vs-rp", seeds=5)) == 6 * 2 * 5
    assert len(experiment_jobs("delta-tradeoff", seeds=2)) == 5 * 2
    assert len(experiment_jobs("linear-sanity", seeds=3)) == 9


def test_rows_have_schema_and_round_trip(tmp_path):
    job = Job("linear-sanity", "static-random", SchedulerSpec("static", "random"), 0.5, 0, 500, False)
    row = run_job(job)
    path = tmp_path / "rows.csv"
    write_rows(path, [row])
    read = list(csv.DictReader(open(path)))
    assert tuple(read[0]) == CSV_COLUMNS
    assert float(read[0]["sum_utility"]) == row["sum_utility"]


def test_parallel_and_serial_runs_agree():
    jobs = experiment_jobs("linear-sanity", seeds=1, slots=300)
    assert run_jobs(jobs, workers=1) == run_jobs(jobs, workers=2)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    assert worker_count() == 1
    monkeypatch.setenv(THREADS_ENV, "10000")
    assert worker_count() >= 1
    monkeypatch.setenv(THREADS_ENV, "lots")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count() >= 1


def test_aggregate_mean_and_standard_error():
    rows = [{"scheduler": "a", "rho_or_delta": 0.1, "x": v} for v in (1.0, 3.0)]
    mean, se = aggregate(rows, "x")[("a", 0.1)]
    assert mean == 2.0 and se == pytest.approx(1.0)
