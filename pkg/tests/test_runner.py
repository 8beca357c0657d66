from dataclasses import replace
from pathlib import Path
from typing import Any
import asyncio
import numpy as np
import pytest
from rich.progress import Progress

from bubblesim.errors import ConfigError, TrajectoryError
from bubblesim.experiment.config import DriverConfig, ExperimentConfig, GridConfig, TiltConfig, load_config
from bubblesim.experiment.output import emit_figure_data, emit_tilt_data
from bubblesim.experiment.presets import OPTIMISTIC_START, figure2, figure3, pessimistic_tilt, simulation_study_drivers
from bubblesim.experiment.runner import (Chunk, ExperimentResult, martingale_check, matching_demo, plan_chunks,
                                         run_experiment, run_tilt_experiment, simulate_chunk)
from bubblesim.experiment.aggregate import TiltReport
from bubblesim.progress import ProgressDisplay
from bubblesim.models.simulation_study import eta_driver


def _small(paths: int = 40, **changes: Any) -> ExperimentConfig:
    config = replace(figure2(), grid=GridConfig(10, 0.1), paths=paths, chunk_size=16)
    return replace(config, **changes)


def _run(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    return asyncio.run(run_experiment(config, workers))


def _tilt(config: ExperimentConfig) -> TiltReport:
    return asyncio.run(run_tilt_experiment(config))


def test_plan_chunks() -> None:
    assert plan_chunks(40, 16) == [Chunk(0, 16), Chunk(16, 16), Chunk(32, 8)]
    assert plan_chunks(3, 10) == [Chunk(0, 3)]
    assert list(Chunk(5, 3).indices) == [5, 6, 7]


def test_constant_symmetric_drivers_give_no_bubble() -> None:
    drivers = {name: replace(driver, sigma=0.0) for name, driver in simulation_study_drivers().items()}
    result = _run(_small(paths=4, drivers=drivers))
    assert result.report.paths == 4
    np.testing.assert_allclose(result.report.mean_beta, 0.0, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(result.report.mean_gap, 0.0, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(result.report.stderr_beta, 0.0, rtol=0.0, atol=1e-12)
    assert result.records is None


def test_results_do_not_depend_on_workers() -> None:
    config = _small()
    single = _run(config, 1)
    parallel = _run(config, 2)
    assert single.report.to_csv() == parallel.report.to_csv()


def test_results_do_not_depend_on_chunking() -> None:
    chunked = _run(_small()).report
    whole = _run(_small(chunk_size=40)).report
    np.testing.assert_allclose(chunked.mean_beta, whole.mean_beta, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(chunked.stderr_beta, whole.stderr_beta, rtol=1e-10, atol=1e-15)


def test_chunk_matches_the_experiment() -> None:
    config = _small(paths=16)
    chunk = simulate_chunk(config, Chunk(0, 16))
    report = _run(config).report
    np.testing.assert_array_equal(chunk.beta.mean, report.mean_beta)


def test_antithetic_runs_cancel_from_a_symmetric_start() -> None:
    report = _run(_small(paths=20, antithetic=True)).report
    assert report.paths == 20
    np.testing.assert_allclose(report.mean_gap, 0.0, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(report.mean_beta, 0.0, rtol=0.0, atol=1e-12)


def test_bubbles_start_from_zero() -> None:
    report = _run(_small()).report
    assert report.mean_beta[0] == 0.0
    assert report.stderr_beta[1] > 0.0
    assert np.all(np.isfinite(report.mean_beta))


def test_figure_data_files(tmp_path: Path) -> None:
    config = _small(paths=8, write_trajectories=True)
    result = _run(config)
    assert result.records is not None
    assert [record.trajectory for record in result.records] == list(range(8))
    first = tmp_path / "first"
    asyncio.run(emit_figure_data(result.report, result.records, str(first), config))

    averages = (first / "averages.csv").read_text().splitlines()
    assert averages[0] == "period,t,mean_beta,stderr,mean_p1_minus_p3,stderr_p1_minus_p3"
    assert len(averages) == 12
    trajectories = (first / "trajectories.csv").read_text().splitlines()
    assert trajectories[0] == "period,trajectory,beta,p1_minus_p3"
    assert len(trajectories) == 1 + 8 * 11
    assert load_config(str(first / "config.yaml")) == config

    second = tmp_path / "second"
    rerun = _run(config)
    asyncio.run(emit_figure_data(rerun.report, rerun.records, str(second), config))
    assert (first / "averages.csv").read_bytes() == (second / "averages.csv").read_bytes()
    assert (first / "trajectories.csv").read_bytes() == (second / "trajectories.csv").read_bytes()


def test_population_engine() -> None:
    config = _small(paths=2, engine="population", population_size=600, grid=GridConfig(5, 0.05))
    report = _run(config).report
    assert report.paths == 2
    assert report.mean_gap[0] == 0.0
    assert report.mean_beta[0] == 0.0
    assert np.all(np.abs(report.mean_gap) <= 1.0)


def test_failing_trajectory_is_located() -> None:
    drivers = dict(simulation_study_drivers())
    drivers[eta_driver(1, 2)] = DriverConfig(x0=10.0, sigma=0.0, squash="arctan")
    drivers[eta_driver(1, 3)] = DriverConfig(x0=10.0, sigma=0.0, squash="arctan")
    with pytest.raises(TrajectoryError) as info:
        _run(_small(paths=4, drivers=drivers))
    assert info.value.trajectory == 0
    assert info.value.period == 1


def test_workers_must_be_positive() -> None:
    with pytest.raises(ConfigError):
        _run(_small(), 0)


def test_empty_tilt_reproduces_the_baseline() -> None:
    report = _tilt(_small(paths=32, initial_fractions=OPTIMISTIC_START))
    np.testing.assert_array_equal(report.baseline.mean_beta, report.tilted.mean_beta)


def test_later_tilt_leaves_the_first_step_alone() -> None:
    tilt = [TiltConfig(eta_driver(1, 3), 2, 0.95)]
    report = _tilt(_small(paths=32, initial_fractions=OPTIMISTIC_START, tilt=tilt))
    assert report.baseline.mean_beta[1] == report.tilted.mean_beta[1]
    assert report.baseline.mean_beta[2] != report.tilted.mean_beta[2]


def test_pessimistic_tilt_lowers_the_first_bubble(tmp_path: Path) -> None:
    config = _small(paths=64, initial_fractions=OPTIMISTIC_START, tilt=pessimistic_tilt())
    report = _tilt(config)
    assert report.baseline.paths == 64
    assert report.tilted.mean_beta[1] < report.baseline.mean_beta[1]
    assert report.tilted.mean_gap[1] < report.baseline.mean_gap[1]
    # A one-step tilt moves the first mean bubble by a few percent at most
    assert -0.05 < report.relative_change(1) < 0.0
    assert report.relative_change(0) == 0.0

    asyncio.run(emit_tilt_data(report, str(tmp_path), config))
    lines = (tmp_path / "tilt.csv").read_text().splitlines()
    assert lines[0] == "period,t,mean_beta,stderr,mean_beta_tilted,stderr_tilted"
    assert len(lines) == 12


def test_martingale_check_needs_the_arbitrage_model() -> None:
    with pytest.raises(ConfigError):
        martingale_check(_small(paths=1))


def test_matching_demo() -> None:
    outcomes = matching_demo(_small(paths=1), agents=12, periods=3)
    assert len(outcomes) == 3
    for outcome in outcomes:
        assert float(outcome.end.entries.sum()) == pytest.approx(1.0)
    assert len(matching_demo(_small(paths=1), agents=12, periods=50)) == 10


def test_symmetric_start_has_no_mean_bubble() -> None:
    # 400 paths over 10 periods instead of 10^5 over 100
    report = _run(_small(paths=400, chunk_size=100)).report
    assert np.all(np.abs(report.mean_beta[1:]) <= 4.0 * report.stderr_beta[1:])
    assert np.all(report.stderr_beta[1:] > 0.0)


def test_progress_reaches_every_trajectory() -> None:
    with Progress(disable=True) as progress:
        result = asyncio.run(run_experiment(_small(paths=10, chunk_size=4), 1, ProgressDisplay(progress)))
        assert result.report.paths == 10
        assert [task.completed for task in progress.tasks] == [10]
        assert progress.tasks[0].finished


def test_validated_tables_give_the_same_run() -> None:
    config = _small(paths=6)
    checked = _run(replace(config, validate_tables=True)).report
    np.testing.assert_array_equal(checked.mean_beta, _run(config).report.mean_beta)


@pytest.mark.slow
def test_optimistic_start_gives_a_first_bubble_near_one_tenth() -> None:
    config = replace(figure3(), paths=4000, chunk_size=1000)
    beta1 = _run(config, 2).report.mean_beta[1]
    assert 0.07 <= beta1 <= 0.13
    # Starting the volume at zero instead roughly triples the first bubble
    zero_start = replace(config, market=replace(config.market, x0_zero=True))
    assert _run(zero_start, 2).report.mean_beta[1] > 0.2
