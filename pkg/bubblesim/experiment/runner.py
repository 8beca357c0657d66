from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, final
import logging
import time
import numpy as np

from bubblesim.distribution import evolve_batch, gamma_step
from bubblesim.drivers import ScenarioBatch, ScenarioPath, ScenarioSampler, Stream
from bubblesim.errors import BubbleSimError, ConfigError, TrajectoryError
from bubblesim.experiment.aggregate import AggregateReport, RunningMoments, TiltReport, merge_all
from bubblesim.experiment.config import ExperimentConfig
from bubblesim.market import simulate_market_batch, simulate_market_path
from bubblesim.martingale import MartingaleReport, MartingaleVerifier, MeasureSpec
from bubblesim.models.arbitrage import ArbitrageModel
from bubblesim.models.base import TransitionModel
from bubblesim.models.simulation_study import mirror_renaming
from bubblesim.population import PeriodOutcome, from_distribution, run_period, simulate_population
from bubblesim.progress import ProgressDisplay, advance
from bubblesim.types import ExtendedTypeDistribution, FloatArray
from bubblesim.utils.concurrencylimit import ConcurrencyLimit
from bubblesim.utils.gather import gather_raise_first_error_after_all_tasks_complete


## Consecutive trajectory indices simulated by one worker call. Chunk boundaries depend on
## the path count and chunk size only, never on the number of workers.
@final
@dataclass(frozen=True)
class Chunk:
    first: int
    count: int

    @property
    def indices(self) -> range:
        return range(self.first, self.first + self.count)


def plan_chunks(paths: int, chunk_size: int) -> List[Chunk]:
    return [Chunk(first, min(chunk_size, paths - first)) for first in range(0, paths, chunk_size)]


@final
@dataclass(frozen=True)
class TrajectoryRecord:
    trajectory: int
    beta: FloatArray
    gap: FloatArray


@final
@dataclass(frozen=True)
class ChunkResult:
    chunk: Chunk
    beta: RunningMoments
    gap: RunningMoments
    records: Optional[List[TrajectoryRecord]]


def _locate_failure(config: ExperimentConfig, model: TransitionModel, initial: ExtendedTypeDistribution,
                    paths: Sequence[ScenarioPath], error: BubbleSimError) -> TrajectoryError:
    # Replays the batch one trajectory and one period at a time to name where it broke
    for path in paths:
        prior = initial
        for period in range(1, path.grid.periods + 1):
            try:
                prior = gamma_step(prior, model, path.at(period), period, config.tolerances).end
            except BubbleSimError as failure:
                return TrajectoryError(path.index, period, str(failure))
    return TrajectoryError(paths[0].index, None, str(error))


def _distribution_engine(config: ExperimentConfig, model: TransitionModel, initial: ExtendedTypeDistribution,
                         paths: Sequence[ScenarioPath]) -> Tuple[FloatArray, FloatArray]:
    batch = ScenarioBatch(paths)
    try:
        evolution = evolve_batch(initial, model, batch, config.tolerances, config.validate_tables)
    except BubbleSimError as error:
        raise _locate_failure(config, model, initial, paths, error) from error
    try:
        market = simulate_market_batch(evolution.gap, batch, config.market)
    except BubbleSimError as error:
        raise TrajectoryError(paths[0].index, None, str(error)) from error
    return market.beta, evolution.gap


def _population_engine(config: ExperimentConfig, model: TransitionModel, initial: ExtendedTypeDistribution,
                       paths: Sequence[ScenarioPath]) -> Tuple[FloatArray, FloatArray]:
    seeds = config.seeds()
    beta = np.empty((len(paths), config.grid.periods + 1))
    gap = np.empty_like(beta)
    for row, path in enumerate(paths):
        try:
            evolution = simulate_population(initial, model, path, config.population_size, seeds)
            market = simulate_market_path(evolution.gap, path, config.market)
        except BubbleSimError as error:
            raise TrajectoryError(path.index, None, str(error)) from error
        beta[row] = market.beta
        gap[row] = evolution.gap
    return beta, gap


def _trajectories(config: ExperimentConfig, model: TransitionModel, initial: ExtendedTypeDistribution,
                  paths: Sequence[ScenarioPath]) -> Tuple[FloatArray, FloatArray]:
    if config.engine == "population":
        return _population_engine(config, model, initial, paths)
    return _distribution_engine(config, model, initial, paths)


def simulate_chunk(config: ExperimentConfig, chunk: Chunk, tilted: bool = False) -> ChunkResult:
    """
    Simulates the trajectories of one chunk: scenario, type distribution, market. With
    `antithetic`, each trajectory is replaced by the average of itself and its mirror, the run
    on the same draws with optimists and pessimists swapped in the scenario.
    """
    model = config.build_model()
    initial = config.initial(model)
    sampler = ScenarioSampler(config.scenario_spec(), config.tilt_overrides() if tilted else ())
    seeds = config.seeds()
    paths = [sampler(seeds, index) for index in chunk.indices]
    beta, gap = _trajectories(config, model, initial, paths)
    if config.antithetic:
        renaming = mirror_renaming()
        mirror_beta, mirror_gap = _trajectories(config, model, initial, [path.relabeled(renaming) for path in paths])
        beta = 0.5 * (beta + mirror_beta)
        gap = 0.5 * (gap + mirror_gap)
    records = None
    if config.write_trajectories:
        records = [TrajectoryRecord(index, beta[row], gap[row]) for row, index in enumerate(chunk.indices)]
    return ChunkResult(chunk, RunningMoments.of(beta), RunningMoments.of(gap), records)


@final
@dataclass(frozen=True)
class ExperimentResult:
    report: AggregateReport
    records: Optional[List[TrajectoryRecord]]


def _executor(workers: int) -> Executor:
    if workers > 1:
        return ProcessPoolExecutor(max_workers=workers)
    return ThreadPoolExecutor(max_workers=1)


async def _run(config: ExperimentConfig, workers: int, progress_display: Optional[ProgressDisplay], tilted: bool,
               label: str) -> ExperimentResult:
    config.validate()
    if workers < 1:
        raise ConfigError(f"Number of workers must be positive, got {workers}")
    chunks = plan_chunks(config.paths, config.chunk_size)
    logging.info(f"Simulating {config.paths} trajectories with the {config.engine} engine on {workers} workers "
                 f"in {len(chunks)} chunks of up to {config.chunk_size}")
    bar = progress_display.add_task(label, config.paths) if progress_display is not None else None
    start = time.perf_counter()
    with _executor(workers) as executor:
        simulate = ConcurrencyLimit(executor, 2 * workers)(simulate_chunk)

        async def run_chunk(chunk: Chunk) -> ChunkResult:
            result = await simulate(config, chunk, tilted)
            advance(bar, chunk.count)
            logging.debug(f"Finished trajectories {chunk.first}..{chunk.first + chunk.count - 1}")
            return result

        results = await gather_raise_first_error_after_all_tasks_complete(*[run_chunk(chunk) for chunk in chunks])
    if bar is not None:
        bar.finish()
    elapsed = time.perf_counter() - start

    points = config.grid.periods + 1
    report = AggregateReport(
        config.time_grid(),
        merge_all([result.beta for result in results], points),
        merge_all([result.gap for result in results], points),
        elapsed,
    )
    logging.info(f"Simulated {report.paths} trajectories in {elapsed:.1f}s ({report.throughput:.0f} per second)")
    records = None
    if config.write_trajectories:
        records = [record for result in results for record in (result.records or [])]
    return ExperimentResult(report, records)


async def run_experiment(config: ExperimentConfig, workers: int = 1,
                         progress_display: Optional[ProgressDisplay] = None) -> ExperimentResult:
    return await _run(config, workers, progress_display, tilted=False, label="Trajectories")


async def run_tilt_experiment(config: ExperimentConfig, workers: int = 1,
                              progress_display: Optional[ProgressDisplay] = None) -> TiltReport:
    """
    Runs the same seeds under the lattice measure and under the measure with the up-probabilities
    of `config.tilt`. Both runs share every uniform draw.
    """
    base = replace(config, antithetic=False, write_trajectories=False)
    baseline = await _run(base, workers, progress_display, tilted=False, label="Trajectories (P)")
    tilted = await _run(base, workers, progress_display, tilted=True, label="Trajectories (tilted)")
    report = TiltReport(baseline.report, tilted.report)
    logging.info(f"Mean beta at period 1: {baseline.report.mean_beta[1]:.6g} under P, "
                 f"{tilted.report.mean_beta[1]:.6g} under the tilted measure ({100.0 * report.relative_change(1):+.2f}%)")
    return report


def _arbitrage_model(config: ExperimentConfig) -> ArbitrageModel:
    config.validate()
    model = config.build_model()
    if not isinstance(model, ArbitrageModel):
        raise ConfigError(f"Martingale checks need the arbitrage model, got '{config.model.name}'")
    return model


def martingale_check(config: ExperimentConfig, resamples: int = 100_000, physical: bool = False) -> MartingaleReport:
    model = _arbitrage_model(config)
    spec = config.scenario_spec()
    measure = MeasureSpec.physical(spec, model.regime) if physical else None
    verifier = MartingaleVerifier(model, spec, config.market, measure, config.tolerances)
    return verifier.verify(config.initial(model), config.paths, config.seeds(), resamples)


def martingale_enumeration(config: ExperimentConfig) -> float:
    model = _arbitrage_model(config)
    verifier = MartingaleVerifier(model, config.scenario_spec(), config.market, tolerances=config.tolerances)
    return verifier.enumerate_exact(config.initial(model))


def matching_demo(config: ExperimentConfig, agents: int, periods: int) -> List[PeriodOutcome]:
    """
    Follows a small roster along trajectory 0 of the configured scenario for a few periods.
    """
    config.validate()
    model = config.build_model()
    seeds = config.seeds()
    path = ScenarioSampler(config.scenario_spec())(seeds, 0)
    rng = seeds.generator(0, Stream.POPULATION)
    population = from_distribution(config.initial(model), agents)
    outcomes = []
    for period in range(1, min(periods, config.grid.periods) + 1):
        outcome = run_period(population, model, path.at(period), period, rng)
        outcomes.append(outcome)
        population = outcome.population
    return outcomes
