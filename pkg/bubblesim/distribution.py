from dataclasses import dataclass
from io import StringIO
from typing import Callable, Final, Iterator, List, Optional, Tuple, final
import csv
import logging
import numpy as np

from bubblesim.drivers import ScenarioBatch, ScenarioPath, ScenarioState
from bubblesim.errors import InvalidTableError, MassConservationError, MisalignedInputError
from bubblesim.models.base import BreakupKernel, TransitionModel
from bubblesim.types import DEFAULT_TOLERANCES, ExtendedTypeDistribution, FloatArray, ProbabilityTable, Tolerances, TimeGrid, ensure_valid_distribution, ensure_valid_table, format_float


# The kernels below work on arrays of shape (..., K, K+1) and broadcast over leading batch axes.

def _mutate(distribution: FloatArray, eta: FloatArray) -> FloatArray:
    num_types = distribution.shape[-2]
    result = np.empty_like(distribution)
    # Matched partners mutate independently
    result[..., :num_types] = np.einsum('...ab,...ak,...bl->...kl', distribution[..., :num_types], eta, eta)
    result[..., num_types] = np.einsum('...a,...ak->...k', distribution[..., num_types], eta)
    return result


def _match(distribution: FloatArray, theta: FloatArray, tolerance: float) -> FloatArray:
    num_types = distribution.shape[-2]
    unmatched = distribution[..., num_types]
    flow = theta * unmatched[..., :, None]
    asymmetry = np.abs(flow - np.swapaxes(flow, -1, -2))
    if np.any(asymmetry > tolerance):
        worst = np.unravel_index(int(np.argmax(asymmetry)), asymmetry.shape)
        k, l = int(worst[-2]) + 1, int(worst[-1]) + 1
        raise InvalidTableError(
            f"theta violates detailed balance at ({k},{l}): flows differ by {float(asymmetry.max()):.3g}")
    result = distribution.copy()
    result[..., :num_types] += flow
    result[..., num_types] = (1.0 - theta.sum(axis=-1)) * unmatched
    return result


def _break_up(distribution: FloatArray, kernel: BreakupKernel) -> FloatArray:
    num_types = distribution.shape[-2]
    matched = distribution[..., :num_types]
    staying = (1.0 - kernel.xi) * matched
    result = np.empty_like(distribution)
    if kernel.sigma is None:
        result[..., :num_types] = staying
    else:
        result[..., :num_types] = np.einsum('...ab,...abkl->...kl', staying, kernel.sigma)
    separating = kernel.xi * matched
    result[..., num_types] = distribution[..., num_types] + np.einsum('...ab,...abk->...k', separating, kernel.varsigma)
    return result


def _conserved(distribution: FloatArray, stage: str, tolerances: Tolerances) -> FloatArray:
    drift = np.abs(distribution.sum(axis=(-2, -1)) - 1.0)
    if np.any(drift > tolerances.normalization):
        raise MassConservationError(f"{stage}: total mass drifted by {float(drift.max()):.3g}")
    lowest = float(distribution.min())
    if lowest < -tolerances.negativity:
        raise MassConservationError(f"{stage}: negative mass {lowest:.3g}")
    clamped: FloatArray = np.maximum(distribution, 0.0)
    return clamped


def post_mutation(distribution: ExtendedTypeDistribution, eta: FloatArray) -> ExtendedTypeDistribution:
    return ExtendedTypeDistribution(_mutate(distribution.entries, np.asarray(eta, dtype=np.float64)))

def post_matching(distribution: ExtendedTypeDistribution, theta: FloatArray,
                  tolerances: Tolerances = DEFAULT_TOLERANCES) -> ExtendedTypeDistribution:
    return ExtendedTypeDistribution(_match(distribution.entries, np.asarray(theta, dtype=np.float64), tolerances.table))

def post_breakup(distribution: ExtendedTypeDistribution, kernel: BreakupKernel) -> ExtendedTypeDistribution:
    return ExtendedTypeDistribution(_break_up(distribution.entries, kernel))


@final
@dataclass(frozen=True)
class GammaStep:
    post_mutation: ExtendedTypeDistribution
    post_matching: ExtendedTypeDistribution
    end: ExtendedTypeDistribution
    table: ProbabilityTable


def _step(prior: FloatArray, model: TransitionModel, scenario: ScenarioState, period: int,
          tolerances: Tolerances) -> Tuple[FloatArray, FloatArray, FloatArray, FloatArray, FloatArray, BreakupKernel]:
    eta = model.eta(scenario, period, prior)
    mutated = _conserved(_mutate(prior, eta), "post-mutation", tolerances)
    theta = model.theta(scenario, period, mutated)
    matched = _conserved(_match(mutated, theta, tolerances.table), "post-matching", tolerances)
    kernel = model.breakup(scenario, period, matched)
    end = _conserved(_break_up(matched, kernel), "end of period", tolerances)
    return mutated, matched, end, eta, theta, kernel


## One period of the exact evolution: mutation at the prior, matching at the post-mutation
## distribution, break-up at the post-matching distribution. Tables are validated before use.
def gamma_step(prior: ExtendedTypeDistribution, model: TransitionModel, scenario: ScenarioState, period: int,
               tolerances: Tolerances = DEFAULT_TOLERANCES) -> GammaStep:
    ensure_valid_distribution(prior, tolerances)
    mutated, matched, end, eta, theta, kernel = _step(prior.entries, model, scenario, period, tolerances)
    table = ProbabilityTable(eta, theta, kernel.xi, kernel.sigma, kernel.varsigma)
    ensure_valid_table(table, ExtendedTypeDistribution(mutated), tolerances)
    return GammaStep(ExtendedTypeDistribution(mutated), ExtendedTypeDistribution(matched), ExtendedTypeDistribution(end), table)


## Transition matrix over S x (S u {J}); row/column index of cell (k, l) is k (K+1) + l, J is l = K.
@final
@dataclass(frozen=True)
class TransitionMatrix:
    matrix: FloatArray
    period: int
    num_types: int

    def index(self, k: int, l: Optional[int]) -> int:
        # 1-based type labels, None for J
        column = self.num_types if l is None else l - 1
        return (k - 1) * (self.num_types + 1) + column

    def apply(self, distribution: ExtendedTypeDistribution) -> ExtendedTypeDistribution:
        flat = distribution.entries.reshape(-1) @ self.matrix
        return ExtendedTypeDistribution(flat.reshape(self.num_types, self.num_types + 1))


def _mutation_kernel(eta: FloatArray) -> FloatArray:
    size = eta.shape[0]
    kernel = np.zeros((size, size + 1, size, size + 1))
    kernel[:, :size, :, :size] = np.einsum('ak,bl->abkl', eta, eta)
    kernel[:, size, :, size] = eta
    return kernel.reshape(size * (size + 1), size * (size + 1))

def _matching_kernel(theta: FloatArray) -> FloatArray:
    size = theta.shape[0]
    kernel = np.zeros((size, size + 1, size, size + 1))
    for k in range(size):
        for l in range(size):
            kernel[k, l, k, l] = 1.0
        kernel[k, size, k, :size] = theta[k]
        kernel[k, size, k, size] = 1.0 - theta[k].sum()
    return kernel.reshape(size * (size + 1), size * (size + 1))

def _breakup_kernel(xi: FloatArray, sigma: FloatArray, varsigma: FloatArray) -> FloatArray:
    size = xi.shape[0]
    kernel = np.zeros((size, size + 1, size, size + 1))
    kernel[:, :size, :, :size] = (1.0 - xi)[:, :, None, None] * sigma
    kernel[:, :size, :, size] = xi[:, :, None] * varsigma
    for k in range(size):
        kernel[k, size, k, size] = 1.0
    return kernel.reshape(size * (size + 1), size * (size + 1))


def _check_rows(matrix: FloatArray, tolerance: float) -> None:
    deviation = np.abs(matrix.sum(axis=1) - 1.0)
    if np.any(deviation > tolerance):
        row = int(np.argmax(deviation))
        raise InvalidTableError(f"Transition matrix row {row} sums to {float(matrix[row].sum()):.15g}")


def transition_matrix(prior: ExtendedTypeDistribution, model: TransitionModel, scenario: ScenarioState, period: int,
                      tolerances: Tolerances = DEFAULT_TOLERANCES) -> TransitionMatrix:
    step = gamma_step(prior, model, scenario, period, tolerances)
    table = step.table
    matrix = (_mutation_kernel(table.eta)
              @ _matching_kernel(table.theta)
              @ _breakup_kernel(table.xi, table.dense_sigma(), table.varsigma))
    _check_rows(matrix, tolerances.table)
    return TransitionMatrix(matrix, period, table.num_types)


def transition_matrix_entrywise(table: ProbabilityTable, period: int, tolerances: Tolerances = DEFAULT_TOLERANCES) -> TransitionMatrix:
    size = table.num_types
    eta, theta, xi, varsigma = table.eta, table.theta, table.xi, table.varsigma
    sigma = table.dense_sigma()
    b = table.b
    z = np.zeros((size, size + 1, size, size + 1))
    for k1 in range(size):
        for k in range(size):
            # (k1, J) -> (k, J): stay unmatched, or match and separate within the period
            z[k1, size, k, size] = eta[k1, k] * b[k] + sum(
                eta[k1, a] * theta[a, c] * xi[a, c] * varsigma[a, c, k] for a in range(size) for c in range(size))
            for l in range(size):
                # (k1, J) -> (k, l): match and stay
                z[k1, size, k, l] = sum(
                    eta[k1, a] * theta[a, c] * (1.0 - xi[a, c]) * sigma[a, c, k, l] for a in range(size) for c in range(size))
            for l1 in range(size):
                # (k1, l1) -> (k, J): break up
                z[k1, l1, k, size] = sum(
                    eta[k1, a] * eta[l1, c] * xi[a, c] * varsigma[a, c, k] for a in range(size) for c in range(size))
                for l in range(size):
                    # (k1, l1) -> (k, l): stay together
                    z[k1, l1, k, l] = sum(
                        eta[k1, a] * eta[l1, c] * (1.0 - xi[a, c]) * sigma[a, c, k, l] for a in range(size) for c in range(size))
    matrix = z.reshape(size * (size + 1), size * (size + 1))
    _check_rows(matrix, tolerances.table)
    return TransitionMatrix(matrix, period, size)


## Distributions along a scenario. `distributions[..., n]` is the end of period n (n = 0 the start),
## `post_mutation[..., n - 1]` and `post_matching[..., n - 1]` the intermediate ones of period n.
@final
@dataclass(frozen=True)
class Evolution:
    distributions: FloatArray
    post_mutation: FloatArray
    post_matching: FloatArray
    gap: FloatArray

    @property
    def periods(self) -> int:
        return int(self.distributions.shape[-3] - 1)

    def at(self, period: int) -> ExtendedTypeDistribution:
        return ExtendedTypeDistribution(self.distributions[..., period, :, :])

    def csv_rows(self) -> Iterator[List[str]]:
        num_types = self.distributions.shape[-2]
        yield ["period"] + ExtendedTypeDistribution.csv_header(num_types) + ["p1_minus_p3"]
        for period in range(self.periods + 1):
            cells = self.distributions[..., period, :, :].reshape(-1)
            yield [str(period)] + [format_float(value) for value in cells] + [format_float(float(self.gap[..., period]))]

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        wr.writerows(self.csv_rows())
        return output.getvalue()


def opinion_gap(model: TransitionModel, distributions: FloatArray) -> FloatArray:
    views = model.opinion_fractions(distributions.sum(axis=-1))
    gap: FloatArray = views[..., 0] - views[..., 2]
    return gap


def _validate_tables(mutated: FloatArray, eta: FloatArray, theta: FloatArray, kernel: BreakupKernel, period: int,
                     tolerances: Tolerances) -> None:
    num_types = mutated.shape[-2]
    batch = mutated.shape[:-2]

    def rows(array: FloatArray, rank: int) -> FloatArray:
        return np.broadcast_to(array, batch + (num_types,) * rank).reshape((-1,) + (num_types,) * rank)

    distributions = mutated.reshape((-1, num_types, num_types + 1))
    etas, thetas, xis, varsigmas = rows(eta, 2), rows(theta, 2), rows(kernel.xi, 2), rows(kernel.varsigma, 3)
    sigmas = None if kernel.sigma is None else rows(kernel.sigma, 4)
    for row in range(distributions.shape[0]):
        table = ProbabilityTable(etas[row], thetas[row], xis[row], None if sigmas is None else sigmas[row], varsigmas[row])
        try:
            ensure_valid_table(table, ExtendedTypeDistribution(distributions[row]), tolerances)
        except InvalidTableError as error:
            raise InvalidTableError(f"Period {period}: {error}") from error


@final
class _Evolver:
    def __init__(self, model: TransitionModel, grid: TimeGrid, tolerances: Tolerances, validate_tables: bool = False):
        self._model: Final = model
        self._grid: Final = grid
        self._tolerances: Final = tolerances
        self._validate_tables: Final = validate_tables

    def run(self, initial: FloatArray, scenario_at: Callable[[int], ScenarioState]) -> Evolution:
        periods = self._grid.periods
        distributions = np.empty(initial.shape[:-2] + (periods + 1,) + initial.shape[-2:])
        mutations = np.empty(initial.shape[:-2] + (periods,) + initial.shape[-2:])
        matchings = np.empty_like(mutations)
        distributions[..., 0, :, :] = initial
        current = initial
        for period in range(1, periods + 1):
            mutated, matched, current, eta, theta, kernel = _step(current, self._model, scenario_at(period), period, self._tolerances)
            if self._validate_tables:
                _validate_tables(mutated, eta, theta, kernel, period, self._tolerances)
            mutations[..., period - 1, :, :] = mutated
            matchings[..., period - 1, :, :] = matched
            distributions[..., period, :, :] = current
        return Evolution(distributions, mutations, matchings, opinion_gap(self._model, distributions))


def _check_grid(path_grid: TimeGrid, grid: Optional[TimeGrid]) -> TimeGrid:
    if grid is not None and (grid.periods != path_grid.periods or not np.array_equal(grid.times, path_grid.times)):
        raise MisalignedInputError(f"Scenario grid with {path_grid.periods} periods does not match grid with {grid.periods} periods")
    return path_grid


def evolve(initial: ExtendedTypeDistribution, model: TransitionModel, path: ScenarioPath, grid: Optional[TimeGrid] = None,
           tolerances: Tolerances = DEFAULT_TOLERANCES, validate_tables: bool = False) -> Evolution:
    ensure_valid_distribution(initial, tolerances)
    _check_grid(path.grid, grid)
    if initial.num_types != model.num_types:
        raise MisalignedInputError(f"Distribution has {initial.num_types} types, model has {model.num_types}")
    return _Evolver(model, path.grid, tolerances, validate_tables).run(np.array(initial.entries), path.at)


## With `validate_tables`, every path's tables are checked in every period, not only mass and detailed balance.
def evolve_batch(initial: ExtendedTypeDistribution, model: TransitionModel, batch: ScenarioBatch,
                 tolerances: Tolerances = DEFAULT_TOLERANCES, validate_tables: bool = False) -> Evolution:
    ensure_valid_distribution(initial, tolerances)
    if initial.num_types != model.num_types:
        raise MisalignedInputError(f"Distribution has {initial.num_types} types, model has {model.num_types}")
    logging.debug(f"Evolving {len(batch)} scenario paths over {batch.grid.periods} periods")
    start = np.broadcast_to(initial.entries, (len(batch),) + initial.entries.shape).copy()
    return _Evolver(model, batch.grid, tolerances, validate_tables).run(start, batch.at)
