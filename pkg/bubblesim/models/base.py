from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, final
import numpy as np

from bubblesim.drivers import ScenarioState
from bubblesim.errors import ModelConfigurationError
from bubblesim.types import FloatArray, ProbabilityTable


## Break-up kernels of one period. `sigma` None means staying pairs keep their types.
## All arrays carry the same leading batch shape as the distribution they were evaluated at.
@final
@dataclass(frozen=True)
class BreakupKernel:
    xi: FloatArray
    sigma: Optional[FloatArray]
    varsigma: FloatArray


## A family of (eta, theta, xi, sigma, varsigma) tables. Every method accepts distributions of
## shape (..., K, K+1) together with a scenario state of matching leading shape, and returns
## tables with that leading shape. Tables are conditioned in period order: eta on the
## distribution at the end of the previous period, theta on the post-mutation distribution,
## and the break-up kernels on the post-matching distribution.
class TransitionModel(Protocol):
    @property
    def num_types(self) -> int: ...

    def eta(self, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray: ...

    def theta(self, scenario: ScenarioState, period: int, post_mutation: FloatArray) -> FloatArray: ...

    def breakup(self, scenario: ScenarioState, period: int, post_matching: FloatArray) -> BreakupKernel: ...

    # Type fractions (..., K) -> (optimistic, neutral, pessimistic) fractions (..., 3)
    def opinion_fractions(self, type_fractions: FloatArray) -> FloatArray: ...

    def required_drivers(self) -> List[str]: ...

    def required_regimes(self) -> List[str]: ...


def evaluate_table(model: TransitionModel, scenario: ScenarioState, period: int,
                   prior: FloatArray, post_mutation: FloatArray, post_matching: FloatArray) -> ProbabilityTable:
    kernel = model.breakup(scenario, period, post_matching)
    return ProbabilityTable(
        eta=model.eta(scenario, period, prior),
        theta=model.theta(scenario, period, post_mutation),
        xi=kernel.xi,
        sigma=kernel.sigma,
        varsigma=kernel.varsigma,
    )


def unmatched_gap(distribution: FloatArray) -> FloatArray:
    unmatched = distribution.shape[-2]
    result: FloatArray = distribution[..., 0, unmatched] - distribution[..., 2, unmatched]
    return result

def fraction_gap(distribution: FloatArray) -> FloatArray:
    totals = distribution.sum(axis=-1)
    result: FloatArray = totals[..., 0] - totals[..., 2]
    return result


def with_residual_diagonal(off_diagonal: FloatArray, table: str, tolerance: float) -> FloatArray:
    num_types = off_diagonal.shape[-1]
    diagonal = 1.0 - off_diagonal.sum(axis=-1)
    if np.any(diagonal < -tolerance):
        row = int(np.argwhere(diagonal < -tolerance)[0][-1])
        raise ModelConfigurationError(
            f"{table}: residual {table}_{row + 1}{row + 1} is negative ({float(diagonal.min()):.3g})")
    result = off_diagonal.copy()
    index = np.arange(num_types)
    result[..., index, index] = diagonal
    return result


def product_theta(level: FloatArray, post_mutation: FloatArray) -> FloatArray:
    # theta_kl = level * p_lJ, balanced by construction
    num_types = post_mutation.shape[-2]
    unmatched = post_mutation[..., :, num_types]
    shape = unmatched.shape[:-1] + (num_types, num_types)
    theta: FloatArray = np.asarray(level)[..., None, None] * np.broadcast_to(unmatched[..., None, :], shape)
    return theta


def driver_matrix(scenario: ScenarioState, names: Sequence[Sequence[Optional[str]]], like: FloatArray) -> FloatArray:
    # like: any array whose shape is the batch shape
    zeros = np.zeros(np.shape(like))
    rows = [
        np.stack([zeros + scenario.level(name) if name is not None else zeros for name in row], axis=-1)
        for row in names
    ]
    return np.stack(rows, axis=-2)


def immediate_breakup(change: FloatArray, tolerance: float) -> BreakupKernel:
    # change[..., i, l]: probability that an agent of type i who met type l adopts type l
    num_types = change.shape[-1]
    batch = change.shape[:-2]
    varsigma = np.zeros(batch + (num_types, num_types, num_types))
    for i in range(num_types):
        varsigma[..., i, i, i] = 1.0
        for l in range(num_types):
            if l == i:
                continue
            stay = 1.0 - change[..., i, l]
            if np.any(stay < -tolerance):
                raise ModelConfigurationError(f"varsigma: residual varsigma_{i + 1}{l + 1}[{i + 1}] is negative ({float(np.min(stay)):.3g})")
            varsigma[..., i, l, l] = change[..., i, l]
            varsigma[..., i, l, i] = stay
    return BreakupKernel(xi=np.ones(batch + (num_types, num_types)), sigma=None, varsigma=varsigma)
