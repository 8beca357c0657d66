from typing import List, Optional, final
import numpy as np
from numpy.typing import ArrayLike

from bubblesim.drivers import ScenarioState
from bubblesim.models.base import BreakupKernel
from bubblesim.types import FloatArray, keep_pair_sigma, keep_type_varsigma


## Returns the same tables whatever the distribution; for checking engines against hand computations
@final
class FixedModel:
    def __init__(self, eta: ArrayLike, theta: ArrayLike, xi: ArrayLike, sigma: Optional[ArrayLike], varsigma: ArrayLike):
        self._eta = np.asarray(eta, dtype=np.float64)
        self._theta = np.asarray(theta, dtype=np.float64)
        self._xi = np.asarray(xi, dtype=np.float64)
        self._sigma = None if sigma is None else np.asarray(sigma, dtype=np.float64)
        self._varsigma = np.asarray(varsigma, dtype=np.float64)

    @property
    def num_types(self) -> int:
        return int(self._eta.shape[0])

    @staticmethod
    def _batched(table: FloatArray, like: FloatArray) -> FloatArray:
        result: FloatArray = np.broadcast_to(table, like.shape[:-2] + table.shape).copy()
        return result

    def eta(self, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray:
        return self._batched(self._eta, prior)

    def theta(self, scenario: ScenarioState, period: int, post_mutation: FloatArray) -> FloatArray:
        return self._batched(self._theta, post_mutation)

    def breakup(self, scenario: ScenarioState, period: int, post_matching: FloatArray) -> BreakupKernel:
        sigma = None if self._sigma is None else self._batched(self._sigma, post_matching)
        return BreakupKernel(self._batched(self._xi, post_matching), sigma, self._batched(self._varsigma, post_matching))

    def opinion_fractions(self, type_fractions: FloatArray) -> FloatArray:
        return type_fractions

    def required_drivers(self) -> List[str]:
        return []

    def required_regimes(self) -> List[str]:
        return []


def identity_model(num_types: int, xi: float = 0.0) -> FixedModel:
    size = num_types
    return FixedModel(np.eye(size), np.zeros((size, size)), np.full((size, size), xi), keep_pair_sigma(size), keep_type_varsigma(size))


def empty_scenario() -> ScenarioState:
    return ScenarioState(values={}, mapped={}, states={})


def regime_scenario(state: int, regime: str = "regime") -> ScenarioState:
    return ScenarioState(values={}, mapped={}, states={regime: np.array(state)})


def random_distribution(rng: np.random.Generator, num_types: int, matched_share: float = 0.5) -> FloatArray:
    # Symmetric matched block plus an unmatched column, total mass 1
    block = rng.random((num_types, num_types))
    block = block + block.T
    block *= matched_share / block.sum()
    unmatched = rng.random(num_types)
    unmatched *= (1.0 - matched_share) / unmatched.sum()
    entries = np.concatenate([block, unmatched[:, None]], axis=1)
    entries /= entries.sum()
    result: FloatArray = entries
    return result
