from typing import Dict, Final, List, Optional, final

from bubblesim.drivers import ScenarioState
from bubblesim.models.base import BreakupKernel, driver_matrix, fraction_gap, immediate_breakup, product_theta, unmatched_gap, with_residual_diagonal
from bubblesim.models.sentiment import SentimentFunctions
from bubblesim.types import DEFAULT_TOLERANCES, FloatArray, Tolerances

_TYPES = range(1, 4)


def eta_driver(i: int, j: int) -> str:
    return f"eta_{i}{j}"

def varsigma_driver(i: int, j: int) -> str:
    return f"varsigma_{i}{j}"


## Three investor types (1 optimistic, 2 neutral, 3 pessimistic) with random base intensities:
##   eta_ij     = eta~_ij + f_ij(p_1J - p_3J)          for i != j, eta_ii the residual
##   theta_il   = theta~ * p~_lJ
##   xi         = 1 (every pair breaks up in the period it forms)
##   varsigma_il[l] = varsigma~_il + g_ill(p~_1 - p~_3)  for i != l, varsigma_il[i] the residual
## eta~_ij, varsigma~_il and theta~ are the mapped values of the drivers eta_ij, varsigma_il and theta.
@final
class SimulationStudyModel:
    def __init__(self, sentiment: Optional[SentimentFunctions] = None, theta_driver: str = "theta",
                 tolerances: Tolerances = DEFAULT_TOLERANCES):
        self._sentiment: Final = sentiment or SentimentFunctions()
        self._theta_driver: Final = theta_driver
        self._tolerance: Final = tolerances.table
        self._eta_names: Final = [[eta_driver(i, j) if i != j else None for j in _TYPES] for i in _TYPES]
        self._varsigma_names: Final = [[varsigma_driver(i, j) if i != j else None for j in _TYPES] for i in _TYPES]

    @property
    def num_types(self) -> int:
        return 3

    def eta(self, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray:
        x = unmatched_gap(prior)
        base = driver_matrix(scenario, self._eta_names, x)
        return with_residual_diagonal(base + self._sentiment.f_matrix(x), "eta", self._tolerance)

    def theta(self, scenario: ScenarioState, period: int, post_mutation: FloatArray) -> FloatArray:
        return product_theta(scenario.level(self._theta_driver), post_mutation)

    def breakup(self, scenario: ScenarioState, period: int, post_matching: FloatArray) -> BreakupKernel:
        x = fraction_gap(post_matching)
        change = driver_matrix(scenario, self._varsigma_names, x) + self._sentiment.g_matrix(x)
        return immediate_breakup(change, self._tolerance)

    def opinion_fractions(self, type_fractions: FloatArray) -> FloatArray:
        return type_fractions

    def required_drivers(self) -> List[str]:
        names = [self._theta_driver]
        names += [eta_driver(i, j) for i in _TYPES for j in _TYPES if i != j]
        names += [varsigma_driver(i, j) for i in _TYPES for j in _TYPES if i != j]
        return names

    def required_regimes(self) -> List[str]:
        return []


def mirror_renaming() -> Dict[str, str]:
    # Swapping optimists and pessimists maps type i to 4 - i
    renaming = {}
    for i in _TYPES:
        for j in _TYPES:
            renaming[eta_driver(i, j)] = eta_driver(4 - i, 4 - j)
            renaming[varsigma_driver(i, j)] = varsigma_driver(4 - i, 4 - j)
    return renaming
