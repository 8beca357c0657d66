from dataclasses import dataclass, field
from dataclasses_json import DataClassJsonMixin
from typing import Dict, Final, List, Optional, Tuple, final
import numpy as np

from bubblesim.drivers import ScenarioState
from bubblesim.errors import ModelConfigurationError
from bubblesim.models.base import BreakupKernel, fraction_gap, product_theta
from bubblesim.models.sentiment import SentimentFunctions
from bubblesim.types import DEFAULT_TOLERANCES, FloatArray, Tolerances, keep_type_varsigma

# Random terms of the post-meeting type changes, named after their index triple
SIGMA_TERMS: Final = ("F121", "F122", "F131", "F132", "F133", "F232", "F233")
# Additive perturbations of the mutation matrix
ETA_TERMS: Final = tuple(f"C{i}{j}" for i in range(1, 4) for j in range(1, 4) if i != j)


## Terms are either bound to a driver (its mapped value) or fixed constants; unbound terms are 0.
@final
@dataclass(frozen=True)
class Example1Params(DataClassJsonMixin):
    term_drivers: Dict[str, str] = field(default_factory=dict)
    term_constants: Dict[str, float] = field(default_factory=dict)
    theta_driver: Optional[str] = None
    theta_level: float = 0.5
    xi: float = 0.5
    sentiment: SentimentFunctions = field(default_factory=SentimentFunctions)

    def __post_init__(self) -> None:
        for name in [*self.term_drivers, *self.term_constants]:
            if name not in SIGMA_TERMS and name not in ETA_TERMS:
                raise ModelConfigurationError(f"Unknown term '{name}', expected one of {SIGMA_TERMS + ETA_TERMS}")
        for name, value in self.term_constants.items():
            if not 0.0 <= value <= 0.5:
                raise ModelConfigurationError(f"Term {name} must lie in [0,1/2], got {value}")
        if not 0.0 <= self.xi <= 1.0:
            raise ModelConfigurationError(f"xi must lie in [0,1], got {self.xi}")
        if not 0.0 <= self.theta_level <= 1.0:
            raise ModelConfigurationError(f"theta level must lie in [0,1], got {self.theta_level}")


## Three types whose staying pairs change types through the sigma table below, and whose
## mutation matrix is B(g+, g-) + C with C compensated on the diagonal.
## f+ = f((p1 - p3)^+) and f- = f((p3 - p1)^+) use the fractions of the post-matching
## distribution, g+ and g- those at the end of the previous period.
@final
class Example1Model:
    def __init__(self, params: Optional[Example1Params] = None, tolerances: Tolerances = DEFAULT_TOLERANCES):
        self._params: Final = params or Example1Params()
        self._tolerance: Final = tolerances.table

    @property
    def num_types(self) -> int:
        return 3

    def _term(self, scenario: ScenarioState, name: str, like: FloatArray) -> FloatArray:
        zeros = np.zeros(np.shape(like))
        if name in self._params.term_drivers:
            return zeros + scenario.level(self._params.term_drivers[name])
        return zeros + self._params.term_constants.get(name, 0.0)

    def eta(self, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray:
        g_plus, g_minus = self._params.sentiment.g_plus_minus(fraction_gap(prior))
        eta = mutation_matrix(g_plus, g_minus)
        perturbation = np.zeros_like(eta)
        for i in range(3):
            for j in range(3):
                if i != j:
                    perturbation[..., i, j] = self._term(scenario, f"C{i + 1}{j + 1}", g_plus)
        index = np.arange(3)
        perturbation[..., index, index] = -perturbation.sum(axis=-1)
        eta = eta + perturbation
        if np.any(eta < -self._tolerance):
            cell = tuple(int(i) + 1 for i in np.argwhere(eta < -self._tolerance)[0][-2:])
            raise ModelConfigurationError(f"eta_{cell[0]}{cell[1]} is negative after adding C")
        return eta

    def theta(self, scenario: ScenarioState, period: int, post_mutation: FloatArray) -> FloatArray:
        if self._params.theta_driver is not None:
            level = scenario.level(self._params.theta_driver)
        else:
            level = np.full(post_mutation.shape[:-2], self._params.theta_level)
        return product_theta(level, post_mutation)

    def breakup(self, scenario: ScenarioState, period: int, post_matching: FloatArray) -> BreakupKernel:
        f_plus, f_minus = self._params.sentiment.f_plus_minus(fraction_gap(post_matching))
        terms = {name: self._term(scenario, name, f_plus) for name in SIGMA_TERMS}
        sigma = staying_pair_sigma(terms, f_plus, f_minus, self._tolerance)
        batch = f_plus.shape
        return BreakupKernel(
            xi=np.full(batch + (3, 3), self._params.xi),
            sigma=sigma,
            varsigma=np.broadcast_to(keep_type_varsigma(3), batch + (3, 3, 3)).copy(),
        )

    def opinion_fractions(self, type_fractions: FloatArray) -> FloatArray:
        return type_fractions

    def required_drivers(self) -> List[str]:
        names = list(self._params.term_drivers.values())
        if self._params.theta_driver is not None:
            names.append(self._params.theta_driver)
        return names

    def required_regimes(self) -> List[str]:
        return []


def mutation_matrix(g_plus: FloatArray, g_minus: FloatArray) -> FloatArray:
    rows = [
        [1.0 - g_minus, g_minus * (1.0 - g_minus), g_minus ** 2],
        [g_plus, 1.0 - g_plus - g_minus, g_minus],
        [g_plus ** 2, g_plus * (1.0 - g_plus), 1.0 - g_plus],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


# Non-zero cells (r, s) of sigma_kl for k < l, 1-based; the residual sits in cell (k, l)
def _sigma_cells(terms: Dict[str, FloatArray], f_plus: FloatArray, f_minus: FloatArray) -> List[Tuple[int, int, Dict[Tuple[int, int], FloatArray]]]:
    return [
        (1, 2, {
            (1, 1): terms["F121"] + f_plus,
            (2, 2): terms["F122"] + f_minus,
        }),
        (2, 3, {
            (2, 2): terms["F232"] + f_plus,
            (3, 3): terms["F233"] + f_minus,
        }),
        (1, 3, {
            (1, 1): terms["F131"] + f_plus ** 2,
            (1, 2): terms["F132"] + f_plus * (1.0 - f_plus),
            (3, 3): terms["F133"] + f_minus ** 2,
            # F132 is shared with cell (1,2)
            (2, 3): terms["F132"] + f_minus * (1.0 - f_minus),
        }),
    ]


def staying_pair_sigma(terms: Dict[str, FloatArray], f_plus: FloatArray, f_minus: FloatArray, tolerance: float) -> FloatArray:
    batch = np.shape(f_plus)
    sigma = np.zeros(batch + (3, 3, 3, 3))
    for k in range(3):
        sigma[..., k, k, k, k] = 1.0
    for k, l, cells in _sigma_cells(terms, f_plus, f_minus):
        residual = np.ones(batch)
        for (r, s), value in cells.items():
            sigma[..., k - 1, l - 1, r - 1, s - 1] = value
            residual = residual - value
        if np.any(residual < -tolerance):
            raise ModelConfigurationError(
                f"sigma_{k}{l}({k},{l}) is negative ({float(np.min(residual)):.3g})")
        sigma[..., k - 1, l - 1, k - 1, l - 1] = residual
        # sigma_lk(s, r) = sigma_kl(r, s)
        sigma[..., l - 1, k - 1, :, :] = np.swapaxes(sigma[..., k - 1, l - 1, :, :], -1, -2)
    return sigma


def example1_sigma(model: Example1Model, scenario: ScenarioState, period: int, post_matching: FloatArray) -> FloatArray:
    sigma = model.breakup(scenario, period, post_matching).sigma
    assert sigma is not None
    return sigma

def example1_eta(model: Example1Model, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray:
    return model.eta(scenario, period, prior)
