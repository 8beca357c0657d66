from dataclasses import dataclass, field, replace
from dataclasses_json import DataClassJsonMixin
from typing import Final, List, Optional, final
import numpy as np

from bubblesim.drivers import ScenarioState
from bubblesim.errors import ModelConfigurationError
from bubblesim.models.base import BreakupKernel, evaluate_table, fraction_gap, immediate_breakup, product_theta, unmatched_gap, with_residual_diagonal
from bubblesim.models.sentiment import SentimentFunctions
from bubblesim.types import DEFAULT_TOLERANCES, FloatArray, IntArray, ProbabilityTable, Tolerances


## Parameters of one scenario state in one period. Unlisted base intensities are zero.
@final
@dataclass(frozen=True)
class RegimeParams(DataClassJsonMixin):
    theta: float = 0.0
    eta_13: float = 0.0
    eta_31: float = 0.0
    eta_21: float = 0.0
    eta_23: float = 0.0
    varsigma_13: float = 0.0
    varsigma_31: float = 0.0

    def __post_init__(self) -> None:
        for name, value in self.to_dict().items():
            if not 0.0 <= value <= 0.5:
                raise ModelConfigurationError(f"Regime parameter {name} must lie in [0,1/2], got {value}")

    def mirrored(self) -> 'RegimeParams':
        # Relabel optimists and pessimists
        return RegimeParams(
            theta=self.theta,
            eta_13=self.eta_31,
            eta_31=self.eta_13,
            eta_21=self.eta_23,
            eta_23=self.eta_21,
            varsigma_13=self.varsigma_31,
            varsigma_31=self.varsigma_13,
        )


@final
@dataclass(frozen=True)
class PeriodParams(DataClassJsonMixin):
    state1: RegimeParams = field(default_factory=RegimeParams)
    state2: RegimeParams = field(default_factory=RegimeParams)

    def select(self, state: int) -> RegimeParams:
        if state == 1:
            return self.state1
        if state == 2:
            return self.state2
        raise ModelConfigurationError(f"Scenario state must be 1 or 2, got {state}")

    def mirrored(self) -> 'PeriodParams':
        return PeriodParams(self.state1.mirrored(), self.state2.mirrored())


## Two-state parameters per period; entry k-1 holds period k.
@final
@dataclass(frozen=True)
class ArbitrageModelParams(DataClassJsonMixin):
    periods: List[PeriodParams]

    @staticmethod
    def constant(num_periods: int, period: PeriodParams) -> 'ArbitrageModelParams':
        return ArbitrageModelParams([period] * num_periods)

    def at(self, period: int) -> PeriodParams:
        if not 1 <= period <= len(self.periods):
            raise ModelConfigurationError(f"No arbitrage parameters for period {period}")
        return self.periods[period - 1]

    def with_period(self, period: int, params: PeriodParams) -> 'ArbitrageModelParams':
        updated = list(self.periods)
        updated[period - 1] = params
        return replace(self, periods=updated)

    def mirrored(self) -> 'ArbitrageModelParams':
        return ArbitrageModelParams([period.mirrored() for period in self.periods])


def _select(params: PeriodParams, state: IntArray, name: str) -> FloatArray:
    first = getattr(params.state1, name)
    second = getattr(params.state2, name)
    selected: FloatArray = np.where(np.asarray(state) == 1, first, second).astype(np.float64)
    return selected


## Immediate break-up model with two scenario states per period:
##   eta_ij = eta~_ij(s,k) + f_ij(p_1J - p_3J), residual on the diagonal
##   theta_il = theta(s,k) * p~_lJ,  xi = 1
##   varsigma_il[l] = varsigma~_il(s,k) + g_ill(p~_1 - p~_3), residual varsigma_il[i]
## where s is the state of the discrete component `regime` in period k.
@final
class ArbitrageModel:
    def __init__(self, params: ArbitrageModelParams, sentiment: Optional[SentimentFunctions] = None,
                 regime: str = "regime", tolerances: Tolerances = DEFAULT_TOLERANCES):
        self._params: Final = params
        self._sentiment: Final = sentiment or SentimentFunctions()
        self._regime: Final = regime
        self._tolerances: Final = tolerances

    @property
    def params(self) -> ArbitrageModelParams:
        return self._params

    @property
    def sentiment(self) -> SentimentFunctions:
        return self._sentiment

    @property
    def regime(self) -> str:
        return self._regime

    @property
    def num_types(self) -> int:
        return 3

    def with_params(self, params: ArbitrageModelParams) -> 'ArbitrageModel':
        return ArbitrageModel(params, self._sentiment, self._regime, self._tolerances)

    def eta(self, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray:
        params = self._params.at(period)
        state = scenario.state(self._regime)
        x = unmatched_gap(prior)
        base = np.zeros(np.shape(x) + (3, 3))
        base[..., 0, 2] = _select(params, state, "eta_13")
        base[..., 2, 0] = _select(params, state, "eta_31")
        base[..., 1, 0] = _select(params, state, "eta_21")
        base[..., 1, 2] = _select(params, state, "eta_23")
        return with_residual_diagonal(base + self._sentiment.f_matrix(x), "eta", self._tolerances.table)

    def theta(self, scenario: ScenarioState, period: int, post_mutation: FloatArray) -> FloatArray:
        level = _select(self._params.at(period), scenario.state(self._regime), "theta")
        return product_theta(level, post_mutation)

    def breakup(self, scenario: ScenarioState, period: int, post_matching: FloatArray) -> BreakupKernel:
        params = self._params.at(period)
        state = scenario.state(self._regime)
        change = self._sentiment.g_matrix(fraction_gap(post_matching))
        change[..., 0, 2] += _select(params, state, "varsigma_13")
        change[..., 2, 0] += _select(params, state, "varsigma_31")
        return immediate_breakup(change, self._tolerances.table)

    def opinion_fractions(self, type_fractions: FloatArray) -> FloatArray:
        return type_fractions

    def required_drivers(self) -> List[str]:
        return []

    def required_regimes(self) -> List[str]:
        return [self._regime]


def arbitrage_model_tables(model: ArbitrageModel, scenario: ScenarioState, period: int,
                           prior: FloatArray, post_mutation: FloatArray, post_matching: FloatArray) -> ProbabilityTable:
    return evaluate_table(model, scenario, period, prior, post_mutation, post_matching)

