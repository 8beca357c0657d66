from dataclasses import dataclass, field
from dataclasses_json import DataClassJsonMixin
from typing import Tuple, final
import numpy as np
from numpy.typing import ArrayLike
from ensure import check  # type: ignore

from bubblesim.errors import ModelConfigurationError
from bubblesim.types import FloatArray


## scale * x^exponent on x >= 0, zero below. With scale <= 1/2 it maps [0,1] into [0,1/2].
@final
@dataclass(frozen=True)
class PowerSentiment(DataClassJsonMixin):
    scale: float = 1.0 / 3.0
    exponent: float = 0.4

    def __post_init__(self) -> None:
        check(self.scale).is_greater_than_or_equal_to(0.0).or_raise(
            lambda _: ModelConfigurationError(f"Sentiment scale must be non-negative, got {self.scale}"))
        check(self.scale).is_less_than_or_equal_to(0.5).or_raise(
            lambda _: ModelConfigurationError(f"Sentiment scale must be at most 1/2, got {self.scale}"))
        check(self.exponent).is_greater_than(0.0).or_raise(
            lambda _: ModelConfigurationError(f"Sentiment exponent must be positive, got {self.exponent}"))

    def __call__(self, x: ArrayLike) -> FloatArray:
        result: FloatArray = self.scale * np.maximum(np.asarray(x, dtype=np.float64), 0.0) ** self.exponent
        return result


# Pairs whose increment is driven by a buyer surplus (p1 > p3), and its square
_UPWARD = {(2, 1), (3, 2)}
_DOWNWARD = {(1, 2), (2, 3)}


## Increments f_ij (mutation) and g_ijj (change after a meeting) as functions of x = p1 - p3.
## Moves towards optimism (2->1, 3->2) grow with x > 0, moves towards pessimism with x < 0,
## and the two-step moves 3->1 and 1->3 use the square of the one-step increment.
@final
@dataclass(frozen=True)
class SentimentFunctions(DataClassJsonMixin):
    f: PowerSentiment = field(default_factory=PowerSentiment)
    g: PowerSentiment = field(default_factory=PowerSentiment)

    def f_ij(self, x: ArrayLike, i: int, j: int) -> FloatArray:
        return _pair_value(self.f, x, i, j)

    def g_ijj(self, x: ArrayLike, i: int, j: int) -> FloatArray:
        return _pair_value(self.g, x, i, j)

    def f_matrix(self, x: ArrayLike) -> FloatArray:
        return _pair_matrix(self.f, x)

    def g_matrix(self, x: ArrayLike) -> FloatArray:
        return _pair_matrix(self.g, x)

    def f_plus_minus(self, x: ArrayLike) -> Tuple[FloatArray, FloatArray]:
        value = np.asarray(x, dtype=np.float64)
        return self.f(value), self.f(-value)

    def g_plus_minus(self, x: ArrayLike) -> Tuple[FloatArray, FloatArray]:
        value = np.asarray(x, dtype=np.float64)
        return self.g(value), self.g(-value)


def _pair_value(base: PowerSentiment, x: ArrayLike, i: int, j: int) -> FloatArray:
    value = np.asarray(x, dtype=np.float64)
    if (i, j) in _UPWARD:
        return base(value)
    if (i, j) in _DOWNWARD:
        return base(-value)
    if (i, j) == (3, 1):
        result: FloatArray = base(value) ** 2
        return result
    if (i, j) == (1, 3):
        result = base(-value) ** 2
        return result
    raise ModelConfigurationError(f"No sentiment increment defined for index pair ({i},{j})")


def _pair_matrix(base: PowerSentiment, x: ArrayLike) -> FloatArray:
    value = np.asarray(x, dtype=np.float64)
    matrix = np.zeros(value.shape + (3, 3))
    for i in range(1, 4):
        for j in range(1, 4):
            if i != j:
                matrix[..., i - 1, j - 1] = _pair_value(base, value, i, j)
    return matrix


def sentiment_f(x: float, pair: Tuple[int, int]) -> float:
    if not -1.0 <= x <= 1.0:
        raise ModelConfigurationError(f"Sentiment argument must be a difference of fractions, got {x}")
    return float(_pair_value(PowerSentiment(), x, pair[0], pair[1]))
