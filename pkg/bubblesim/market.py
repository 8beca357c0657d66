from dataclasses import dataclass
from dataclasses_json import DataClassJsonMixin
from io import StringIO
from typing import Iterator, List, Optional, final
import csv
import numpy as np
from numpy.typing import ArrayLike
from ensure import check  # type: ignore

from bubblesim.drivers import ScenarioBatch, ScenarioPath
from bubblesim.errors import MisalignedInputError, ModelConfigurationError
from bubblesim.types import FloatArray, TimeGrid, format_float


## Market inputs. The driver fields name scenario drivers whose mapped values are F, Lambda = 1 - R,
## M and Theta; Theta is multiplied by `order_size_scale`.
@final
@dataclass(frozen=True)
class MarketParams(DataClassJsonMixin):
    kappa: float = 0.01
    fundamental: str = "F"
    resiliency: str = "Lambda"
    illiquidity: str = "M"
    order_size: str = "Theta"
    order_size_scale: float = 1.0
    # X^0 = 0 instead of Theta^0 (p1^0 - p3^0)
    x0_zero: bool = False
    # Report a burst when beta crosses from positive to non-positive, not only at exact zeros
    detect_sign_change: bool = True

    def __post_init__(self) -> None:
        check(self.kappa).is_greater_than_or_equal_to(0.0).or_raise(
            lambda _: ModelConfigurationError(f"kappa must be non-negative, got {self.kappa}"))
        check(self.order_size_scale).is_greater_than(0.0).or_raise(
            lambda _: ModelConfigurationError(f"Order size scale must be positive, got {self.order_size_scale}"))

    def drivers(self) -> List[str]:
        return [self.fundamental, self.resiliency, self.illiquidity, self.order_size]


def execution_cost(price: float, illiquidity: float, shares: float) -> float:
    # Integral of z / (2M) over [S, S + 2Mx]
    if shares == 0.0:
        return 0.0
    check(shares).is_greater_than(0.0).or_raise(
        lambda _: ModelConfigurationError(f"Order size must be non-negative, got {shares}"))
    check(illiquidity).is_greater_than(0.0).or_raise(
        lambda _: ModelConfigurationError(f"Illiquidity must be positive, got {illiquidity}"))
    return price * shares + illiquidity * shares ** 2

def average_execution_price(price: float, illiquidity: float, shares: float) -> float:
    if shares == 0.0:
        return price
    return execution_cost(price, illiquidity, shares) / shares


def signed_volume(order_size: ArrayLike, p1: ArrayLike, p3: ArrayLike) -> FloatArray:
    volume: FloatArray = np.asarray(order_size, dtype=np.float64) * (np.asarray(p1, dtype=np.float64) - np.asarray(p3, dtype=np.float64))
    return volume


def bubble_step(previous: ArrayLike, kappa: float, dt: float, resiliency: ArrayLike, illiquidity: ArrayLike,
                volume_change: ArrayLike) -> FloatArray:
    check(dt).is_greater_than(0.0).or_raise(
        lambda _: MisalignedInputError(f"Time step must be positive, got {dt}"))
    beta = np.asarray(previous, dtype=np.float64)
    result: FloatArray = (beta - kappa * beta * dt
                          + 2.0 * np.asarray(resiliency) * np.asarray(illiquidity) * np.asarray(volume_change))
    return result


@final
@dataclass(frozen=True)
class BirthBurst:
    # Grid indices; None when the event never happens and the time is capped at T
    birth: Optional[int]
    burst: Optional[int]
    birth_time: float
    burst_time: float


def birth_burst(beta: ArrayLike, grid: TimeGrid, detect_sign_change: bool = True) -> BirthBurst:
    values = np.asarray(beta, dtype=np.float64)
    if values.shape != (grid.periods + 1,):
        raise MisalignedInputError(f"Bubble path has {values.shape} points, grid has {grid.periods + 1}")
    horizon = grid.horizon
    positive = np.flatnonzero(values > 0.0)
    if positive.shape[0] == 0:
        return BirthBurst(None, None, horizon, horizon)
    birth = int(positive[0])
    after = values[birth:]
    hits = after == 0.0
    if detect_sign_change:
        hits = hits | (after <= 0.0)
    zeros = np.flatnonzero(hits)
    if zeros.shape[0] == 0:
        return BirthBurst(birth, None, float(grid.times[birth]), horizon)
    burst = birth + int(zeros[0])
    return BirthBurst(birth, burst, float(grid.times[birth]), float(grid.times[burst]))


def _bubble_series(gap: FloatArray, resiliency: FloatArray, illiquidity: FloatArray, order_size: FloatArray,
                   deltas: FloatArray, params: MarketParams) -> tuple[FloatArray, FloatArray]:
    # Arrays (..., N+1); returns (X, beta)
    volume = signed_volume(order_size, gap, 0.0)
    beta = np.zeros_like(gap)
    previous_volume = np.zeros_like(gap[..., 0]) if params.x0_zero else volume[..., 0]
    for period in range(1, gap.shape[-1]):
        change = volume[..., period] - previous_volume
        beta[..., period] = bubble_step(beta[..., period - 1], params.kappa, float(deltas[period - 1]),
                                        resiliency[..., period], illiquidity[..., period], change)
        previous_volume = volume[..., period]
    return volume, beta


## One trajectory of the market on the time grid. Wealth uses a zero dividend process:
## W is S before the burst, F at the burst and undefined afterwards; the fundamental wealth is F.
@final
@dataclass(frozen=True)
class MarketPath:
    grid: TimeGrid
    fundamental: FloatArray
    price: FloatArray
    beta: FloatArray
    volume: FloatArray
    gap: FloatArray
    events: BirthBurst
    wealth: FloatArray

    @property
    def fundamental_wealth(self) -> FloatArray:
        return self.fundamental

    def csv_rows(self, trajectory: Optional[int] = None) -> Iterator[List[str]]:
        prefix = [] if trajectory is None else [str(trajectory)]
        for period in range(self.grid.periods + 1):
            yield prefix + [str(period)] + [format_float(value) for value in (
                self.grid.times[period], self.fundamental[period], self.price[period],
                self.beta[period], self.volume[period], self.gap[period])]

    @staticmethod
    def csv_header(with_trajectory: bool = False) -> List[str]:
        return (["trajectory"] if with_trajectory else []) + ["period", "t", "F", "S", "beta", "X", "p1_minus_p3"]

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        wr.writerow(MarketPath.csv_header())
        wr.writerows(self.csv_rows())
        return output.getvalue()


def _wealth(price: FloatArray, fundamental: FloatArray, burst: Optional[int]) -> FloatArray:
    stop = price.shape[0] - 1 if burst is None else burst
    wealth = np.full_like(price, np.nan)
    wealth[:stop] = price[:stop]
    wealth[stop] = fundamental[stop]
    return wealth


def simulate_market_path(gap: ArrayLike, path: ScenarioPath, params: MarketParams, grid: Optional[TimeGrid] = None) -> MarketPath:
    grid = grid or path.grid
    gap_values = np.asarray(gap, dtype=np.float64)
    if gap_values.shape != (grid.periods + 1,) or path.grid.periods != grid.periods:
        raise MisalignedInputError(
            f"Opinion gap has {gap_values.shape[0]} points, scenario {path.grid.periods + 1}, grid {grid.periods + 1}")
    for name in params.drivers():
        if name not in path.mapped:
            raise ModelConfigurationError(f"Scenario has no driver '{name}'")
    fundamental = path.mapped[params.fundamental]
    order_size = path.mapped[params.order_size] * params.order_size_scale
    volume, beta = _bubble_series(gap_values, path.mapped[params.resiliency], path.mapped[params.illiquidity],
                                  order_size, grid.deltas, params)
    price = fundamental + beta
    # Stored as S - F; events read the stored series
    stored = price - fundamental
    events = birth_burst(stored, grid, params.detect_sign_change)
    return MarketPath(grid, fundamental, price, stored, volume, gap_values, events,
                      _wealth(price, fundamental, events.burst))


@final
@dataclass(frozen=True)
class MarketBatch:
    beta: FloatArray
    gap: FloatArray


def simulate_market_batch(gap: FloatArray, batch: ScenarioBatch, params: MarketParams) -> MarketBatch:
    if gap.shape != (len(batch), batch.grid.periods + 1):
        raise MisalignedInputError(f"Opinion gaps have shape {gap.shape}, expected {(len(batch), batch.grid.periods + 1)}")
    for name in params.drivers():
        if name not in batch.mapped:
            raise ModelConfigurationError(f"Scenario has no driver '{name}'")
    fundamental = batch.mapped[params.fundamental]
    _, beta = _bubble_series(gap, batch.mapped[params.resiliency], batch.mapped[params.illiquidity],
                             batch.mapped[params.order_size] * params.order_size_scale, batch.grid.deltas, params)
    price = fundamental + beta
    return MarketBatch(price - fundamental, gap)
