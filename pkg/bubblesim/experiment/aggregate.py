from dataclasses import dataclass
from io import StringIO
from typing import Dict, Final, Sequence, final
import csv
import numpy as np
from numpy.typing import ArrayLike

from bubblesim.types import FloatArray, TimeGrid, format_float


## Count, mean and sum of squared deviations per period (Welford). Partial results of
## disjoint samples combine exactly with `merge` (Chan et al.), so chunks are reduced
## without keeping the trajectories.
@final
@dataclass(frozen=True)
class RunningMoments:
    count: int
    mean: FloatArray
    m2: FloatArray

    @staticmethod
    def empty(points: int) -> 'RunningMoments':
        return RunningMoments(0, np.zeros(points), np.zeros(points))

    @staticmethod
    def of(samples: ArrayLike) -> 'RunningMoments':
        # samples: (trajectories, points)
        values = np.asarray(samples, dtype=np.float64)
        mean = values.mean(axis=0)
        return RunningMoments(int(values.shape[0]), mean, ((values - mean) ** 2).sum(axis=0))

    def merge(self, other: 'RunningMoments') -> 'RunningMoments':
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / count)
        return RunningMoments(count, mean, m2)

    @property
    def variance(self) -> FloatArray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        result: FloatArray = self.m2 / (self.count - 1)
        return result

    @property
    def stderr(self) -> FloatArray:
        result: FloatArray = np.sqrt(self.variance / max(self.count, 1))
        return result


def merge_all(parts: Sequence[RunningMoments], points: int) -> RunningMoments:
    # Left fold in the given order keeps the floating point result reproducible
    total = RunningMoments.empty(points)
    for part in parts:
        total = total.merge(part)
    return total


AVERAGES_HEADER: Final = ["period", "t", "mean_beta", "stderr", "mean_p1_minus_p3", "stderr_p1_minus_p3"]


## Per-period statistics of one run: bubble beta and the opinion gap p1 - p3.
@final
@dataclass(frozen=True)
class AggregateReport:
    grid: TimeGrid
    beta: RunningMoments
    gap: RunningMoments
    wall_clock_seconds: float

    @property
    def paths(self) -> int:
        return self.beta.count

    @property
    def mean_beta(self) -> FloatArray:
        return self.beta.mean

    @property
    def stderr_beta(self) -> FloatArray:
        return self.beta.stderr

    @property
    def mean_gap(self) -> FloatArray:
        return self.gap.mean

    @property
    def stderr_gap(self) -> FloatArray:
        return self.gap.stderr

    @property
    def throughput(self) -> float:
        # Trajectories per second
        if self.wall_clock_seconds <= 0.0:
            return float('inf')
        return self.paths / self.wall_clock_seconds

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        wr.writerow(AVERAGES_HEADER)
        for period in range(self.grid.periods + 1):
            wr.writerow([str(period)] + [format_float(value) for value in (
                self.grid.times[period], self.mean_beta[period], self.stderr_beta[period],
                self.mean_gap[period], self.stderr_gap[period])])
        return output.getvalue()

    def summary(self) -> Dict[str, float]:
        return {
            "paths": float(self.paths),
            "mean_beta_1": float(self.mean_beta[1]),
            "stderr_beta_1": float(self.stderr_beta[1]),
            "mean_beta_T": float(self.mean_beta[-1]),
            "stderr_beta_T": float(self.stderr_beta[-1]),
            "wall_clock_seconds": self.wall_clock_seconds,
            "trajectories_per_second": self.throughput,
        }


@final
@dataclass(frozen=True)
class TiltReport:
    baseline: AggregateReport
    tilted: AggregateReport

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        wr.writerow(["period", "t", "mean_beta", "stderr", "mean_beta_tilted", "stderr_tilted"])
        for period in range(self.baseline.grid.periods + 1):
            wr.writerow([str(period)] + [format_float(value) for value in (
                self.baseline.grid.times[period], self.baseline.mean_beta[period], self.baseline.stderr_beta[period],
                self.tilted.mean_beta[period], self.tilted.stderr_beta[period])])
        return output.getvalue()

    def relative_change(self, period: int) -> float:
        # (tilted - baseline) / |baseline| of the mean bubble; 0 where the baseline mean is 0
        base = float(self.baseline.mean_beta[period])
        if base == 0.0:
            return 0.0
        return (float(self.tilted.mean_beta[period]) - base) / abs(base)
