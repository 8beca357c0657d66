from dataclasses import dataclass, field
from enum import Enum, IntEnum
from io import StringIO
from typing import Dict, Final, Mapping, Optional, Sequence, final
import csv
import math
import numpy as np
from ensure import check  # type: ignore

from bubblesim.errors import DriverSpecError, ModelConfigurationError
from bubblesim.types import FloatArray, IntArray, TimeGrid, format_float


@final
class UpFactorConvention(Enum):
    LINEAR = "linear"
    SQUARE_ROOT = "square-root"


## Maps a raw lattice value Z to the quantity a model consumes
@final
class Squash(Enum):
    NONE = "none"
    ARCTAN = "arctan"
    QUARTER_ARCTAN = "quarter-arctan"

    def apply(self, values: FloatArray) -> FloatArray:
        if self is Squash.NONE:
            return values
        mapped: FloatArray = (2.0 / math.pi) * np.arctan(values)
        if self is Squash.QUARTER_ARCTAN:
            return 0.25 * mapped
        return mapped


@final
@dataclass(frozen=True)
class BinomialDriverSpec:
    x0: float
    sigma: float
    grid: TimeGrid
    convention: UpFactorConvention = UpFactorConvention.LINEAR
    squash: Squash = Squash.NONE

    def __post_init__(self) -> None:
        check(float(self.x0)).is_greater_than(0.0).or_raise(
            lambda _: DriverSpecError(f"Initial value must be positive, got {self.x0}"))
        check(float(self.sigma)).is_greater_than_or_equal_to(0.0).or_raise(
            lambda _: DriverSpecError(f"Volatility must be non-negative, got {self.sigma}"))


## Discrete scenario component taking state 1 with probability `p_state1` each period, else state 2
@final
@dataclass(frozen=True)
class RegimeSpec:
    p_state1: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_state1 <= 1.0:
            raise DriverSpecError(f"State probability must lie in [0,1], got {self.p_state1}")


@final
@dataclass(frozen=True)
class ScenarioSpec:
    grid: TimeGrid
    drivers: Mapping[str, BinomialDriverSpec] = field(default_factory=dict)
    regimes: Mapping[str, RegimeSpec] = field(default_factory=dict)


@final
@dataclass(frozen=True)
class LatticeParams:
    up: float
    down: float
    probability: float


def _step_exponent(spec: BinomialDriverSpec, dt: float) -> float:
    if spec.convention is UpFactorConvention.LINEAR:
        return spec.sigma * dt
    return spec.sigma * math.sqrt(dt)

def lattice_params(spec: BinomialDriverSpec, period: int = 1) -> LatticeParams:
    check(period).is_greater_than(0).or_raise(
        lambda _: DriverSpecError(f"Period must be positive, got {period}"))
    check(period).is_less_than(spec.grid.periods + 1).or_raise(
        lambda _: DriverSpecError(f"Period {period} outside grid with {spec.grid.periods} periods"))
    exponent = _step_exponent(spec, spec.grid.delta(period))
    if exponent == 0.0:
        return LatticeParams(up=1.0, down=1.0, probability=0.5)
    up = math.exp(exponent)
    # (1 - d) / (u - d) with d = 1/u
    return LatticeParams(up=up, down=1.0 / up, probability=1.0 / (1.0 + up))


## Trajectory i draws from the Philox stream keyed by SeedSequence(base_seed, spawn_key=(stream, i)).
## Keys are stable across releases; adding a stream kind appends a new value.
@final
class Stream(IntEnum):
    SCENARIO = 0
    POPULATION = 1
    RESAMPLE = 2


@final
@dataclass(frozen=True)
class SeedScheme:
    base_seed: int

    def __post_init__(self) -> None:
        check(self.base_seed).is_a(int).or_raise(
            lambda _: DriverSpecError(f"Seed must be an integer, got {self.base_seed}"))
        if not 0 <= self.base_seed < 2**64:
            raise DriverSpecError(f"Seed must be a 64-bit unsigned integer, got {self.base_seed}")

    def sequence(self, index: int, stream: Stream = Stream.SCENARIO) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.base_seed, spawn_key=(int(stream), int(index)))

    def generator(self, index: int, stream: Stream = Stream.SCENARIO) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.sequence(index, stream)))


## Scenario values at one period. Arrays are 0-d for a single path and 1-d for a batch.
@final
@dataclass(frozen=True)
class ScenarioState:
    values: Mapping[str, FloatArray]
    mapped: Mapping[str, FloatArray]
    states: Mapping[str, IntArray]

    def raw(self, name: str) -> FloatArray:
        if name not in self.values:
            raise ModelConfigurationError(f"Scenario has no driver '{name}'")
        return self.values[name]

    def level(self, name: str) -> FloatArray:
        if name not in self.mapped:
            raise ModelConfigurationError(f"Scenario has no driver '{name}'")
        return self.mapped[name]

    def state(self, name: str) -> IntArray:
        if name not in self.states:
            raise ModelConfigurationError(f"Scenario has no discrete component '{name}'")
        return self.states[name]


@final
class ScenarioPath:
    def __init__(self, grid: TimeGrid, values: Dict[str, FloatArray], mapped: Dict[str, FloatArray],
                 states: Dict[str, IntArray], uniforms: Dict[str, FloatArray], seed: int, index: int):
        self.grid: Final = grid
        self.values: Final = values
        self.mapped: Final = mapped
        self.states: Final = states
        # Uniform draws behind each discrete state, so a changed state law can reuse them
        self.uniforms: Final = uniforms
        self.seed: Final = seed
        self.index: Final = index
        for name, series in [*values.items(), *states.items()]:
            if series.shape[-1] != grid.periods + 1:
                raise DriverSpecError(f"Series '{name}' has {series.shape[-1]} points, grid has {grid.periods + 1}")

    def at(self, period: int) -> ScenarioState:
        return ScenarioState(
            values={name: series[..., period] for name, series in self.values.items()},
            mapped={name: series[..., period] for name, series in self.mapped.items()},
            states={name: series[..., period] for name, series in self.states.items()},
        )

    def relabeled(self, renaming: Mapping[str, str]) -> 'ScenarioPath':
        # Series named `name` in the result is the series named renaming[name] in self
        def pick(series: Dict[str, FloatArray]) -> Dict[str, FloatArray]:
            return {name: series[renaming.get(name, name)] for name in series}
        return ScenarioPath(self.grid, pick(self.values), pick(self.mapped), dict(self.states), dict(self.uniforms), self.seed, self.index)

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        drivers = sorted(self.values)
        regimes = sorted(self.states)
        wr.writerow(["period", "t"] + drivers + [f"{name}_mapped" for name in drivers] + regimes)
        for period in range(self.grid.periods + 1):
            wr.writerow(
                [str(period), format_float(self.grid.times[period])]
                + [format_float(self.values[name][period]) for name in drivers]
                + [format_float(self.mapped[name][period]) for name in drivers]
                + [str(int(self.states[name][period])) for name in regimes]
            )
        return output.getvalue()


## Paths of one chunk stacked along a leading axis
@final
class ScenarioBatch:
    def __init__(self, paths: Sequence[ScenarioPath]):
        if len(paths) == 0:
            raise DriverSpecError("Cannot batch zero scenario paths")
        self.paths: Final = list(paths)
        self.grid: Final = paths[0].grid
        first = paths[0]
        self.values: Final = {name: np.stack([path.values[name] for path in paths]) for name in first.values}
        self.mapped: Final = {name: np.stack([path.mapped[name] for path in paths]) for name in first.mapped}
        self.states: Final = {name: np.stack([path.states[name] for path in paths]) for name in first.states}

    def __len__(self) -> int:
        return len(self.paths)

    def at(self, period: int) -> ScenarioState:
        return ScenarioState(
            values={name: series[:, period] for name, series in self.values.items()},
            mapped={name: series[:, period] for name, series in self.mapped.items()},
            states={name: series[:, period] for name, series in self.states.items()},
        )


@final
@dataclass(frozen=True)
class TiltOverride:
    driver: str
    period: int
    up_probability: float


@final
class ScenarioSampler:
    def __init__(self, spec: ScenarioSpec, overrides: Sequence[TiltOverride] = ()):
        self._spec: Final = spec
        self._grid: Final = spec.grid
        self._drivers: Final = sorted(spec.drivers)
        self._regimes: Final = sorted(spec.regimes)
        periods = spec.grid.periods

        self._ups: Final[Dict[str, FloatArray]] = {}
        self._exponents: Final[Dict[str, FloatArray]] = {}
        self._up_probabilities: Final[Dict[str, FloatArray]] = {}
        for name in self._drivers:
            driver = spec.drivers[name]
            if driver.grid.periods != periods:
                raise DriverSpecError(f"Driver '{name}' is defined on a grid with {driver.grid.periods} periods, expected {periods}")
            params = [lattice_params(driver, period) for period in range(1, periods + 1)]
            self._ups[name] = np.array([p.up for p in params])
            self._exponents[name] = np.log(self._ups[name])
            self._up_probabilities[name] = np.array([p.probability for p in params])

        for override in overrides:
            if override.driver not in spec.drivers:
                raise DriverSpecError(f"Tilt references unknown driver '{override.driver}'")
            if not 1 <= override.period <= periods:
                raise DriverSpecError(f"Tilt period {override.period} outside 1..{periods}")
            if not 0.0 < override.up_probability < 1.0:
                raise DriverSpecError(f"Tilted up-probability must lie in (0,1), got {override.up_probability}")
            self._up_probabilities[override.driver][override.period - 1] = override.up_probability

    @property
    def spec(self) -> ScenarioSpec:
        return self._spec

    def __call__(self, seeds: SeedScheme, index: int) -> ScenarioPath:
        periods = self._grid.periods
        rng = seeds.generator(index, Stream.SCENARIO)
        moves = rng.random((len(self._drivers), periods))
        draws = rng.random((len(self._regimes), periods))

        values: Dict[str, FloatArray] = {}
        mapped: Dict[str, FloatArray] = {}
        for row, name in enumerate(self._drivers):
            driver = self._spec.drivers[name]
            steps = np.where(moves[row] < self._up_probabilities[name], 1, -1)
            exponents = self._exponents[name]
            ups = self._ups[name]
            series = np.empty(periods + 1)
            series[0] = driver.x0
            if np.all(ups == ups[0]):
                # x0 * u^j keeps uniform-grid values exactly on the lattice
                series[1:] = driver.x0 * ups[0] ** np.cumsum(steps)
            else:
                series[1:] = driver.x0 * np.exp(np.cumsum(steps * exponents))
            values[name] = series
            mapped[name] = driver.squash.apply(series)

        states: Dict[str, IntArray] = {}
        uniforms: Dict[str, FloatArray] = {}
        for row, name in enumerate(self._regimes):
            state = np.ones(periods + 1, dtype=np.int64)
            state[1:] = np.where(draws[row] < self._spec.regimes[name].p_state1, 1, 2)
            states[name] = state
            uniforms[name] = np.concatenate([[0.0], draws[row]])

        return ScenarioPath(self._grid, values, mapped, states, uniforms, seeds.base_seed, index)

    def sample_batch(self, seeds: SeedScheme, indices: Sequence[int]) -> ScenarioBatch:
        return ScenarioBatch([self(seeds, index) for index in indices])


def sample_scenario(spec: ScenarioSpec, seeds: SeedScheme, index: int) -> ScenarioPath:
    return ScenarioSampler(spec)(seeds, index)

def tilt_scenario_measure(spec: ScenarioSpec, overrides: Sequence[TiltOverride]) -> ScenarioSampler:
    return ScenarioSampler(spec, overrides)


def constant_scenario(grid: TimeGrid, levels: Mapping[str, float], states: Optional[Mapping[str, int]] = None) -> ScenarioPath:
    values = {name: np.full(grid.periods + 1, float(level)) for name, level in levels.items()}
    discrete = {name: np.full(grid.periods + 1, state, dtype=np.int64) for name, state in (states or {}).items()}
    uniforms = {name: np.zeros(grid.periods + 1) for name in discrete}
    return ScenarioPath(grid, values, dict(values), discrete, uniforms, seed=0, index=0)
