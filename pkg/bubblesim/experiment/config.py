from dataclasses import dataclass, field
from dataclasses_json import DataClassJsonMixin
from typing import Any, Dict, Final, List, Optional, final
import logging
import math
import yaml

from bubblesim.drivers import BinomialDriverSpec, RegimeSpec, ScenarioSpec, SeedScheme, Squash, TiltOverride, UpFactorConvention
from bubblesim.errors import BubbleSimError, ConfigError
from bubblesim.experiment.parse import parse_bool, parse_dict_str_any, parse_float, parse_float_list, parse_int, parse_str, reject_unknown_keys
from bubblesim.market import MarketParams
from bubblesim.models import initial_distribution
from bubblesim.models.arbitrage import ArbitrageModel, ArbitrageModelParams, PeriodParams
from bubblesim.models.base import TransitionModel
from bubblesim.models.example1 import Example1Model, Example1Params
from bubblesim.models.memory import MemoryModel, MemoryParams
from bubblesim.models.sentiment import SentimentFunctions
from bubblesim.models.simulation_study import SimulationStudyModel
from bubblesim.types import ExtendedTypeDistribution, TimeGrid, Tolerances, ensure_valid_distribution

ENGINES: Final = ("distribution", "population")
MODEL_NAMES: Final = ("simulation-study", "example1", "arbitrage", "memory")


@final
@dataclass(frozen=True)
class GridConfig(DataClassJsonMixin):
    periods: int = 100
    horizon: float = 1.0

    def time_grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.periods, float(self.horizon))


@final
@dataclass(frozen=True)
class DriverConfig(DataClassJsonMixin):
    x0: float
    sigma: float
    squash: str = "none"

    def spec(self, grid: TimeGrid, convention: UpFactorConvention) -> BinomialDriverSpec:
        return BinomialDriverSpec(float(self.x0), float(self.sigma), grid, convention, Squash(self.squash))


@final
@dataclass(frozen=True)
class RegimeConfig(DataClassJsonMixin):
    p_state1: float = 0.5


@final
@dataclass(frozen=True)
class TiltConfig(DataClassJsonMixin):
    driver: str
    period: int
    up_probability: float

    def override(self) -> TiltOverride:
        return TiltOverride(self.driver, self.period, float(self.up_probability))


## Selects one transition model. Only the section named by `name` is read; `sentiment`
## applies to the simulation-study and arbitrage models, the others carry their own.
@final
@dataclass(frozen=True)
class ModelConfig(DataClassJsonMixin):
    name: str = "simulation-study"
    sentiment: SentimentFunctions = field(default_factory=SentimentFunctions)
    theta_driver: str = "theta"
    regime: str = "regime"
    example1: Optional[Example1Params] = None
    arbitrage: Optional[ArbitrageModelParams] = None
    memory: Optional[MemoryParams] = None

    def build(self, periods: int, tolerances: Tolerances) -> TransitionModel:
        if self.name == "simulation-study":
            return SimulationStudyModel(self.sentiment, self.theta_driver, tolerances)
        if self.name == "example1":
            return Example1Model(self.example1, tolerances)
        if self.name == "arbitrage":
            params = self.arbitrage or ArbitrageModelParams.constant(periods, PeriodParams())
            if len(params.periods) != periods:
                raise ConfigError(f"Arbitrage model has parameters for {len(params.periods)} periods, grid has {periods}")
            return ArbitrageModel(params, self.sentiment, self.regime, tolerances)
        if self.name == "memory":
            return MemoryModel(self.memory, tolerances)
        raise ConfigError(f"Unknown model '{self.name}', expected one of {MODEL_NAMES}")


## One experiment. Every field has the meaning of the key with the same name in the YAML file.
@final
@dataclass(frozen=True)
class ExperimentConfig(DataClassJsonMixin):
    grid: GridConfig = field(default_factory=GridConfig)
    engine: str = "distribution"
    population_size: int = 100_000
    initial_fractions: List[float] = field(default_factory=lambda: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
    # Full K x (K+1) matrix; replaces initial_fractions when set
    initial_distribution: Optional[List[List[float]]] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    drivers: Dict[str, DriverConfig] = field(default_factory=dict)
    regimes: Dict[str, RegimeConfig] = field(default_factory=dict)
    market: MarketParams = field(default_factory=MarketParams)
    paths: int = 1
    seed: int = 0
    output_dir: str = "output"
    up_factor: str = "linear"
    chunk_size: int = 1000
    write_trajectories: bool = False
    antithetic: bool = False
    # Checks every per-period table of the distribution engine
    validate_tables: bool = False
    tilt: List[TiltConfig] = field(default_factory=list)
    tolerances: Tolerances = field(default_factory=Tolerances)

    def time_grid(self) -> TimeGrid:
        return self.grid.time_grid()

    def build_model(self) -> TransitionModel:
        return self.model.build(self.grid.periods, self.tolerances)

    def scenario_spec(self) -> ScenarioSpec:
        grid = self.time_grid()
        convention = UpFactorConvention(self.up_factor)
        return ScenarioSpec(
            grid,
            drivers={name: driver.spec(grid, convention) for name, driver in self.drivers.items()},
            regimes={name: RegimeSpec(float(regime.p_state1)) for name, regime in self.regimes.items()},
        )

    def seeds(self) -> SeedScheme:
        return SeedScheme(self.seed)

    def tilt_overrides(self) -> List[TiltOverride]:
        return [tilt.override() for tilt in self.tilt]

    def initial(self, model: TransitionModel) -> ExtendedTypeDistribution:
        if self.initial_distribution is not None:
            distribution = ExtendedTypeDistribution(self.initial_distribution)
            if distribution.num_types != model.num_types:
                raise ConfigError(f"Initial distribution has {distribution.num_types} types, model has {model.num_types}")
        else:
            distribution = initial_distribution(model, self.initial_fractions)
        ensure_valid_distribution(distribution, self.tolerances)
        return distribution

    def validate(self) -> None:
        """
        Checks everything a run needs before any trajectory starts: value ranges, that every
        driver and discrete component the model and the market read is defined, and that the
        initial distribution is valid. Raises ConfigError.
        """
        try:
            self._validate()
        except ConfigError:
            raise
        except (BubbleSimError, ValueError) as error:
            raise ConfigError(str(error)) from error

    def _validate(self) -> None:
        if self.grid.periods < 1:
            raise ConfigError(f"grid.periods must be positive, got {self.grid.periods}")
        if not self.grid.horizon > 0.0:
            raise ConfigError(f"grid.horizon must be positive, got {self.grid.horizon}")
        if self.engine not in ENGINES:
            raise ConfigError(f"Unknown engine '{self.engine}', expected one of {ENGINES}")
        if self.engine == "population" and self.population_size < 1:
            raise ConfigError(f"population_size must be positive, got {self.population_size}")
        if self.paths < 1:
            raise ConfigError(f"paths must be at least 1, got {self.paths}")
        if self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be at least 1, got {self.chunk_size}")
        if self.up_factor not in [convention.value for convention in UpFactorConvention]:
            raise ConfigError(f"Unknown up_factor '{self.up_factor}'")
        for name, driver in self.drivers.items():
            if driver.squash not in [squash.value for squash in Squash]:
                raise ConfigError(f"Driver '{name}' has unknown squash '{driver.squash}'")
        if self.initial_distribution is None:
            total = math.fsum(self.initial_fractions)
            if abs(total - 1.0) > self.tolerances.normalization or min(self.initial_fractions) < 0.0:
                raise ConfigError(f"initial_fractions must be non-negative and sum to 1, got {self.initial_fractions} (sum {total!r})")
        self.seeds()

        model = self.build_model()
        spec = self.scenario_spec()
        for name in model.required_drivers() + self.market.drivers():
            if name not in spec.drivers:
                raise ConfigError(f"Driver '{name}' is used but not defined")
        for name in model.required_regimes():
            if name not in spec.regimes:
                raise ConfigError(f"Discrete component '{name}' is used but not defined")
        for tilt in self.tilt:
            if tilt.driver not in spec.drivers:
                raise ConfigError(f"Tilt references unknown driver '{tilt.driver}'")
            if not 1 <= tilt.period <= self.grid.periods:
                raise ConfigError(f"Tilt period {tilt.period} outside 1..{self.grid.periods}")
        if self.antithetic and not isinstance(model, SimulationStudyModel):
            raise ConfigError("antithetic runs need the simulation-study model")
        self.initial(model)


_TOP_LEVEL_KEYS: Final = [
    "grid", "engine", "population_size", "initial_fractions", "initial_distribution", "model", "drivers", "regimes",
    "market", "paths", "seed", "output_dir", "up_factor", "chunk_size", "write_trajectories", "antithetic",
    "validate_tables", "tilt",
    "tolerances",
]


def _check_raw(raw: Dict[str, Any]) -> None:
    reject_unknown_keys(raw, _TOP_LEVEL_KEYS, "config")
    for key in ["population_size", "paths", "seed", "chunk_size"]:
        if key in raw:
            parse_int(raw[key], key)
    for key in ["engine", "output_dir", "up_factor"]:
        if key in raw:
            parse_str(raw[key], key)
    for key in ["write_trajectories", "antithetic", "validate_tables"]:
        if key in raw:
            parse_bool(raw[key], key)
    if "initial_fractions" in raw:
        parse_float_list(raw["initial_fractions"], "initial_fractions")
    if raw.get("initial_distribution") is not None:
        rows = raw["initial_distribution"]
        if not isinstance(rows, list):
            raise ConfigError(f"Tried to read {rows!r} as matrix for 'initial_distribution'")
        for index, row in enumerate(rows):
            parse_float_list(row, f"initial_distribution[{index}]")
    if "grid" in raw:
        grid = parse_dict_str_any(raw["grid"], "grid")
        reject_unknown_keys(grid, ["periods", "horizon"], "grid")
        if "periods" in grid:
            parse_int(grid["periods"], "grid.periods")
        if "horizon" in grid:
            parse_float(grid["horizon"], "grid.horizon")
    for name, driver in parse_dict_str_any(raw.get("drivers", {}), "drivers").items():
        values = parse_dict_str_any(driver, f"drivers.{name}")
        reject_unknown_keys(values, ["x0", "sigma", "squash"], f"drivers.{name}")
        for key in ["x0", "sigma"]:
            if key not in values:
                raise ConfigError(f"drivers.{name} needs '{key}'")
            parse_float(values[key], f"drivers.{name}.{key}")
        if "squash" in values:
            parse_str(values["squash"], f"drivers.{name}.squash")
    for name, regime in parse_dict_str_any(raw.get("regimes", {}), "regimes").items():
        values = parse_dict_str_any(regime, f"regimes.{name}")
        reject_unknown_keys(values, ["p_state1"], f"regimes.{name}")
        if "p_state1" in values:
            parse_float(values["p_state1"], f"regimes.{name}.p_state1")
    if "market" in raw:
        market = parse_dict_str_any(raw["market"], "market")
        reject_unknown_keys(market, list(MarketParams.__dataclass_fields__), "market")
        for key in ["kappa", "order_size_scale"]:
            if key in market:
                parse_float(market[key], f"market.{key}")
    if "model" in raw:
        model = parse_dict_str_any(raw["model"], "model")
        reject_unknown_keys(model, list(ModelConfig.__dataclass_fields__), "model")
        if "name" in model:
            parse_str(model["name"], "model.name")


def config_from_dict(raw: Any) -> ExperimentConfig:
    values = parse_dict_str_any(raw if raw is not None else {}, "config")
    _check_raw(values)
    try:
        config = ExperimentConfig.from_dict(values)
    except BubbleSimError as error:
        raise ConfigError(str(error)) from error
    except (KeyError, TypeError, ValueError) as error:
        raise ConfigError(f"Malformed config: {error}") from error
    config.validate()
    return config


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, 'r') as file:
            raw = yaml.safe_load(file)
    except OSError as error:
        raise ConfigError(f"Cannot read config file {path}: {error}") from error
    except yaml.YAMLError as error:
        raise ConfigError(f"Config file {path} is not valid YAML: {error}") from error
    config = config_from_dict(raw)
    logging.info(f"Loaded config from {path}")
    return config


def dump_config(config: ExperimentConfig) -> str:
    result: str = yaml.safe_dump(config.to_dict(encode_json=False), sort_keys=False)
    return result
