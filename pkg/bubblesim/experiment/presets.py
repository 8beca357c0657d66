from dataclasses import replace
from typing import Callable, Dict, Final, List

from bubblesim.errors import ConfigError
from bubblesim.experiment.config import DriverConfig, ExperimentConfig, GridConfig, ModelConfig, RegimeConfig, TiltConfig
from bubblesim.market import MarketParams
from bubblesim.models.arbitrage import ArbitrageModelParams, PeriodParams, RegimeParams
from bubblesim.models.simulation_study import eta_driver, varsigma_driver

SYMMETRIC_START: Final = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
OPTIMISTIC_START: Final = [4.0 / 9.0, 2.0 / 9.0, 1.0 / 3.0]


def simulation_study_drivers() -> Dict[str, DriverConfig]:
    """
    Lattice drivers of the simulation study: resiliency and illiquidity start at 1 with
    volatility 0.3, the order size at 5 with volatility 0.2, the matching intensity at 0.5 with
    volatility 0.2, all eta and varsigma intensities at 0.2 with volatility 0.4. Order size and
    intensities are read through (2/pi) arctan. The fundamental price is held constant.
    """
    drivers = {
        "F": DriverConfig(x0=1.0, sigma=0.0),
        "Lambda": DriverConfig(x0=1.0, sigma=0.3),
        "M": DriverConfig(x0=1.0, sigma=0.3),
        "Theta": DriverConfig(x0=5.0, sigma=0.2, squash="arctan"),
        "theta": DriverConfig(x0=0.5, sigma=0.2, squash="arctan"),
    }
    # Diagonal intensities are drawn as well but never read
    for i in range(1, 4):
        for j in range(1, 4):
            drivers[eta_driver(i, j)] = DriverConfig(x0=0.2, sigma=0.4, squash="arctan")
            drivers[varsigma_driver(i, j)] = DriverConfig(x0=0.2, sigma=0.4, squash="arctan")
    return drivers


def _simulation_study(paths: int, fractions: List[float], output_dir: str) -> ExperimentConfig:
    return ExperimentConfig(
        grid=GridConfig(periods=100, horizon=1.0),
        initial_fractions=list(fractions),
        model=ModelConfig(name="simulation-study"),
        drivers=simulation_study_drivers(),
        market=MarketParams(kappa=0.01),
        paths=paths,
        seed=20160708,
        output_dir=output_dir,
    )


def figure1() -> ExperimentConfig:
    # A handful of single trajectories from the symmetric start
    return replace(_simulation_study(5, SYMMETRIC_START, "figure1"), write_trajectories=True, chunk_size=5)


def figure2() -> ExperimentConfig:
    return _simulation_study(100_000, SYMMETRIC_START, "figure2")


def pessimistic_tilt() -> List[TiltConfig]:
    # First step only: optimists turn pessimistic more often, pessimists turn optimistic less often
    return [
        TiltConfig(eta_driver(1, 3), 1, 0.95),
        TiltConfig(varsigma_driver(1, 3), 1, 0.95),
        TiltConfig(eta_driver(3, 1), 1, 0.1),
        TiltConfig(varsigma_driver(3, 1), 1, 0.1),
    ]


def figure3() -> ExperimentConfig:
    return replace(_simulation_study(1_000_000, OPTIMISTIC_START, "figure3"), tilt=pessimistic_tilt())


def arbitrage() -> ExperimentConfig:
    """
    Two-state model whose state-2 parameters are rebuilt at every node so that p1 - p3 and the
    price are martingales under the constructed measure. Order size, resiliency and illiquidity
    are used without squashing and kappa is zero.
    """
    state1 = RegimeParams(theta=0.2, eta_13=0.05, eta_31=0.1, varsigma_13=0.02, varsigma_31=0.1)
    periods = 100
    return ExperimentConfig(
        grid=GridConfig(periods=periods, horizon=1.0),
        initial_fractions=[0.5, 0.2, 0.3],
        model=ModelConfig(name="arbitrage", arbitrage=ArbitrageModelParams.constant(periods, PeriodParams(state1=state1))),
        drivers={
            "F": DriverConfig(x0=1.0, sigma=0.0),
            "Lambda": DriverConfig(x0=1.0, sigma=0.3),
            "M": DriverConfig(x0=1.0, sigma=0.3),
            "Theta": DriverConfig(x0=5.0, sigma=0.2),
        },
        regimes={"regime": RegimeConfig(p_state1=0.5)},
        market=MarketParams(kappa=0.0),
        paths=100,
        seed=20160708,
        output_dir="arbitrage",
    )


PRESETS: Final[Dict[str, Callable[[], ExperimentConfig]]] = {
    "figure1": figure1,
    "figure2": figure2,
    "figure3": figure3,
    "arbitrage": arbitrage,
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}")
    return PRESETS[name]()
