import math
import numpy as np
import pytest

from bubblesim.distribution import evolve
from bubblesim.drivers import ScenarioBatch, ScenarioSampler, constant_scenario
from bubblesim.errors import MisalignedInputError, ModelConfigurationError
from bubblesim.experiment.presets import figure2
from bubblesim.market import (MarketParams, average_execution_price, birth_burst, bubble_step, execution_cost, signed_volume,
                              simulate_market_batch, simulate_market_path)
from bubblesim.types import TimeGrid

LEVELS = {"F": 1.0, "Lambda": 1.0, "M": 1.0, "Theta": 5.0}


def test_execution_cost() -> None:
    assert execution_cost(10.0, 0.5, 2.0) == pytest.approx(22.0)
    assert average_execution_price(10.0, 0.5, 2.0) == pytest.approx(11.0)
    assert execution_cost(10.0, 0.5, 0.0) == 0.0
    assert average_execution_price(10.0, 0.5, 0.0) == 10.0
    with pytest.raises(ModelConfigurationError):
        execution_cost(10.0, 0.0, 1.0)


def test_signed_volume() -> None:
    assert float(signed_volume(5.0, 4 / 9, 1 / 3)) == pytest.approx(5 / 9)
    assert float(signed_volume(5.0, 0.3, 0.3)) == 0.0


def test_bubble_step() -> None:
    assert float(bubble_step(0.5, 0.01, 0.01, 1.0, 1.0, 0.1)) == pytest.approx(0.69995)
    with pytest.raises(MisalignedInputError):
        bubble_step(0.5, 0.01, 0.0, 1.0, 1.0, 0.1)


def test_birth_and_burst() -> None:
    grid = TimeGrid.uniform(4, 1.0)
    events = birth_burst([0.0, 0.2, 0.1, 0.0, -0.1], grid)
    assert (events.birth, events.burst) == (1, 3)
    assert events.birth_time == pytest.approx(0.25)
    assert events.burst_time == pytest.approx(0.75)


def test_burst_detection_modes() -> None:
    grid = TimeGrid.uniform(4, 1.0)
    beta = [0.0, 0.2, -0.1, 0.0, 0.1]
    assert birth_burst(beta, grid).burst == 2
    assert birth_burst(beta, grid, detect_sign_change=False).burst == 3


def test_bubble_that_is_never_born() -> None:
    grid = TimeGrid.uniform(3, 1.0)
    events = birth_burst([0.0, -0.3, -0.1, 0.0], grid)
    assert events.birth is None
    assert events.burst is None
    assert events.birth_time == events.burst_time == 1.0


def test_bubble_that_never_bursts() -> None:
    grid = TimeGrid.uniform(3, 1.0)
    events = birth_burst([0.0, 0.1, 0.2, 0.3], grid)
    assert events.birth == 1
    assert events.burst is None
    assert events.burst_time == 1.0
    with pytest.raises(MisalignedInputError):
        birth_burst([0.0, 0.1], grid)


def test_balanced_opinions_give_no_bubble() -> None:
    grid = TimeGrid.uniform(10, 1.0)
    market = simulate_market_path(np.zeros(11), constant_scenario(grid, LEVELS), MarketParams())
    assert np.all(market.beta == 0.0)
    np.testing.assert_array_equal(market.price, market.fundamental)


def test_initial_volume_convention() -> None:
    grid = TimeGrid.uniform(2, 1.0)
    path = constant_scenario(grid, LEVELS)
    gap = np.full(3, 0.2)
    assert simulate_market_path(gap, path, MarketParams()).beta[1] == 0.0
    assert simulate_market_path(gap, path, MarketParams(x0_zero=True)).beta[1] == pytest.approx(2.0)


def test_bubble_decays_without_new_orders() -> None:
    grid = TimeGrid.uniform(10, 1.0)
    gap = np.concatenate([[0.0, 0.1], np.full(9, 0.2)])
    market = simulate_market_path(gap, constant_scenario(grid, LEVELS), MarketParams(kappa=0.5))
    magnitudes = np.abs(market.beta[2:])
    assert np.all(magnitudes > 0.0)
    assert np.all(np.diff(magnitudes) < 0.0)
    np.testing.assert_allclose(market.beta[3:] / market.beta[2:-1], 0.95)


def test_wealth_follows_the_price_until_the_burst() -> None:
    grid = TimeGrid.uniform(4, 1.0)
    gap = np.array([0.0, 0.1, 0.0, 0.0, 0.0])
    market = simulate_market_path(gap, constant_scenario(grid, LEVELS), MarketParams())
    assert market.beta[1] == pytest.approx(1.0)
    assert market.beta[2] < 0.0
    assert (market.events.birth, market.events.burst) == (1, 2)
    np.testing.assert_allclose(market.wealth[:3], [1.0, 2.0, 1.0])
    assert np.all(np.isnan(market.wealth[3:]))
    np.testing.assert_array_equal(market.fundamental_wealth, market.fundamental)


def test_sampled_market_path() -> None:
    config = figure2()
    model = config.build_model()
    path = ScenarioSampler(config.scenario_spec())(config.seeds(), 0)
    gap = evolve(config.initial(model), model, path).gap
    market = simulate_market_path(gap, path, config.market)

    # Recompute the recursion step by step
    theta = path.mapped["Theta"]
    beta = 0.0
    for n in range(1, 101):
        dt = path.grid.delta(n)
        change = theta[n] * gap[n] - theta[n - 1] * gap[n - 1]
        beta = beta - config.market.kappa * beta * dt + 2.0 * path.mapped["Lambda"][n] * path.mapped["M"][n] * change
        assert market.beta[n] == pytest.approx(beta, rel=1e-12, abs=1e-14)
        assert float(bubble_step(market.beta[n - 1], config.market.kappa, dt, path.mapped["Lambda"][n],
                                 path.mapped["M"][n], market.volume[n] - market.volume[n - 1])) == pytest.approx(
            market.beta[n], rel=1e-12, abs=1e-14)
    np.testing.assert_array_equal(market.beta, market.price - market.fundamental)
    assert all(math.isfinite(value) for value in market.price)


def test_batch_matches_single_paths() -> None:
    config = figure2()
    model = config.build_model()
    sampler = ScenarioSampler(config.scenario_spec())
    paths = [sampler(config.seeds(), index) for index in range(3)]
    gaps = np.stack([evolve(config.initial(model), model, path).gap for path in paths])
    batch = simulate_market_batch(gaps, ScenarioBatch(paths), config.market)
    for row, path in enumerate(paths):
        single = simulate_market_path(gaps[row], path, config.market)
        np.testing.assert_allclose(batch.beta[row], single.beta, rtol=0.0, atol=1e-15)


def test_inputs_are_checked() -> None:
    grid = TimeGrid.uniform(4, 1.0)
    with pytest.raises(MisalignedInputError):
        simulate_market_path(np.zeros(3), constant_scenario(grid, LEVELS), MarketParams())
    with pytest.raises(ModelConfigurationError):
        simulate_market_path(np.zeros(5), constant_scenario(grid, {"F": 1.0}), MarketParams())
    with pytest.raises(ModelConfigurationError):
        MarketParams(kappa=-1.0)


def test_market_csv() -> None:
    grid = TimeGrid.uniform(2, 1.0)
    market = simulate_market_path(np.zeros(3), constant_scenario(grid, LEVELS), MarketParams())
    lines = market.to_csv().splitlines()
    assert lines[0] == "period,t,F,S,beta,X,p1_minus_p3"
    assert lines[1] == "0,0,1,1,0,0,0"


def test_events_are_read_from_the_stored_bubble(monkeypatch: pytest.MonkeyPatch) -> None:
    grid = TimeGrid.uniform(3, 1.0)
    # Below the rounding of S = F + beta at F = 1
    tiny = np.array([0.0, 1e-17, 1e-17, 0.0])
    monkeypatch.setattr("bubblesim.market._bubble_series", lambda *args: (np.zeros(4), tiny))
    market = simulate_market_path(np.zeros(4), constant_scenario(grid, LEVELS), MarketParams())
    assert np.all(market.beta == 0.0)
    assert market.events == birth_burst(market.beta, grid)
    assert market.events.birth is None
