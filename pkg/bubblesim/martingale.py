from dataclasses import dataclass, replace
from dataclasses_json import DataClassJsonMixin
from io import StringIO
from itertools import product
from typing import Callable, Dict, Final, List, Optional, Tuple, final
import csv
import logging
import math
import numpy as np

from bubblesim.distribution import gamma_step
from bubblesim.drivers import ScenarioSampler, ScenarioSpec, ScenarioState, SeedScheme, Stream, lattice_params
from bubblesim.errors import DegenerateMeasureError, InvalidDistributionError, ModelConfigurationError, SearchFailedError
from bubblesim.market import MarketParams
from bubblesim.models.arbitrage import ArbitrageModel, PeriodParams, RegimeParams
from bubblesim.models.sentiment import SentimentFunctions
from bubblesim.types import DEFAULT_TOLERANCES, ExtendedTypeDistribution, FloatArray, Tolerances, format_float

# a1 and a2 closer than this do not determine a measure
DEGENERACY_TOLERANCE: Final = 1e-14
THETA_MAX: Final = 0.5
BISECTION_STEPS: Final = 60


def _unmatched_fractions(prior: ExtendedTypeDistribution) -> FloatArray:
    if prior.num_types != 3:
        raise InvalidDistributionError(f"Immediate break-up drift needs 3 types, got {prior.num_types}")
    if np.any(np.abs(prior.matched) > DEFAULT_TOLERANCES.normalization):
        raise InvalidDistributionError("Immediate break-up drift needs a distribution without matched agents")
    return np.array(prior.unmatched)


## Post-mutation unmatched masses F, post-meeting change probabilities c[i, l] and the drift
## a = Gamma_1J - Gamma_3J of one regime, all at one prior.
@final
@dataclass(frozen=True)
class DriftTerms:
    masses: FloatArray
    change: FloatArray
    theta: float
    drift: float


def _masses(regime: RegimeParams, sentiment: SentimentFunctions, p: FloatArray) -> FloatArray:
    p1, p2, p3 = (float(v) for v in p)
    x = p1 - p3

    def f(i: int, j: int) -> float:
        return float(sentiment.f_ij(x, i, j))

    f1 = p2 * (regime.eta_21 + f(2, 1)) + p3 * (regime.eta_31 + f(3, 1)) + p1 * (1.0 - f(1, 2) - regime.eta_13 - f(1, 3))
    f3 = p2 * (regime.eta_23 + f(2, 3)) + p1 * (regime.eta_13 + f(1, 3)) + p3 * (1.0 - f(3, 2) - regime.eta_31 - f(3, 1))
    f2 = p1 * f(1, 2) + p3 * f(3, 2) + p2 * (1.0 - regime.eta_21 - f(2, 1) - regime.eta_23 - f(2, 3))
    return np.array([f1, f2, f3])


def _change(regime: RegimeParams, sentiment: SentimentFunctions, gap: float) -> FloatArray:
    change = sentiment.g_matrix(gap)
    change[0, 2] += regime.varsigma_13
    change[2, 0] += regime.varsigma_31
    return change


def drift_terms(regime: RegimeParams, sentiment: SentimentFunctions, p: FloatArray) -> DriftTerms:
    masses = _masses(regime, sentiment, p)
    f1, f2, f3 = (float(v) for v in masses)
    c = _change(regime, sentiment, f1 - f3)
    theta = regime.theta
    drift = ((1.0 - theta) * (f1 - f3)
             + theta * (f1 * f1 - f3 * f3)
             + theta * (f1 * f2 * (1.0 + c[1, 0] - c[0, 1]) - f3 * f2 * (1.0 + c[1, 2] - c[2, 1]))
             + 2.0 * theta * f1 * f3 * (c[2, 0] - c[0, 2]))
    return DriftTerms(masses, c, theta, drift)


def _regime(model: ArbitrageModel, state: int, period: int) -> RegimeParams:
    return model.params.at(period).select(state)


def eval_F13(model: ArbitrageModel, state: int, period: int, prior: ExtendedTypeDistribution) -> Tuple[float, float]:
    masses = _masses(_regime(model, state, period), model.sentiment, _unmatched_fractions(prior))
    return float(masses[0]), float(masses[2])


def eval_a(model: ArbitrageModel, state: int, period: int, prior: ExtendedTypeDistribution) -> float:
    return drift_terms(_regime(model, state, period), model.sentiment, _unmatched_fractions(prior)).drift


def immediate_breakup_gamma(model: ArbitrageModel, state: int, period: int, prior: ExtendedTypeDistribution) -> FloatArray:
    """
    Unmatched masses (Gamma_1J, Gamma_2J, Gamma_3J) at the end of the period when every pair
    breaks up at once: Gamma_iJ = F_i + theta F_i sum_l F_l (c_li - c_il).
    """
    terms = drift_terms(_regime(model, state, period), model.sentiment, _unmatched_fractions(prior))
    f = terms.masses
    c = terms.change
    result: FloatArray = f + terms.theta * f * (f @ c - c @ f)
    return result


@final
@dataclass(frozen=True)
class QSolution:
    q: float
    a1: float
    a2: float
    gap: float
    feasible: bool
    degenerate: bool = False

    @property
    def residual(self) -> float:
        return self.q * self.a1 + (1.0 - self.q) * self.a2 - self.gap


def q_from_drifts(gap: float, a1: float, a2: float) -> QSolution:
    if abs(a1 - a2) < DEGENERACY_TOLERANCE:
        raise DegenerateMeasureError(f"a1 = {a1:.15g} and a2 = {a2:.15g} coincide, no unique state probability")
    q = (gap - a2) / (a1 - a2)
    return QSolution(q, a1, a2, gap, 0.0 < q < 1.0)


def solve_q(model: ArbitrageModel, period: int, prior: ExtendedTypeDistribution) -> QSolution:
    p = _unmatched_fractions(prior)
    a1 = drift_terms(_regime(model, 1, period), model.sentiment, p).drift
    a2 = drift_terms(_regime(model, 2, period), model.sentiment, p).drift
    return q_from_drifts(float(p[0] - p[2]), a1, a2)


@final
@dataclass(frozen=True)
class FeasibleConstruction:
    params: PeriodParams
    solution: QSolution


# State-2 parameters pushing towards pessimists (a below the gap) or optimists (a above it)
def _pessimistic(theta: float) -> RegimeParams:
    return RegimeParams(theta=theta, eta_13=0.5, eta_23=0.5, varsigma_13=0.5)

def _optimistic(theta: float, p1: float, p3: float) -> RegimeParams:
    # eta_13 / eta_31 stays below p3 / p1
    return RegimeParams(theta=theta, eta_31=0.5, eta_13=min(0.5, 0.25 * p3 / p1), varsigma_31=0.5)


def _search_theta(keeps_side: Callable[[float], bool], theta_max: float) -> float:
    if not keeps_side(0.0):
        raise SearchFailedError("No admissible theta: the bracket fails already at theta = 0")
    lo, hi = 0.0, theta_max
    if keeps_side(hi):
        lo = hi
    else:
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if keeps_side(mid):
                lo = mid
            else:
                hi = mid
    if lo == 0.0:
        raise SearchFailedError(f"Theta search collapsed to the bracket [0, {hi:.3g}]")
    return 0.5 * lo


def _mirror(p: FloatArray) -> FloatArray:
    mirrored: FloatArray = p[::-1].copy()
    return mirrored


def _construct(p: FloatArray, sentiment: SentimentFunctions, state1: RegimeParams, theta_max: float) -> FeasibleConstruction:
    # Requires p1 > p3
    gap = float(p[0] - p[2])
    a1 = drift_terms(state1, sentiment, p).drift
    if abs(a1 - gap) < DEGENERACY_TOLERANCE:
        raise SearchFailedError(f"State 1 has zero drift excess at gap {gap:.15g}; no interior state probability")
    optimistic = a1 < gap
    p1, p3 = float(p[0]), float(p[2])

    def make(theta: float) -> RegimeParams:
        return _optimistic(theta, p1, p3) if optimistic else _pessimistic(theta)

    def keeps_side(theta: float) -> bool:
        drift = drift_terms(make(theta), sentiment, p).drift
        return drift > gap if optimistic else drift < gap

    theta = _search_theta(keeps_side, theta_max)
    state2 = make(theta)
    a2 = drift_terms(state2, sentiment, p).drift
    solution = q_from_drifts(gap, a1, a2)
    if not solution.feasible:
        raise SearchFailedError(f"Constructed parameters give q = {solution.q:.15g} outside (0,1)")
    return FeasibleConstruction(PeriodParams(state1, state2), solution)


def construct_feasible_params(period: int, prior: ExtendedTypeDistribution, sentiment: Optional[SentimentFunctions] = None,
                              state1: Optional[RegimeParams] = None, theta_max: float = THETA_MAX) -> FeasibleConstruction:
    """
    Two-state parameters for one period under which p1 - p3 has zero expected change.
    State 1 keeps `state1`; state 2 moves agents towards the other side of the current
    gap, with theta found by bisection. A balanced prior returns zero parameters and q = 1/2.
    """
    sentiment = sentiment or SentimentFunctions()
    state1 = state1 or RegimeParams()
    p = _unmatched_fractions(prior)
    gap = float(p[0] - p[2])
    if abs(gap) < DEGENERACY_TOLERANCE:
        zero = RegimeParams()
        drift = drift_terms(zero, sentiment, p).drift
        return FeasibleConstruction(PeriodParams(zero, zero), QSolution(0.5, drift, drift, gap, True, degenerate=True))
    if gap > 0:
        construction = _construct(p, sentiment, state1, theta_max)
    else:
        mirrored = _construct(_mirror(p), sentiment, state1.mirrored(), theta_max)
        solution = mirrored.solution
        construction = FeasibleConstruction(
            mirrored.params.mirrored(),
            QSolution(solution.q, -solution.a1, -solution.a2, gap, solution.feasible))
    logging.debug(f"Period {period}: q = {construction.solution.q:.6g} at gap {gap:.6g}")
    return construction


## Per-period probability q(k) of state 1; all other driver laws stay as under P.
@final
@dataclass(frozen=True)
class MeasureSpec(DataClassJsonMixin):
    q: List[float]

    def __post_init__(self) -> None:
        for period, value in enumerate(self.q, start=1):
            if not 0.0 < value < 1.0:
                raise ModelConfigurationError(f"q({period}) = {value} is not in (0,1); the measure would not be equivalent")

    @staticmethod
    def physical(spec: ScenarioSpec, regime: str) -> 'MeasureSpec':
        return MeasureSpec([spec.regimes[regime].p_state1] * spec.grid.periods)


@final
@dataclass(frozen=True)
class PeriodCheck:
    trajectory: int
    period: int
    a1: float
    a2: float
    q: float
    residual: float
    feasible: bool
    mc_mean: float
    mc_stderr: float


@final
@dataclass(frozen=True)
class MartingaleReport:
    checks: List[PeriodCheck]
    pooled_mean: float
    pooled_stderr: float
    max_abs_residual: float
    analytic_tolerance: float = 1e-12
    z_limit: float = 4.0

    @property
    def pooled_z(self) -> float:
        return 0.0 if self.pooled_stderr == 0.0 else self.pooled_mean / self.pooled_stderr

    @property
    def analytic_passed(self) -> bool:
        return self.max_abs_residual <= self.analytic_tolerance

    @property
    def monte_carlo_passed(self) -> bool:
        return abs(self.pooled_z) <= self.z_limit

    @property
    def passed(self) -> bool:
        return self.analytic_passed and self.monte_carlo_passed

    def max_node_z(self) -> float:
        values = [abs(check.mc_mean) / check.mc_stderr for check in self.checks if check.mc_stderr > 0.0]
        return max(values, default=0.0)

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        wr.writerow(["trajectory", "k", "a1", "a2", "q", "residual", "feasible", "mc_mean", "mc_stderr"])
        for check in self.checks:
            wr.writerow([check.trajectory, check.period] + [format_float(v) for v in (check.a1, check.a2, check.q, check.residual)]
                        + [int(check.feasible), format_float(check.mc_mean), format_float(check.mc_stderr)])
        return output.getvalue()


@final
@dataclass(frozen=True)
class _Node:
    prior: ExtendedTypeDistribution
    levels: Dict[str, float]
    previous_volume: float


@final
class MartingaleVerifier:
    """
    Follows scenario paths under the measure Q and checks, period by period, that the expected
    change of p1 - p3 (analytically) and of the price S (by resampling the next step from the
    node reached) vanish. Without a MeasureSpec, state-2 parameters and q(k) are constructed at
    every node from the realised prior. The bubble decay kappa is zero here.
    """

    def __init__(self, model: ArbitrageModel, spec: ScenarioSpec, market: MarketParams,
                 measure: Optional[MeasureSpec] = None, tolerances: Tolerances = DEFAULT_TOLERANCES):
        if model.regime not in spec.regimes:
            raise ModelConfigurationError(f"Scenario has no discrete component '{model.regime}'")
        for name in market.drivers():
            if name not in spec.drivers:
                raise ModelConfigurationError(f"Scenario has no driver '{name}'")
        if measure is not None and len(measure.q) != spec.grid.periods:
            raise ModelConfigurationError(f"Measure has {len(measure.q)} periods, grid has {spec.grid.periods}")
        self._model: Final = model
        self._spec: Final = spec
        self._market: Final = replace(market, kappa=0.0)
        self._measure: Final = measure
        self._tolerances: Final = tolerances
        self._sampler: Final = ScenarioSampler(spec)
        self._lattice: Final = {
            name: [lattice_params(spec.drivers[name], period) for period in range(1, spec.grid.periods + 1)]
            for name in market.drivers()
        }

    def _period_model(self, period: int, prior: ExtendedTypeDistribution) -> Tuple[ArbitrageModel, QSolution]:
        if self._measure is None:
            base = self._model.params.at(period)
            construction = construct_feasible_params(period, prior, self._model.sentiment, base.state1)
            params = self._model.params.with_period(period, construction.params)
            return self._model.with_params(params), construction.solution
        p = _unmatched_fractions(prior)
        a1 = drift_terms(_regime(self._model, 1, period), self._model.sentiment, p).drift
        a2 = drift_terms(_regime(self._model, 2, period), self._model.sentiment, p).drift
        q = self._measure.q[period - 1]
        return self._model, QSolution(q, a1, a2, float(p[0] - p[2]), True)

    def _next_state(self, model: ArbitrageModel, prior: ExtendedTypeDistribution, period: int, state: int) -> ExtendedTypeDistribution:
        scenario = ScenarioState(values={}, mapped={}, states={model.regime: np.array(state)})
        return gamma_step(prior, model, scenario, period, self._tolerances).end

    def _price_changes(self, node: _Node, period: int, solution: QSolution, rng: np.random.Generator, samples: int) -> FloatArray:
        market = self._market
        levels = {}
        for name in market.drivers():
            lattice = self._lattice[name][period - 1]
            up = rng.random(samples) < lattice.probability
            levels[name] = node.levels[name] * np.where(up, lattice.up, lattice.down)
        state1 = rng.random(samples) < solution.q
        gap = np.where(state1, solution.a1, solution.a2)
        squash = {name: self._spec.drivers[name].squash for name in market.drivers()}
        mapped = {name: squash[name].apply(values) for name, values in levels.items()}
        volume = mapped[market.order_size] * market.order_size_scale * gap
        beta_change = 2.0 * mapped[market.resiliency] * mapped[market.illiquidity] * (volume - node.previous_volume)
        fundamental_change = mapped[market.fundamental] - float(squash[market.fundamental].apply(np.array(node.levels[market.fundamental])))
        changes: FloatArray = fundamental_change + beta_change
        return changes

    def verify(self, initial: ExtendedTypeDistribution, paths: int, seeds: SeedScheme, resamples: int = 100_000) -> MartingaleReport:
        periods = self._spec.grid.periods
        per_node = max(2, resamples // max(1, paths * periods))
        checks: List[PeriodCheck] = []
        total = 0.0
        total_sq = 0.0
        count = 0
        market = self._market
        for trajectory in range(paths):
            path = self._sampler(seeds, trajectory)
            rng = seeds.generator(trajectory, Stream.RESAMPLE)
            gap0 = float(initial.unmatched[0] - initial.unmatched[2])
            x0 = 0.0 if market.x0_zero else float(path.mapped[market.order_size][0]) * market.order_size_scale * gap0
            node = _Node(initial, {name: float(path.values[name][0]) for name in market.drivers()}, x0)
            for period in range(1, periods + 1):
                model, solution = self._period_model(period, node.prior)
                changes = self._price_changes(node, period, solution, rng, per_node)
                mean = float(changes.mean())
                stderr = float(changes.std(ddof=1) / math.sqrt(per_node))
                total += float(changes.sum())
                total_sq += float((changes ** 2).sum())
                count += per_node
                checks.append(PeriodCheck(trajectory, period, solution.a1, solution.a2, solution.q, solution.residual,
                                          solution.feasible, mean, stderr))
                # The realised state reuses the path's uniform draw, compared against q(k)
                state = 1 if path.uniforms[model.regime][period] < solution.q else 2
                prior = self._next_state(model, node.prior, period, state)
                gap = float(prior.unmatched[0] - prior.unmatched[2])
                volume = float(path.mapped[market.order_size][period]) * market.order_size_scale * gap
                node = _Node(prior, {name: float(path.values[name][period]) for name in market.drivers()}, volume)
        pooled_mean = total / count
        variance = max(total_sq / count - pooled_mean ** 2, 0.0) * count / max(count - 1, 1)
        report = MartingaleReport(checks, pooled_mean, math.sqrt(variance / count),
                                  max(abs(check.residual) for check in checks))
        if not report.analytic_passed:
            logging.warning(f"Expected change of p1 - p3 is not zero under the measure: max residual {report.max_abs_residual:.3g}")
        return report

    def enumerate_exact(self, initial: ExtendedTypeDistribution) -> float:
        """
        Largest |E^Q[S^k - S^(k-1) | node]| over every node of the full scenario tree.
        Only drivers with positive volatility branch; at most three may, on at most four periods.
        """
        periods = self._spec.grid.periods
        market = self._market
        branching = [name for name in market.drivers() if self._spec.drivers[name].sigma > 0.0]
        if periods > 4 or len(branching) > 3:
            raise ModelConfigurationError(
                f"Exact enumeration supports at most 4 periods and 3 random drivers, got {periods} and {len(branching)}")
        squash = {name: self._spec.drivers[name].squash for name in market.drivers()}
        gap0 = float(initial.unmatched[0] - initial.unmatched[2])
        levels0 = {name: self._spec.drivers[name].x0 for name in market.drivers()}
        mapped0 = float(squash[market.order_size].apply(np.array(levels0[market.order_size])))
        x0 = 0.0 if market.x0_zero else mapped0 * market.order_size_scale * gap0
        worst = 0.0
        frontier = [_Node(initial, levels0, x0)]
        for period in range(1, periods + 1):
            following: List[_Node] = []
            for node in frontier:
                model, solution = self._period_model(period, node.prior)
                expected = 0.0
                states = {1: self._next_state(model, node.prior, period, 1), 2: self._next_state(model, node.prior, period, 2)}
                for state, moves in product((1, 2), product((True, False), repeat=len(branching))):
                    probability = solution.q if state == 1 else 1.0 - solution.q
                    levels = dict(node.levels)
                    for name, up in zip(branching, moves):
                        lattice = self._lattice[name][period - 1]
                        probability *= lattice.probability if up else 1.0 - lattice.probability
                        levels[name] = node.levels[name] * (lattice.up if up else lattice.down)
                    mapped = {name: float(squash[name].apply(np.array(value))) for name, value in levels.items()}
                    before = {name: float(squash[name].apply(np.array(value))) for name, value in node.levels.items()}
                    prior = states[state]
                    gap = float(prior.unmatched[0] - prior.unmatched[2])
                    volume = mapped[market.order_size] * market.order_size_scale * gap
                    change = (mapped[market.fundamental] - before[market.fundamental]
                              + 2.0 * mapped[market.resiliency] * mapped[market.illiquidity] * (volume - node.previous_volume))
                    expected += probability * change
                    following.append(_Node(prior, levels, volume))
                worst = max(worst, abs(expected))
            frontier = following
        return worst


def verify_martingale(model: ArbitrageModel, spec: ScenarioSpec, market: MarketParams, initial: ExtendedTypeDistribution,
                      paths: int, seeds: SeedScheme, measure: Optional[MeasureSpec] = None, resamples: int = 100_000) -> MartingaleReport:
    return MartingaleVerifier(model, spec, market, measure).verify(initial, paths, seeds, resamples)
