from dataclasses import dataclass
from io import StringIO
from typing import Final, List, Optional, Sequence, Tuple, final
import csv
import logging
import numpy as np
from ensure import check  # type: ignore

from bubblesim.distribution import Evolution, opinion_gap
from bubblesim.drivers import ScenarioPath, ScenarioState, SeedScheme, Stream
from bubblesim.errors import InvalidDistributionError, MisalignedInputError
from bubblesim.models.base import BreakupKernel, TransitionModel
from bubblesim.types import BoolArray, ExtendedTypeDistribution, FloatArray, IntArray, ensure_valid_distribution

# Partner entry of an unmatched agent
NO_PARTNER: Final = -1


## Finite roster of agents. `types` holds 0-based type indices, `partner` the index of the
## partner agent or NO_PARTNER. Instances are never modified; every step returns a new one.
@final
class AgentPopulation:
    def __init__(self, types: Sequence[int] | IntArray, partner: Sequence[int] | IntArray, num_types: int):
        self._types: Final = np.array(types, dtype=np.int64)
        self._partner: Final = np.array(partner, dtype=np.int64)
        self._num_types: Final = num_types
        self._types.setflags(write=False)
        self._partner.setflags(write=False)
        self._validate()

    def _validate(self) -> None:
        size = self.size
        if self._partner.shape != (size,):
            raise InvalidDistributionError(f"Partner array has shape {self._partner.shape}, expected ({size},)")
        if size > 0 and (self._types.min() < 0 or self._types.max() >= self._num_types):
            raise InvalidDistributionError(f"Agent types must lie in 1..{self._num_types}")
        matched = np.flatnonzero(self._partner != NO_PARTNER)
        partners = self._partner[matched]
        if np.any((partners < 0) | (partners >= size)):
            raise InvalidDistributionError("Partner index out of range")
        if np.any(partners == matched):
            raise InvalidDistributionError(f"Agent {int(matched[partners == matched][0])} is matched to itself")
        if np.any(self._partner[partners] != matched):
            raise InvalidDistributionError(f"Partner links of agent {int(matched[self._partner[partners] != matched][0])} are not mutual")

    @staticmethod
    def unmatched(types: Sequence[int] | IntArray, num_types: int) -> 'AgentPopulation':
        return AgentPopulation(types, np.full(len(types), NO_PARTNER), num_types)

    @property
    def size(self) -> int:
        return int(self._types.shape[0])

    @property
    def num_types(self) -> int:
        return self._num_types

    @property
    def types(self) -> IntArray:
        return self._types

    @property
    def partner(self) -> IntArray:
        return self._partner

    @property
    def labels(self) -> IntArray:
        result: IntArray = self._types + 1
        return result

    def is_matched(self) -> BoolArray:
        result: BoolArray = self._partner != NO_PARTNER
        return result

    def pairs(self) -> Tuple[IntArray, IntArray]:
        # Each pair once, lower agent index first
        first = np.flatnonzero(self._partner > np.arange(self.size))
        return first, self._partner[first]

    def empirical_distribution(self) -> ExtendedTypeDistribution:
        size = self._num_types
        counts = np.zeros((size, size + 1))
        matched = self.is_matched()
        partner_types = np.where(matched, self._types[np.where(matched, self._partner, 0)], size)
        np.add.at(counts, (self._types, partner_types), 1.0)
        return ExtendedTypeDistribution(counts / self.size)

    def to_csv(self) -> str:
        output = StringIO()
        wr = csv.writer(output, lineterminator='\n')
        wr.writerow(["agent", "type", "partner"])
        for agent in range(self.size):
            partner = int(self._partner[agent])
            wr.writerow([agent, int(self._types[agent]) + 1, "" if partner == NO_PARTNER else partner])
        return output.getvalue()

    @staticmethod
    def from_csv(content: str, num_types: int) -> 'AgentPopulation':
        rows = list(csv.DictReader(StringIO(content)))
        types = [int(row["type"]) - 1 for row in rows]
        partner = [NO_PARTNER if row["partner"] == "" else int(row["partner"]) for row in rows]
        return AgentPopulation(types, partner, num_types)


def from_distribution(distribution: ExtendedTypeDistribution, size: int) -> AgentPopulation:
    """
    Deterministic roster whose empirical distribution is the closest one to `distribution`
    that `size` agents can realise. Cells are allocated by largest remainder, matched cells
    in units of one pair.
    """
    check(size).is_greater_than(0).or_raise(
        lambda _: InvalidDistributionError(f"Population size must be positive, got {size}"))
    ensure_valid_distribution(distribution)
    num_types = distribution.num_types
    entries = distribution.entries
    # (k, l, agents per unit, target units); l = num_types is J
    units: List[Tuple[int, int, int, float]] = []
    for k in range(num_types):
        for l in range(k, num_types):
            mass = entries[k, l] if k == l else entries[k, l] + entries[l, k]
            units.append((k, l, 2, size * mass / 2.0))
        units.append((k, num_types, 1, size * entries[k, num_types]))
    allocated = [int(np.floor(target)) for _, _, _, target in units]
    remaining = size - sum(count * unit[2] for count, unit in zip(allocated, units))
    order = sorted(range(len(units)), key=lambda i: (-(units[i][3] - allocated[i]), i))
    for i in order:
        if units[i][2] <= remaining:
            allocated[i] += 1
            remaining -= units[i][2]
    # Odd leftover agents go to the unmatched cell with the largest target
    singles = [i for i, unit in enumerate(units) if unit[2] == 1]
    fallback = max(singles, key=lambda i: (units[i][3], -i))
    allocated[fallback] += remaining

    types: List[int] = []
    partner: List[int] = []
    for (k, l, agents, _), count in zip(units, allocated):
        for _ in range(count):
            if agents == 1:
                types.append(k)
                partner.append(NO_PARTNER)
            else:
                first = len(types)
                types += [k, l]
                partner += [first + 1, first]
    return AgentPopulation(types, partner, num_types)


def _draw_rows(cumulative: FloatArray, rng: np.random.Generator) -> IntArray:
    # cumulative: (m, C) row-wise cumulative probabilities -> one category per row
    draws = rng.random(cumulative.shape[0])
    chosen: IntArray = np.minimum((draws[:, None] >= cumulative).sum(axis=1), cumulative.shape[1] - 1)
    return chosen


def mutation_step(population: AgentPopulation, eta: FloatArray, rng: np.random.Generator) -> AgentPopulation:
    cumulative = np.cumsum(np.asarray(eta, dtype=np.float64), axis=1)
    types = _draw_rows(cumulative[population.types], rng)
    return AgentPopulation(types, population.partner, population.num_types)


def random_perfect_matching(agents: IntArray, rng: np.random.Generator) -> Tuple[IntArray, IntArray]:
    """
    Uniformly random perfect matching of an even number of agents: shuffle, then pair
    consecutive positions. With an odd count one uniformly chosen agent is left out.
    """
    shuffled = rng.permutation(agents)
    if shuffled.shape[0] % 2 == 1:
        shuffled = shuffled[:-1]
    return shuffled[0::2], shuffled[1::2]


def match_step(population: AgentPopulation, theta: FloatArray, rng: np.random.Generator) -> AgentPopulation:
    size = population.num_types
    theta = np.asarray(theta, dtype=np.float64)
    unmatched = np.flatnonzero(~population.is_matched())
    types = population.types[unmatched]
    # Proposal size means J
    proposal_table = np.concatenate([theta, (1.0 - theta.sum(axis=1))[:, None]], axis=1)
    proposals = _draw_rows(np.cumsum(proposal_table, axis=1)[types], rng)

    partner = np.array(population.partner)
    for k in range(size):
        for l in range(k, size):
            bucket = unmatched[(types == k) & (proposals == l)]
            if k == l:
                first, second = random_perfect_matching(bucket, rng)
            else:
                # A random permutation of each side, cut to the shorter one, is a uniform truncation plus a uniform bijection
                opposite = unmatched[(types == l) & (proposals == k)]
                count = min(bucket.shape[0], opposite.shape[0])
                first = rng.permutation(bucket)[:count]
                second = rng.permutation(opposite)[:count]
            partner[first] = second
            partner[second] = first
    return AgentPopulation(population.types, partner, size)


def breakup_step(population: AgentPopulation, kernel: BreakupKernel, rng: np.random.Generator) -> AgentPopulation:
    size = population.num_types
    first, second = population.pairs()
    first_types = population.types[first]
    second_types = population.types[second]
    separate = rng.random(first.shape[0]) < kernel.xi[first_types, second_types]

    types = np.array(population.types)
    partner = np.array(population.partner)

    leaving_first, leaving_second = first[separate], second[separate]
    lt1, lt2 = first_types[separate], second_types[separate]
    varsigma_cumulative = np.cumsum(kernel.varsigma, axis=2)
    types[leaving_first] = _draw_rows(varsigma_cumulative[lt1, lt2], rng)
    types[leaving_second] = _draw_rows(varsigma_cumulative[lt2, lt1], rng)
    partner[leaving_first] = NO_PARTNER
    partner[leaving_second] = NO_PARTNER

    if kernel.sigma is not None:
        staying_first, staying_second = first[~separate], second[~separate]
        joint = np.cumsum(kernel.sigma.reshape(size, size, size * size), axis=2)
        cells = _draw_rows(joint[first_types[~separate], second_types[~separate]], rng)
        types[staying_first] = cells // size
        types[staying_second] = cells % size
    return AgentPopulation(types, partner, size)


@final
@dataclass(frozen=True)
class PeriodOutcome:
    population: AgentPopulation
    post_mutation: ExtendedTypeDistribution
    post_matching: ExtendedTypeDistribution
    end: ExtendedTypeDistribution


## One period with tables conditioned on the realised empirical distributions of this run.
def run_period(population: AgentPopulation, model: TransitionModel, scenario: ScenarioState, period: int,
               rng: np.random.Generator) -> PeriodOutcome:
    prior = population.empirical_distribution()
    mutated = mutation_step(population, model.eta(scenario, period, prior.entries), rng)
    post_mutation = mutated.empirical_distribution()
    matched = match_step(mutated, model.theta(scenario, period, post_mutation.entries), rng)
    post_matching = matched.empirical_distribution()
    final_population = breakup_step(matched, model.breakup(scenario, period, post_matching.entries), rng)
    return PeriodOutcome(final_population, post_mutation, post_matching, final_population.empirical_distribution())


def simulate_population(initial: ExtendedTypeDistribution, model: TransitionModel, path: ScenarioPath, size: int,
                        seeds: SeedScheme, index: Optional[int] = None) -> Evolution:
    if initial.num_types != model.num_types:
        raise MisalignedInputError(f"Distribution has {initial.num_types} types, model has {model.num_types}")
    rng = seeds.generator(path.index if index is None else index, Stream.POPULATION)
    population = from_distribution(initial, size)
    periods = path.grid.periods
    shape = initial.entries.shape
    distributions = np.empty((periods + 1,) + shape)
    mutations = np.empty((periods,) + shape)
    matchings = np.empty((periods,) + shape)
    distributions[0] = population.empirical_distribution().entries
    for period in range(1, periods + 1):
        outcome = run_period(population, model, path.at(period), period, rng)
        population = outcome.population
        mutations[period - 1] = outcome.post_mutation.entries
        matchings[period - 1] = outcome.post_matching.entries
        distributions[period] = outcome.end.entries
    logging.debug(f"Simulated {size} agents over {periods} periods for trajectory {path.index}")
    return Evolution(distributions, mutations, matchings, opinion_gap(model, distributions))
