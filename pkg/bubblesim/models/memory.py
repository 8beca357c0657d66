from dataclasses import dataclass, field
from dataclasses_json import DataClassJsonMixin
from typing import Final, List, Optional, final
import numpy as np
from ensure import check  # type: ignore

from bubblesim.drivers import ScenarioState
from bubblesim.errors import ModelConfigurationError
from bubblesim.models.base import BreakupKernel, fraction_gap, product_theta, with_residual_diagonal
from bubblesim.models.sentiment import SentimentFunctions
from bubblesim.types import DEFAULT_TOLERANCES, ExtendedTypeDistribution, FloatArray, Tolerances

# Dense kernels are K x K x K with K = 3 (capacity + 1)^3
MAX_MEMORY_TYPES: Final = 192


@final
@dataclass(frozen=True)
class MemoryType:
    optimistic: int
    neutral: int
    pessimistic: int
    view: int


def encode_memory_type(optimistic: int, neutral: int, pessimistic: int, view: int, periods: int) -> int:
    for count in (optimistic, neutral, pessimistic):
        check(count).is_greater_than_or_equal_to(0).or_raise(
            lambda _: ModelConfigurationError(f"Meeting count must be non-negative, got {count}"))
        check(count).is_less_than_or_equal_to(periods).or_raise(
            lambda _: ModelConfigurationError(f"Meeting count {count} exceeds {periods} periods"))
    check(view).is_in((1, 2, 3)).or_raise(
        lambda _: ModelConfigurationError(f"View must be 1, 2 or 3, got {view}"))
    base = periods + 1
    return optimistic + neutral * base + pessimistic * base ** 2 + (view - 1) * base ** 3


def decode_memory_type(code: int, periods: int) -> MemoryType:
    base = periods + 1
    if not 0 <= code < 3 * base ** 3:
        raise ModelConfigurationError(f"Type {code} outside 0..{3 * base ** 3 - 1}")
    view, rest = divmod(code, base ** 3)
    pessimistic, rest = divmod(rest, base ** 2)
    neutral, optimistic = divmod(rest, base)
    return MemoryType(optimistic, neutral, pessimistic, view + 1)


@final
@dataclass(frozen=True)
class MemoryParams(DataClassJsonMixin):
    # Largest meeting count kept per view; counts saturate there
    capacity: int = 1
    # Base probability of each view change in the mutation step
    mutation_base: float = 0.0
    theta_level: float = 0.5
    # Weight of past meetings in the post-meeting view change, in [0,1/2]
    persuasion: float = 0.25
    sentiment: SentimentFunctions = field(default_factory=SentimentFunctions)

    def __post_init__(self) -> None:
        check(self.capacity).is_greater_than(0).or_raise(
            lambda _: ModelConfigurationError(f"Capacity must be positive, got {self.capacity}"))
        if 3 * (self.capacity + 1) ** 3 > MAX_MEMORY_TYPES:
            raise ModelConfigurationError(f"Capacity {self.capacity} needs more than {MAX_MEMORY_TYPES} types")
        for name, value in [("mutation_base", self.mutation_base), ("persuasion", self.persuasion)]:
            if not 0.0 <= value <= 0.5:
                raise ModelConfigurationError(f"{name} must lie in [0,1/2], got {value}")
        if not 0.0 <= self.theta_level <= 1.0:
            raise ModelConfigurationError(f"theta level must lie in [0,1], got {self.theta_level}")


## Types remember how many optimistic, neutral and pessimistic agents they have met, on top of
## their view. Mutation changes the view only. Every pair breaks up in the period it forms;
## both agents count the meeting, and an agent whose view differs from the partner's adopts it
## with probability (share of earlier meetings with that view) * persuasion + g(p1 - p3).
@final
class MemoryModel:
    def __init__(self, params: Optional[MemoryParams] = None, tolerances: Tolerances = DEFAULT_TOLERANCES):
        self._params: Final = params or MemoryParams()
        self._tolerance: Final = tolerances.table
        capacity = self._params.capacity
        self._num_types: Final = 3 * (capacity + 1) ** 3
        decoded = [decode_memory_type(code, capacity) for code in range(self._num_types)]
        self._views: Final = np.array([t.view - 1 for t in decoded])
        counts = np.array([[t.optimistic, t.neutral, t.pessimistic] for t in decoded])
        self._same_counts: Final = np.all(counts[:, None, :] == counts[None, :, :], axis=-1)
        totals = counts.sum(axis=1)
        self._share: Final = np.where(totals[:, None] > 0, counts / np.maximum(totals, 1)[:, None], 0.0)
        # after_meeting[k, w, v]: type k after meeting view w and ending with view v
        self._after_meeting: Final = np.empty((self._num_types, 3, 3), dtype=np.int64)
        for code, t in enumerate(decoded):
            for met in range(3):
                updated = [t.optimistic, t.neutral, t.pessimistic]
                updated[met] = min(updated[met] + 1, capacity)
                for view in range(3):
                    self._after_meeting[code, met, view] = encode_memory_type(*updated, view + 1, capacity)

    @property
    def num_types(self) -> int:
        return self._num_types

    @property
    def params(self) -> MemoryParams:
        return self._params

    def _view_gap(self, distribution: FloatArray, unmatched_only: bool) -> FloatArray:
        if unmatched_only:
            masses = distribution[..., :, self._num_types]
        else:
            masses = distribution.sum(axis=-1)
        views = self.opinion_fractions(masses)
        gap: FloatArray = views[..., 0] - views[..., 2]
        return gap

    def eta(self, scenario: ScenarioState, period: int, prior: FloatArray) -> FloatArray:
        x = self._view_gap(prior, unmatched_only=True)
        off = self._params.sentiment.f_matrix(x) + self._params.mutation_base * (1.0 - np.eye(3))
        view_eta = with_residual_diagonal(off, "eta", self._tolerance)
        eta: FloatArray = view_eta[..., self._views[:, None], self._views[None, :]] * self._same_counts
        return eta

    def theta(self, scenario: ScenarioState, period: int, post_mutation: FloatArray) -> FloatArray:
        level = np.full(post_mutation.shape[:-2], self._params.theta_level)
        return product_theta(level, post_mutation)

    def breakup(self, scenario: ScenarioState, period: int, post_matching: FloatArray) -> BreakupKernel:
        x = fraction_gap(self._views_only(post_matching))
        g = self._params.sentiment.g_matrix(x)
        batch = np.shape(x)
        size = self._num_types
        varsigma = np.zeros(batch + (size, size, size))
        own = self._views
        for k in range(size):
            for l in range(size):
                v, w = own[k], own[l]
                stay_type = self._after_meeting[k, w, v]
                if v == w:
                    varsigma[..., k, l, stay_type] = 1.0
                    continue
                change = self._share[k, w] * self._params.persuasion + g[..., v, w]
                if np.any(change > 1.0 + self._tolerance):
                    raise ModelConfigurationError(f"varsigma: change probability of type {k} meeting type {l} exceeds 1")
                varsigma[..., k, l, self._after_meeting[k, w, w]] = change
                varsigma[..., k, l, stay_type] = 1.0 - change
        return BreakupKernel(xi=np.ones(batch + (size, size)), sigma=None, varsigma=varsigma)

    def _views_only(self, distribution: FloatArray) -> FloatArray:
        # (..., K, K+1) -> (..., 3, 4) with every agent placed in the unmatched column of its view
        masses = self.opinion_fractions(distribution.sum(axis=-1))
        collapsed = np.zeros(masses.shape[:-1] + (3, 4))
        collapsed[..., :, 3] = masses
        return collapsed

    def opinion_fractions(self, type_fractions: FloatArray) -> FloatArray:
        views = np.zeros(type_fractions.shape[:-1] + (3,))
        for view in range(3):
            views[..., view] = type_fractions[..., self._views == view].sum(axis=-1)
        return views

    def initial_distribution(self, view_fractions: List[float]) -> ExtendedTypeDistribution:
        # Nobody has met anyone yet
        if len(view_fractions) != 3:
            raise ModelConfigurationError(f"Expected 3 view fractions, got {len(view_fractions)}")
        entries = np.zeros((self._num_types, self._num_types + 1))
        for view, fraction in enumerate(view_fractions):
            entries[encode_memory_type(0, 0, 0, view + 1, self._params.capacity), self._num_types] = fraction
        return ExtendedTypeDistribution(entries)

    def required_drivers(self) -> List[str]:
        return []

    def required_regimes(self) -> List[str]:
        return []
