from typing import Sequence

from bubblesim.errors import ConfigError
from bubblesim.models.base import TransitionModel
from bubblesim.models.memory import MemoryModel
from bubblesim.types import ExtendedTypeDistribution


def initial_distribution(model: TransitionModel, fractions: Sequence[float]) -> ExtendedTypeDistribution:
    if len(fractions) == model.num_types:
        return ExtendedTypeDistribution.all_unmatched(fractions)
    if isinstance(model, MemoryModel):
        return model.initial_distribution(list(fractions))
    raise ConfigError(f"Got {len(fractions)} initial fractions for a model with {model.num_types} types")
