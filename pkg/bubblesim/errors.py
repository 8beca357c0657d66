from typing import Optional
from typing_extensions import override


class BubbleSimError(Exception):
    pass

class InvalidDistributionError(BubbleSimError):
    pass

class InvalidTableError(BubbleSimError):
    pass

class MassConservationError(BubbleSimError):
    pass

class DriverSpecError(BubbleSimError):
    pass

class ModelConfigurationError(BubbleSimError):
    pass

class ConfigError(BubbleSimError):
    pass

class MisalignedInputError(BubbleSimError):
    pass

class DegenerateMeasureError(BubbleSimError):
    pass

class SearchFailedError(BubbleSimError):
    pass

## Raised by the experiment runner when a single trajectory fails; keeps the trajectory id and period for the report
class TrajectoryError(BubbleSimError):
    def __init__(self, trajectory: int, period: Optional[int], cause: str):
        where = f"trajectory {trajectory}" if period is None else f"trajectory {trajectory}, period {period}"
        super().__init__(f"{where}: {cause}")
        self.trajectory = trajectory
        self.period = period
        self.cause = cause

    @override
    def __reduce__(self) -> tuple[type['TrajectoryError'], tuple[int, Optional[int], str]]:
        return (TrajectoryError, (self.trajectory, self.period, self.cause))
