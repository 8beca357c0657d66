from typing import Generator, Optional, final, Final
from rich.progress import Progress, TextColumn, BarColumn, MofNCompleteColumn, SpinnerColumn, TimeElapsedColumn, TimeRemainingColumn, TaskProgressColumn
from contextlib import contextmanager


## Counts finished trajectories of one run
@final
class ProgressBar:
    def __init__(self, progress: Progress, name: str, total: int):
        self._completed = 0
        self._total: Final = total
        self._progress: Final = progress
        self._task_id: Final = self._progress.add_task(name, total=total)

    @property
    def completed(self) -> int:
        return self._completed

    def advance(self, trajectories: int) -> None:
        self._completed = min(self._completed + trajectories, self._total)
        self._progress.update(self._task_id, completed=self._completed)

    def finish(self) -> None:
        self.advance(self._total - self._completed)


class ProgressDisplay:
    def __init__(self, progress: Progress):
        self._progress = progress

    def add_task(self, name: str, total: int) -> ProgressBar:
        return ProgressBar(self._progress, name, total)


def advance(bar: Optional[ProgressBar], trajectories: int) -> None:
    if bar is not None:
        bar.advance(trajectories)


@contextmanager
def with_progress_display() -> Generator[ProgressDisplay, None, None]:
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(), MofNCompleteColumn(),
                  TaskProgressColumn(), TimeElapsedColumn(), TimeRemainingColumn()) as progress:
        yield ProgressDisplay(progress)
