from concurrent.futures import Executor
from typing import Callable, Awaitable, TypeVar, ParamSpec, final, Final
from asyncio import Semaphore
from functools import partial, wraps
import asyncio


P = ParamSpec('P')
R = TypeVar('R')

## Runs a blocking function on `executor` with at most `max_in_flight` calls submitted at once;
## further calls wait until a running one has returned. The undecorated function is what gets
## submitted, so module-level functions stay picklable for process pools.
@final
class ConcurrencyLimit:
    def __init__(self, executor: Executor, max_in_flight: int):
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be positive, got {max_in_flight}")
        self._executor: Final = executor
        self._semaphore: Final = Semaphore(max_in_flight)

    def __call__(self, func: Callable[P, R]) -> Callable[P, Awaitable[R]]:
        @wraps(func)
        async def inner(*args: P.args, **kwds: P.kwargs) -> R:
            async with self._semaphore:
                loop = asyncio.get_running_loop()
                return await loop.run_in_executor(self._executor, partial(func, *args, **kwds))

        return inner
