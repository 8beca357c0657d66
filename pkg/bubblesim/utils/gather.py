import asyncio
import logging
from typing import List, TypeVar, Coroutine, Any

T = TypeVar('T')

# Like asyncio.gather(), but if tasks fail, all other tasks are still completed first.
# Every error is logged; the one of the earliest coroutine in argument order is raised.
async def gather_raise_first_error_after_all_tasks_complete(*coroutines: Coroutine[Any, Any, T]) -> List[T]:
    futures = [asyncio.create_task(c) for c in coroutines]
    results = await asyncio.gather(*futures, return_exceptions=True)
    errors = [result for result in results if isinstance(result, BaseException)]
    for error in errors:
        logging.error(error)
    if len(errors) > 0:
        raise errors[0]

    return [result for result in results if not isinstance(result, BaseException)]
