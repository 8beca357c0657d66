from io import StringIO
from typing import List, Optional
import asyncio
import csv
import logging
import os
import aiofiles

from bubblesim.experiment.aggregate import AggregateReport, TiltReport
from bubblesim.experiment.config import ExperimentConfig, dump_config
from bubblesim.experiment.runner import TrajectoryRecord
from bubblesim.types import format_float

TRAJECTORIES_HEADER = ["period", "trajectory", "beta", "p1_minus_p3"]


write_semaphore = asyncio.Semaphore(512)

async def write_file(path: str, content: str) -> None:
    async with write_semaphore:
        async with aiofiles.open(path, 'w') as file:
            await file.write(content)
    logging.info(f"Wrote {path}")


def trajectories_csv(records: List[TrajectoryRecord]) -> str:
    output = StringIO()
    wr = csv.writer(output, lineterminator='\n')
    wr.writerow(TRAJECTORIES_HEADER)
    for record in records:
        for period in range(record.beta.shape[0]):
            wr.writerow([str(period), str(record.trajectory), format_float(record.beta[period]), format_float(record.gap[period])])
    return output.getvalue()


async def emit_figure_data(report: AggregateReport, records: Optional[List[TrajectoryRecord]], out_dir: str,
                           config: Optional[ExperimentConfig] = None) -> None:
    """
    Writes averages.csv and, when trajectories were kept, trajectories.csv to `out_dir`.
    With `config`, config.yaml next to them reproduces the run.
    """
    os.makedirs(out_dir, exist_ok=True)
    writes = [write_file(os.path.join(out_dir, "averages.csv"), report.to_csv())]
    if records is not None:
        writes.append(write_file(os.path.join(out_dir, "trajectories.csv"), trajectories_csv(records)))
    if config is not None:
        writes.append(write_file(os.path.join(out_dir, "config.yaml"), dump_config(config)))
    await asyncio.gather(*writes)


async def emit_tilt_data(report: TiltReport, out_dir: str, config: Optional[ExperimentConfig] = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    writes = [write_file(os.path.join(out_dir, "tilt.csv"), report.to_csv())]
    if config is not None:
        writes.append(write_file(os.path.join(out_dir, "config.yaml"), dump_config(config)))
    await asyncio.gather(*writes)
