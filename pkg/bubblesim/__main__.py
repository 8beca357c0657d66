import argparse
import asyncio
import logging
import os
from dataclasses import replace
from typing import NoReturn

from bubblesim.errors import BubbleSimError
from bubblesim.experiment.config import ExperimentConfig, dump_config, load_config
from bubblesim.experiment.output import emit_figure_data, emit_tilt_data, write_file
from bubblesim.experiment.presets import pessimistic_tilt, preset
from bubblesim.experiment.runner import martingale_check, martingale_enumeration, matching_demo, run_experiment, run_tilt_experiment
from bubblesim.progress import ProgressDisplay, with_progress_display
from bubblesim.types import ExtendedTypeDistribution


async def async_main() -> None:
    # Progress display needs to be initialized before the loggers so that log lines are displayed
    # above the progress bars and don't interfere with them
    with with_progress_display() as progress_display:
        logging.basicConfig(format='%(asctime)s %(levelname)-8s %(message)s', datefmt='%Y-%m-%d %H:%M:%S', level=logging.WARN)

        parser = argparse.ArgumentParser(description='Simulate liquidity bubbles driven by random matching of investors')
        parser.add_argument('--config', type=str, help="YAML experiment config; figure commands start from their preset instead")
        parser.add_argument('--seed', type=int, help="Override the base seed")
        parser.add_argument('--paths', type=int, help="Override the number of trajectories")
        parser.add_argument('--engine', type=str, choices=['distribution', 'population'], help="Override the engine")
        parser.add_argument('--out', type=str, help="Override the output directory")
        parser.add_argument('--workers', type=int, default=os.cpu_count() or 1, help="Number of worker processes")
        parser.add_argument('--verbose', action='store_true', help="Log progress information")
        subparsers = parser.add_subparsers(title='subcommands')

        parser_simulate = subparsers.add_parser('simulate', help="Run the experiment described by --config")
        parser_simulate.set_defaults(func=main_simulate, preset=None)

        for name in ['figure1', 'figure2', 'figure3']:
            parser_figure = subparsers.add_parser(name, help=f"Write the data behind {name} (averages.csv, trajectories.csv)")
            parser_figure.set_defaults(func=main_simulate, preset=name)

        parser_tilt = subparsers.add_parser('tilt', help="Compare mean bubbles under the lattice measure and a tilted one")
        parser_tilt.set_defaults(func=main_tilt, preset='figure3')

        parser_verify = subparsers.add_parser('verify-martingale', help="Check that the price is a martingale under the constructed measure")
        parser_verify.add_argument('--resamples', type=int, default=100_000, help="Total number of resampled steps")
        parser_verify.add_argument('--physical', action='store_true', help="Check the lattice measure instead of the constructed one")
        parser_verify.add_argument('--exact', action='store_true', help="Enumerate the full scenario tree (small grids only)")
        parser_verify.set_defaults(func=main_verify_martingale, preset='arbitrage')

        parser_demo = subparsers.add_parser('matching-demo', help="Print a small agent roster period by period")
        parser_demo.add_argument('--agents', type=int, default=12, help="Number of agents")
        parser_demo.add_argument('--periods', type=int, default=3, help="Number of periods")
        parser_demo.set_defaults(func=main_matching_demo, preset='figure1')

        parser_validate = subparsers.add_parser('validate-config', help="Check a config file without running it")
        parser_validate.set_defaults(func=main_validate_config, preset=None)

        args = parser.parse_args()

        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)

        if not hasattr(args, 'func'):
            error_exit("Please specify a subcommand, see --help")

        try:
            await args.func(args, progress_display)
        except BubbleSimError as error:
            error_exit(f"Error: {error}")

def _config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        config = load_config(args.config)
    elif args.preset is not None:
        config = preset(args.preset)
    else:
        error_exit("Please specify the --config parameter")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.paths is not None:
        config = replace(config, paths=args.paths)
    if args.engine is not None:
        config = replace(config, engine=args.engine)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    config.validate()
    return config

async def main_simulate(args: argparse.Namespace, progress_display: ProgressDisplay) -> None:
    config = _config(args)
    result = await run_experiment(config, args.workers, progress_display)
    await emit_figure_data(result.report, result.records, config.output_dir, config)
    summary = result.report.summary()
    print(f"Simulated {result.report.paths} trajectories: mean beta at period 1 is {summary['mean_beta_1']:.6g} "
          f"(stderr {summary['stderr_beta_1']:.3g}), {summary['trajectories_per_second']:.0f} trajectories per second")
    print(f"Results written to {config.output_dir}")

async def main_tilt(args: argparse.Namespace, progress_display: ProgressDisplay) -> None:
    config = _config(args)
    if len(config.tilt) == 0:
        config = replace(config, tilt=pessimistic_tilt())
    report = await run_tilt_experiment(config, args.workers, progress_display)
    await emit_tilt_data(report, config.output_dir, config)
    print(f"Mean beta at period 1: {report.baseline.mean_beta[1]:.6g} (stderr {report.baseline.stderr_beta[1]:.3g}) under P, "
          f"{report.tilted.mean_beta[1]:.6g} (stderr {report.tilted.stderr_beta[1]:.3g}) under the tilted measure")
    print(f"Relative change of the mean bubble at period 1: {100.0 * report.relative_change(1):+.2f}%")

async def main_verify_martingale(args: argparse.Namespace, progress_display: ProgressDisplay) -> None:
    config = _config(args)
    if args.exact:
        worst = martingale_enumeration(config)
        print(f"Largest |E[S^k - S^(k-1) | node]| over the scenario tree: {worst:.3g}")
        return
    report = martingale_check(config, args.resamples, args.physical)
    print(report.to_csv(), end='')
    os.makedirs(config.output_dir, exist_ok=True)
    await write_file(os.path.join(config.output_dir, "martingale.csv"), report.to_csv())
    verdict = "passed" if report.passed else "failed"
    print(f"Martingale check {verdict}: max residual {report.max_abs_residual:.3g}, pooled z {report.pooled_z:.3g}, "
          f"largest node z {report.max_node_z():.3g}")

async def main_matching_demo(args: argparse.Namespace, progress_display: ProgressDisplay) -> None:
    config = _config(args)
    num_types = config.build_model().num_types
    for period, outcome in enumerate(matching_demo(config, args.agents, args.periods), start=1):
        print(f"Period {period}")
        print(",".join(ExtendedTypeDistribution.csv_header(num_types)))
        print(",".join(outcome.end.to_csv_row()))
        print(outcome.population.to_csv(), end='')

async def main_validate_config(args: argparse.Namespace, progress_display: ProgressDisplay) -> None:
    config = _config(args)
    print(dump_config(config), end='')
    print("Config is valid")


def error_exit(msg: str) -> NoReturn:
    print(msg)
    exit(1)

def main() -> None:
    asyncio.run(async_main())

if __name__ == "__main__":
    main()
