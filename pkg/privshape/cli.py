"""Command line entry point: privshape score|theory|run|matrix|generate."""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from .auditor import audit_run
from .config import settings
from .controller import run_receding_horizon
from .exceptions import PrivShapeError, ProfileError
from .harness import OVERSIZED_TANK_LITRES, SYSTEMS, ExperimentMatrix, load_bundle, run_matrix
from .ingest import read_profile_csv, write_bundle
from .metrics import score
from .models import ProfileRole, ScenarioConfig
from .report_generator import get_report_generator
from .scenario import load_scenario, save_scenario
from .synthetic import ARCHETYPES, generate_synthetic_profile
from .theory import DiscreteDistribution, run_theory_checks

logger = logging.getLogger(__name__)


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    scenario = load_scenario(args.config) if args.config else ScenarioConfig()
    update = {}
    if getattr(args, "long", False):
        update["days"] = settings.LONG_RUN_DAYS
    elif args.days is not None:
        update["days"] = args.days
    if args.seed is not None:
        update["seed"] = args.seed
    return scenario.model_copy(update=update) if update else scenario


def _base_dir(args: argparse.Namespace) -> Optional[Path]:
    return Path(args.config).parent if args.config else None


def cmd_score(args: argparse.Namespace) -> int:
    x = read_profile_csv(args.x, ProfileRole.SENSITIVE)
    y = read_profile_csv(args.y, ProfileRole.GRID)
    if x.grid != y.grid:
        raise ProfileError(f"{args.x} and {args.y} are not on the same time grid")
    scenario = load_scenario(args.config) if args.config else ScenarioConfig()
    report = score(x.values, y.values, scenario.binning.resolve(x.values), scenario.score_smoothing)
    row = pd.DataFrame([{
        "iid_mi_bits": report.iid_mi,
        "markov_mi_bits": report.markov_mi,
        "entropy_x_bits": report.entropy_x,
        "k": report.sample_count,
    }])
    text = row.to_csv(index=False, float_format="%.17g")
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    distribution = None
    if args.support:
        distribution = DiscreteDistribution.uniform(args.support)
    report = run_theory_checks(distribution, args.y_star, k=args.k, seed=args.seed or 0)
    written = asyncio.run(get_report_generator().write_theory(report, args.output))
    print(f"Theory report: {written['summary']}")
    return 0 if report.separation_holds else 1


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    bundle = load_bundle(scenario, scenario.seed, _base_dir(args))
    outcome = run_receding_horizon(scenario, bundle)
    audit = audit_run(outcome, scenario, bundle)
    directory = Path(args.output or settings.OUTPUT_DIR) / outcome.report.name
    asyncio.run(get_report_generator().write_run(outcome, directory, audit))
    report = outcome.report
    print(
        f"{report.name}: IID MI {report.iid_mi:.3f} bits, Markov MI {report.markov_mi:.3f} bits, "
        f"{report.average_daily_cost_cents:.3f} cents/day -> {directory}"
    )
    return 0


def cmd_matrix(args: argparse.Namespace) -> int:
    template = _scenario(args)
    tanks = [None] + ([OVERSIZED_TANK_LITRES] if args.oversized_tank else [])
    matrix = ExperimentMatrix(
        template=template,
        mu_values=tuple(args.mu),
        cost_modes=(True,) if args.cost_only else (True, False),
        systems=tuple(args.systems),
        step_load_modes=(False, True) if args.step_load else (False,),
        archetypes=tuple(args.archetypes),
        tank_litres=tuple(tanks),
        master_seed=args.seed if args.seed is not None else template.seed,
        parallelism=args.parallelism or settings.PARALLELISM,
    )

    async def execute():
        result = await run_matrix(matrix, base_dir=_base_dir(args))
        await get_report_generator().write_matrix(result, args.output)
        return result

    result = asyncio.run(execute())
    print(result.privacy_table.to_string())
    print()
    print(result.cost_table.to_string())
    for failure in result.failures:
        print(f"FAILED {failure.cell.name}: {failure.error}", file=sys.stderr)
    return 0 if result.ok else 1


def cmd_generate(args: argparse.Namespace) -> int:
    days = settings.LONG_RUN_DAYS if args.long else (args.days or settings.DEFAULT_DAYS)
    seed = args.seed if args.seed is not None else 23618
    bundle = generate_synthetic_profile(seed, days, args.archetype)
    directory = Path(args.output or settings.OUTPUT_DIR)
    inputs = write_bundle(bundle, directory, prefix=f"{args.archetype}-")
    relative = inputs.model_copy(update={
        field: Path(value).name for field, value in inputs.model_dump().items() if value is not None
    })
    scenario = ScenarioConfig(name=args.archetype, seed=seed, archetype=args.archetype, inputs=relative)
    save_scenario(scenario, directory / f"{args.archetype}.toml")
    print(f"Wrote {days} days of {args.archetype} to {directory}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privshape", description="Load-shaping privacy simulator")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser, config: bool = True) -> None:
        if config:
            sub.add_argument("--config", help="Scenario TOML file")
        sub.add_argument("--output", help=f"Output location (default {settings.OUTPUT_DIR})")
        sub.add_argument("--seed", type=int, help="Random seed")

    sub = commands.add_parser("score", help="Score an (x, y) profile pair")
    sub.add_argument("x", help="Sensitive load CSV")
    sub.add_argument("y", help="Grid load CSV")
    common(sub)
    sub.set_defaults(handler=cmd_score)

    sub = commands.add_parser("theory", help="Ideal-regime checks")
    common(sub, config=False)
    sub.add_argument("--support", type=float, nargs="+", help="Uniform X support, kW (default 1 2 3 4)")
    sub.add_argument("--y-star", type=float, help="Flat FTL target, kW (default 3)")
    sub.add_argument("--k", type=int, default=100_000, help="Sampled sequence length")
    sub.set_defaults(handler=cmd_theory)

    for name, handler, help_text in (
        ("run", cmd_run, "One receding-horizon run"),
        ("matrix", cmd_matrix, "Scenario matrix and summary tables"),
    ):
        sub = commands.add_parser(name, help=help_text)
        common(sub)
        sub.add_argument("--days", type=int, help="Simulated days")
        sub.add_argument("--long", action="store_true", help=f"{settings.LONG_RUN_DAYS}-day run")
        sub.set_defaults(handler=handler)
        if name == "matrix":
            sub.add_argument("--mu", type=float, nargs="+", default=[0.0, 5.0, 10.0])
            sub.add_argument("--systems", nargs="+", default=["ESS", "EWH", "EWH+ERH"], choices=sorted(SYSTEMS))
            sub.add_argument("--archetypes", nargs="+", default=["house-23618-like"], choices=sorted(ARCHETYPES))
            sub.add_argument("--step-load", action="store_true", help="Add 5-minute dispatch EWH rows")
            sub.add_argument("--oversized-tank", action="store_true", help=f"Add {OVERSIZED_TANK_LITRES:g} L tank rows")
            sub.add_argument("--cost-only", action="store_true", help="Skip the cost-blind rows")
            sub.add_argument("--parallelism", type=int, help="Concurrent cells")

    sub = commands.add_parser("generate", help="Write a synthetic profile bundle and scenario")
    common(sub, config=False)
    sub.add_argument("--days", type=int, help="Days to generate")
    sub.add_argument("--long", action="store_true", help=f"{settings.LONG_RUN_DAYS} days")
    sub.add_argument("--archetype", default="house-23618-like", choices=sorted(ARCHETYPES))
    sub.set_defaults(handler=cmd_generate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    settings.ensure_dirs()
    try:
        return args.handler(args)
    except PrivShapeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
