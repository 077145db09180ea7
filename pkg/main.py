import argparse
import json
import logging
import os
import sys
import time

import pandas as pd
from dotenv import load_dotenv

from src.constructive_builders import (
    RetryExhausted,
    ToleranceNotMet,
    WidthCapExceeded,
    build_random_with_retries,
    build_theorem1,
    build_theorem2,
)
from src.experiment_harness import (
    RATE_COLUMNS,
    RATE_SCHEMA,
    SweepResult,
    fit_rate,
    get_target,
    median_errors,
    run_sweep,
    scale_defaults,
    step_rate_errors,
    sweep_cells,
    train_cell,
)
from src.laperm_trainer import HISTORY_SCHEMA
from src.permutation_tracer import TraceLog, export_csv, summarize
from src.relu_net import eval_grid, l2_error, sup_error
from src.run_config import RunConfig, resolve_config, write_manifest, write_versioned_csv
from utils.logger import setup_logger

logger = logging.getLogger(__name__)

DEFAULTS = RunConfig()
BUDGET_SCHEMA = ("error_budget", 1)
K_STUDY_SCHEMA = ("k_study", 1)
TRACE_SUMMARY_SCHEMA = ("trace_summary", 1)


def _training_options(parser):
    """Flags shared by train, sweep and trace. Unset values fall back to the per-dimension defaults."""
    group = parser.add_argument_group("training (per-dimension defaults: 1D / 2D / 3D)")
    group.add_argument('--epochs', type=int, help="Training epochs (default: 2000; 6400 with --full-scale)")
    group.add_argument('--lr', type=float, help=f"Adam learning rate (default: {DEFAULTS.lr})")
    group.add_argument('--k', type=float, help="Initial permutation period in epochs (default: 5 / 5 / 20)")
    group.add_argument('--k-growth', type=float, help=f"Multiplicative k increase per epoch (default: {DEFAULTS.k_growth:.6f}, the 10th root of 1.002)")
    group.add_argument('--lr-decay', type=float, help=f"Multiplicative lr decay per epoch (default: {DEFAULTS.lr_decay})")
    group.add_argument('--batch-size', type=int, help="Mini-batch size (default: 16 / 128 / 640)")
    group.add_argument('--granularity', choices=['epoch', 'batch'], help="Count k in epochs or in batches (default: epoch)")
    group.add_argument('--adaptive-k', action='store_true', default=None, help="Double k whenever a projection raises the loss by more than 10%%")
    group.add_argument('--freeze-affine', action='store_true', default=None, help="Keep alpha and gamma at their initial values")
    group.add_argument('--activation', choices=['relu', 'leaky'], help="Basis activation (default: relu)")
    group.add_argument('--leaky-slope', type=float, help=f"Negative slope for --activation leaky (default: {DEFAULTS.leaky_slope})")
    group.add_argument('--t-b', type=float, help="Bias range widening T_b (default: 0 / 0.75 / 0.75)")
    group.add_argument('--n-train', type=int, help="Training points (default: 1600 / 12800 / 12800; 51200 in 2D/3D with --full-scale)")
    group.add_argument('--n-test', type=int, help="Test points (default: 400 / 3200 / 3200; 12800 in 2D/3D with --full-scale)")
    group.add_argument('--desk-scale', type=float, help=f"Factor applied to the desk-scale data sizes (default: {DEFAULTS.desk_scale})")
    group.add_argument('--full-scale', action='store_true', default=None, help="Full-size runs: 6400 epochs, 10 seeds, full data sizes")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help="JSON file or key=value lines; explicit flags override it")
    common.add_argument('--out', dest='output_dir', type=str, help=f"Output directory (default: {DEFAULTS.output_dir})")
    common.add_argument('--log-level', type=str, help=f"Root log level (default: {DEFAULTS.log_level})")

    parser = argparse.ArgumentParser(description="Permutation-trained ReLU networks: constructions, training and sweeps.")
    sub = parser.add_subparsers(dest='command', required=True)

    construct = sub.add_parser('construct', parents=[common], help="Build a network with one of the constructive builders.")
    construct.add_argument('--target', type=str, help=f"Target name (default: {DEFAULTS.target})")
    construct.add_argument('--eps', type=float, help=f"Requested sup error (default: {DEFAULTS.eps})")
    construct.add_argument('--theorem', choices=['1', '2', 'random'], help="1: free alpha/gamma, 2: alpha=0 and gamma=1, random: random initialization (default: 1)")
    construct.add_argument('--delta', type=float, help=f"Allowed failure probability for --theorem random (default: {DEFAULTS.delta})")
    construct.add_argument('--seed', type=int, help=f"First seed for --theorem random (default: {DEFAULTS.seed})")
    construct.add_argument('--max-retries', type=int, help=f"Seeds to try after the first for --theorem random (default: {DEFAULTS.max_retries})")
    construct.add_argument('--width-cap', type=int, help=f"Largest admissible width n (default: {DEFAULTS.width_cap})")
    construct.add_argument('--proved-widths', action='store_true', default=None, help="Enforce the conservative proved width bounds")

    train = sub.add_parser('train', parents=[common], help="Train one network with LaPerm.")
    train.add_argument('--target', type=str, help="Target name (default: sin1d)")
    train.add_argument('--strategy', type=str, help=f"Initialization strategy (default: {DEFAULTS.strategy})")
    train.add_argument('--n', type=int, help=f"Locations per direction (default: {DEFAULTS.n})")
    train.add_argument('--seed', type=int, help=f"Initialization and batching seed (default: {DEFAULTS.seed})")
    _training_options(train)

    sweep = sub.add_parser('sweep', parents=[common], help="Train every target/strategy/width/seed combination.")
    sweep.add_argument('--targets', type=str, help="Comma-separated targets (default: sin1d)")
    sweep.add_argument('--strategies', type=str, help="Comma-separated strategies (default: equidistant)")
    sweep.add_argument('--n', dest='n_list', type=str, help="Comma-separated widths (default: 10,20,40,80,160,320)")
    sweep.add_argument('--seeds', type=int, help="Number of seeds 2022, 3022, ... (default: 3; 10 with --full-scale)")
    sweep.add_argument('--k-list', type=str, help="Comma-separated permutation periods for a period study")
    sweep.add_argument('--with-baseline', action='store_true', default=None, help="Also train every cell without projections")
    sweep.add_argument('--workers', type=int, help="Parallel worker processes (default: number of logical cores)")
    sweep.add_argument('--db-path', type=str, help=f"Progress database (default: {DEFAULTS.db_path})")
    _training_options(sweep)

    rate = sub.add_parser('rate', parents=[common], help="Fit the log-log convergence rate.")
    rate.add_argument('--source', choices=['closed-form', 'sweep'], help="Closed-form step errors or a sweep_results.csv (default: closed-form)")
    rate.add_argument('--results', type=str, help="sweep_results.csv for --source sweep")
    rate.add_argument('--n', dest='n_list', type=str, help="Comma-separated widths for --source closed-form (default: 10,20,40,80,160,320)")

    trace = sub.add_parser('trace', parents=[common], help="Record which coefficients move at each permutation.")
    trace.add_argument('--target', type=str, help="Target name (default: sin1d)")
    trace.add_argument('--strategy', type=str, help=f"Initialization strategy (default: {DEFAULTS.strategy})")
    trace.add_argument('--n', type=int, help="Locations per direction (default: 40)")
    trace.add_argument('--seed', type=int, help=f"Seed (default: {DEFAULTS.seed})")
    trace.add_argument('--events', type=int, help=f"Permutation events to record (default: {DEFAULTS.events})")
    trace.add_argument('--window', type=int, help=f"Events per summary window (default: {DEFAULTS.window})")
    _training_options(trace)
    return parser


def _print_summary(title: str, lines: dict) -> None:
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    for key, value in lines.items():
        print(f"{key:<28} {value}")
    print("=" * 60)


def cmd_construct(cfg: RunConfig) -> None:
    target = get_target(cfg.target)
    f = target.on_unit_interval()
    logger.info(f"Constructing '{target.name}' with theorem {cfg.theorem}, eps={cfg.eps}.")
    if cfg.theorem == "1":
        net, ledger = build_theorem1(f, cfg.eps, cfg.width_cap, cfg.proved_widths)
    elif cfg.theorem == "2":
        net, ledger = build_theorem2(f, cfg.eps, cfg.width_cap, cfg.proved_widths)
    else:
        net, ledger = build_random_with_retries(f, cfg.eps, cfg.delta, cfg.seed, cfg.max_retries, cfg.width_cap)
    ledger.domain_map = target.domain

    os.makedirs(cfg.output_dir, exist_ok=True)
    net.save_json(os.path.join(cfg.output_dir, "network.json"))
    with open(os.path.join(cfg.output_dir, "ledger.json"), "w") as f_out:
        json.dump(ledger.to_dict(), f_out, indent=2)
    budget = pd.DataFrame(sorted(ledger.budget.items()), columns=["term", "value"])
    write_versioned_csv(budget, os.path.join(cfg.output_dir, "error_budget.csv"), *BUDGET_SCHEMA)

    _print_summary(f"Construction summary ({ledger.builder})", {
        "Width n": net.n,
        "Steps J": ledger.J,
        "alpha / gamma": f"{net.alpha:.6g} / {net.gamma:.6g}",
        "Sup error (10001 pts)": f"{ledger.budget['sup_error']:.6g}",
        "Requested eps": cfg.eps,
        "Multiset preserved": net.multiset_preserved(),
    })


def _single_cell(cfg: RunConfig):
    return sweep_cells([cfg.target], [cfg.strategy], [cfg.n], [cfg.seed], cfg)[0]


def cmd_train(cfg: RunConfig) -> None:
    cell = _single_cell(cfg)
    logger.info(f"Training {cell.target} / {cell.strategy} with n={cell.n}, seed={cell.seed}, k={cell.k:g}.")
    report, _, test, target = train_cell(cell)
    grid = eval_grid(report.net, test.x)

    os.makedirs(cfg.output_dir, exist_ok=True)
    report.net.save_json(os.path.join(cfg.output_dir, "network.json"))
    write_versioned_csv(report.history_frame(), os.path.join(cfg.output_dir, "train_history.csv"), *HISTORY_SCHEMA)

    summary = report.summary()
    _print_summary("Training summary", {
        "Target / strategy": f"{cell.target} / {cell.strategy}",
        "Width n": cell.n,
        "Epochs": summary["epochs"],
        "Final train loss": f"{summary['final_loss']:.6g}",
        "Test sup error": f"{sup_error(grid, target):.6g}",
        "Test L2 error": f"{l2_error(grid, target):.6g}",
        "Permutation events": summary["events"],
        "Moved coefficients": summary["moved_total"],
        "Multiset preserved": summary["multiset_preserved"],
    })


def cmd_sweep(cfg: RunConfig) -> None:
    seeds = scale_defaults(1, cfg.full_scale)["seeds"] if cfg.seeds is None else cfg.seeds
    result = run_sweep(cfg.targets, cfg.strategies, cfg.n_list, seeds, cfg)
    result.write(cfg.output_dir)
    if cfg.k_list:
        study = median_errors(result.rows[result.rows["mode"] == "laperm"])
        write_versioned_csv(study, os.path.join(cfg.output_dir, "k_study.csv"), *K_STUDY_SCHEMA)
    lines = {"Cells trained": result.trained, "Cells skipped": result.skipped, "Cells failed": result.failed}
    for fit in result.fits[result.fits["metric"] == "sup_error"].itertuples():
        lines[f"{fit.target}/{fit.strategy}/{fit.mode}/k={fit.k:g}"] = f"slope {fit.slope:.3f} +- {fit.stderr:.3f}"
    _print_summary("Sweep summary", lines)


def cmd_rate(cfg: RunConfig) -> None:
    if cfg.source == "sweep":
        fits = SweepResult.from_csv(cfg.results).fits
    else:
        errors = step_rate_errors(cfg.n_list)
        fit = fit_rate(errors)
        fits = pd.DataFrame([{"target": "unit_step", "strategy": "adjacent_four_pair", "mode": "closed-form",
                              "k": 0.0, "metric": "l2_error", **fit._asdict()}], columns=RATE_COLUMNS)
        for n, e in errors:
            logger.debug(f"n={n}: step L2 error {e:.6g}")
    write_versioned_csv(fits, os.path.join(cfg.output_dir, "rate_fit.csv"), *RATE_SCHEMA)
    _print_summary("Rate fits", {
        f"{row.target}/{row.strategy}/{row.metric}": f"slope {row.slope:.4f} [{row.ci_low:.4f}, {row.ci_high:.4f}]"
        for row in fits.itertuples()
    })


def cmd_trace(cfg: RunConfig) -> None:
    cell = _single_cell(cfg)
    log = TraceLog(n=cell.n, strategy=cell.strategy, seed=cell.seed, max_events=cfg.events)
    train_cell(cell, tracer=log)
    export_csv(log, os.path.join(cfg.output_dir, "trace.csv"))
    windows = summarize(log, cfg.window)
    write_versioned_csv(windows, os.path.join(cfg.output_dir, "trace_summary.csv"), *TRACE_SUMMARY_SCHEMA)
    _print_summary("Trace summary", {
        "Events recorded": len(log.events),
        "Mean moved per event": f"{log.moved_counts.mean():.2f}" if log.events else "n/a",
        "Ever-active components": int(log.ever_active().sum()),
        "Inactive positions stable": log.is_consistent(),
    })


COMMAND_HANDLERS = {
    "construct": cmd_construct,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "rate": cmd_rate,
    "trace": cmd_trace,
}

# Per-command defaults that differ from the RunConfig field defaults
COMMAND_DEFAULTS = {
    "train": {"target": "sin1d"},
    "trace": {"target": "sin1d"},
}


def main(argv=None) -> int:
    """
    Main entry point. Returns the process exit code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    load_dotenv(dotenv_path='config/.env')
    level_name = (args.log_level or os.getenv("PERMNET_LOG_LEVEL") or DEFAULTS.log_level).upper()
    setup_logger(level=getattr(logging, level_name, logging.DEBUG))

    started = time.time()
    try:
        cli_values = {k: v for k, v in vars(args).items() if k not in ('command', 'config')}
        cfg = resolve_config(args.command, cli_values, args.config, COMMAND_DEFAULTS.get(args.command))
        logger.info(f"Running '{cfg.command}' (config hash {cfg.config_hash()}).")
        COMMAND_HANDLERS[cfg.command](cfg)
        write_manifest(cfg.output_dir, cfg, started, argv=sys.argv if argv is None else ['main.py'] + list(argv))
        return 0
    except WidthCapExceeded as e:
        logger.error(f"{e} Raise --width-cap or eps.")
        return 3
    except RetryExhausted as e:
        logger.error(str(e))
        return 4
    except ToleranceNotMet as e:
        logger.error(str(e))
        return 1
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return 2
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
