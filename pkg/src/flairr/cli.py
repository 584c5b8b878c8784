"""Command-line entry point.

Subcommands: forecast | refine | bench | ablate | retrieve. Exit codes are
stable: 1 configuration/template problems, 2 data problems, 3 backend
problems, 4 replies still malformed after the retry budget. The API
credential is read only from the ``FLAIRR_API_KEY`` environment variable,
never from a flag, so shell history and logs stay shareable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .backends import (
    Backend,
    HttpBackend,
    RecordingBackend,
    load_script,
)
from .bench import ExperimentConfig, run_ablation, run_experiment
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    ParseRetryError,
    TemplateError,
)
from .prompts import DatasetMeta, TemplateLibrary, format_numbers
from .retrieval import build_hist_db, retrieve
from .series import WindowPair, load_csv
from .session import (
    SessionConfig,
    forecast_reply_for,
    run_session,
)
from .testing import SyntheticOracleBackend

__all__ = ["build_parser", "main", "entrypoint"]


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; the default of 2 is reserved for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("backend")
    group.add_argument(
        "--backend",
        choices=("scripted", "http", "oracle"),
        default="oracle",
        help="completion source",
    )
    group.add_argument("--script", help="JSON-lines script for --backend scripted")
    group.add_argument("--endpoint", help="chat-completion URL for --backend http")
    group.add_argument("--model", help="model name for --backend http")
    group.add_argument(
        "--timeout", type=float, default=120.0, help="HTTP timeout in seconds"
    )
    group.add_argument(
        "--record", help="append every request/reply pair to this JSON-lines file"
    )


def _make_backend(args) -> Backend:
    if args.backend == "scripted":
        if not args.script:
            raise ConfigError("--backend scripted requires --script")
        backend: Backend = load_script(args.script)
    elif args.backend == "http":
        if not args.endpoint or not args.model:
            raise ConfigError("--backend http requires --endpoint and --model")
        backend = HttpBackend(args.endpoint, args.model, timeout_s=args.timeout)
    else:
        backend = SyntheticOracleBackend(seed=getattr(args, "seed", 0) or 0)
    if args.record:
        backend = RecordingBackend(backend, args.record)
    return backend


def _add_data_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--data", required=required, help="CSV file with a header row")
    parser.add_argument("--target", required=required, help="column to forecast")
    parser.add_argument(
        "--timestamp-column",
        help="timestamp column name (default: auto-detect a non-numeric first column)",
    )


def _add_session_flags(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--context", type=int, default=96, help="context length L")
    parser.add_argument("--horizon", type=int, required=required, help="forecast horizon H")
    parser.add_argument("--m", type=int, default=2, help="retrieved analog count M")
    parser.add_argument(
        "--precision", type=int, default=4, help="decimal places in prompts"
    )
    parser.add_argument("--seed", type=int, default=0, help="session seed")
    parser.add_argument(
        "--no-retrieval",
        action="store_true",
        help="disable analog retrieval",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="flairr",
        description=(
            "Test-time prompt optimization for LLM time-series forecasting: "
            "analog retrieval, a forecaster/refiner agent loop, and a "
            "benchmark harness."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    formatter = argparse.ArgumentDefaultsHelpFormatter

    p_forecast = sub.add_parser(
        "forecast",
        help="single-shot forecast with a strategy prompt",
        formatter_class=formatter,
    )
    # Data and horizon flags stay optional at the parser level so that
    # `forecast --list-strategies` works on its own; cmd_forecast enforces
    # them for actual forecasts.
    _add_data_flags(p_forecast, required=False)
    _add_session_flags(p_forecast, required=False)
    p_forecast.add_argument(
        "--strategy",
        default="simple",
        help="strategy template name (see `flairr forecast --list-strategies`)",
    )
    p_forecast.add_argument(
        "--list-strategies",
        action="store_true",
        help="print available strategy names and exit",
    )
    _add_backend_flags(p_forecast)
    p_forecast.set_defaults(func=cmd_forecast)

    p_refine = sub.add_parser(
        "refine",
        help="run a refinement session and print the selected prompt",
        formatter_class=formatter,
    )
    _add_data_flags(p_refine)
    _add_session_flags(p_refine)
    p_refine.add_argument(
        "--max-iter", type=int, default=5, help="maximum refinement iterations"
    )
    p_refine.add_argument(
        "--stop-threshold",
        type=float,
        default=5.0,
        help="MAE-reduction percentage below which the refiner stops",
    )
    p_refine.add_argument(
        "--samples", type=int, default=3, help="validation windows per iteration"
    )
    p_refine.add_argument(
        "--strategy", default=None, help="optional strategy template name"
    )
    p_refine.add_argument(
        "--out", default="flairr-out", help="directory for the session log"
    )
    _add_backend_flags(p_refine)
    p_refine.set_defaults(func=cmd_refine)

    p_bench = sub.add_parser(
        "bench",
        help="run the experiment grid from a JSON config",
        formatter_class=formatter,
    )
    p_bench.add_argument("--config", required=True, help="experiment JSON config")
    p_bench.add_argument("--runs", type=int, help="override the config run count")
    p_bench.add_argument("--out", help="override the config output directory")
    p_bench.add_argument("--seed", type=int, help="override the config seed")
    p_bench.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    _add_backend_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_ablate = sub.add_parser(
        "ablate",
        help="run the four-condition ablation from a JSON config",
        formatter_class=formatter,
    )
    p_ablate.add_argument("--config", required=True, help="experiment JSON config")
    p_ablate.add_argument("--runs", type=int, help="override the config run count")
    p_ablate.add_argument("--out", help="override the config output directory")
    p_ablate.add_argument("--seed", type=int, help="override the config seed")
    p_ablate.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    _add_backend_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_retrieve = sub.add_parser(
        "retrieve",
        help="print the most similar historical windows as CSV",
        formatter_class=formatter,
    )
    _add_data_flags(p_retrieve)
    p_retrieve.add_argument("--context", type=int, default=96, help="context length L")
    p_retrieve.add_argument(
        "--horizon", type=int, required=True, help="outcome length H"
    )
    p_retrieve.add_argument("--m", type=int, default=2, help="analog count M")
    p_retrieve.add_argument(
        "--t",
        type=int,
        default=None,
        help="forecast origin index (default: the end of the series)",
    )
    p_retrieve.add_argument(
        "--precision", type=int, default=4, help="decimal places in the output"
    )
    p_retrieve.set_defaults(func=cmd_retrieve)

    return parser


def _meta_from_args(args) -> DatasetMeta:
    return DatasetMeta(
        name=Path(args.data).stem,
        description="a time series dataset",
        target=args.target,
    )


def cmd_forecast(args) -> int:
    library = TemplateLibrary.builtin()
    if args.list_strategies:
        for name in library.list_asps():
            print(name)
        return 0
    missing = [
        flag
        for flag, value in (
            ("--data", args.data),
            ("--target", args.target),
            ("--horizon", args.horizon),
        )
        if value is None
    ]
    if missing:
        raise ConfigError(f"forecast requires {', '.join(missing)}")
    library.get_asp(args.strategy)  # fail fast with the listing on a typo
    series = load_csv(args.data, args.target, timestamp_column=args.timestamp_column)
    values = np.asarray(series.target_values)
    cfg = SessionConfig(
        context_length=args.context,
        horizon=args.horizon,
        analog_count=args.m,
        retrieval_enabled=not args.no_retrieval,
        precision=args.precision,
        seed=args.seed,
    )
    if values.size < cfg.context_length + 1:
        raise DataError(
            f"series of length {values.size} is shorter than context {cfg.context_length}"
        )
    backend = _make_backend(args)
    context = values[-cfg.context_length :]
    window = WindowPair(
        context=context, truth=np.zeros(cfg.horizon), origin=values.size
    )
    db = None
    if cfg.retrieval_enabled:
        db = build_hist_db(
            values[: values.size - cfg.context_length], cfg.context_length, cfg.horizon
        )
    reply = forecast_reply_for(
        window,
        cfg,
        db,
        backend,
        library=library,
        meta=_meta_from_args(args),
        strategy=args.strategy,
    )
    print(f"predicted_values: [{format_numbers(reply.values, args.precision)}]")
    if reply.reasoning:
        print(f"reasoning: {reply.reasoning}")
    if reply.certainty is not None:
        print(f"certainty: {reply.certainty:g}%")
    if reply.certainty_reasoning:
        print(f"certainty_reasoning: {reply.certainty_reasoning}")
    return 0


def cmd_refine(args) -> int:
    series = load_csv(args.data, args.target, timestamp_column=args.timestamp_column)
    cfg = SessionConfig(
        context_length=args.context,
        horizon=args.horizon,
        analog_count=args.m,
        max_iterations=args.max_iter,
        stop_threshold_pct=args.stop_threshold,
        sample_size=args.samples,
        precision=args.precision,
        retrieval_enabled=not args.no_retrieval,
        seed=args.seed,
    )
    backend = _make_backend(args)
    out_dir = Path(args.out)
    log_path = out_dir / "session.jsonl"
    result = run_session(
        cfg,
        np.asarray(series.target_values),
        backend,
        library=TemplateLibrary.builtin(),
        meta=_meta_from_args(args),
        strategy=args.strategy,
        log_path=log_path,
    )
    print(f"session_log: {log_path}")
    print(f"early_stop: {'true' if result.early_stop else 'false'}")
    print(f"iterations_used: {result.iterations_used}")
    print(f"best_iteration: {result.best_iteration + 1}")
    print(f"best_mae: {result.best_mae!r}")
    if result.final_instructions is None:
        print("selected_instructions: (base prompt, no added instructions)")
    else:
        print("selected_instructions:")
        print(result.final_instructions.render())
    return 0


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.runs is not None:
        updates["runs"] = args.runs
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.seed is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(cfg, **updates) if updates else cfg


def cmd_bench(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.from_json(args.config), args)
    backend = _make_backend(args)
    rows, run_dir = run_experiment(cfg, backend, jobs=args.jobs)
    print(f"run_dir: {run_dir}")
    print(f"report: {run_dir / 'report.csv'}")
    for row in rows:
        print(
            f"{row.dataset} h={row.horizon} {row.method}: "
            f"median MAE {row.median_mae!r} over {len(row.run_maes)} runs"
        )
    return 0


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.from_json(args.config), args)
    backend = _make_backend(args)
    rows, run_dir = run_ablation(cfg, backend, jobs=args.jobs)
    print(f"run_dir: {run_dir}")
    print(f"report: {run_dir / 'ablation.csv'}")
    for row in rows:
        print(
            f"{row.dataset} h={row.horizon} {row.method}: "
            f"median MAE {row.median_mae!r} over {len(row.run_maes)} runs"
        )
    return 0


def cmd_retrieve(args) -> int:
    series = load_csv(args.data, args.target, timestamp_column=args.timestamp_column)
    values = np.asarray(series.target_values)
    t = args.t if args.t is not None else values.size
    if t - args.context < 0 or t > values.size:
        raise DataError(
            f"origin {t} does not leave room for a context of {args.context} "
            f"in a series of length {values.size}"
        )
    context = values[t - args.context : t]
    db = build_hist_db(values[: t - args.context], args.context, args.horizon)
    segments = retrieve(db, context, args.m)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["rank", "start", "score", "context", "outcome"])
    for rank, seg in enumerate(segments, start=1):
        writer.writerow(
            [
                rank,
                seg.start,
                repr(seg.score),
                format_numbers(seg.context, args.precision),
                format_numbers(seg.outcome, args.precision),
            ]
        )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, TemplateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ParseRetryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())
