"""``featrack`` command line: one binary, one subcommand per pipeline step.

Exit codes: 0 success, 2 validation findings, 1 operational error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from pathlib import Path

from . import __version__
from .analysis import execute_query, feedback_pull, load_pull_result, parse_query, report, report_rows
from .collector import FeedbackLog, HttpSink, LogSink, import_events, serve
from .config import ToolConfig, load_config
from .errors import FeatrackError, PullError, TransformError
from .feedbackmodel import has_errors, load_feedback_model_file, validate_feedback_model
from .simulator import load_scenario, run_scenario
from .splmodels import load_configuration, load_feature_model, load_file_index, load_portfolio
from .transform import HitTemplate, derive_variant, load_template

log = logging.getLogger("featrack")

EXIT_OK, EXIT_ERROR, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2, 64
COMMANDS = ("validate", "derive", "serve", "import", "simulate", "query", "pull", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _emit(args, human: str, data: object) -> None:
    if args.json:
        print(json.dumps(data, indent=2, sort_keys=True))
    elif human:
        print(human, end="" if human.endswith("\n") else "\n")


def _need(value, flag: str, key: str):
    if value is None:
        raise FeatrackError(f"{flag} not given and no '{key}' in featrack.toml")
    return value


def _paths(args, cfg: ToolConfig) -> dict:
    return {
        "platform": Path(args.platform) if getattr(args, "platform", None) else cfg.platform,
        "index": Path(args.index) if getattr(args, "index", None) else cfg.file_index,
        "feature_model": Path(args.feature_model) if getattr(args, "feature_model", None) else cfg.feature_model,
        "portfolio": Path(args.portfolio) if getattr(args, "portfolio", None) else cfg.portfolio,
        "log": Path(args.log) if getattr(args, "log", None) else cfg.log,
    }


def _template(args, cfg: ToolConfig) -> HitTemplate:
    prefix = cfg.comment_prefix
    path = getattr(args, "template", None) or cfg.template
    return load_template(path, prefix) if path else HitTemplate(comment_prefix=prefix)


# -- commands ------------------------------------------------------------------


def cmd_validate(args, cfg: ToolConfig) -> int:
    p = _paths(args, cfg)
    platform = _need(p["platform"], "--platform", "platform")
    fm = load_feature_model(_need(p["feature_model"], "--feature-model", "feature_model"))
    index = load_file_index(_need(p["index"], "--index", "file_index"), platform)
    model = load_feedback_model_file(args.feedback)
    diags = validate_feedback_model(model, fm, index, platform, cfg.comment_prefix)
    human = "\n".join(str(d) for d in diags) if diags else "feedback model is valid"
    _emit(args, human, {"diagnostics": [d.to_dict() for d in diags]})
    return EXIT_FINDINGS if has_errors(diags) else EXIT_OK


def cmd_derive(args, cfg: ToolConfig) -> int:
    p = _paths(args, cfg)
    platform = _need(p["platform"], "--platform", "platform")
    fm = load_feature_model(_need(p["feature_model"], "--feature-model", "feature_model"))
    index = load_file_index(_need(p["index"], "--index", "file_index"), platform)
    configuration = load_configuration(args.config, fm)
    tpl = _template(args, cfg)
    model = None
    if args.feedback:
        model = load_feedback_model_file(args.feedback)
        diags = validate_feedback_model(model, fm, index, platform, cfg.comment_prefix)
        if has_errors(diags):
            _emit(args, "\n".join(str(d) for d in diags), {"diagnostics": [d.to_dict() for d in diags]})
            return EXIT_FINDINGS
    try:
        result = derive_variant(
            platform,
            configuration,
            model,
            tpl,
            args.out,
            index,
            portfolio=p["portfolio"],
            config_path=args.config if p["portfolio"] else None,
            force=args.force,
            allow_multi_anchor=args.allow_multi_anchor,
            comment_prefix=cfg.comment_prefix,
        )
    except TransformError as exc:
        problems = [{"kind": pr.kind, "message": pr.message} for pr in exc.problems]
        _emit(args, str(exc), {"problems": problems})
        return EXIT_FINDINGS
    human = f"derived {configuration.variant} into {result.out_dir} ({len(result.retained)} hit lines)"
    _emit(
        args,
        human,
        {
            "variant": configuration.variant,
            "out": str(result.out_dir),
            "injections": [r.to_dict() for r in result.records],
        },
    )
    return EXIT_OK


def _known_metrics(args) -> set[str] | None:
    if not getattr(args, "strict", False):
        return None
    if not args.feedback:
        raise FeatrackError("--strict needs --feedback FILE")
    return load_feedback_model_file(args.feedback).metric_names


def cmd_serve(args, cfg: ToolConfig) -> int:
    log_path = _need(_paths(args, cfg)["log"], "--log", "log")
    server = serve(args.addr or cfg.collector, log_path, known_metrics=_known_metrics(args))

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    print(f"featrack collector listening on {server.url} -> {log_path}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        server.feedback_log.close()
    return EXIT_OK


def cmd_import(args, cfg: ToolConfig) -> int:
    log_path = _need(_paths(args, cfg)["log"], "--log", "log")
    with FeedbackLog(log_path, known_metrics=_known_metrics(args)) as flog:
        count, problems = import_events(flog, args.events_file)
    if problems:
        _emit(args, "\n".join(problems), {"imported": 0, "problems": problems})
        return EXIT_FINDINGS
    _emit(args, f"imported {count} events into {log_path}", {"imported": count, "problems": []})
    return EXIT_OK


def cmd_simulate(args, cfg: ToolConfig) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = type(scenario)(scenario.steps, args.seed, scenario.start, scenario.interval_ms, scenario.jitter_ms)
    tpl = _template(args, cfg)
    if args.endpoint:
        ledger = run_scenario(
            scenario, args.variants, lambda: HttpSink(args.endpoint), tpl, emitters=args.emitters, run_id=args.run_id
        )
    else:
        log_path = _need(_paths(args, cfg)["log"], "--log", "log")
        with FeedbackLog(log_path) as flog:
            ledger = run_scenario(
                scenario, args.variants, lambda: LogSink(flog), tpl, emitters=args.emitters, run_id=args.run_id
            )
    rows = [
        {"variant": v, "category": c, "action": a, "count": n} for (v, c, a), n in sorted(ledger.counts.items())
    ]
    human = "\n".join(f"{r['variant']}\t{r['category']}\t{r['action']}\t{r['count']}" for r in rows)
    _emit(args, human or "no events emitted", {"ledger": rows, "total": ledger.total})
    return EXIT_OK


def _portfolio(args, cfg: ToolConfig, fm=None):
    p = _paths(args, cfg)
    if fm is None:
        fm = load_feature_model(_need(p["feature_model"], "--feature-model", "feature_model"))
    return load_portfolio(_need(p["portfolio"], "--portfolio", "portfolio"), fm)


def cmd_query(args, cfg: ToolConfig) -> int:
    p = _paths(args, cfg)
    q = parse_query(args.query)
    count = execute_query(q, _need(p["log"], "--log", "log"), _portfolio(args, cfg))
    _emit(args, str(count), {"query": str(q), "count": count})
    return EXIT_OK


def cmd_pull(args, cfg: ToolConfig) -> int:
    p = _paths(args, cfg)
    fm = load_feature_model(args.model)
    try:
        result = feedback_pull(fm, _need(p["log"], "--log", "log"), _portfolio(args, cfg, fm), args.out, args.partial)
    except PullError as exc:
        _emit(args, str(exc), {"diagnostics": exc.diagnostics})
        return EXIT_FINDINGS
    for d in result.diagnostics:
        print(f"warning: {d}", file=sys.stderr)
    _emit(args, report(result), {"out": str(args.out), "rows": report_rows(result), "diagnostics": result.diagnostics})
    return EXIT_OK


def cmd_report(args, cfg: ToolConfig) -> int:
    result = load_pull_result(args.pull)
    _emit(args, report(result), {"rows": report_rows(result)})
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--project", help="path to featrack.toml (default: search upward from CWD)")

    parser = _Parser(prog="featrack", description="Feedback-minded derivation and analysis for annotated SPLs.")
    parser.add_argument("--version", action="version", version=f"featrack {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def model_flags(p):
        p.add_argument("--platform", help="platform root directory")
        p.add_argument("--index", help="file index (YAML)")
        p.add_argument("--feature-model", help="feature model (YAML)")

    p = sub.add_parser("validate", parents=[common], help="check a feedback model against the platform")
    model_flags(p)
    p.add_argument("--feedback", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("derive", parents=[common], help="derive a (feedback-minded) variant")
    model_flags(p)
    p.add_argument("--config", required=True, help="configuration model (YAML)")
    p.add_argument("--feedback", help="feedback model (YAML); omit for a plain derivation")
    p.add_argument("--template", help="hit template file")
    p.add_argument("--out", required=True)
    p.add_argument("--portfolio", help="portfolio manifest to update")
    p.add_argument("--force", action="store_true")
    p.add_argument("--allow-multi-anchor", action="store_true")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP collector")
    p.add_argument("--addr", help="HOST:PORT")
    p.add_argument("--log")
    p.add_argument("--strict", action="store_true", help="reject actions that are not metrics of --feedback")
    p.add_argument("--feedback")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("import", parents=[common], help="append a JSON-lines events file to the log")
    p.add_argument("--log")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--feedback")
    p.add_argument("events_file")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("simulate", parents=[common], help="replay a usage scenario against derived variants")
    p.add_argument("--scenario", required=True)
    p.add_argument("--variants", required=True)
    dest = p.add_mutually_exclusive_group(required=True)
    dest.add_argument("--endpoint")
    dest.add_argument("--log")
    p.add_argument("--seed", type=int)
    p.add_argument("--emitters", type=int, default=1)
    p.add_argument("--template")
    p.add_argument("--run-id", help="tag events with ids so retried deliveries are deduplicated")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("query", parents=[common], help="count events matching a query")
    p.add_argument("--log")
    p.add_argument("--portfolio")
    p.add_argument("--feature-model")
    p.add_argument("query")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("pull", parents=[common], help="resolve feedback.* attributes into a cloned model")
    p.add_argument("--model", required=True)
    p.add_argument("--log")
    p.add_argument("--portfolio")
    p.add_argument("--out", required=True)
    p.add_argument("--partial", action="store_true")
    p.set_defaults(func=cmd_pull)

    p = sub.add_parser("report", parents=[common], help="tabulate a pull result")
    p.add_argument("--pull", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("FEATRACK_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser = build_parser()
    first = argv[0] if argv and not argv[0].startswith("-") else None
    if first is not None and first not in COMMANDS:
        sys.stderr.write(f"featrack: unknown command {first!r}\n{parser.format_help()}")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    if args.command is None:
        sys.stderr.write(parser.format_help())
        return EXIT_USAGE
    try:
        cfg = load_config(args.project)
        return args.func(args, cfg)
    except FeatrackError as exc:
        sys.stderr.write(f"featrack: error: {exc}\n")
        return EXIT_ERROR
    except OSError as exc:
        sys.stderr.write(f"featrack: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
