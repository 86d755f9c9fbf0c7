"""Counting queries over the feedback log and the feedback pull onto a feature model.

A query is written ``count(action=<metric>[, category="..."][, context=<expr>]
[, since=<ISO-8601>][, until=<ISO-8601>])``. Feature attributes whose name
starts with ``feedback.`` hold such queries; the pull executes them and writes
a clone of the model where those values become decimal counts.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

import yaml

from .collector import FeedbackEvent, format_timestamp, parse_timestamp, read_log
from .errors import ExpressionSyntaxError, PullError, QueryError
from .expr import ALL, FeatureExpression, canonical_text, features_of, parse_context
from .splmodels import (
    FeatureModel,
    PortfolioManifest,
    feature_model_from_dict,
    feature_model_to_dict,
    resolve_context,
)

FEEDBACK_PREFIX = "feedback."
QUERY_KEYS = ("action", "category", "context", "since", "until")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class FeedbackQuery:
    action: str
    category: str | None = None
    context: FeatureExpression | None = None
    since: datetime | None = None
    until: datetime | None = None

    def __str__(self) -> str:
        parts = [f"action={self.action}"]
        if self.category is not None:
            escaped = self.category.replace("\\", "\\\\").replace('"', '\\"')
            parts.append(f'category="{escaped}"')
        if self.context is not None:
            parts.append(f"context={canonical_text(self.context)}")
        if self.since is not None:
            parts.append(f"since={format_timestamp(self.since)}")
        if self.until is not None:
            parts.append(f"until={format_timestamp(self.until)}")
        return f"count({', '.join(parts)})"


def _split_arguments(text: str, full: str) -> list[str]:
    parts, depth, quoted, escape, start = [], 0, False, False, 0
    for i, ch in enumerate(text):
        if quoted:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                quoted = False
            continue
        if ch == '"':
            quoted = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise QueryError(f"unbalanced ')' in query {full!r}")
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if quoted:
        raise QueryError(f"unterminated string in query {full!r}")
    if depth:
        raise QueryError(f"unbalanced '(' in query {full!r}")
    parts.append(text[start:])
    return parts


def _unquote(value: str, full: str) -> str:
    if value.startswith('"'):
        if len(value) < 2 or not value.endswith('"'):
            raise QueryError(f"malformed string {value!r} in query {full!r}")
        return re.sub(r"\\(.)", r"\1", value[1:-1])
    return value


def parse_query(text: str) -> FeedbackQuery:
    """Parse a ``count(...)`` query; unknown or repeated keys are rejected."""
    if not text or not text.strip():
        raise QueryError("empty query")
    m = re.fullmatch(r"\s*count\s*\((.*)\)\s*", text, re.DOTALL)
    if not m:
        raise QueryError(f"query must have the form count(action=..., ...): {text!r}")
    inner = m.group(1)
    args: dict[str, str] = {}
    if inner.strip():
        for part in _split_arguments(inner, text):
            key, sep, value = part.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise QueryError(f"expected key=value, got {part.strip()!r} in {text!r}")
            if key not in QUERY_KEYS:
                raise QueryError(f"unknown query key {key!r} (allowed: {', '.join(QUERY_KEYS)})")
            if key in args:
                raise QueryError(f"repeated query key {key!r}")
            if not value:
                raise QueryError(f"empty value for {key!r}")
            args[key] = value
    if "action" not in args:
        raise QueryError(f"action required in {text!r}")
    action = args["action"]
    if not _IDENT.match(action):
        raise QueryError(f"action must be a metric identifier, got {action!r}")
    category = _unquote(args["category"], text) if "category" in args else None
    try:
        context = parse_context(args["context"]) if "context" in args else None
    except ExpressionSyntaxError as exc:
        raise QueryError(f"bad context in {text!r}: {exc}") from None
    window = {}
    for key in ("since", "until"):
        if key in args:
            try:
                window[key] = parse_timestamp(_unquote(args[key], text))
            except ValueError:
                raise QueryError(f"bad timestamp for {key}: {args[key]!r}") from None
    if "since" in window and "until" in window and window["since"] > window["until"]:
        raise QueryError("since must not be later than until")
    return FeedbackQuery(action, category, context, window.get("since"), window.get("until"))


def execute_query(q: FeedbackQuery, events: Iterable[FeedbackEvent] | Path | str, portfolio: PortfolioManifest) -> int:
    """Count matching events. The time window is inclusive and applies to receipt timestamps."""
    if isinstance(events, (str, Path)):
        events = read_log(events)
    variants: set[str] | None = None
    if q.context is not None:
        fm = portfolio.feature_model
        if fm is not None:
            unknown = features_of(q.context) - set(fm.feature_names)
            if unknown:
                raise QueryError(f"context names unknown feature(s) {sorted(unknown)}")
        variants = resolve_context(q.context, portfolio)
    count = 0
    for ev in events:
        if ev.action != q.action:
            continue
        if q.category is not None and ev.category != q.category:
            continue
        if variants is not None and ev.variant not in variants:
            continue
        if q.since is not None or q.until is not None:
            when = ev.recv_datetime
            if when is None:
                continue
            if q.since is not None and when < q.since:
                continue
            if q.until is not None and when > q.until:
                continue
        count += 1
    return count


# -- feedback pull ---------------------------------------------------------


@dataclass
class PullResult:
    model: FeatureModel
    counts: dict[tuple[str, str], int] = field(default_factory=dict)
    queries: dict[tuple[str, str], str] = field(default_factory=dict)
    pulled_at: str = ""
    diagnostics: list[str] = field(default_factory=list)


def find_feedback_attributes(fm: FeatureModel) -> list[tuple[str, str, str]]:
    """``(feature, attribute, query text)`` for every ``feedback.``-prefixed attribute, in model order."""
    return [
        (node.name, attr.name, attr.value)
        for node, _ in fm.walk()
        for attr in node.attributes
        if attr.name.startswith(FEEDBACK_PREFIX)
    ]


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def dump_pull_result(pr: PullResult) -> str:
    data = feature_model_to_dict(pr.model)
    data["pull"] = {
        "pulled_at": pr.pulled_at,
        "resolved": [
            {"feature": f, "attribute": a, "query": pr.queries.get((f, a), ""), "count": n}
            for (f, a), n in pr.counts.items()
        ],
    }
    return yaml.safe_dump(data, sort_keys=False, allow_unicode=True, width=1000)


def load_pull_result(path: Path | str) -> PullResult:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    model = feature_model_from_dict(data, str(path))
    meta = data.get("pull") or {}
    counts, queries = {}, {}
    for item in meta.get("resolved") or []:
        key = (item["feature"], item["attribute"])
        counts[key] = int(item["count"])
        queries[key] = item.get("query", "")
    return PullResult(model, counts, queries, str(meta.get("pulled_at", "")))


def feedback_pull(
    fm: FeatureModel,
    log: Iterable[FeedbackEvent] | Path | str,
    portfolio: PortfolioManifest,
    out_path: Path | str | None = None,
    partial: bool = False,
) -> PullResult:
    """Resolve every ``feedback.`` attribute and return (and optionally persist) the clone.

    Any attribute whose query does not parse or run is a diagnostic; unless
    ``partial`` is set the whole pull then fails and nothing is written.
    With ``partial`` the offending attributes keep their original value.
    """
    events = read_log(log) if isinstance(log, (str, Path)) else list(log)
    counts: dict[tuple[str, str], int] = {}
    queries: dict[tuple[str, str], str] = {}
    diagnostics: list[str] = []
    for feature, attribute, text in find_feedback_attributes(fm):
        try:
            q = parse_query(text)
            counts[(feature, attribute)] = execute_query(q, events, portfolio)
            queries[(feature, attribute)] = text
        except QueryError as exc:
            diagnostics.append(f"feature {feature!r} attribute {attribute!r}: {exc}")
    if diagnostics and not partial:
        raise PullError(diagnostics)
    clone = fm.with_attribute_values({key: str(n) for key, n in counts.items()})
    pulled_at = format_timestamp(datetime.now(timezone.utc))
    result = PullResult(clone, counts, queries, pulled_at, diagnostics)
    if out_path is not None:
        _write_atomic(Path(out_path), dump_pull_result(result))
    return result


def report_rows(pr: PullResult) -> list[dict]:
    rows = [
        {
            "feature": feature,
            "metric": attribute[len(FEEDBACK_PREFIX):],
            "count": count,
            "pulled_at": pr.pulled_at,
        }
        for (feature, attribute), count in pr.counts.items()
    ]
    rows.sort(key=lambda r: (r["feature"], r["metric"]))
    return rows


def report(pr: PullResult) -> str:
    """Plain-text table, one row per resolved attribute, sorted by feature then metric."""
    header = ("feature", "metric", "count", "pulled_at")
    rows = [(r["feature"], r["metric"], str(r["count"]), r["pulled_at"]) for r in report_rows(pr)]
    widths = [max([len(h)] + [len(row[i]) for row in rows]) for i, h in enumerate(header)]

    def fmt(cells) -> str:
        return "  ".join(
            c.rjust(w) if i == 2 else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths))
        ).rstrip()

    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"


__all__ = [
    "ALL",
    "FEEDBACK_PREFIX",
    "FeedbackQuery",
    "PullResult",
    "dump_pull_result",
    "execute_query",
    "feedback_pull",
    "find_feedback_attributes",
    "load_pull_result",
    "parse_query",
    "report",
    "report_rows",
]
