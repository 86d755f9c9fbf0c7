"""Desk-scale execution of derived variants.

Variants are "run" by reading their rendered hit lines rather than executing
host code. A scenario scripts how often each (variant, metric) hit fires; the
simulator emits exactly those events and returns a ground-truth ledger.

Scenario file::

    seed: 7
    start: "2026-01-01T00:00:00Z"   # first client timestamp
    interval_ms: 1000
    jitter_ms: 0
    steps:
      - {variant: V1, metric: DoubleClickEnactment, count: 7}
"""

from __future__ import annotations

import random
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Callable, Protocol

import yaml

from .collector import FeedbackEvent, format_timestamp, parse_timestamp
from .errors import HitParseError, ScenarioError
from .transform import REPORT_NAME, HitTemplate, parse_hit


class Sink(Protocol):
    def send(self, event: FeedbackEvent) -> None: ...

    def close(self) -> None: ...


@dataclass(frozen=True)
class Step:
    variant: str
    metric: str
    count: int


@dataclass(frozen=True)
class UsageScenario:
    steps: tuple[Step, ...]
    seed: int = 0
    start: str = "2026-01-01T00:00:00Z"
    interval_ms: int = 1000
    jitter_ms: int = 0

    def __post_init__(self) -> None:
        for step in self.steps:
            if step.count < 0:
                raise ScenarioError(f"step {step}: repetition count must be >= 0")
        if self.interval_ms < 0 or self.jitter_ms < 0:
            raise ScenarioError("interval_ms and jitter_ms must be >= 0")


@dataclass
class EmissionLedger:
    counts: Counter = field(default_factory=Counter)  # (variant, category, action) -> n

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def for_action(self, action: str, variants: set[str] | None = None) -> int:
        return sum(n for (v, _, a), n in self.counts.items() if a == action and (variants is None or v in variants))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, EmissionLedger):
            return +self.counts == +other.counts
        if isinstance(other, dict):
            return +self.counts == +Counter(other)
        return NotImplemented


def load_scenario(path: Path | str) -> UsageScenario:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    steps = []
    for i, raw in enumerate(data.get("steps") or []):
        if not isinstance(raw, dict) or not {"variant", "metric", "count"} <= set(raw):
            raise ScenarioError(f"{path}: steps[{i}] needs variant, metric and count")
        steps.append(Step(str(raw["variant"]), str(raw["metric"]), int(raw["count"])))
    return UsageScenario(
        tuple(steps),
        seed=int(data.get("seed", 0)),
        start=str(data.get("start", UsageScenario.start)),
        interval_ms=int(data.get("interval_ms", 1000)),
        jitter_ms=int(data.get("jitter_ms", 0)),
    )


def _literal_head(tpl: HitTemplate) -> str:
    return tpl.text.split("{", 1)[0].strip()


def discover_hits(variant_dir: Path | str, tpl: HitTemplate | None = None) -> set[tuple[str, str, str]]:
    """``(category, action, variant)`` for every rendered hit line under ``variant_dir``."""
    tpl = tpl or HitTemplate()
    head = _literal_head(tpl)
    found: set[tuple[str, str, str]] = set()
    for path in sorted(Path(variant_dir).rglob("*")):
        if not path.is_file() or path.name == REPORT_NAME:
            continue
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            continue
        for n, line in enumerate(text.split("\n"), 1):
            try:
                hit = parse_hit(line, tpl)
            except HitParseError as exc:
                raise HitParseError(f"{path}:{n}: {exc}") from None
            if hit is not None:
                found.add(hit)
            elif head and line.strip().startswith(head):
                raise HitParseError(f"{path}:{n}: line looks like a hit but does not match the template")
    return found


def discover_variants(variants_root: Path | str, tpl: HitTemplate | None = None) -> dict[str, set[tuple[str, str]]]:
    """Map variant name to its ``(category, action)`` hits.

    ``variants_root`` is either one derived variant or a directory of them.
    """
    root = Path(variants_root)
    dirs = [root] if (root / REPORT_NAME).exists() else sorted(p for p in root.iterdir() if p.is_dir())
    out: dict[str, set[tuple[str, str]]] = {}
    for d in dirs:
        for category, action, variant in discover_hits(d, tpl):
            out.setdefault(variant, set()).add((category, action))
    return out


def plan_events(
    scenario: UsageScenario, hits: dict[str, set[tuple[str, str]]], run_id: str | None = None
) -> list[FeedbackEvent]:
    """The exact, seeded event sequence a scenario emits. Raises before anything is sent."""
    expanded: list[tuple[str, str, str]] = []
    for step in scenario.steps:
        categories = sorted(c for c, a in hits.get(step.variant, ()) if a == step.metric)
        if not categories:
            raise ScenarioError(f"variant {step.variant!r} has no hit for metric {step.metric!r}")
        if len(categories) > 1:
            raise ScenarioError(f"metric {step.metric!r} of {step.variant!r} appears under several categories")
        expanded.extend([(step.variant, categories[0], step.metric)] * step.count)
    rng = random.Random(scenario.seed)
    rng.shuffle(expanded)
    start = parse_timestamp(scenario.start)
    events = []
    for k, (variant, category, action) in enumerate(expanded):
        offset = k * scenario.interval_ms + (rng.randint(0, scenario.jitter_ms) if scenario.jitter_ms else 0)
        events.append(
            FeedbackEvent(
                category,
                action,
                variant,
                ts=format_timestamp(start + timedelta(milliseconds=offset)),
                client=f"sim-{scenario.seed}",
                id=f"{run_id}:{k}" if run_id else None,
            )
        )
    return events


def run_scenario(
    scenario: UsageScenario,
    variants_root: Path | str,
    sink_factory: Callable[[], Sink],
    tpl: HitTemplate | None = None,
    emitters: int = 1,
    run_id: str | None = None,
) -> EmissionLedger:
    """Emit the scenario through sinks and return what was emitted.

    Events are sharded round-robin over ``emitters`` threads, each with its own
    sink from ``sink_factory``. ``run_id`` tags events with unique ids so a
    collector can discard retried duplicates.
    """
    if emitters < 1:
        raise ScenarioError("emitters must be >= 1")
    events = plan_events(scenario, discover_variants(variants_root, tpl), run_id)
    ledger = EmissionLedger()
    lock = threading.Lock()

    def emit(shard: list[FeedbackEvent]) -> None:
        sink = sink_factory()
        local: Counter = Counter()
        try:
            for event in shard:
                sink.send(event)
                local[(event.variant, event.category, event.action)] += 1
        finally:
            sink.close()
            with lock:
                ledger.counts.update(local)

    if emitters == 1:
        if events:
            emit(events)
        return ledger
    with ThreadPoolExecutor(max_workers=emitters) as pool:
        futures = [pool.submit(emit, events[i::emitters]) for i in range(emitters)]
        for fut in futures:
            fut.result()
    return ledger
