"""Two-step product derivation: feedback transformation, then pre-compilation.

The feedback transformation copies the platform and injects one rendered hit
line right after the anchored line of every pointcut, inside each block whose
effective condition holds the goal's target. The pre-compilation step then
filters blocks against the configuration, so hits in dropped blocks vanish
with them.
"""

from __future__ import annotations

import json
import logging
import re
import shutil
import tempfile
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from .annotation import DEFAULT_COMMENT_PREFIX, classify_line, preprocess, scan_blocks, split_lines
from .errors import HitParseError, OutputExistsError, ScanError, TemplateError, TransformError, TransformProblem
from .expr import canonical_text, eval_mention, eval_selection
from .feedbackmodel import FeedbackModel, anchor_matches
from .splmodels import ConfigurationModel, FileIndex, register_variant

log = logging.getLogger(__name__)

PLACEHOLDERS = ("{category}", "{action}", "{variant}")
DEFAULT_TEMPLATE = 'featrack_hit("{category}","{action}","{variant}");'
GA_TEMPLATE = 'ga("send", "event", "{category}", "{action}", "{variant}");'
REPORT_NAME = "injections.report"


@dataclass(frozen=True)
class HitTemplate:
    text: str = DEFAULT_TEMPLATE
    comment_prefix: str = DEFAULT_COMMENT_PREFIX

    def __post_init__(self) -> None:
        if "\n" in self.text or "\r" in self.text:
            raise TemplateError("hit template must be a single line")
        for ph in PLACEHOLDERS:
            count = self.text.count(ph)
            if count != 1:
                raise TemplateError(f"hit template must contain {ph} exactly once (found {count})")
        try:
            kind, _ = classify_line(self.text, self.comment_prefix)
        except ScanError:
            kind = "directive"
        if kind != "code":
            raise TemplateError("hit template must not look like a variability directive")

    @property
    def pattern(self) -> re.Pattern:
        return _template_regex(self.text)


def load_template(path: Path | str, comment_prefix: str = DEFAULT_COMMENT_PREFIX) -> HitTemplate:
    text = Path(path).read_text(encoding="utf-8").rstrip("\r\n")
    return HitTemplate(text, comment_prefix)


def _escape(value: str) -> str:
    return value.replace('"', '\\"')


def render_hit(tpl: HitTemplate, category: str, action: str, variant: str) -> str:
    """Substitute the three placeholders; ``"`` in values becomes ``\\"``."""
    values = {"{category}": category, "{action}": action, "{variant}": variant}
    # single left-to-right pass so substituted values are never re-scanned
    return re.sub(r"\{category\}|\{action\}|\{variant\}", lambda m: _escape(values[m.group()]), tpl.text)


_template_cache: dict[str, re.Pattern] = {}


def _template_regex(text: str) -> re.Pattern:
    if text not in _template_cache:
        parts = re.split(r"(\{category\}|\{action\}|\{variant\})", text)
        out = [r"^\s*"]
        for part in parts:
            if part in PLACEHOLDERS:
                out.append(rf'(?P<{part[1:-1]}>(?:\\"|[^"])*?)')
            else:
                out.append(re.escape(part))
        out.append(r"\s*$")
        _template_cache[text] = re.compile("".join(out))
    return _template_cache[text]


def parse_hit(line: str, tpl: HitTemplate) -> tuple[str, str, str] | None:
    """Inverse of :func:`render_hit` for one source line; ``None`` if it is not a hit."""
    m = tpl.pattern.match(line.rstrip("\r\n"))
    if not m:
        return None
    fields = tuple(m.group(k).replace('\\"', '"') for k in ("category", "action", "variant"))
    if not all(fields):
        raise HitParseError(f"hit line with empty field: {line.strip()!r}")
    return fields  # type: ignore[return-value]


@dataclass(frozen=True)
class InjectionRecord:
    goal: str
    metric: str
    path: str
    line: int  # index in the instrumented file
    hit: str
    category: str
    variant: str
    retained: bool | None = None  # filled in by derive_variant

    def to_dict(self) -> dict:
        return asdict(self)


def _read(path: Path) -> str:
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def applicable_goals(model: FeedbackModel, cfg: ConfigurationModel):
    """Goals whose context and target both hold for the variant."""
    for goal in model.goals:
        in_context = goal.context is None or eval_selection(goal.context, cfg.selection)
        if in_context and eval_selection(goal.target, cfg.selection):
            yield goal


def plan_injections(
    platform_root: Path | str,
    model: FeedbackModel,
    cfg: ConfigurationModel,
    tpl: HitTemplate,
    index: FileIndex,
    allow_multi_anchor: bool = False,
) -> dict[str, list[tuple[int, str, str, str]]]:
    """Compute ``path -> [(anchor_line, hit, goal, metric), ...]`` against the original files.

    Raises :class:`TransformError` listing every failing pointcut.
    """
    platform_root = Path(platform_root)
    problems: list[TransformProblem] = []
    plan: dict[str, list[tuple[int, str, str, str]]] = {}
    cache: dict[str, tuple[list[str], list]] = {}

    for goal in applicable_goals(model, cfg):
        category = canonical_text(goal.target)
        for metric in goal.metrics:
            hit = render_hit(tpl, category, metric.name, cfg.variant)
            for pc in metric.pointcuts:
                where = f"goal {goal.name!r} metric {metric.name!r} pointcut {pc.file_name}@{pc.path}"
                entry = index.lookup(pc.file_name, pc.path)
                if entry is None:
                    problems.append(TransformProblem("unknown-file", f"{where}: not in the file index"))
                    continue
                if entry.path not in cache:
                    source = _read(platform_root / entry.path)
                    cache[entry.path] = (split_lines(source), scan_blocks(source, tpl.comment_prefix, entry.path))
                lines, blocks = cache[entry.path]
                sites: list[int] = []
                ambiguous = False
                for block in blocks:
                    if not eval_mention(goal.target, block.mentions):
                        continue
                    found = anchor_matches(block, lines, pc.anchor)
                    if len(found) > 1 and not allow_multi_anchor:
                        problems.append(
                            TransformProblem(
                                "ambiguous-anchor",
                                f"{where}: anchor {pc.anchor.strip()!r} matches lines "
                                f"{[i + 1 for i in found]} of the block at line {block.open_line + 1}",
                            )
                        )
                        ambiguous = True
                        continue
                    sites.extend(found)
                if not sites and not ambiguous:
                    problems.append(
                        TransformProblem(
                            "anchor-not-found",
                            f"{where}: anchor {pc.anchor.strip()!r} not found in any block holding {category}",
                        )
                    )
                for line in sites:
                    plan.setdefault(entry.path, []).append((line, hit, goal.name, metric.name))
    if problems:
        raise TransformError(problems)
    return plan


def _apply(lines: list[str], inserts: list[tuple[int, str, str, str]], path: str, category_of, variant: str):
    by_line: dict[int, list[tuple[str, str, str]]] = {}
    for line, hit, goal, metric in inserts:
        by_line.setdefault(line, []).append((hit, goal, metric))
    out: list[str] = []
    records: list[InjectionRecord] = []
    for i, line in enumerate(lines):
        out.append(line)
        for hit, goal, metric in by_line.get(i, ()):
            indent = line[: len(line) - len(line.lstrip(" \t"))]
            ending = line[len(line.rstrip("\r\n")) :] or "\n"
            records.append(InjectionRecord(goal, metric, path, len(out), indent + hit, category_of[goal], variant))
            out.append(indent + hit + ending)
    return out, records


def feedback_transform(
    platform_root: Path | str,
    model: FeedbackModel,
    cfg: ConfigurationModel,
    tpl: HitTemplate,
    index: FileIndex,
    dest: Path | str | None = None,
    allow_multi_anchor: bool = False,
) -> tuple[Path, list[InjectionRecord]]:
    """Copy the platform to ``dest`` (a fresh temp dir by default) and inject hits there.

    The original platform is never modified. Returns the instrumented copy and
    the injection records sorted by ``(path, line)``.
    """
    platform_root = Path(platform_root)
    plan = plan_injections(platform_root, model, cfg, tpl, index, allow_multi_anchor)
    if dest is None:
        dest = Path(tempfile.mkdtemp(prefix="featrack-"))
        shutil.rmtree(dest)
    dest = Path(dest)
    shutil.copytree(platform_root, dest, copy_function=shutil.copyfile)

    category_of = {g.name: canonical_text(g.target) for g in model.goals}
    records: list[InjectionRecord] = []
    for path in sorted(plan):
        lines = split_lines(_read(platform_root / path))
        out, recs = _apply(lines, plan[path], path, category_of, cfg.variant)
        _write(dest / path, "".join(out))
        records.extend(recs)
    records.sort(key=lambda r: (r.path, r.line))
    log.info("injected %d hits for variant %s", len(records), cfg.variant)
    return dest, records


@dataclass
class Derivation:
    out_dir: Path
    records: list[InjectionRecord]

    @property
    def retained(self) -> list[InjectionRecord]:
        return [r for r in self.records if r.retained]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def _retained(source: str, line: int, cfg: ConfigurationModel, comment_prefix: str) -> bool:
    innermost = None
    for block in scan_blocks(source, comment_prefix):
        if block.open_line < line < block.close_line:
            innermost = block
    return innermost is None or eval_selection(innermost.effective_condition, cfg.selection)


def derive_variant(
    platform_root: Path | str,
    cfg: ConfigurationModel,
    model: FeedbackModel | None,
    tpl: HitTemplate | None,
    out_dir: Path | str,
    index: FileIndex,
    portfolio: Path | str | None = None,
    config_path: Path | str | None = None,
    force: bool = False,
    allow_multi_anchor: bool = False,
    comment_prefix: str | None = None,
) -> Derivation:
    """Derive one (feedback-minded) variant into ``out_dir``.

    Indexed files go through the pre-compilation filter, all other files are
    copied verbatim. ``injections.report`` is written next to the variant
    sources and, when ``portfolio`` is given, the variant is registered there
    with a derivation timestamp.
    """
    platform_root = Path(platform_root).resolve()
    out_dir = Path(out_dir).resolve()
    tpl = tpl or HitTemplate(comment_prefix=comment_prefix or DEFAULT_COMMENT_PREFIX)
    prefix = comment_prefix or tpl.comment_prefix
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise OutputExistsError(f"output directory {out_dir} is not empty (use --force to overwrite)")
        shutil.rmtree(out_dir)
    indexed = set(index.paths)

    with tempfile.TemporaryDirectory(prefix="featrack-derive-") as tmp:
        if model is not None:
            source_root, records = feedback_transform(
                platform_root, model, cfg, tpl, index, Path(tmp) / "platform", allow_multi_anchor
            )
        else:
            source_root, records = platform_root, []

        retained_records = []
        cached: dict[str, str] = {}
        for rec in records:
            text = cached.setdefault(rec.path, _read(source_root / rec.path))
            retained_records.append(
                InjectionRecord(**{**asdict(rec), "retained": _retained(text, rec.line, cfg, prefix)})
            )

        out_dir.mkdir(parents=True, exist_ok=True)
        for src in sorted(source_root.rglob("*")):
            if not src.is_file():
                continue
            rel = src.relative_to(source_root).as_posix()
            if out_dir in (platform_root / rel).resolve().parents:
                continue
            target = out_dir / rel
            if rel in indexed:
                _write(target, preprocess(_read(src), cfg.selection, prefix))
            else:
                target.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, target)

    report = {
        "variant": cfg.variant,
        "injections": [r.to_dict() for r in retained_records],
    }
    _write(out_dir / REPORT_NAME, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if portfolio is not None:
        if config_path is None:
            raise ValueError("config_path is required to register the variant in a portfolio")
        register_variant(portfolio, cfg.variant, config_path, _utc_now())
    return Derivation(out_dir, retained_records)


def read_injection_report(path: Path | str) -> list[InjectionRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_NAME
    data = json.loads(path.read_text(encoding="utf-8"))
    return [InjectionRecord(**item) for item in data["injections"]]
