"""The feedback model: goals refined into questions, metrics and pointcuts, written in YAML.

.. code-block:: yaml

    goals:
      - name: CommentingUsage
        audience: Control Board
        purpose: scoping & optimization
        target: Commenting
        context: Highlighting OR Emailing     # or ALL / omitted
        questions:
          - id: Q1
            text: How is Commenting used?
            metrics:
              - name: QueryGoogleScholarHappened
                pointcuts:
                  - {fileName: Commenting.js, path: src/Commenting.js, anchor: "queryGoogleScholar("}

``audience`` and ``purpose`` are kept verbatim for documentation; only
``target``, ``context`` and the pointcuts drive the transformation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .annotation import DEFAULT_COMMENT_PREFIX, IfdefBlock, line_content, scan_blocks, split_lines
from .errors import ExpressionSyntaxError, FeedbackModelError, ScanError
from .expr import ALL, FeatureExpression, canonical_text, eval_mention, features_of, parse_context, parse_expr
from .splmodels import FeatureModel, FileIndex


@dataclass(frozen=True)
class Pointcut:
    file_name: str
    path: str
    anchor: str


@dataclass(frozen=True)
class Metric:
    name: str
    pointcuts: tuple[Pointcut, ...]


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    metrics: tuple[Metric, ...]


@dataclass(frozen=True)
class Goal:
    name: str
    target: FeatureExpression
    context: FeatureExpression | None  # None means the whole portfolio
    questions: tuple[Question, ...]
    audience: str = ""
    purpose: str = ""

    @property
    def metrics(self) -> list[Metric]:
        return [m for q in self.questions for m in q.metrics]


@dataclass(frozen=True)
class FeedbackModel:
    goals: tuple[Goal, ...]

    @property
    def metric_names(self) -> set[str]:
        return {m.name for g in self.goals for m in g.metrics}

    def goal_of_metric(self, name: str) -> Goal | None:
        for goal in self.goals:
            if any(m.name == name for m in goal.metrics):
                return goal
        return None


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.location}: {self.message} [{self.code}]"

    def to_dict(self) -> dict:
        return {"severity": self.severity, "code": self.code, "location": self.location, "message": self.message}


def anchor_matches(block: IfdefBlock, lines: list[str], anchor: str) -> list[int]:
    """Lines owned directly by ``block`` (not by nested blocks) that contain the anchor.

    Matching is an exact substring test against the line with trailing
    whitespace removed; the anchor itself is trimmed on both sides.
    """
    needle = anchor.strip()
    return [i for i in block.own_lines if needle in line_content(lines[i]).rstrip()]


# -- loading -------------------------------------------------------------------


def _require(mapping: dict, key: str, where: str) -> object:
    if key not in mapping or mapping[key] is None:
        raise FeedbackModelError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _check_keys(mapping: object, allowed: set[str], where: str) -> dict:
    if not isinstance(mapping, dict):
        raise FeedbackModelError(f"{where}: expected a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise FeedbackModelError(f"{where}: unknown keys {sorted(unknown)}")
    return mapping


def _list(value: object, where: str, what: str) -> list:
    if not isinstance(value, list) or not value:
        raise FeedbackModelError(f"{where}: {what} must be a non-empty list")
    return value


def feedback_model_from_dict(data: object) -> FeedbackModel:
    doc = _check_keys(data, {"goals"}, "feedback model")
    goals: list[Goal] = []
    seen_metrics: set[str] = set()
    for gi, raw_goal in enumerate(_list(doc.get("goals"), "feedback model", "'goals'")):
        where = f"goals[{gi}]"
        g = _check_keys(raw_goal, {"name", "audience", "purpose", "target", "context", "questions"}, where)
        name = str(_require(g, "name", where))
        where = f"goal {name!r}"
        target_text = str(_require(g, "target", where))
        raw_context = g.get("context")
        try:
            target = parse_expr(target_text)
            context = parse_context(None if raw_context is None else str(raw_context))
        except ExpressionSyntaxError as exc:
            raise FeedbackModelError(f"{where}: {exc}") from None
        questions: list[Question] = []
        seen_ids: set[str] = set()
        for qi, raw_q in enumerate(_list(g.get("questions"), where, "'questions'")):
            qwhere = f"{where} questions[{qi}]"
            q = _check_keys(raw_q, {"id", "text", "metrics"}, qwhere)
            qid = str(_require(q, "id", qwhere))
            if qid in seen_ids:
                raise FeedbackModelError(f"{where}: duplicate question id {qid!r}")
            seen_ids.add(qid)
            metrics: list[Metric] = []
            for mi, raw_m in enumerate(_list(q.get("metrics"), f"{where} question {qid}", "'metrics'")):
                mwhere = f"{where} question {qid} metrics[{mi}]"
                m = _check_keys(raw_m, {"name", "pointcuts"}, mwhere)
                mname = str(_require(m, "name", mwhere))
                if mname in seen_metrics:
                    raise FeedbackModelError(f"{mwhere}: metric name {mname!r} is not unique in the model")
                seen_metrics.add(mname)
                pointcuts: list[Pointcut] = []
                for pi, raw_p in enumerate(_list(m.get("pointcuts"), f"metric {mname!r}", "'pointcuts'")):
                    pwhere = f"metric {mname!r} pointcuts[{pi}]"
                    p = _check_keys(raw_p, {"fileName", "path", "anchor"}, pwhere)
                    pc = Pointcut(
                        str(_require(p, "fileName", pwhere)),
                        str(_require(p, "path", pwhere)),
                        str(_require(p, "anchor", pwhere)),
                    )
                    if not pc.anchor.strip():
                        raise FeedbackModelError(f"{pwhere}: anchor must not be empty")
                    if pc in pointcuts:
                        raise FeedbackModelError(f"{pwhere}: duplicate pointcut {pc}")
                    pointcuts.append(pc)
                metrics.append(Metric(mname, tuple(pointcuts)))
            questions.append(Question(qid, str(q.get("text") or ""), tuple(metrics)))
        goals.append(
            Goal(
                name,
                target,
                context,
                tuple(questions),
                audience="" if g.get("audience") is None else str(g["audience"]),
                purpose="" if g.get("purpose") is None else str(g["purpose"]),
            )
        )
    return FeedbackModel(tuple(goals))


def load_feedback_model(text: str) -> FeedbackModel:
    """Parse YAML text into a :class:`FeedbackModel`; raises :class:`FeedbackModelError`."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise FeedbackModelError(f"YAML syntax error: {exc}") from None
    return feedback_model_from_dict(data)


def load_feedback_model_file(path: Path | str) -> FeedbackModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FeedbackModelError(f"{path}: cannot read: {exc.strerror}") from None
    try:
        return load_feedback_model(text)
    except FeedbackModelError as exc:
        raise FeedbackModelError(f"{path}: {exc}") from None


def feedback_model_to_dict(model: FeedbackModel) -> dict:
    goals = []
    for g in model.goals:
        goals.append(
            {
                "name": g.name,
                "audience": g.audience,
                "purpose": g.purpose,
                "target": canonical_text(g.target),
                "context": ALL if g.context is None else canonical_text(g.context),
                "questions": [
                    {
                        "id": q.id,
                        "text": q.text,
                        "metrics": [
                            {
                                "name": m.name,
                                "pointcuts": [
                                    {"fileName": p.file_name, "path": p.path, "anchor": p.anchor} for p in m.pointcuts
                                ],
                            }
                            for m in q.metrics
                        ],
                    }
                    for q in g.questions
                ],
            }
        )
    return {"goals": goals}


def dump_feedback_model(model: FeedbackModel) -> str:
    return yaml.safe_dump(feedback_model_to_dict(model), sort_keys=False, allow_unicode=True, width=1000)


# -- validation ----------------------------------------------------------------


def validate_feedback_model(
    model: FeedbackModel,
    fm: FeatureModel,
    index: FileIndex,
    platform_root: Path | str,
    comment_prefix: str = DEFAULT_COMMENT_PREFIX,
) -> list[Diagnostic]:
    """Check features, file references and anchor reachability statically.

    Returns one :class:`Diagnostic` per violation; an empty list means the
    model is consistent with this platform snapshot. An anchor matching more
    than one line of a single block is reported as a warning.
    """
    diags: list[Diagnostic] = []
    known = set(fm.feature_names)
    scanned: dict[str, tuple[list[str], list[IfdefBlock]] | None] = {}

    def scan(path: str) -> tuple[list[str], list[IfdefBlock]] | None:
        if path not in scanned:
            try:
                source = (Path(platform_root) / path).read_text(encoding="utf-8")
                scanned[path] = (split_lines(source), scan_blocks(source, comment_prefix, path))
            except (OSError, ScanError) as exc:
                diags.append(Diagnostic("error", "unscannable-file", path, str(exc)))
                scanned[path] = None
        return scanned[path]

    for goal in model.goals:
        gloc = f"goal {goal.name!r}"
        for clause, expr in (("target", goal.target), ("context", goal.context)):
            if expr is None:
                continue
            for name in sorted(features_of(expr) - known):
                diags.append(Diagnostic("error", "unknown-feature", f"{gloc} {clause}", f"unknown feature {name!r}"))
        for metric in goal.metrics:
            for pc in metric.pointcuts:
                ploc = f"{gloc} metric {metric.name!r} pointcut {pc.file_name}@{pc.path}"
                entry = index.lookup(pc.file_name, pc.path)
                if entry is None:
                    diags.append(
                        Diagnostic("error", "unknown-file", ploc, f"({pc.file_name}, {pc.path}) is not in the file index")
                    )
                    continue
                result = scan(entry.path)
                if result is None:
                    continue
                lines, blocks = result
                matching = [b for b in blocks if eval_mention(goal.target, b.mentions)]
                hits = [(b, anchor_matches(b, lines, pc.anchor)) for b in matching]
                if not any(found for _, found in hits):
                    where = "in any block holding the target" if matching else "(no block holds the target)"
                    diags.append(
                        Diagnostic(
                            "error",
                            "unreachable-pointcut",
                            ploc,
                            f"anchor {pc.anchor.strip()!r} not found {where} {canonical_text(goal.target)}",
                        )
                    )
                for block, found in hits:
                    if len(found) > 1:
                        diags.append(
                            Diagnostic(
                                "warning",
                                "ambiguous-anchor",
                                f"{ploc} block at line {block.open_line + 1}",
                                f"anchor matches {len(found)} lines: {[i + 1 for i in found]}",
                            )
                        )
    return diags


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diags)


__all__ = [
    "Diagnostic",
    "FeedbackModel",
    "Goal",
    "Metric",
    "Pointcut",
    "Question",
    "anchor_matches",
    "dump_feedback_model",
    "feedback_model_from_dict",
    "has_errors",
    "load_feedback_model",
    "load_feedback_model_file",
    "validate_feedback_model",
]
