"""Directive scanning and the pre-compilation transformation.

An annotated region looks like::

    //PVSCL:IFCOND(Commenting AND Replying)
    ...body...
    //PVSCL:ENDCOND

Directives must be alone on their line (leading/trailing whitespace allowed).
The comment prefix is configurable for languages that do not use ``//``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

from .errors import ExpressionSyntaxError, ScanError
from .expr import And, FeatureExpression, eval_selection, features_of, parse_expr

DEFAULT_COMMENT_PREFIX = "//"


def split_lines(text: str) -> list[str]:
    """Split on ``\\n`` only, keeping terminators so lines can be re-joined byte-for-byte."""
    parts = text.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def line_content(line: str) -> str:
    return line.rstrip("\r\n")


@lru_cache(maxsize=None)
def _directive_patterns(prefix: str) -> tuple[re.Pattern, re.Pattern, re.Pattern]:
    p = re.escape(prefix)
    any_directive = re.compile(rf"^\s*{p}\s*PVSCL:(\w*)")
    ifcond = re.compile(rf"^\s*{p}\s*PVSCL:IFCOND\s*\((.*)\)\s*$")
    endcond = re.compile(rf"^\s*{p}\s*PVSCL:ENDCOND\s*$")
    return any_directive, ifcond, endcond


@dataclass(frozen=True)
class IfdefBlock:
    """One annotated region. Line indices are 0-based and refer to the scanned text."""

    file: str | None
    open_line: int
    close_line: int
    condition: FeatureExpression
    parent: "IfdefBlock | None" = field(default=None, repr=False, compare=False)
    own_lines: tuple[int, ...] = field(default=(), repr=False)

    @property
    def body(self) -> range:
        return range(self.open_line + 1, self.close_line)

    @property
    def effective_condition(self) -> FeatureExpression:
        if self.parent is None:
            return self.condition
        return And(self.parent.effective_condition, self.condition)

    @property
    def mentions(self) -> frozenset[str]:
        return features_of(self.effective_condition)

    @property
    def depth(self) -> int:
        return 0 if self.parent is None else self.parent.depth + 1


def classify_line(line: str, comment_prefix: str = DEFAULT_COMMENT_PREFIX) -> tuple[str, str | None]:
    """Return ``("open", expr_text)``, ``("close", None)`` or ``("code", None)``."""
    any_directive, ifcond, endcond = _directive_patterns(comment_prefix)
    content = line_content(line)
    m = any_directive.match(content)
    if not m:
        return "code", None
    keyword = m.group(1)
    if keyword == "IFCOND":
        m_open = ifcond.match(content)
        if not m_open:
            raise ScanError("malformed IFCOND directive, expected IFCOND(<expression>)")
        return "open", m_open.group(1)
    if keyword == "ENDCOND":
        if not endcond.match(content):
            raise ScanError("unexpected text after ENDCOND")
        return "close", None
    raise ScanError(f"unsupported directive PVSCL:{keyword}")


def scan_blocks(
    source: str, comment_prefix: str = DEFAULT_COMMENT_PREFIX, file: str | None = None
) -> list[IfdefBlock]:
    """Scan ``source`` into blocks in document (opening) order, with parent links."""
    lines = split_lines(source)
    # raw record: [open_line, close_line, condition, parent_idx, own_lines]
    raw: list[list] = []
    stack: list[int] = []
    for i, line in enumerate(lines):
        try:
            kind, expr_text = classify_line(line, comment_prefix)
        except ScanError as exc:
            raise ScanError(str(exc), i, file) from None
        if kind == "open":
            try:
                cond = parse_expr(expr_text)
            except ExpressionSyntaxError as exc:
                raise ScanError(f"malformed condition: {exc}", i, file) from None
            raw.append([i, None, cond, stack[-1] if stack else None, []])
            stack.append(len(raw) - 1)
        elif kind == "close":
            if not stack:
                raise ScanError("ENDCOND without matching IFCOND", i, file)
            raw[stack.pop()][1] = i
        elif stack:
            raw[stack[-1]][4].append(i)
    if stack:
        dangling = raw[stack[-1]][0]
        raise ScanError("IFCOND is never closed", dangling, file)

    blocks: list[IfdefBlock] = []
    for open_line, close_line, cond, parent_idx, own in raw:
        parent = blocks[parent_idx] if parent_idx is not None else None
        blocks.append(IfdefBlock(file, open_line, close_line, cond, parent, tuple(own)))
    return blocks


def preprocess(
    source: str, selection: Mapping[str, bool], comment_prefix: str = DEFAULT_COMMENT_PREFIX
) -> str:
    """Keep a block's body iff its effective condition holds; drop every directive line."""
    blocks = scan_blocks(source, comment_prefix)
    lines = split_lines(source)
    keep = [True] * len(lines)
    for block in blocks:
        keep[block.open_line] = False
        keep[block.close_line] = False
        if not eval_selection(block.condition, selection):
            # ancestors were handled first (document order), nested blocks fall inside
            for j in block.body:
                keep[j] = False
    return "".join(line for line, k in zip(lines, keep) if k)


def has_directives(source: str, comment_prefix: str = DEFAULT_COMMENT_PREFIX) -> bool:
    any_directive = _directive_patterns(comment_prefix)[0]
    return any(any_directive.match(line_content(line)) for line in split_lines(source))
