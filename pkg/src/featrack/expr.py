"""Feature expressions: the AND/OR predicate language of directives, targets and contexts.

Grammar::

    expr := term (OR term)*
    term := atom (AND atom)*
    atom := IDENT | '(' expr ')'

``AND`` binds tighter than ``OR``; both are left-associative and produce
binary nodes. Feature names are case-sensitive identifiers. Negation is
deliberately absent from the language, so every expression is monotone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

from .errors import ExpressionSyntaxError

__all__ = [
    "Feature",
    "And",
    "Or",
    "FeatureExpression",
    "ALL",
    "parse_expr",
    "parse_context",
    "canonical_text",
    "eval_selection",
    "eval_mention",
    "features_of",
]

#: Reserved word meaning "the whole portfolio" where a context is expected.
ALL = "ALL"

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_UNSUPPORTED_WORDS = {"NOT", "XOR", "IMPLIES", "EQUIV", "IFF"}
_UNSUPPORTED_SYMBOLS = ("&&", "||", "->", "<->", "!", "~", "&", "|", "^", "-", "=")


@dataclass(frozen=True)
class Feature:
    name: str

    def __str__(self) -> str:
        return canonical_text(self)


@dataclass(frozen=True)
class And:
    left: "FeatureExpression"
    right: "FeatureExpression"

    def __str__(self) -> str:
        return canonical_text(self)


@dataclass(frozen=True)
class Or:
    left: "FeatureExpression"
    right: "FeatureExpression"

    def __str__(self) -> str:
        return canonical_text(self)


FeatureExpression = Union[Feature, And, Or]


def _tokenize(text: str) -> Iterator[tuple[str, str, int]]:
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch in "()":
            yield (ch, ch, pos)
            pos += 1
            continue
        m = IDENT_RE.match(text, pos)
        if m:
            word = m.group()
            if word in ("AND", "OR"):
                yield (word, word, pos)
            elif word in _UNSUPPORTED_WORDS:
                raise ExpressionSyntaxError(f"unknown operator {word!r}", text, pos)
            else:
                yield ("IDENT", word, pos)
            pos = m.end()
            continue
        for sym in _UNSUPPORTED_SYMBOLS:
            if text.startswith(sym, pos):
                raise ExpressionSyntaxError(f"unknown operator {sym!r}", text, pos)
        raise ExpressionSyntaxError(f"unexpected character {ch!r}", text, pos)
    yield ("EOF", "", n)


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = list(_tokenize(text))
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str) -> ExpressionSyntaxError:
        return ExpressionSyntaxError(message, self.text, self.peek()[2])

    def parse(self) -> FeatureExpression:
        node = self.expr()
        kind, value, pos = self.peek()
        if kind == ")":
            raise ExpressionSyntaxError("unbalanced ')'", self.text, pos)
        if kind != "EOF":
            raise ExpressionSyntaxError(f"unexpected {value!r}, expected AND, OR or end", self.text, pos)
        return node

    def expr(self) -> FeatureExpression:
        node = self.term()
        while self.peek()[0] == "OR":
            self.take()
            node = Or(node, self.term())
        return node

    def term(self) -> FeatureExpression:
        node = self.atom()
        while self.peek()[0] == "AND":
            self.take()
            node = And(node, self.atom())
        return node

    def atom(self) -> FeatureExpression:
        kind, value, pos = self.take()
        if kind == "IDENT":
            return Feature(value)
        if kind == "(":
            node = self.expr()
            if self.peek()[0] != ")":
                raise ExpressionSyntaxError("unbalanced '(' (missing ')')", self.text, pos)
            self.take()
            return node
        if kind == "EOF":
            raise ExpressionSyntaxError("unexpected end of expression", self.text, pos)
        raise ExpressionSyntaxError(f"expected a feature name or '(', got {value!r}", self.text, pos)


def parse_expr(text: str) -> FeatureExpression:
    """Parse ``text`` into an expression tree.

    Raises :class:`ExpressionSyntaxError` (with a character position) for empty
    input, unbalanced parentheses and operators outside the language such as
    ``NOT``.
    """
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", text or "", 0)
    return _Parser(text).parse()


def parse_context(text: str | None) -> FeatureExpression | None:
    """Parse a context predicate; ``None`` (whole portfolio) for missing or ``ALL``."""
    if text is None or text.strip() == ALL:
        return None
    return parse_expr(text)


def canonical_text(expr: FeatureExpression) -> str:
    if isinstance(expr, Feature):
        return expr.name
    op = "AND" if isinstance(expr, And) else "OR"
    return f"({canonical_text(expr.left)} {op} {canonical_text(expr.right)})"


def eval_selection(expr: FeatureExpression, selection: Mapping[str, bool]) -> bool:
    """Evaluate under a feature assignment; absent features count as deselected."""
    if isinstance(expr, Feature):
        return bool(selection.get(expr.name, False))
    if isinstance(expr, And):
        return eval_selection(expr.left, selection) and eval_selection(expr.right, selection)
    return eval_selection(expr.left, selection) or eval_selection(expr.right, selection)


def eval_mention(expr: FeatureExpression, mentioned: frozenset[str] | set[str]) -> bool:
    """True when a condition mentioning ``mentioned`` "holds" ``expr``.

    Each literal is true iff its feature is mentioned.
    """
    if isinstance(expr, Feature):
        return expr.name in mentioned
    if isinstance(expr, And):
        return eval_mention(expr.left, mentioned) and eval_mention(expr.right, mentioned)
    return eval_mention(expr.left, mentioned) or eval_mention(expr.right, mentioned)


def features_of(expr: FeatureExpression) -> frozenset[str]:
    """All feature names occurring in ``expr``."""
    if isinstance(expr, Feature):
        return frozenset((expr.name,))
    return features_of(expr.left) | features_of(expr.right)
