"""Restricted expression evaluator backing the execute_code tool.

A closed grammar (no loops, no assignment, no names outside the function set)
keeps evaluation deterministic, side-effect free, and bounded. Aggregates skip
missing values and use the population standard deviation, matching the lookup
tools exactly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np

from .model import TimeSeriesRecord
from .series_tools import (
    ToolError,
    ToolSpec,
    bound_text,
    nan_max,
    nan_mean,
    nan_min,
    nan_std,
    nan_sum,
    resolve_channel,
)

MAX_SOURCE_LENGTH = 10_000
MAX_OPERATIONS = 1_000_000
MAX_NESTING = 64

GRAMMAR_HELP = (
    "allowed grammar: numbers; + - * / ( ); comparisons < <= > >= == !=; "
    "functions min, max, mean, std, sum, abs, diff over vectors; "
    "series(ch, start, end) loads channel values (inclusive range, ch by index or name)"
)

_FUNCTIONS = ("min", "max", "mean", "std", "sum", "abs", "diff", "series")


class CalcError(Exception):
    """Evaluation or parse failure; message is delivered as tool text."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


# --- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class UnOp:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Num, UnOp, BinOp, Call]


@dataclass(frozen=True)
class CalcExpression:
    source: str
    root: Node


@dataclass
class CalcResult:
    value: Union[float, tuple[float, ...]]
    trace: list[str] = field(default_factory=list)
    operations: int = 0

    def render(self) -> str:
        if isinstance(self.value, tuple):
            shown = ", ".join(_fmt_scalar(v) for v in self.value[:32])
            if len(self.value) > 32:
                shown += f", ... ({len(self.value) - 32} more)"
            result = f"result: [{shown}]"
        else:
            result = f"result: {_fmt_scalar(self.value)}"
        lines = [result]
        if self.trace:
            lines.append("steps:")
            lines.extend(f"  {t}" for t in self.trace)
        return bound_text("\n".join(lines))


def _fmt_scalar(v: float) -> str:
    if math.isnan(v):
        return "missing"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.10g}"


# --- Tokenizer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|==|!=|[-+*/<>(),]|×|÷)"
    r"|(?P<string>'[^']*'|\"[^\"]*\")"
    r")"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            bad_pos = len(source) - len(stripped)
            raise CalcError(f"unexpected character {stripped[0]!r}", position=bad_pos)
        for kind in ("number", "name", "op", "string"):
            text = m.group(kind)
            if text is not None:
                tokens.append(_Token(kind, text, m.start(kind)))
                break
        pos = m.end()
    return tokens


# --- Parser (recursive descent) ----------------------------------------------------

class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.depth = 0

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Optional[_Token]:
        tok = self.peek()
        if tok is not None:
            self.i += 1
        return tok

    def expect_op(self, text: str) -> None:
        tok = self.next()
        if tok is None or tok.kind != "op" or tok.text != text:
            pos = tok.pos if tok else len(self.source)
            raise CalcError(f"expected {text!r}", position=pos)

    def parse(self) -> Node:
        if not self.tokens:
            raise CalcError("empty expression; " + GRAMMAR_HELP)
        node = self.comparison()
        tok = self.peek()
        if tok is not None:
            raise CalcError(
                f"unsupported construct {tok.text!r}; {GRAMMAR_HELP}", position=tok.pos
            )
        return node

    def comparison(self) -> Node:
        left = self.additive()
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text in ("<", "<=", ">", ">=", "==", "!="):
            self.next()
            right = self.additive()
            return BinOp(tok.text, left, right)
        return left

    def additive(self) -> Node:
        node = self.term()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.text in ("+", "-"):
                self.next()
                node = BinOp(tok.text, node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.text in ("*", "/", "×", "÷"):
                self.next()
                op = {"×": "*", "÷": "/"}.get(tok.text, tok.text)
                node = BinOp(op, node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text in ("+", "-"):
            self.next()
            return UnOp(tok.text, self.unary())
        return self.primary()

    def primary(self) -> Node:
        self.depth += 1
        if self.depth > MAX_NESTING:
            raise CalcError("expression too deeply nested")
        try:
            tok = self.next()
            if tok is None:
                raise CalcError("unexpected end of expression", position=len(self.source))
            if tok.kind == "number":
                return Num(float(tok.text))
            if tok.kind == "op" and tok.text == "(":
                node = self.comparison()
                self.expect_op(")")
                return node
            if tok.kind == "name":
                name = tok.text.lower()
                if name not in _FUNCTIONS:
                    raise CalcError(
                        f"unsupported construct {tok.text!r}; {GRAMMAR_HELP}", position=tok.pos
                    )
                self.expect_op("(")
                args: list[Node] = []
                if not (self.peek() and self.peek().kind == "op" and self.peek().text == ")"):
                    args.append(self.comparison())
                    while self.peek() and self.peek().kind == "op" and self.peek().text == ",":
                        self.next()
                        args.append(self.comparison())
                self.expect_op(")")
                return Call(name, tuple(args))
            if tok.kind == "string":
                raise CalcError(
                    f"unsupported construct {tok.text}; {GRAMMAR_HELP}", position=tok.pos
                )
            raise CalcError(f"unexpected token {tok.text!r}", position=tok.pos)
        finally:
            self.depth -= 1


def parse(source: str) -> CalcExpression:
    """Parse a string into an expression tree; errors carry a position."""
    if not isinstance(source, str):
        raise CalcError("expression must be a string")
    if len(source) > MAX_SOURCE_LENGTH:
        raise CalcError(f"expression longer than {MAX_SOURCE_LENGTH} characters")
    try:
        root = _Parser(source).parse()
    except RecursionError:
        raise CalcError("expression too deeply nested") from None
    return CalcExpression(source=source, root=root)


# --- Evaluator -------------------------------------------------------------------

Value = Union[float, np.ndarray]


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def spend(self, n: int) -> None:
        self.used += n
        if self.used > self.limit:
            raise CalcError(f"operation budget exceeded ({self.limit} primitive operations); result truncated")


def _describe(v: Value) -> str:
    if isinstance(v, np.ndarray):
        return f"vector[{v.size}]"
    return _fmt_scalar(float(v))


class _Evaluator:
    def __init__(self, series: Optional[TimeSeriesRecord], budget: _Budget):
        self.series = series
        self.budget = budget
        self.trace: list[str] = []

    def eval(self, node: Node) -> Value:
        if isinstance(node, Num):
            self.budget.spend(1)
            return node.value
        if isinstance(node, UnOp):
            v = self.eval(node.operand)
            self.budget.spend(v.size if isinstance(v, np.ndarray) else 1)
            return -v if node.op == "-" else +v
        if isinstance(node, BinOp):
            return self._binop(node)
        if isinstance(node, Call):
            return self._call(node)
        raise CalcError("internal: unknown node")  # pragma: no cover

    def _binop(self, node: BinOp) -> Value:
        left = self.eval(node.left)
        right = self.eval(node.right)
        n = max(
            left.size if isinstance(left, np.ndarray) else 1,
            right.size if isinstance(right, np.ndarray) else 1,
        )
        self.budget.spend(n)
        op = node.op
        if op in ("<", "<=", ">", ">=", "==", "!="):
            if isinstance(left, np.ndarray) or isinstance(right, np.ndarray):
                raise CalcError("comparison requires scalar operands; aggregate vectors first")
            result = {
                "<": left < right,
                "<=": left <= right,
                ">": left > right,
                ">=": left >= right,
                "==": left == right,
                "!=": left != right,
            }[op]
            self.trace.append(
                f"({_fmt_scalar(left)} {op} {_fmt_scalar(right)}) = {'true' if result else 'false'}"
            )
            return 1.0 if result else 0.0
        if (
            isinstance(left, np.ndarray)
            and isinstance(right, np.ndarray)
            and left.size != right.size
        ):
            raise CalcError(f"vector length mismatch: {left.size} vs {right.size}")
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        # division
        if isinstance(right, np.ndarray):
            if np.any(right == 0):
                raise CalcError("undefined: division by zero")
        elif right == 0:
            raise CalcError("undefined: division by zero")
        return left / right

    def _call(self, node: Call) -> Value:
        name = node.name
        if name == "series":
            return self._series(node)
        args = [self.eval(a) for a in node.args]
        if name == "abs":
            if len(args) != 1:
                raise CalcError("abs takes exactly one argument")
            v = args[0]
            self.budget.spend(v.size if isinstance(v, np.ndarray) else 1)
            return np.abs(v) if isinstance(v, np.ndarray) else abs(v)
        if name == "diff":
            if len(args) != 1 or not isinstance(args[0], np.ndarray):
                raise CalcError("diff takes one vector argument, e.g. diff(series(0, 0, 9))")
            v = args[0]
            if v.size < 2:
                raise CalcError("diff needs at least 2 values")
            self.budget.spend(v.size)
            out = np.diff(v)
            self.trace.append(f"diff(vector[{v.size}]) = vector[{out.size}]")
            return out
        # aggregates: one vector argument, or several scalars
        if not args:
            raise CalcError(f"{name} needs at least one argument")
        if len(args) == 1 and isinstance(args[0], np.ndarray):
            vec = args[0]
        elif any(isinstance(a, np.ndarray) for a in args):
            raise CalcError(f"{name} takes one vector or several scalars, not a mix")
        else:
            vec = np.asarray(args, dtype=float)
        self.budget.spend(max(vec.size, 1))
        try:
            result = {
                "min": nan_min,
                "max": nan_max,
                "mean": nan_mean,
                "std": nan_std,
                "sum": nan_sum,
            }[name](vec)
        except ToolError as exc:
            raise CalcError(str(exc)) from None
        self.trace.append(f"{name}({_describe_args(node, vec)}) = {_fmt_scalar(result)}")
        return result

    def _series(self, node: Call) -> np.ndarray:
        if self.series is None:
            raise CalcError("no series is bound; series() is unavailable")
        if len(node.args) != 3:
            raise CalcError("series takes (ch, start, end)")
        vals = []
        for a in node.args:
            v = self.eval(a)
            if isinstance(v, np.ndarray):
                raise CalcError("series arguments must be scalars")
            vals.append(v)
        ch_raw, start_f, end_f = vals
        start, end = int(start_f), int(end_f)
        try:
            ch = resolve_channel(self.series, int(ch_raw))
        except ToolError as exc:
            raise CalcError(str(exc)) from None
        t = self.series.length
        if start > end:
            raise CalcError(f"invalid range: start ({start}) exceeds end ({end})")
        if start < 0 or end >= t:
            raise CalcError(f"index out of range: valid indices are 0..{t - 1}")
        self.budget.spend(end - start + 1)
        return np.asarray(self.series.channels[ch][start : end + 1], dtype=float)


def _describe_args(node: Call, vec: np.ndarray) -> str:
    if len(node.args) == 1 and isinstance(node.args[0], Call) and node.args[0].name == "series":
        args = node.args[0].args
        if all(isinstance(a, Num) for a in args):
            a = [str(int(x.value)) for x in args]  # type: ignore[union-attr]
            return f"series({', '.join(a)})"
    return f"vector[{vec.size}]"


def evaluate(
    expr: Union[str, CalcExpression],
    series: Optional[TimeSeriesRecord] = None,
    max_operations: int = MAX_OPERATIONS,
) -> CalcResult:
    """Evaluate an expression against an optionally bound series.

    Total: any string either parses and evaluates to a CalcResult or raises
    CalcError; nothing else escapes and evaluation is budget-bounded.
    """
    if isinstance(expr, str):
        expr = parse(expr)
    budget = _Budget(max_operations)
    ev = _Evaluator(series, budget)
    try:
        value = ev.eval(expr.root)
    except RecursionError:
        raise CalcError("expression too deeply nested") from None
    except (OverflowError, FloatingPointError) as exc:
        raise CalcError(f"arithmetic overflow: {exc}") from None
    if isinstance(value, np.ndarray):
        out: Union[float, tuple[float, ...]] = tuple(float(v) for v in value)
    else:
        out = float(value)
    return CalcResult(value=out, trace=ev.trace, operations=budget.used)


def calc_toolspec(series: Optional[TimeSeriesRecord]) -> ToolSpec:
    """The execute_code tool: evaluates one expression against the loaded series."""

    def _run(args: dict[str, Any]) -> str:
        code = args.get("code")
        if not isinstance(code, str) or not code.strip():
            raise ToolError("missing required argument 'code'; " + GRAMMAR_HELP)
        try:
            return evaluate(code, series).render()
        except CalcError as exc:
            raise ToolError(str(exc)) from None

    return ToolSpec(
        name="execute_code",
        description=(
            "Evaluate one arithmetic/statistics expression against the loaded series. "
            + GRAMMAR_HELP
            + "; std is population std; aggregates skip missing values."
        ),
        parameters={"type": "object", "properties": {"code": {"type": "string"}}},
        handler=_run,
    )
