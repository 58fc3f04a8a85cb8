"""Deterministic toy cell language: parser, evaluator, and value codec.

Cells are newline-separated statements:

    NAME = EXPR           assignment; EXPR over integers, variables, + - *,
                          parentheses, and concat(a, b) over list values
    list NAME N           bind NAME to a list of N zeros
    del NAME              remove NAME from the namespace
    sleep MS              wait MS milliseconds of wall time
    fail MESSAGE          raise a cell error with the given message

Values are integers or immutable integer lists. Reads of a cell are the
variable names referenced in any of its expressions (a static property);
write effects are whatever the executed statements actually did, so a cell
that fails midway keeps the effects of its earlier statements.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass

from .errors import CellTimeout
from .hashing import digest_bytes

KEYWORDS = frozenset({"list", "del", "sleep", "fail", "concat"})

_TOKEN_RE = re.compile(r"\s*(?:(?P<int>-?\d+)|(?P<name>[A-Za-z_]\w*)|(?P<op>[+\-*=(),]))")


class ToyCellError(Exception):
    """A cell-level failure; surfaces as status=error with a name and message."""

    error_name = "ToyCellError"


class ToySyntaxError(ToyCellError):
    error_name = "SyntaxError"


class UnknownVariableError(ToyCellError):
    error_name = "UnknownVariable"


class TypeMismatchError(ToyCellError):
    error_name = "TypeMismatch"


class FailError(ToyCellError):
    error_name = "Fail"


class ToyList:
    """Immutable integer list; caches its encoding and digest.

    Values are never mutated in place (assignment rebinds, concat builds a
    new list), which is what makes the caching sound.
    """

    __slots__ = ("items", "_encoded", "_digest")

    def __init__(self, items: tuple[int, ...]):
        self.items = items
        self._encoded: bytes | None = None
        self._digest: str | None = None

    def __len__(self) -> int:
        return len(self.items)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ToyList) and self.items == other.items

    def __hash__(self):
        return hash(self.items)

    def __repr__(self) -> str:
        if len(self.items) > 8:
            return f"ToyList(len={len(self.items)})"
        return f"ToyList({list(self.items)!r})"

    @property
    def encoded(self) -> bytes:
        if self._encoded is None:
            self._encoded = encode_value(self, _cache=False)
        return self._encoded

    @property
    def digest(self) -> str:
        if self._digest is None:
            self._digest = digest_bytes(self.encoded)
        return self._digest


ToyValue = int | ToyList


# --- value codec ---
#
# Integers are canonical decimal ASCII ("3", "-17"). Lists are
# "l<count>:" followed by one length-prefixed decimal per element
# ("l2:1:02:10" is [0, 10]).

def encode_value(value: ToyValue, _cache: bool = True) -> bytes:
    if isinstance(value, int):
        return str(value).encode("ascii")
    if _cache:
        return value.encoded
    items = value.items
    head = b"l%d:" % len(items)
    if items and items.count(items[0]) == len(items):
        # Uniform lists (the `list N` output) encode as a repeated pattern.
        elem = str(items[0]).encode("ascii")
        return head + (b"%d:%s" % (len(elem), elem)) * len(items)
    parts = [head]
    for x in items:
        elem = str(x).encode("ascii")
        parts.append(b"%d:%s" % (len(elem), elem))
    return b"".join(parts)


def decode_value(type_tag: str, data: bytes) -> ToyValue:
    if type_tag == "int":
        return int(data.decode("ascii"))
    if type_tag != "list":
        raise ValueError(f"unknown type tag {type_tag!r}")
    if not data.startswith(b"l"):
        raise ValueError("malformed list encoding")
    colon = data.index(b":")
    count = int(data[1:colon])
    body = data[colon + 1 :]
    if count == 0:
        if body:
            raise ValueError("trailing bytes after empty list")
        return ToyList(())
    # Uniform fast path: check whether the body is the first element repeated.
    first_colon = body.index(b":")
    elem_len = int(body[:first_colon])
    pattern = body[: first_colon + 1 + elem_len]
    if len(body) == len(pattern) * count and body == pattern * count:
        value = int(pattern[first_colon + 1 :].decode("ascii"))
        toy = ToyList((value,) * count)
        toy._encoded = data
        return toy
    items = []
    pos = 0
    for _ in range(count):
        colon = body.index(b":", pos)
        n = int(body[pos:colon])
        items.append(int(body[colon + 1 : colon + 1 + n].decode("ascii")))
        pos = colon + 1 + n
    if pos != len(body):
        raise ValueError("trailing bytes after list elements")
    toy = ToyList(tuple(items))
    toy._encoded = data
    return toy


def value_type_tag(value: ToyValue) -> str:
    return "int" if isinstance(value, int) else "list"


def value_digest(value: ToyValue) -> str:
    if isinstance(value, ToyList):
        return value.digest
    return digest_bytes(encode_value(value))


# --- AST ---

@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Concat:
    left: "Expr"
    right: "Expr"


Expr = Num | Ref | BinOp | Concat


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr


@dataclass(frozen=True)
class ListDecl:
    name: str
    count: int


@dataclass(frozen=True)
class Del:
    name: str


@dataclass(frozen=True)
class Sleep:
    ms: int


@dataclass(frozen=True)
class Fail:
    message: str


Statement = Assign | ListDecl | Del | Sleep | Fail


class _Tokens:
    def __init__(self, line: str):
        self.tokens: list[tuple[str, str]] = []
        pos = 0
        while pos < len(line):
            m = _TOKEN_RE.match(line, pos)
            if m is None or m.end() == pos:
                rest = line[pos:].strip()
                if not rest:
                    break
                raise ToySyntaxError(f"cannot tokenize {rest!r}")
            pos = m.end()
            kind = m.lastgroup or ""
            self.tokens.append((kind, m.group(kind)))
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise ToySyntaxError("unexpected end of line")
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, text = self.next()
        if kind != "op" or text != op:
            raise ToySyntaxError(f"expected {op!r}, got {text!r}")

    def done(self) -> bool:
        return self.pos >= len(self.tokens)


def _parse_expr(toks: _Tokens) -> Expr:
    node = _parse_term(toks)
    while (tok := toks.peek()) in (("op", "+"), ("op", "-")):
        toks.next()
        node = BinOp(tok[1], node, _parse_term(toks))
    return node


def _parse_term(toks: _Tokens) -> Expr:
    node = _parse_factor(toks)
    while toks.peek() == ("op", "*"):
        toks.next()
        node = BinOp("*", node, _parse_factor(toks))
    return node


def _parse_factor(toks: _Tokens) -> Expr:
    kind, text = toks.next()
    if kind == "int":
        return Num(int(text))
    if kind == "op" and text == "(":
        inner = _parse_expr(toks)
        toks.expect_op(")")
        return inner
    if kind == "name":
        if text == "concat":
            toks.expect_op("(")
            left = _parse_expr(toks)
            toks.expect_op(",")
            right = _parse_expr(toks)
            toks.expect_op(")")
            return Concat(left, right)
        if text in KEYWORDS:
            raise ToySyntaxError(f"keyword {text!r} is not a variable")
        return Ref(text)
    raise ToySyntaxError(f"unexpected token {text!r}")


def _parse_name(toks: _Tokens) -> str:
    kind, text = toks.next()
    if kind != "name" or text in KEYWORDS:
        raise ToySyntaxError(f"expected a variable name, got {text!r}")
    return text


def _parse_int(toks: _Tokens) -> int:
    kind, text = toks.next()
    if kind != "int":
        raise ToySyntaxError(f"expected an integer, got {text!r}")
    return int(text)


def parse_cell(source: str) -> list[Statement]:
    statements: list[Statement] = []
    for raw in source.split("\n"):
        line = raw.strip()
        if not line:
            continue
        head = line.split(None, 1)[0]
        if head == "fail":
            statements.append(Fail(line[len("fail") :].strip()))
            continue
        toks = _Tokens(line)
        kind, text = toks.next()
        if kind != "name":
            raise ToySyntaxError(f"statement cannot start with {text!r}")
        if text == "list":
            name = _parse_name(toks)
            count = _parse_int(toks)
            if count < 0:
                raise ToySyntaxError("list size must be non-negative")
            stmt: Statement = ListDecl(name, count)
        elif text == "del":
            stmt = Del(_parse_name(toks))
        elif text == "sleep":
            ms = _parse_int(toks)
            if ms < 0:
                raise ToySyntaxError("sleep duration must be non-negative")
            stmt = Sleep(ms)
        elif text in KEYWORDS:
            raise ToySyntaxError(f"keyword {text!r} is not a variable")
        else:
            toks.expect_op("=")
            stmt = Assign(text, _parse_expr(toks))
        if not toks.done():
            raise ToySyntaxError(f"trailing tokens in {line!r}")
        statements.append(stmt)
    return statements


def static_reads(statements: list[Statement]) -> set[str]:
    """Names referenced in any expression of the cell, executed or not."""
    names: set[str] = set()

    def walk(expr: Expr) -> None:
        if isinstance(expr, Ref):
            names.add(expr.name)
        elif isinstance(expr, BinOp):
            walk(expr.left)
            walk(expr.right)
        elif isinstance(expr, Concat):
            walk(expr.left)
            walk(expr.right)

    for stmt in statements:
        if isinstance(stmt, Assign):
            walk(stmt.expr)
    return names


def _eval(expr: Expr, namespace: dict[str, ToyValue]) -> ToyValue:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ref):
        try:
            return namespace[expr.name]
        except KeyError:
            raise UnknownVariableError(f"unknown variable '{expr.name}'") from None
    if isinstance(expr, Concat):
        left = _eval(expr.left, namespace)
        right = _eval(expr.right, namespace)
        if not isinstance(left, ToyList) or not isinstance(right, ToyList):
            raise TypeMismatchError("concat expects two list values")
        return ToyList(left.items + right.items)
    left = _eval(expr.left, namespace)
    right = _eval(expr.right, namespace)
    if not isinstance(left, int) or not isinstance(right, int):
        raise TypeMismatchError(f"operator '{expr.op}' expects integer operands")
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    return left * right


def _busy_wait_ms(ms: int, deadline: float | None) -> None:
    target = time.perf_counter() + ms / 1000.0
    while True:
        now = time.perf_counter()
        if now >= target:
            return
        if deadline is not None and now >= deadline:
            raise CellTimeout(f"cell exceeded its execution budget during sleep {ms}")
        time.sleep(min(target - now, 0.005))


@dataclass
class CellEffects:
    """What actually happened while running a cell."""

    status: str  # "ok" | "error"
    error_name: str | None
    error_message: str | None
    reads: set[str]
    assigned: set[str]  # names bound by executed statements
    removed: set[str]  # names removed by executed del statements


def run_cell(
    source: str,
    namespace: dict[str, ToyValue],
    deadline: float | None = None,
) -> CellEffects:
    """Execute one cell against the namespace, mutating it in place.

    Effects of statements before a failure persist (partial-effect
    semantics). A CellTimeout escapes instead of being recorded: the
    caller treats it as a backend crash, not a cell error.
    """
    try:
        statements = parse_cell(source)
    except ToyCellError as exc:
        return CellEffects("error", exc.error_name, str(exc), set(), set(), set())
    reads = static_reads(statements)
    assigned: set[str] = set()
    removed: set[str] = set()
    try:
        for stmt in statements:
            if deadline is not None and time.perf_counter() >= deadline:
                raise CellTimeout("cell exceeded its execution budget")
            if isinstance(stmt, Assign):
                namespace[stmt.name] = _eval(stmt.expr, namespace)
                assigned.add(stmt.name)
            elif isinstance(stmt, ListDecl):
                namespace[stmt.name] = ToyList((0,) * stmt.count)
                assigned.add(stmt.name)
            elif isinstance(stmt, Del):
                if stmt.name not in namespace:
                    raise UnknownVariableError(f"unknown variable '{stmt.name}'")
                del namespace[stmt.name]
                removed.add(stmt.name)
            elif isinstance(stmt, Sleep):
                _busy_wait_ms(stmt.ms, deadline)
            else:
                raise FailError(stmt.message)
    except ToyCellError as exc:
        return CellEffects("error", exc.error_name, str(exc), reads, assigned, removed)
    return CellEffects("ok", None, None, reads, assigned, removed)
