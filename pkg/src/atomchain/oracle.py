"""Deterministic claim checks over tables.

A small s-expression language covers the mechanizable part of table
reasoning: cell lookup, arithmetic, aggregation, trends, comparison and
boolean logic. Arithmetic is exact ``Decimal`` arithmetic; ``~`` compares at
the printed precision of the comparand. Units are compared as strings; the
only conversion is between percentages and plain fractions, requested
explicitly with ``to_fraction`` and ``to_percent``.

    (~ (+ (cell "12.5 wt% VS" "Freezable water (mg/g)")
          (cell "12.5 wt% VS" "Non-frozen water (mg/g)"))
       (cell "12.5 wt% VS" "Total water (mg/g)"))
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Context, Decimal, localcontext
from enum import Enum
from typing import Sequence, Union

from .chain import ExtractedFact
from .tables import (
    CellAddress,
    Number,
    Table,
    find_col_by_header,
    find_row_by_label,
    get_cell,
    parse_numeric,
)

DECIMAL_CONTEXT = Context(prec=50)

ARITH_OPS = ("add", "sub", "mul", "div", "pct_change", "to_fraction", "to_percent")
AGG_OPS = ("sum", "mean", "min", "max", "count")
TREND_DIRS = ("increasing", "decreasing", "nonmonotone")
COMPARE_RELS = ("<", "<=", "=", ">=", ">", "~")
BOOL_OPS = ("and", "or", "not")

_ARITH_ALIASES = {"+": "add", "-": "sub", "*": "mul", "/": "div", "add": "add", "sub": "sub",
                  "mul": "mul", "div": "div", "pct_change": "pct_change",
                  "to_fraction": "to_fraction", "to_percent": "to_percent"}
_ARITH_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pct_change": "pct_change",
                 "to_fraction": "to_fraction", "to_percent": "to_percent"}
_REL_ALIASES = {"<": "<", "<=": "<=", "≤": "<=", "=": "=", "==": "=", ">=": ">=", "≥": ">=",
                ">": ">", "~": "~", "≈": "~", "approx": "~"}


# -- AST -----------------------------------------------------------------------

@dataclass(frozen=True)
class CellRef:
    row: Union[int, str]
    col: Union[int, str]


@dataclass(frozen=True)
class Literal:
    value: Decimal
    unit: str | None = None


@dataclass(frozen=True)
class Arith:
    op: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class RangeRegion:
    row1: int
    col1: int
    row2: int
    col2: int


@dataclass(frozen=True)
class RowRegion:
    row: Union[int, str]
    start: int | None = None
    end: int | None = None


@dataclass(frozen=True)
class ColRegion:
    col: Union[int, str]
    start: int | None = None
    end: int | None = None


Region = Union[RangeRegion, RowRegion, ColRegion]


@dataclass(frozen=True)
class Aggregate:
    op: str
    items: tuple[Union["Expr", Region], ...]


@dataclass(frozen=True)
class Trend:
    direction: str
    items: tuple[Union["Expr", Region], ...]


@dataclass(frozen=True)
class Compare:
    rel: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Bool:
    op: str
    args: tuple["Expr", ...]


Expr = Union[CellRef, Literal, Arith, Aggregate, Trend, Compare, Bool]
NUMERIC_NODES = (CellRef, Literal, Arith, Aggregate)
BOOLEAN_NODES = (Trend, Compare, Bool)
REGION_NODES = (RangeRegion, RowRegion, ColRegion)


# -- errors --------------------------------------------------------------------

class OracleError(Exception):
    pass


class CheckSyntaxError(OracleError, SyntaxError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class CheckTypeError(OracleError, TypeError):
    def __init__(self, msg: str, path: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class NonNumericCell(OracleError):
    def __init__(self, address: CellAddress, text: str):
        super().__init__(f"cell {address} is not numeric: {text!r}")
        self.address = address


class DivisionByZero(OracleError, ZeroDivisionError):
    pass


class RegionOutOfBounds(OracleError, IndexError):
    pass


class EmptyRegion(OracleError):
    pass


class DegenerateSeries(OracleError):
    pass


class UnitMismatch(OracleError):
    pass


# -- surface syntax ------------------------------------------------------------

_ATOM_END = re.compile(r'[\s()"]')
_NUMBER_ATOM = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")


@dataclass(frozen=True)
class _Str:
    text: str
    pos: int


@dataclass(frozen=True)
class _Atom:
    text: str
    pos: int


def _read(src: str):
    pos = 0
    n = len(src)

    def skip_ws() -> None:
        nonlocal pos
        while pos < n and src[pos].isspace():
            pos += 1

    def read_one():
        nonlocal pos
        skip_ws()
        if pos >= n:
            raise CheckSyntaxError("unexpected end of input", pos)
        ch = src[pos]
        if ch == "(":
            start = pos
            pos += 1
            items = []
            while True:
                skip_ws()
                if pos >= n:
                    raise CheckSyntaxError("unclosed '('", start)
                if src[pos] == ")":
                    pos += 1
                    return (start, items)
                items.append(read_one())
        if ch == ")":
            raise CheckSyntaxError("unexpected ')'", pos)
        if ch == '"':
            start = pos
            pos += 1
            buf = []
            while pos < n and src[pos] != '"':
                if src[pos] == "\\" and pos + 1 < n:
                    buf.append(src[pos + 1])
                    pos += 2
                else:
                    buf.append(src[pos])
                    pos += 1
            if pos >= n:
                raise CheckSyntaxError("unterminated string", start)
            pos += 1
            return _Str("".join(buf), start)
        m = _ATOM_END.search(src, pos)
        end = m.start() if m else n
        atom = _Atom(src[pos:end], pos)
        pos = end
        return atom

    form = read_one()
    skip_ws()
    if pos != n:
        raise CheckSyntaxError("trailing input", pos)
    return form


def _pos(form) -> int:
    return form[0] if isinstance(form, tuple) else form.pos


def _int_or_label(form) -> Union[int, str]:
    if isinstance(form, _Str):
        return form.text
    if isinstance(form, _Atom) and re.fullmatch(r"\d+", form.text):
        value = int(form.text)
        if value < 1:
            raise CheckSyntaxError("row/column numbers are 1-indexed", form.pos)
        return value
    raise CheckSyntaxError("expected a 1-based index or a quoted label", _pos(form))


def _int_arg(form) -> int:
    v = _int_or_label(form)
    if not isinstance(v, int):
        raise CheckSyntaxError("expected a 1-based index", _pos(form))
    return v


def _build(form) -> Union[Expr, Region]:
    if isinstance(form, _Str):
        raise CheckSyntaxError("bare string is not an expression", form.pos)
    if isinstance(form, _Atom):
        if _NUMBER_ATOM.match(form.text):
            return Literal(Decimal(form.text))
        raise CheckSyntaxError(f"unknown atom {form.text!r}", form.pos)
    start, items = form
    if not items or not isinstance(items[0], _Atom):
        raise CheckSyntaxError("expected an operator after '('", start)
    head = items[0].text
    args = items[1:]

    def arity(lo: int, hi: int | None = None) -> None:
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"{lo}" if hi == lo else f"{lo}..{hi if hi is not None else 'n'}"
            raise CheckSyntaxError(f"'{head}' takes {want} arguments, got {len(args)}", start)

    if head == "cell":
        arity(2, 2)
        return CellRef(_int_or_label(args[0]), _int_or_label(args[1]))
    if head == "lit":
        arity(1, 2)
        if not (isinstance(args[0], _Atom) and _NUMBER_ATOM.match(args[0].text)):
            raise CheckSyntaxError("lit expects a number", _pos(args[0]))
        unit = None
        if len(args) == 2:
            if not isinstance(args[1], _Str):
                raise CheckSyntaxError("lit unit must be a quoted string", _pos(args[1]))
            unit = args[1].text
        return Literal(Decimal(args[0].text), unit)
    if head in _ARITH_ALIASES:
        op = _ARITH_ALIASES[head]
        if op in ("add", "mul"):
            arity(2)
        elif op in ("to_fraction", "to_percent"):
            arity(1, 1)
        else:
            arity(2, 2)
        return Arith(op, tuple(_build(a) for a in args))
    if head == "range":
        arity(4, 4)
        return RangeRegion(*(_int_arg(a) for a in args))
    if head in ("row", "col"):
        if len(args) not in (1, 3):
            raise CheckSyntaxError(f"'{head}' takes 1 or 3 arguments, got {len(args)}", start)
        key = _int_or_label(args[0])
        lo = _int_arg(args[1]) if len(args) == 3 else None
        hi = _int_arg(args[2]) if len(args) == 3 else None
        return RowRegion(key, lo, hi) if head == "row" else ColRegion(key, lo, hi)
    if head in AGG_OPS:
        arity(1)
        return Aggregate(head, tuple(_build(a) for a in args))
    if head == "trend":
        arity(2)
        if not (isinstance(args[0], _Atom) and args[0].text in TREND_DIRS):
            raise CheckSyntaxError(f"trend direction must be one of {TREND_DIRS}", _pos(args[0]))
        return Trend(args[0].text, tuple(_build(a) for a in args[1:]))
    if head in _REL_ALIASES:
        arity(2, 2)
        return Compare(_REL_ALIASES[head], _build(args[0]), _build(args[1]))
    if head in ("and", "or"):
        arity(1)
        return Bool(head, tuple(_build(a) for a in args))
    if head == "not":
        arity(1, 1)
        return Bool("not", (_build(args[0]),))
    raise CheckSyntaxError(f"unknown operator {head!r}", items[0].pos)


def _kind(node) -> str:
    if isinstance(node, REGION_NODES):
        return "region"
    if isinstance(node, BOOLEAN_NODES):
        return "boolean"
    return "number"


def typecheck(node, path: str = "") -> str:
    """Return the node's type ('number' or 'boolean'); raise on ill-typed trees."""
    here = path or _label(node)

    def expect(child, want: tuple[str, ...], i: int) -> None:
        p = f"{here}[{i}]"
        got = typecheck(child, p) if not isinstance(child, REGION_NODES) else "region"
        if got not in want:
            raise CheckTypeError(f"expected {' or '.join(want)}, got {got} ({_label(child)})", p)

    if isinstance(node, (CellRef, Literal)):
        return "number"
    if isinstance(node, REGION_NODES):
        raise CheckTypeError("a region is only valid inside an aggregate or trend", here)
    if isinstance(node, Arith):
        for i, a in enumerate(node.args):
            expect(a, ("number",), i)
        return "number"
    if isinstance(node, (Aggregate, Trend)):
        for i, a in enumerate(node.items):
            expect(a, ("number", "region"), i)
        return "number" if isinstance(node, Aggregate) else "boolean"
    if isinstance(node, Compare):
        expect(node.lhs, ("number",), 0)
        expect(node.rhs, ("number",), 1)
        return "boolean"
    if isinstance(node, Bool):
        for i, a in enumerate(node.args):
            expect(a, ("boolean",), i)
        return "boolean"
    raise CheckTypeError(f"unknown node {node!r}", here)


def _label(node) -> str:
    if isinstance(node, CellRef):
        return "cell"
    if isinstance(node, Literal):
        return "lit"
    if isinstance(node, Arith):
        return _ARITH_SYMBOL[node.op]
    if isinstance(node, Aggregate):
        return node.op
    if isinstance(node, Trend):
        return "trend"
    if isinstance(node, Compare):
        return node.rel
    if isinstance(node, Bool):
        return node.op
    if isinstance(node, RangeRegion):
        return "range"
    if isinstance(node, RowRegion):
        return "row"
    if isinstance(node, ColRegion):
        return "col"
    return type(node).__name__


def parse_check(src: str) -> Expr:
    """Parse and typecheck one check expression."""
    node = _build(_read(src))
    typecheck(node)
    return node  # type: ignore[return-value]


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _key(v: Union[int, str]) -> str:
    return str(v) if isinstance(v, int) else _q(v)


def print_check(node) -> str:
    if isinstance(node, CellRef):
        return f"(cell {_key(node.row)} {_key(node.col)})"
    if isinstance(node, Literal):
        if node.unit is None:
            return str(node.value)
        return f"(lit {node.value} {_q(node.unit)})"
    if isinstance(node, Arith):
        return f"({_ARITH_SYMBOL[node.op]} {' '.join(print_check(a) for a in node.args)})"
    if isinstance(node, RangeRegion):
        return f"(range {node.row1} {node.col1} {node.row2} {node.col2})"
    if isinstance(node, (RowRegion, ColRegion)):
        head = "row" if isinstance(node, RowRegion) else "col"
        key = node.row if isinstance(node, RowRegion) else node.col
        if node.start is None:
            return f"({head} {_key(key)})"
        return f"({head} {_key(key)} {node.start} {node.end})"
    if isinstance(node, Aggregate):
        return f"({node.op} {' '.join(print_check(a) for a in node.items)})"
    if isinstance(node, Trend):
        return f"(trend {node.direction} {' '.join(print_check(a) for a in node.items)})"
    if isinstance(node, Compare):
        return f"({node.rel} {print_check(node.lhs)} {print_check(node.rhs)})"
    if isinstance(node, Bool):
        return f"({node.op} {' '.join(print_check(a) for a in node.args)})"
    raise TypeError(f"not a check node: {node!r}")


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class Quantity:
    value: Decimal
    unit: str | None = None
    printed: int | None = None  # fractional digits as written; None when computed


@dataclass(frozen=True)
class OracleVerdict:
    value: Union[bool, Quantity]
    evidence: tuple[tuple[CellAddress, Decimal], ...]
    precision_note: str = ""


def _places(d: Decimal) -> int:
    exp = d.as_tuple().exponent
    return -exp if isinstance(exp, int) and exp < 0 else 0


def round_to(value: Decimal, places: int) -> Decimal:
    """Round half away from zero to ``places`` fractional digits."""
    with localcontext(DECIMAL_CONTEXT):
        return value.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def _common_unit(qs: Sequence[Quantity], what: str) -> str | None:
    units = {q.unit for q in qs if q.unit is not None}
    if len(units) > 1:
        raise UnitMismatch(f"{what} mixes units {sorted(units)}")
    return units.pop() if units else None


class _Evaluator:
    def __init__(self, table: Table):
        self.table = table
        self.evidence: dict[CellAddress, Decimal] = {}
        self.notes: list[str] = []

    def _resolve_row(self, key: Union[int, str]) -> int:
        if isinstance(key, int):
            if key > self.table.n_rows:
                raise RegionOutOfBounds(f"row {key} > {self.table.n_rows}")
            return key
        return find_row_by_label(self.table, key)

    def _resolve_col(self, key: Union[int, str]) -> int:
        if isinstance(key, int):
            if key > self.table.n_cols:
                raise RegionOutOfBounds(f"column {key} > {self.table.n_cols}")
            return key
        rows = range(1, max(self.table.header_row_count, 1) + 1)
        return find_col_by_header(self.table, key, rows)

    def cell(self, addr: CellAddress) -> Quantity:
        cell = get_cell(self.table, addr)
        num = parse_numeric(cell)
        if num is None:
            raise NonNumericCell(addr, cell.raw_text)
        self.evidence.setdefault(addr, num.value)
        return Quantity(num.value, num.unit, _places(num.value))

    def region(self, reg: Region) -> list[Quantity]:
        t = self.table
        if isinstance(reg, RangeRegion):
            r1, c1, r2, c2 = reg.row1, reg.col1, reg.row2, reg.col2
        elif isinstance(reg, RowRegion):
            r1 = r2 = self._resolve_row(reg.row)
            c1 = reg.start if reg.start is not None else min(2, t.n_cols)
            c2 = reg.end if reg.end is not None else t.n_cols
        else:
            c1 = c2 = self._resolve_col(reg.col)
            r1 = reg.start if reg.start is not None else min(t.header_row_count + 1, t.n_rows)
            r2 = reg.end if reg.end is not None else t.n_rows
        if not (1 <= r1 <= r2 <= t.n_rows and 1 <= c1 <= c2 <= t.n_cols):
            raise RegionOutOfBounds(f"region rows {r1}..{r2}, cols {c1}..{c2} outside table")
        return [self.cell(CellAddress(r, c)) for r in range(r1, r2 + 1) for c in range(c1, c2 + 1)]

    def items(self, items) -> list[Quantity]:
        out: list[Quantity] = []
        for it in items:
            if isinstance(it, REGION_NODES):
                out.extend(self.region(it))
            else:
                out.append(self.num(it))
        return out

    def num(self, node) -> Quantity:
        if isinstance(node, CellRef):
            addr = CellAddress(self._resolve_row(node.row), self._resolve_col(node.col))
            return self.cell(addr)
        if isinstance(node, Literal):
            return Quantity(node.value, node.unit, _places(node.value))
        if isinstance(node, Arith):
            return self.arith(node)
        if isinstance(node, Aggregate):
            return self.aggregate(node)
        raise CheckTypeError(f"expected a number, got {_label(node)}", _label(node))

    def arith(self, node: Arith) -> Quantity:
        vals = [self.num(a) for a in node.args]
        with localcontext(DECIMAL_CONTEXT):
            if node.op in ("add", "sub"):
                unit = _common_unit(vals, node.op)
                acc = vals[0].value
                for q in vals[1:]:
                    acc = acc + q.value if node.op == "add" else acc - q.value
                return Quantity(acc, unit)
            if node.op == "mul":
                acc = vals[0].value
                for q in vals[1:]:
                    acc = acc * q.value
                units = [q.unit for q in vals if q.unit is not None]
                return Quantity(acc, units[0] if len(units) == 1 else None)
            if node.op == "to_fraction":
                if vals[0].unit != "%":
                    raise UnitMismatch(f"to_fraction needs a percentage, got unit {vals[0].unit!r}")
                return Quantity(vals[0].value / 100)
            if node.op == "to_percent":
                if vals[0].unit is not None:
                    raise UnitMismatch(f"to_percent needs a plain fraction, got unit {vals[0].unit!r}")
                return Quantity(vals[0].value * 100, "%")
            a, b = vals
            if node.op == "div":
                if b.value == 0:
                    raise DivisionByZero("division by zero")
                if a.unit is not None and a.unit == b.unit:
                    unit = None
                else:
                    unit = a.unit if b.unit is None else None
                return Quantity(a.value / b.value, unit)
            # pct_change
            _common_unit(vals, "pct_change")
            if a.value == 0:
                raise DivisionByZero("percent change from zero")
            return Quantity((b.value - a.value) / a.value * 100, "%")

    def aggregate(self, node: Aggregate) -> Quantity:
        vals = self.items(node.items)
        if not vals:
            raise EmptyRegion(f"{node.op} over no values")
        if node.op == "count":
            return Quantity(Decimal(len(vals)))
        unit = _common_unit(vals, node.op)
        with localcontext(DECIMAL_CONTEXT):
            if node.op == "sum":
                acc = Decimal(0)
                for q in vals:
                    acc += q.value
                return Quantity(acc, unit)
            if node.op == "mean":
                acc = Decimal(0)
                for q in vals:
                    acc += q.value
                return Quantity(acc / len(vals), unit)
            pick = min if node.op == "min" else max
            return Quantity(pick(q.value for q in vals), unit)

    def boolean(self, node) -> bool:
        if isinstance(node, Compare):
            return self.compare(node)
        if isinstance(node, Bool):
            vals = [self.boolean(a) for a in node.args]
            if node.op == "not":
                return not vals[0]
            return all(vals) if node.op == "and" else any(vals)
        if isinstance(node, Trend):
            vals = self.items(node.items)
            if len(vals) < 2:
                raise DegenerateSeries(f"trend needs at least 2 points, got {len(vals)}")
            _common_unit(vals, "trend")
            pairs = list(zip(vals, vals[1:]))
            inc = all(b.value > a.value for a, b in pairs)
            dec = all(b.value < a.value for a, b in pairs)
            if node.direction == "increasing":
                return inc
            if node.direction == "decreasing":
                return dec
            return not inc and not dec
        raise CheckTypeError(f"expected a boolean, got {_label(node)}", _label(node))

    def compare(self, node: Compare) -> bool:
        a, b = self.num(node.lhs), self.num(node.rhs)
        if a.unit is not None and b.unit is not None and a.unit != b.unit:
            raise UnitMismatch(f"cannot compare {a.unit} with {b.unit}")
        x, y = a.value, b.value
        if node.rel == "~":
            if b.printed is not None:
                x = round_to(x, b.printed)
                self.notes.append(f"lhs rounded half-up to {b.printed} decimal place(s) of rhs")
            elif a.printed is not None:
                y = round_to(y, a.printed)
                self.notes.append(f"rhs rounded half-up to {a.printed} decimal place(s) of lhs")
            else:
                self.notes.append("both sides computed; exact comparison")
            return x == y
        return {
            "<": x < y,
            "<=": x <= y,
            "=": x == y,
            ">=": x >= y,
            ">": x > y,
        }[node.rel]


def evaluate(expr: Expr, table: Table) -> OracleVerdict:
    """Evaluate a well-typed check against ``table``.

    Boolean connectives evaluate every operand, so an error anywhere in the
    tree surfaces regardless of operand order.
    """
    kind = typecheck(expr)
    ev = _Evaluator(table)
    value: Union[bool, Quantity] = ev.boolean(expr) if kind == "boolean" else ev.num(expr)
    note = "; ".join(dict.fromkeys(ev.notes)) or "exact decimal arithmetic"
    return OracleVerdict(value, tuple(ev.evidence.items()), note)


def check(src: str, table: Table) -> OracleVerdict:
    return evaluate(parse_check(src), table)


def trend_agreement(a: Sequence[Decimal], b: Sequence[Decimal]) -> int:
    """Sign of co-movement between two series: +1 same direction at every
    step, -1 opposite at every step, 0 otherwise."""
    if len(a) != len(b) or len(a) < 2:
        raise DegenerateSeries("series must have equal length >= 2")
    signs = set()
    for (a0, a1), (b0, b1) in zip(zip(a, a[1:]), zip(b, b[1:])):
        da, db = (a1 > a0) - (a1 < a0), (b1 > b0) - (b1 < b0)
        signs.add(da * db)
    if signs == {1}:
        return 1
    if signs == {-1}:
        return -1
    return 0


# -- extraction checking ---------------------------------------------------------

class FactStatus(str, Enum):
    MATCH = "MATCH"
    MISMATCH = "MISMATCH"
    UNVERIFIABLE = "UNVERIFIABLE"


@dataclass(frozen=True)
class FactCheck:
    status: FactStatus
    actual: Number | None = None


def check_extraction(facts: Sequence[ExtractedFact], table: Table) -> list[FactCheck]:
    """Compare each addressed fact with its cell at the fact's printed precision."""
    out = []
    for fact in facts:
        if fact.address is None or fact.value is None:
            out.append(FactCheck(FactStatus.UNVERIFIABLE))
            continue
        try:
            cell = get_cell(table, fact.address)
        except IndexError:
            out.append(FactCheck(FactStatus.UNVERIFIABLE))
            continue
        actual = parse_numeric(cell)
        if actual is None:
            out.append(FactCheck(FactStatus.UNVERIFIABLE))
            continue
        places = fact.value.precision
        same = round_to(actual.value, places) == fact.value.value
        out.append(FactCheck(FactStatus.MATCH if same else FactStatus.MISMATCH, actual))
    return out
