"""A second, deliberately plain evaluator for check expressions, plus a
random generator of tables and well-typed expressions.

Written from the language description rather than from the package's
evaluator: each node is handled by one straightforward recursive branch.
"""

from __future__ import annotations

import random
from decimal import Decimal, localcontext

from atomchain.oracle import (
    Aggregate,
    Arith,
    Bool,
    CellRef,
    ColRegion,
    Compare,
    Literal,
    RangeRegion,
    RowRegion,
    Trend,
)
from atomchain.tables import Table


class NaiveError(Exception):
    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


def _places(d: Decimal) -> int:
    e = d.as_tuple().exponent
    return -e if e < 0 else 0


def _half_up(x: Decimal, places: int) -> Decimal:
    """Round half away from zero, by hand."""
    scale = Decimal(10) ** places
    with localcontext() as ctx:
        ctx.prec = 80
        scaled = abs(x) * scale
        whole = int(scaled)  # truncation toward zero
        if scaled - whole >= Decimal("0.5"):
            whole += 1
        out = Decimal(whole) / scale
        out = out.quantize(Decimal(1).scaleb(-places))
    return -out if x < 0 else out


def _number(text: str) -> Decimal:
    t = text.replace("[BOLD]", "").strip()
    try:
        return Decimal(t)
    except Exception:
        raise NaiveError("NonNumericCell") from None


class Naive:
    def __init__(self, table: Table):
        self.g = table.grid()
        self.h = table.header_row_count

    def row_index(self, key) -> int:
        if isinstance(key, int):
            return key
        hits = [i + 1 for i, row in enumerate(self.g) if i >= self.h and row[0].replace("[BOLD]", "").strip() == key]
        if len(hits) != 1:
            raise NaiveError("Lookup")
        return hits[0]

    def col_index(self, key) -> int:
        if isinstance(key, int):
            return key
        hits = [j + 1 for j, c in enumerate(self.g[0]) if c.replace("[BOLD]", "").strip() == key]
        if len(hits) != 1:
            raise NaiveError("Lookup")
        return hits[0]

    def cell(self, r: int, c: int) -> Decimal:
        if not (1 <= r <= len(self.g) and 1 <= c <= len(self.g[0])):
            raise NaiveError("RegionOutOfBounds")
        return _number(self.g[r - 1][c - 1])

    def region(self, reg) -> list[Decimal]:
        n, m = len(self.g), len(self.g[0])
        if isinstance(reg, RangeRegion):
            coords = [(r, c) for r in range(reg.row1, reg.row2 + 1) for c in range(reg.col1, reg.col2 + 1)]
            if not (1 <= reg.row1 <= reg.row2 <= n and 1 <= reg.col1 <= reg.col2 <= m):
                raise NaiveError("RegionOutOfBounds")
        elif isinstance(reg, RowRegion):
            r = self.row_index(reg.row)
            lo, hi = (2, m) if reg.start is None else (reg.start, reg.end)
            if not (1 <= r <= n and 1 <= lo and hi <= m):
                raise NaiveError("RegionOutOfBounds")
            coords = [(r, c) for c in range(lo, hi + 1)]
        else:
            c = self.col_index(reg.col)
            lo, hi = (self.h + 1, n) if reg.start is None else (reg.start, reg.end)
            if not (1 <= c <= m and 1 <= lo and hi <= n):
                raise NaiveError("RegionOutOfBounds")
            coords = [(r, c) for r in range(lo, hi + 1)]
        return [self.cell(r, c) for r, c in coords]

    def values(self, items) -> list[Decimal]:
        out = []
        for it in items:
            if isinstance(it, (RangeRegion, RowRegion, ColRegion)):
                out.extend(self.region(it))
            else:
                out.append(self.num(it))
        return out

    def printed(self, node) -> int | None:
        if isinstance(node, CellRef):
            return _places(self.cell(self.row_index(node.row), self.col_index(node.col)))
        if isinstance(node, Literal):
            return _places(node.value)
        return None

    def num(self, node) -> Decimal:
        with localcontext() as ctx:
            ctx.prec = 50
            if isinstance(node, CellRef):
                return self.cell(self.row_index(node.row), self.col_index(node.col))
            if isinstance(node, Literal):
                return node.value
            if isinstance(node, Arith):
                xs = [self.num(a) for a in node.args]
                if node.op == "add":
                    total = xs[0]
                    for x in xs[1:]:
                        total = total + x
                    return total
                if node.op == "sub":
                    total = xs[0]
                    for x in xs[1:]:
                        total = total - x
                    return total
                if node.op == "mul":
                    total = xs[0]
                    for x in xs[1:]:
                        total = total * x
                    return total
                if node.op == "to_fraction":
                    return xs[0] / 100
                if node.op == "to_percent":
                    return xs[0] * 100
                if node.op == "div":
                    if xs[1] == 0:
                        raise NaiveError("DivisionByZero")
                    return xs[0] / xs[1]
                if xs[0] == 0:
                    raise NaiveError("DivisionByZero")
                return (xs[1] - xs[0]) / xs[0] * 100
            if isinstance(node, Aggregate):
                xs = self.values(node.items)
                if not xs:
                    raise NaiveError("EmptyRegion")
                if node.op == "count":
                    return Decimal(len(xs))
                if node.op in ("sum", "mean"):
                    total = Decimal(0)
                    for x in xs:
                        total += x
                    return total if node.op == "sum" else total / len(xs)
                best = xs[0]
                for x in xs[1:]:
                    if (node.op == "min" and x < best) or (node.op == "max" and x > best):
                        best = x
                return best
        raise NaiveError("Type")

    def truth(self, node) -> bool:
        if isinstance(node, Compare):
            a, b = self.num(node.lhs), self.num(node.rhs)
            if node.rel == "~":
                pb, pa = self.printed(node.rhs), self.printed(node.lhs)
                if pb is not None:
                    return _half_up(a, pb) == b
                if pa is not None:
                    return a == _half_up(b, pa)
                return a == b
            return {"<": a < b, "<=": a <= b, "=": a == b, ">=": a >= b, ">": a > b}[node.rel]
        if isinstance(node, Bool):
            vals = [self.truth(x) for x in node.args]
            if node.op == "not":
                return not vals[0]
            if node.op == "and":
                return all(vals)
            return any(vals)
        if isinstance(node, Trend):
            xs = self.values(node.items)
            if len(xs) < 2:
                raise NaiveError("DegenerateSeries")
            ups = [y > x for x, y in zip(xs, xs[1:])]
            downs = [y < x for x, y in zip(xs, xs[1:])]
            if node.direction == "increasing":
                return all(ups)
            if node.direction == "decreasing":
                return all(downs)
            return not all(ups) and not all(downs)
        raise NaiveError("Type")

    def run(self, node):
        if isinstance(node, (Compare, Bool, Trend)):
            return self.truth(node)
        return self.num(node)


# -- random generation ---------------------------------------------------------------

def random_table(rng: random.Random) -> Table:
    n = rng.randint(2, 6)
    m = rng.randint(2, 6)
    header = ["label"] + [f"h{j}" for j in range(2, m + 1)]
    rows = [header]
    for i in range(2, n + 1):
        row = [f"r{i}"]
        for _ in range(2, m + 1):
            places = rng.choice([0, 1, 1, 2])
            v = Decimal(rng.randint(-50, 200)).scaleb(-places)
            if rng.random() < 0.08:
                v = Decimal(0).scaleb(-places)
            text = str(v)
            if rng.random() < 0.1:
                text = "[BOLD] " + text
            row.append(text)
        rows.append(row)
    return Table.from_grid(rows, caption="random")


def _cell(rng, n, m):
    r = rng.randint(2, n)
    c = rng.randint(2, m)
    return CellRef(r if rng.random() < 0.6 else f"r{r}", c if rng.random() < 0.6 else f"h{c}")


def _region(rng, n, m):
    kind = rng.randrange(3)
    if kind == 0:
        r1, r2 = sorted(rng.randint(2, n) for _ in range(2))
        c1, c2 = sorted(rng.randint(2, m) for _ in range(2))
        if rng.random() < 0.05:
            r2 = n + 1
        return RangeRegion(r1, c1, r2, c2)
    if kind == 1:
        r = rng.randint(2, n)
        if rng.random() < 0.5:
            return RowRegion(r if rng.random() < 0.5 else f"r{r}")
        a, b = sorted(rng.randint(2, m) for _ in range(2))
        return RowRegion(r, a, b)
    c = rng.randint(2, m)
    if rng.random() < 0.5:
        return ColRegion(c if rng.random() < 0.5 else f"h{c}")
    a, b = sorted(rng.randint(2, n) for _ in range(2))
    return ColRegion(c, a, b)


def random_number_expr(rng: random.Random, n: int, m: int, depth: int = 3):
    roll = rng.random()
    if depth <= 0 or roll < 0.35:
        return _cell(rng, n, m)
    if roll < 0.45:
        places = rng.choice([0, 1, 2])
        return Literal(Decimal(rng.randint(-20, 300)).scaleb(-places))
    if roll < 0.5:
        # unit conversions, only in shapes whose units are always valid
        inner = Arith("to_percent", (_cell(rng, n, m),))
        return inner if rng.random() < 0.5 else Arith("to_fraction", (inner,))
    if roll < 0.75:
        op = rng.choice(["add", "sub", "mul", "div", "pct_change"])
        k = 2 if op in ("sub", "div", "pct_change") else rng.randint(2, 3)
        return Arith(op, tuple(random_number_expr(rng, n, m, depth - 1) for _ in range(k)))
    op = rng.choice(["sum", "mean", "min", "max", "count"])
    items = tuple(
        _region(rng, n, m) if rng.random() < 0.6 else random_number_expr(rng, n, m, depth - 1)
        for _ in range(rng.randint(1, 3))
    )
    return Aggregate(op, items)


def random_bool_expr(rng: random.Random, n: int, m: int, depth: int = 3):
    roll = rng.random()
    if depth <= 0 or roll < 0.55:
        rel = rng.choice(["<", "<=", "=", ">=", ">", "~", "~"])
        lhs = random_number_expr(rng, n, m, depth - 1)
        rhs = random_number_expr(rng, n, m, depth - 1) if rng.random() < 0.5 else _cell(rng, n, m)
        return Compare(rel, lhs, rhs)
    if roll < 0.7:
        items = tuple(
            _region(rng, n, m) if rng.random() < 0.5 else _cell(rng, n, m) for _ in range(rng.randint(1, 3))
        )
        return Trend(rng.choice(["increasing", "decreasing", "nonmonotone"]), items)
    op = rng.choice(["and", "or", "not"])
    k = 1 if op == "not" else rng.randint(2, 3)
    return Bool(op, tuple(random_bool_expr(rng, n, m, depth - 1) for _ in range(k)))


def random_expr(rng: random.Random, table: Table):
    if rng.random() < 0.6:
        return random_bool_expr(rng, table.n_rows, table.n_cols)
    return random_number_expr(rng, table.n_rows, table.n_cols)


def outcome_pair(expr, table: Table):
    """(package outcome, naive outcome); an outcome is a value or an error class name."""
    from atomchain.oracle import OracleError, Quantity, evaluate

    try:
        v = evaluate(expr, table).value
        got = v.value if isinstance(v, Quantity) else v
    except OracleError as exc:
        got = type(exc).__name__
    try:
        want = Naive(table).run(expr)
    except NaiveError as exc:
        want = exc.kind
    return got, want


def equivalence_mismatches(n_tables: int, seed: int = 0, exprs_per_table: int = 3) -> list:
    rng = random.Random(seed)
    bad = []
    for _ in range(n_tables):
        table = random_table(rng)
        for _ in range(exprs_per_table):
            expr = random_expr(rng, table)
            got, want = outcome_pair(expr, table)
            if type(got) is not type(want) or got != want:
                bad.append((table.grid(), expr, got, want))
    return bad
