"""Pipe-delimited scientific tables with 1-indexed cell addressing.

Tables are read from the same wire format the stage prompts embed::

    | material | Freezable water (mg/g) | Non-frozen water (mg/g) |
    | 12.5 wt% VS | [BOLD] 5.3 | [BOLD] 7.7 |

``[BOLD]`` is the only emphasis marker. Numbers are held as exact
``Decimal`` values together with their printed precision.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Iterable, Sequence

BOLD = "[BOLD]"

_SEPARATOR_FIELD = re.compile(r"^:?-+:?$")
_NUMBER_BODY = re.compile(r"^(\d{1,3}(?:,\d{3})+|\d+)?(?:\.(\d+))?$")
_UNIT = re.compile(r"^[A-Za-z%°µμ/·\^²³]+(?:[/·][A-Za-z%°µμ²³]+)*$")
_CURRENCY = "$€£¥"


class TableError(Exception):
    """Base class for table parsing and addressing failures."""


class EmptyInput(TableError):
    pass


class NoDelimitedLines(TableError):
    pass


class MalformedLine(TableError):
    def __init__(self, lineno: int, line: str):
        super().__init__(f"line {lineno} is not pipe-delimited: {line!r}")
        self.lineno = lineno


class OutOfRange(TableError, IndexError):
    def __init__(self, axis: str, index: int, limit: int):
        super().__init__(f"{axis} {index} out of range 1..{limit}")
        self.axis = axis
        self.index = index


class NotFound(TableError, LookupError):
    def __init__(self, what: str, needle: str):
        super().__init__(f"{what} {needle!r} not found")
        self.needle = needle


class Ambiguous(TableError, LookupError):
    def __init__(self, what: str, needle: str, candidates: list[int]):
        super().__init__(f"{what} {needle!r} is ambiguous: candidates {candidates}")
        self.needle = needle
        self.candidates = candidates


class RaggedRowWarning(UserWarning):
    pass


class RowConvention(str, Enum):
    """How row numbers are counted.

    ``ABSOLUTE`` counts from the physical first line (header is row 1).
    ``DATA`` counts from the first row after the header rows.
    """

    ABSOLUTE = "absolute"
    DATA = "data"


@dataclass(frozen=True)
class Number:
    value: Decimal
    unit: str | None = None

    @property
    def precision(self) -> int:
        """Count of printed fractional digits."""
        exp = self.value.as_tuple().exponent
        return -exp if isinstance(exp, int) and exp < 0 else 0

    def __str__(self) -> str:
        if self.unit is None:
            return str(self.value)
        if self.unit == "%":
            return f"{self.value}%"
        return f"{self.value} {self.unit}"


def _parse_number_text(text: str) -> Number | None:
    s = text.strip()
    if s.startswith(BOLD):
        s = s[len(BOLD):].strip()
    if not s:
        return None

    negative = False
    if s.startswith("(") and s.endswith(")"):
        negative = True
        s = s[1:-1].strip()
    if s[:1] in "-−–":
        if negative:
            return None
        negative = True
        s = s[1:].lstrip()
    elif s[:1] == "+":
        s = s[1:].lstrip()

    unit = None
    if s[:1] and s[0] in _CURRENCY:
        unit = s[0]
        s = s[1:].lstrip()

    m = re.match(r"^[\d.,]+", s)
    if not m:
        return None
    body, rest = m.group(0), s[m.end():].strip()
    bm = _NUMBER_BODY.match(body)
    if not bm or (bm.group(1) is None and bm.group(2) is None):
        return None
    if rest:
        if unit is not None or not _UNIT.match(rest) or len(rest) > 12:
            return None
        unit = rest
    try:
        value = Decimal(body.replace(",", ""))
    except InvalidOperation:  # pragma: no cover - regex already guards this
        return None
    if negative:
        value = -value
    return Number(value, unit)


@dataclass(frozen=True)
class Cell:
    """One table cell. ``raw_text`` keeps the bold marker as written."""

    raw_text: str

    @classmethod
    def make(cls, content: str, emphasized: bool = False) -> "Cell":
        content = content.strip()
        if emphasized:
            return cls(f"{BOLD} {content}" if content else BOLD)
        return cls(content)

    @property
    def emphasized(self) -> bool:
        return self.raw_text.startswith(BOLD)

    @property
    def content(self) -> str:
        """Cell text with the bold marker removed."""
        if self.emphasized:
            return self.raw_text[len(BOLD):].strip()
        return self.raw_text

    @property
    def number(self) -> Number | None:
        return _parse_number_text(self.raw_text)

    @property
    def value(self) -> Number | str | None:
        num = self.number
        if num is not None:
            return num
        return self.content or None

    @property
    def is_empty(self) -> bool:
        return not self.content


def parse_numeric(cell: Cell | str) -> Number | None:
    """Extract a decimal number (and unit) from a cell, or ``None``.

    Handles bold markers, thousands separators, ``%`` and other trailing
    unit tokens, leading currency symbols and parenthesized negatives.
    """
    text = cell.raw_text if isinstance(cell, Cell) else cell
    return _parse_number_text(text)


@dataclass(frozen=True)
class CellAddress:
    row: int
    col: int

    def __post_init__(self) -> None:
        if self.row < 1 or self.col < 1:
            raise ValueError(f"cell addresses are 1-indexed, got {self.row},{self.col}")

    def __str__(self) -> str:
        return f"({self.row},{self.col})"


def _normalize_label(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class Table:
    caption: str
    rows: tuple[tuple[Cell, ...], ...]
    header_row_count: int = 1
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not self.rows or not self.rows[0]:
            raise TableError("a table needs at least one row and one column")
        width = len(self.rows[0])
        if any(len(r) != width for r in self.rows):
            raise TableError("all rows must have the same number of cells")
        if self.header_row_count < 0:
            raise TableError("header_row_count must be >= 0")

    @classmethod
    def from_grid(
        cls, grid: Sequence[Sequence[str]], caption: str = "", header_row_count: int = 1
    ) -> "Table":
        """Build from cell strings; ragged rows are padded like ``parse_table``."""
        if not grid:
            raise EmptyInput("empty grid")
        width = max(len(r) for r in grid)
        notes = []
        rows = []
        for i, r in enumerate(grid, start=1):
            cells = [Cell(str(c).strip()) for c in r]
            if len(cells) < width:
                notes.append(f"row {i} padded from {len(cells)} to {width} cells")
                cells += [Cell("")] * (width - len(cells))
            rows.append(tuple(cells))
        for note in notes:
            warnings.warn(note, RaggedRowWarning, stacklevel=2)
        return cls(caption, tuple(rows), header_row_count, tuple(notes))

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.rows[0])

    def grid(self) -> list[list[str]]:
        return [[c.raw_text for c in row] for row in self.rows]

    def to_json(self) -> dict:
        return {"caption": self.caption, "rows": self.grid()}

    @classmethod
    def from_json(cls, obj: dict, header_row_count: int | None = None) -> "Table":
        hrc = obj.get("header_row_count", 1) if header_row_count is None else header_row_count
        return cls.from_grid(obj["rows"], caption=obj.get("caption", ""), header_row_count=hrc)

    def addresses(self) -> Iterable[CellAddress]:
        for r in range(1, self.n_rows + 1):
            for c in range(1, self.n_cols + 1):
                yield CellAddress(r, c)

    def physical_row(self, row: int, convention: RowConvention = RowConvention.ABSOLUTE) -> int:
        """Translate a row number under ``convention`` to an absolute row."""
        if convention is RowConvention.DATA:
            return row + self.header_row_count
        return row

    def convention_row(self, row: int, convention: RowConvention) -> int:
        """Inverse of :meth:`physical_row`."""
        if convention is RowConvention.DATA:
            return row - self.header_row_count
        return row


def get_cell(t: Table, address: CellAddress | tuple[int, int]) -> Cell:
    if not isinstance(address, CellAddress):
        address = CellAddress(*address)
    if address.row > t.n_rows:
        raise OutOfRange("row", address.row, t.n_rows)
    if address.col > t.n_cols:
        raise OutOfRange("col", address.col, t.n_cols)
    return t.rows[address.row - 1][address.col - 1]


def _match(candidates: list[tuple[int, str]], needle: str, what: str) -> int:
    exact = [i for i, text in candidates if text == needle]
    if len(exact) == 1:
        return exact[0]
    if len(exact) > 1:
        raise Ambiguous(what, needle, exact)
    norm = _normalize_label(needle)
    loose = [i for i, text in candidates if _normalize_label(text) == norm]
    if len(loose) == 1:
        return loose[0]
    if len(loose) > 1:
        raise Ambiguous(what, needle, loose)
    raise NotFound(what, needle)


def find_row_by_label(t: Table, label: str, col: int = 1) -> int:
    """Absolute row index whose ``col``-th cell matches ``label``.

    Header rows are searched too, so the header counts as row 1.
    """
    cands = [(i, row[col - 1].content) for i, row in enumerate(t.rows, start=1)]
    return _match(cands, label.strip(), "row label")


def find_col_by_header(t: Table, header: str, header_rows: Iterable[int] | None = None) -> int:
    """Column index whose header cell matches ``header``.

    Only the first row is searched unless ``header_rows`` says otherwise.
    Several header rows matching in the same column count once.
    """
    rows = list(header_rows) if header_rows is not None else [1]
    cands: list[tuple[int, str]] = []
    for r in rows:
        cands += [(j, cell.content) for j, cell in enumerate(t.rows[r - 1], start=1)]
    try:
        return _match(cands, header.strip(), "column header")
    except Ambiguous as err:
        cols = sorted(set(err.candidates))
        if len(cols) == 1:
            return cols[0]
        raise Ambiguous("column header", header, cols) from None


def _split_fields(line: str) -> list[str]:
    """Split one ``| a | b |`` line; ``\\|`` is a literal pipe."""
    inner = line[1:-1]
    fields, buf = [], []
    i = 0
    while i < len(inner):
        ch = inner[i]
        if ch == "\\" and i + 1 < len(inner) and inner[i + 1] == "|":
            buf.append("|")
            i += 2
            continue
        if ch == "|":
            fields.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    fields.append("".join(buf))
    return [f.strip() for f in fields]


def _is_delimited(line: str) -> bool:
    return len(line) >= 2 and line.startswith("|") and line.endswith("|") and not line.endswith("\\|")


def parse_table(src: str, caption: str = "", header_row_count: int = 1) -> Table:
    """Parse pipe-delimited table text.

    Blank lines and markdown alignment rows (``|---|:--:|``) are skipped.
    Ragged rows are padded with empty cells and reported through
    :class:`RaggedRowWarning` and ``Table.warnings``.
    """
    if not src or not src.strip():
        raise EmptyInput("table source is empty")
    lines = [(n, ln.strip()) for n, ln in enumerate(src.splitlines(), start=1)]
    lines = [(n, ln) for n, ln in lines if ln]
    if not any(_is_delimited(ln) for _, ln in lines):
        raise NoDelimitedLines("no pipe-delimited lines found")
    grid: list[list[str]] = []
    for n, ln in lines:
        if not _is_delimited(ln):
            raise MalformedLine(n, ln)
        fields = _split_fields(ln)
        if fields and all(_SEPARATOR_FIELD.match(f) for f in fields) and any(len(f) >= 3 for f in fields):
            continue
        grid.append(fields)
    return Table.from_grid(grid, caption=caption, header_row_count=header_row_count)


def _escape(text: str) -> str:
    return text.replace("|", "\\|")


def render_table(t: Table) -> str:
    return "\n".join(
        "| " + " | ".join(_escape(c.raw_text) for c in row) + " |" for row in t.rows
    )


def split_caption(text: str) -> tuple[str, str]:
    """Split a table file into (caption, pipe grid).

    Non-pipe lines before the grid form the caption. The ``Caption`` and
    ``Table`` section labels used in the prompt examples are dropped.
    """
    caption_lines, grid_lines = [], []
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("|") or grid_lines:
            grid_lines.append(line)
        elif s and s not in ("Caption", "Table"):
            caption_lines.append(s)
    return " ".join(caption_lines), "\n".join(grid_lines)
