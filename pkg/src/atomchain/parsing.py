"""Parsers for the structured formats stage outputs must follow.

Every parser is total: it returns a value or raises an :class:`OutputFormatError`
subclass whose ``kind`` names the failure, so the orchestrator can decide
whether to regenerate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .chain import ExtractedFact, SkillTag, StepFlag, Subplan
from .tables import CellAddress, Number, Table, parse_numeric


class OutputFormatError(ValueError):
    kind = "format"


class NoPlansFound(OutputFormatError):
    kind = "NoPlansFound"


class NonContiguousIndices(OutputFormatError):
    kind = "NonContiguousIndices"

    def __init__(self, found: list[int]):
        super().__init__(f"plan indices {found} are not 1..N in order")
        self.found = found


class UnterminatedPlan(OutputFormatError):
    kind = "UnterminatedPlan"

    def __init__(self, index: int):
        super().__init__(f"[Plan {index} Start] has no matching end marker")
        self.index = index


class MissingOpenTag(OutputFormatError):
    kind = "MissingOpenTag"


class MissingCloseTag(OutputFormatError):
    kind = "MissingCloseTag"


class HeaderNotFound(OutputFormatError):
    kind = "HeaderNotFound"


def _normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


# -- plans -------------------------------------------------------------------

_PLAN_START = re.compile(r"\[\s*Plan\s+(\d+)\s+Start\s*\]")
_PLAN_END = re.compile(r"\[\s*Plan\s+(\d+)\s+End\s*\]")


def parse_plans(text: str) -> list[Subplan]:
    text = _normalize_newlines(text)
    starts = list(_PLAN_START.finditer(text))
    if not starts:
        raise NoPlansFound("no [Plan i Start] markers found")
    plans = []
    for n, m in enumerate(starts):
        idx = int(m.group(1))
        stop = starts[n + 1].start() if n + 1 < len(starts) else len(text)
        end = None
        for e in _PLAN_END.finditer(text, m.end(), stop):
            if int(e.group(1)) == idx:
                end = e
                break
        if end is None:
            raise UnterminatedPlan(idx)
        plans.append(Subplan(idx, text[m.end():end.start()].strip()))
    found = [p.index for p in plans]
    if found != list(range(1, len(found) + 1)):
        raise NonContiguousIndices(found)
    return plans


def render_plans(plans: list[Subplan]) -> str:
    return "\n\n".join(f"[Plan {p.index} Start]{p.text}[Plan {p.index} End]" for p in plans)


# -- tags --------------------------------------------------------------------

TAGS = ("grounding", "extraction", "conclusion")


def parse_tagged(text: str, tag: str) -> str:
    """Inner text of the first well-nested ``<tag>...</tag>`` region.

    ``<\\/tag>`` is accepted as a closing tag because the printed prompts
    show it that way and models copy it.
    """
    text = _normalize_newlines(text)
    open_tok = f"<{tag}>"
    close_re = re.compile(rf"<\\?/{re.escape(tag)}>")
    token_re = re.compile(rf"<{re.escape(tag)}>|<\\?/{re.escape(tag)}>")
    start = text.find(open_tok)
    if start < 0:
        raise MissingOpenTag(f"<{tag}> not found")
    depth = 0
    for m in token_re.finditer(text, start):
        if close_re.fullmatch(m.group(0)):
            depth -= 1
            if depth == 0:
                return text[start + len(open_tok):m.start()].strip()
        else:
            depth += 1
    raise MissingCloseTag(f"</{tag}> not found after <{tag}>")


# -- flags -------------------------------------------------------------------

_FLAG = re.compile(
    r"<flag>\s*(true|false|flase|not\s+enough\s+information)\s*<\\?/flag>",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class ParsedFlag:
    value: StepFlag
    span: tuple[int, int]
    typo: bool = False
    warnings: tuple[str, ...] = ()


def parse_flag(text: str) -> ParsedFlag | None:
    """Last ``<flag>`` in ``text``; the misspelling ``Flase`` reads as FALSE."""
    matches = list(_FLAG.finditer(text))
    if not matches:
        return None
    m = matches[-1]
    word = " ".join(m.group(1).lower().split())
    value = {
        "true": StepFlag.TRUE,
        "false": StepFlag.FALSE,
        "flase": StepFlag.FALSE,
        "not enough information": StepFlag.NOT_ENOUGH_INFO,
    }[word]
    notes = ("MultipleFlags",) if len(matches) > 1 else ()
    return ParsedFlag(value, m.span(), typo=word == "flase", warnings=notes)


# -- claim bullets -----------------------------------------------------------

_CLAIMS_HEADER = re.compile(r"^\s*#{1,6}\s*Claims Details\s*$", re.MULTILINE)
_BULLET = re.compile(r"^\s*[-*•]\s+(.*)$")


def parse_claim_bullets(text: str) -> list[tuple[str, str]]:
    text = _normalize_newlines(text)
    m = _CLAIMS_HEADER.search(text)
    if not m:
        raise HeaderNotFound("'### Claims Details' header not found")
    out = []
    for line in text[m.end():].split("\n"):
        if re.match(r"^\s*#{1,6}\s", line):
            break
        b = _BULLET.match(line)
        if not b:
            continue
        body = b.group(1).strip()
        aspect, sep, claim = body.partition(":")
        if not sep:
            continue
        aspect = aspect.strip().strip("[]*").strip()
        claim = claim.strip()
        if aspect and claim:
            out.append((aspect, claim))
    return out


def render_claim_bullets(pairs: list[tuple[str, str]]) -> str:
    lines = ["### Claims Details"] + [f"- {a}: {c}" for a, c in pairs]
    return "\n".join(lines)


_SECTION = re.compile(r"^\s*#{1,6}\s*(.+?)\s*$", re.MULTILINE)


def parse_section(text: str, header: str) -> str:
    """Body under a ``### header`` line up to the next markdown header."""
    text = _normalize_newlines(text)
    heads = list(_SECTION.finditer(text))
    for n, h in enumerate(heads):
        if h.group(1).strip("* ").lower() == header.lower():
            stop = heads[n + 1].start() if n + 1 < len(heads) else len(text)
            return text[h.end():stop].strip()
    raise HeaderNotFound(f"'### {header}' header not found")


# -- extraction facts ----------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_NUM_IN_TEXT = re.compile(r"\(?[-−]?\d[\d,]*(?:\.\d+)?\)?\s*%?")


def _mentions(sentence: str, names: list[tuple[int, str]]) -> list[tuple[int, int, int]]:
    """Occurrences (index, start, end) of ``names`` in ``sentence``, longest first wins."""
    low = sentence.casefold()
    hits = []
    for idx, name in names:
        key = name.casefold().strip()
        if not key:
            continue
        for m in re.finditer(re.escape(key), low):
            a, b = m.span()
            before = low[a - 1] if a > 0 else " "
            after = low[b] if b < len(low) else " "
            if before.isalnum() or after.isalnum():
                continue
            hits.append((idx, a, b))
    hits.sort(key=lambda h: (-(h[2] - h[1]), h[1]))
    taken: list[tuple[int, int, int]] = []
    for h in hits:
        if all(h[2] <= t[1] or h[1] >= t[2] for t in taken):
            taken.append(h)
    return taken


def extract_cell_facts(extraction: str, table: Table) -> list[ExtractedFact]:
    """Best-effort lift of extraction sentences into addressed facts.

    A sentence naming exactly one row label (first column) and one column
    header plus a number yields an addressed fact; other sentences become
    description-only facts.
    """
    text = " ".join(_normalize_newlines(extraction).split())
    if not text:
        return []
    h = table.header_row_count or 1
    row_names = [(r, table.rows[r - 1][0].content) for r in range(h + 1, table.n_rows + 1)]
    col_names = [
        (c, table.rows[r - 1][c - 1].content)
        for r in range(1, h + 1)
        for c in range(1, table.n_cols + 1)
    ]
    facts = []
    for sentence in _SENTENCE_SPLIT.split(text):
        sentence = sentence.strip()
        if not sentence:
            continue
        rows = _mentions(sentence, row_names)
        cols = _mentions(sentence, col_names)
        # A header that only overlaps a row label mention is not a column mention.
        cols = [c for c in cols if all(c[2] <= r[1] or c[1] >= r[2] for r in rows)]
        masked = list(sentence)
        for _, a, b in rows + cols:
            masked[a:b] = [" "] * (b - a)
        numbers = [
            n for n in (parse_numeric(m.group(0)) for m in _NUM_IN_TEXT.finditer("".join(masked)))
            if n is not None
        ]
        row_ids = {r[0] for r in rows}
        col_ids = {c[0] for c in cols}
        value: Number | None = numbers[-1] if numbers else None
        if len(row_ids) == 1 and len(col_ids) == 1:
            addr = CellAddress(row_ids.pop(), col_ids.pop())
            facts.append(ExtractedFact(sentence, addr, value))
        else:
            facts.append(ExtractedFact(sentence, None, value))
    return facts


# -- skill tagging -------------------------------------------------------------

_SKILL_CUES = {
    SkillTag.NUMERICAL_ANALYSIS: (
        r"\bcompar", r"\bgreater\b", r"\blower\b", r"\bhigher\b", r"\bless than\b",
        r"\bsum\b", r"\baverage\b", r"\bmean\b", r"\btotal\b", r"\bdifference\b",
        r"\bratio\b", r"%", r"\bcalculat", r"\bmultipl", r"\bdivid",
    ),
    SkillTag.STRUCTURE_ANALYSIS: (
        r"\brow\b", r"\bcolumn\b", r"\bheader", r"\bcell\b", r"\bintersection\b",
    ),
    SkillTag.CAUSAL_ANALYSIS: (
        r"\bcaus", r"\bdue to\b", r"\bbecause\b", r"\bcorrelat", r"\btrend\b",
        r"\bleads? to\b", r"\bresults? in\b", r"\bas .* increases\b",
    ),
    SkillTag.CONCEPTUAL_UNDERSTANDING: (
        r"\brefers to\b", r"\bindicates?\b", r"\bmeans\b", r"\bdefin", r"\bbetter performance\b",
    ),
}


def tag_skills(text: str) -> set[SkillTag]:
    """Keyword heuristic for the atomic skills a reasoning step exercised."""
    low = text.lower()
    return {
        skill
        for skill, cues in _SKILL_CUES.items()
        if any(re.search(c, low) for c in cues)
    }
