"""Claim production: positives, refuted counterparts, out-of-scope rewrites, pair checks.

Every model call goes through the shared client with one of the factory
templates (``positive``, ``flip``, ``manipulate``, ``oos``). Negatives come
from a minimal semantic flip or from altering one quoted number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields, replace
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .chain import Claim, Verdict
from .dataset import DatasetEntry, dumps, iter_jsonl
from .llm import GenerationRequest, LLMClient
from .oracle import Expr, Literal, OracleError, evaluate, parse_check, print_check
from .parsing import OutputFormatError, parse_claim_bullets, parse_section
from .prompts import TemplateSet
from .tables import Table, render_table

BANNED_WORDS = ("significantly", "substantially", "consistently", "poorly", "similarly")
# The printed prompt spells one entry "smilarly"; models echo it, so it is banned too.
BANNED_VARIANTS = BANNED_WORDS + ("smilarly",)
_BANNED = re.compile(r"\b(" + "|".join(BANNED_VARIANTS) + r")\b", re.IGNORECASE)
_NUMBER = re.compile(r"(?<![\w.])\d+(?:\.\d+)?(?![\d.]*\d)")


class FactoryError(Exception):
    pass


class GenerationBudgetExceeded(FactoryError):
    pass


class NoQuantitativeElement(FactoryError):
    pass


class CouldNotFalsify(FactoryError):
    pass


class NegativeMethod(str, Enum):
    SEMANTIC_FLIP = "SEMANTIC_FLIP"
    DATA_MANIPULATION = "DATA_MANIPULATION"


class Validation(str, Enum):
    ORACLE = "ORACLE"
    MULTIPATH = "MULTIPATH"
    HUMAN = "HUMAN"
    UNVALIDATED = "UNVALIDATED"


@dataclass(frozen=True)
class FactoryConfig:
    model_id: str = "default"
    temperature: float = 0.8
    top_p: float = 0.9
    seed: int | None = None
    budget: int = 3  # regenerations after the first attempt
    max_edit_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise FactoryError("budget must be >= 0")
        if not 0 < self.max_edit_fraction <= 1:
            raise FactoryError("max_edit_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ClaimPair:
    table_ref: str
    positive: Claim
    negative: Claim
    negative_method: NegativeMethod
    validation: Validation = Validation.UNVALIDATED

    def __post_init__(self) -> None:
        if self.positive.gold_label is not Verdict.SUPPORT:
            raise FactoryError("the positive claim of a pair must be SUPPORT")
        if self.negative.gold_label is not Verdict.REFUTE:
            raise FactoryError("the negative claim of a pair must be REFUTE")

    @property
    def id(self) -> str:
        return self.positive.id

    def to_entries(self, table: Table, domain: str = "other") -> list[DatasetEntry]:
        extra = {
            "pair_id": self.id,
            "table_ref": self.table_ref,
            "negative_method": self.negative_method.value,
            "validation": self.validation.value,
        }
        return [
            DatasetEntry(
                id=c.id, domain=domain, caption=table.caption, rows=table.grid(), claim=c.text,
                label=c.gold_label, provenance="GENERATED", check=c.check, extra=dict(extra),
            )
            for c in (self.positive, self.negative)
        ]


def pairs_from_entries(entries: Iterable[DatasetEntry]) -> list[ClaimPair]:
    """Rebuild pairs from dataset entries written by :meth:`ClaimPair.to_entries`."""
    groups: dict[str, dict[Verdict, DatasetEntry]] = {}
    for e in entries:
        if "pair_id" in e.extra:
            groups.setdefault(e.extra["pair_id"], {})[e.label] = e
    out = []
    for pid, g in groups.items():
        pos, neg = g[Verdict.SUPPORT], g[Verdict.REFUTE]
        out.append(ClaimPair(
            table_ref=neg.extra.get("table_ref", ""),
            positive=pos.to_claim(),
            negative=neg.to_claim(),
            negative_method=NegativeMethod(neg.extra["negative_method"]),
            validation=Validation(neg.extra["validation"]),
        ))
    return out


# -- guards -----------------------------------------------------------------------

def banned_words_in(text: str) -> list[str]:
    return [m.group(1).lower() for m in _BANNED.finditer(text)]


def token_edit_distance(a: str, b: str) -> int:
    """Levenshtein distance over whitespace tokens."""
    x, y = a.split(), b.split()
    prev = list(range(len(y) + 1))
    for i, tx in enumerate(x, start=1):
        cur = [i] + [0] * len(y)
        for j, ty in enumerate(y, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (tx != ty))
        prev = cur
    return prev[-1]


def within_edit_guard(original: str, edited: str, max_fraction: float = 0.25) -> bool:
    """True when the edit is non-empty and at most ``max_fraction`` of the original's tokens."""
    d = token_edit_distance(original, edited)
    return 0 < d <= max_fraction * len(original.split())


def only_numbers_changed(original: str, edited: str) -> bool:
    """Same token count and every changed token carries a digit on both sides."""
    x, y = original.split(), edited.split()
    if len(x) != len(y):
        return False
    diff = [(a, b) for a, b in zip(x, y) if a != b]
    digit = re.compile(r"\d")
    return bool(diff) and all(digit.search(a) and digit.search(b) for a, b in diff)


# -- model calls --------------------------------------------------------------------

def _ask(
    client: LLMClient, templates: TemplateSet, stage: str, table: Table, claim: str,
    config: FactoryConfig,
) -> str:
    ctx = {"caption": table.caption, "table": render_table(table), "claim": claim}
    system, user = templates.render(stage, ctx)
    req = GenerationRequest.chat(
        config.model_id, system, user,
        temperature=config.temperature, top_p=config.top_p, seed=config.seed,
    )
    return client.generate(req).text


def generate_positive(
    table: Table,
    client: LLMClient,
    templates: TemplateSet,
    config: FactoryConfig | None = None,
    id_prefix: str = "",
    domain: str = "other",
) -> list[Claim]:
    """Supported claims from the positive-claim prompt.

    A response with any claim carrying a banned vague word is regenerated;
    clean claims from every attempt are kept, without duplicates.
    """
    config = config or FactoryConfig()
    kept: list[str] = []
    for _ in range(config.budget + 1):
        text = _ask(client, templates, "positive", table, "", config)
        try:
            bullets = parse_claim_bullets(text)
        except OutputFormatError:
            continue
        rejected = 0
        for _aspect, claim in bullets:
            if banned_words_in(claim):
                rejected += 1
            elif claim not in kept:
                kept.append(claim)
        if kept and not rejected:
            break
    if not kept:
        raise GenerationBudgetExceeded("no clean positive claims within the budget")
    return [
        Claim(text, f"{id_prefix}pos{i}", Verdict.SUPPORT, domain)
        for i, text in enumerate(kept, start=1)
    ]


def _edited_claim(text: str) -> str:
    return " ".join(parse_section(text, "Claim").split())


def flip_claim(
    claim: Claim,
    table: Table,
    client: LLMClient,
    templates: TemplateSet,
    config: FactoryConfig | None = None,
) -> Claim:
    """Refuted counterpart by a minimal meaning-reversing edit, within the edit guard."""
    config = config or FactoryConfig()
    if claim.gold_label is not Verdict.SUPPORT:
        raise FactoryError("only supported claims are flipped")
    for _ in range(config.budget + 1):
        try:
            edited = _edited_claim(_ask(client, templates, "flip", table, claim.text, config))
        except OutputFormatError:
            continue
        if edited and within_edit_guard(claim.text, edited, config.max_edit_fraction):
            return Claim(edited, f"{claim.id}-neg", Verdict.REFUTE, claim.domain_tag)
    raise GenerationBudgetExceeded(f"no flip of {claim.id!r} passed the edit guard")


def _alternatives(text: str) -> list[Decimal]:
    """Deterministic replacement values at the printed precision, nearest first."""
    v = Decimal(text)
    places = Decimal(1).scaleb(v.as_tuple().exponent)
    raw = [v - 2, v + 2, v * Decimal("0.85"), v * Decimal("1.15"), v / 2, v * 2]
    out = []
    for r in raw:
        q = r.quantize(places)
        if q >= 0 and q != v and q not in out:
            out.append(q)
    return out


def _swap_literals(node, old: Decimal, new: Decimal):
    if isinstance(node, Literal):
        return replace(node, value=new) if node.value == old else node
    if not hasattr(node, "__dataclass_fields__"):
        return node
    changes = {}
    for f in fields(node):
        val = getattr(node, f.name)
        if isinstance(val, tuple):
            changes[f.name] = tuple(_swap_literals(v, old, new) for v in val)
        elif hasattr(val, "__dataclass_fields__"):
            changes[f.name] = _swap_literals(val, old, new)
    return replace(node, **changes)


def _holds(expr: Expr, table: Table) -> bool | None:
    try:
        value = evaluate(expr, table).value
    except OracleError:
        return None
    return value if isinstance(value, bool) else None


def manipulate_data(
    claim: Claim,
    table: Table,
    client: LLMClient | None = None,
    templates: TemplateSet | None = None,
    config: FactoryConfig | None = None,
) -> Claim:
    """Refuted counterpart by altering one quoted number.

    With a check attached, each quoted number that appears as a literal in
    the check is tried against fixed alternatives until the check turns
    FALSE; the negative carries the altered check. Without a check the model
    proposes the change (only numeric tokens may differ), or, with no model,
    the first number is moved down by 2 unvalidated.
    """
    config = config or FactoryConfig()
    matches = list(_NUMBER.finditer(claim.text))
    if not matches:
        raise NoQuantitativeElement(f"claim {claim.id!r} quotes no number")

    def rewrite(m: re.Match, value: Decimal) -> str:
        return claim.text[:m.start()] + str(value) + claim.text[m.end():]

    if claim.check:
        expr = parse_check(claim.check)
        if _holds(expr, table) is not True:
            raise CouldNotFalsify(f"check of {claim.id!r} does not hold on the table")
        for m in matches:
            old = Decimal(m.group(0))
            for new in _alternatives(m.group(0)):
                altered = _swap_literals(expr, old, new)
                if altered == expr:
                    break
                if _holds(altered, table) is False:
                    return Claim(rewrite(m, new), f"{claim.id}-neg", Verdict.REFUTE,
                                 claim.domain_tag, print_check(altered))
        raise CouldNotFalsify(f"no single-number change falsifies the check of {claim.id!r}")

    if client is not None and templates is not None:
        for _ in range(config.budget + 1):
            try:
                edited = _edited_claim(_ask(client, templates, "manipulate", table, claim.text, config))
            except OutputFormatError:
                continue
            if only_numbers_changed(claim.text, edited):
                return Claim(edited, f"{claim.id}-neg", Verdict.REFUTE, claim.domain_tag)
        raise GenerationBudgetExceeded(f"no numeric alteration of {claim.id!r} passed the guard")

    m = matches[0]
    alts = _alternatives(m.group(0))
    if not alts:
        raise CouldNotFalsify(f"no alternative value for {m.group(0)}")
    return Claim(rewrite(m, alts[0]), f"{claim.id}-neg", Verdict.REFUTE, claim.domain_tag)


def rewrite_oos(
    claim: Claim | str,
    table: Table,
    client: LLMClient,
    templates: TemplateSet,
    config: FactoryConfig | None = None,
    recheck: Callable[[Claim], Verdict | None] | None = None,
) -> Claim:
    """Rewrite a claim so it is checkable from the table alone.

    ``recheck`` (for instance a multipath run) must return the claim's gold
    label for the rewrite to be accepted; otherwise the rewrite is retried.
    """
    config = config or FactoryConfig()
    if isinstance(claim, str):
        if not claim.strip():
            raise FactoryError("cannot rewrite an empty claim")
        claim = Claim(claim, "", Verdict.SUPPORT)
    want = claim.gold_label or Verdict.SUPPORT
    for _ in range(config.budget + 1):
        try:
            text = _edited_claim(_ask(client, templates, "oos", table, claim.text, config))
        except OutputFormatError:
            continue
        if not text:
            continue
        out = Claim(text, claim.id, want, claim.domain_tag, None)
        if recheck is None or recheck(out) is want:
            return out
    raise GenerationBudgetExceeded(f"no in-scope rewrite of {claim.id!r} re-validated")


# -- validation ----------------------------------------------------------------------

LabelOf = Callable[[Claim], "Verdict | None"]


def validate_pair(
    pair: ClaimPair,
    table: Table,
    multipath: LabelOf | None = None,
    queue=None,
) -> ClaimPair:
    """Check a pair with the oracle when both claims carry checks, else with
    ``multipath`` (claim to agreed label). Failures and unvalidated pairs go
    to ``queue``; a pair is never promoted without passing a validator.
    """
    pos, neg = pair.positive, pair.negative
    if pos.check and neg.check:
        got = (_holds(parse_check(pos.check), table), _holds(parse_check(neg.check), table))
        if got == (True, False):
            return replace(pair, validation=Validation.ORACLE)
        labels = [Verdict.SUPPORT if g else Verdict.REFUTE if g is False else Verdict.NOT_ENOUGH_INFO
                  for g in got]
        reason = "oracle disagrees with gold labels"
    elif multipath is not None:
        labels = [multipath(pos) or Verdict.NOT_ENOUGH_INFO, multipath(neg) or Verdict.NOT_ENOUGH_INFO]
        if labels == [Verdict.SUPPORT, Verdict.REFUTE]:
            return replace(pair, validation=Validation.MULTIPATH)
        reason = "multipath disagrees with gold labels"
    else:
        labels, reason = [], "no validator available"
    if queue is not None:
        queue.put(pair.id, labels, [], reason=reason)
    return replace(pair, validation=Validation.UNVALIDATED)


def import_human_verdicts(pairs: Sequence[ClaimPair], source: str | Path | Iterable[dict]) -> list[ClaimPair]:
    """Apply adjudication results ``{"pair_id", "accept"}``.

    Accepted pairs become HUMAN-validated, rejected pairs are dropped and
    pairs without a verdict pass through unchanged.
    """
    records = iter_jsonl(source) if isinstance(source, (str, Path)) else source
    verdicts = {}
    for r in records:
        if not isinstance(r.get("accept"), bool):
            raise FactoryError(f"verdict for {r.get('pair_id')!r} needs a boolean 'accept'")
        verdicts[r["pair_id"]] = r["accept"]
    out = []
    for p in pairs:
        v = verdicts.get(p.id)
        if v is None:
            out.append(p)
        elif v:
            out.append(replace(p, validation=Validation.HUMAN))
    return out


def generate_pairs(
    table: Table,
    table_ref: str,
    client: LLMClient,
    templates: TemplateSet,
    config: FactoryConfig | None = None,
    method: str = "flip",
    domain: str = "other",
) -> list[ClaimPair]:
    """One refuted counterpart per generated positive.

    A positive whose negative cannot be produced is dropped with it, so the
    output is balanced per table. ``method`` is "flip", "manipulate" or
    "mixed" (alternating, starting with a flip).
    """
    if method not in ("flip", "manipulate", "mixed"):
        raise FactoryError(f"unknown negative method {method!r}")
    config = config or FactoryConfig()
    positives = generate_positive(table, client, templates, config, f"{table_ref}-", domain)
    pairs = []
    for i, pos in enumerate(positives):
        use_flip = method == "flip" or (method == "mixed" and i % 2 == 0)
        try:
            if use_flip:
                neg = flip_claim(pos, table, client, templates, config)
                how = NegativeMethod.SEMANTIC_FLIP
            else:
                neg = manipulate_data(pos, table, client, templates, config)
                how = NegativeMethod.DATA_MANIPULATION
        except FactoryError:
            continue
        pairs.append(ClaimPair(table_ref, pos, neg, how))
    return pairs


def dump_pairs(pairs: Iterable[ClaimPair], table: Table, domain: str = "other") -> list[str]:
    return [dumps(e.to_json()) for p in pairs for e in p.to_entries(table, domain)]
