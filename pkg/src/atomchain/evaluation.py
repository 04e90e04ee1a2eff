"""Chain-quality metrics, label accuracy and error-type tallies.

Rates are exact ``Fraction`` values. Accuracy, redundancy and alignment come
from judgments (model, human or oracle); granularity and interpretability
come from human 0-10 scores.
"""

from __future__ import annotations

import csv
import io
import re
import warnings
from collections import Counter
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .chain import ChainTrace, SkillTag, StepRecord, Verdict
from .oracle import Expr, OracleError, evaluate
from .parsing import parse_flag
from .tables import Cell, CellAddress, Table

NEI_POLICIES = ("wrong", "exclude")


class EvaluationError(ValueError):
    pass


class MissingJudgment(EvaluationError):
    def __init__(self, step: int):
        super().__init__(f"no judgment for step {step}")
        self.step = step


class MissingGold(EvaluationError, KeyError):
    def __init__(self, claim_id: str):
        super().__init__(claim_id)
        self.claim_id = claim_id


class UnknownTrace(EvaluationError, KeyError):
    def __init__(self, trace_id: str):
        super().__init__(trace_id)
        self.trace_id = trace_id


class ScoreOutOfRange(EvaluationError):
    pass


class MissingAnnotatorWarning(UserWarning):
    pass


class StepVerdict(str, Enum):
    CORRECT = "CORRECT"
    INCORRECT = "INCORRECT"


class ErrorTag(str, Enum):
    SNOWBALL = "SNOWBALL"
    CONTEXTUAL_CONFLICT = "CONTEXTUAL_CONFLICT"
    COARSE_GRAINED = "COARSE_GRAINED"


@dataclass(frozen=True)
class StepJudgment:
    step: int
    verdict: StepVerdict
    judge: str = "ORACLE"  # "MODEL:<id>", "HUMAN:<annotator>" or "ORACLE"


def step_accuracy(judgments: Iterable[StepJudgment], n_steps: int) -> Fraction:
    """Share of executed steps judged correct.

    Judgments are keyed by step; a repeated judgment for a step replaces the
    earlier one.
    """
    if n_steps < 1:
        raise EvaluationError("step accuracy needs at least one executed step")
    by_step: dict[int, StepVerdict] = {}
    for j in judgments:
        if not 1 <= j.step <= n_steps:
            raise EvaluationError(f"judgment for step {j.step} outside 1..{n_steps}")
        by_step[j.step] = j.verdict
    for i in range(1, n_steps + 1):
        if i not in by_step:
            raise MissingJudgment(i)
    correct = sum(1 for v in by_step.values() if v is StepVerdict.CORRECT)
    return Fraction(correct, n_steps)


# -- judged dimensions ---------------------------------------------------------

@dataclass(frozen=True)
class ContextElement:
    kind: str  # "plan", "grounding" or "fact"
    text: str
    address: CellAddress | None = None


_SENTENCES = re.compile(r"(?<=[.!?])\s+")


def context_elements(step: StepRecord) -> list[ContextElement]:
    """The local context units of a step: plan sentence, grounding sentences, facts."""
    out = [ContextElement("plan", step.subplan.text)] if step.subplan.text.strip() else []
    if step.grounding:
        out += [
            ContextElement("grounding", s.strip())
            for s in _SENTENCES.split(" ".join(step.grounding.split()))
            if s.strip()
        ]
    out += [ContextElement("fact", f.description, f.address) for f in step.extraction]
    return out


class Judge(Protocol):
    def redundant(self, step: StepRecord, elements: Sequence[ContextElement], index: int) -> bool:
        """True when the step's result is unchanged without ``elements[index]``."""
        ...

    def aligned(self, previous: StepRecord, current: StepRecord) -> bool:
        """True when ``current`` neither contradicts nor drops ``previous``."""
        ...


class ScriptedJudge:
    """Fixed answers, for tests and offline replays of stored judgments."""

    def __init__(
        self,
        redundant: Callable[[int, ContextElement], bool] | Iterable[int] = (),
        aligned: Callable[[StepRecord, StepRecord], bool] | Sequence[bool] = (),
    ):
        self._redundant = redundant if callable(redundant) else set(redundant)
        self._aligned = aligned if callable(aligned) else list(aligned)
        self._pair = 0

    def redundant(self, step, elements, index):
        if callable(self._redundant):
            return self._redundant(index, elements[index])
        return index in self._redundant

    def aligned(self, previous, current):
        if callable(self._aligned):
            return self._aligned(previous, current)
        answer = self._aligned[self._pair] if self._pair < len(self._aligned) else True
        self._pair += 1
        return answer


class OracleJudge:
    """Exact leave-one-out semantics for a step backed by a check expression.

    Removing an element blanks its cell; the element is redundant when the
    check still evaluates to the same value.
    """

    def __init__(self, table: Table, expr: Expr):
        self.table = table
        self.expr = expr
        self.baseline = evaluate(expr, table).value

    def _without(self, address: CellAddress) -> Table:
        rows = [list(r) for r in self.table.rows]
        rows[address.row - 1][address.col - 1] = Cell("")
        return replace(self.table, rows=tuple(tuple(r) for r in rows))

    def redundant(self, step, elements, index):
        el = elements[index]
        if el.address is None:
            return True
        try:
            return evaluate(self.expr, self._without(el.address)).value == self.baseline
        except (OracleError, LookupError):
            return False

    def aligned(self, previous, current):
        raise EvaluationError("the oracle judge does not judge alignment")


REDUNDANCY_PROMPT = """### Task
You check whether a piece of context was needed for a reasoning step over a table.

### Subplan
{subplan}

### Reasoning step
{reasoning}

### Context with one element removed
{context}

### Removed element
{element}

Would the reasoning step reach the same result without the removed element? Answer with <flag>True</flag> if the result is unchanged, otherwise <flag>False</flag>."""

ALIGNMENT_PROMPT = """### Task
You check whether a reasoning step correctly builds on the previous step.

### Previous step
{previous}

### Current step
{current}

Does the current step keep all relevant information from the previous step without contradicting it or altering it? Answer with <flag>True</flag> if it does, otherwise <flag>False</flag>."""


class LLMJudge:
    """Model-as-judge over the shared client; ``runs`` answers are majority-voted."""

    def __init__(self, client, model_id: str, runs: int = 1, temperature: float = 0.0):
        from .llm import GenerationRequest

        self._req = GenerationRequest
        self.client = client
        self.model_id = model_id
        self.runs = runs
        self.temperature = temperature

    def _ask(self, prompt: str) -> bool:
        votes = []
        for seed in range(self.runs):
            req = self._req.chat(
                self.model_id,
                "You are a careful evaluator of table reasoning steps.",
                prompt,
                temperature=self.temperature,
                top_p=1.0,
                seed=seed,
            )
            flag = parse_flag(self.client.generate(req).text)
            votes.append(flag is not None and flag.value.value == "TRUE")
        return sum(votes) * 2 > len(votes)

    def redundant(self, step, elements, index):
        rest = "\n".join(f"- {e.text}" for i, e in enumerate(elements) if i != index)
        return self._ask(
            REDUNDANCY_PROMPT.format(
                subplan=step.subplan.text,
                reasoning=step.reasoning or "",
                context=rest or "(empty)",
                element=elements[index].text,
            )
        )

    def aligned(self, previous, current):
        def show(s: StepRecord) -> str:
            return f"{s.reasoning or ''}\n{s.recap or ''}".strip()

        return self._ask(ALIGNMENT_PROMPT.format(previous=show(previous), current=show(current)))


def redundancy_probe(step: StepRecord, judge: Judge, elements: Sequence[ContextElement] | None = None) -> Fraction:
    """Leave-one-out redundancy rate of one step; no elements gives 0."""
    els = list(elements) if elements is not None else context_elements(step)
    if not els:
        return Fraction(0)
    redundant = sum(1 for i in range(len(els)) if judge.redundant(step, els, i))
    return Fraction(redundant, len(els))


def alignment_check(trace: ChainTrace, judge: Judge) -> Fraction:
    """Share of adjacent step pairs judged aligned; fewer than two steps gives 1."""
    steps = [s for s in trace.steps if s.reasoning is not None]
    pairs = list(zip(steps, steps[1:]))
    if not pairs:
        return Fraction(1)
    return Fraction(sum(1 for a, b in pairs if judge.aligned(a, b)), len(pairs))


# -- human scores --------------------------------------------------------------

@dataclass(frozen=True)
class HumanScores:
    trace_id: str
    granularity: Fraction
    interpretability: Fraction
    annotators: int


def _score(text: str, where: str) -> Fraction:
    try:
        value = Fraction(Decimal(text.strip()))
    except (InvalidOperation, ValueError) as err:
        raise ScoreOutOfRange(f"{where}: {text!r} is not a number") from err
    if not 0 <= value <= 10:
        raise ScoreOutOfRange(f"{where}: score {text} outside 0..10")
    return value


def ingest_human_scores(source: str | Path | io.TextIOBase, expected_annotators: int = 3) -> dict[str, HumanScores]:
    """Per-trace means of annotator scores from a CSV with columns
    ``trace_id, annotator_id, granularity, interpretability``."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        with open(source, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    elif isinstance(source, str):
        rows = list(csv.DictReader(io.StringIO(source)))
    else:
        rows = list(csv.DictReader(source))
    grouped: dict[str, dict[str, tuple[Fraction, Fraction]]] = {}
    for n, row in enumerate(rows, start=2):
        where = f"row {n}"
        tid = row["trace_id"].strip()
        ann = row["annotator_id"].strip()
        grouped.setdefault(tid, {})[ann] = (
            _score(row["granularity"], where),
            _score(row["interpretability"], where),
        )
    out = {}
    for tid, by_ann in grouped.items():
        k = len(by_ann)
        if k < expected_annotators:
            warnings.warn(
                f"trace {tid}: {k} annotator(s), expected {expected_annotators}",
                MissingAnnotatorWarning,
                stacklevel=2,
            )
        g = sum((s[0] for s in by_ann.values()), Fraction(0)) / k
        i = sum((s[1] for s in by_ann.values()), Fraction(0)) / k
        out[tid] = HumanScores(tid, g, i, k)
    return out


# -- per-trace bundle ------------------------------------------------------------

@dataclass(frozen=True)
class TraceMetrics:
    accuracy: Fraction
    redundancy_rate: Fraction
    alignment_rate: Fraction
    granularity: Fraction | None = None
    interpretability: Fraction | None = None

    def __post_init__(self) -> None:
        for name in ("accuracy", "redundancy_rate", "alignment_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise EvaluationError(f"{name} {v} outside [0, 1]")
        for name in ("granularity", "interpretability"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 10:
                raise EvaluationError(f"{name} {v} outside [0, 10]")

    def to_json(self) -> dict:
        return {
            k: (None if v is None else float(v))
            for k, v in (
                ("accuracy", self.accuracy),
                ("redundancy_rate", self.redundancy_rate),
                ("alignment_rate", self.alignment_rate),
                ("granularity", self.granularity),
                ("interpretability", self.interpretability),
            )
        }


def trace_metrics(
    trace: ChainTrace,
    judgments: Iterable[StepJudgment],
    judge: Judge | None = None,
    human: HumanScores | None = None,
) -> TraceMetrics:
    steps = [s for s in trace.steps if s.reasoning is not None]
    acc = step_accuracy(judgments, len(steps))
    if judge is not None:
        rates = [redundancy_probe(s, judge) for s in steps]
        red = sum(rates, Fraction(0)) / len(rates) if rates else Fraction(0)
        align = alignment_check(trace, judge)
    else:
        red, align = Fraction(0), Fraction(1)
    return TraceMetrics(
        acc,
        red,
        align,
        human.granularity if human else None,
        human.interpretability if human else None,
    )


# -- label accuracy --------------------------------------------------------------

@dataclass(frozen=True)
class DomainAccuracy:
    n: int
    correct: int

    @property
    def accuracy(self) -> Fraction | None:
        return Fraction(self.correct, self.n) if self.n else None


DOMAIN_COLUMNS = {
    "ml": "ML",
    "material": "Material",
    "medical": "Medical",
    "finance": "Finance",
    "other": "Other",
}


def label_accuracy(
    records: Iterable[tuple[str, str, Verdict]],
    gold: Mapping[str, Verdict],
    nei_policy: str = "wrong",
) -> dict[str, DomainAccuracy]:
    """Accuracy per domain plus ``"overall"`` from (claim_id, domain, predicted).

    Under ``nei_policy="wrong"`` a NOT_ENOUGH_INFO prediction counts as an
    error; under ``"exclude"`` it is left out of the denominator.
    """
    if nei_policy not in NEI_POLICIES:
        raise EvaluationError(f"unknown NEI policy {nei_policy!r}")
    tallies: dict[str, list[int]] = {}
    for claim_id, domain, predicted in records:
        if claim_id not in gold:
            raise MissingGold(claim_id)
        if predicted is Verdict.NOT_ENOUGH_INFO and nei_policy == "exclude":
            continue
        hit = int(predicted is gold[claim_id])
        for key in (domain, "overall"):
            t = tallies.setdefault(key, [0, 0])
            t[0] += 1
            t[1] += hit
    return {k: DomainAccuracy(n, c) for k, (n, c) in tallies.items()}


def format_accuracy_table(table: Mapping[str, DomainAccuracy], row_label: str = "run") -> str:
    """One-row text table with a column per domain, like a benchmark results table."""
    if not table:
        return ""
    cols = [d for d in DOMAIN_COLUMNS if d in table] + [d for d in table if d not in DOMAIN_COLUMNS and d != "overall"]
    cols.append("overall")
    heads = ["Model"] + [DOMAIN_COLUMNS.get(c, c.title()) for c in cols]
    vals = [row_label] + [
        "n/a" if table[c].accuracy is None else f"{float(table[c].accuracy):.4f}" for c in cols
    ]
    widths = [max(len(h), len(v)) for h, v in zip(heads, vals)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    return "\n".join([line(heads), "-+-".join("-" * w for w in widths), line(vals)])


# -- error annotation ------------------------------------------------------------

@dataclass(frozen=True)
class ErrorAnnotation:
    trace_id: str
    tag: ErrorTag
    group: str = ""


def annotate_errors(
    trace_ids: Iterable[str], tags: Iterable[tuple[str, ErrorTag | str, str]]
) -> list[ErrorAnnotation]:
    known = set(trace_ids)
    out = []
    for trace_id, tag, group in tags:
        if trace_id not in known:
            raise UnknownTrace(trace_id)
        out.append(ErrorAnnotation(trace_id, ErrorTag(tag), group))
    return out


def error_histogram(annotations: Iterable[ErrorAnnotation]) -> dict[str, dict[ErrorTag, int]]:
    """Tag counts per group; every tag is present, zero when unseen."""
    hist: dict[str, dict[ErrorTag, int]] = {}
    for a in annotations:
        row = hist.setdefault(a.group, {t: 0 for t in ErrorTag})
        row[a.tag] += 1
    return hist


def skill_distribution(traces: Iterable[ChainTrace]) -> Counter:
    """How often each atomic skill was invoked across all steps."""
    counts: Counter = Counter({s: 0 for s in SkillTag})
    for t in traces:
        for step in t.steps:
            counts.update(step.invoked_skills)
    return counts
