"""Skill-chain trace types and the stage state machine.

A chain runs interpretation -> planning -> [grounding -> reasoning ->
recap] per subplan -> conclusion. A recap flag of FALSE skips the remaining
subplans and forces a REFUTE label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Any

from .tables import CellAddress, Number, RowConvention

SCHEMA_VERSION = 1
DEFAULT_MAX_PLANS = 8


class Verdict(str, Enum):
    SUPPORT = "SUPPORT"
    REFUTE = "REFUTE"
    NOT_ENOUGH_INFO = "NOT_ENOUGH_INFO"


class StepFlag(str, Enum):
    TRUE = "TRUE"
    FALSE = "FALSE"
    NOT_ENOUGH_INFO = "NOT_ENOUGH_INFO"


class SkillTag(str, Enum):
    CONCEPTUAL_UNDERSTANDING = "CONCEPTUAL_UNDERSTANDING"
    STRUCTURE_ANALYSIS = "STRUCTURE_ANALYSIS"
    NUMERICAL_ANALYSIS = "NUMERICAL_ANALYSIS"
    CAUSAL_ANALYSIS = "CAUSAL_ANALYSIS"


class Termination(str, Enum):
    COMPLETED = "COMPLETED"
    EARLY_REFUTE = "EARLY_REFUTE"
    ABORTED = "ABORTED"


class Stage(str, Enum):
    INTERPRETATION = "interpret"
    PLANNING = "plan"
    GROUNDING = "cell"
    REASONING = "reason"
    RECAP = "recap"
    CONCLUSION = "conclusion"
    DONE = "done"


CHAIN_STAGES = (
    Stage.INTERPRETATION,
    Stage.PLANNING,
    Stage.GROUNDING,
    Stage.REASONING,
    Stage.RECAP,
    Stage.CONCLUSION,
)


@dataclass(frozen=True)
class StageRequest:
    stage: Stage
    index: int | None = None
    forced_refute: bool = False


@dataclass
class Claim:
    text: str
    id: str = ""
    gold_label: Verdict | None = None
    domain_tag: str = "other"
    check: str | None = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("claim text must be non-empty")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "gold_label": self.gold_label.value if self.gold_label else None,
            "domain_tag": self.domain_tag,
            "check": self.check,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Claim":
        gold = obj.get("gold_label")
        return cls(
            text=obj["text"],
            id=obj.get("id", ""),
            gold_label=Verdict(gold) if gold else None,
            domain_tag=obj.get("domain_tag", "other"),
            check=obj.get("check"),
        )


@dataclass(frozen=True)
class Subplan:
    index: int
    text: str


@dataclass(frozen=True)
class ExtractedFact:
    description: str
    address: CellAddress | None = None
    value: Number | None = None

    def to_json(self) -> dict:
        return {
            "description": self.description,
            "address": [self.address.row, self.address.col] if self.address else None,
            "value": str(self.value.value) if self.value else None,
            "unit": self.value.unit if self.value else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExtractedFact":
        addr = obj.get("address")
        value = obj.get("value")
        return cls(
            description=obj.get("description", ""),
            address=CellAddress(*addr) if addr else None,
            value=Number(Decimal(value), obj.get("unit")) if value is not None else None,
        )


@dataclass
class StepRecord:
    subplan: Subplan
    grounding: str | None = None
    extraction_text: str | None = None
    extraction: list[ExtractedFact] = field(default_factory=list)
    reasoning: str | None = None
    invoked_skills: set[SkillTag] = field(default_factory=set)
    recap: str | None = None
    flag: StepFlag | None = None

    @property
    def complete(self) -> bool:
        return self.recap is not None

    @property
    def effective_flag(self) -> StepFlag | None:
        """Flag driving the transition; a recap without a flag counts as NEI."""
        if self.recap is None:
            return None
        return self.flag or StepFlag.NOT_ENOUGH_INFO

    def to_json(self) -> dict:
        return {
            "subplan": {"index": self.subplan.index, "text": self.subplan.text},
            "grounding": self.grounding,
            "extraction_text": self.extraction_text,
            "extraction": [f.to_json() for f in self.extraction],
            "reasoning": self.reasoning,
            "invoked_skills": sorted(s.value for s in self.invoked_skills),
            "recap": self.recap,
            "flag": self.flag.value if self.flag else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StepRecord":
        sp = obj["subplan"]
        return cls(
            subplan=Subplan(sp["index"], sp["text"]),
            grounding=obj.get("grounding"),
            extraction_text=obj.get("extraction_text"),
            extraction=[ExtractedFact.from_json(f) for f in obj.get("extraction", [])],
            reasoning=obj.get("reasoning"),
            invoked_skills={SkillTag(s) for s in obj.get("invoked_skills", [])},
            recap=obj.get("recap"),
            flag=StepFlag(obj["flag"]) if obj.get("flag") else None,
        )


@dataclass(frozen=True)
class CallUsage:
    stage: Stage
    index: int | None
    attempt: int
    prompt_tokens: int
    completion_tokens: int
    latency: float
    cache_key: str

    def to_json(self) -> dict:
        return {
            "stage": self.stage.value,
            "index": self.index,
            "attempt": self.attempt,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency": self.latency,
            "cache_key": self.cache_key,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CallUsage":
        return cls(
            Stage(obj["stage"]),
            obj.get("index"),
            obj.get("attempt", 0),
            obj["prompt_tokens"],
            obj["completion_tokens"],
            obj["latency"],
            obj.get("cache_key", ""),
        )


@dataclass
class ChainTrace:
    table_ref: str
    claim_ref: str
    interpretation: str | None = None
    plan: list[Subplan] | None = None
    steps: list[StepRecord] = field(default_factory=list)
    conclusion: str | None = None
    label: Verdict | None = None
    termination: Termination | None = None
    abort_reason: str | None = None
    usage: list[CallUsage] = field(default_factory=list)
    row_convention: RowConvention = RowConvention.ABSOLUTE
    model_id: str = ""

    @property
    def n_calls(self) -> int:
        return len(self.usage)

    def usage_by_stage(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for u in self.usage:
            s = out.setdefault(
                u.stage.value,
                {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0, "latency": 0.0},
            )
            s["calls"] += 1
            s["prompt_tokens"] += u.prompt_tokens
            s["completion_tokens"] += u.completion_tokens
            s["latency"] += u.latency
        return out

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "table_ref": self.table_ref,
            "claim_ref": self.claim_ref,
            "model_id": self.model_id,
            "row_convention": self.row_convention.value,
            "interpretation": self.interpretation,
            "plan": None
            if self.plan is None
            else [{"index": p.index, "text": p.text} for p in self.plan],
            "steps": [s.to_json() for s in self.steps],
            "conclusion": self.conclusion,
            "label": self.label.value if self.label else None,
            "termination": self.termination.value if self.termination else None,
            "abort_reason": self.abort_reason,
            "usage": [u.to_json() for u in self.usage],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ChainTrace":
        plan = obj.get("plan")
        return cls(
            table_ref=obj.get("table_ref", ""),
            claim_ref=obj.get("claim_ref", ""),
            interpretation=obj.get("interpretation"),
            plan=None if plan is None else [Subplan(p["index"], p["text"]) for p in plan],
            steps=[StepRecord.from_json(s) for s in obj.get("steps", [])],
            conclusion=obj.get("conclusion"),
            label=Verdict(obj["label"]) if obj.get("label") else None,
            termination=Termination(obj["termination"]) if obj.get("termination") else None,
            abort_reason=obj.get("abort_reason"),
            usage=[CallUsage.from_json(u) for u in obj.get("usage", [])],
            row_convention=RowConvention(obj.get("row_convention", "absolute")),
            model_id=obj.get("model_id", ""),
        )


class InvalidTrace(ValueError):
    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate_trace(trace: ChainTrace) -> list[Violation]:
    """Every violated ordering invariant of ``trace`` (empty list when valid)."""
    out: list[Violation] = []

    def bad(code: str, msg: str) -> None:
        out.append(Violation(code, msg))

    if trace.interpretation is not None and not trace.interpretation.strip():
        bad("empty interpretation", "interpretation is present but blank")
    if trace.plan is not None:
        if trace.interpretation is None:
            bad("stage order", "plan present without interpretation")
        if not trace.plan:
            bad("plan", "plan is empty")
        idx = [p.index for p in trace.plan]
        if idx != list(range(1, len(idx) + 1)):
            bad("plan indices", f"subplan indices {idx} are not contiguous from 1")
    if trace.steps and trace.plan is None:
        bad("stage order", "steps present without a plan")

    n_plan = len(trace.plan) if trace.plan is not None else 0
    if trace.plan is not None and len(trace.steps) > n_plan:
        bad("step count", f"{len(trace.steps)} steps for a plan of {n_plan}")

    for i, step in enumerate(trace.steps, start=1):
        if trace.plan is not None and i <= n_plan and step.subplan != trace.plan[i - 1]:
            bad("step correspondence", f"step {i} does not carry subplan {i}")
        filled = [
            step.grounding is not None,
            step.reasoning is not None,
            step.recap is not None,
            step.flag is not None,
        ]
        if any(later and not earlier for earlier, later in zip(filled, filled[1:])):
            bad("fill order", f"step {i} has a later field without an earlier one")
        if i < len(trace.steps):
            if not step.complete:
                bad("fill order", f"step {i + 1} started before step {i} finished its recap")
            if step.flag is StepFlag.FALSE:
                bad("early stop", f"step {i} flagged FALSE but the chain continued")

    last = trace.steps[-1] if trace.steps else None
    early_false = last is not None and last.flag is StepFlag.FALSE
    all_done = trace.plan is not None and len(trace.steps) == n_plan and (
        last is None or last.complete
    )

    if trace.conclusion is not None:
        if not (early_false or (all_done and n_plan > 0)):
            bad("stage order", "conclusion present before all subplans were processed")

    if (trace.label is None) != (trace.termination is None):
        bad("termination", "label and termination must be set together")

    term = trace.termination
    if term is Termination.EARLY_REFUTE:
        if not early_false:
            bad("early refute", "EARLY_REFUTE requires the last step flag to be FALSE")
        if trace.label is not Verdict.REFUTE:
            bad("early refute", "EARLY_REFUTE requires label REFUTE")
    elif term is Termination.COMPLETED:
        if not all_done or n_plan == 0:
            bad("completed", "COMPLETED requires one finished step per subplan")
        if not (trace.conclusion and trace.conclusion.strip()):
            bad("completed", "COMPLETED requires a non-empty conclusion")
        if early_false:
            bad("completed", "a FALSE step flag must terminate as EARLY_REFUTE")
    elif term is Termination.ABORTED:
        if not trace.abort_reason:
            bad("aborted", "ABORTED requires a reason")
    return out


def next_stage(trace: ChainTrace) -> StageRequest:
    """Deterministic next stage for ``trace``."""
    violations = validate_trace(trace)
    if violations:
        raise InvalidTrace(violations)
    if trace.termination is not None:
        return StageRequest(Stage.DONE)
    if trace.interpretation is None:
        return StageRequest(Stage.INTERPRETATION)
    if trace.plan is None:
        return StageRequest(Stage.PLANNING)
    if trace.conclusion is not None:
        return StageRequest(Stage.DONE)

    n = len(trace.plan)
    if not trace.steps:
        return StageRequest(Stage.GROUNDING, 1)
    k = len(trace.steps)
    step = trace.steps[-1]
    if step.grounding is None:
        return StageRequest(Stage.GROUNDING, k)
    if step.reasoning is None:
        return StageRequest(Stage.REASONING, k)
    if step.recap is None:
        return StageRequest(Stage.RECAP, k)
    if step.effective_flag is StepFlag.FALSE:
        return StageRequest(Stage.CONCLUSION, forced_refute=True)
    if k < n:
        return StageRequest(Stage.GROUNDING, k + 1)
    return StageRequest(Stage.CONCLUSION)


def expected_calls(steps_executed: int) -> int:
    """Model calls for a retry-free chain that ran ``steps_executed`` subplans."""
    return 2 + 3 * steps_executed + 1
