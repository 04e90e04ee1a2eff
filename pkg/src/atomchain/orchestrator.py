"""Drive the skill chain over a model client, plus multipath and batch runs."""

from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .chain import (
    DEFAULT_MAX_PLANS,
    SCHEMA_VERSION,
    CallUsage,
    ChainTrace,
    Claim,
    Stage,
    StageRequest,
    StepFlag,
    StepRecord,
    Termination,
    Verdict,
    next_stage,
)
from .dataset import DatasetEntry, JsonlStore, dumps, iter_jsonl
from .evaluation import DomainAccuracy, label_accuracy
from .llm import GenerationRequest, LLMClient, LLMError
from .parsing import (
    OutputFormatError,
    extract_cell_facts,
    parse_flag,
    parse_plans,
    parse_tagged,
    render_plans,
    tag_skills,
)
from .prompts import TemplateSet
from .tables import RowConvention, Table, render_table

log = logging.getLogger(__name__)

PATH_STYLES = ("long", "short")

_FLAG_TO_LABEL = {
    StepFlag.TRUE: Verdict.SUPPORT,
    StepFlag.FALSE: Verdict.REFUTE,
    StepFlag.NOT_ENOUGH_INFO: Verdict.NOT_ENOUGH_INFO,
}


class ConfigError(ValueError):
    pass


class StageParseError(OutputFormatError):
    kind = "EmptyOutput"


class PlanTooLong(Exception):
    def __init__(self, n: int, limit: int):
        super().__init__(f"plan has {n} subplans, limit is {limit}")
        self.n = n
        self.limit = limit


@dataclass(frozen=True)
class ChainConfig:
    model_id: str = "default"
    temperature: float = 0.8
    top_p: float = 0.9
    top_k: int | None = None
    max_tokens: int = 1024
    seed: int | None = None
    max_plans: int = DEFAULT_MAX_PLANS
    retries: int = 3
    recap_includes_history: bool = False
    row_convention: RowConvention = RowConvention.ABSOLUTE

    def __post_init__(self) -> None:
        if self.max_plans < 1:
            raise ConfigError("max_plans must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")

    def request(self, system: str, user: str, seed: int | None = None) -> GenerationRequest:
        return GenerationRequest.chat(
            self.model_id,
            system,
            user,
            temperature=self.temperature,
            top_p=self.top_p,
            top_k=self.top_k,
            max_tokens=self.max_tokens,
            seed=self.seed if seed is None else seed,
        )


@dataclass
class VerificationRecord:
    claim_id: str
    label: Verdict
    trace: ChainTrace | None
    attempts: dict[str, int] = field(default_factory=dict)
    wall_time: float = 0.0
    path_style: str = "long"
    domain: str = "other"
    gold: Verdict | None = None

    def __post_init__(self) -> None:
        if self.trace is not None and self.trace.label is not self.label:
            raise ValueError("record label must equal trace label")

    def to_json(self, include_time: bool = True) -> dict[str, Any]:
        obj = {
            "schema_version": SCHEMA_VERSION,
            "claim_id": self.claim_id,
            "label": self.label.value,
            "domain": self.domain,
            "gold": self.gold.value if self.gold else None,
            "path_style": self.path_style,
            "attempts": dict(sorted(self.attempts.items())),
            "trace": self.trace.to_json() if self.trace is not None else None,
        }
        if include_time:
            obj["wall_time"] = self.wall_time
        return obj

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "VerificationRecord":
        trace = obj.get("trace")
        return cls(
            claim_id=obj["claim_id"],
            label=Verdict(obj["label"]),
            trace=ChainTrace.from_json(trace) if trace is not None else None,
            attempts=dict(obj.get("attempts", {})),
            wall_time=obj.get("wall_time", 0.0),
            path_style=obj.get("path_style", "long"),
            domain=obj.get("domain", "other"),
            gold=Verdict(obj["gold"]) if obj.get("gold") else None,
        )


# -- stage contexts ---------------------------------------------------------------

def _base_context(table: Table, claim: Claim) -> dict[str, str]:
    return {"caption": table.caption, "table": render_table(table), "claim": claim.text}


def grounding_block(step: StepRecord) -> str:
    return (
        f"<grounding>\n{step.grounding or ''}\n</grounding>\n\n"
        f"<extraction>\n{step.extraction_text or ''}\n</extraction>"
    )


def reason_transitions(steps: Sequence[StepRecord]) -> str:
    parts = []
    for s in steps:
        i = s.subplan.index
        parts.append(f"[Plan {i} Reasoning]\n{s.reasoning or ''}\n[Plan {i} Transition]\n{s.recap or ''}")
    return "\n\n".join(parts)


def stage_context(
    req: StageRequest, trace: ChainTrace, table: Table, claim: Claim, config: ChainConfig
) -> dict[str, str]:
    """Placeholder values for one stage.

    The reasoning stage sees only its own subplan and grounding, never earlier
    recaps; the recap stage sees the whole plan.
    """
    ctx = _base_context(table, claim)
    stage = req.stage
    if stage is Stage.INTERPRETATION:
        return ctx
    if stage is Stage.PLANNING:
        ctx["interpretation"] = trace.interpretation or ""
        return ctx
    if stage is Stage.CONCLUSION:
        ctx["plan"] = render_plans(trace.plan or [])
        ctx["allReasonTransition"] = reason_transitions(trace.steps)
        return ctx
    step = trace.steps[req.index - 1] if req.index <= len(trace.steps) else None
    subplan = trace.plan[req.index - 1]
    ctx["subplan"] = subplan.text
    ctx["plan_idx"] = str(subplan.index)
    if stage is Stage.REASONING:
        ctx["grounding&extraction"] = grounding_block(step)
    elif stage is Stage.RECAP:
        ctx["plan"] = render_plans(trace.plan)
        if config.recap_includes_history:
            ctx["reasoning"] = "\n\n".join(s.reasoning or "" for s in trace.steps)
        else:
            ctx["reasoning"] = step.reasoning or ""
    return ctx


# -- stage output application --------------------------------------------------------

def _nonempty(text: str) -> str:
    out = text.strip()
    if not out:
        raise StageParseError("empty model output")
    return out


def apply_output(
    req: StageRequest, text: str, trace: ChainTrace, table: Table, config: ChainConfig
) -> None:
    """Parse ``text`` for ``req`` and write it into ``trace``.

    Raises an OutputFormatError (the trace is untouched) when the output does
    not follow the stage's format, or PlanTooLong.
    """
    stage = req.stage
    if stage is Stage.INTERPRETATION:
        trace.interpretation = _nonempty(text)
    elif stage is Stage.PLANNING:
        plans = parse_plans(text)
        if len(plans) > config.max_plans:
            raise PlanTooLong(len(plans), config.max_plans)
        trace.plan = plans
    elif stage is Stage.GROUNDING:
        grounding = parse_tagged(text, "grounding")
        extraction = parse_tagged(text, "extraction")
        trace.steps.append(
            StepRecord(
                subplan=trace.plan[req.index - 1],
                grounding=grounding,
                extraction_text=extraction,
                extraction=extract_cell_facts(extraction, table),
            )
        )
    elif stage is Stage.REASONING:
        step = trace.steps[req.index - 1]
        step.reasoning = _nonempty(text)
        step.invoked_skills = tag_skills(step.reasoning)
    elif stage is Stage.RECAP:
        step = trace.steps[req.index - 1]
        recap = _nonempty(text)
        flag = parse_flag(recap)
        for note in flag.warnings if flag else ():
            log.warning("recap %d: %s", req.index, note)
        step.recap = recap
        step.flag = flag.value if flag else None
    elif stage is Stage.CONCLUSION:
        body = _nonempty(text)
        try:
            conclusion = parse_tagged(body, "conclusion")
        except OutputFormatError:
            conclusion = body
        if req.forced_refute:
            label, term = Verdict.REFUTE, Termination.EARLY_REFUTE
        else:
            flag = parse_flag(body)
            if flag is None:
                raise StageParseError("conclusion carries no <flag>")
            label, term = _FLAG_TO_LABEL[flag.value], Termination.COMPLETED
        trace.conclusion = conclusion or body
        trace.label = label
        trace.termination = term
    else:  # pragma: no cover - next_stage never yields other stages here
        raise ValueError(f"cannot apply output for {stage}")


def _abort(trace: ChainTrace, reason: str) -> None:
    trace.label = Verdict.NOT_ENOUGH_INFO
    trace.termination = Termination.ABORTED
    trace.abort_reason = reason


def run_chain(
    table: Table,
    claim: Claim,
    client: LLMClient,
    templates: TemplateSet,
    config: ChainConfig,
    table_ref: str = "",
    seed: int | None = None,
) -> tuple[ChainTrace, dict[str, int]]:
    """Execute stages in ``next_stage`` order until the trace terminates."""
    trace = ChainTrace(
        table_ref=table_ref,
        claim_ref=claim.id,
        row_convention=config.row_convention,
        model_id=config.model_id,
    )
    attempts: dict[str, int] = {}
    while True:
        req = next_stage(trace)
        if req.stage is Stage.DONE:
            return trace, attempts
        system, user = templates.render(req.stage.value, stage_context(req, trace, table, claim, config))
        gen = config.request(system, user, seed)
        for attempt in range(config.retries + 1):
            resp = client.generate(gen)
            trace.usage.append(
                CallUsage(req.stage, req.index, attempt, resp.prompt_tokens,
                          resp.completion_tokens, resp.latency, resp.cache_key)
            )
            attempts[req.stage.value] = attempts.get(req.stage.value, 0) + 1
            try:
                apply_output(req, resp.text, trace, table, config)
                break
            except PlanTooLong as err:
                log.info("claim %s: %s", claim.id, err)
                _abort(trace, "PlanTooLong")
                return trace, attempts
            except OutputFormatError as err:
                log.info("claim %s: %s output rejected (%s)", claim.id, req.stage.value, err)
        else:
            _abort(trace, f"ParseFailure:{req.stage.value}")
            return trace, attempts


def verify(
    table: Table,
    claim: Claim,
    client: LLMClient,
    templates: TemplateSet,
    config: ChainConfig | None = None,
    table_ref: str = "",
    seed: int | None = None,
) -> VerificationRecord:
    """Run one skill chain and wrap its trace in a record.

    Backend errors propagate once the client's own retries are spent.
    """
    config = config or ChainConfig()
    missing = [s.value for s in (Stage.INTERPRETATION, Stage.PLANNING, Stage.GROUNDING,
                                 Stage.REASONING, Stage.RECAP, Stage.CONCLUSION)
               if s.value not in templates]
    if missing:
        raise ConfigError(f"templates missing for stages {missing}")
    start = time.perf_counter()
    trace, attempts = run_chain(table, claim, client, templates, config, table_ref, seed)
    return VerificationRecord(
        claim_id=claim.id,
        label=trace.label,
        trace=trace,
        attempts=attempts,
        wall_time=time.perf_counter() - start,
        domain=claim.domain_tag,
        gold=claim.gold_label,
    )


SHORT_SYSTEM = (
    "You are a helpful assistant to verify whether a claim is supported or refuted by a table, "
    "or whether the table does not give enough information. Answer intuitively in at most two "
    "sentences, then give an ending flag formatted as <flag>True</flag>, <flag>False</flag> or "
    "<flag>Not enough information</flag>."
)


def verify_short(
    table: Table,
    claim: Claim,
    client: LLMClient,
    config: ChainConfig | None = None,
    seed: int | None = None,
) -> VerificationRecord:
    """Single-call intuitive verdict (the short-thought path); no trace."""
    config = config or ChainConfig()
    user = f"### Table Content\n{table.caption}\n\n{render_table(table)}\n\n### Claim\n{claim.text}"
    start = time.perf_counter()
    label = Verdict.NOT_ENOUGH_INFO
    n = 0
    for n in range(1, config.retries + 2):
        flag = parse_flag(client.generate(config.request(SHORT_SYSTEM, user, seed)).text)
        if flag is not None:
            label = _FLAG_TO_LABEL[flag.value]
            break
    return VerificationRecord(
        claim.id, label, None, {"short": n}, time.perf_counter() - start,
        path_style="short", domain=claim.domain_tag, gold=claim.gold_label,
    )


# -- multipath ----------------------------------------------------------------------

def majority_label(labels: Sequence[Verdict]) -> Verdict | None:
    """The label held by more than half of ``labels``, if any."""
    if not labels:
        return None
    label, n = Counter(labels).most_common(1)[0]
    return label if 2 * n > len(labels) else None


@dataclass
class MultipathResult:
    claim_id: str
    records: list[VerificationRecord]
    agreed_label: Verdict | None
    needs_adjudication: bool

    @property
    def labels(self) -> list[Verdict]:
        return [r.label for r in self.records]


class AdjudicationQueue:
    """JSON-lines queue of cases that need a human decision."""

    def __init__(self, path: str | Path):
        self.store = JsonlStore(path)

    def put(self, claim_id: str, labels: Sequence[Verdict], traces: Sequence[Any] = (), reason: str = "") -> None:
        self.store.append({
            "schema_version": SCHEMA_VERSION,
            "claim_id": claim_id,
            "labels": [l.value for l in labels],
            "traces": list(traces),
            "reason": reason,
        })

    def __iter__(self):
        return iter(self.store)


def multipath_verify(
    table: Table,
    claim: Claim,
    client: LLMClient,
    templates: TemplateSet,
    k: int = 3,
    config: ChainConfig | None = None,
    styles: Sequence[str] | None = None,
    queue: AdjudicationQueue | None = None,
    table_ref: str = "",
) -> MultipathResult:
    """Run ``k`` independent paths (seeds base..base+k-1) and take a strict majority.

    ``styles`` assigns "long" (full chain) or "short" (one call) per path;
    the default is all long paths resampled by seed.
    """
    if k < 1 or k % 2 == 0:
        raise ConfigError("k must be a positive odd integer")
    config = config or ChainConfig()
    styles = list(styles) if styles is not None else ["long"] * k
    if len(styles) != k or any(s not in PATH_STYLES for s in styles):
        raise ConfigError(f"need {k} path styles from {PATH_STYLES}")
    base = config.seed or 0
    records = []
    for j, style in enumerate(styles):
        if style == "short":
            records.append(verify_short(table, claim, client, config, seed=base + j))
        else:
            records.append(verify(table, claim, client, templates, config, table_ref, seed=base + j))
    labels = [r.label for r in records]
    agreed = majority_label(labels)
    if agreed is None and queue is not None:
        queue.put(
            claim.id,
            labels,
            [r.trace.to_json() if r.trace else None for r in records],
            reason="no majority",
        )
    return MultipathResult(claim.id, records, agreed, agreed is None)


# -- batch --------------------------------------------------------------------------

@dataclass
class RunSummary:
    total: int
    computed: int
    skipped: int
    failed: list[str]
    labels: dict[str, int]
    accuracy: dict[str, DomainAccuracy]

    def to_json(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "computed": self.computed,
            "skipped": self.skipped,
            "failed": sorted(self.failed),
            "labels": dict(sorted(self.labels.items())),
            "accuracy": {
                d: {"n": a.n, "correct": a.correct,
                    "accuracy": None if a.accuracy is None else float(a.accuracy)}
                for d, a in sorted(self.accuracy.items())
            },
        }


RECORDS_FILE = "records.jsonl"


def load_records(out_dir: str | Path) -> list[VerificationRecord]:
    return [VerificationRecord.from_json(o) for o in iter_jsonl(Path(out_dir) / RECORDS_FILE)]


def summarize(records: Iterable[VerificationRecord], gold: dict[str, Verdict] | None = None,
              nei_policy: str = "wrong") -> tuple[dict[str, int], dict[str, DomainAccuracy]]:
    records = list(records)
    labels = Counter(r.label.value for r in records)
    gold = dict(gold or {})
    for r in records:
        if r.gold is not None:
            gold.setdefault(r.claim_id, r.gold)
    scored = [(r.claim_id, r.domain, r.label) for r in records if r.claim_id in gold]
    return dict(labels), label_accuracy(scored, gold, nei_policy)


def batch_verify(
    entries: Sequence[DatasetEntry],
    client: LLMClient,
    templates: TemplateSet,
    config: ChainConfig | None = None,
    out_dir: str | Path = "run",
    concurrency: int = 4,
    nei_policy: str = "wrong",
    limit: int | None = None,
) -> RunSummary:
    """Verify every entry not yet in ``out_dir/records.jsonl``.

    Each record is appended (with fsync) once it and every claim queued before
    it have finished, so an interrupted run resumes where it stopped and the
    file order does not depend on thread timing. ``limit`` caps how many new
    claims this call computes. A claim whose backend fails is logged and left
    unpersisted so a later run retries it.
    """
    if concurrency < 1:
        raise ConfigError("concurrency must be >= 1")
    config = config or ChainConfig()
    out = Path(out_dir)
    store = JsonlStore(out / RECORDS_FILE)
    done = {o["claim_id"] for o in store}
    todo = [e for e in entries if e.id not in done]
    if limit is not None:
        todo = todo[:limit]
    failed: list[str] = []

    def work(entry: DatasetEntry) -> VerificationRecord:
        return verify(entry.table, entry.to_claim(), client, templates, config, table_ref=entry.id)

    # Records are flushed in input order: a finished claim waits only for the
    # claims queued before it, so the file is identical across runs.
    finished: dict[int, VerificationRecord | None] = {}
    next_out = 0
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = {pool.submit(work, e): i for i, e in enumerate(todo)}
        for fut in as_completed(futures):
            i = futures[fut]
            try:
                finished[i] = fut.result()
            except LLMError as err:
                log.error("claim %s failed: %s", todo[i].id, err)
                failed.append(todo[i].id)
                finished[i] = None
            while next_out in finished:
                rec = finished.pop(next_out)
                if rec is not None:
                    store.append(rec.to_json())
                next_out += 1
    ids = {e.id for e in entries}
    records = [r for r in load_records(out) if r.claim_id in ids]
    labels, accuracy = summarize(records, {e.id: e.label for e in entries}, nei_policy)
    summary = RunSummary(
        total=len(records),
        computed=len(todo) - len(failed),
        skipped=len(entries) - len(todo) if limit is None else len(done & ids),
        failed=failed,
        labels=labels,
        accuracy=accuracy,
    )
    (out / "summary.json").write_text(dumps(summary.to_json()) + "\n", encoding="utf-8")
    return summary
