"""Command line entry point.

Exit codes: 0 on success (verify: SUPPORT or REFUTE), 2 when verify returns
NOT_ENOUGH_INFO, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .chain import Claim, ChainTrace, Verdict
from .claims import FactoryConfig, FactoryError, dump_pairs, generate_pairs, validate_pair
from .config import RunConfig, load_config
from .dataset import dumps, dataset_statistics, iter_jsonl, load_dataset
from .evaluation import (
    EvaluationError,
    LLMJudge,
    StepJudgment,
    StepVerdict,
    format_accuracy_table,
    ingest_human_scores,
    skill_distribution,
    trace_metrics,
)
from .llm import LiveBackend, LLMClient, LLMError, load_session, record_session
from .oracle import OracleError, Quantity, check, parse_check, typecheck
from .orchestrator import (
    AdjudicationQueue,
    ConfigError,
    batch_verify,
    load_records,
    multipath_verify,
    summarize,
    verify,
)
from .prompts import PromptError, load_templates
from .scripted import load_script, stage_backend
from .tables import TableError, parse_table, split_caption

log = logging.getLogger("atomchain")

EXIT_OK, EXIT_ERROR, EXIT_NEI = 0, 1, 2


class UsageError(Exception):
    pass


def read_table(path: str | Path):
    """A table file: optional caption lines followed by a pipe table."""
    caption, grid = split_caption(Path(path).read_text(encoding="utf-8"))
    return parse_table(grid, caption=caption)


def build_client(cfg: RunConfig) -> LLMClient:
    if cfg.backend == "live":
        backend = LiveBackend(cfg.base_url, timeout=cfg.timeout)
    elif cfg.backend == "replay":
        if not cfg.session:
            raise UsageError("--backend replay needs --session")
        if not Path(cfg.session).exists():
            raise UsageError(f"session file {cfg.session} not found")
        backend = load_session(cfg.session)
    else:
        if not cfg.script:
            raise UsageError("--backend mock needs --script")
        backend = stage_backend(load_script(cfg.script))
    recorder = record_session(cfg.record) if cfg.record else None
    return LLMClient(backend, retries=cfg.retries, max_in_flight=cfg.concurrency,
                     recorder=recorder, record_all=recorder is not None)


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n")


# -- commands ---------------------------------------------------------------------------

def cmd_verify(args, cfg: RunConfig) -> int:
    table = read_table(args.table)
    claim = Claim(args.claim, args.claim_id, domain_tag=args.domain)
    client = build_client(cfg)
    templates = load_templates(cfg.templates)
    rec = verify(table, claim, client, templates, cfg.chain_config(), table_ref=str(args.table))
    doc = rec.to_json(include_time=False)
    if args.trace_out:
        Path(args.trace_out).write_text(dumps(doc) + "\n", encoding="utf-8")
    if args.json:
        _emit(doc)
    else:
        print(f"{rec.label.value}\t{args.trace_out or '-'}")
    return EXIT_NEI if rec.label is Verdict.NOT_ENOUGH_INFO else EXIT_OK


def cmd_batch(args, cfg: RunConfig) -> int:
    entries = load_dataset(args.dataset)
    client = build_client(cfg)
    templates = load_templates(cfg.templates)
    summary = batch_verify(entries, client, templates, cfg.chain_config(), args.out,
                           cfg.concurrency, cfg.nei_policy, args.limit)
    if args.json:
        _emit(summary.to_json())
    else:
        print(f"records: {summary.total} (new {summary.computed}, skipped {summary.skipped}, "
              f"failed {len(summary.failed)})")
        print(format_accuracy_table(summary.accuracy, cfg.model_id))
    return EXIT_ERROR if summary.failed else EXIT_OK


def cmd_claimgen(args, cfg: RunConfig) -> int:
    table = read_table(args.table)
    client = build_client(cfg)
    templates = load_templates(cfg.templates)
    fcfg = FactoryConfig(cfg.model_id, cfg.temperature, cfg.top_p, cfg.seed, cfg.retries)
    table_ref = args.table_id or Path(args.table).stem
    pairs = generate_pairs(table, table_ref, client, templates, fcfg, args.negatives, args.domain)
    queue = AdjudicationQueue(args.queue) if args.queue else None
    if args.validate == "multipath":
        chain = cfg.chain_config()

        def label_of(c: Claim):
            return multipath_verify(table, c, client, templates, args.paths, chain).agreed_label

        pairs = [validate_pair(p, table, label_of, queue) for p in pairs]
    elif args.validate == "oracle":
        pairs = [validate_pair(p, table, None, queue) for p in pairs]
    lines = dump_pairs(pairs, table, args.domain)
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    log.info("%d pairs from %s", len(pairs), args.table)
    return EXIT_OK


def _load_traces(path: str) -> dict[str, ChainTrace]:
    out = {}
    for obj in iter_jsonl(path):
        if "trace" in obj:
            if obj["trace"] is None:
                continue
            out[obj["claim_id"]] = ChainTrace.from_json(obj["trace"])
        else:
            t = ChainTrace.from_json(obj)
            out[t.claim_ref] = t
    return out


def cmd_evaluate(args, cfg: RunConfig) -> int:
    traces = _load_traces(args.traces)
    judgments: dict[str, list[StepJudgment]] = {}
    if args.judgments:
        for obj in iter_jsonl(args.judgments):
            judgments.setdefault(obj["trace_id"], []).append(
                StepJudgment(int(obj["step"]), StepVerdict(obj["verdict"]), obj.get("judge", "ORACLE"))
            )
    human = ingest_human_scores(args.human_scores) if args.human_scores else {}
    judge = LLMJudge(build_client(cfg), args.judge_model) if args.judge_model else None
    out = {}
    for tid in sorted(traces):
        if tid not in judgments:
            continue
        m = trace_metrics(traces[tid], judgments[tid], judge, human.get(tid))
        out[tid] = m.to_json()
    if args.json:
        _emit(out)
    else:
        for tid, m in out.items():
            print(tid + "\t" + "\t".join(
                f"{k}={'n/a' if v is None else format(v, '.4f')}" for k, v in m.items()))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    report: dict[str, Any] = {}
    if args.run:
        records = load_records(args.run)
        gold = {e.id: e.label for e in load_dataset(args.dataset)} if args.dataset else None
        labels, acc = summarize(records, gold, cfg.nei_policy)
        skills = skill_distribution(r.trace for r in records if r.trace is not None)
        report["labels"] = dict(sorted(labels.items()))
        report["accuracy"] = {
            d: {"n": a.n, "correct": a.correct, "accuracy": None if a.accuracy is None else float(a.accuracy)}
            for d, a in sorted(acc.items())
        }
        report["skills"] = {s.value: n for s, n in sorted(skills.items(), key=lambda kv: kv[0].value)}
        table_text = format_accuracy_table(acc, cfg.model_id)
    else:
        table_text = ""
    if args.dataset:
        report["dataset"] = dict(sorted(dataset_statistics(load_dataset(args.dataset)).items()))
    if not report:
        raise UsageError("report needs a run directory or --dataset")
    if args.json:
        _emit(report)
    else:
        if table_text:
            print(table_text)
        if "dataset" in report:
            print("domain\tneg\tpos\tsum")
            for d, s in report["dataset"].items():
                print(f"{d}\t{s['neg']}\t{s['pos']}\t{s['sum']}")
    return EXIT_OK


def _verdict_json(src: str, table) -> dict[str, Any]:
    v = check(src, table)
    value = v.value
    if isinstance(value, Quantity):
        shown: Any = {"value": str(value.value), "unit": value.unit}
    else:
        shown = "TRUE" if value else "FALSE"
    return {
        "check": src,
        "value": shown,
        "evidence": [{"row": a.row, "col": a.col, "value": str(d)} for a, d in v.evidence],
        "note": v.precision_note,
    }


def cmd_oracle_check(args, cfg: RunConfig) -> int:
    table = read_table(args.table)
    if args.batch:
        status = EXIT_OK
        for line in Path(args.batch).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                obj = _verdict_json(line.strip(), table)
            except OracleError as err:
                obj = {"check": line.strip(), "error": type(err).__name__, "message": str(err)}
                status = EXIT_ERROR
            print(dumps(obj))
        return status
    if args.check is None:
        raise UsageError("oracle-check needs a check expression or --batch")
    typecheck(parse_check(args.check))
    obj = _verdict_json(args.check, table)
    if args.json:
        _emit(obj)
    else:
        shown = obj["value"] if isinstance(obj["value"], str) else obj["value"]["value"]
        print(shown)
        for e in obj["evidence"]:
            print(f"  ({e['row']}, {e['col']}) = {e['value']}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

_CONFIG_FLAGS = {
    "backend": dict(choices=("live", "replay", "mock")),
    "session": dict(help="JSON-lines replay store"),
    "script": dict(help="JSON stage script for the mock backend"),
    "record": dict(help="append every response to this session file"),
    "base_url": dict(help="live endpoint base URL"),
    "model_id": dict(help="model identifier sent to the backend"),
    "seed": dict(type=int),
    "temperature": dict(type=float),
    "top_p": dict(type=float),
    "retries": dict(type=int),
    "concurrency": dict(type=int),
    "max_plans": dict(type=int),
    "templates": dict(help="template directory or file"),
    "nei_policy": dict(choices=("wrong", "exclude")),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    for name, kw in _CONFIG_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **kw)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atomchain", description="Table claim verification by skill chains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="verify one claim against one table")
    p.add_argument("table")
    p.add_argument("claim")
    p.add_argument("--claim-id", default="claim")
    p.add_argument("--domain", default="other")
    p.add_argument("--trace-out", help="write the record JSON here")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("batch", help="verify a dataset, resumably")
    p.add_argument("dataset")
    p.add_argument("--out", default="run")
    p.add_argument("--limit", type=int, help="compute at most this many new claims")
    _common(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("claimgen", help="generate supported/refuted claim pairs for a table")
    p.add_argument("table")
    p.add_argument("--table-id")
    p.add_argument("--domain", default="other")
    p.add_argument("--negatives", choices=("flip", "manipulate", "mixed"), default="flip")
    p.add_argument("--validate", choices=("none", "oracle", "multipath"), default="none")
    p.add_argument("--paths", type=int, default=3)
    p.add_argument("--queue", help="adjudication queue file")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_claimgen)

    p = sub.add_parser("evaluate", help="chain-quality metrics for stored traces")
    p.add_argument("traces")
    p.add_argument("--judgments", help="JSON lines {trace_id, step, verdict, judge}")
    p.add_argument("--human-scores", help="CSV trace_id, annotator_id, granularity, interpretability")
    p.add_argument("--judge-model", help="model id for redundancy/alignment judging")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="accuracy and dataset tables")
    p.add_argument("run", nargs="?")
    p.add_argument("--dataset")
    _common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle-check", help="evaluate a check expression on a table")
    p.add_argument("table")
    p.add_argument("check", nargs="?")
    p.add_argument("--batch", help="file with one check per line")
    _common(p)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    try:
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except OracleError as err:
        where = getattr(err, "path", None)
        print(f"error: {err}" + (f" (at {where})" if where else ""), file=sys.stderr)
    except (UsageError, ConfigError, FactoryError, EvaluationError, LLMError, PromptError,
            TableError, OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
