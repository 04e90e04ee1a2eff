"""Record the bundled worked example through a scripted backend, then replay it.

    python3 scripts/replay_example.py --session example.jsonl --out example_trace.json

The replay store is rebuilt when the session file does not exist yet. The
script prints the label, the termination reason and the number of model
calls, and writes the record (without wall time) as JSON.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from atomchain.chain import Claim, Verdict
from atomchain.cli import read_table
from atomchain.llm import LLMClient, load_session, record_session
from atomchain.orchestrator import ChainConfig, verify
from atomchain.prompts import load_templates
from atomchain.scripted import example_script, stage_backend

ROOT = Path(__file__).resolve().parent.parent
CLAIM = Claim(
    "The Fine-Tuned-disc model outperforms the CS-only-disc model on test perp, test acc and test wer.",
    "example",
    Verdict.REFUTE,
    "ml",
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--table", default=str(ROOT / "tests" / "fixtures" / "perf.table"))
    ap.add_argument("--session", default="example_session.jsonl")
    ap.add_argument("--out", default="example_trace.json")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = read_table(args.table)
    templates = load_templates()
    config = ChainConfig(seed=args.seed)
    session = Path(args.session)
    if not session.exists():
        recorder = LLMClient(stage_backend(example_script(templates.exemplars)),
                             recorder=record_session(session), record_all=True)
        verify(table, CLAIM, recorder, templates, config, table_ref=Path(args.table).stem)
        print(f"recorded {recorder.usage.calls} calls to {session}")

    client = LLMClient(load_session(session))
    rec = verify(table, CLAIM, client, templates, config, table_ref=Path(args.table).stem)
    Path(args.out).write_text(json.dumps(rec.to_json(include_time=False), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    print(f"label: {rec.label.value}")
    print(f"termination: {rec.trace.termination.value} after {len(rec.trace.steps)} step(s)")
    print(f"model calls: {client.usage.calls}")
    for fact in rec.trace.steps[0].extraction:
        where = f"({fact.address.row}, {fact.address.col})" if fact.address else "(no address)"
        print(f"  fact {where}: {fact.value.value if fact.value else '-'}")
    print(f"record written to {args.out}")


if __name__ == "__main__":
    main()
