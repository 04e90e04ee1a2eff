"""Shared builders for scripted runs: the worked example session and a
small labelled dataset whose model answers depend on the claim text."""

from __future__ import annotations

import re
from pathlib import Path

from atomchain.chain import Claim, Verdict
from atomchain.dataset import DOMAINS, DatasetEntry, save_dataset
from atomchain.llm import LLMClient, load_session, record_session
from atomchain.orchestrator import ChainConfig, verify
from atomchain.scripted import canonical_script, example_script, section, stage_backend, user_text

EXAMPLE_CLAIM = Claim(
    "The Fine-Tuned-disc model outperforms the CS-only-disc model on test perp, test acc and test wer.",
    "example",
    Verdict.REFUTE,
    "ml",
)


def record_example_session(path: Path, table, templates, config: ChainConfig | None = None) -> Path:
    """Run the worked example through a scripted backend and record every call."""
    client = LLMClient(stage_backend(example_script(templates.exemplars)),
                       recorder=record_session(path), record_all=True)
    verify(table, EXAMPLE_CLAIM, client, templates, config or ChainConfig(seed=0), table_ref="perf")
    return path


def replay_example(session: Path, table, templates, config: ChainConfig | None = None):
    client = LLMClient(load_session(session))
    rec = verify(table, EXAMPLE_CLAIM, client, templates, config or ChainConfig(seed=0), table_ref="perf")
    return rec, client


# -- a dataset whose verdicts are decided by a marker in the claim ---------------------

def claim_script():
    """Two-plan chains; a claim ending in "(no)" is refuted at its second recap,
    a claim ending in "(nei)" concludes NOT_ENOUGH_INFO, anything else is supported."""
    base = canonical_script(2, ["TRUE", "TRUE"])

    def claim_of(req) -> str:
        return section(user_text(req), "Claim")

    def recap(req):
        text = base["recap"](req)
        if claim_of(req).endswith("(no)") and "Check part 2" in section(user_text(req), "Subplan"):
            return re.sub(r"<flag>True</flag>", "<flag>False</flag>", text)
        return text

    def conclusion(req):
        flag = "Not enough information" if claim_of(req).endswith("(nei)") else "True"
        return f"<conclusion>Checked.</conclusion> <flag>{flag}</flag>"

    return {**base, "recap": recap, "conclusion": conclusion}


def predicted(claim: str) -> Verdict:
    if claim.endswith("(no)"):
        return Verdict.REFUTE
    if claim.endswith("(nei)"):
        return Verdict.NOT_ENOUGH_INFO
    return Verdict.SUPPORT


def scripted_entries(n: int, table) -> list[DatasetEntry]:
    """``n`` entries cycling through domains, gold labels and model outcomes."""
    outcomes = ["", " (no)", " (nei)", "", " (no)"]
    out = []
    for i in range(n):
        gold = Verdict.SUPPORT if i % 2 == 0 else Verdict.REFUTE
        out.append(DatasetEntry(
            id=f"c{i:02d}",
            domain=DOMAINS[i % len(DOMAINS)],
            caption=table.caption,
            rows=table.grid(),
            claim=f"Claim number {i} about the table.{outcomes[i % len(outcomes)]}",
            label=gold,
        ))
    return out


def write_dataset(path: Path, entries) -> Path:
    save_dataset(entries, path)
    return path


# -- scripted claim factory --------------------------------------------------------------

XLPE_POSITIVES = [
    ("Trend", "Total water rises from 0.4 to 13.0 mg/g as the silica content grows."),
    ("Peak", "The 12.5 wt% VS sample holds the most non-frozen water at 7.7 mg/g."),
    ("Ratio", "Non-frozen water exceeds freezable water in the 5 wt% VS sample."),
    ("Base", "Plain XLPE holds 0.4 mg/g of non-frozen water."),
]

FLIPS = {"rises": "falls", "most": "least", "exceeds": "trails", "holds": "lacks"}


def factory_script(positive_rounds=None):
    """Factory answers. ``positive_rounds`` is the list of bullet lists returned
    by successive positive calls (the last one repeats)."""
    from atomchain.parsing import render_claim_bullets
    from atomchain.scripted import section, user_text

    rounds = positive_rounds or [XLPE_POSITIVES]
    state = {"n": 0}

    def positive(req):
        i = min(state["n"], len(rounds) - 1)
        state["n"] += 1
        return render_claim_bullets(rounds[i])

    def flip(req):
        claim = section(user_text(req), "Original Claim").split("\nYour Response:")[0].strip()
        words = [FLIPS.get(w, w) for w in claim.split()]
        return "### Thought\nReverse one word.\n### Claim\n" + " ".join(words)

    def manipulate(req):
        import re

        claim = section(user_text(req), "Original Claim").split("\nYour Response:")[0].strip()
        return "### Thought\nChange a number.\n### Claim\n" + re.sub(r"\d+\.\d", "99.9", claim, count=1)

    return {"positive": positive, "flip": flip, "manipulate": manipulate}
