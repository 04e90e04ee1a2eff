"""Print the chain's label, termination and call count for every recap-flag
sequence up to a plan length, running the real orchestrator on a mock model.

    python3 scripts/transition_table.py --max-plans 2
"""

from __future__ import annotations

import argparse
import itertools

from atomchain.chain import Claim
from atomchain.llm import LLMClient
from atomchain.orchestrator import verify
from atomchain.prompts import load_templates
from atomchain.scripted import canonical_script, stage_backend
from atomchain.tables import Table

RECAP = ("TRUE", "FALSE", "NOT_ENOUGH_INFO", None)
FINAL = ("TRUE", "FALSE", "NOT_ENOUGH_INFO")
SHORT = {"TRUE": "T", "FALSE": "F", "NOT_ENOUGH_INFO": "N", None: "-"}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-plans", type=int, default=2)
    args = ap.parse_args()

    table = Table.from_grid([["item", "value"], ["a", "1"]], caption="toy")
    claim = Claim("Item a has value 1.", "toy")
    templates = load_templates()
    print("| recap flags | final flag | label | termination | steps | calls |")
    print("|---|---|---|---|---|---|")
    for n in range(1, args.max_plans + 1):
        for recaps in itertools.product(RECAP, repeat=n):
            for final in FINAL:
                client = LLMClient(stage_backend(canonical_script(n, list(recaps), final)))
                rec = verify(table, claim, client, templates)
                flags = " ".join(SHORT[f] for f in recaps)
                print(f"| {flags} | {SHORT[final]} | {rec.label.value} | {rec.trace.termination.value} "
                      f"| {len(rec.trace.steps)} | {client.usage.calls} |")


if __name__ == "__main__":
    main()
