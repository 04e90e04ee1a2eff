"""Run a scripted batch in a child process and hard-kill it after a number
of finished chains, leaving the run directory as a crash would."""

from __future__ import annotations

import os
import sys
import threading
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from atomchain.dataset import load_dataset  # noqa: E402
from atomchain.llm import LLMClient  # noqa: E402
from atomchain.orchestrator import batch_verify  # noqa: E402
from atomchain.prompts import load_templates  # noqa: E402
from atomchain.scripted import stage_backend  # noqa: E402
from harness import claim_script  # noqa: E402


def main(dataset: str, out_dir: str, kill_after: int, concurrency: int) -> None:
    script = claim_script()
    conclude = script["conclusion"]
    lock = threading.Lock()
    done = [0]

    def conclusion(req):
        with lock:
            done[0] += 1
            if done[0] > kill_after:
                os._exit(9)  # no cleanup, no flush: like SIGKILL mid-run
        return conclude(req)

    client = LLMClient(stage_backend({**script, "conclusion": conclusion}))
    batch_verify(load_dataset(dataset), client, load_templates(), out_dir=out_dir, concurrency=concurrency)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2], int(sys.argv[3]), int(sys.argv[4]))
