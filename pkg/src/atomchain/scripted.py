"""Scripted model backends for offline runs and tests.

Stage requests are recognized by the step heading each bundled system prompt
carries, so a script can answer per stage without matching on table content.
"""

from __future__ import annotations

import json
import re
from typing import Callable, Mapping, Sequence

from .chain import Subplan
from .llm import GenerationRequest, MockBackend
from .parsing import render_plans

STAGE_MARKERS = {
    "interpret": "(1. Understand the problem)",
    "plan": "(2. Give a Plan)",
    "cell": "(3. Ground the cell",
    "reason": "(4. Give a Reasoning",
    "recap": "(5. Verify the Reasoning",
    "conclusion": "(6. Conclude",
}

FACTORY_MARKERS = {
    "positive": "give several claims",
    "flip": "turn a claim that is supported by the table into a claim that is refuted by the table. Please",
    "manipulate": "altering its quantitative",
    "oos": "rewrite a scientific claim",
}

FLAG_TEXT = {"TRUE": "True", "FALSE": "False", "NOT_ENOUGH_INFO": "Not enough information"}


def system_text(req: GenerationRequest) -> str:
    return "\n".join(m.content for m in req.messages if m.role == "system")


def user_text(req: GenerationRequest) -> str:
    users = [m.content for m in req.messages if m.role == "user"]
    return users[-1] if users else ""


def detect_stage(req: GenerationRequest) -> str | None:
    """Chain or factory stage of a request rendered from the bundled templates."""
    system = system_text(req)
    for stage, marker in {**STAGE_MARKERS, **FACTORY_MARKERS}.items():
        if marker in system:
            return stage
    return None


def section(user: str, header: str) -> str:
    """Body of ``### header`` in a rendered user prompt."""
    m = re.search(rf"^### {re.escape(header)}\n(.*?)(?=^### |\Z)", user, re.S | re.M)
    return m.group(1).strip() if m else ""


StageScript = Mapping[str, "str | Sequence[str] | Callable[[GenerationRequest], str]"]


def stage_backend(script: StageScript, default: str | None = None) -> MockBackend:
    """A mock backend answering each stage from ``script`` (keyed by stage name)."""
    return MockBackend(
        [(re.escape(STAGE_MARKERS.get(stage) or FACTORY_MARKERS[stage]), resp) for stage, resp in script.items()],
        default=default,
    )


def flag_text(flag: str | None) -> str:
    return "" if flag is None else f" <flag>{FLAG_TEXT[flag]}</flag>"


def canonical_script(
    n_plans: int,
    recap_flags: Sequence[str | None],
    final_flag: str = "TRUE",
) -> dict[str, Callable[[GenerationRequest], str]]:
    """Stage answers for an n-plan chain whose recap for subplan i carries
    ``recap_flags[i-1]`` (TRUE/FALSE/NOT_ENOUGH_INFO or None for no flag).

    Responses depend only on the request, so the script is safe under
    concurrent chains.
    """
    plans = [Subplan(i, f"Check part {i} of the claim.") for i in range(1, n_plans + 1)]

    def idx(req: GenerationRequest) -> int:
        sub = section(user_text(req), "Subplan")
        m = re.match(r"Check part (\d+)", sub)
        return int(m.group(1)) if m else 1

    return {
        "interpret": lambda req: "The claim compares values reported in the table.",
        "plan": lambda req: render_plans(plans),
        "cell": lambda req: (
            f"<grounding>Locate the cells for part {idx(req)}.</grounding>\n"
            f"<extraction>The value for part {idx(req)} is 1.</extraction>"
        ),
        "reason": lambda req: f"Comparing the values for part {idx(req)}.",
        "recap": lambda req: f"Part {idx(req)} is checked.{flag_text(recap_flags[idx(req) - 1])}",
        "conclusion": lambda req: f"<conclusion>All parts were checked.</conclusion>{flag_text(final_flag)}",
    }


def example_script(exemplars: Mapping[str, str]) -> dict[str, str]:
    """Stage outputs of the worked example bundled with the templates."""
    return {
        "interpret": exemplars["interpret"],
        "plan": exemplars["plan"],
        "cell": f"<grounding>\n{exemplars['cell']}\n</grounding>\n\n<extraction>\n{exemplars['extract']}\n</extraction>",
        "reason": exemplars["reason"],
        "recap": exemplars["recap"],
        "conclusion": exemplars["conclusion"],
    }


def load_script(path: str) -> dict[str, object]:
    """Read a JSON script file: ``{"stage": "text" | ["text", ...]}``."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError("a script file holds a JSON object keyed by stage")
    unknown = set(obj) - set(STAGE_MARKERS) - set(FACTORY_MARKERS)
    if unknown:
        raise ValueError(f"unknown stages in script: {sorted(unknown)}")
    return obj
