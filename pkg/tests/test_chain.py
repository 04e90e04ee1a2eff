from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomchain.chain import (
    ChainTrace,
    InvalidTrace,
    Stage,
    StepFlag,
    StepRecord,
    Subplan,
    Termination,
    Verdict,
    expected_calls,
    next_stage,
    validate_trace,
)
from transitions import TABLE, all_scripts, drive, expected


@pytest.mark.parametrize("script", sorted(TABLE, key=str))
def test_literal_transition_rows(script):
    recaps, final = script
    trace, calls = drive(recaps, final)
    label, term, n_calls = TABLE[script]
    assert (trace.label.value, trace.termination.value, calls) == (label, term, n_calls)


def test_exhaustive_small_plans_match_reference():
    for recaps, final in all_scripts(4):
        trace, calls = drive(recaps, final)
        label, term, n_calls, steps = expected(recaps, final)
        assert trace.label.value == label
        assert trace.termination.value == term
        assert calls == n_calls == expected_calls(steps)
        assert len(trace.steps) == steps
        assert validate_trace(trace) == []


def test_fresh_trace_starts_with_interpretation():
    assert next_stage(ChainTrace("t", "c")).stage is Stage.INTERPRETATION


def test_terminated_trace_is_done():
    trace, _ = drive(("FALSE",), "TRUE")
    assert next_stage(trace).stage is Stage.DONE


def test_false_flag_then_more_steps_is_invalid():
    t = ChainTrace("t", "c", "i", [Subplan(1, "a"), Subplan(2, "b")])
    t.steps = [
        StepRecord(Subplan(1, "a"), "g", reasoning="r", recap="u", flag=StepFlag.FALSE),
        StepRecord(Subplan(2, "b"), "g"),
    ]
    codes = {v.code for v in validate_trace(t)}
    assert "early stop" in codes
    with pytest.raises(InvalidTrace):
        next_stage(t)


def test_completed_with_false_flag_is_rejected():
    trace, _ = drive(("TRUE", "FALSE"), "TRUE")
    trace.termination = Termination.COMPLETED
    assert any(v.code == "completed" for v in validate_trace(trace))


def test_label_without_termination():
    t = ChainTrace("t", "c", label=Verdict.SUPPORT)
    assert [v.code for v in validate_trace(t)] == ["termination"]


def test_skipped_field_is_fill_order_violation():
    t = ChainTrace("t", "c", "i", [Subplan(1, "a")])
    t.steps = [StepRecord(Subplan(1, "a"), grounding=None, reasoning="r")]
    assert any(v.code == "fill order" for v in validate_trace(t))


def test_plan_indices_must_be_contiguous():
    t = ChainTrace("t", "c", "i", [Subplan(1, "a"), Subplan(3, "b")])
    assert any(v.code == "plan indices" for v in validate_trace(t))


def test_aborted_needs_reason():
    t = ChainTrace("t", "c", label=Verdict.NOT_ENOUGH_INFO, termination=Termination.ABORTED)
    assert any(v.code == "aborted" for v in validate_trace(t))
    t.abort_reason = "ParseFailure:plan"
    assert validate_trace(t) == []


@given(st.lists(st.sampled_from(["TRUE", "FALSE", "NOT_ENOUGH_INFO", None]), min_size=1, max_size=8),
       st.sampled_from(["TRUE", "FALSE", "NOT_ENOUGH_INFO"]))
def test_trace_json_round_trip(recaps, final):
    trace, _ = drive(tuple(recaps), final)
    doc = trace.to_json()
    assert doc["schema_version"] == 1
    back = ChainTrace.from_json(json.loads(json.dumps(doc)))
    assert back.to_json() == doc
