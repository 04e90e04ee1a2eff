from __future__ import annotations

import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atomchain.chain import ExtractedFact
from atomchain.oracle import (
    CheckSyntaxError,
    CheckTypeError,
    DegenerateSeries,
    DivisionByZero,
    EmptyRegion,
    FactStatus,
    NonNumericCell,
    Quantity,
    RegionOutOfBounds,
    UnitMismatch,
    check,
    check_extraction,
    parse_check,
    print_check,
    round_to,
    trend_agreement,
)
from atomchain.tables import CellAddress, Number, Table
from naive_oracle import _half_up, equivalence_mismatches, random_expr, random_table


def test_xlpe_total_is_sum_of_parts(xlpe):
    v = check('(~ (+ (cell "12.5 wt% VS" 2) (cell "12.5 wt% VS" 3)) (cell "12.5 wt% VS" 4))', xlpe)
    assert v.value is True
    assert {a for a, _ in v.evidence} == {CellAddress(4, 2), CellAddress(4, 3), CellAddress(4, 4)}


def test_perf_discriminative_perplexity(perf):
    assert check("(< (cell 10 5) (cell 9 5))", perf).value is False
    assert check('(> (cell "Fine-Tuned-disc" "test perp") (cell "CS-only-disc" "test perp"))', perf).value is True


def test_approx_uses_comparand_precision(xlpe):
    # 5.3 + 7.7 = 13.0 exactly; a literal printed to 0 places rounds the sum.
    assert check("(~ (cell 4 4) 13)", xlpe).value is True
    assert check("(~ (cell 4 4) 13.05)", xlpe).value is False
    assert check("(~ (/ 10 3) 3.33)", xlpe).value is True
    assert check("(~ (/ 10 3) (/ 20 6))", xlpe).value is True


def test_round_half_away_from_zero():
    assert round_to(Decimal("2.5"), 0) == 3
    assert round_to(Decimal("-2.5"), 0) == -3
    assert round_to(Decimal("1.25"), 1) == Decimal("1.3")


@given(st.decimals(min_value=-10**6, max_value=10**6, allow_nan=False, places=4), st.integers(0, 3))
def test_rounding_matches_hand_rounding(x, places):
    assert round_to(x, places) == _half_up(x, places)


@pytest.mark.parametrize(
    "src, exc",
    [
        ("(sum (> 1 2))", CheckTypeError),
        ("(and 1 2)", CheckTypeError),
        ("(+ (row 2) 1)", CheckTypeError),
        ("(< 1", CheckSyntaxError),
        ("(frobnicate 1)", CheckSyntaxError),
    ],
)
def test_static_errors(src, exc):
    with pytest.raises(exc):
        parse_check(src)


def test_syntax_error_has_position():
    with pytest.raises(CheckSyntaxError) as err:
        parse_check("(< 1 2) extra")
    assert err.value.pos >= 7


@pytest.mark.parametrize(
    "src, exc",
    [
        ("(/ 1 0)", DivisionByZero),
        ("(pct_change 0 5)", DivisionByZero),
        ("(< (cell 2 2) 1)", NonNumericCell),
        ("(sum (range 1 1 9 9))", RegionOutOfBounds),
        ("(trend increasing (cell 3 2))", DegenerateSeries),
        ('(< (lit 1 "%") (lit 1 "mg/g"))', UnitMismatch),
    ],
)
def test_runtime_errors(xlpe, src, exc):
    with pytest.raises(exc):
        check(src, xlpe)


def test_empty_region_is_error():
    t = Table.from_grid([["a", "b"], ["x", "1"]])
    from atomchain.oracle import Aggregate, evaluate

    with pytest.raises(EmptyRegion):
        evaluate(Aggregate("sum", ()), t)


def test_pct_change_has_percent_unit(xlpe):
    v = check("(pct_change (cell 3 4) (cell 4 4))", xlpe).value
    assert isinstance(v, Quantity) and v.unit == "%"
    assert round_to(v.value, 4) == Decimal("251.3514")  # 930/3.7


def test_region_defaults(xlpe):
    assert check('(sum (row "5 wt% VS"))', xlpe).value.value == Decimal("7.4")
    assert check("(count (col 4))", xlpe).value.value == 3
    assert check("(trend increasing (col 4))", xlpe).value is True


def test_trend_agreement():
    D = Decimal
    assert trend_agreement([D(1), D(2)], [D(3), D(4)]) == 1
    assert trend_agreement([D(1), D(2)], [D(4), D(3)]) == -1
    with pytest.raises(DegenerateSeries):
        trend_agreement([D(1)], [D(1)])


@settings(max_examples=200)
@given(st.integers(0, 10**9))
def test_reflexivity_and_zero_change(seed):
    rng = random.Random(seed)
    t = random_table(rng)
    r, c = rng.randint(2, t.n_rows), rng.randint(2, t.n_cols)
    cell = f"(cell {r} {c})"
    for rel in ("=", "<=", ">=", "~"):
        assert check(f"({rel} {cell} {cell})", t).value is True
    try:
        assert check(f"(pct_change {cell} {cell})", t).value.value == 0
    except DivisionByZero:
        pass


@settings(max_examples=300)
@given(st.integers(0, 10**9))
def test_print_parse_round_trip(seed):
    rng = random.Random(seed)
    t = random_table(rng)
    expr = random_expr(rng, t)
    text = print_check(expr)
    assert parse_check(text) == expr
    assert print_check(parse_check(text)) == text


def test_check_extraction(perf):
    at = CellAddress(9, 5)
    out = check_extraction(
        [
            ExtractedFact("CS-only-disc test perp", at, Number(Decimal("1.3"))),
            ExtractedFact("CS-only-disc test perp", at, Number(Decimal("1.4"))),
            ExtractedFact("no address", None, Number(Decimal("1.3"))),
        ],
        perf,
    )
    assert [f.status for f in out] == [FactStatus.MATCH, FactStatus.MISMATCH, FactStatus.UNVERIFIABLE]
    assert out[1].actual.value == Decimal("1.3")


def test_coarser_fact_matches_after_rounding(perf):
    out = check_extraction([ExtractedFact("wer", CellAddress(10, 7), Number(Decimal("22.5")))], perf)
    assert out[0].status is FactStatus.MATCH


@settings(max_examples=200)
@given(st.integers(0, 10**9))
def test_facts_read_from_the_table_always_match(seed):
    rng = random.Random(seed)
    t = random_table(rng)
    from atomchain.tables import get_cell, parse_numeric

    facts = []
    for _ in range(5):
        addr = CellAddress(rng.randint(2, t.n_rows), rng.randint(2, t.n_cols))
        facts.append(ExtractedFact("f", addr, parse_numeric(get_cell(t, addr))))
    assert all(f.status is FactStatus.MATCH for f in check_extraction(facts, t))


def test_equivalence_with_naive_evaluator():
    bad = equivalence_mismatches(400, seed=11)
    assert bad == []


def test_percent_fraction_conversion():
    t = Table.from_grid([["model", "acc"], ["a", "75.5%"], ["b", "0.755"]])
    assert check("(= (to_fraction (cell 2 2)) (cell 3 2))", t).value is True
    assert check("(= (cell 2 2) (to_percent (cell 3 2)))", t).value is True
    v = check("(to_percent (cell 3 2))", t).value
    assert (v.value, v.unit) == (Decimal("75.500"), "%")
    with pytest.raises(UnitMismatch):
        check("(to_fraction (cell 3 2))", t)
    with pytest.raises(UnitMismatch):
        check("(to_percent (cell 2 2))", t)
    with pytest.raises(CheckSyntaxError):
        parse_check("(to_percent 1 2)")
