from decimal import Decimal

import pytest

from modeguard.reference import PRUNING, REDUCTION, TOLERANCE, check_rows, format_checks, matches, rounded_percent


def test_rounding_follows_reported_precision():
    assert rounded_percent(0.87335, "87.33") == Decimal("87.34")
    assert rounded_percent(0.879, "88") == Decimal("88")
    assert rounded_percent(0.3577, "36") == Decimal("36")


def test_matches_uses_tolerance():
    assert TOLERANCE == 0.01
    assert matches(0.8733, "87.33")
    assert matches(0.8734, "87.33")
    assert not matches(0.8736, "87.33")


def test_row_counts():
    assert len(PRUNING) == 4
    assert len(REDUCTION) == 23
    assert len(check_rows()) == 4 + 2 * 23


def test_only_known_defect_mismatches():
    bad = [c.label for c in check_rows() if not c.ok]
    assert bad == ["reduction ArduPlane CIRCLE dynamic"]


def test_defect_row_recomputes_to_consistent_value():
    row = next(r for r in REDUCTION if r.firmware == "ArduPlane" and r.mode == "CIRCLE")
    assert rounded_percent(1 - row.dynamic / row.total, "0.00") == Decimal("87.76")


@pytest.mark.parametrize("row", REDUCTION, ids=lambda r: f"{r.firmware}-{r.mode}")
def test_dynamic_allows_fewer_than_static(row):
    assert row.dynamic < row.static < row.total


def test_format_checks():
    text = format_checks(check_rows())
    assert text.count("\n") == 50
    assert text.count("MISMATCH") == 1
