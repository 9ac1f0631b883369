import pytest

from modeguard.evaluation import (
    SCENARIOS,
    ScenarioUnavailable,
    allowed_pairs,
    attack_mission,
    available_scenarios,
    executed_pairs,
    forbidden_effects,
    fpr_fnr,
    missed_curve,
    missed_functions,
    pruned_traversals,
    run_attack,
)
from modeguard.modeanalysis import BOOT_MODE, ModeConfig
from modeguard.runtime import RunReport, run_mission


def _report(**per_mode):
    r = RunReport("x", "off")
    r.per_mode_executed = {m: frozenset(f) for m, f in per_mode.items()}
    return r


def test_executed_pairs_skip_boot():
    r = _report(INIT={"main"}, GUIDED={"a", "b"})
    assert executed_pairs([r]) == {("GUIDED", "a"), ("GUIDED", "b")}


def test_missed_functions_counts_pairs():
    cfg = ModeConfig("dynamic", {"GUIDED": frozenset({"a"}), "RTL": frozenset()}, "")
    runs = [_report(GUIDED={"a", "b"}), _report(RTL={"a"}, GUIDED={"b"})]
    assert missed_functions(cfg, runs) == 2


def test_missed_curve_small():
    profiles = [_report(A={"f"}), _report(A={"g"}), _report(A={"h"})]
    held = [_report(A={"f", "g"})]
    assert missed_curve(profiles, held, ["A"], [0, 1, 2, 3]) == {0: 2, 1: 1, 2: 0, 3: 0}


def test_allowed_pairs_skip_boot():
    cfg = ModeConfig("static", {BOOT_MODE: frozenset({"main"}), "A": frozenset({"f"})}, "")
    assert allowed_pairs(cfg) == {("A", "f")}


def test_corpus_missed_curve_shape(copter, toycopter):
    held = copter.profiles[20:]
    curve = missed_curve(copter.profiles, held, toycopter.mode_names, range(1, 21))
    values = [curve[k] for k in range(1, 21)]
    assert values == sorted(values, reverse=True)
    assert curve[1] > 0
    assert all(curve[k] == 0 for k in range(10, 21))


def test_fpr_fnr_on_corpus(copter, copter_missions):
    st = fpr_fnr(copter.static, copter_missions, copter.guarded)
    dy = fpr_fnr(copter.dynamic, copter_missions, copter.guarded)
    assert st.fpr == 0 and dy.fpr == 0
    assert dy.fnr < st.fnr
    assert st.missions == 40 and st.fail_safes == 0


def test_fnr_counts_unused_allowed_pairs(copter, copter_missions):
    res = fpr_fnr(copter.dynamic, copter_missions[:3], copter.guarded)
    allowed = allowed_pairs(copter.dynamic)
    unused = allowed - executed_pairs(res.reports)
    assert res.fnr == pytest.approx(len(unused) / len(allowed))


def test_forbidden_effects_follow_direct_calls(toycopter):
    assert forbidden_effects(toycopter, "disarm_motors") == {"disarm"}
    assert "disarm" in forbidden_effects(toycopter, "disarm")


def test_available_scenarios(toycopter, rover):
    assert available_scenarios(toycopter) == ("a1", "a2", "a3")
    assert available_scenarios(rover) == ("a3",)
    with pytest.raises(ScenarioUnavailable):
        attack_mission(SCENARIOS["a1"], rover)


@pytest.mark.parametrize("key", ["a1", "a2", "a3"])
def test_copter_attacks_detected(key, copter, toycopter):
    res = run_attack(SCENARIOS[key], toycopter, copter.guarded, copter.dynamic)
    assert res.executes_without_monitor
    assert not res.allowed_in_mode
    assert res.detected


def test_rover_attack_detected(rover_art, rover):
    res = run_attack(SCENARIOS["a3"], rover, rover_art.guarded, rover_art.dynamic)
    assert res.mode == "MANUAL"
    assert res.executes_without_monitor and res.detected


def test_no_runtime_edge_was_pruned(copter, toycopter, copter_missions):
    reports = [run_mission(toycopter, m) for m in copter_missions]
    assert pruned_traversals(reports, copter.graphs.address) == set()
    # an empty graph would miss every traversal
    assert pruned_traversals(reports, copter.graphs.address.__class__(frozenset(), ()))
