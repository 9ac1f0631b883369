import pytest

from modeguard.evaluation import SCENARIOS, attack_mission
from modeguard.instrument import instrument_guard, instrument_profile
from modeguard.ir import parse_firmware
from modeguard.missions import CorruptReturn, InjectHijack, MissionScript, SetModeCmd, Wait, generate_missions
from modeguard.modeanalysis import BOOT_MODE, ModeConfig
from modeguard.runtime import (
    FORBIDDEN_CALL,
    MONITOR_ENFORCE,
    MONITOR_PERMIT_ALL,
    RETURN_MISMATCH,
    ConfigMissing,
    FatalConfig,
    RuntimeFault,
    UnknownMode,
    ViolationEvent,
    initial_state,
    monitor_call,
    monitor_mode_switch,
    monitor_return,
    run_mission,
)

# Small firmware: mode A recurses five levels through an indirect call,
# FAILSAFE makes one indirect call to its own handler.
NEST = """modes A,FAILSAFE
modeid 1 A
modeid 9 FAILSAFE
entry main
switcher set_mode

record H { h: fnref()->void, bad: fnref()->void }
global %g : H

fn main() -> void {
  %p = input mode_pending
  ifgoto %p switch
label run
  %five = const 5
  %r = addrof rec
  icall %r(%five) : (int)->void
  ret
label switch
  %m = input mode_cmd
  %ok = call set_mode(%m)
  goto run
}

fn set_mode(%m: int) -> int {
  %k1 = const 1
  %c1 = eq %m, %k1
  ifgoto %c1 a
  %k9 = const 9
  %c9 = eq %m, %k9
  ifgoto %c9 fs
  %no = const 0
  ret %no
label a
  setmode %m
  call enter_a()
  %ok = const 1
  ret %ok
label fs
  setmode %m
  call enter_failsafe()
  %ok = const 1
  ret %ok
}

fn enter_a() -> void {
  ret
}

fn enter_failsafe() -> void {
  %h = addrof fs_handler
  icall %h() : ()->void
  ret
}

fn fs_handler() -> void {
  effect safe_stop()
  ret
}

fn dec(%n: int) -> int {
  %k5 = const 5
  %c5 = eq %n, %k5
  ifgoto %c5 d5
  %k4 = const 4
  %c4 = eq %n, %k4
  ifgoto %c4 d4
  %k3 = const 3
  %c3 = eq %n, %k3
  ifgoto %c3 d3
  %k2 = const 2
  %c2 = eq %n, %k2
  ifgoto %c2 d2
  %z = const 0
  ret %z
label d5
  %r4 = const 4
  ret %r4
label d4
  %r3 = const 3
  ret %r3
label d3
  %r2 = const 2
  ret %r2
label d2
  %one = const 1
  ret %one
}

fn rec(%n: int) -> void {
  effect depth(%n)
  %z = const 0
  %c = eq %n, %z
  ifgoto %c done
  %m = call dec(%n)
  %r = addrof rec
  icall %r(%m) : (int)->void
label done
  ret
}

fn kill() -> void {
  effect kill()
  ret
}

fn typed(%x: int) -> void {
  ret
}

fn cast_call() -> void {
  %t = addrof typed
  %g.bad = %t
  %b = %g.bad
  icall %b() : ()->void
  ret
}
"""

ALL = frozenset({"main", "enter_a", "enter_failsafe", "fs_handler", "dec", "rec", "kill", "typed", "cast_call"})


@pytest.fixture(scope="module")
def nest():
    return parse_firmware(NEST, name="nest")


@pytest.fixture(scope="module")
def nest_guarded(nest):
    return instrument_guard(nest)


def _cfg(**tables):
    base = {BOOT_MODE: ALL, "A": ALL, "FAILSAFE": ALL}
    base.update({k: frozenset(v) for k, v in tables.items()})
    return ModeConfig("dynamic", base, "nest")


A_RUN = MissionScript("a", (SetModeCmd("A"), Wait(10)))


def test_empty_mission_only_boots(toycopter):
    r = run_mission(toycopter, MissionScript("empty", ()))
    assert r.mode_transitions == [(0, None, BOOT_MODE)]
    assert r.ticks == 0 and r.effects == [] and r.violations == []


def test_guided_then_rtl_under_static_config(copter):
    mission = MissionScript("g", (SetModeCmd("GUIDED"), Wait(80), SetModeCmd("RTL"), Wait(80)))
    r = run_mission(copter.guarded, mission, copter.static, MONITOR_ENFORCE)
    assert r.violations == [] and not r.fail_safe
    assert [t[2] for t in r.mode_transitions] == [BOOT_MODE, "GUIDED", "RTL"]


def test_hijack_is_stopped_by_the_monitor(copter, toycopter):
    mission = attack_mission(SCENARIOS["a1"], toycopter)
    plain = run_mission(toycopter, mission)
    assert "disarm" in plain.effect_names()
    r = run_mission(copter.guarded, mission, copter.dynamic, MONITOR_ENFORCE)
    assert [v.kind for v in r.violations] == [FORBIDDEN_CALL]
    assert r.violations[0].target == "disarm_motors" and r.violations[0].mode == "GUIDED"
    assert r.fail_safe
    assert "safe_land" in r.effect_names() and "disarm" not in r.effect_names()
    assert r.mode_transitions[-1][2] == "FAILSAFE"


def test_monitor_mode_switch():
    cfg = _cfg(A={"rec"})
    st = initial_state(cfg)
    assert st.current_mode == BOOT_MODE and st.table == ALL
    monitor_mode_switch(st, "A", cfg)
    assert st.current_mode == "A" and st.table == {"rec"}
    with pytest.raises(UnknownMode):
        monitor_mode_switch(st, "B", cfg)


def test_monitor_call_and_return():
    st = initial_state(_cfg(A={"rec"}))
    monitor_mode_switch(st, "A", _cfg(A={"rec"}))
    assert monitor_call(st, "rec", ("main", 3), 7) is None
    assert st.shadow_stack == [("main", 3)]
    ev = monitor_call(st, "kill", ("main", 4), 8)
    assert ev == ViolationEvent(FORBIDDEN_CALL, "A", ("main", 4), "kill", 8)
    assert st.shadow_stack == [("main", 3)]
    assert monitor_return(st, ("main", 3)) is None
    assert monitor_call(st, "rec", ("main", 3)) is None
    ev = monitor_return(st, ("kill", 0), 9)
    assert ev.kind == RETURN_MISMATCH and ev.site == ("main", 3)
    assert ev.line() == "violation kind=ReturnMismatch mode=A target=kill:0 site=main:3 tick=9"


def test_permissive_state_records_nothing():
    st = initial_state(_cfg(A=set()), enforcing=False)
    assert monitor_call(st, "kill", ("main", 1)) is None
    assert monitor_return(st, ("elsewhere", 0)) is None
    assert st.violations == []


def test_nested_calls_pair_lifo(nest_guarded):
    r = run_mission(nest_guarded, A_RUN, _cfg(), MONITOR_ENFORCE)
    assert r.violations == []
    depths = [a[0] for _, name, a in r.effects if name == "depth"]
    assert depths[:6] == [5, 4, 3, 2, 1, 0]
    stack = []
    for ev in r.shadow_trace:
        if ev[0] == "push":
            stack.append(ev[1])
        else:
            assert ev[1] == ev[2] == stack.pop()
    assert stack == []
    # one iteration: six pushes (main plus five levels of recursion)
    first = r.shadow_trace[:12]
    assert [e[0] for e in first] == ["push"] * 6 + ["pop"] * 6


def test_smash_is_a_return_mismatch(nest, nest_guarded):
    mission = MissionScript("s", (SetModeCmd("A"), CorruptReturn("kill", 2), Wait(10)))
    plain = run_mission(nest, mission)
    assert plain.effect_names().count("kill") == 1
    r = run_mission(nest_guarded, mission, _cfg(), MONITOR_ENFORCE)
    assert r.violations[0].kind == RETURN_MISMATCH
    assert r.violations[0].target == "kill:0"
    assert "kill" not in r.effect_names()
    assert r.fail_safe and "safe_stop" in r.effect_names()


def test_second_violation_in_failsafe_halts(nest_guarded):
    cfg = _cfg(A={"main"}, FAILSAFE={"main"})
    r = run_mission(nest_guarded, A_RUN, cfg, MONITOR_ENFORCE)
    assert [v.mode for v in r.violations] == ["A", "FAILSAFE"]
    assert r.fail_safe
    assert "safe_stop" not in r.effect_names()


def test_missing_failsafe_table_is_fatal(nest_guarded):
    cfg = ModeConfig("dynamic", {BOOT_MODE: ALL, "A": frozenset({"main"})}, "nest")
    with pytest.raises(FatalConfig):
        run_mission(nest_guarded, A_RUN, cfg, MONITOR_ENFORCE)


def test_enforce_needs_config(nest_guarded):
    with pytest.raises(ConfigMissing):
        run_mission(nest_guarded, A_RUN, None, MONITOR_ENFORCE)


def test_unknown_mode_in_config(nest_guarded):
    cfg = ModeConfig("dynamic", {BOOT_MODE: ALL, "FAILSAFE": ALL}, "nest")
    with pytest.raises(UnknownMode):
        run_mission(nest_guarded, A_RUN, cfg, MONITOR_ENFORCE)


def test_signature_mismatch_faults():
    text = NEST.replace("  %r = addrof rec\n  icall %r(%five) : (int)->void\n  ret\nlabel switch", "  call cast_call()\n  ret\nlabel switch")
    m = parse_firmware(text)
    with pytest.raises(RuntimeFault):
        run_mission(m, A_RUN)


def test_hijack_binds_leniently(nest):
    mission = MissionScript("h", (SetModeCmd("A"), InjectHijack("typed", 0), Wait(1)))
    r = run_mission(nest, mission)
    assert "typed" in r.per_mode_executed["A"]


def test_permit_all_matches_plain_effects(nest, nest_guarded):
    mission = MissionScript("h", (SetModeCmd("A"), InjectHijack("kill", 1), Wait(10)))
    plain = run_mission(nest, mission)
    permissive = run_mission(nest_guarded, mission, _cfg(A=set()), MONITOR_PERMIT_ALL)
    assert permissive.effects == plain.effects
    assert permissive.violations == [] and not permissive.fail_safe


def test_runs_are_deterministic(toycopter, copter_missions):
    for m in copter_missions[:5]:
        assert run_mission(toycopter, m).to_text() == run_mission(toycopter, m).to_text()


def test_logged_matches_ground_truth(copter, copter_missions):
    for m in copter_missions:
        r = run_mission(copter.profiled, m)
        assert r.logged == r.per_mode_executed


def test_instrumented_builds_tick_in_lockstep(toycopter, copter, copter_missions):
    for m in copter_missions[:8]:
        plain = run_mission(toycopter, m)
        prof = run_mission(copter.profiled, m)
        assert prof.ticks == plain.ticks and prof.effects == plain.effects


def test_unknown_monitor_name(nest):
    from modeguard.runtime import Interpreter

    with pytest.raises(ValueError):
        Interpreter(nest, None, "paranoid")


def test_rover_missions_run_clean(rover, rover_art):
    for m in generate_missions(rover, 10, 5):
        r = run_mission(rover_art.guarded, m, rover_art.static, MONITOR_ENFORCE)
        assert r.violations == []


def test_profile_instrumented_nest(nest):
    r = run_mission(instrument_profile(nest), A_RUN)
    assert r.logged == r.per_mode_executed
