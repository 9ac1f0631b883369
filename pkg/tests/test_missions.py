import pytest
from hypothesis import given, settings, strategies as st

from modeguard.missions import (
    COVERAGE_WINDOW,
    CorruptReturn,
    InjectHijack,
    InputStep,
    MissionError,
    MissionScript,
    SetModeCmd,
    UnknownFunction,
    Wait,
    archetype_schedule,
    check_mission,
    coverage_features,
    format_mission,
    generate_missions,
    load_missions,
    parse_mission,
    write_missions,
)

SAMPLE = """mission demo
# archetype SL
setmode GUIDED
input obstacle 3
wait 120
hijack disarm_motors at 0
smash disarm_motors at 1
"""


def test_parse_sample():
    m = parse_mission(SAMPLE)
    assert m.name == "demo" and m.archetype == "SL"
    assert m.steps == (
        SetModeCmd("GUIDED"),
        InputStep("obstacle", 3),
        Wait(120),
        InjectHijack("disarm_motors", 0),
        CorruptReturn("disarm_motors", 1),
    )
    assert not m.is_benign()
    assert format_mission(m) == SAMPLE


@pytest.mark.parametrize(
    "text",
    [
        "setmode GUIDED\n",
        "mission a\nmission b\n",
        "mission a\nwait soon\n",
        "mission a\nwait -1\n",
        "mission a\nhijack f at -2\n",
        "mission a\nfly away\n",
    ],
)
def test_malformed_missions(text):
    with pytest.raises(MissionError):
        parse_mission(text)


def test_check_mission_against_module(toycopter):
    with pytest.raises(MissionError):
        check_mission(MissionScript("x", (SetModeCmd("WARP"),)), toycopter)
    with pytest.raises(UnknownFunction):
        check_mission(MissionScript("x", (InjectHijack("nope", 0),)), toycopter)
    with pytest.raises(MissionError):
        check_mission(MissionScript("x", (InputStep("mode_cmd", 1),)), toycopter)
    check_mission(parse_mission(SAMPLE), toycopter)


def test_generation_is_deterministic(toycopter):
    assert generate_missions(toycopter, 40, 0) == generate_missions(toycopter, 40, 0)
    assert generate_missions(toycopter, 40, 0) != generate_missions(toycopter, 40, 1)


def test_generation_count_and_validity(toycopter, copter_missions):
    assert len(copter_missions) == 40
    assert len({m.name for m in copter_missions}) == 40
    for m in copter_missions:
        assert m.is_benign()
        check_mission(m, toycopter)
    with pytest.raises(MissionError):
        generate_missions(toycopter, 0, 0)


def test_archetype_mix_matches_quotas():
    import random

    sched = archetype_schedule(40, random.Random(0))
    assert {a: sched.count(a) for a in set(sched)} == {"SL": 10, "MW": 12, "HFE": 5, "PP": 5, "CP": 8}


@pytest.mark.parametrize("fixture", ["toycopter", "rover"])
def test_leading_window_covers_every_feature(fixture, request):
    module = request.getfixturevalue(fixture)
    missions = generate_missions(module, 40, 0)
    seen = set()
    for m in missions[:COVERAGE_WINDOW]:
        flags = {}
        for s in m.steps:
            if isinstance(s, InputStep):
                flags[s.name] = s.value
            elif isinstance(s, SetModeCmd):
                seen.add((s.mode, None))
                seen.update((s.mode, f) for f, v in flags.items() if v)
    assert set(coverage_features(module)) <= seen


def test_directory_round_trip(toycopter, tmp_path):
    missions = generate_missions(toycopter, 5, 3)
    write_missions(missions, tmp_path)
    assert load_missions(tmp_path) == missions


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=1, max_value=12))
def test_generated_missions_round_trip(seed, count):
    from modeguard.corpus import load_corpus

    module = load_corpus("toycopter")
    for m in generate_missions(module, count, seed):
        assert parse_mission(format_mission(m)) == m
