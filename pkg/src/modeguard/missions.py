"""Mission scripts: file format, validation and seeded corpus generation.

A mission file is line based::

    mission NAME
    setmode GUIDED
    input target 3
    wait 120
    hijack disarm_motors at 0
    smash disarm_motors at 0

``hijack`` retargets the N-th indirect call after it is armed; ``smash``
corrupts the return site of the N-th return out of an indirectly entered
function.  Both model a memory-corruption bug without simulating memory.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .ir import FirmwareModule, input_names

# inputs written by the interpreter itself when a setmode step runs
MODE_PENDING = "mode_pending"
MODE_CMD = "mode_cmd"
RESERVED_INPUTS = frozenset({MODE_PENDING, MODE_CMD})


class MissionError(ValueError):
    pass


class UnknownFunction(MissionError):
    pass


@dataclass(frozen=True)
class SetModeCmd:
    mode: str


@dataclass(frozen=True)
class InputStep:
    name: str
    value: int


@dataclass(frozen=True)
class InjectHijack:
    target: str
    at: int


@dataclass(frozen=True)
class CorruptReturn:
    target: str
    at: int


@dataclass(frozen=True)
class Wait:
    ticks: int


@dataclass(frozen=True)
class MissionScript:
    name: str
    steps: tuple
    archetype: str = ""

    def is_benign(self) -> bool:
        return not any(isinstance(s, (InjectHijack, CorruptReturn)) for s in self.steps)


def parse_mission(text: str) -> MissionScript:
    name = None
    archetype = ""
    steps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("# archetype "):
            archetype = line.split()[2]
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            if words[0] == "mission" and len(words) == 2:
                if name is not None:
                    raise MissionError("duplicate mission header")
                name = words[1]
            elif words[0] == "setmode" and len(words) == 2:
                steps.append(SetModeCmd(words[1]))
            elif words[0] == "input" and len(words) == 3:
                steps.append(InputStep(words[1], int(words[2])))
            elif words[0] == "wait" and len(words) == 2:
                steps.append(Wait(int(words[1])))
            elif words[0] in ("hijack", "smash") and len(words) == 4 and words[2] == "at":
                cls = InjectHijack if words[0] == "hijack" else CorruptReturn
                steps.append(cls(words[1], int(words[3])))
            else:
                raise MissionError(f"malformed step {line!r}")
        except ValueError as exc:
            raise MissionError(f"line {lineno}: {exc}") from None
    if name is None:
        raise MissionError("missing 'mission NAME' header")
    mission = MissionScript(name, tuple(steps), archetype)
    for s in mission.steps:
        if isinstance(s, (InjectHijack, CorruptReturn)) and s.at < 0:
            raise MissionError("call index must be non-negative")
        if isinstance(s, Wait) and s.ticks < 0:
            raise MissionError("wait must be non-negative")
    return mission


def format_mission(mission: MissionScript) -> str:
    out = [f"mission {mission.name}"]
    if mission.archetype:
        out.append(f"# archetype {mission.archetype}")
    for s in mission.steps:
        if isinstance(s, SetModeCmd):
            out.append(f"setmode {s.mode}")
        elif isinstance(s, InputStep):
            out.append(f"input {s.name} {s.value}")
        elif isinstance(s, Wait):
            out.append(f"wait {s.ticks}")
        elif isinstance(s, InjectHijack):
            out.append(f"hijack {s.target} at {s.at}")
        elif isinstance(s, CorruptReturn):
            out.append(f"smash {s.target} at {s.at}")
    return "\n".join(out) + "\n"


def check_mission(mission: MissionScript, module: FirmwareModule) -> None:
    for s in mission.steps:
        if isinstance(s, SetModeCmd) and s.mode not in module.mode_names:
            raise MissionError(f"mission {mission.name}: unknown mode {s.mode!r}")
        if isinstance(s, (InjectHijack, CorruptReturn)) and s.target not in module.functions:
            raise UnknownFunction(f"mission {mission.name}: unknown function {s.target!r}")
        if isinstance(s, InputStep) and s.name in RESERVED_INPUTS:
            raise MissionError(f"mission {mission.name}: input {s.name!r} is reserved")


def load_mission(path) -> MissionScript:
    return parse_mission(Path(path).read_text(encoding="utf-8"))


def load_missions(directory) -> list:
    paths = sorted(Path(directory).glob("*.mission"))
    return [load_mission(p) for p in paths]


def write_missions(missions, directory) -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in missions:
        p = d / f"{m.name}.mission"
        p.write_text(format_mission(m), encoding="utf-8")
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

# Mission mix of the evaluation: straight line, multiple waypoints, hover at
# fixed elevation, polygonal path, circular path.
ARCHETYPES = (("SL", 10), ("MW", 12), ("HFE", 5), ("PP", 5), ("CP", 8))

# each slot lists preferred mode names; the first one the firmware has is used
TEMPLATES = {
    "SL": (("GUIDED", "MANUAL"), ("LAND", "HOLD", "RTL")),
    "MW": (("AUTO",), ("RTL",), ("LAND", "HOLD")),
    "HFE": (("LOITER", "HOLD"), ("LAND", "RTL")),
    "PP": (("GUIDED", "MANUAL"), ("AUTO",), ("RTL",)),
    "CP": (("AUTO",), ("LOITER", "CIRCLE", "HOLD"), ("RTL",)),
}

COVERAGE_WINDOW = 10  # every (mode, input) pair appears within this many leading missions
FLAG_PROBABILITY = 0.25


def archetype_schedule(count: int, rng: random.Random) -> list:
    total = sum(n for _, n in ARCHETYPES)
    quotas = [(name, n * count / total) for name, n in ARCHETYPES]
    counts = {name: int(q) for name, q in quotas}
    rest = count - sum(counts.values())
    by_fraction = sorted(quotas, key=lambda q: (-(q[1] - int(q[1])), q[0]))
    for name, _ in by_fraction[:rest]:
        counts[name] += 1
    sched = [name for name, _ in ARCHETYPES for _ in range(counts[name])]
    rng.shuffle(sched)
    return sched


def _pick_mode(prefs, modes, rng) -> str:
    for p in prefs:
        if p in modes:
            return p
    return rng.choice(modes)


def mission_flags(module: FirmwareModule) -> list:
    return [n for n in input_names(module) if n not in RESERVED_INPUTS]


def coverage_features(module: FirmwareModule) -> list:
    flags = mission_flags(module) or [None]
    return [(m, f) for m in module.mode_names for f in flags]


def generate_missions(module: FirmwareModule, count: int, seed: int, prefix: str = "m") -> list:
    """Deterministic benign mission corpus for ``module``.

    Missions follow the five path archetypes.  Every (mode, input) feature is
    exercised by at least one of the first ``COVERAGE_WINDOW`` missions, so a
    profile built from those missions covers everything later missions run.
    """
    if count < 1:
        raise MissionError("mission count must be at least 1")
    rng = random.Random(seed)
    flags = mission_flags(module)
    cruise = [m for m in module.mode_names if m != "FAILSAFE"] or list(module.mode_names)
    features = coverage_features(module)
    rng.shuffle(features)
    window = min(COVERAGE_WINDOW, count)
    assigned = {i: [] for i in range(window)}
    for j, feat in enumerate(features):
        assigned[j % window].append(feat)

    missions = []
    for i, arch in enumerate(archetype_schedule(count, rng)):
        segments = []
        for prefs in TEMPLATES[arch]:
            mode = _pick_mode(prefs, cruise, rng)
            on = {f for f in flags if rng.random() < FLAG_PROBABILITY}
            segments.append((mode, on))
        extra: dict = {}
        for mode, flag in assigned.get(i, ()):
            extra.setdefault(mode, set())
            if flag is not None:
                extra[mode].add(flag)
        for mode in sorted(extra):
            segments.insert(rng.randrange(len(segments) + 1), (mode, extra[mode]))
        steps = []
        current = {f: 0 for f in flags}
        for mode, on in segments:
            for f in flags:
                want = rng.randint(1, 5) if f in on else 0
                if want != current[f]:
                    steps.append(InputStep(f, want))
                    current[f] = want
            steps.append(SetModeCmd(mode))
            steps.append(Wait(rng.randint(2, 6) * 40))
        missions.append(MissionScript(f"{prefix}{i:03d}", tuple(steps), arch))
    return missions


def all_modes_mission(module: FirmwareModule, wait: int = 80) -> MissionScript:
    """Visits every mode once, in declaration order."""
    steps = []
    for m in module.mode_names:
        steps.append(SetModeCmd(m))
        steps.append(Wait(wait))
    return MissionScript("all_modes", tuple(steps), "")
