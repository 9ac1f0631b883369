"""Evaluation metrics and attack scenarios over mission corpora."""

from __future__ import annotations

from dataclasses import dataclass

from .callgraph import CallGraph
from .ir import CallDirect, Effect, FirmwareModule
from .missions import InjectHijack, MissionScript, SetModeCmd, Wait
from .modeanalysis import BOOT_MODE, ModeConfig
from .runtime import FORBIDDEN_CALL, MONITOR_ENFORCE, MONITOR_OFF, RunReport, run_mission


def executed_pairs(reports) -> set:
    """(mode, function) pairs run in the given reports, boot mode excluded."""
    pairs = set()
    for r in reports:
        for mode, funcs in r.per_mode_executed.items():
            if mode != BOOT_MODE:
                pairs.update((mode, f) for f in funcs)
    return pairs


def missed_functions(config: ModeConfig, held_out) -> int:
    """Pairs executed in ``held_out`` that ``config`` does not allow."""
    return sum(1 for mode, f in executed_pairs(held_out) if f not in config.per_mode.get(mode, ()))


def missed_curve(profiles, held_out, mode_names, ks) -> dict:
    """``k -> missed_functions`` with the config profiled from the first k runs.

    Unprofiled modes stay empty here (no static fallback), so the curve only
    reflects what profiling has observed.
    """
    curve = {}
    for k in ks:
        per_mode = {m: set() for m in mode_names}
        for r in profiles[:k]:
            for m, funcs in r.per_mode_executed.items():
                if m in per_mode:
                    per_mode[m].update(funcs)
        config = ModeConfig("dynamic", {m: frozenset(v) for m, v in per_mode.items()}, "")
        curve[k] = missed_functions(config, held_out)
    return curve


def allowed_pairs(config: ModeConfig) -> set:
    return {(m, f) for m, funcs in config.per_mode.items() if m != BOOT_MODE for f in funcs}


@dataclass(frozen=True)
class EnforcementResult:
    fpr: float
    fnr: float
    fail_safes: int
    missions: int
    reports: tuple


def fpr_fnr(config: ModeConfig, missions, module: FirmwareModule) -> EnforcementResult:
    """Enforce ``config`` on benign ``missions``.

    FPR is the fraction of missions ending in fail-safe.  FNR is the fraction
    of allowed (mode, function) pairs never executed in that mode.
    ``module`` must be guard-instrumented for the monitor to see anything.
    """
    reports = tuple(run_mission(module, m, config, MONITOR_ENFORCE) for m in missions)
    fails = sum(1 for r in reports if r.fail_safe)
    allowed = allowed_pairs(config)
    unused = allowed - executed_pairs(reports)
    fpr = fails / len(reports) if reports else 0.0
    fnr = len(unused) / len(allowed) if allowed else 0.0
    return EnforcementResult(fpr, fnr, fails, len(reports), reports)


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    key: str
    target: str
    modes: tuple  # preferred modes, first one present is used
    description: str


SCENARIOS = {
    "a1": Scenario("a1", "disarm_motors", ("GUIDED",), "disarm the motors mid-flight"),
    "a2": Scenario("a2", "output_min", ("GUIDED",), "cut motor output to minimum"),
    "a3": Scenario("a3", "disarm", ("MANUAL", "GUIDED"), "disarm the vehicle while driven"),
}


class ScenarioUnavailable(ValueError):
    pass


def available_scenarios(module: FirmwareModule) -> tuple:
    return tuple(
        k for k, s in SCENARIOS.items()
        if s.target in module.functions and any(m in module.mode_names for m in s.modes)
    )


def scenario_mode(scenario: Scenario, module: FirmwareModule) -> str:
    for m in scenario.modes:
        if m in module.mode_names:
            return m
    raise ScenarioUnavailable(f"{scenario.key}: firmware has none of the modes {scenario.modes}")


def attack_mission(scenario: Scenario, module: FirmwareModule, wait: int = 80) -> MissionScript:
    if scenario.target not in module.functions:
        raise ScenarioUnavailable(f"{scenario.key}: firmware has no function {scenario.target}")
    mode = scenario_mode(scenario, module)
    steps = (SetModeCmd(mode), Wait(wait), InjectHijack(scenario.target, 0), Wait(wait))
    return MissionScript(f"attack_{scenario.key}", steps, "")


def forbidden_effects(module: FirmwareModule, function: str) -> frozenset:
    """Effects emitted by ``function`` and everything it calls directly."""
    seen, todo, effects = set(), [function], set()
    while todo:
        f = todo.pop()
        if f in seen:
            continue
        seen.add(f)
        for inst in module.functions[f].body:
            if isinstance(inst, Effect):
                effects.add(inst.name)
            elif isinstance(inst, CallDirect):
                todo.append(inst.callee)
    return frozenset(effects)


@dataclass(frozen=True)
class AttackResult:
    scenario: str
    mode: str
    target: str
    forbidden: frozenset
    allowed_in_mode: bool
    unprotected: RunReport
    enforced: RunReport

    @property
    def executes_without_monitor(self) -> bool:
        return any(name in self.forbidden for name in self.unprotected.effect_names())

    @property
    def detected(self) -> bool:
        r = self.enforced
        forbidden_calls = [v for v in r.violations if v.kind == FORBIDDEN_CALL]
        return (
            len(r.violations) == 1
            and len(forbidden_calls) == 1
            and r.fail_safe
            and not any(name in self.forbidden for name in r.effect_names())
        )


def run_attack(scenario: Scenario, module: FirmwareModule, guarded: FirmwareModule, config: ModeConfig) -> AttackResult:
    mission = attack_mission(scenario, module)
    mode = scenario_mode(scenario, module)
    plain = run_mission(module, mission, None, MONITOR_OFF)
    enforced = run_mission(guarded, mission, config, MONITOR_ENFORCE)
    return AttackResult(
        scenario.key,
        mode,
        scenario.target,
        forbidden_effects(module, scenario.target),
        scenario.target in config.per_mode.get(mode, ()),
        plain,
        enforced,
    )


def pruned_traversals(reports, pruned: CallGraph) -> set:
    """Indirect calls seen at runtime that ``pruned`` does not contain."""
    kept = {(e.caller, e.index, e.callee) for e in pruned.indirect_edges()}
    seen = set()
    for r in reports:
        seen |= r.traversed
    return seen - kept
