"""Deterministic interpreter with the profiler and the per-mode monitor.

The firmware entry function is one iteration of the main loop.  Mission steps
drive it: ``setmode`` raises the ``mode_pending`` input with ``mode_cmd`` set to
the mode's id and runs one iteration; ``wait N`` runs whole iterations until at
least N ticks have passed.  Every executed instruction costs one tick except
the two trampoline markers, which cost nothing, so profile-instrumented and
guard-instrumented builds tick in lockstep with the original.

The monitor keeps one access-control table per mode.  ``mcall`` targets must
be in the current table; ``mret`` out of a frame entered by ``mcall`` must land
on the site pushed to the shadow stack.  A violation aborts the running
iteration, switches to FAILSAFE through the mode switcher and ends the
mission.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    VOID,
    AddrOf,
    Assign,
    CallDirect,
    CallIndirect,
    CondGoto,
    ConstInt,
    Effect,
    Eq,
    FieldLoad,
    FieldStore,
    FirmwareModule,
    FuncRef,
    Goto,
    Input,
    InvalidModule,
    Label,
    MonitoredCall,
    MonitoredReturn,
    Return,
    SetMode,
    TrampolineLogFn,
    TrampolineModeEntry,
    validate,
)
from .missions import (
    MODE_CMD,
    MODE_PENDING,
    CorruptReturn,
    InjectHijack,
    InputStep,
    MissionScript,
    SetModeCmd,
    UnknownFunction,
    Wait,
    check_mission,
)
from .modeanalysis import BOOT_MODE, FAILSAFE, ModeConfig

MONITOR_OFF = "off"
MONITOR_PERMIT_ALL = "permit_all"
MONITOR_ENFORCE = "enforce"
MONITOR_CHOICES = (MONITOR_OFF, MONITOR_PERMIT_ALL, MONITOR_ENFORCE)

STEP_BUDGET = 200_000  # instructions per entry-loop iteration

FORBIDDEN_CALL = "ForbiddenCall"
RETURN_MISMATCH = "ReturnMismatch"


class RuntimeFault(Exception):
    """Interpreter-level fault: the IR did something the type system forbids."""


class ConfigMissing(Exception):
    pass


class UnknownMode(Exception):
    pass


class FatalConfig(Exception):
    pass


# ---------------------------------------------------------------------------
# Monitor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ViolationEvent:
    kind: str
    mode: str
    site: tuple  # (function, index)
    target: str
    tick: int

    def line(self) -> str:
        return (
            f"violation kind={self.kind} mode={self.mode} target={self.target} "
            f"site={self.site[0]}:{self.site[1]} tick={self.tick}"
        )


@dataclass
class MonitorState:
    current_mode: str
    table: frozenset
    enforcing: bool = True
    shadow_stack: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    fail_safe_triggered: bool = False
    trace: list = field(default_factory=list)  # ("push", site) | ("pop", expected, actual)


def initial_state(config: ModeConfig | None, enforcing: bool = True) -> MonitorState:
    if config is None:
        return MonitorState(BOOT_MODE, frozenset(), enforcing)
    if BOOT_MODE not in config.per_mode:
        raise FatalConfig("config has no INIT table")
    return MonitorState(BOOT_MODE, config.per_mode[BOOT_MODE], enforcing)


def monitor_mode_switch(state: MonitorState, new_mode: str, config: ModeConfig | None) -> MonitorState:
    if config is not None:
        if new_mode not in config.per_mode:
            raise UnknownMode(f"mode {new_mode} has no table in the config")
        state.table = config.per_mode[new_mode]
    state.current_mode = new_mode
    return state


def monitor_call(state: MonitorState, target: str, return_site: tuple, tick: int = 0):
    """``None`` if the call is allowed, else the ForbiddenCall event."""
    if state.enforcing and target not in state.table:
        event = ViolationEvent(FORBIDDEN_CALL, state.current_mode, return_site, target, tick)
        state.violations.append(event)
        return event
    state.shadow_stack.append(return_site)
    state.trace.append(("push", return_site))
    return None


def monitor_return(state: MonitorState, actual_site: tuple, tick: int = 0):
    """``None`` if ``actual_site`` is the saved return site, else ReturnMismatch."""
    expected = state.shadow_stack.pop() if state.shadow_stack else None
    state.trace.append(("pop", expected, actual_site))
    if expected == actual_site or not state.enforcing:
        return None
    target = f"{actual_site[0]}:{actual_site[1]}"
    event = ViolationEvent(RETURN_MISMATCH, state.current_mode, expected or ("<empty>", -1), target, tick)
    state.violations.append(event)
    return event


def fail_safe(state: MonitorState, module: FirmwareModule, config: ModeConfig | None) -> MonitorState:
    """Switch the monitor to FAILSAFE; the interpreter then runs its entry."""
    if config is None or FAILSAFE not in config.per_mode or FAILSAFE not in module.mode_names:
        raise FatalConfig("no FAILSAFE table to fall back to")
    state.fail_safe_triggered = True
    state.shadow_stack.clear()
    return monitor_mode_switch(state, FAILSAFE, config)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    mission: str
    monitor: str
    effects: list = field(default_factory=list)  # (tick, name, args)
    mode_transitions: list = field(default_factory=list)  # (tick, from, to)
    violations: list = field(default_factory=list)
    fail_safe: bool = False
    per_mode_executed: dict = field(default_factory=dict)  # mode -> set, switchers excluded
    logged: dict = field(default_factory=dict)  # mode -> set, from logfn trampolines
    entry_candidates: list = field(default_factory=list)  # (mode, callee)
    first_after_switch: list = field(default_factory=list)  # (mode, function)
    traversed: set = field(default_factory=set)  # (caller, index, callee) indirect calls
    shadow_trace: list = field(default_factory=list)
    ticks: int = 0

    def effect_names(self) -> list:
        return [name for _, name, _ in self.effects]

    def to_text(self) -> str:
        out = [f"mission {self.mission}", f"monitor {self.monitor}", f"ticks {self.ticks}"]
        for t, a, b in self.mode_transitions:
            out.append(f"mode tick={t} from={a or '-'} to={b}")
        for t, name, args in self.effects:
            out.append(f"effect tick={t} name={name} args={','.join(str(a) for a in args)}")
        for v in self.violations:
            out.append(v.line())
        for mode in sorted(self.per_mode_executed):
            out.append(f"executed mode={mode} functions={','.join(sorted(self.per_mode_executed[mode]))}")
        out.append(f"fail_safe={'true' if self.fail_safe else 'false'}")
        out.append(f"violations={len(self.violations)}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------


class _Abort(Exception):
    """Unwinds the running iteration after a violation."""


@dataclass
class _Frame:
    fn: object
    env: dict
    ret_dst: str | None
    return_site: tuple | None
    indirect: bool = False
    monitored: bool = False
    after_setmode: bool = False
    pc: int = 0


def _truthy(value) -> bool:
    return bool(value)


class Interpreter:
    def __init__(self, module: FirmwareModule, config: ModeConfig | None, monitor: str, mission: str = ""):
        if monitor not in MONITOR_CHOICES:
            raise ValueError(f"monitor must be one of {MONITOR_CHOICES}")
        if monitor == MONITOR_ENFORCE and config is None:
            raise ConfigMissing("enforcement needs a mode config")
        self.module = module
        self.config = config
        self.monitor = monitor
        self.hooks = monitor != MONITOR_OFF
        self.state = initial_state(config, monitor == MONITOR_ENFORCE) if self.hooks else None
        self.fields: dict = {}
        self.inputs: dict = {}
        self.mode = BOOT_MODE
        self.profile_mode = BOOT_MODE
        self.pending_first: str | None = None
        self.hijack: InjectHijack | None = None
        self.hijack_count = 0
        self.smash: CorruptReturn | None = None
        self.smash_count = 0
        self.in_failsafe = False
        self.halted = False
        self.report = RunReport(mission, monitor)
        self.report.mode_transitions.append((0, None, BOOT_MODE))

    # -- mission driving ---------------------------------------------------

    def run(self, mission: MissionScript) -> RunReport:
        for step in mission.steps:
            if self.halted:
                break
            if isinstance(step, SetModeCmd):
                self.inputs[MODE_CMD] = self.module.mode_id(step.mode)
                self.inputs[MODE_PENDING] = 1
                self.iterate()
                self.inputs[MODE_PENDING] = 0
            elif isinstance(step, InputStep):
                self.inputs[step.name] = step.value
            elif isinstance(step, Wait):
                start = self.report.ticks
                while not self.halted and self.report.ticks - start < step.ticks:
                    self.iterate()
            elif isinstance(step, InjectHijack):
                self.hijack, self.hijack_count = step, 0
            elif isinstance(step, CorruptReturn):
                self.smash, self.smash_count = step, 0
        return self.finish()

    def finish(self) -> RunReport:
        r = self.report
        r.per_mode_executed = {m: frozenset(s) for m, s in sorted(r.per_mode_executed.items())}
        r.logged = {m: frozenset(s) for m, s in sorted(r.logged.items())}
        if self.state is not None:
            r.violations = list(self.state.violations)
            r.shadow_trace = list(self.state.trace)
            r.fail_safe = self.state.fail_safe_triggered
        return r

    def iterate(self) -> None:
        try:
            self.call_root(self.module.entry, ())
        except _Abort:
            self.enter_failsafe()

    def enter_failsafe(self) -> None:
        if self.in_failsafe or self.state.fail_safe_triggered:
            self.halted = True
            return
        fail_safe(self.state, self.module, self.config)
        self.in_failsafe = True
        switcher = sorted(self.module.mode_switchers)[0]
        try:
            self.call_root(switcher, (self.module.mode_id(FAILSAFE),))
        except _Abort:
            pass  # a second violation halts without another fail-safe
        self.halted = True

    def violation(self) -> None:
        raise _Abort()

    # -- execution ---------------------------------------------------------

    def call_root(self, name: str, args: tuple) -> None:
        stack: list = []
        self.push(stack, name, args, None, None, strict=True)
        budget = STEP_BUDGET
        while stack:
            budget -= 1
            if budget < 0:
                raise RuntimeFault("instruction budget exhausted")
            self.step(stack)

    def push(self, stack, name, values, ret_dst, return_site, strict, indirect=False, monitored=False):
        fn = self.module.functions[name]
        if strict and len(values) != len(fn.params):
            raise RuntimeFault(f"call to {name} with {len(values)} argument(s), expected {len(fn.params)}")
        env = {}
        for i, pname in enumerate(fn.param_names):
            env[pname] = values[i] if i < len(values) else 0
        stack.append(_Frame(fn, env, ret_dst, return_site, indirect, monitored))
        mode = self.mode
        if name not in self.module.mode_switchers:
            self.report.per_mode_executed.setdefault(mode, set()).add(name)
            if self.pending_first is not None:
                self.report.first_after_switch.append((self.pending_first, name))
                self.pending_first = None

    def value(self, frame: _Frame, var: str):
        try:
            return frame.env[var]
        except KeyError:
            raise RuntimeFault(f"{frame.fn.name}: read of unset variable {var}") from None

    def resolve_indirect(self, frame: _Frame, idx: int, inst):
        """Target of an indirect call, after any armed hijack."""
        if self.hijack is not None:
            if self.hijack_count == self.hijack.at:
                target = self.hijack.target
                self.hijack = None
                if target not in self.module.functions:
                    raise UnknownFunction(target)
                return target, True
            self.hijack_count += 1
        target = self.value(frame, inst.ref)
        if not isinstance(target, str) or target not in self.module.functions:
            raise RuntimeFault(f"{frame.fn.name}:{idx}: indirect call through non-function value {target!r}")
        callee = self.module.functions[target]
        if callee.signature.params != inst.declared.params or (inst.dst is not None and callee.ret == VOID):
            raise RuntimeFault(f"{frame.fn.name}:{idx}: {target} does not match the call signature")
        return target, False

    def step(self, stack: list) -> None:
        frame = stack[-1]
        body = frame.fn.body
        if frame.pc >= len(body):
            raise RuntimeFault(f"{frame.fn.name} fell off its end")
        idx = frame.pc
        inst = body[idx]
        frame.pc += 1
        r = self.report
        if not isinstance(inst, (TrampolineModeEntry, TrampolineLogFn)):
            r.ticks += 1

        if isinstance(inst, Assign):
            frame.env[inst.dst] = self.value(frame, inst.src)
        elif isinstance(inst, ConstInt):
            frame.env[inst.dst] = inst.value
        elif isinstance(inst, Eq):
            frame.env[inst.dst] = self.value(frame, inst.lhs) == self.value(frame, inst.rhs)
        elif isinstance(inst, Input):
            frame.env[inst.dst] = self.inputs.get(inst.name, 0)
        elif isinstance(inst, AddrOf):
            frame.env[inst.dst] = inst.func
        elif isinstance(inst, FieldStore):
            self.fields[(inst.base, inst.field)] = self.value(frame, inst.src)
        elif isinstance(inst, FieldLoad):
            default = None if isinstance(self.module.global_field_type(inst.base, inst.field), FuncRef) else 0
            frame.env[inst.dst] = self.fields.get((inst.base, inst.field), default)
        elif isinstance(inst, Label):
            pass
        elif isinstance(inst, Goto):
            frame.pc = self.label_index(frame, inst.label)
        elif isinstance(inst, CondGoto):
            if _truthy(self.value(frame, inst.cond)):
                frame.pc = self.label_index(frame, inst.label)
        elif isinstance(inst, Effect):
            r.effects.append((r.ticks, inst.name, tuple(self.value(frame, a) for a in inst.args)))
        elif isinstance(inst, SetMode):
            mid = self.value(frame, inst.mode_var)
            new = self.module.mode_ids.get(mid) if isinstance(mid, int) else None
            if new is None:
                raise RuntimeFault(f"setmode with unknown mode id {mid!r}")
            r.mode_transitions.append((r.ticks, self.mode, new))
            self.mode = new
            self.pending_first = new
            frame.after_setmode = True
        elif isinstance(inst, TrampolineModeEntry):
            new = self.module.mode_ids.get(self.value(frame, inst.new_mode_var))
            self.profile_mode = new
            if self.hooks:
                monitor_mode_switch(self.state, new, self.config)
        elif isinstance(inst, TrampolineLogFn):
            r.logged.setdefault(self.profile_mode, set()).add(inst.func)
        elif isinstance(inst, CallDirect):
            if frame.after_setmode and frame.fn.name in self.module.mode_switchers:
                r.entry_candidates.append((self.mode, inst.callee))
            values = tuple(self.value(frame, a) for a in inst.args)
            self.push(stack, inst.callee, values, inst.dst, (frame.fn.name, idx), strict=True)
        elif isinstance(inst, (CallIndirect, MonitoredCall)):
            target, hijacked = self.resolve_indirect(frame, idx, inst)
            site = (frame.fn.name, idx)
            monitored = False
            if isinstance(inst, MonitoredCall) and self.hooks:
                if monitor_call(self.state, target, site, r.ticks) is not None:
                    self.violation()
                monitored = True
            if not hijacked:
                r.traversed.add((frame.fn.name, idx, target))
            values = tuple(self.value(frame, a) for a in inst.args)
            self.push(stack, target, values, inst.dst, site, strict=not hijacked, indirect=True, monitored=monitored)
        elif isinstance(inst, (Return, MonitoredReturn)):
            self.do_return(stack, frame, inst)
        else:
            raise RuntimeFault(f"unknown instruction {inst!r}")

    def do_return(self, stack: list, frame: _Frame, inst) -> None:
        value = self.value(frame, inst.value) if inst.value is not None else None
        stack.pop()
        actual = frame.return_site
        smashed = None
        if frame.indirect and self.smash is not None:
            if self.smash_count == self.smash.at:
                smashed = self.smash.target
                actual = (smashed, 0)
                self.smash = None
            else:
                self.smash_count += 1
        if frame.monitored:
            if isinstance(inst, MonitoredReturn):
                if monitor_return(self.state, actual, self.report.ticks) is not None:
                    self.violation()
            elif self.state.shadow_stack:
                self.state.shadow_stack.pop()  # unchecked return out of a monitored frame
        if stack:
            caller = stack[-1]
            if frame.ret_dst is not None:
                if value is None:
                    value = 0
                caller.env[frame.ret_dst] = value
        if smashed is not None:
            # control lands in the corrupted target, which then returns to the caller
            self.push(stack, smashed, (), None, frame.return_site, strict=False)

    def label_index(self, frame: _Frame, label: str) -> int:
        for i, inst in enumerate(frame.fn.body):
            if isinstance(inst, Label) and inst.name == label:
                return i + 1
        raise RuntimeFault(f"{frame.fn.name}: unknown label {label}")


def run_mission(
    module: FirmwareModule,
    mission: MissionScript,
    config: ModeConfig | None = None,
    monitor: str = MONITOR_OFF,
) -> RunReport:
    """Interpret ``mission`` on ``module`` and return the run report."""
    diags = validate(module)
    if diags:
        raise InvalidModule(str(diags[0]), diagnostics=diags)
    check_mission(mission, module)
    return Interpreter(module, config, monitor, mission.name).run(mission)
