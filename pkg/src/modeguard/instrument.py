"""Static instrumentation passes: profiling and guard insertion.

Both passes put a mode-entry trampoline immediately after every ``setmode``
in a mode-switching function, i.e. on each path where the mode change has
succeeded.  Profiling then adds a ``logfn`` trampoline at the top of every
other function; guard insertion instead rewrites every indirect call into
``mcall`` and every return into ``mret`` so the monitor sees them.
"""

from __future__ import annotations

from dataclasses import replace

from .ir import (
    MARKER_KINDS,
    CallIndirect,
    FirmwareError,
    FirmwareModule,
    InvalidModule,
    MonitoredCall,
    MonitoredReturn,
    Return,
    SetMode,
    TrampolineLogFn,
    TrampolineModeEntry,
    validate,
)


class AlreadyInstrumented(FirmwareError):
    kind = "AlreadyInstrumented"


class NoSwitcher(FirmwareError):
    kind = "NoSwitcher"


def _check(module: FirmwareModule) -> None:
    diags = validate(module)
    if diags:
        raise InvalidModule(str(diags[0]), diagnostics=diags)
    if module.is_instrumented():
        raise AlreadyInstrumented("module already contains instrumentation markers")
    if not module.mode_switchers:
        raise NoSwitcher("module declares no mode-switching function")


def _switcher_body(body: tuple) -> tuple:
    out = []
    for inst in body:
        out.append(inst)
        if isinstance(inst, SetMode):
            out.append(TrampolineModeEntry(inst.mode_var))
    return tuple(out)


def _rewrite(module: FirmwareModule, other) -> FirmwareModule:
    functions = {}
    for name, fn in module.functions.items():
        if name in module.mode_switchers:
            body = _switcher_body(fn.body)
        else:
            body = other(fn)
        functions[name] = replace(fn, body=body)
    return replace(module, functions=functions)


def instrument_profile(module: FirmwareModule) -> FirmwareModule:
    _check(module)
    # no local declarations in this IR, so the first executable slot is index 0
    return _rewrite(module, lambda fn: (TrampolineLogFn(fn.name), *fn.body))


def _guard_body(fn) -> tuple:
    out = []
    for inst in fn.body:
        if isinstance(inst, CallIndirect):
            out.append(MonitoredCall(inst.ref, inst.args, inst.dst, inst.declared))
        elif isinstance(inst, Return):
            out.append(MonitoredReturn(inst.value))
        else:
            out.append(inst)
    return tuple(out)


def instrument_guard(module: FirmwareModule) -> FirmwareModule:
    _check(module)
    result = _rewrite(module, _guard_body)
    left = unguarded_transfers(result)
    if left:
        raise InvalidModule(f"unguarded indirect transfers remain: {left}")
    return result


def unguarded_transfers(module: FirmwareModule) -> list:
    """``(function, index)`` of raw indirect calls/returns in non-switcher functions."""
    found = []
    for name, fn in module.functions.items():
        if name in module.mode_switchers:
            continue
        for idx, inst in enumerate(fn.body):
            if isinstance(inst, (CallIndirect, Return)):
                found.append((name, idx))
    return found


def marker_counts(module: FirmwareModule) -> dict:
    counts = {k.__name__: 0 for k in MARKER_KINDS}
    for fn in module.functions.values():
        for inst in fn.body:
            if isinstance(inst, MARKER_KINDS):
                counts[type(inst).__name__] += 1
    return counts
