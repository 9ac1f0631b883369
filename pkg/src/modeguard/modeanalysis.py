"""Per-mode required-function sets and the mode configuration file.

A :class:`ModeConfig` maps every mode to the set of functions allowed while
the vehicle is in that mode.  Static configs come from call-graph reachability
rooted at each mode's entry functions; dynamic configs are the union of
profiled executions.  Both carry a table for the boot mode ``INIT``, which is
the static reachable set of the firmware entry.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .callgraph import CallGraph, DomainError, PrunedGraphs, analyze, reachable
from .ir import CallDirect, FirmwareModule, SetMode

log = logging.getLogger(__name__)

BOOT_MODE = "INIT"
FAILSAFE = "FAILSAFE"


class ModeAnalysisError(Exception):
    pass


class MissingMode(ModeAnalysisError):
    pass


class NoEntryFound(ModeAnalysisError):
    pass


class UnknownRoot(ModeAnalysisError):
    pass


class UnknownFunction(ModeAnalysisError):
    pass


class FileFormatError(ModeAnalysisError):
    pass


class ConfigInvariantError(ModeAnalysisError):
    pass


# ---------------------------------------------------------------------------
# Mode entries
# ---------------------------------------------------------------------------


def name_matches(mode: str, function: str, pattern: str | None = None) -> bool:
    """Mode-name check for an entry candidate.

    Default: the lower-cased mode name is a substring of the lower-cased
    function name.  ``pattern`` is a regex with ``{mode}`` standing for the
    lower-cased mode name.
    """
    if pattern is None:
        return mode.lower() in function.lower()
    return re.search(pattern.replace("{mode}", re.escape(mode.lower())), function.lower()) is not None


@dataclass(frozen=True)
class ModeEntryMap:
    entries: dict  # mode -> frozenset of function names
    warnings: tuple = ()

    def __getitem__(self, mode: str) -> frozenset:
        return self.entries[mode]


def detect_mode_entries(module: FirmwareModule, trace, pattern: str | None = None) -> ModeEntryMap:
    """Entry functions per mode from a run that visited every mode.

    Candidates are the functions a mode-switcher calls directly after its
    successful ``setmode``; each must pass :func:`name_matches`.
    """
    candidates: dict = {}
    for mode, callee in trace.entry_candidates:
        candidates.setdefault(mode, [])
        if callee not in candidates[mode]:
            candidates[mode].append(callee)
    entries = {}
    warnings = []
    for mode in module.mode_names:
        if mode not in candidates:
            raise MissingMode(f"mode {mode} was never entered in the trace")
        ok = set()
        for fn in candidates[mode]:
            if name_matches(mode, fn, pattern):
                ok.add(fn)
            else:
                msg = f"entry candidate {fn} rejected for mode {mode}: name does not match"
                log.warning(msg)
                warnings.append(msg)
        if not ok:
            raise NoEntryFound(f"no entry function for mode {mode}")
        entries[mode] = frozenset(ok)
    return ModeEntryMap(entries, tuple(warnings))


def static_entry_candidates(module: FirmwareModule, pattern: str | None = None) -> dict:
    """Name-matching direct callees that follow a ``setmode`` in a switcher body.

    A purely syntactic approximation of :func:`detect_mode_entries`, used where
    no trace is at hand (config loading).
    """
    found: dict = {m: set() for m in module.mode_names}
    for s in sorted(module.mode_switchers):
        after_set = False
        for inst in module.functions[s].body:
            if isinstance(inst, SetMode):
                after_set = True
            elif isinstance(inst, CallDirect) and after_set:
                for m in module.mode_names:
                    if name_matches(m, inst.callee, pattern):
                        found[m].add(inst.callee)
    return {m: frozenset(v) for m, v in found.items()}


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeConfig:
    provenance: str  # "static" | "dynamic"
    per_mode: dict  # mode -> frozenset
    firmware_id: str
    fallback: frozenset = field(default_factory=frozenset)  # modes filled from static analysis

    def allowed(self, mode: str) -> frozenset:
        return self.per_mode[mode]

    def modes(self) -> list:
        return list(self.per_mode)


def _ordered(per_mode: dict, mode_names) -> dict:
    order = [BOOT_MODE, *mode_names]
    out = {m: frozenset(per_mode[m]) for m in order if m in per_mode}
    for m in sorted(per_mode):
        if m not in out:
            out[m] = frozenset(per_mode[m])
    return out


def static_reachable(
    cg: CallGraph,
    entries: ModeEntryMap,
    always_roots=frozenset(),
    boot_root: str | None = None,
    firmware_id: str = "",
) -> ModeConfig:
    """Reachable functions from each mode's entries plus the always-on roots."""
    for r in always_roots:
        if r not in cg.nodes:
            raise UnknownRoot(f"unknown root function {r!r}")
    shared = reachable(cg, always_roots)
    per_mode = {}
    if boot_root is not None:
        if boot_root not in cg.nodes:
            raise UnknownRoot(f"unknown boot root {boot_root!r}")
        per_mode[BOOT_MODE] = frozenset(reachable(cg, {boot_root}))
    for mode, roots in entries.entries.items():
        per_mode[mode] = frozenset(reachable(cg, roots) | shared)
    return ModeConfig("static", _ordered(per_mode, list(entries.entries)), firmware_id)


def failsafe_floor(module: FirmwareModule, graphs: PrunedGraphs | None = None, entries: ModeEntryMap | None = None) -> frozenset:
    """Static reachable set of the FAILSAFE entry function(s)."""
    if FAILSAFE not in module.mode_names:
        return frozenset()
    graphs = graphs or analyze(module)
    roots = entries.entries[FAILSAFE] if entries else static_entry_candidates(module)[FAILSAFE]
    return frozenset(reachable(graphs.address, roots))


def boot_table(module: FirmwareModule, graphs: PrunedGraphs | None = None) -> frozenset:
    graphs = graphs or analyze(module)
    return frozenset(reachable(graphs.address, {module.entry}))


def dynamic_config(
    profiles,
    mode_names,
    static: ModeConfig | None = None,
    boot: frozenset | None = None,
    floor: frozenset = frozenset(),
    firmware_id: str = "",
) -> ModeConfig:
    """Union of functions logged per mode over ``profiles``.

    ``profiles`` are per-mode executed-function maps (or run reports).  Modes
    never seen fall back to the static set when one is given.  The FAILSAFE
    set always includes ``floor`` so the fail-safe stays executable.
    """
    seen: dict = {m: set() for m in mode_names}
    for prof in profiles:
        per = getattr(prof, "per_mode_executed", prof)
        for mode, funcs in per.items():
            if mode in seen:
                seen[mode].update(funcs)
    per_mode = {}
    fallback = set()
    for mode in mode_names:
        funcs = set(seen[mode])
        if not funcs:
            if static is not None and mode in static.per_mode:
                funcs = set(static.per_mode[mode])
                fallback.add(mode)
                log.warning("mode %s never profiled; using its static set", mode)
            else:
                log.warning("mode %s never profiled; its allowed set is empty", mode)
        if mode == FAILSAFE:
            funcs |= set(floor)
        per_mode[mode] = frozenset(funcs)
    if boot is not None:
        per_mode[BOOT_MODE] = frozenset(boot)
    return ModeConfig("dynamic", _ordered(per_mode, mode_names), firmware_id, frozenset(fallback))


def reduction(total_functions: int, allowed: int) -> float:
    """Fraction of all firmware functions excluded from a mode's allowed set."""
    if total_functions <= 0:
        raise DomainError("total function count must be positive")
    if allowed < 0 or allowed > total_functions:
        raise DomainError("allowed count must lie in [0, total]")
    return (total_functions - allowed) / total_functions


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------


def format_mode_config(config: ModeConfig) -> str:
    out = [f"firmware {config.firmware_id}", f"provenance {config.provenance}", ""]
    for mode, funcs in config.per_mode.items():
        out.append(f"mode {mode} fallback" if mode in config.fallback else f"mode {mode}")
        out.extend(sorted(funcs))
        out.append("")
    return "\n".join(out)


def emit_mode_config(config: ModeConfig, path) -> None:
    Path(path).write_text(format_mode_config(config), encoding="utf-8")


def parse_mode_config(text: str, module: FirmwareModule | None = None, floor: frozenset | None = None) -> ModeConfig:
    firmware_id = None
    provenance = None
    per_mode: dict = {}
    fallback = set()
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            current = None
            continue
        words = line.split()
        if words[0] == "firmware" and len(words) == 2 and firmware_id is None:
            firmware_id = words[1]
        elif words[0] == "provenance" and len(words) == 2 and provenance is None:
            if words[1] not in ("static", "dynamic"):
                raise FileFormatError(f"line {lineno}: provenance must be static or dynamic")
            provenance = words[1]
        elif words[0] == "mode" and len(words) in (2, 3):
            if len(words) == 3 and words[2] != "fallback":
                raise FileFormatError(f"line {lineno}: unknown mode mark {words[2]!r}")
            current = words[1]
            if current in per_mode:
                raise FileFormatError(f"line {lineno}: duplicate mode {current}")
            per_mode[current] = set()
            if len(words) == 3:
                fallback.add(current)
        elif len(words) == 1 and current is not None:
            per_mode[current].add(words[0])
        else:
            raise FileFormatError(f"line {lineno}: unexpected {line!r}")
    if firmware_id is None or provenance is None:
        raise FileFormatError("missing firmware or provenance header")
    mode_order = list(module.mode_names) if module else [m for m in per_mode if m != BOOT_MODE]
    config = ModeConfig(provenance, _ordered(per_mode, mode_order), firmware_id, frozenset(fallback))
    if module is not None:
        check_config(config, module, floor)
    return config


def load_mode_config(path, module: FirmwareModule | None = None, floor: frozenset | None = None) -> ModeConfig:
    return parse_mode_config(Path(path).read_text(encoding="utf-8"), module, floor)


def check_config(config: ModeConfig, module: FirmwareModule, floor: frozenset | None = None) -> None:
    """Raise if ``config`` violates an invariant with respect to ``module``."""
    for mode in module.mode_names:
        if mode not in config.per_mode:
            raise MissingMode(f"config has no table for mode {mode}")
    for mode in config.per_mode:
        if mode != BOOT_MODE and mode not in module.mode_names:
            raise MissingMode(f"config names unknown mode {mode}")
    for mode, funcs in config.per_mode.items():
        missing = sorted(f for f in funcs if f not in module.functions)
        if missing:
            raise UnknownFunction(f"mode {mode} allows unknown function(s) {', '.join(missing)}")
    if FAILSAFE in module.mode_names:
        floor = failsafe_floor(module) if floor is None else floor
        lacking = sorted(floor - config.per_mode[FAILSAFE])
        if lacking:
            raise ConfigInvariantError(f"FAILSAFE table lacks its entry's reachable functions: {', '.join(lacking)}")
