"""Inclusion-based (Andersen) points-to analysis over firmware modules.

Field-sensitive on the statically named global records; flow-, context- and
path-insensitive.  Indirect calls are resolved on the fly: whenever the
points-to set of a call's reference variable grows, argument/parameter and
return/result copy edges are added for the new targets.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .ir import (
    INDIRECT_CALLS,
    RETURNS,
    AddrOf,
    Assign,
    CallDirect,
    FieldLoad,
    FieldStore,
    FirmwareModule,
    VOID,
    InvalidModule,
    validate,
)

RET = "$ret"  # pseudo-variable holding a function's return value


@dataclass(frozen=True, order=True)
class Loc:
    """An abstract location.

    ``kind`` is one of ``var`` (``owner`` = function, ``name`` = variable),
    ``global`` (``name`` = global), ``field`` (``owner`` = global,
    ``name`` = field) or ``func`` (``name`` = function object).
    """

    kind: str
    owner: str
    name: str

    def __str__(self) -> str:
        if self.kind == "var":
            return f"{self.owner}:{self.name}"
        if self.kind == "field":
            return f"{self.owner}.{self.name}"
        if self.kind == "func":
            return f"&{self.name}"
        return self.name


def Var(fn: str, var: str) -> Loc:
    return Loc("var", fn, var)


def Global(name: str) -> Loc:
    return Loc("global", "", name)


def Field(glob: str, field: str) -> Loc:
    return Loc("field", glob, field)


def FuncObj(fn: str) -> Loc:
    return Loc("func", "", fn)


@dataclass(frozen=True)
class PointsToResult:
    pts: dict  # Loc -> frozenset of function names
    iterations: int = 0

    def __getitem__(self, loc: Loc) -> frozenset:
        return pts_of(self, loc)

    def dump(self) -> list:
        lines = [f"{loc} -> {{{','.join(sorted(s))}}}" for loc, s in self.pts.items() if s]
        return sorted(lines)


def pts_of(result: PointsToResult, loc: Loc) -> frozenset:
    """Stored points-to set for ``loc``; empty for unknown or function-object locations."""
    if loc.kind == "func":
        return frozenset()
    return result.pts.get(loc, frozenset())


def location_count(module: FirmwareModule) -> int:
    n = 0
    for fn in module.functions.values():
        n += len(fn.params) + len(fn.locals) + 1
    for g, rname in module.globals.items():
        n += 1 + len(module.records[rname].fields)
    return n


def solve_andersen(module: FirmwareModule) -> PointsToResult:
    """Least fixpoint of the inclusion constraints, via a FIFO worklist."""
    diags = validate(module)
    if diags:
        raise InvalidModule(str(diags[0]), diagnostics=diags)

    pts: dict = {}
    succ: dict = {}  # Loc -> list of Locs it flows into (ordered, no dups)
    succ_set: dict = {}
    icalls: dict = {}  # ref Loc -> list of (caller, args, dst)
    resolved: dict = {}  # ref Loc -> set of targets already wired
    worklist: deque = deque()
    queued: set = set()

    def enqueue(loc):
        if loc not in queued:
            queued.add(loc)
            worklist.append(loc)

    def add_edge(src: Loc, dst: Loc):
        s = succ_set.setdefault(src, set())
        if dst in s:
            return
        s.add(dst)
        succ.setdefault(src, []).append(dst)
        if pts.get(src):
            if propagate(dst, pts[src]):
                enqueue(dst)

    def propagate(loc: Loc, funcs) -> bool:
        cur = pts.get(loc)
        if cur is None:
            cur = pts[loc] = set()
        before = len(cur)
        cur.update(funcs)
        return len(cur) != before

    def wire_call(caller: str, callee: str, args, dst):
        target = module.functions[callee]
        for a, p in zip(args, target.param_names):
            add_edge(Var(caller, a), Var(callee, p))
        if dst is not None and target.ret != VOID:
            add_edge(Var(callee, RET), Var(caller, dst))

    # constraint generation in program order
    for fname, fn in module.functions.items():
        for inst in fn.body:
            if isinstance(inst, AddrOf):
                if propagate(Var(fname, inst.dst), (inst.func,)):
                    enqueue(Var(fname, inst.dst))
            elif isinstance(inst, Assign):
                add_edge(Var(fname, inst.src), Var(fname, inst.dst))
            elif isinstance(inst, FieldStore):
                add_edge(Var(fname, inst.src), Field(inst.base, inst.field))
            elif isinstance(inst, FieldLoad):
                add_edge(Field(inst.base, inst.field), Var(fname, inst.dst))
            elif isinstance(inst, CallDirect):
                wire_call(fname, inst.callee, inst.args, inst.dst)
            elif isinstance(inst, INDIRECT_CALLS):
                icalls.setdefault(Var(fname, inst.ref), []).append((fname, inst.args, inst.dst))
            elif isinstance(inst, RETURNS) and inst.value is not None:
                add_edge(Var(fname, inst.value), Var(fname, RET))

    bound = location_count(module) * max(1, len(module.functions))
    iterations = 0
    while worklist:
        loc = worklist.popleft()
        queued.discard(loc)
        iterations += 1
        if iterations > bound:
            raise RuntimeError("points-to solver exceeded its iteration bound")
        cur = pts.get(loc, set())
        if loc in icalls:
            done = resolved.setdefault(loc, set())
            for callee in sorted(cur - done):
                done.add(callee)
                for caller, args, dst in icalls[loc]:
                    wire_call(caller, callee, args, dst)
        for nxt in succ.get(loc, ()):
            if propagate(nxt, cur):
                enqueue(nxt)

    frozen = {loc: frozenset(s) for loc, s in sorted(pts.items())}
    return PointsToResult(frozen, iterations)

