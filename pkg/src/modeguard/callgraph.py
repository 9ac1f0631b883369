"""Call graph construction and the two pruning heuristics.

Indirect edges come from the points-to sets of each call's reference
variable.  Pruning is applied in order: signature matching first, then the
address-taken filter, which keeps only targets whose address is taken in code
reachable from the firmware entry.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .ir import (
    INDIRECT_CALLS,
    VOID,
    AddrOf,
    CallDirect,
    FirmwareModule,
    InvalidModule,
    validate,
)
from .pointsto import PointsToResult, Var, pts_of


class DomainError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class CallEdge:
    caller: str
    index: int
    callee: str
    kind: str  # "direct" | "indirect"

    @property
    def site(self) -> tuple:
        return (self.caller, self.index)


@dataclass(frozen=True)
class CallGraph:
    nodes: frozenset
    edges: tuple  # sorted CallEdge tuple

    def successors(self) -> dict:
        out: dict = {n: [] for n in sorted(self.nodes)}
        for e in self.edges:
            out[e.caller].append(e.callee)
        return out

    def indirect_edges(self) -> tuple:
        return tuple(e for e in self.edges if e.kind == "indirect")

    def with_edges(self, edges) -> "CallGraph":
        return CallGraph(self.nodes, tuple(sorted(edges)))

    def to_dot(self) -> str:
        lines = ["digraph callgraph {"]
        for n in sorted(self.nodes):
            lines.append(f'  "{n}";')
        for e in self.edges:
            style = ' [style=dashed, label="' + str(e.index) + '"]' if e.kind == "indirect" else ""
            lines.append(f'  "{e.caller}" -> "{e.callee}"{style};')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_callgraph(module: FirmwareModule, pts: PointsToResult) -> CallGraph:
    diags = validate(module)
    if diags:
        raise InvalidModule(str(diags[0]), diagnostics=diags)
    edges = set()
    for fname, fn in module.functions.items():
        for idx, inst in enumerate(fn.body):
            if isinstance(inst, CallDirect):
                edges.add(CallEdge(fname, idx, inst.callee, "direct"))
            elif isinstance(inst, INDIRECT_CALLS):
                for target in pts_of(pts, Var(fname, inst.ref)):
                    edges.add(CallEdge(fname, idx, target, "indirect"))
    return CallGraph(frozenset(module.functions), tuple(sorted(edges)))


def signature_compatible(module: FirmwareModule, edge: CallEdge) -> bool:
    """Arity, exact parameter types, and non-void return when a result is bound."""
    site = module.functions[edge.caller].body[edge.index]
    callee = module.functions[edge.callee]
    declared = site.declared
    if len(callee.params) != len(declared.params):
        return False
    if tuple(t for _, t in callee.params) != tuple(declared.params):
        return False
    if site.dst is not None and callee.ret == VOID:
        return False
    return True


def prune_signature(cg: CallGraph, module: FirmwareModule) -> CallGraph:
    kept = [e for e in cg.edges if e.kind == "direct" or signature_compatible(module, e)]
    return cg.with_edges(kept)


def reachable(cg: CallGraph, roots) -> set:
    succ = cg.successors()
    seen = set()
    queue = deque(sorted(roots))
    while queue:
        n = queue.popleft()
        if n in seen:
            continue
        seen.add(n)
        queue.extend(s for s in succ.get(n, ()) if s not in seen)
    return seen


def address_taken_in(module: FirmwareModule, functions) -> set:
    return {
        inst.func
        for f in functions
        for inst in module.functions[f].body
        if isinstance(inst, AddrOf)
    }


def prune_address_taken(cg: CallGraph, module: FirmwareModule, single_pass: bool = False) -> CallGraph:
    """Drop indirect edges to functions whose address is never taken in entry-reachable code.

    Repeats until no edge is removed; ``single_pass`` stops after one round.
    """
    edges = list(cg.edges)
    while True:
        live = reachable(cg.with_edges(edges), {module.entry})
        taken = address_taken_in(module, live)
        kept = [e for e in edges if e.kind == "direct" or e.callee in taken]
        removed = len(kept) != len(edges)
        edges = kept
        if single_pass or not removed:
            break
    return cg.with_edges(edges)


def address_rounds(cg: CallGraph, module: FirmwareModule) -> int:
    """Number of rounds that removed at least one edge."""
    rounds = 0
    cur = cg
    while True:
        nxt = prune_address_taken(cur, module, single_pass=True)
        if len(nxt.edges) == len(cur.edges):
            return rounds
        rounds += 1
        cur = nxt


def precision(original_edges: int, pruned_edges: int) -> float:
    """Fraction of baseline edges removed by pruning."""
    if original_edges <= 0:
        raise DomainError("original edge count must be positive")
    if pruned_edges < 0 or pruned_edges > original_edges:
        raise DomainError("pruned edge count must lie in [0, original]")
    return (original_edges - pruned_edges) / original_edges


@dataclass(frozen=True)
class PrunedGraphs:
    original: CallGraph
    signature: CallGraph
    address: CallGraph

    def stats_line(self) -> str:
        n0, n1, n2 = len(self.original.edges), len(self.signature.edges), len(self.address.edges)
        p = precision(n0, n2) if n0 else 0.0
        return f"edges_original={n0} edges_sig={n1} edges_addr={n2} precision={round(p * 100)}%"


def analyze(module: FirmwareModule, pts: PointsToResult | None = None, single_pass: bool = False) -> PrunedGraphs:
    from .pointsto import solve_andersen

    if pts is None:
        pts = solve_andersen(module)
    cg = build_callgraph(module, pts)
    sig = prune_signature(cg, module)
    addr = prune_address_taken(sig, module, single_pass=single_pass)
    return PrunedGraphs(cg, sig, addr)
