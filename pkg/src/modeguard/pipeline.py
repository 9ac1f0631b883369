"""End-to-end pipeline: analysis, guard insertion, profiling, enforcement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .callgraph import PrunedGraphs, analyze
from .evaluation import (
    SCENARIOS,
    available_scenarios,
    fpr_fnr,
    missed_curve,
    missed_functions,
    pruned_traversals,
    run_attack,
)
from .instrument import instrument_guard, instrument_profile
from .ir import FirmwareModule, serialize_firmware
from .missions import COVERAGE_WINDOW, all_modes_mission, generate_missions, load_missions, check_mission, write_missions
from .modeanalysis import (
    FAILSAFE,
    ModeConfig,
    boot_table,
    detect_mode_entries,
    dynamic_config,
    emit_mode_config,
    failsafe_floor,
    reduction,
    static_reachable,
)
from .runtime import run_mission

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_ANALYSIS = 3
EXIT_ENFORCEMENT = 4

DEFAULT_MISSIONS = 40


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class ModeRow:
    mode: str
    dynamic: int
    static: int
    total: int

    @property
    def reduction_dynamic(self) -> float:
        return reduction(self.total, self.dynamic)

    @property
    def reduction_static(self) -> float:
        return reduction(self.total, self.static)


@dataclass
class PipelineReport:
    firmware_id: str
    edge_counts: tuple  # (original, signature, address)
    precision: float
    rows: list
    missed_curve: dict
    missed_fresh: int
    fpr_static: float | None
    fpr_dynamic: float | None
    fnr_static: float | None
    fnr_dynamic: float | None
    attacks: dict = field(default_factory=dict)  # scenario -> detected
    pruned_traversals: int = 0
    enforcement: bool = True
    warnings: tuple = ()

    def ok(self) -> bool:
        if not self.enforcement:
            return True
        return self.fpr_static == 0 and self.fpr_dynamic == 0 and all(self.attacks.values())

    def machine_lines(self) -> list:
        n0, n1, n2 = self.edge_counts
        out = [
            f"firmware={self.firmware_id}",
            f"edges_original={n0}",
            f"edges_sig={n1}",
            f"edges_addr={n2}",
            f"precision={self.precision * 100:.2f}",
            f"pruned_traversals={self.pruned_traversals}",
        ]
        for r in self.rows:
            out.append(
                f"mode={r.mode} dynamic={r.dynamic} static={r.static} total={r.total} "
                f"reduction_dynamic={r.reduction_dynamic * 100:.2f} reduction_static={r.reduction_static * 100:.2f}"
            )
        for k, v in self.missed_curve.items():
            out.append(f"missed_k{k}={v}")
        out.append(f"missed_fresh={self.missed_fresh}")
        out.append(f"enforcement={'on' if self.enforcement else 'skipped'}")
        if self.enforcement:
            out.append(f"fpr_static={self.fpr_static:.4f}")
            out.append(f"fpr_dynamic={self.fpr_dynamic:.4f}")
            out.append(f"fnr_static={self.fnr_static:.4f}")
            out.append(f"fnr_dynamic={self.fnr_dynamic:.4f}")
            for key, hit in self.attacks.items():
                out.append(f"attack_{key}={'detected' if hit else 'missed'}")
        out.append(f"status={'ok' if self.ok() else 'fail'}")
        return out

    def table(self) -> str:
        modes = [r.mode for r in self.rows]
        width = max([len(m) for m in modes] + [8]) + 2
        head = "technique".ljust(18) + "".join(m.rjust(width) for m in modes)
        lines = [head, "-" * len(head)]
        lines.append("dynamic".ljust(18) + "".join(str(r.dynamic).rjust(width) for r in self.rows))
        lines.append("static".ljust(18) + "".join(str(r.static).rjust(width) for r in self.rows))
        lines.append("all functions".ljust(18) + "".join(str(r.total).rjust(width) for r in self.rows))
        lines.append("reduction dyn".ljust(18) + "".join(f"{r.reduction_dynamic * 100:.2f}%".rjust(width) for r in self.rows))
        lines.append("reduction static".ljust(18) + "".join(f"{r.reduction_static * 100:.2f}%".rjust(width) for r in self.rows))
        return "\n".join(lines)

    def to_text(self) -> str:
        n0, n1, n2 = self.edge_counts
        human = [
            f"firmware {self.firmware_id}",
            f"call graph edges: {n0} original, {n1} after signature pruning, {n2} after address pruning "
            f"(precision {self.precision * 100:.0f}%)",
            "",
            self.table(),
            "",
        ]
        if not self.enforcement:
            human.append("enforcement skipped (permit-all)")
            human.append("")
        return "\n".join(human) + "\n" + "\n".join(self.machine_lines()) + "\n"


@dataclass
class Artifacts:
    module: FirmwareModule
    graphs: PrunedGraphs
    profiled: FirmwareModule
    guarded: FirmwareModule
    static: ModeConfig
    dynamic: ModeConfig
    entries: object
    missions: list
    profiles: list


def analyze_firmware(module: FirmwareModule, missions, firmware_id: str, always_roots=None, pattern=None) -> Artifacts:
    """Static and dynamic analysis; raises on anything that blocks enforcement."""
    if FAILSAFE not in module.mode_names:
        raise AnalysisError("firmware declares no FAILSAFE mode")
    graphs = analyze(module)
    profiled = instrument_profile(module)
    guarded = instrument_guard(module)
    trace = run_mission(profiled, all_modes_mission(module))
    entries = detect_mode_entries(module, trace, pattern)
    roots = {module.entry} if always_roots is None else set(always_roots)
    static = static_reachable(graphs.address, entries, roots, module.entry, firmware_id)
    profiles = [run_mission(profiled, m) for m in missions]
    converged = profiles[: min(COVERAGE_WINDOW, len(profiles))]
    dynamic = dynamic_config(
        converged,
        module.mode_names,
        static,
        boot_table(module, graphs),
        failsafe_floor(module, graphs, entries),
        firmware_id,
    )
    return Artifacts(module, graphs, profiled, guarded, static, dynamic, entries, list(missions), profiles)


def build_report(art: Artifacts, firmware_id: str, seed: int, enforce: bool = True, scenarios=None) -> PipelineReport:
    module = art.module
    if scenarios is None:
        scenarios = available_scenarios(module)
    total = len(module.functions)
    rows = [
        ModeRow(m, len(art.dynamic.per_mode[m]), len(art.static.per_mode[m]), total)
        for m in module.mode_names
    ]
    n = len(art.profiles)
    ks = list(range(1, n // 2 + 1))
    held = art.profiles[n // 2 :]
    curve = missed_curve(art.profiles, held, module.mode_names, ks)
    fresh = generate_missions(module, 20, seed + 1, prefix="h")
    fresh_runs = [run_mission(art.module, m) for m in fresh]
    missed_fresh = missed_functions(art.dynamic, fresh_runs)
    g = art.graphs
    report = PipelineReport(
        firmware_id,
        (len(g.original.edges), len(g.signature.edges), len(g.address.edges)),
        (len(g.original.edges) - len(g.address.edges)) / len(g.original.edges) if g.original.edges else 0.0,
        rows,
        curve,
        missed_fresh,
        None,
        None,
        None,
        None,
        # traversal sites are indices into the original bodies, so use plain runs
        pruned_traversals=len(pruned_traversals([run_mission(module, m) for m in art.missions], g.address)),
        enforcement=enforce,
        warnings=art.entries.warnings,
    )
    if enforce:
        st = fpr_fnr(art.static, art.missions, art.guarded)
        dy = fpr_fnr(art.dynamic, art.missions, art.guarded)
        report.fpr_static, report.fnr_static = st.fpr, st.fnr
        report.fpr_dynamic, report.fnr_dynamic = dy.fpr, dy.fnr
        for key in scenarios:
            res = run_attack(SCENARIOS[key], module, art.guarded, art.dynamic)
            report.attacks[key] = res.detected and res.executes_without_monitor
    return report


def cmd_pipeline(
    module: FirmwareModule,
    missions_dir,
    out_dir,
    seed: int = 0,
    firmware_id: str | None = None,
    enforce: bool = True,
    scenarios=None,
) -> PipelineReport:
    """Run every phase and write configs, instrumented IR, missions and the report."""
    firmware_id = firmware_id or module.name
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if missions_dir is not None:
        missions = load_missions(missions_dir)
    else:
        missions = generate_missions(module, DEFAULT_MISSIONS, seed)
        write_missions(missions, out / "missions")
    for m in missions:
        check_mission(m, module)
    art = analyze_firmware(module, missions, firmware_id)
    report = build_report(art, firmware_id, seed, enforce, scenarios)
    emit_mode_config(art.static, out / "static.cfg")
    emit_mode_config(art.dynamic, out / "dynamic.cfg")
    (out / "guarded.fir").write_text(serialize_firmware(art.guarded), encoding="utf-8")
    (out / "profiled.fir").write_text(serialize_firmware(art.profiled), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report
