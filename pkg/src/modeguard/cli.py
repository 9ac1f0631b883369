"""``modeguard`` command line.

Exit codes: 0 success, 1 usage error, 2 firmware parse error, 3 analysis
error, 4 enforcement failure (a benign mission failed or an attack went
undetected).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .callgraph import DomainError, analyze
from .corpus import NAMES, load_corpus
from .evaluation import SCENARIOS, ScenarioUnavailable, run_attack
from .instrument import instrument_guard, instrument_profile
from .ir import FirmwareError, IRResolutionError, IRSyntaxError, IRTypeError, load_firmware, serialize_firmware
from .missions import COVERAGE_WINDOW, MissionError, generate_missions, load_mission, load_missions, write_missions
from .modeanalysis import (
    ModeAnalysisError,
    boot_table,
    detect_mode_entries,
    dynamic_config,
    failsafe_floor,
    format_mode_config,
    load_mode_config,
    static_reachable,
)
from .pipeline import (
    EXIT_ANALYSIS,
    EXIT_ENFORCEMENT,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_USAGE,
    AnalysisError,
    analyze_firmware,
    build_report,
    cmd_pipeline,
)
from .pointsto import solve_andersen
from .reference import check_rows, format_checks
from .runtime import (
    MONITOR_ENFORCE,
    MONITOR_OFF,
    MONITOR_PERMIT_ALL,
    ConfigMissing,
    FatalConfig,
    RuntimeFault,
    UnknownMode,
    run_mission,
)
from .missions import all_modes_mission

log = logging.getLogger("modeguard")


class UsageError(Exception):
    pass


class UnknownFirmware(UsageError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_module(spec: str):
    """A firmware file path, or the name of a bundled corpus firmware."""
    p = Path(spec)
    if p.is_file():
        return load_firmware(p)
    if spec in NAMES:
        return load_corpus(spec)
    raise UnknownFirmware(f"no firmware file or corpus entry named {spec!r}")


def emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _static_config(module, args):
    graphs = analyze(module)
    trace = run_mission(instrument_profile(module), all_modes_mission(module))
    entries = detect_mode_entries(module, trace, getattr(args, "pattern", None))
    roots = set(getattr(args, "always_root", None) or [module.entry])
    if getattr(args, "no_always_roots", False):
        roots = set()
    return graphs, entries, static_reachable(graphs.address, entries, roots, module.entry, module.name)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_pts(args) -> int:
    res = solve_andersen(load_module(args.firmware))
    emit("\n".join(res.dump()) + "\n", args.out)
    return EXIT_OK


def cmd_callgraph(args) -> int:
    module = load_module(args.firmware)
    graphs = analyze(module, single_pass=args.single_pass)
    cg = {"original": graphs.original, "signature": graphs.signature, "address": graphs.address}[args.stage]
    if args.dot:
        text = cg.to_dot()
    elif args.format == "machine":
        text = graphs.stats_line() + "\n"
    else:
        lines = [f"{e.caller}:{e.index} -> {e.callee} {e.kind}" for e in cg.edges]
        text = "\n".join(lines + [graphs.stats_line()]) + "\n"
    emit(text, args.out)
    return EXIT_OK


def cmd_reach(args) -> int:
    module = load_module(args.firmware)
    _, entries, config = _static_config(module, args)
    for w in entries.warnings:
        log.warning(w)
    emit(format_mode_config(config), args.out)
    return EXIT_OK


def cmd_instrument(args) -> int:
    module = load_module(args.firmware)
    result = instrument_profile(module) if args.pass_ == "profile" else instrument_guard(module)
    emit(serialize_firmware(result), args.out)
    return EXIT_OK


def cmd_profile(args) -> int:
    module = load_module(args.firmware)
    graphs, entries, static = _static_config(module, args)
    missions = load_missions(args.missions)
    if not missions:
        raise UsageError(f"no *.mission files in {args.missions}")
    if args.k is not None:
        missions = missions[: args.k]
    profiled = instrument_profile(module)
    runs = [run_mission(profiled, m) for m in missions]
    config = dynamic_config(
        runs, module.mode_names, static, boot_table(module, graphs), failsafe_floor(module, graphs, entries), module.name
    )
    emit(format_mode_config(config), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    module = load_module(args.firmware)
    mission = load_mission(args.mission)
    monitor = MONITOR_ENFORCE if args.enforce else MONITOR_PERMIT_ALL if args.permit_all else MONITOR_OFF
    config = load_mode_config(args.config, module) if args.config else None
    if monitor != MONITOR_OFF and not module.is_instrumented():
        module = instrument_guard(module)
    report = run_mission(module, mission, config, monitor)
    if args.format == "machine":
        text = "".join(v.line() + "\n" for v in report.violations)
        text += f"fail_safe={'true' if report.fail_safe else 'false'}\nviolations={len(report.violations)}\n"
    else:
        text = report.to_text()
    emit(text, args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    module = load_module(args.firmware)
    config = load_mode_config(args.config, module)
    res = run_attack(SCENARIOS[args.scenario], module, instrument_guard(module), config)
    lines = [
        f"scenario={res.scenario}",
        f"mode={res.mode}",
        f"target={res.target}",
        f"target_allowed={'true' if res.allowed_in_mode else 'false'}",
        f"executes_unprotected={'true' if res.executes_without_monitor else 'false'}",
    ]
    lines += [v.line() for v in res.enforced.violations]
    lines.append(f"fail_safe={'true' if res.enforced.fail_safe else 'false'}")
    lines.append(f"detected={'true' if res.detected else 'false'}")
    emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if res.detected else EXIT_ENFORCEMENT


def cmd_metrics(args) -> int:
    if args.paper:
        emit(format_checks(check_rows()), args.out)
        return EXIT_OK
    if not args.firmware:
        raise UsageError("metrics needs a firmware unless --paper is given")
    module = load_module(args.firmware)
    missions = load_missions(args.missions) if args.missions else generate_missions(module, 40, args.seed)
    art = analyze_firmware(module, missions, module.name)
    report = build_report(art, module.name, args.seed, enforce=False)
    if args.table:
        text = report.table() + "\n"
    elif args.format == "machine":
        text = "\n".join(report.machine_lines()) + "\n"
    else:
        text = report.to_text()
    emit(text, args.out)
    return EXIT_OK


def cmd_pipeline_cli(args) -> int:
    module = load_module(args.firmware)
    if not args.out:
        raise UsageError("pipeline needs --out DIR")
    report = cmd_pipeline(module, args.missions, args.out, seed=args.seed, enforce=not args.permit_all)
    sys.stdout.write(report.to_text() if args.format == "text" else "\n".join(report.machine_lines()) + "\n")
    return EXIT_OK if report.ok() else EXIT_ENFORCEMENT


def cmd_gen_missions(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    module = load_module(args.firmware)
    if not args.out:
        raise UsageError("gen-missions needs --out DIR")
    paths = write_missions(generate_missions(module, args.count, args.seed), args.out)
    sys.stdout.write(f"wrote {len(paths)} missions to {args.out}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("--format", choices=("text", "machine"), default=argparse.SUPPRESS)

    parser = _Parser(prog="modeguard", description="Mode-aware firmware debloating toolkit", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("pts", cmd_pts, "print points-to sets")
    p.add_argument("firmware")

    p = add("callgraph", cmd_callgraph, "build and prune the call graph")
    p.add_argument("firmware")
    p.add_argument("--stage", choices=("original", "signature", "address"), default="address")
    p.add_argument("--dot", action="store_true", help="emit Graphviz dot")
    p.add_argument("--single-pass", action="store_true", help="one round of address-taken pruning")

    p = add("reach", cmd_reach, "static per-mode config")
    p.add_argument("firmware")
    p.add_argument("--always-root", action="append", help="function reachable in every mode (repeatable)")
    p.add_argument("--no-always-roots", action="store_true", help="root each mode at its entries only")
    p.add_argument("--pattern", help="entry-name regex; {mode} stands for the lower-cased mode name")

    p = add("instrument", cmd_instrument, "insert profiling or guard trampolines")
    p.add_argument("firmware")
    p.add_argument("--pass", dest="pass_", choices=("profile", "guard"), default="guard")

    p = add("profile", cmd_profile, "dynamic per-mode config from profiling missions")
    p.add_argument("firmware")
    p.add_argument("--missions", required=True, help="directory of *.mission files")
    p.add_argument("--k", type=int, default=COVERAGE_WINDOW, help="number of missions to profile")
    p.add_argument("--pattern")

    p = add("run", cmd_run, "interpret one mission")
    p.add_argument("firmware")
    p.add_argument("--mission", required=True)
    p.add_argument("--config")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--enforce", action="store_true")
    g.add_argument("--permit-all", action="store_true")

    p = add("attack", cmd_attack, "run an attack scenario with and without the monitor")
    p.add_argument("firmware")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    p.add_argument("--config", required=True)

    p = add("metrics", cmd_metrics, "reduction and precision metrics")
    p.add_argument("firmware", nargs="?")
    p.add_argument("--missions")
    p.add_argument("--table", action="store_true", help="per-mode reduction table only")
    p.add_argument("--paper", action="store_true", help="recompute the published reference percentages")

    p = add("pipeline", cmd_pipeline_cli, "run every phase end to end")
    p.add_argument("firmware")
    p.add_argument("--missions", help="mission directory (default: generate 40)")
    p.add_argument("--permit-all", action="store_true", help="skip enforcement")

    p = add("gen-missions", cmd_gen_missions, "generate a seeded mission corpus")
    p.add_argument("firmware")
    p.add_argument("--count", type=int, default=40)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("seed", 0), ("out", None), ("format", "text")):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (IRSyntaxError, IRResolutionError, IRTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (UsageError, MissionError, ScenarioUnavailable, ConfigMissing, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FirmwareError, ModeAnalysisError, AnalysisError, DomainError, RuntimeFault, UnknownMode, FatalConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
