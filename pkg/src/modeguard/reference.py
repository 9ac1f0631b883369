"""Published full-scale measurements used as arithmetic fixtures.

Edge counts of autopilot call graphs before and after pruning, and per-mode
allowed-function counts for four autopilot builds.  Percentages are stored
exactly as they were reported, so :func:`check_rows` can recompute each one
from its operands and compare at the reported number of decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .callgraph import precision
from .modeanalysis import reduction


@dataclass(frozen=True)
class PruningRow:
    firmware: str
    original: int
    signature: int
    pruned: int
    reported: str  # percent, as printed


@dataclass(frozen=True)
class ReductionRow:
    firmware: str
    mode: str
    dynamic: int
    static: int
    total: int
    reported_dynamic: str
    reported_static: str


PRUNING = (
    PruningRow("ArduCopter", 104_000, 87_400, 66_800, "36"),
    PruningRow("ArduRover", 115_300, 80_300, 60_100, "48"),
    PruningRow("ArduPlane", 122_000, 86_800, 67_100, "45"),
    PruningRow("PXCopter", 193_000, 130_200, 98_500, "49"),
)

_COPTER = 22653
_PLANE = 22514
_ROVER = 20990
_PX = 20805

REDUCTION = (
    ReductionRow("ArduCopter", "AUTO", 2869, 13520, _COPTER, "87.33", "40.31"),
    ReductionRow("ArduCopter", "CIRCLE", 3106, 13450, _COPTER, "86.28", "40.62"),
    ReductionRow("ArduCopter", "STABILIZE", 7054, 13447, _COPTER, "68.86", "40.64"),
    ReductionRow("ArduCopter", "GUIDED", 3271, 13469, _COPTER, "85.56", "40.54"),
    ReductionRow("ArduCopter", "RTL", 3153, 13470, _COPTER, "86.08", "40.53"),
    ReductionRow("ArduCopter", "LOITER", 2757, 13452, _COPTER, "87.83", "40.61"),
    ReductionRow("ArduPlane", "MANUAL", 6891, 13235, _PLANE, "69.39", "41.21"),
    ReductionRow("ArduPlane", "AUTO", 2823, 13253, _PLANE, "87.46", "41.13"),
    ReductionRow("ArduPlane", "CIRCLE", 2756, 13232, _PLANE, "88.75", "41.22"),
    ReductionRow("ArduPlane", "GUIDED", 2692, 13238, _PLANE, "88.04", "41.20"),
    ReductionRow("ArduPlane", "QLOITER", 3120, 13252, _PLANE, "86.14", "41.14"),
    ReductionRow("ArduPlane", "RTL", 2692, 13239, _PLANE, "88.04", "41.19"),
    ReductionRow("ArduPlane", "QHOVER", 2700, 13238, _PLANE, "88", "41.20"),
    ReductionRow("ArduRover", "AUTO", 2513, 12637, _ROVER, "88.02", "39.80"),
    ReductionRow("ArduRover", "CIRCLE", 2435, 12558, _ROVER, "88.40", "40.17"),
    ReductionRow("ArduRover", "MANUAL", 6246, 12549, _ROVER, "70.24", "40.21"),
    ReductionRow("ArduRover", "RTL", 2433, 12566, _ROVER, "88.40", "40.13"),
    ReductionRow("ArduRover", "GUIDED", 2647, 12583, _ROVER, "87.39", "40.05"),
    ReductionRow("ArduRover", "LOITER", 2255, 12550, _ROVER, "89.26", "40.20"),
    ReductionRow("PXCopter", "TAKEOFF", 4320, 12244, _PX, "79.23", "41.15"),
    ReductionRow("PXCopter", "MISSION", 2765, 12238, _PX, "86.71", "41.18"),
    ReductionRow("PXCopter", "LOITER", 2660, 12208, _PX, "87.21", "41.32"),
    ReductionRow("PXCopter", "RTL", 2853, 12227, _PX, "86.29", "41.23"),
)

TOLERANCE = 0.01  # percentage points, after rounding to the printed precision


def rounded_percent(fraction: float, reported: str) -> Decimal:
    """``fraction`` as a percentage rounded to as many decimals as ``reported``."""
    decimals = len(reported.split(".")[1]) if "." in reported else 0
    quantum = Decimal(1).scaleb(-decimals)
    return (Decimal(repr(fraction)) * 100).quantize(quantum, rounding=ROUND_HALF_UP)


def matches(fraction: float, reported: str) -> bool:
    return abs(float(rounded_percent(fraction, reported)) - float(reported)) <= TOLERANCE + 1e-9


@dataclass(frozen=True)
class Check:
    label: str
    computed: Decimal
    reported: str
    ok: bool


def check_rows() -> list:
    """Recompute every published percentage from its operands."""
    out = []
    for row in PRUNING:
        p = precision(row.original, row.pruned)
        out.append(Check(f"precision {row.firmware}", rounded_percent(p, row.reported), row.reported, matches(p, row.reported)))
    for row in REDUCTION:
        for kind, allowed, rep in (("dynamic", row.dynamic, row.reported_dynamic), ("static", row.static, row.reported_static)):
            r = reduction(row.total, allowed)
            out.append(Check(f"reduction {row.firmware} {row.mode} {kind}", rounded_percent(r, rep), rep, matches(r, rep)))
    return out


def format_checks(checks) -> str:
    lines = []
    for c in checks:
        status = "ok" if c.ok else "MISMATCH"
        lines.append(f"{c.label:<40} computed={c.computed}% reported={c.reported}% {status}")
    return "\n".join(lines) + "\n"
