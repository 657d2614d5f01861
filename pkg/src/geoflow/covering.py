"""Sheet bookkeeping on the canonical k-sheeted cover.

The cover is never built as a surface.  A lifted geodesic is the base
trajectory together with a sheet index in ``Z/k`` that changes by
``m_j = k Re(rho_j)`` whenever the path crosses the cut ``{p_j + t : t > 0}``
counter-clockwise (and by ``-m_j`` clockwise).  Sheets reachable from sheet 0
form the component of the cover that is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .analysis import (
    TWO_PI,
    DENSE_THRESHOLD,
    TOTAL_CELLS,
    TRANSVERSAL_TOL,
    IntersectionEvent,
    OmegaReport,
    classify_omega,
    find_self_intersections,
    fold_angle,
    occupied_cells,
)
from .connection import FuchsianConnection
from .errors import KUndefined
from .integrator import Trajectory, field_for
from .multivalued import cut_crossings, minimal_k, sheet_index_update, sheet_shift

CUT_CONVENTION = "horizontal-right"


@dataclass(frozen=True)
class CoverSpec:
    """Canonical cover of ``conn`` with ``k`` sheets (default: the minimal k)."""

    conn: FuchsianConnection
    k: Optional[int] = None
    cut: str = CUT_CONVENTION

    def __post_init__(self):
        k = self.k if self.k is not None else minimal_k(self.conn)
        if k is None:
            raise KUndefined("no k <= 64 clears the residue denominators")
        if int(k) != k or k < 1:
            raise ValueError("k must be a positive integer")
        object.__setattr__(self, "k", int(k))
        for j in range(self.conn.n_poles + (1 if self.conn.include_infinity else 0)):
            sheet_shift(self.conn, j, self.k)  # raises KUndefined if k does not fit

    @property
    def sheet_count(self) -> int:
        return self.k

    def shifts(self) -> List[int]:
        return [sheet_shift(self.conn, j, self.k) for j in range(self.conn.n_poles)]


@dataclass(frozen=True)
class CutCrossing:
    sample: int  # crossing happens between samples ``sample`` and ``sample + 1``
    pole: int
    direction: int
    sheet_before: int
    sheet_after: int


@dataclass
class LiftedTrajectory:
    base: Trajectory
    cover: CoverSpec
    sheets: np.ndarray
    crossings: List[CutCrossing]

    @property
    def reachable_sheets(self) -> List[int]:
        return sorted(set(int(s) for s in self.sheets))

    def to_jsonl(self, path) -> None:
        """Same record layout as the base trajectory, with the lifted sheet."""
        import json
        from .integrator import jsonl_records

        with open(path, "w") as fh:
            for i, rec in enumerate(jsonl_records(self.base)):
                if "sheet" in rec:
                    rec["sheet"] = int(self.sheets[i])
                fh.write(json.dumps(rec) + "\n")


def lift(traj: Trajectory, cover: CoverSpec) -> LiftedTrajectory:
    """Lift ``traj`` to the cover, starting on sheet 0.

    The sheet is recomputed from the continued logs stored with the samples,
    with the same update rule the integrator applies inline.
    """
    k = cover.k
    conn = cover.conn
    n = len(traj.t)
    sheets = np.zeros(n, dtype=np.int64)
    crossings = []
    s = 0
    logs = traj.logs
    for i in range(n - 1):
        for j in range(conn.n_poles):
            c = cut_crossings(complex(logs[i, j]), complex(logs[i + 1, j]))
            if c:
                new = sheet_index_update(s, j, c, conn, k)
                crossings.append(CutCrossing(i, j, c, s, new))
                s = new
        sheets[i + 1] = s
    return LiftedTrajectory(traj, cover, sheets, crossings)


@dataclass
class LiftReport:
    n_events: int
    same_sheet: int
    cross_sheet: int
    violations: List[dict] = field(default_factory=list)
    base_closed: bool = False
    closes_after: Optional[int] = None
    reachable_sheets: List[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def expected_angle(s1: int, s2: int, k: int) -> float:
    """Crossing angle implied by the sheets at the two passages."""
    return fold_angle(TWO_PI * (s2 - s1) / k)


def verify_lift_simplicity(lifted: LiftedTrajectory, events: Optional[Sequence[IntersectionEvent]] = None,
                           angle_tol: float = 1e-6) -> LiftReport:
    """Check that the lift of a geodesic has no transversal self-crossing.

    Every base crossing with equal sheets at its two passages is a crossing of
    the lift; for a geodesic of the cover it must be a closed return (angle
    zero), so a transversal one is a violation.  Crossings whose angle does
    not match the sheet difference are reported too.
    """
    base = lifted.base
    k = lifted.cover.k
    if events is None:
        events = find_self_intersections(base)
    same = cross = 0
    violations = []
    fld = field_for(base)
    for e in events:
        s1 = _sheet_at_time(lifted, e, 0, fld)
        s2 = _sheet_at_time(lifted, e, 1, fld)
        if s1 == s2:
            same += 1
            if min(e.angle, math.pi - e.angle) > TRANSVERSAL_TOL:
                violations.append({"kind": "same-sheet-crossing", "t1": e.t1, "t2": e.t2, "angle": e.angle,
                                   "sheet": s1})
        else:
            cross += 1
        want = expected_angle(s1, s2, k)
        if abs(want - e.angle) > angle_tol:
            violations.append({"kind": "angle-sheet-mismatch", "t1": e.t1, "t2": e.t2, "angle": e.angle,
                               "expected": want})
    closed = base.stop.kind == "ClosedDetected"
    closes_after = None
    if closed:
        shift = int(lifted.sheets[-1] - lifted.sheets[0]) % k
        closes_after = k // math.gcd(shift, k)
    return LiftReport(len(events), same, cross, violations, closed, closes_after, lifted.reachable_sheets)


def _sheet_at_time(lifted: LiftedTrajectory, e: IntersectionEvent, which: int, fld=None) -> int:
    """Lifted sheet at one passage of a crossing, continued from the bracketing sample."""
    base = lifted.base
    i = int(e.segments[which])
    fld = fld or field_for(base)
    logs0 = [complex(v) for v in base.logs[i]]
    logs1 = fld.advance(int(base.chart[i]), logs0, complex(base.pos[i]), complex(e.points[which]))
    s = int(lifted.sheets[i])
    for j, (a, b) in enumerate(zip(logs0, logs1)):
        c = cut_crossings(a, b)
        if c:
            s = sheet_index_update(s, j, c, lifted.cover.conn, lifted.cover.k)
    return s


# ---------------------------------------------------------------------------
# omega-limit diagnostics on the cover
# ---------------------------------------------------------------------------


@dataclass
class LiftedOmegaReport:
    label: str
    per_sheet_cells: Dict[int, np.ndarray]
    base: OmegaReport
    closed_lift: bool = False

    def sheet_occupancy(self) -> Dict[int, float]:
        return {s: len(c) / TOTAL_CELLS for s, c in self.per_sheet_cells.items()}


def lifted_omega(lifted: LiftedTrajectory, n_intersections: Optional[int] = None) -> LiftedOmegaReport:
    """Per-sheet occupancy of the lift together with the base classification."""
    z = lifted.base.z
    cells = {}
    for s in lifted.reachable_sheets:
        m = lifted.sheets == s
        # keep each run on the sheet intact so segments are rasterized, not just samples
        idx = np.nonzero(m)[0]
        if len(idx) == 0:
            continue
        runs = np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1)
        parts = [occupied_cells(z[r[0]: r[-1] + 1]) for r in runs]
        cells[s] = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    base = classify_omega(lifted.base, n_intersections=n_intersections)
    closed_lift = base.label == "ClosedGeodesic"
    label = base.label
    if any(len(c) / TOTAL_CELLS > DENSE_THRESHOLD for c in cells.values()):
        label = "DenseLike"
    return LiftedOmegaReport(label, cells, base, closed_lift)


def project_omega(lifted_report: LiftedOmegaReport, cover: CoverSpec) -> OmegaReport:
    """Push the lifted diagnostics down to the base.

    Occupancy is the union over sheets.  A closed lift projects to a (possibly
    non-simple) closed geodesic, a saddle graph to a saddle graph, a dense
    lift to a dense base set.
    """
    parts = list(lifted_report.per_sheet_cells.values())
    union = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    occ = len(union) / TOTAL_CELLS
    diag = dict(lifted_report.base.diagnostics)
    diag["occupancy"] = occ
    diag["sheets"] = sorted(lifted_report.per_sheet_cells)
    diag["k"] = cover.k
    label = lifted_report.label
    pole = lifted_report.base.pole
    if lifted_report.closed_lift:
        label = "ClosedGeodesic"
    elif label != "PoleLimit" and occ > DENSE_THRESHOLD:
        label = "DenseLike"
    return OmegaReport(label, pole if label == "PoleLimit" else None, diag, lifted_report.base.notable)
