"""Post-processing of sampled geodesics.

Self-intersections are searched on the sampled polyline and then refined by
re-integrating from the bracketing samples.  Positions are compared in the
finite chart for ``|z| <= 1`` and in the chart ``w = 1/z`` outside, so that
no crossing is ever measured in a badly scaled coordinate.

The omega-limit classifier is a heuristic over a finite budget: its labels
come with the diagnostics they were decided from.
"""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .connection import FuchsianConnection, chordal_distance
from .errors import KUndefined, ZeroResidue
from .integrator import (
    GeodesicSpec,
    Trajectory,
    field_for,
    flow,
    integrate,
)
from .multivalued import cut_crossings, minimal_k, sheet_shift

TWO_PI = 2.0 * math.pi
TRANSVERSAL_TOL = 1e-8
LOCATION_TOL = 1e-9
GRID_N = 128
DENSE_THRESHOLD = 0.98
MANY_INTERSECTIONS = 100

THM_CASES = ("ClosedGeodesic", "ClosedGeodesicAccumulation", "SaddleGraph", "InteriorWithBoundary", "DenseLike")


def fold_angle(a: float) -> float:
    """Representative of ``a`` modulo ``2 pi`` folded into ``[0, pi]``."""
    return abs((a + math.pi) % TWO_PI - math.pi)


@dataclass(frozen=True)
class IntersectionEvent:
    t1: float
    t2: float
    location: complex
    angle: float
    sheets: tuple = (0, 0)
    segments: tuple = (0, 0)
    points: tuple = (0j, 0j)  # refined crossing points in the charts of the two segments

    def to_json(self) -> dict:
        return {
            "t1": self.t1,
            "t2": self.t2,
            "location": [self.location.real, self.location.imag],
            "angle": self.angle,
            "sheets": list(self.sheets),
        }


# ---------------------------------------------------------------------------
# self-intersections
# ---------------------------------------------------------------------------


def _candidate_pairs(a: np.ndarray, b: np.ndarray, seg_ids: np.ndarray) -> np.ndarray:
    """Pairs of segments whose bounding boxes may touch.

    Segments are grouped by length scale (powers of two) so that a few long
    segments do not force a coarse grid on dense regions; within each pair of
    scales, midpoints closer than the sum of the half-lengths are candidates.
    """
    if len(seg_ids) < 2:
        return np.empty((0, 2), dtype=np.int64)
    mid = 0.5 * (a + b)
    half = 0.5 * np.abs(b - a)
    pts = np.column_stack([mid.real, mid.imag])
    level = np.floor(np.log2(np.maximum(half, 1e-300))).astype(np.int64)
    groups = {}
    for lv in np.unique(level):
        idx = np.nonzero(level == lv)[0]
        groups[int(lv)] = (idx, cKDTree(pts[idx]), float(half[idx].max()))
    out = []
    keys = sorted(groups)
    for ia, la in enumerate(keys):
        ida, ta, ha = groups[la]
        for lb in keys[ia:]:
            idb, tb, hb = groups[lb]
            r = ha + hb
            if la == lb:
                pr = ta.query_pairs(r, output_type="ndarray")
                if len(pr):
                    out.append(np.column_stack([ida[pr[:, 0]], ida[pr[:, 1]]]))
            else:
                m = ta.sparse_distance_matrix(tb, r, output_type="ndarray")
                if len(m):
                    out.append(np.column_stack([ida[m["i"]], idb[m["j"]]]))
    if not out:
        return np.empty((0, 2), dtype=np.int64)
    pr = np.concatenate(out)
    pr = np.sort(pr, axis=1)
    return np.column_stack([seg_ids[pr[:, 0]], seg_ids[pr[:, 1]]])


def _chord_crossings(P: np.ndarray, pairs: np.ndarray):
    """Proper crossings of chords ``P[i]P[i+1]`` and ``P[j]P[j+1]``; returns (pairs, s, u)."""
    i, j = pairs[:, 0], pairs[:, 1]
    p, r = P[i], P[i + 1] - P[i]
    q, s = P[j], P[j + 1] - P[j]
    den = (r.conjugate() * s).imag
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        sp = (qp.conjugate() * s).imag / den
        up = (qp.conjugate() * r).imag / den
    ok = (den != 0) & (sp >= 0) & (sp < 1) & (up >= 0) & (up < 1)
    return pairs[ok], sp[ok], up[ok]


def _refine(traj: Trajectory, fld, i: int, j: int, s0: float, u0: float, pass_id: int):
    """Newton refinement of the crossing of segments ``i`` and ``j`` by re-integration."""
    hi = float(traj.t[i + 1] - traj.t[i])
    hj = float(traj.t[j + 1] - traj.t[j])
    ci, cj = int(traj.chart[i]), int(traj.chart[j])
    tau1, tau2 = s0 * hi, u0 * hj
    C0 = traj.C0
    # solve in the samples' own chart when they share one: converting a point
    # of a pole-centred chart to z would cancel the digits that resolve it
    native = ci == cj

    def pos(c, x):
        return x if native else fld.to_pass(c, x, pass_id)

    def vel(c, x, L):
        v = C0 * cmath.exp(-L)
        return v if native else fld.vel_to_pass(c, x, v, pass_id)

    def scale(x):
        # attainable precision: relative to |x| in a pole-centred chart
        if native and ci >= 2:
            return max(abs(x), 1e-300)
        return max(1.0, abs(pos(ci, x)))

    for _ in range(30):
        x1, L1 = flow(traj, i, tau1, fld)
        x2, L2 = flow(traj, j, tau2, fld)
        y1, y2 = pos(ci, x1), pos(cj, x2)
        v1, v2 = vel(ci, x1, L1), vel(cj, x2, L2)
        F = y1 - y2
        det = (v1.conjugate() * v2).imag  # Im(conj(v1) v2)
        if det == 0.0:
            return None
        # solve v1 d1 - v2 d2 = -F for real d1, d2
        d1 = -(F.conjugate() * v2).imag / det
        d2 = -(F.conjugate() * v1).imag / det
        tau1 += d1
        tau2 += d2
        if not (-0.5 * hi <= tau1 <= 1.5 * hi and -0.5 * hj <= tau2 <= 1.5 * hj):
            return None
        if abs(d1 * v1) + abs(d2 * v2) <= 1e-14 * scale(x1):
            break
    else:
        return None
    x1, L1 = flow(traj, i, tau1, fld)
    x2, L2 = flow(traj, j, tau2, fld)
    if abs(pos(ci, x1) - pos(cj, x2)) > LOCATION_TOL * scale(x1):
        return None
    return tau1, tau2, x1, L1, x2, L2


def _sheet_at(traj: Trajectory, fld, i: int, x: complex, shifts, k) -> int:
    logs = fld.advance(int(traj.chart[i]), [complex(v) for v in traj.logs[i]], complex(traj.pos[i]), x)
    s = int(traj.sheet[i])
    if shifts is not None:
        for jj, sh in enumerate(shifts):
            c = cut_crossings(complex(traj.logs[i][jj]), logs[jj])
            if c:
                s = (s + c * sh) % k
    return s


def find_self_intersections(traj: Trajectory, refine: bool = True) -> List[IntersectionEvent]:
    """Transversal self-crossings of a geodesic.

    Candidate segment pairs come from a multi-scale proximity search on chord
    midpoints; each proper chord crossing is refined by Newton iteration on
    the two crossing times, re-integrating from the bracketing samples.
    Crossings whose folded angle is within 1e-8 of 0 or pi are tangential and
    not reported (this covers the return point of a closed geodesic).
    """
    n = len(traj.t)
    if n < 4:
        return []
    z = traj.z
    absz = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(np.isinf(z), 0j, 1.0 / z)
    fld = field_for(traj)
    k = traj.k
    shifts = [sheet_shift(traj.conn, jj, k) for jj in range(traj.conn.n_poles)] if k else None
    closed = traj.stop.kind == "ClosedDetected"
    events = []
    seen = set()
    valid_seg = np.ones(n - 1, dtype=bool)
    valid_seg &= traj.t[1:] > traj.t[:-1]
    for pass_id, P, keep in ((0, z, (absz[:-1] <= 4) & (absz[1:] <= 4)),
                             (1, w, (absz[:-1] >= 0.25) & (absz[1:] >= 0.25))):
        seg_ids = np.nonzero(keep & valid_seg)[0]
        if len(seg_ids) < 2:
            continue
        pairs = _candidate_pairs(P[seg_ids], P[seg_ids + 1], seg_ids)
        if not len(pairs):
            continue
        pairs = pairs[pairs[:, 1] - pairs[:, 0] > 1]
        if closed:
            pairs = pairs[~((pairs[:, 0] == 0) & (pairs[:, 1] == n - 2))]
        pairs, sp, up = _chord_crossings(P, pairs)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        for idx in order:
            i, j = int(pairs[idx, 0]), int(pairs[idx, 1])
            ref = _refine(traj, fld, i, j, float(sp[idx]), float(up[idx]), pass_id) if refine else None
            if ref is None:
                if refine:
                    continue
                hi, hj = traj.t[i + 1] - traj.t[i], traj.t[j + 1] - traj.t[j]
                tau1, tau2 = float(sp[idx] * hi), float(up[idx] * hj)
                x1, L1 = complex(traj.pos[i]), complex(traj.L[i])
                x2, L2 = complex(traj.pos[j]), complex(traj.L[j])
            else:
                tau1, tau2, x1, L1, x2, L2 = ref
            ci, cj = int(traj.chart[i]), int(traj.chart[j])
            y = fld.to_pass(ci, x1, pass_id)
            loc = y if pass_id == 0 else (1.0 / y if y != 0 else complex(math.inf))
            if (abs(loc) > 1.0) != (pass_id == 1):
                continue  # reported by the other pass
            v1, v2 = traj.C0 * cmath.exp(-L1), traj.C0 * cmath.exp(-L2)
            if ci != cj:
                v1 = fld.vel_to_pass(ci, x1, v1, pass_id)
                v2 = fld.vel_to_pass(cj, x2, v2, pass_id)
            ang = fold_angle(cmath.phase(v2 / v1))
            if min(ang, math.pi - ang) <= TRANSVERSAL_TOL:
                continue
            t1 = float(traj.t[i]) + tau1
            t2 = float(traj.t[j]) + tau2
            key = (round(t1, 8), round(t2, 8))
            if key in seen:
                continue
            seen.add(key)
            s1 = _sheet_at(traj, fld, i, x1, shifts, k)
            s2 = _sheet_at(traj, fld, j, x2, shifts, k)
            events.append(IntersectionEvent(t1, t2, loc, ang, (s1, s2), (i, j), (x1, x2)))
    events.sort(key=lambda e: (e.t1, e.t2))
    return events


# ---------------------------------------------------------------------------
# angle quantization
# ---------------------------------------------------------------------------


@dataclass
class AngleSpectrum:
    k: int
    grid: list
    deviations: np.ndarray
    max_deviation: float
    bin_centers: np.ndarray
    counts: np.ndarray
    max_multiplicity: int
    multiplicity_ok: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["bin_center_rad", "count"])
            for c, n in zip(self.bin_centers, self.counts):
                wr.writerow([f"{c:.12g}", int(n)])


def grid_deviation(angle: float, k: int) -> float:
    """Distance from ``angle`` to the nearest point of ``(2 pi / k) Z`` (angles folded)."""
    step = TWO_PI / k
    a = angle % step
    return min(a, step - a)


def crossing_multiplicities(events: Sequence[IntersectionEvent], conn: Optional[FuchsianConnection] = None,
                            tol: float = 1e-6) -> list:
    """Number of distinct passages through each crossing point.

    Two events share a point when their locations agree to ``tol`` relative to
    the local length scale ``min(max(1, |z|), distance to the nearest pole)``.
    """
    poles = list(conn.poles) if conn is not None else []
    clusters: List[list] = []
    for e in events:
        loc = e.location
        scale = max(1.0, abs(loc)) if not cmath.isinf(loc) else 1.0
        for p in poles:
            scale = min(scale, abs(loc - p))
        for cl in clusters:
            if abs(cl[0] - loc) <= tol * scale:
                cl[1].update((round(e.t1, 7), round(e.t2, 7)))
                break
        else:
            clusters.append([loc, {round(e.t1, 7), round(e.t2, 7)}])
    return [len(c[1]) for c in clusters]


def angle_spectrum(events: Sequence[IntersectionEvent], conn: FuchsianConnection,
                   n_bins: int = 180, closed: bool = False) -> AngleSpectrum:
    """Histogram of crossing angles against the grid ``(2 pi / k) Z``.

    Raises
    ------
    KUndefined
        If the residues admit no ``k <= 64``.
    """
    k = minimal_k(conn)
    if k is None:
        raise KUndefined("angle grid needs a finite k")
    angles = np.array([e.angle for e in events], dtype=float)
    dev = np.array([grid_deviation(a, k) for a in angles], dtype=float)
    counts, edges = np.histogram(angles, bins=n_bins, range=(0.0, math.pi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    mult = crossing_multiplicities(events, conn)
    max_mult = max(mult) if mult else 0
    grid = sorted({fold_angle(TWO_PI * m / k) for m in range(k)})
    return AngleSpectrum(
        k=k, grid=grid, deviations=dev, max_deviation=float(dev.max()) if dev.size else 0.0,
        bin_centers=centers, counts=counts, max_multiplicity=max_mult,
        multiplicity_ok=closed or max_mult <= k,
    )


# ---------------------------------------------------------------------------
# local behaviour at a pole
# ---------------------------------------------------------------------------


def is_resonant(rho: complex, tol: float = 1e-12) -> bool:
    """True when ``-1 - rho`` is a positive integer."""
    m = -1.0 - rho.real
    return abs(rho.imag) <= tol and m >= 1 - tol and abs(m - round(m)) <= tol


def classify_local(rho: complex, tol: float = 1e-12) -> str:
    """Local behaviour of geodesics near a Fuchsian pole with residue ``rho``.

    Returns one of ``Attracting``, ``Escaping``, ``ClosedRelated``,
    ``PeriodicOrEscape``.
    """
    rho = complex(rho)
    if rho == 0:
        raise ZeroResidue("zero residue is not a pole")
    if is_resonant(rho, tol) or rho.real < -1.0 - tol:
        return "Attracting"
    if rho.real > -1.0 + tol:
        return "Escaping"
    if abs(rho.imag) <= tol:
        return "PeriodicOrEscape"
    return "ClosedRelated"


# ---------------------------------------------------------------------------
# saddle connections
# ---------------------------------------------------------------------------


@dataclass
class SaddleConnection:
    endpoints: tuple
    start: complex
    direction: complex
    arc: Trajectory
    signature: tuple = ()


def _terminal(traj: Trajectory):
    return traj.stop.pole if traj.stop.kind == "PoleReached" else None


def find_saddle_connections(conn: FuchsianConnection, pole_j: int, n_seeds: int = 16,
                            refine_tol: float = 1e-13, eps: float = 1e-7,
                            max_time: float = math.inf, max_samples: int = 20000,
                            max_bisections: int = 60, allow_loops: bool = False) -> List[SaddleConnection]:
    """Saddle connections issuing from finite pole ``pole_j``.

    Geodesics are launched radially from ``p_j + eps e^{i phi}`` for ``n_seeds``
    equally spaced angles.  A seed whose forward and backward runs both end at
    poles is a connection; between neighbouring seeds with different terminal
    poles the launch angle is bisected until a run ends at a third pole or the
    bracket is narrower than ``refine_tol`` radians.
    Results are deduplicated by endpoint pair, final sheet and the rounded
    winding vector around the other poles.  Loops returning to their starting
    pole are dropped unless ``allow_loops``; with a single singular point every
    geodesic can be such a loop.
    """
    if n_seeds < 8:
        raise ValueError("n_seeds must be at least 8")
    if not (0 <= pole_j < conn.n_poles):
        raise ValueError("pole_j must index a finite pole")
    p = conn.poles[pole_j]
    others = [abs(q - p) for i, q in enumerate(conn.poles) if i != pole_j]
    excursion = 0.25 * min(others) if others else 0.25

    def run(phi):
        d = cmath.exp(1j * phi)
        spec = GeodesicSpec(p + eps * d, d, max_time=max_time, max_samples=max_samples, detect_closed=False)
        fwd = integrate(conn, spec)
        return fwd

    def accept(phi, fwd) -> Optional[SaddleConnection]:
        end = _terminal(fwd)
        if end is None:
            return None
        z = fwd.z
        if end == pole_j and not np.any(np.abs(z - p) > excursion):
            return None
        d = cmath.exp(1j * phi)
        back = integrate(conn, GeodesicSpec(p + eps * d, -d, max_time=max_time, max_samples=max_samples,
                                            detect_closed=False))
        if _terminal(back) is None or (not allow_loops and _terminal(back) == end):
            return None
        wind = np.round((fwd.logs[-1] - fwd.logs[0]).imag / TWO_PI).astype(int) if conn.n_poles else np.zeros(0)
        mask = [i for i in range(conn.n_poles) if i not in (pole_j, end)]
        sig = (int(fwd.sheet[-1]), tuple(int(wind[i]) for i in mask))
        return SaddleConnection((_terminal(back), end), p + eps * d, d, fwd, sig)

    phis = [TWO_PI * i / n_seeds for i in range(n_seeds)]
    runs = [run(ph) for ph in phis]
    found = []
    for ph, fw in zip(phis, runs):
        sc = accept(ph, fw)
        if sc is not None:
            found.append(sc)
    for i in range(n_seeds):
        a, b = phis[i], phis[i + 1] if i + 1 < n_seeds else phis[0] + TWO_PI
        ta, tb = _terminal(runs[i]), _terminal(runs[(i + 1) % n_seeds])
        if ta == tb:
            continue
        lo, hi = a, b
        for _ in range(max_bisections):
            mid = 0.5 * (lo + hi)
            fw = run(mid)
            tm = _terminal(fw)
            if tm == ta:
                lo = mid
            elif tm == tb:
                hi = mid
            else:
                sc = accept(mid, fw)
                if sc is not None:
                    found.append(sc)
                break
            if hi - lo < refine_tol:
                break
    out, keys = [], set()
    for sc in found:
        key = (tuple(sorted(sc.endpoints)), sc.signature)
        if key not in keys:
            keys.add(key)
            out.append(sc)
    return out


# ---------------------------------------------------------------------------
# omega-limit classification
# ---------------------------------------------------------------------------


@dataclass
class OmegaReport:
    label: str
    pole: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)
    notable: bool = False

    def __str__(self) -> str:
        return f"{self.label}({self.pole})" if self.pole is not None else self.label

    def to_json(self) -> dict:
        out = {"label": self.label, "diagnostics": self.diagnostics, "notable": self.notable}
        if self.pole is not None:
            out["pole"] = self.pole
        return out


def _densify(P: np.ndarray, step: float) -> np.ndarray:
    if len(P) < 2:
        return P
    seg = P[1:] - P[:-1]
    n = np.maximum(1, np.ceil(np.abs(seg) / step).astype(np.int64))
    n = np.minimum(n, 10_000)
    idx = np.repeat(np.arange(len(seg)), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    frac = offs / np.repeat(n, n)
    return np.concatenate([P[:-1][idx] + frac * seg[idx], P[-1:]])


def _disk_cells(n: int = GRID_N) -> np.ndarray:
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    X, Y = np.meshgrid(c, c, indexing="ij")
    return (X ** 2 + Y ** 2) < 1.0


_DISK = _disk_cells()
TOTAL_CELLS = int(2 * _DISK.sum())


def occupied_cells(z: np.ndarray, n: int = GRID_N) -> np.ndarray:
    """Ids of occupancy cells visited by a finite-chart polyline.

    Two ``n x n`` grids cover the unit disks of the charts ``z`` and ``w = 1/z``.
    """
    z = np.asarray(z, dtype=complex)
    step = 1.0 / n
    out = []
    absz = np.abs(z)
    for grid_id, P, keep in ((0, z, absz <= 2.0), (1, None, absz >= 0.5)):
        if P is None:
            with np.errstate(divide="ignore", invalid="ignore"):
                P = np.where(np.isinf(z), 0j, 1.0 / z)
        # densify only runs of consecutive kept samples
        brk = np.nonzero(~keep)[0]
        starts = np.concatenate([[0], brk + 1])
        ends = np.concatenate([brk, [len(z)]])
        for s, e in zip(starts, ends):
            if e - s < 1:
                continue
            D = _densify(P[s:e], step)
            D = D[np.abs(D) < 1.0]
            ix = np.clip(((D.real + 1.0) * 0.5 * n).astype(np.int64), 0, n - 1)
            iy = np.clip(((D.imag + 1.0) * 0.5 * n).astype(np.int64), 0, n - 1)
            inside = _DISK[ix, iy] if n == GRID_N else np.ones(len(ix), dtype=bool)
            out.append(grid_id * n * n + ix[inside] * n + iy[inside])
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(out))


def occupancy(z: np.ndarray) -> float:
    return len(occupied_cells(z)) / TOTAL_CELLS


def _z_of(fld, code: int, x: complex) -> complex:
    b = fld.to_base(code, x)
    return b if code != 1 else (1.0 / b if b != 0 else complex(math.inf))


def section_returns(traj: Trajectory, window: float = 0.25) -> np.ndarray:
    """Offsets of earlier same-direction crossings of the normal line through the last sample.

    Offsets are measured along the normal, oldest first, with the last
    sample itself (offset 0) appended.  Each crossing is located by
    re-integrating from the bracketing sample, so the offsets carry the
    integration accuracy rather than the sample spacing.
    """
    z = traj.z
    v = traj.vel_z
    m = np.isfinite(z) & np.isfinite(v)
    if m.sum() < 3:
        return np.empty(0)
    idx = np.nonzero(m)[0]
    last = idx[-1]
    x0, v0 = z[last], v[last]
    u = v0 / abs(v0)
    rel = (z - x0) * u.conjugate()
    g = rel.real
    scale = window * max(1.0, abs(x0))
    cand = np.nonzero(m[:-1] & m[1:] & (g[:-1] < 0) & (g[1:] >= 0) & (np.abs(rel[:-1]) < 2 * scale))[0]
    fld = field_for(traj)
    out = []
    for c in cand:
        if c + 1 >= last or traj.chart[c] != traj.chart[c + 1]:
            continue
        code = int(traj.chart[c])
        dt = float(traj.t[c + 1] - traj.t[c])

        def gz(tau):
            x, _ = flow(traj, c, tau, fld)
            r = (_z_of(fld, code, x) - x0) * u.conjugate()
            return r.real, r.imag

        lo, hi = 0.0, dt
        glo, ghi = g[c], g[c + 1]
        s_off = rel[c + 1].imag
        for _ in range(60):
            tau = lo + (hi - lo) * (-glo / (ghi - glo)) if ghi != glo else 0.5 * (lo + hi)
            if not (lo < tau < hi):
                tau = 0.5 * (lo + hi)
            gm, s_off = gz(tau)
            if gm < 0:
                lo, glo = tau, gm
            else:
                hi, ghi = tau, gm
            if abs(gm) <= 1e-13 * max(1.0, abs(x0)) or hi - lo <= 1e-15 * max(1.0, dt):
                break
        if abs(s_off) < scale:
            out.append(s_off)
    out.append(0.0)
    return np.array(out)


def _accumulating(offsets: np.ndarray, scale: float = 1.0, min_gaps: int = 3,
                  floor: float = 1e-8) -> bool:
    """Whether section offsets converge geometrically, as on approach to a closed geodesic.

    Gaps between consecutive returns must shrink by a factor below 0.9 until
    they reach the noise floor ``floor * scale``, after which they must stay
    there.  At least ``min_gaps`` gaps are needed, or at least two shrinking
    gaps followed by the floor.
    """
    if len(offsets) < 3:
        return False
    gaps = np.abs(np.diff(offsets))
    tol = floor * scale
    small = gaps < tol
    if small.any():
        first = int(np.argmax(small))
        if not np.all(gaps[first:] < 10 * tol):
            return False
        pre = gaps[:first]
        if len(pre) < 2 or len(pre) + 1 < min_gaps:
            return False
    else:
        pre = gaps
        if len(pre) < min_gaps:
            return False
    pre = pre[-4:]
    return bool(np.all(pre[1:] < 0.9 * pre[:-1]))


def classify_omega(traj: Trajectory, conn: Optional[FuchsianConnection] = None,
                   saddles: Sequence[SaddleConnection] = (), n_intersections: Optional[int] = None,
                   tube: float = 1e-3) -> OmegaReport:
    """Heuristic label of the omega-limit set of a finished trajectory.

    Decision order: pole arrival, closed return, Poincare-section returns that
    converge (accumulation on a closed geodesic), confinement to tubes around
    given saddle connections, cell occupancy above 0.98, saturated occupancy
    with many crossings (interior with boundary), otherwise ``Inconclusive``.
    With at least 100 crossings a pole arrival is reported ``Inconclusive``
    since an infinitely self-crossing geodesic cannot end at a pole.
    """
    conn = conn or traj.conn
    if n_intersections is None:
        n_intersections = len(find_self_intersections(traj))
    z = traj.z
    cells_all = occupied_cells(z)
    occ = len(cells_all) / TOTAL_CELLS
    occ_half = len(occupied_cells(z[: max(2, len(z) // 2)])) / TOTAL_CELLS
    offsets = section_returns(traj)
    many = n_intersections >= MANY_INTERSECTIONS
    diag = {
        "occupancy": occ,
        "occupancy_first_half": occ_half,
        "recurrence": int(max(0, len(offsets) - 1)),
        "n_intersections": int(n_intersections),
        "stop": str(traj.stop),
        "terminal_pole_distance": None,
    }
    label, pole = "Inconclusive", None
    if traj.stop.kind == "PoleReached":
        j = traj.stop.pole
        p = conn.pole_point(j) if j is not None else None
        zf = complex(z[-1])
        if p is not None:
            diag["terminal_pole_distance"] = chordal_distance(zf, p)
        if many:
            label = "Inconclusive"
            diag["pole_after_many_crossings"] = True
        else:
            label, pole = "PoleLimit", j
    elif traj.stop.kind == "ClosedDetected":
        label = "ClosedGeodesic"
    elif _accumulating(offsets, max(1.0, abs(complex(z[-1]))) if np.isfinite(z[-1]) else 1.0):
        label = "ClosedGeodesicAccumulation"
    elif saddles and _within_tubes(z[len(z) // 2:], saddles, tube):
        label = "SaddleGraph"
    elif occ > DENSE_THRESHOLD:
        label = "DenseLike"
    elif many and occ_half > 0 and (occ - occ_half) <= 0.01 * occ and traj.stop.kind == "BudgetExhausted":
        label = "InteriorWithBoundary"
    notable = many and label in THM_CASES[:4]
    return OmegaReport(label, pole, diag, notable)


def _within_tubes(z: np.ndarray, saddles: Sequence[SaddleConnection], tube: float) -> bool:
    pts = np.concatenate([s.arc.z[np.isfinite(s.arc.z)] for s in saddles])
    if not len(pts):
        return False
    tree = cKDTree(np.column_stack([pts.real, pts.imag]))
    zz = z[np.isfinite(z)]
    d, _ = tree.query(np.column_stack([zz.real, zz.imag]))
    return bool(np.all(d <= tube))
