"""Adaptive integration of geodesics of a Fuchsian connection.

A geodesic satisfies ``x'' + f(x) x'^2 = 0`` in every chart, equivalently
``exp(K) x' = C`` with ``K`` a primitive of ``f``.  The integrator advances the
pair ``(x, L)`` with

    x' = C exp(-L),    L' = f(x) x',

where ``L`` is the integrated logarithm of the holonomy.  Both right-hand sides
are single valued, so the Runge-Kutta stages never see a branch cut.  Along
the way the logs ``log(z - p_j)`` are continued exactly; ``exp(K - L) - 1``
computed from them is the drift of the conserved quantity.

Two charts are used: ``z`` while ``|z| <= r_out`` and ``w = 1/z`` beyond,
with hysteresis on the way back.
"""

from __future__ import annotations

import cmath
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .connection import (
    FINITE,
    INFINITY,
    FuchsianConnection,
    chordal_distance,
    metric_density,
)
from .errors import NonRealResidues, StartAtPole
from .multivalued import advance_logs, cut_crossings, minimal_k, principal_logs, sheet_shift

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

RTOL = 1e-11
H_MAX = 0.05
MIN_STEP = 1e-14
POLE_CHORDAL = 1e-6
CLOSE_POS_TOL = 1e-7
CLOSE_DIR_TOL = 1e-5
LEAVE_START = 1e-4

CENTER_ENTER = 1e-3
CENTER_LEAVE = 1e-2

# chart codes: 0 is z, 1 is w = 1/z, 2 + j is z - p_j (finite chart centred at pole j)
CHART_CODES = {FINITE: 0, INFINITY: 1}
CHART_NAMES = (FINITE, INFINITY)


def chart_name(code: int) -> str:
    return INFINITY if code == 1 else FINITE


@dataclass(frozen=True)
class StopReason:
    kind: str  # PoleReached | Escaped | BudgetExhausted | ClosedDetected
    pole: Optional[int] = None

    def __str__(self) -> str:
        return f"{self.kind}({self.pole})" if self.pole is not None else self.kind

    def to_json(self) -> dict:
        out = {"stop": self.kind}
        if self.pole is not None:
            out["pole"] = self.pole
        return out


@dataclass(frozen=True)
class GeodesicSpec:
    """Initial condition and budgets of one geodesic.

    ``normalization="affine"`` launches with velocity ``speed * direction``;
    ``"unit-metric-speed"`` (real residues only) scales the launch velocity so
    that the adapted flat metric measures unit speed, which makes the time
    parameter an arclength.
    """

    start: complex
    direction: complex = 1.0
    normalization: str = "affine"
    speed: float = 1.0
    max_time: float = 1e3
    max_arclength: float = math.inf
    max_samples: int = 1_000_000
    escape_center: Optional[complex] = None
    escape_radius: Optional[float] = None
    detect_closed: bool = True
    r_out: float = 10.0
    r_in: Optional[float] = None
    rtol: float = RTOL
    h_max: float = H_MAX

    def __post_init__(self):
        object.__setattr__(self, "start", complex(self.start))
        object.__setattr__(self, "direction", complex(self.direction))
        if abs(abs(self.direction) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit complex number")
        if self.normalization not in ("affine", "unit-metric-speed"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if not (self.max_time > 0 and self.max_arclength > 0 and self.max_samples > 0):
            raise ValueError("budgets must be positive")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.r_in is not None and not (1.0 < self.r_in < self.r_out):
            raise ValueError("need 1 < r_in < r_out")

    @property
    def chart_in(self) -> float:
        return self.r_in if self.r_in is not None else 0.8 * self.r_out


@dataclass(frozen=True)
class FlowState:
    """Integrator state at one instant: chart (``"z"`` or ``"w"``), coordinate,
    integrated log-holonomy ``L``, continued logs and sheet."""

    t: float
    chart: str
    x: complex
    L: complex
    logs: tuple = ()
    sheet: int = 0


def switch_chart(state: FlowState) -> FlowState:
    """Re-express ``state`` in the other chart of the atlas.

    Position maps by ``x -> 1/x`` and velocity by ``v -> -v/x**2``; since
    ``v = C exp(-L)`` with the same constant ``C`` in both charts, this is
    ``L -> L + log(-x**2)``.  The logs ``log(z - p_j)`` are chart independent.
    """
    x = state.x
    new_chart = INFINITY if state.chart == FINITE else FINITE
    return replace(state, chart=new_chart, x=1.0 / x, L=state.L + cmath.log(-x * x))


class _ChartData:
    __slots__ = ("base", "center", "sing", "track", "labelled", "log_poles")

    def __init__(self, conn: FuchsianConnection, code: int):
        self.base = chart_name(code)
        c = conn.poles[code - 2] if code >= 2 else 0j
        self.center = c
        pts, res, labs = conn.chart_singularities(self.base)
        local = [p - c if q != code - 2 else 0j for p, q in zip(pts, labs)] if code >= 2 else list(pts)
        self.sing = tuple(zip(local, res))
        # step-size caps only see genuine singular points; a regular point at
        # infinity is crossed freely (the logs are continued factor by factor)
        self.track = tuple(local)
        self.labelled = tuple(zip(local, pts, res, labs))
        if self.base == FINITE:
            self.log_poles = tuple(p - c if j != code - 2 else 0j for j, p in enumerate(conn.poles))
        else:
            self.log_poles = conn.poles


class _Field:
    """Right-hand side and one Dormand-Prince step in every chart."""

    def __init__(self, conn: FuchsianConnection, C0: complex):
        self.conn = conn
        self.C0 = C0
        self._charts = {}

    def chart(self, code: int) -> _ChartData:
        cd = self._charts.get(code)
        if cd is None:
            cd = self._charts[code] = _ChartData(self.conn, code)
        return cd

    def rhs(self, code: int, x: complex, L: complex):
        v = self.C0 * cmath.exp(-L)
        f = 0j
        for p, r in self.chart(code).sing:
            f += r / (x - p)
        return v, f * v

    def nearest(self, code: int, x: complex) -> float:
        d = math.inf
        for q in self.chart(code).track:
            e = abs(x - q)
            if e < d:
                d = e
        return d

    def advance(self, code: int, logs, x0: complex, x1: complex) -> list:
        cd = self.chart(code)
        return advance_logs(cd.log_poles, cd.base, logs, x0, x1)

    def to_base(self, code: int, x: complex) -> complex:
        return x + self.chart(code).center if code >= 2 else x

    def to_pass(self, code: int, x: complex, target: int) -> complex:
        """Chart coordinate ``x`` expressed in chart ``target`` (0 = z, 1 = w)."""
        b = self.to_base(code, x)
        base = 1 if code == 1 else 0
        return b if base == target else 1.0 / b

    def vel_to_pass(self, code: int, x: complex, v: complex, target: int) -> complex:
        b = self.to_base(code, x)
        base = 1 if code == 1 else 0
        return v if base == target else -v / (b * b)

    def dp5(self, code: int, x: complex, L: complex, h: float, k1=None):
        """One step of size ``h``; returns ``(x5, L5, err_x, err_L, k_last)``."""
        rhs = self.rhs
        if k1 is None:
            k1 = rhs(code, x, L)
        ks = [k1]
        for i in range(1, 7):
            dx = 0j
            dL = 0j
            for a, (kv, kl) in zip(_A[i], ks):
                if a:
                    dx += a * kv
                    dL += a * kl
            ks.append(rhs(code, x + h * dx, L + h * dL))
        x5 = x
        L5 = L
        ex = 0j
        eL = 0j
        for b, e, (kv, kl) in zip(_B, _E, ks):
            x5 += h * b * kv
            L5 += h * b * kl
            ex += e * kv
            eL += e * kl
        return x5, L5, abs(h * ex), abs(h * eL), ks[6]


def propose_step(h: float, err: float) -> float:
    """Step-size control law: next step after a step of size ``h`` with error norm ``err``."""
    if err == 0.0:
        return 5.0 * h
    return h * min(5.0, max(0.2, 0.9 * err ** -0.2))


@dataclass(frozen=True)
class StepResult:
    h: float
    x: complex
    L: complex
    err: float
    next_h: float
    k_last: tuple
    collapsed: bool = False


def _step(fld: _Field, code: int, x: complex, L: complex, proposed_h: float, rtol: float,
          h_max: float, k1=None) -> StepResult:
    if k1 is None:
        k1 = fld.rhs(code, x, L)
    speed = abs(k1[0])
    d = fld.nearest(code, x)
    cap = min(h_max, 0.1 * d)
    h = min(proposed_h, cap / speed) if speed > 0 else proposed_h
    scale = min(max(1.0, abs(x)), d)
    while True:
        # relative to the local scale: pole-centred charts keep full precision
        # down to tiny offsets, so near passes of sharp cone points are fine
        if h * speed < MIN_STEP * scale:
            return StepResult(h, x, L, 0.0, h, k1, collapsed=True)
        x5, L5, ex, eL, k7 = fld.dp5(code, x, L, h, k1)
        err = max(ex / (rtol * scale), eL / rtol)
        if err <= 1.0 and abs(x5 - x) <= 0.5 * d and (code != 1 or x5 != 0):
            return StepResult(h, x5, L5, err, propose_step(h, err), k7)
        h *= 0.5


def step_control(fld: _Field, state: FlowState, proposed_h: float, rtol: float = RTOL,
                 h_max: float = H_MAX, k1=None) -> StepResult:
    """Take one accepted step from ``state``, retrying with halved ``h`` on rejection.

    The step is accepted when the embedded error estimate is within ``rtol``
    (position relative to ``min(max(1, |x|), d)``, ``L`` absolute) and the
    displacement is at most ``min(h_max, 0.1 d)``, ``d`` being the distance to
    the nearest singular point.  A displacement below ``1e-14`` times the local
    scale ``min(max(1, |x|), d)`` is reported as ``collapsed``.
    """
    return _step(fld, CHART_CODES[state.chart], state.x, state.L, proposed_h, rtol, h_max, k1)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Sampled geodesic.

    ``pos`` holds chart coordinates tagged by ``chart``: 0 is ``z``, 1 is
    ``w = 1/z`` and ``2 + j`` is ``z - p_j``, used close to pole ``j`` so that
    the offset from the pole keeps full relative precision.
    """

    conn: FuchsianConnection
    spec: GeodesicSpec
    C0: complex
    k: Optional[int]
    t: np.ndarray
    chart: np.ndarray
    pos: np.ndarray
    L: np.ndarray
    logs: np.ndarray
    sheet: np.ndarray
    stop: StopReason
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def _centers(self) -> np.ndarray:
        table = np.array([0j, 0j] + list(self.conn.poles), dtype=complex)
        return table[self.chart.astype(np.int64)]

    @property
    def vel(self) -> np.ndarray:
        """Chart velocities ``C exp(-L)``."""
        return self.C0 * np.exp(-self.L)

    @property
    def base_pos(self) -> np.ndarray:
        """Positions in ``z`` (charts 0 and 2+j) or ``w`` (chart 1)."""
        return self.pos + self._centers()

    @property
    def z(self) -> np.ndarray:
        """Positions in the finite chart (``inf`` at ``w = 0``)."""
        out = self.base_pos
        w = self.chart == 1
        with np.errstate(divide="ignore", invalid="ignore"):
            out[w] = 1.0 / self.pos[w]
        out[w & (self.pos == 0)] = complex(np.inf, 0.0)
        return out

    @property
    def vel_z(self) -> np.ndarray:
        """Velocities in the finite chart."""
        v = self.vel
        w = self.chart == 1
        with np.errstate(divide="ignore", invalid="ignore"):
            v[w] = -v[w] / self.pos[w] ** 2
        return v

    def holonomy_log(self) -> np.ndarray:
        """``K`` in the sample's chart, from the continued logs."""
        res = np.asarray(self.conn.residues, dtype=complex)
        K = self.logs @ res if res.size else np.zeros(len(self.t), dtype=complex)
        w = self.chart == 1
        K[w] += np.log(-1.0 / self.pos[w] ** 2)
        return K

    def drift_series(self) -> np.ndarray:
        """``|exp(K) v / C - 1|`` per sample."""
        return np.abs(np.expm1(self.holonomy_log() - self.L))

    def drift(self) -> float:
        return float(np.max(self.drift_series())) if len(self.t) else 0.0

    def drift_rate(self) -> float:
        """Largest drift divided by elapsed time (at least 1)."""
        if not len(self.t):
            return 0.0
        return float(np.max(self.drift_series() / np.maximum(self.t - self.t[0], 1.0)))

    def state(self, i: int) -> FlowState:
        code = int(self.chart[i])
        return FlowState(float(self.t[i]), chart_name(code), complex(self.base_pos[i]),
                         complex(self.L[i]), tuple(complex(v) for v in self.logs[i]), int(self.sheet[i]))

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in jsonl_records(self):
                fh.write(json.dumps(rec) + "\n")


def jsonl_records(traj: Trajectory):
    v = traj.vel
    pos = traj.base_pos
    for i in range(len(traj.t)):
        yield {
            "t": float(traj.t[i]),
            "chart": chart_name(int(traj.chart[i])),
            "pos": [float(pos[i].real), float(pos[i].imag)],
            "vel": [float(v[i].real), float(v[i].imag)],
            "sheet": int(traj.sheet[i]),
        }
    yield traj.stop.to_json()


def field_for(traj: Trajectory) -> _Field:
    return _Field(traj.conn, traj.C0)


def flow(traj: Trajectory, i: int, tau: float, fld: Optional[_Field] = None):
    """Re-integrate from sample ``i`` by time ``tau`` (either sign) in the sample's chart.

    Returns ``(x, L)``.  Sub-steps are no longer than the local sample spacing.
    """
    fld = fld or field_for(traj)
    code = int(traj.chart[i])
    x = complex(traj.pos[i])
    L = complex(traj.L[i])
    if tau == 0.0:
        return x, L
    n = len(traj.t)
    if i + 1 < n:
        ref = float(traj.t[i + 1] - traj.t[i])
    else:
        ref = float(traj.t[i] - traj.t[i - 1]) if i > 0 else abs(tau)
    ref = ref if ref > 0 else abs(tau)
    m = max(1, int(math.ceil(abs(tau) / ref - 1e-12)))
    h = tau / m
    for _ in range(m):
        x, L, _, _, _ = fld.dp5(code, x, L, h)
    return x, L


def _initial(conn: FuchsianConnection, spec: GeodesicSpec):
    z0 = spec.start
    for j, p in enumerate(conn.poles):
        if chordal_distance(z0, p) <= 1e-12:
            raise StartAtPole(f"start {z0} is pole {j}")
    v0 = spec.direction * spec.speed
    if spec.normalization == "unit-metric-speed":
        if not conn.has_real_residues:
            raise NonRealResidues("unit-metric-speed needs real residues")
        v0 = spec.direction / metric_density(conn, z0)
    logs = principal_logs(conn.poles, z0, FINITE)
    K = sum((r * lg for r, lg in zip(conn.residues, logs)), 0j)
    C0 = cmath.exp(K) * v0
    return C0, z0, K, logs


def _rechart(conn: FuchsianConnection, code: int, x: complex, L: complex, r_out: float, w_out: float):
    """Chart to continue in after a step; returns ``(code, x, L)``."""
    if code == 0:
        if conn.include_infinity and abs(x) > r_out:
            return 1, 1.0 / x, L + cmath.log(-x * x)
        for j, p in enumerate(conn.poles):
            if abs(x - p) < CENTER_ENTER * max(1.0, abs(p)):
                return 2 + j, x - p, L
    elif code == 1:
        if abs(x) > w_out:
            return _rechart(conn, 0, 1.0 / x, L + cmath.log(-x * x), r_out, w_out)
    else:
        p = conn.poles[code - 2]
        if abs(x) > CENTER_LEAVE * max(1.0, abs(p)):
            return _rechart(conn, 0, x + p, L, r_out, w_out)
    return code, x, L


def _is_closed_return(x0: complex, v0: complex, x: complex, v: complex) -> bool:
    if abs(x - x0) > CLOSE_POS_TOL * max(1.0, abs(x0)):
        return False
    ratio = v / v0
    return ratio.real > 0 and abs(cmath.phase(ratio)) < CLOSE_DIR_TOL


def heading_into(dx: complex, v: complex, rho: complex) -> bool:
    """Whether a geodesic at offset ``dx`` from a pole with residue ``rho`` is falling into it.

    For ``Re rho <= -1`` the pole is at infinite distance and every inward
    motion close to it is captured.  Otherwise the pole is reached in finite
    time only along one direction: in the local chart
    ``zeta = dx**(rho + 1) / (rho + 1)`` the geodesic is a straight line, and
    it must point at ``zeta = 0`` (``zeta / zeta'`` negative real, to 1e-3 rad).
    """
    if rho.real <= -1.0:
        return (dx.conjugate() * v).real < 0
    q = -dx / ((rho + 1.0) * v)
    return q.real > 0 and abs(q.imag) < 1e-3 * q.real


def integrate(conn: FuchsianConnection, spec: GeodesicSpec) -> Trajectory:
    """Integrate the geodesic with initial condition ``spec`` until a stop condition fires.

    Stop reasons: ``PoleReached(j)`` (chordal distance below 1e-6 while
    falling in, or step collapse; infinity has index ``len(poles)``),
    ``Escaped`` (left the optional escape disk, or ``|z| > r_out`` for a
    connection restricted to C), ``ClosedDetected`` (returned to the start
    with the same direction) and ``BudgetExhausted``.
    """
    C0, z0, L, logs = _initial(conn, spec)
    fld = _Field(conn, C0)
    k = minimal_k(conn)
    shifts = [sheet_shift(conn, j, k) for j in range(conn.n_poles)] if k else None
    r_out = spec.r_out
    w_out = 1.0 / spec.chart_in
    code, x, L = _rechart(conn, 0, z0, L, r_out, w_out)
    t, sheet = 0.0, 0

    ts = [0.0]
    charts = [code]
    xs = [x]
    Ls = [L]
    logs_list = [tuple(logs)]
    sheets = [0]

    start_base = 1 if code == 1 else 0
    start_x = fld.to_base(code, x)
    start_v = C0 * cmath.exp(-L)
    left_start = False
    g_prev = 0.0

    max_time = spec.max_time
    if spec.max_arclength < math.inf:
        if not conn.has_real_residues:
            raise NonRealResidues("arclength budget needs real residues")
        max_time = min(max_time, spec.max_arclength / abs(C0))
    has_escape = spec.escape_radius is not None
    esc_c = complex(spec.escape_center or 0j)
    esc_r = spec.escape_radius

    h = spec.h_max / max(abs(start_v), 1e-300)
    k1 = None
    stop = None
    while stop is None:
        if len(ts) >= spec.max_samples:
            stop = StopReason("BudgetExhausted")
            break
        remaining = max_time - t
        if remaining <= 0:
            stop = StopReason("BudgetExhausted")
            break
        res = _step(fld, code, x, L, min(h, remaining), spec.rtol, spec.h_max, k1)
        if res.collapsed:
            stop = StopReason("PoleReached", _nearest_label(fld, code, x))
            break
        x_new, L_new = res.x, res.L
        logs_new = fld.advance(code, logs, x, x_new)
        if shifts is not None:
            for j in range(len(shifts)):
                c = cut_crossings(logs[j], logs_new[j])
                if c:
                    sheet = (sheet + c * shifts[j]) % k
        t_old, x_old, L_old, logs_old = t, x, L, logs
        t = t + res.h if res.h < remaining else max_time
        x, L, logs = x_new, L_new, logs_new
        h = res.next_h
        k1 = res.k_last
        v = C0 * cmath.exp(-L)

        # closed-orbit detection against the start sample
        if spec.detect_closed and (code == 1) == (start_base == 1):
            bx = fld.to_base(code, x)
            dist = abs(bx - start_x)
            g = ((bx - start_x) * start_v.conjugate()).real
            if not left_start:
                left_start = dist > LEAVE_START * max(1.0, abs(start_x))
            elif g_prev < 0.0 <= g and dist < 10.0 * abs(x - x_old) + 1e-6:
                hit = _refine_return(fld, code, x_old, L_old, res.h, start_x, start_v)
                if hit is not None:
                    tau, xr, Lr = hit
                    lr = fld.advance(code, logs_old, x_old, xr)
                    ts.append(t_old + tau)
                    charts.append(code)
                    xs.append(xr)
                    Ls.append(Lr)
                    logs_list.append(tuple(lr))
                    sheets.append(_sheet_after(sheets[-1], logs_old, lr, shifts, k))
                    stop = StopReason("ClosedDetected")
                    break
            g_prev = g

        ts.append(t)
        charts.append(code)
        xs.append(x)
        Ls.append(L)
        logs_list.append(tuple(logs))
        sheets.append(sheet)

        # pole arrival
        bx = fld.to_base(code, x)
        for p_loc, p_base, rho, lab in fld.chart(code).labelled:
            dx = x - p_loc
            chord = 2.0 * abs(dx) / math.sqrt((1.0 + abs(bx) ** 2) * (1.0 + abs(p_base) ** 2))
            if chord < POLE_CHORDAL and heading_into(dx, v, rho):
                stop = StopReason("PoleReached", lab)
                break
        if stop is not None:
            break

        if has_escape:
            zf = bx if code != 1 else (1.0 / x if x != 0 else complex(math.inf))
            if cmath.isinf(zf) or abs(zf - esc_c) > esc_r:
                stop = StopReason("Escaped")
                break
        if not conn.include_infinity and abs(bx) > r_out:
            stop = StopReason("Escaped")
            break

        new_code, x2, L2 = _rechart(conn, code, x, L, r_out, w_out)
        if new_code != code:
            # the last sample now carries the representation used for the next step
            code, x, L, k1 = new_code, x2, L2, None
            charts[-1] = code
            xs[-1] = x
            Ls[-1] = L

    npl = conn.n_poles
    logs_arr = np.array(logs_list, dtype=complex).reshape(len(ts), npl)
    return Trajectory(
        conn=conn, spec=spec, C0=C0, k=k,
        t=np.array(ts), chart=np.array(charts, dtype=np.int16), pos=np.array(xs, dtype=complex),
        L=np.array(Ls, dtype=complex), logs=logs_arr, sheet=np.array(sheets, dtype=np.int64),
        stop=stop,
    )


def _sheet_after(sheet, logs0, logs1, shifts, k):
    if shifts is None:
        return sheet
    for j, s in enumerate(shifts):
        c = cut_crossings(logs0[j], logs1[j])
        if c:
            sheet = (sheet + c * s) % k
    return sheet


def _nearest_label(fld: _Field, code: int, x: complex) -> Optional[int]:
    best, lab = math.inf, None
    for p_loc, _, _, j in fld.chart(code).labelled:
        d = abs(x - p_loc)
        if d < best:
            best, lab = d, j
    return lab


def _refine_return(fld: _Field, code, x_old, L_old, h, x0, v0):
    """Locate the crossing of the normal line through the start inside the last step."""
    def g_of(tau):
        x, L = (fld.dp5(code, x_old, L_old, tau)[:2]) if tau else (x_old, L_old)
        bx = fld.to_base(code, x)
        return ((bx - x0) * v0.conjugate()).real, x, L

    lo, hi = 0.0, h
    g_lo = g_of(lo)[0]
    g_hi = g_of(hi)[0]
    if not (g_lo < 0.0 <= g_hi):
        return None
    tau = hi
    for _ in range(80):
        # secant with bisection safeguard
        tau = hi - g_hi * (hi - lo) / (g_hi - g_lo) if g_hi != g_lo else 0.5 * (lo + hi)
        if not (lo < tau < hi):
            tau = 0.5 * (lo + hi)
        g, x, L = g_of(tau)
        if abs(g) <= 1e-15 * max(1.0, abs(x0)) * abs(v0) or hi - lo < 1e-15 * max(1.0, h):
            break
        if g < 0.0:
            lo, g_lo = tau, g
        else:
            hi, g_hi = tau, g
    g, x, L = g_of(tau)
    v = fld.C0 * cmath.exp(-L)
    if _is_closed_return(x0, v0, fld.to_base(code, x), v):
        return tau, x, L
    return None


# ---------------------------------------------------------------------------
# Fans
# ---------------------------------------------------------------------------


def _integrate_args(args):
    conn, spec = args
    return integrate(conn, spec)


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def integrate_many(conn_specs: Sequence, jobs: Optional[int] = None) -> List[Trajectory]:
    """Integrate ``(conn, spec)`` pairs, in parallel when ``jobs > 1``; results keep input order."""
    conn_specs = list(conn_specs)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(conn_specs) <= 1:
        return [integrate(c, s) for c, s in conn_specs]
    with ProcessPoolExecutor(max_workers=min(jobs, len(conn_specs))) as ex:
        return list(ex.map(_integrate_args, conn_specs, chunksize=1))


def fan_directions(n: int) -> list:
    return [cmath.exp(2j * math.pi * j / n) for j in range(n)]


def shoot_fan(conn: FuchsianConnection, center: complex, n_directions: int,
              spec_template: Optional[GeodesicSpec] = None, jobs: Optional[int] = 1) -> List[Trajectory]:
    """Geodesics from ``center`` in the directions ``exp(2 pi i j / n)``, in that order."""
    if n_directions < 1:
        raise ValueError("n_directions must be at least 1")
    base = spec_template or GeodesicSpec(center)
    specs = [replace(base, start=complex(center), direction=d) for d in fan_directions(n_directions)]
    return integrate_many([(conn, s) for s in specs], jobs)


def reverse_spec(traj: Trajectory, **overrides) -> GeodesicSpec:
    """Spec that integrates ``traj`` backwards from its last sample."""
    z_end = complex(traj.z[-1])
    v_end = complex(traj.vel_z[-1])
    fields = dict(start=z_end, direction=-v_end / abs(v_end), normalization="affine", speed=abs(v_end),
                  max_time=float(traj.t[-1] - traj.t[0]), detect_closed=False)
    fields.update(overrides)
    return replace(traj.spec, **fields)
