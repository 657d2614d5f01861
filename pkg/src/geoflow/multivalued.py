"""Branch tracking for the multivalued primitive ``K(z) = sum_j rho_j log(z - p_j)``.

Each ``log(z - p_j)`` is continued step by step with principal-branch
increments, which is exact as long as every step is shorter than the distance
to the nearest point the logarithms wind around.  The continued logs give the
holonomy transport ``exp(K)``, the trajectory argument and the sheet index of
the canonical k-sheeted cover.  Sheet bookkeeping uses the horizontal cuts
``{p_j + t : t > 0}``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .connection import (
    FINITE,
    INFINITY,
    K_MAX,
    RATIONAL_TOL,
    FuchsianConnection,
    normalize_chart,
)
from .errors import KUndefined, SegmentHitsPole, StepTooLarge

TWO_PI = 2.0 * math.pi


def tracking_points(poles: Sequence[complex], chart: str) -> tuple:
    """Points of ``chart`` around which some ``log(z - p_j)`` winds."""
    if normalize_chart(chart) == FINITE:
        return tuple(poles)
    pts = tuple(1.0 / p for p in poles if p != 0)
    return pts + (0j,)


def principal_logs(poles: Sequence[complex], x: complex, chart: str = FINITE) -> list:
    """Principal values of ``log(z - p_j)`` at the point with chart coordinate ``x``."""
    if normalize_chart(chart) == FINITE:
        return [cmath.log(x - p) for p in poles]
    return [cmath.log((1.0 - p * x) / x) for p in poles]


def advance_logs(poles: Sequence[complex], chart: str, logs: Sequence[complex],
                 x0: complex, x1: complex) -> list:
    """Continue ``logs`` from ``x0`` to ``x1`` (same chart) without contract checks.

    The increment is the principal log of the ratio of the two values; the
    result is then snapped to the principal log of the endpoint plus the
    tracked multiple of ``2 pi i`` so that ``exp(log) = z - p_j`` holds to
    rounding.
    """
    out = []
    if chart == FINITE:
        for p, lg in zip(poles, logs):
            a = x0 - p
            b = x1 - p
            guess = lg + cmath.log(b / a)
            prin = cmath.log(b)
            n = round((guess.imag - prin.imag) / TWO_PI)
            out.append(complex(prin.real, prin.imag + TWO_PI * n))
        return out
    dw = cmath.log(x1 / x0)
    for p, lg in zip(poles, logs):
        if p == 0:
            guess = lg - dw
        else:
            q = 1.0 / p
            guess = lg + cmath.log((x1 - q) / (x0 - q)) - dw
        prin = cmath.log((1.0 - p * x1) / x1)
        n = round((guess.imag - prin.imag) / TWO_PI)
        out.append(complex(prin.real, prin.imag + TWO_PI * n))
    return out


@dataclass(frozen=True)
class HolonomyState:
    """Continued logarithms ``log(z - p_j)`` at a point of a chart.

    ``position`` is the chart coordinate (``z`` or ``w = 1/z``); the logs always
    refer to the finite-chart quantities ``z - p_j``.
    """

    position: complex
    logs: tuple
    poles: tuple
    chart: str = FINITE

    @classmethod
    def start(cls, poles: Sequence[complex], x: complex, chart: str = FINITE) -> "HolonomyState":
        chart = normalize_chart(chart)
        poles = tuple(complex(p) for p in poles)
        return cls(complex(x), tuple(principal_logs(poles, x, chart)), poles, chart)

    def z(self) -> complex:
        """Position in the finite chart."""
        return self.position if self.chart == FINITE else 1.0 / self.position


def _segment_distance(a: complex, b: complex, q: complex) -> float:
    d = b - a
    den = abs(d) ** 2
    if den == 0.0:
        return abs(q - a)
    s = ((q - a) * d.conjugate()).real / den
    s = min(1.0, max(0.0, s))
    return abs(a + s * d - q)


def continue_along(state: HolonomyState, step_to: complex) -> HolonomyState:
    """Continue ``state`` along the straight segment to ``step_to``.

    Raises
    ------
    SegmentHitsPole
        The segment passes through a tracked point.
    StepTooLarge
        The step is longer than the distance from the start to the nearest
        tracked point (a step of exactly that length cannot wind around it).
    """
    x0 = state.position
    x1 = complex(step_to)
    pts = tracking_points(state.poles, state.chart)
    for q in pts:
        if _segment_distance(x0, x1, q) <= 1e-15 * (1.0 + abs(q)):
            raise SegmentHitsPole(f"segment {x0} -> {x1} meets {q}")
    step = abs(x1 - x0)
    if pts and step > min(abs(x0 - q) for q in pts):
        raise StepTooLarge(f"step {step:.3g} exceeds distance to nearest pole")
    logs = advance_logs(state.poles, state.chart, state.logs, x0, x1)
    return HolonomyState(x1, tuple(logs), state.poles, state.chart)


def holonomy_factor(state: HolonomyState, residues: Sequence[complex]) -> complex:
    """Continued value of ``prod_j (z - p_j)**rho_j``, i.e. ``exp(sum rho_j log(z - p_j))``."""
    return cmath.exp(sum((r * lg for r, lg in zip(residues, state.logs)), 0j))


# ---------------------------------------------------------------------------
# Monodromy and the integer k
# ---------------------------------------------------------------------------


def monodromy_generators(conn: FuchsianConnection) -> list:
    """``exp(2 pi i rho)`` for every singular point, the point at infinity last."""
    return [cmath.exp(2j * math.pi * r) for r in conn.all_residues]


def loop_integral(conn: FuchsianConnection, j: int, radius: Optional[float] = None,
                  n: int = 512) -> complex:
    """``oint eta`` over a small counter-clockwise circle around singular point ``j``.

    Trapezoid rule on the circle, which converges geometrically for the
    periodic analytic integrand.  For the point at infinity the circle lives
    in the chart ``w``.
    """
    if j == conn.infinity_index:
        chart, centre = INFINITY, 0j
    else:
        chart, centre = FINITE, conn.poles[j]
    pts, res, _ = conn.chart_singularities(chart)
    others = [abs(p - centre) for p in pts if p != centre]
    if radius is None:
        radius = 0.5 * min(others) if others else 1.0
    total = 0j
    for i in range(n):
        e = cmath.exp(2j * math.pi * i / n)
        x = centre + radius * e
        f = 0j
        for p, r in zip(pts, res):
            f += r / (x - p)
        total += f * (1j * radius * e)
    return total * (2.0 * math.pi / n)


def loop_monodromy(conn: FuchsianConnection, j: int, radius: Optional[float] = None,
                   n: int = 512) -> complex:
    return cmath.exp(loop_integral(conn, j, radius, n))


def _is_integer(x: float, tol: float = RATIONAL_TOL) -> bool:
    return abs(x - round(x)) <= tol


def minimal_k(conn: FuchsianConnection, k_max: int = K_MAX) -> Optional[int]:
    """Smallest ``k <= k_max`` with every ``k * Re(rho)`` integral (infinity included), else None."""
    for k in range(1, k_max + 1):
        if all(_is_integer(k * r.real) for r in conn.all_residues):
            return k
    return None


def sheet_shift(conn: FuchsianConnection, pole_index: int, k: int) -> int:
    """Gluing shift ``m_j = round(k Re rho_j)`` of pole ``pole_index``."""
    kr = k * conn.residue(pole_index).real
    if not _is_integer(kr):
        raise KUndefined(f"k={k} does not clear the denominator of pole {pole_index}")
    return round(kr)


def sheet_index_update(current_sheet: int, pole_index: int, crossing_direction: int,
                       conn: FuchsianConnection, k: Optional[int]) -> int:
    """Sheet after crossing the cut of ``pole_index``; ``crossing_direction`` is +1 (CCW) or -1.

    Larger magnitudes count repeated crossings in the same direction.
    """
    if k is None:
        raise KUndefined("no k <= 64 clears the residue denominators")
    return (current_sheet + crossing_direction * sheet_shift(conn, pole_index, k)) % k


def cut_crossings(log_old: complex, log_new: complex) -> int:
    """Signed number of crossings of the cut ``{p + t : t > 0}`` between two continued logs."""
    return math.floor(log_new.imag / TWO_PI) - math.floor(log_old.imag / TWO_PI)


def sheet_from_logs(conn: FuchsianConnection, k: int, logs0: Sequence[complex],
                    logs1: Sequence[complex], sheet0: int = 0) -> int:
    """Sheet reached from ``sheet0`` along a path whose endpoint logs are ``logs0``, ``logs1``."""
    s = sheet0
    for j, (a, b) in enumerate(zip(logs0, logs1)):
        c = cut_crossings(a, b)
        if c:
            s = sheet_index_update(s, j, c, conn, k)
    return s


# ---------------------------------------------------------------------------
# Trajectory argument
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryArgument:
    """Argument of ``exp(K) * velocity`` in ``[0, 2 pi)``, compared modulo ``(2 pi / k) Z``.

    ``k = None`` means the argument group is not a finite cyclic group; such
    arguments are then compared modulo ``2 pi`` only.
    """

    theta: float
    k: Optional[int] = None

    def reduced(self) -> float:
        period = TWO_PI / self.k if self.k else TWO_PI
        return self.theta % period

    def same_class(self, other: "TrajectoryArgument", tol: float = 1e-6) -> bool:
        period = TWO_PI / self.k if self.k else TWO_PI
        d = (self.theta - other.theta) % period
        return min(d, period - d) <= tol


def trajectory_argument(conn: FuchsianConnection, state: HolonomyState, velocity: complex,
                        k: Optional[int] = None) -> TrajectoryArgument:
    """Trajectory argument of a geodesic through ``state`` with finite-chart ``velocity``."""
    c = holonomy_factor(state, conn.residues) * velocity
    return TrajectoryArgument(cmath.phase(c) % TWO_PI, k if k is not None else minimal_k(conn))
