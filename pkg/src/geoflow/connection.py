"""Fuchsian connections, k-differentials and singular flat metrics on the Riemann sphere.

The sphere is covered by two charts: the finite chart ``z`` and the chart at
infinity ``w = 1/z``.  A connection is stored through its finite poles and
residues; the residue at infinity is always derived from the residue theorem
``sum(residues) + rho_inf = -2`` and never supplied by the caller.

In the finite chart the connection form is ``f(z) dz`` with
``f(z) = sum_j rho_j / (z - p_j)``.  In the chart at infinity it is again a
sum of simple fractions, with poles at ``1/p_j`` (for ``p_j != 0``) and at
``w = 0`` carrying ``rho_inf``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DuplicatePoles,
    EvaluationAtPole,
    NonRealResidues,
    ResiduesNotInOneOverKZ,
    ZeroResidue,
)

POLE_SEPARATION = 1e-12
RATIONAL_TOL = 1e-9
K_MAX = 64
REAL_TOL = 1e-12

FINITE = "z"
INFINITY = "w"
_CHART_ALIASES = {"z": FINITE, "finite": FINITE, "w": INFINITY, "infinity": INFINITY, "inf": INFINITY}


def normalize_chart(chart: str) -> str:
    try:
        return _CHART_ALIASES[chart]
    except KeyError:
        raise ValueError(f"unknown chart {chart!r}") from None


def chordal_distance(a: complex, b: complex) -> float:
    """Chordal distance on the unit sphere; either argument may be ``inf``."""
    a_inf = cmath.isinf(a)
    b_inf = cmath.isinf(b)
    if a_inf and b_inf:
        return 0.0
    if a_inf:
        return 2.0 / math.sqrt(1.0 + abs(b) ** 2)
    if b_inf:
        return 2.0 / math.sqrt(1.0 + abs(a) ** 2)
    return 2.0 * abs(a - b) / math.sqrt((1.0 + abs(a) ** 2) * (1.0 + abs(b) ** 2))


def parse_complex(value) -> complex:
    """Read a complex number from the wire form ``[re, im]`` (plain numbers also accepted)."""
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigError(f"complex numbers are [re, im] pairs, got {value!r}")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, (int, float, complex)) and not isinstance(value, bool):
        return complex(value)
    raise ConfigError(f"cannot read complex number from {value!r}")


def complex_to_wire(z: complex) -> list:
    return [z.real, z.imag]


# ---------------------------------------------------------------------------
# Fuchsian connections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    n_poles: int
    distinct_poles: bool
    nonzero_residues: bool
    residue_at_infinity: complex
    infinity_singular: bool
    min_pole_separation: float


@dataclass(frozen=True)
class FuchsianConnection:
    """Fuchsian meromorphic connection on P^1 given by its finite poles and residues.

    Parameters
    ----------
    poles, residues : sequences of complex
        Finite poles ``p_j`` and their residues ``rho_j``.
    include_infinity : bool
        When False the connection is studied on C only: the chart at infinity
        is never entered and the residue-sum bookkeeping is informational.
    """

    poles: tuple = ()
    residues: tuple = ()
    include_infinity: bool = True

    def __post_init__(self):
        object.__setattr__(self, "poles", tuple(complex(p) for p in self.poles))
        object.__setattr__(self, "residues", tuple(complex(r) for r in self.residues))
        validate(self)

    @property
    def n_poles(self) -> int:
        return len(self.poles)

    @property
    def infinity_index(self) -> int:
        """Index used for the point at infinity in pole labels."""
        return len(self.poles)

    @property
    def residue_at_infinity(self) -> complex:
        return -2.0 - sum(self.residues, 0j)

    @property
    def infinity_is_pole(self) -> bool:
        return self.include_infinity and abs(self.residue_at_infinity) > REAL_TOL

    def residue(self, j: int) -> complex:
        if j == self.infinity_index:
            return self.residue_at_infinity
        return self.residues[j]

    def pole_point(self, j: int) -> complex:
        """Position of pole ``j`` in the finite chart (``inf`` for the point at infinity)."""
        if j == self.infinity_index:
            return complex(math.inf, 0.0)
        return self.poles[j]

    @property
    def all_residues(self) -> tuple:
        """Residues of every singular point, the point at infinity last."""
        if self.include_infinity:
            return self.residues + (self.residue_at_infinity,)
        return self.residues

    @property
    def has_real_residues(self) -> bool:
        return all(abs(r.imag) <= REAL_TOL for r in self.all_residues)

    @cached_property
    def _chart_data(self) -> dict:
        z_pts = self.poles
        z_res = self.residues
        z_lab = tuple(range(self.n_poles))
        w_pts, w_res, w_lab = [], [], []
        for j, (p, r) in enumerate(zip(self.poles, self.residues)):
            if p != 0:
                w_pts.append(1.0 / p)
                w_res.append(r)
                w_lab.append(j)
        if self.infinity_is_pole:
            w_pts.append(0j)
            w_res.append(self.residue_at_infinity)
            w_lab.append(self.infinity_index)
        return {
            FINITE: (z_pts, z_res, z_lab),
            INFINITY: (tuple(w_pts), tuple(w_res), tuple(w_lab)),
        }

    def chart_singularities(self, chart: str):
        """Poles of the local connection form in ``chart`` as ``(points, residues, labels)``."""
        return self._chart_data[normalize_chart(chart)]

    def chart_tracking_points(self, chart: str) -> tuple:
        """Points a continuation step must keep clear of in ``chart``.

        In the chart at infinity ``w = 0`` is always included because the logs
        ``log(z - p_j)`` wind around it even when infinity is a regular point.
        """
        chart = normalize_chart(chart)
        pts = self._chart_data[chart][0]
        if chart == INFINITY and 0j not in pts:
            pts = pts + (0j,)
        return pts

    def to_json(self) -> dict:
        doc = {
            "poles": [complex_to_wire(p) for p in self.poles],
            "residues": [complex_to_wire(r) for r in self.residues],
        }
        if not self.include_infinity:
            doc["include_infinity"] = False
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "FuchsianConnection":
        try:
            poles = [parse_complex(p) for p in doc.get("poles", [])]
            residues = [parse_complex(r) for r in doc.get("residues", [])]
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(str(exc)) from exc
        if len(poles) != len(residues):
            raise ConfigError("'poles' and 'residues' must have the same length")
        return cls(poles, residues, bool(doc.get("include_infinity", True)))


def validate(conn: FuchsianConnection) -> ValidationReport:
    """Check the structural invariants of ``conn`` and report the derived residue at infinity.

    Raises
    ------
    DuplicatePoles
        Two poles closer than 1e-12 in the chordal metric.
    ZeroResidue
        A stored residue equal to zero (such a point is not a pole).
    """
    if len(conn.poles) != len(conn.residues):
        raise ValueError("poles and residues must have the same length")
    for v in conn.poles + conn.residues:
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise ValueError("poles and residues must be finite")
    min_sep = math.inf
    for i in range(len(conn.poles)):
        for j in range(i + 1, len(conn.poles)):
            d = chordal_distance(conn.poles[i], conn.poles[j])
            min_sep = min(min_sep, d)
            if d <= POLE_SEPARATION:
                raise DuplicatePoles(f"poles {i} and {j} coincide ({conn.poles[i]})")
    for j, r in enumerate(conn.residues):
        if r == 0:
            raise ZeroResidue(f"residue of pole {j} is zero")
    rho_inf = -2.0 - sum(conn.residues, 0j)
    return ValidationReport(
        n_poles=len(conn.poles),
        distinct_poles=True,
        nonzero_residues=True,
        residue_at_infinity=rho_inf,
        infinity_singular=conn.include_infinity and abs(rho_inf) > REAL_TOL,
        min_pole_separation=min_sep,
    )


def local_coefficient(points: Sequence[complex], residues: Sequence[complex], x: complex) -> complex:
    f = 0j
    for p, r in zip(points, residues):
        f += r / (x - p)
    return f


def coefficient_at(conn: FuchsianConnection, z: complex, chart: str = FINITE) -> complex:
    """Coefficient ``f`` of the local connection form ``f dx`` at chart coordinate ``z``.

    In the chart at infinity the value equals ``-f(1/w)/w**2 - 2/w``, evaluated
    through its partial-fraction form so that ``w = 0`` is fine when infinity
    is a regular point.
    """
    chart = normalize_chart(chart)
    if chart == INFINITY and not conn.include_infinity:
        raise ValueError("connection restricted to C has no chart at infinity")
    pts, res, _ = conn.chart_singularities(chart)
    z = complex(z)
    for p in pts:
        if abs(z - p) <= 1e-15 * (1.0 + abs(p)):
            raise EvaluationAtPole(f"{z} is a pole in chart {chart}")
    return local_coefficient(pts, res, z)


# ---------------------------------------------------------------------------
# Chart transition z <-> w = 1/z
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartTransition:
    """The single transition of the two-chart atlas, ``w = 1/z``.

    ``xi`` is the cocycle ``dz/dw = -1/w**2`` used in the transformation rule
    ``eta_w = eta_z + d(xi)/xi``.
    """

    kind: str = "finite-to-infinity"

    @staticmethod
    def to_infinity(z: complex) -> complex:
        return 1.0 / z

    @staticmethod
    def to_finite(w: complex) -> complex:
        return 1.0 / w

    @staticmethod
    def xi(w: complex) -> complex:
        return -1.0 / (w * w)

    @staticmethod
    def velocity_to_infinity(z: complex, v: complex) -> complex:
        return -v / (z * z)

    @staticmethod
    def velocity_to_finite(w: complex, v: complex) -> complex:
        return -v / (w * w)


def to_chart(z: complex, chart: str) -> complex:
    """Finite-chart point ``z`` expressed in ``chart`` (``inf`` maps to 0)."""
    if normalize_chart(chart) == FINITE:
        return z
    if cmath.isinf(z):
        return 0j
    return 1.0 / z


def from_chart(x: complex, chart: str) -> complex:
    if normalize_chart(chart) == FINITE:
        return x
    if x == 0:
        return complex(math.inf, 0.0)
    return 1.0 / x


# ---------------------------------------------------------------------------
# k-differentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KDifferential:
    """Rational k-differential ``q = scale * prod (z - p_j)**m_j (dz)**k``."""

    order: int
    points: tuple = ()
    exponents: tuple = ()
    scale: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(complex(p) for p in self.points))
        object.__setattr__(self, "exponents", tuple(int(m) for m in self.exponents))
        object.__setattr__(self, "scale", complex(self.scale))
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("order k must be a positive integer")
        if len(self.points) != len(self.exponents):
            raise ValueError("points and exponents must have the same length")
        if any(m == 0 for m in self.exponents):
            raise ValueError("exponents must be nonzero")
        if self.scale == 0:
            raise ValueError("scale must be nonzero")
        for i in range(len(self.points)):
            for j in range(i + 1, len(self.points)):
                if chordal_distance(self.points[i], self.points[j]) <= POLE_SEPARATION:
                    raise DuplicatePoles(f"points {i} and {j} coincide")

    @property
    def order_at_infinity(self) -> int:
        return -2 * self.order - sum(self.exponents)

    def value(self, z: complex) -> complex:
        """Local representative ``q(z)`` in the finite chart."""
        out = self.scale
        for p, m in zip(self.points, self.exponents):
            out *= (z - p) ** m
        return out


def connection_from_kdiff(q: KDifferential) -> FuchsianConnection:
    """The connection adapted to ``q``, with local form ``dq/(k q)`` and residues ``m_j/k``."""
    return FuchsianConnection(q.points, [m / q.order for m in q.exponents])


def kdiff_from_connection(conn: FuchsianConnection, k: int) -> KDifferential:
    """The k-differential adapted to ``conn`` (defined up to a constant; scale 1 is returned).

    Raises
    ------
    ResiduesNotInOneOverKZ
        If some ``k * rho_j`` is not an integer within 1e-9.
    """
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    exponents = []
    for j, r in enumerate(conn.all_residues):
        kr = k * r
        m = round(kr.real)
        if abs(kr.real - m) > RATIONAL_TOL or abs(kr.imag) > RATIONAL_TOL:
            raise ResiduesNotInOneOverKZ(f"residue {r} of singular point {j} is not in (1/{k})Z")
        if j < conn.n_poles:
            exponents.append(m)
    return KDifferential(k, conn.poles, exponents, 1.0)


# ---------------------------------------------------------------------------
# Singular flat metrics
# ---------------------------------------------------------------------------


def _poly(coeffs: Sequence[complex], z: complex) -> complex:
    out = 0j
    for c in reversed(coeffs):
        out = out * z + c
    return out


@dataclass(frozen=True)
class SingularFlatMetric:
    """Metric ``prod |z - z_j|**c_j * exp(Re F(z)) |dz|`` on C.

    ``F`` is a polynomial given by its coefficients, constant term first.
    """

    points: tuple = ()
    residues: tuple = ()
    F: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(complex(p) for p in self.points))
        res = []
        for c in self.residues:
            c = complex(c)
            if abs(c.imag) > REAL_TOL:
                raise NonRealResidues("metric residues are real numbers")
            res.append(c.real)
        object.__setattr__(self, "residues", tuple(res))
        object.__setattr__(self, "F", tuple(complex(c) for c in self.F))
        if len(self.points) != len(self.residues):
            raise ValueError("points and residues must have the same length")

    def log_density(self, z: complex) -> float:
        u = _poly(self.F, z).real if self.F else 0.0
        for p, c in zip(self.points, self.residues):
            d = abs(z - p)
            if d == 0:
                raise EvaluationAtPole(f"{z} is a singular point of the metric")
            u += c * math.log(d)
        return u

    def density(self, z: complex) -> float:
        return math.exp(self.log_density(z))

    def connection(self) -> FuchsianConnection:
        """The unique connection adapted to this metric (residues carried over unchanged).

        Only constant ``F`` is accepted: a non-constant polynomial would make
        infinity an irregular pole.
        """
        if any(c != 0 for c in self.F[1:]):
            raise ValueError("non-constant F gives an irregular pole at infinity")
        keep = [(p, c) for p, c in zip(self.points, self.residues) if c != 0]
        return FuchsianConnection([p for p, _ in keep], [c for _, c in keep])

    def limit_ratio(self, j: int, r: float, chart: str = "centered", theta: float = 0.7) -> float:
        """``e^u / |zeta|**c_j`` at ``|zeta| = r`` in a chart ``zeta`` centred at point ``j``.

        ``chart="centered"`` is ``zeta = z - z_j``; ``chart="mobius"`` is
        ``zeta = 2 s / (1 - s)`` with ``s = z - z_j``, whose transition
        derivative at the point is ``dz/dzeta = 1/2``.
        """
        p = self.points[j]
        c = self.residues[j]
        zeta = r * cmath.exp(1j * theta)
        if chart == "centered":
            s = zeta
            jac = 1.0
        elif chart == "mobius":
            s = zeta / (2.0 + zeta)
            jac = abs(2.0 / (2.0 + zeta) ** 2)  # |ds/dzeta|
        else:
            raise ValueError(f"unknown chart {chart!r}")
        return math.exp(self.log_density(p + s)) * jac / r ** c

    def residue_estimate(self, j: int, chart: str = "centered", r: float = 1e-7) -> float:
        """Residue at point ``j`` read off as the log-slope of the density in ``chart``."""
        r2 = r / 10.0
        a = math.log(self.limit_ratio(j, r, chart) * r ** self.residues[j])
        b = math.log(self.limit_ratio(j, r2, chart) * r2 ** self.residues[j])
        return (a - b) / (math.log(r) - math.log(r2))


def metric_from_connection(conn: FuchsianConnection) -> SingularFlatMetric:
    if not conn.has_real_residues:
        raise NonRealResidues("adapted flat metric needs real residues")
    return SingularFlatMetric(conn.poles, [r.real for r in conn.residues])


def metric_density(conn: FuchsianConnection, z: complex) -> float:
    """Density ``prod |z - p_j|**rho_j`` of the flat metric adapted to ``conn``."""
    if not conn.has_real_residues:
        raise NonRealResidues("adapted flat metric needs real residues")
    u = 0.0
    for p, r in zip(conn.poles, conn.residues):
        d = abs(z - p)
        if d <= 1e-15 * (1.0 + abs(p)):
            raise EvaluationAtPole(f"{z} is a pole")
        u += r.real * math.log(d)
    return math.exp(u)


def _density_array(conn: FuchsianConnection, z: np.ndarray) -> np.ndarray:
    u = np.zeros(z.shape)
    for p, r in zip(conn.poles, conn.residues):
        d = np.abs(z - p)
        if np.any(d <= 1e-15 * (1.0 + abs(p))):
            raise EvaluationAtPole(f"path passes through pole {p}")
        u += r.real * np.log(d)
    return np.exp(u)


def path_length(conn: FuchsianConnection, polyline: Iterable[complex], rtol: float = 1e-8,
                max_depth: int = 40) -> float:
    """Flat-metric length of a polyline in the finite chart.

    Each segment is integrated with the midpoint rule, bisected until the one-
    and two-panel estimates agree to ``rtol`` (Richardson-corrected).
    """
    if not conn.has_real_residues:
        raise NonRealResidues("adapted flat metric needs real residues")
    pts = np.asarray(list(polyline), dtype=complex)
    if pts.size < 2:
        return 0.0
    a = pts[:-1]
    b = pts[1:]
    total = 0.0
    for _ in range(max_depth):
        if a.size == 0:
            break
        h = b - a
        length = np.abs(h)
        coarse = _density_array(conn, a + 0.5 * h) * length
        fine = 0.5 * length * (_density_array(conn, a + 0.25 * h) + _density_array(conn, a + 0.75 * h))
        done = np.abs(fine - coarse) <= rtol * np.abs(fine) + 1e-300
        total += float(np.sum(fine[done] + (fine[done] - coarse[done]) / 3.0))
        mid = a + 0.5 * h
        a, b = np.concatenate([a[~done], mid[~done]]), np.concatenate([mid[~done], b[~done]])
    if a.size:
        h = b - a
        total += float(np.sum(_density_array(conn, a + 0.5 * h) * np.abs(h)))
    return total
