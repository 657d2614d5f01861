"""Random connections and launches shared by the test modules."""

import cmath
import math

import numpy as np

from geoflow.connection import FuchsianConnection
from geoflow.integrator import GeodesicSpec


def random_points(rng, n, radius=1.0, min_sep=0.2):
    while True:
        r = radius * np.sqrt(rng.uniform(0, 1, n))
        pts = [complex(a) for a in r * np.exp(2j * np.pi * rng.uniform(0, 1, n))]
        if all(abs(pts[i] - pts[j]) >= min_sep for i in range(n) for j in range(i)):
            return pts


def exponent_split(rng, k, total, low=1):
    """Integers in [low, k - 1] summing to ``total`` and sharing no factor with k."""
    while True:
        parts, rem = [], total
        while rem > 0:
            m = int(rng.integers(low, min(k - 1, rem) + 1))
            parts.append(m)
            rem -= m
        if math.gcd(k, *parts) == 1:
            return parts


def flat_sphere(rng, k, imag=1e-3):
    """Residues ``-m_j/k + i beta_j`` with ``0 < m_j < k`` and ``sum m_j = 2k``.

    All finite poles are cone points, infinity carries the small residue
    ``-i sum beta_j``; the minimal k is exactly ``k``.
    """
    ms = exponent_split(rng, k, 2 * k)
    res = [complex(-m / k, imag * rng.normal()) for m in ms]
    return FuchsianConnection(random_points(rng, len(ms)), res)


def random_launch(rng, radius=0.9, **kw):
    start = complex(*rng.uniform(-radius, radius, 2))
    return GeodesicSpec(start, cmath.exp(1j * rng.uniform(0, 2 * math.pi)), **kw)
