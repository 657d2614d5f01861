import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoflow.connection import FuchsianConnection
from geoflow.errors import KUndefined, SegmentHitsPole, StepTooLarge
from geoflow.multivalued import (
    HolonomyState,
    TrajectoryArgument,
    continue_along,
    cut_crossings,
    holonomy_factor,
    loop_monodromy,
    minimal_k,
    monodromy_generators,
    sheet_from_logs,
    sheet_index_update,
)


def walk(state, path):
    for z in path:
        state = continue_along(state, z)
    return state


def circle(center, r, n=64, turns=1, start=0.0):
    return [center + r * cmath.exp(1j * (start + 2 * math.pi * turns * (i + 1) / n)) for i in range(n * abs(turns))]


def square_loop(center, h, n_side=16):
    corners = [center + h * c for c in (1 - 1j, 1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j)]
    path = []
    for a, b in zip(corners[:-1], corners[1:]):
        path += [a + (b - a) * (i + 1) / n_side for i in range(n_side)]
    return corners[0], path


def test_positive_real_step():
    s = continue_along(HolonomyState.start([0], 1.0), 2.0)
    assert abs(s.logs[0] - math.log(2)) < 1e-15


def test_square_loop_winding():
    z0, path = square_loop(0, 1.0)
    s0 = HolonomyState.start([0], z0)
    s1 = walk(s0, path)
    assert abs((s1.logs[0] - s0.logs[0]).imag - 2 * math.pi) < 1e-12


def test_segment_through_pole():
    with pytest.raises(SegmentHitsPole):
        continue_along(HolonomyState.start([0], 1.0), -1.0)


def test_step_too_large():
    with pytest.raises(StepTooLarge):
        continue_along(HolonomyState.start([0], 1.0), 1.0 + 1.5j)


def test_holonomy_factor_sqrt():
    s = HolonomyState.start([0], 4.0)
    assert abs(holonomy_factor(s, [0.5]) - 2) < 1e-15
    s = walk(s, circle(0, 4.0))
    assert abs(holonomy_factor(s, [0.5]) + 2) < 1e-12
    assert holonomy_factor(HolonomyState.start([], 3.0), []) == 1


def test_monodromy_generators_examples():
    g = monodromy_generators(FuchsianConnection([0, 1], [-1, -1]))
    assert np.allclose(g, [1, 1, 1], atol=1e-14)
    g = monodromy_generators(FuchsianConnection([0], [0.5]))
    assert np.allclose(g, [-1, -1], atol=1e-14)
    g = monodromy_generators(FuchsianConnection([0], [1j]))
    assert abs(g[0] - math.exp(-2 * math.pi)) < 1e-15


def test_minimal_k_examples():
    assert minimal_k(FuchsianConnection([0, 1], [-1, -1])) == 1
    assert minimal_k(FuchsianConnection([0], [0.5])) == 2
    assert minimal_k(FuchsianConnection([0], [1 / 3 + 2j])) == 3
    assert minimal_k(FuchsianConnection([0], [math.sqrt(2)])) is None


def test_sheet_update_examples():
    conn = FuchsianConnection([0], [0.5])
    assert sheet_index_update(0, 0, +1, conn, 2) == 1
    one = FuchsianConnection([0], [-1])
    assert all(sheet_index_update(0, 0, d, one, 1) == 0 for d in (-2, -1, 1, 2))
    assert sheet_index_update(sheet_index_update(0, 0, 1, conn, 2), 0, -1, conn, 2) == 0
    with pytest.raises(KUndefined):
        sheet_index_update(0, 0, 1, conn, None)


paths = st.lists(st.tuples(st.floats(-2.5, 2.5), st.floats(-2.5, 2.5)), min_size=1, max_size=12)
POLES = [0.3 + 0.2j, -1 + 0.5j, 1.2 - 0.8j]


def _fine_path(z0, pts):
    """Straight pieces between waypoints, subdivided so every step obeys the step contract."""
    out, cur = [], z0
    for p in pts:
        p = complex(*p)
        d = min(abs(cur - q) for q in POLES)
        n = max(1, int(abs(p - cur) / (0.2 * max(d, 1e-3))) + 1)
        for i in range(n):
            nxt = cur + (p - cur) * (i + 1) / n
            d = min(abs(cur - q) for q in POLES)
            if abs(nxt - cur) >= 0.5 * d or min(abs(nxt - q) for q in POLES) < 1e-3:
                return out
            out.append(nxt)
        cur = p
    return out


@given(paths)
def test_exp_consistency(pts):
    s = HolonomyState.start(POLES, 2 + 2j)
    s = walk(s, _fine_path(2 + 2j, pts))
    for lg, p in zip(s.logs, POLES):
        assert abs(cmath.exp(lg) - (s.position - p)) <= 1e-12 * abs(s.position - p)


def lasso(base, p, r, turns):
    """Out from ``base`` to ``p + r``, ``turns`` signed circles around ``p``, and back."""
    out = [base + (p + r - base) * (i + 1) / 64 for i in range(64)]
    loop = []
    for _ in range(abs(turns)):
        loop += [p + r * cmath.exp(1j * math.copysign(2 * math.pi, turns) * (i + 1) / 32) for i in range(32)]
    return out + loop + out[::-1][1:] + [base]


@given(st.integers(-2, 2), st.integers(-2, 2), st.integers(0, 2))
def test_loop_additivity(a, b, j):
    base = 2.5 + 2.5j
    i = (j + 1) % 3
    s0 = HolonomyState.start(POLES, base)
    mid = walk(s0, lasso(base, POLES[j], 0.2, a))
    s = walk(mid, lasso(base, POLES[i], 0.2, b))
    d1 = np.array(mid.logs) - np.array(s0.logs)
    d2 = np.array(s.logs) - np.array(mid.logs)
    d = np.array(s.logs) - np.array(s0.logs)
    assert np.allclose(d.imag, d1.imag + d2.imag, atol=1e-12)
    expected = np.zeros(3)
    expected[j] += a
    expected[i] += b
    assert np.allclose(d.imag, 2 * math.pi * expected, atol=1e-9)


residues = st.builds(complex, st.floats(-3, 3), st.floats(-1, 1)).filter(lambda r: abs(r) > 1e-3)


@given(residues)
def test_monodromy_holonomy_agreement(rho):
    poles = [0.0, 2.0]
    res = [rho, -0.5]
    s0 = HolonomyState.start(poles, 0.5)
    s1 = walk(s0, circle(0, 0.5, n=128))
    ratio = holonomy_factor(s1, res) / holonomy_factor(s0, res)
    assert abs(ratio / cmath.exp(2j * math.pi * rho) - 1) < 1e-8
    conn = FuchsianConnection(poles, res)
    assert abs(loop_monodromy(conn, 0) / cmath.exp(2j * math.pi * rho) - 1) < 1e-8


@given(st.integers(1, 6), st.lists(st.integers(-3, 3), min_size=3, max_size=3),
       st.lists(st.integers(-7, 7).filter(bool), min_size=3, max_size=3))
def test_sheet_winding_agreement(k, windings, ms):
    conn = FuchsianConnection(POLES, [m / k for m in ms])
    base = 2.5 + 2.5j
    s0 = HolonomyState.start(POLES, base)
    s = s0
    sheet = 0
    for j, w in enumerate(windings):
        if w:
            for z in lasso(base, POLES[j], 0.2, w):
                nxt = continue_along(s, z)
                sheet = sheet_from_logs(conn, k, s.logs, nxt.logs, sheet)
                s = nxt
    expected = round(k * sum(m / k * w for m, w in zip(ms, windings))) % k
    assert sheet == expected
    assert sheet_from_logs(conn, k, s0.logs, s.logs) == expected


def test_cut_crossings_sign():
    assert cut_crossings(complex(0, -0.1), complex(0, 0.1)) == 1
    assert cut_crossings(complex(0, 0.1), complex(0, -0.1)) == -1
    assert cut_crossings(complex(0, 3.0), complex(0, 3.2)) == 0


def test_trajectory_argument_classes():
    a = TrajectoryArgument(0.1, 3)
    b = TrajectoryArgument(0.1 + 2 * math.pi / 3, 3)
    assert a.same_class(b)
    assert not a.same_class(TrajectoryArgument(0.5, 3))
    assert abs(b.reduced() - 0.1) < 1e-12
