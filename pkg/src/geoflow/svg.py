"""Two-panel SVG plots: the ``z`` chart on the left, ``w = 1/z`` on the right."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .integrator import Trajectory

PANEL = 420
PAD = 20
MAX_POINTS = 20000


def _extent(points: Sequence[complex], floor: float = 2.0) -> float:
    finite = [abs(p) for p in points if np.isfinite(p)]
    return max(floor, 1.25 * max(finite)) if finite else floor


def _runs(x: np.ndarray, R: float) -> list:
    """Maximal runs of consecutive points inside the square ``[-R, R]^2``."""
    inside = np.isfinite(x) & (np.abs(x.real) <= R) & (np.abs(x.imag) <= R)
    out = []
    idx = np.nonzero(inside)[0]
    if not len(idx):
        return out
    for run in np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1):
        if len(run) > 1:
            out.append(x[run])
    return out


def _thin(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) <= n:
        return x
    keep = np.unique(np.r_[np.linspace(0, len(x) - 1, n).astype(int), len(x) - 1])
    return x[keep]


def _panel(x: np.ndarray, marks: list, hits: list, R: float, x0: float, title: str) -> list:
    s = PANEL / (2 * R)

    def px(c: complex):
        return x0 + PAD + (c.real + R) * s, PAD + 20 + (R - c.imag) * s

    out = [f'<g><rect x="{x0 + PAD}" y="{PAD + 20}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>',
           f'<text x="{x0 + PAD}" y="{PAD + 12}" font-size="12">{title}  [-{R:.3g}, {R:.3g}]^2</text>']
    runs = _runs(x, R)
    budget = max(2, MAX_POINTS // max(1, len(runs)))
    for run in runs:
        pts = " ".join("%.2f,%.2f" % px(c) for c in _thin(run, budget))
        out.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fa8" stroke-width="0.6"/>')
    for c, label in marks:
        if abs(c.real) <= R and abs(c.imag) <= R:
            a, b = px(c)
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3.5" fill="#000"/>'
                       f'<text x="{a + 5:.2f}" y="{b - 5:.2f}" font-size="10">{label}</text>')
    for c in hits:
        if np.isfinite(c) and abs(c.real) <= R and abs(c.imag) <= R:
            a, b = px(c)
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2" fill="none" stroke="#c0392b"/>')
    out.append("</g>")
    return out


def render_svg(traj: Trajectory, events: Sequence = (), path=None) -> str:
    """SVG of ``traj`` in both charts, poles as dots, crossings as red rings.

    The ``z`` panel covers the poles; the ``w`` panel shows the neighbourhood
    of infinity.  Returns the document and writes it when ``path`` is given.
    """
    conn = traj.conn
    z = traj.z
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(z == 0, np.inf, 1.0 / z)
    w = np.where(np.isinf(z), 0j, w)
    Rz = _extent(list(conn.poles) + [complex(traj.spec.start)])
    Rz = min(Rz, traj.spec.r_out)
    Rw = 1.0 / traj.spec.chart_in
    zmarks = [(p, f"p{j}") for j, p in enumerate(conn.poles)]
    wmarks = [(1.0 / p, f"p{j}") for j, p in enumerate(conn.poles) if p != 0]
    wmarks.append((0j, "inf" if conn.infinity_is_pole else "inf (regular)"))
    locs = [complex(e.location) for e in events]
    whits = [1.0 / c for c in locs if c != 0 and np.isfinite(c)]
    width = 2 * (PANEL + 2 * PAD)
    height = PANEL + 2 * PAD + 40
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            '<rect width="100%" height="100%" fill="#fff"/>']
    body += _panel(z, zmarks, locs, Rz, 0.0, "z")
    body += _panel(w, wmarks, whits, Rw, PANEL + 2 * PAD, "w = 1/z")
    status = f"stop: {traj.stop}   crossings: {len(locs)}"
    body.append(f'<text x="{PAD}" y="{height - 8}" font-size="12">{status}</text>')
    body.append("</svg>")
    doc = "\n".join(body) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(doc)
    return doc

