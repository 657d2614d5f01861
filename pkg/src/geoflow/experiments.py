"""Run configurations, sweeps, per-run pipelines and manifests.

A config is a JSON document holding a connection (``poles``, ``residues``,
optional ``k``, ``metric_F``, ``include_infinity``), launch data (``start``,
``dir_angle``) and budgets.  Sweeps vary one residue component or the launch
angle.  Every run is integrated, analysed and written out in input order, so
outputs do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import OmegaReport, angle_spectrum, classify_omega, find_self_intersections
from .connection import FuchsianConnection, complex_to_wire, parse_complex
from .errors import ConfigError, GeoflowError
from .integrator import GeodesicSpec, Trajectory, default_jobs, fan_directions, integrate
from .multivalued import minimal_k

SWEEP_PARAMS = ("residue_re", "residue_im", "dir_angle")
SUMMARY_FIELDS = ("stop", "omega", "drift", "n_intersections", "minimal_k")
DRIFT_RATE_LIMIT = 1e-8  # relative drift of the conserved quantity per unit time

_SPEC_KEYS = {
    "max_time": float, "max_arclength": float, "max_samples": int, "speed": float,
    "r_out": float, "r_in": float, "rtol": float, "h_max": float, "escape_radius": float,
    "detect_closed": bool, "normalization": str,
}


@dataclass(frozen=True)
class SweepSpec:
    """One parameter varied over ``steps`` evenly spaced values from ``start`` to ``stop``.

    ``param`` is ``"residue_re"``/``"residue_im"`` of residue ``index`` or
    ``"dir_angle"``.  The residue at infinity is re-derived for every value
    because connections always derive it.
    """

    conn: FuchsianConnection
    param: str
    start: float
    stop: float
    steps: int
    spec: GeodesicSpec
    index: int = 0

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError("sweep steps must be an integer >= 1")
        if self.param != "dir_angle" and not (0 <= self.index < self.conn.n_poles):
            raise ConfigError(f"sweep index {self.index} out of range")

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([float(self.start)])
        return np.linspace(float(self.start), float(self.stop), int(self.steps))

    def run(self, value: float):
        """``(conn, spec)`` for one sweep value."""
        if self.param == "dir_angle":
            return self.conn, replace(self.spec, direction=complex(math.cos(value), math.sin(value)))
        res = list(self.conn.residues)
        r = res[self.index]
        res[self.index] = complex(value, r.imag) if self.param == "residue_re" else complex(r.real, value)
        return FuchsianConnection(self.conn.poles, res, self.conn.include_infinity), self.spec

    def runs(self) -> list:
        return [self.run(v) for v in self.values()]


@dataclass
class RunConfig:
    raw: dict
    conn: FuchsianConnection
    spec: GeodesicSpec
    k: Optional[int] = None
    metric_F: tuple = ()
    n_directions: int = 64
    sweep: Optional[SweepSpec] = None
    random_directions: bool = False

    @property
    def digest(self) -> str:
        return config_digest(self.raw)


def config_digest(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _spec_from(doc: dict) -> GeodesicSpec:
    if "start" not in doc:
        raise ConfigError("config needs 'start'")
    kw = {"start": parse_complex(doc["start"])}
    ang = float(doc.get("dir_angle", 0.0))
    kw["direction"] = complex(math.cos(ang), math.sin(ang))
    for key, cast in _SPEC_KEYS.items():
        if key in doc and doc[key] is not None:
            kw[key] = cast(doc[key])
    if "escape_center" in doc:
        kw["escape_center"] = parse_complex(doc["escape_center"])
    return GeodesicSpec(**kw)


def parse_config(doc) -> RunConfig:
    """Validate a config document; every problem surfaces as ``ConfigError``.

    A manifest written by a previous run is accepted too; its embedded config
    is used.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in doc and "tool_version" in doc:
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise ConfigError("manifest carries no config object")
    if "poles" not in doc or "residues" not in doc:
        raise ConfigError("config needs 'poles' and 'residues'")
    try:
        conn = FuchsianConnection.from_json(doc)
        spec = _spec_from(doc)
        k = doc.get("k")
        if k is not None and (int(k) != k or k < 1):
            raise ConfigError("'k' must be a positive integer")
        metric_F = tuple(parse_complex(c) for c in doc.get("metric_F", []))
        n_dir = int(doc.get("n_directions", 64))
        if n_dir < 1:
            raise ConfigError("'n_directions' must be at least 1")
        sweep = None
        if "sweep" in doc:
            s = doc["sweep"]
            if not isinstance(s, dict):
                raise ConfigError("'sweep' must be an object")
            sweep = SweepSpec(conn, s.get("param", ""), float(s["start"]), float(s["stop"]),
                              s["steps"], spec, int(s.get("index", 0)))
    except ConfigError:
        raise
    except (GeoflowError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
    return RunConfig(doc, conn, spec, None if k is None else int(k), metric_F, n_dir, sweep,
                     bool(doc.get("random_directions", False)))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc)


def spec_to_json(spec: GeodesicSpec) -> dict:
    out = {}
    for key, val in asdict(spec).items():
        if isinstance(val, complex):
            val = complex_to_wire(val)
        elif isinstance(val, float) and not math.isfinite(val):
            val = str(val)
        out[key] = val
    return out


# ---------------------------------------------------------------------------
# per-run pipeline
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    traj: Trajectory
    events: list
    omega: OmegaReport
    summary: dict


def summarize(traj: Trajectory, events, omega: OmegaReport, k: Optional[int] = None) -> dict:
    mk = minimal_k(traj.conn)
    out = {
        "stop": traj.stop.kind,
        "omega": omega.label,
        "drift": float(traj.drift()),
        "n_intersections": len(events),
        "minimal_k": mk,
        "stop_pole": traj.stop.pole,
        "omega_pole": omega.pole,
        "drift_rate": float(traj.drift_rate()),
        "t_end": float(traj.t[-1]),
        "n_samples": len(traj.t),
        "notable": omega.notable,
        "occupancy": float(omega.diagnostics.get("occupancy", 0.0)),
    }
    if k is not None:
        out["k"] = k
    return out


def run_one(conn: FuchsianConnection, spec: GeodesicSpec, k: Optional[int] = None) -> RunResult:
    """Integrate, find crossings and classify one geodesic."""
    traj = integrate(conn, spec)
    events = find_self_intersections(traj)
    omega = classify_omega(traj, n_intersections=len(events))
    return RunResult(traj, events, omega, summarize(traj, events, omega, k))


def _run_args(args):
    return run_one(*args)


def run_many(runs: list, jobs: Optional[int] = None) -> List[RunResult]:
    """Run ``(conn, spec)`` pairs on ``jobs`` worker processes; results keep input order."""
    runs = list(runs)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(runs) <= 1:
        return [run_one(c, s) for c, s in runs]
    with ProcessPoolExecutor(max_workers=min(jobs, len(runs))) as ex:
        return list(ex.map(_run_args, runs, chunksize=1))


def fan_runs(cfg: RunConfig, seed: int = 0) -> list:
    """Launches from ``start`` in ``n_directions`` directions.

    Directions are evenly spaced, offset by ``dir_angle``; with
    ``random_directions`` they are drawn uniformly from a generator seeded by
    ``seed``.
    """
    n = cfg.n_directions
    if cfg.random_directions:
        rng = np.random.default_rng(seed)
        dirs = [complex(math.cos(a), math.sin(a)) for a in rng.uniform(0.0, 2 * math.pi, n)]
    else:
        dirs = [d * cfg.spec.direction for d in fan_directions(n)]
    return [(cfg.conn, replace(cfg.spec, direction=d)) for d in dirs]


def write_run(out_dir, i: int, res: RunResult, plot: bool = True) -> list:
    """Write ``trajectory-i.jsonl``, ``summary-i.json`` and ``plot-i.svg``; return the paths.

    When the trajectory crosses itself and the residues admit a finite k, the
    angle histogram goes to ``angles-i.csv`` as well.
    """
    from .svg import render_svg

    paths = [os.path.join(out_dir, f"trajectory-{i}.jsonl"), os.path.join(out_dir, f"summary-{i}.json")]
    res.traj.to_jsonl(paths[0])
    with open(paths[1], "w") as fh:
        json.dump(res.summary, fh, indent=2, sort_keys=True)
    if plot:
        paths.append(os.path.join(out_dir, f"plot-{i}.svg"))
        render_svg(res.traj, res.events, paths[-1])
    if res.events and res.summary["minimal_k"] is not None:
        paths.append(os.path.join(out_dir, f"angles-{i}.csv"))
        angle_spectrum(res.events, res.traj.conn).to_csv(paths[-1])
    return paths


def drift_violations(results: List[RunResult], limit: float = DRIFT_RATE_LIMIT) -> list:
    return [i for i, r in enumerate(results) if not (r.summary["drift_rate"] <= limit)]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Record of one CLI invocation; its ``config`` reproduces the outputs exactly."""

    command: str
    config_digest: str
    config: dict
    seed: int = 0
    tool_version: str = __version__
    runs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    jobs: int = 1
    exit_code: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        return path


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
