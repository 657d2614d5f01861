"""``geoflow`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (the
conserved quantity drifted past its per-unit-time bound, or a lift check
failed).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from fractions import Fraction

from .connection import SingularFlatMetric, connection_from_kdiff, kdiff_from_connection
from .covering import CoverSpec, lift, verify_lift_simplicity
from .errors import ConfigError, GeoflowError
from .experiments import (
    RunManifest,
    Stopwatch,
    drift_violations,
    fan_runs,
    load_config,
    run_many,
    run_one,
    spec_to_json,
    write_run,
)
from .integrator import default_jobs
from .multivalued import minimal_k

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("geoflow")


def _run_record(conn, spec) -> dict:
    return {"connection": conn.to_json(), "spec": spec_to_json(spec)}


def _finish(args, cfg, runs, outputs, watch, code) -> int:
    man = RunManifest(args.command, cfg.digest, cfg.raw, args.seed, runs=[_run_record(c, s) for c, s in runs],
                      outputs=[os.path.relpath(p, args.out) for p in outputs], wall_clock_s=watch.elapsed(),
                      jobs=args.jobs, exit_code=code)
    man.write(args.out)
    return code


def _drift_code(results) -> int:
    bad = drift_violations(results)
    for i in bad:
        log.error("run %d: drift rate %.3g exceeds bound", i, results[i].summary["drift_rate"])
    return EXIT_NUMERIC if bad else EXIT_OK


def cmd_integrate(args, cfg, watch) -> int:
    res = run_one(cfg.conn, cfg.spec, cfg.k)
    outputs = write_run(args.out, 0, res)
    print(json.dumps(res.summary, sort_keys=True))
    return _finish(args, cfg, [(cfg.conn, cfg.spec)], outputs, watch, _drift_code([res]))


def _batch(args, cfg, runs, watch) -> int:
    results = run_many(runs, args.jobs)
    outputs = []
    for i, res in enumerate(results):
        outputs += write_run(args.out, i, res)
    counts = {}
    for res in results:
        counts[res.summary["stop"]] = counts.get(res.summary["stop"], 0) + 1
    print(json.dumps({"runs": len(results), "stops": counts}, sort_keys=True))
    return _finish(args, cfg, runs, outputs, watch, _drift_code(results))


def cmd_fan(args, cfg, watch) -> int:
    return _batch(args, cfg, fan_runs(cfg, args.seed), watch)


def _sweep(cfg):
    if cfg.sweep is None:
        raise ConfigError("this command needs a 'sweep' block")
    return cfg.sweep


def cmd_sweep(args, cfg, watch) -> int:
    return _batch(args, cfg, _sweep(cfg).runs(), watch)


def cmd_census(args, cfg, watch) -> int:
    sweep = _sweep(cfg)
    runs = sweep.runs()
    results = run_many(runs, args.jobs)
    path = os.path.join(args.out, "census.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["param_value", "label", "self_intersections", "occupancy"])
        for v, res in zip(sweep.values(), results):
            wr.writerow([repr(float(v)), res.omega.label, res.summary["n_intersections"],
                         "%.6f" % res.summary["occupancy"]])
    outputs = [path]
    for i, res in enumerate(results):
        p = os.path.join(args.out, f"summary-{i}.json")
        with open(p, "w") as fh:
            json.dump(res.summary, fh, indent=2, sort_keys=True)
        outputs.append(p)
    print(json.dumps({"rows": len(results), "census": path}))
    return _finish(args, cfg, runs, outputs, watch, _drift_code(results))


def cmd_adapt(args, cfg, watch) -> int:
    conn = cfg.conn
    k = cfg.k if cfg.k is not None else minimal_k(conn)
    if k is None:
        raise ConfigError("residues admit no k <= 64; set 'k' or use rational residues")
    q = kdiff_from_connection(conn, k)
    back = connection_from_kdiff(q)
    doc = {
        "k": k,
        "exponents": list(q.exponents),
        "exponent_at_infinity": q.order_at_infinity,
        "residues": [str(Fraction(m, k)) for m in q.exponents],
        "roundtrip_exact": list(kdiff_from_connection(back, k).exponents) == list(q.exponents),
    }
    if cfg.metric_F and conn.has_real_residues:
        metric = SingularFlatMetric(conn.poles, [r.real for r in conn.residues], cfg.metric_F)
        doc["metric_residue_estimates"] = [metric.residue_estimate(j) for j in range(conn.n_poles)]
    path = os.path.join(args.out, "adapt.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    print(" ".join(str(m) for m in q.exponents))
    return _finish(args, cfg, [], [path], watch, EXIT_OK)


def cmd_cover(args, cfg, watch) -> int:
    cover = CoverSpec(cfg.conn, cfg.k)
    res = run_one(cfg.conn, cfg.spec, cover.k)
    lifted = lift(res.traj, cover)
    report = verify_lift_simplicity(lifted, res.events)
    res.summary.update({
        "k": cover.k,
        "same_sheet_crossings": report.same_sheet,
        "cross_sheet_crossings": report.cross_sheet,
        "lift_violations": len(report.violations),
        "reachable_sheets": report.reachable_sheets,
        "closes_after_turns": report.closes_after,
    })
    outputs = write_run(args.out, 0, res)
    lifted.to_jsonl(outputs[0])
    print(json.dumps(res.summary, sort_keys=True))
    code = _drift_code([res])
    if report.violations and not report.base_closed:
        log.error("lift has %d violations", len(report.violations))
        code = EXIT_NUMERIC
    return _finish(args, cfg, [(cfg.conn, cfg.spec)], outputs, watch, code)


COMMANDS = {
    "integrate": cmd_integrate,
    "fan": cmd_fan,
    "sweep": cmd_sweep,
    "adapt": cmd_adapt,
    "cover": cmd_cover,
    "census": cmd_census,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoflow", description="Geodesics of meromorphic connections on the sphere.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config (or a manifest.json from an earlier run)")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes (default: available CPUs)")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized launches (default: 0)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs is None:
        args.jobs = default_jobs()
    if args.jobs < 1:
        log.error("--jobs must be at least 1")
        return EXIT_CONFIG
    watch = Stopwatch()
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg, watch)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except GeoflowError as exc:
        # bad inputs that only show up once the run starts (start at a pole, k does not fit)
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
