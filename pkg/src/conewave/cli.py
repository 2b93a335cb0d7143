"""Command line entry point.

Usage::

    conewave <subcommand> --config scene.json --out results/ [--threads N] [--verbose]

Subcommands and their artifacts (all inside ``--out``):

``rays``      ``rays.csv`` (one row per surface sample) and ``rays.json``
``forward``   ``snapshots/u_NNNNNN.wfg`` and ``diagnostics.csv``
``cross``     ``cross_final.wfg``, ``cross_history.wfg`` and ``cross.json``
``expand``    ``expand.json``
``perturb``   ``perturb.json``
``invert``    ``invert.json``
``scaling``   ``scaling.json``

Every run writes ``manifest.json``; a failed run also writes ``error.json``
and exits with 2 (invalid input), 3 (solver blow-up) or 4 (detection
precondition).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .errors import ConewaveError, ValidationError
from .inversion import (cone_report, cone_tube, frequency_scaling_probe, interior_mask,
                        locate_interface, perturbation_report, prediction_for, recover_jump)
from .raytrace import predict_support
from .response import (born_response, cross_difference, eps_scale, expansion_ladder,
                       fit_loglog, perturbation_split)
from .scene import load_scene
from .snapshot import write_field_snapshots, write_snapshot
from .solver import solve_semilinear

log = logging.getLogger("conewave")

SUBCOMMANDS = ("rays", "forward", "cross", "expand", "perturb", "invert", "scaling")

def _fmt(v):
    return format(float(v), ".17g")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# subcommands


def cmd_rays(scene, out, threads):
    pred = predict_support(scene, sample_times=scene.sample_times())
    d = scene.grid.d
    header = ["surface", "t"] + [f"x{i + 1}" for i in range(d)]
    header += [f"t{k}_{c}" for k in range(d) for c in range(d + 1)]
    rows = 0
    with open(os.path.join(out, "rays.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        surfaces = dict(pred.surfaces())
        if pred.cone.is_empty:
            surfaces["cone_candidate"] = pred.cone_candidate
        for name, surf in surfaces.items():
            for x, tan in zip(surf.points, surf.tangents):
                w.writerow([name] + [_fmt(v) for v in x] + [_fmt(v) for v in tan.ravel()])
                rows += 1
    _write_json(os.path.join(out, "rays.json"), {
        "p0": pred.p0, "on_interface": pred.on_interface, "separation": pred.separation,
        "rows": rows, "columns": header})
    return ["rays.csv", "rays.json"]


def cmd_forward(scene, out, threads):
    eps1, eps2 = scene.eps_pair
    cfg = scene.solver.with_(threads=threads)
    u = solve_semilinear(scene.grid, scene.metric, cfg, eps1, eps2, *scene.sources,
                         scene.coefficient)
    paths = write_field_snapshots(u, os.path.join(out, "snapshots"))
    with open(os.path.join(out, "diagnostics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "L2", "L4_accum", "energy"])
        for row in u.metadata["diagnostics"]:
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
    return [os.path.relpath(p, out) for p in paths] + ["diagnostics.csv"]


def cmd_cross(scene, out, threads):
    cr = cross_difference(scene, threads=threads, born=True)
    fld = cr.field
    write_snapshot(os.path.join(out, "cross_final.wfg"), fld.final, scene.grid,
                   time_index=int(fld.steps[-1]))
    write_snapshot(os.path.join(out, "cross_history.wfg"), fld.data, scene.grid,
                   time_index=int(fld.steps[-1]),
                   origin=[0.0] + scene.grid.origin.tolist(),
                   extent=[float(fld.times[-1])] + scene.grid.extent.tolist())
    report = cr.report()
    report["amplitude_scale"] = max(abs(s.amplitude) for s in scene.sources)
    report["roundoff_scale"] = fld.metadata.get("roundoff_scale")
    report["steps"] = fld.steps
    _write_json(os.path.join(out, "cross.json"), report)
    return ["cross_final.wfg", "cross_history.wfg", "cross.json"]


def cmd_expand(scene, out, threads):
    scale = eps_scale(scene)
    ladder = [scale * r for r in scene.experiment["eps_ladder"]]
    defects, _ = expansion_ladder(scene, ladder)
    slope, intercept, r2 = fit_loglog(ladder, defects)
    _write_json(os.path.join(out, "expand.json"), {
        "eps_scale": scale, "eps": ladder, "defect": defects, "slope": slope,
        "intercept": intercept, "r2": r2})
    return ["expand.json"]


def cmd_perturb(scene, out, threads):
    split = perturbation_split(scene, threads=threads)
    rep = perturbation_report(scene, split)
    rep["delta"] = split.delta
    rep["eps"] = split.eps
    rep["V_oracle_discrepancy"] = split.v_discrepancy()
    _write_json(os.path.join(out, "perturb.json"), rep)
    return ["perturb.json"]


def _jump_estimate(scene, threads):
    observed = cross_difference(scene, threads=threads)
    alpha_ref = scene.experiment["alpha_ref"]
    reference = born_response(scene, alpha_ref)
    pred = prediction_for(scene, observed.field)
    tube = cone_tube(scene, observed.field, pred, interior_mask(scene))
    return recover_jump(observed, reference, alpha_ref, tube), pred, observed


def cmd_invert(scene, out, threads):
    decision, per_s0 = locate_interface(scene, threads=threads)
    est, pred, observed = _jump_estimate(scene, threads)
    cone, _ = cone_report(scene, observed, pred, interior=interior_mask(scene))
    exponent = None
    if scene.experiment.get("omega_ladder"):
        exponent, _, _ = frequency_scaling_probe(scene, threads=threads)
    _write_json(os.path.join(out, "invert.json"), {
        "p0": pred.p0, "on_interface": pred.on_interface, "decision": decision,
        "per_s0": per_s0, "cone": cone.to_dict(), "alpha_hat": est.alpha_hat,
        "alpha_ref": est.reference_alpha, "residual": est.residual,
        "frequency_exponent": exponent})
    return ["invert.json"]


def cmd_scaling(scene, out, threads):
    exponent, r2, rows = frequency_scaling_probe(scene, threads=threads)
    _write_json(os.path.join(out, "scaling.json"),
                {"exponent": exponent, "r2": r2, "rows": rows})
    return ["scaling.json"]


COMMANDS = {"rays": cmd_rays, "forward": cmd_forward, "cross": cmd_cross, "expand": cmd_expand,
            "perturb": cmd_perturb, "invert": cmd_invert, "scaling": cmd_scaling}


# ---------------------------------------------------------------------------
# driver


def _parser():
    p = argparse.ArgumentParser(prog="conewave", description=__doc__.split("\n")[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="scene JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--verbose", action="store_true")
    return p


def _error_payload(exc):
    out = {"error": type(exc).__name__, "message": str(exc),
           "exit_code": getattr(exc, "exit_code", 1)}
    for key in ("field", "step", "time"):
        val = getattr(exc, key, None)
        if val is not None:
            out[key] = val
    return out


def run(subcommand, config, out, threads=1):
    """Run one subcommand; returns the exit status.  Artifacts go to ``out``."""
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {"subcommand": subcommand, "config": os.path.abspath(config),
                "threads": threads,
                "versions": {"conewave": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__, "python": platform.python_version()}}
    status = 0
    try:
        if threads < 1:
            raise ValidationError("--threads must be at least 1", "threads")
        scene = load_scene(config)
        manifest["config_hash"] = scene.hash()
        log.info("%s: scene %s", subcommand, manifest["config_hash"][:12])
        manifest["outputs"] = COMMANDS[subcommand](scene, out, threads)
    except ConewaveError as exc:
        status = exc.exit_code
        _write_json(os.path.join(out, "error.json"), _error_payload(exc))
        log.error("%s: %s", type(exc).__name__, exc)
    manifest["exit_code"] = status
    manifest["wall_time"] = time.perf_counter() - t0
    _write_json(os.path.join(out, "manifest.json"), manifest)
    return status


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s %(levelname)s %(message)s")
    return run(args.subcommand, args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
