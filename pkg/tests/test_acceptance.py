"""Acceptance suite.

Each criterion is a function returning ``(ok, detail)``.  Under pytest
every test prints one ``PASS``/``FAIL`` line and then asserts; running
this file as a script prints the same lines for all criteria.  The
interaction criteria use the 256^2 crossing scene in configs/crossing.json.
"""

import functools
import json
import pathlib
import sys
import tempfile

import numpy as np
import pytest

from conewave.cli import run
from conewave.errors import TangentialIncidence
from conewave.fields import GridSpec, norm
from conewave.geometry import FlatMetric, PhasePoint, diag_sine
from conewave.inversion import (cone_report, cone_tube, interior_mask, locate_interface,
                                perturbation_report, prediction_for, recover_jump)
from conewave.raytrace import InterfaceSpec, reflect_at_interface, trace
from conewave.response import (born_response, cross_difference, eps_scale, expansion_ladder,
                               fit_loglog, perturbation_split)
from conewave.scene import load_scene
from conewave.solver import (SolverConfig, WaveOperator, energy_drift, picard_solve,
                             solve_linear, solve_semilinear)

ROOT = pathlib.Path(__file__).resolve().parents[1]
CROSSING = ROOT / "configs" / "crossing.json"
FLAT = FlatMetric(2)
PERIODIC = SolverConfig(boundary="periodic")


@functools.lru_cache(maxsize=None)
def scene():
    return load_scene(CROSSING)


@functools.lru_cache(maxsize=None)
def calibrated_ladder():
    """Expansion ladder in units of the blow-up amplitude."""
    sc = scene()
    scale = eps_scale(sc)
    return [scale * r for r in sc.experiment["eps_ladder"]]


def _fmt(vals):
    return "[" + ", ".join(f"{v:.4g}" for v in vals) + "]"


# ---------------------------------------------------------------------------
# criteria


def criterion_1():
    ray = trace(FLAT, PhasePoint([0, 0, 0], [-1, 0.6, 0.8]), 1.0)
    end_err = float(np.linalg.norm(ray.xs[-1] - [1.0, 0.6, 0.8]))
    m = diag_sine([1.0, 1.0], [0.3, 0.2], [[4.0, 1.0], [1.0, 3.0]])
    xi = np.array([0.6, 0.8])
    start = PhasePoint([0, 0, 0], np.concatenate(([-np.sqrt(xi @ m.gstar(np.zeros(2)) @ xi)], xi)))
    rays = [trace(m, start, 1.0, step=s) for s in (0.02, 0.01, 0.005)]
    ends = [r.xs[-1] for r in rays]
    order = float(np.log2(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])))
    drift = max(ray.p_drift, rays[-1].p_drift)
    ok = end_err < 1e-10 and drift < 1e-8 and 3.8 <= order <= 4.2
    return ok, f"endpoint {end_err:.2e}, drift {drift:.2e}, RK4 order {order:.3f}"


def criterion_2():
    plane = InterfaceSpec("plane", normal=[1.0, 0.0])
    rng = np.random.default_rng(2024)
    worst = 0.0
    for a in rng.uniform(-1.5, 1.5, 100):
        z = np.array([-1.0, np.cos(a), np.sin(a)])
        out = reflect_at_interface(FLAT, np.zeros(3), z, plane)
        expected = z + np.array([0.0, -2.0 * z[1], 0.0])
        worst = max(worst, float(np.max(np.abs(out - expected))))
    try:
        reflect_at_interface(FLAT, np.zeros(3), np.array([-1.0, 0.0, 1.0]), plane)
        tangential = False
    except TangentialIncidence:
        tangential = True
    return worst < 1e-12 and tangential, f"max error {worst:.2e}, tangential raises {tangential}"


def _mms_error(n):
    g = GridSpec.build([0, 0], [1, 1], [n, n], 0.5)
    k = 2 * np.pi * np.array([1.0, 2.0])
    w = np.linalg.norm(k)
    s = np.sin(g.cell_centres() @ k)
    out = solve_linear(g, FLAT, PERIODIC, (np.zeros(g.n), w * s))
    exact = np.sin(w * out.times)[:, None, None] * s
    return float(np.sqrt(np.mean((out.data - exact) ** 2)))


def _symmetry_defect():
    m = diag_sine([1.0, 1.0], [0.3, 0.2], [[6.28, 0], [0, 6.28]])
    g = GridSpec.build([0, 0], [1, 1], [32, 32], 1.0, metric=m)
    op = WaveOperator(g, m, PERIODIC)
    u, v = np.random.default_rng(7).normal(size=(2,) + g.n)
    w = op.weights()
    lhs = np.sum(op.laplacian(u) * v * w)
    rhs = np.sum(u * op.laplacian(v) * w)
    return float(abs(lhs - rhs) / max(1.0, abs(lhs)))


def criterion_3():
    errs = [_mms_error(n) for n in (32, 64, 128, 256)]
    orders = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
    g0 = GridSpec.build([0, 0], [1, 1], [256, 256], 1.0)
    g = GridSpec.build([0, 0], [1, 1], [256, 256], 1000 * g0.dt)
    k = 2 * np.pi * np.array([1.0, 1.0])
    s = np.sin(g.cell_centres() @ k)
    op = WaveOperator(g, FLAT, PERIODIC)
    out = solve_linear(g, FLAT, PERIODIC, (np.zeros(g.n), np.linalg.norm(k) * s), op=op)
    drift = energy_drift(out, op=op)
    sym = _symmetry_defect()
    ok = all(abs(o - 2.0) <= 0.3 for o in orders) and drift < 1e-3 and g.n_t >= 1000 \
        and sym <= 1e-12
    return ok, (f"MMS orders {_fmt(orders)}, drift {drift:.2e} over {g.n_t} steps, "
                f"symmetry {sym:.1e}")


def criterion_4():
    sc = scene()
    eps = calibrated_ladder()[0]
    cfg = sc.solver.with_(save_every=1)
    u, B = picard_solve(sc.grid, sc.metric, cfg, eps, eps, *sc.sources, sc.coefficient)
    direct = solve_semilinear(sc.grid, sc.metric, cfg, eps, eps, *sc.sources, sc.coefficient)
    ratio = max(b / a for a, b in zip(B, B[1:]))
    gap = norm(u.like(u.data - direct.data), "L4")
    ok = ratio <= 0.6 and gap <= 10 * cfg.picard_tol
    return ok, f"eps {eps:.4g}, {len(B)} iterations, max ratio {ratio:.3f}, L4 gap {gap:.2e}"


def criterion_5():
    ladder = calibrated_ladder()
    defects, _ = expansion_ladder(scene(), ladder)
    slope, _, r2 = fit_loglog(ladder, defects)
    ok = 2.7 <= slope <= 3.3 and r2 > 0.95
    return ok, f"eps {_fmt(ladder)}, slope {slope:.3f}, R2 {r2:.5f}"


def criterion_6():
    sc = scene()
    eps = sc.experiment["eps"]
    d = [cross_difference(sc, e, e, born=True).discrepancy() for e in (eps, eps / 2)]
    ratio = d[0] / d[1]
    return 1.7 <= ratio <= 2.3, f"discrepancy {_fmt(d)}, ratio {ratio:.3f}"


def _cone_snr(sc):
    cr = cross_difference(sc)
    rep, _ = cone_report(sc, cr, prediction_for(sc, cr.field), interior=interior_mask(sc))
    return rep.snr


def criterion_7():
    sc = scene()
    snr = {"alpha=1": _cone_snr(sc), "alpha=0": _cone_snr(sc.with_alpha(0.0)),
           "shift 0.3": _cone_snr(sc.with_interface_shift(0.3))}
    ok = snr["alpha=1"] > 5 and snr["alpha=0"] < 2 and snr["shift 0.3"] < 2
    return ok, ", ".join(f"{k} snr {v:.4g}" for k, v in snr.items())


def criterion_8():
    sc = scene().with_alpha(0.0).updated({"coefficient": {"potential": {"strength": 1.0}}})
    rep = perturbation_report(sc, perturbation_split(sc, oracle=False))
    refl = [rep["V_reflected_1"]["snr"], rep["V_reflected_2"]["snr"]]
    cone = rep["W_cone"]["snr"]
    ok = min(refl) > 5 and cone < 2
    return ok, f"V reflected snr {_fmt(refl)}, W cone snr {cone:.4g}"


def criterion_9():
    sc = scene()
    reference = born_response(sc, 1.0)
    pred = prediction_for(sc, reference.field)
    tube = cone_tube(sc, reference.field, pred, interior_mask(sc))
    born_err = 0.0
    for alpha in (0.5, 1.0, 2.0, 4.0):
        est = recover_jump(born_response(sc, alpha), reference, 1.0, tube)
        born_err = max(born_err, abs(est.alpha_hat - alpha) / alpha)
    rows = []
    for alpha in (1.0, 2.0):
        est = recover_jump(cross_difference(sc.with_alpha(alpha)), reference, 1.0, tube)
        rows.append((alpha, est.alpha_hat, est.residual))
    nl_ok = all(abs(a_hat - a) <= 0.1 * a and res < 0.2 for a, a_hat, res in rows)
    detail = "; ".join(f"alpha {a:g} -> {a_hat:.5f} (residual {res:.3g})" for a, a_hat, res in rows)
    return born_err <= 1e-9 and nl_ok, f"Born max rel error {born_err:.1e}; nonlinear {detail}"


def criterion_10():
    sc = scene()
    ladder = sc.experiment["s0_ladder"]
    on, on_reps = locate_interface(sc)
    off, off_reps = locate_interface(sc.with_interface_shift(0.3))
    ok = len(ladder) == 3 and on and not off
    return ok, (f"on interface {on} snr {_fmt([r['snr'] for r in on_reps])}; "
                f"shifted {off} snr {_fmt([r['snr'] for r in off_reps])}")


def criterion_11():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        codes = [run("cross", str(CROSSING), str(tmp / f"t{k}"), threads=k) for k in (1, 8)]
        same = all((tmp / "t1" / f).read_bytes() == (tmp / "t8" / f).read_bytes()
                   for f in ("cross_final.wfg", "cross_history.wfg"))
        reports = [json.loads((tmp / f"t{k}" / "cross.json").read_text()) for k in (1, 8)]
    ok = codes == [0, 0] and same and reports[0] == reports[1]
    return ok, f"exit codes {codes}, snapshots identical {same}"


CRITERIA = {
    1: ("ray kernel", criterion_1),
    2: ("reflection law", criterion_2),
    3: ("solver convergence", criterion_3),
    4: ("Picard contraction", criterion_4),
    5: ("expansion order", criterion_5),
    6: ("cross difference vs Born", criterion_6),
    7: ("cone existence and absence", criterion_7),
    8: ("linear versus nonlinear split", criterion_8),
    9: ("jump recovery", criterion_9),
    10: ("interface membership", criterion_10),
    11: ("thread determinism", criterion_11),
}


def evaluate(k):
    name, fn = CRITERIA[k]
    ok, detail = fn()
    line = f"{'PASS' if ok else 'FAIL'} criterion {k:2d} ({name}): {detail}"
    return ok, line


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, capsys):
    ok, line = evaluate(k)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(k) for k in sorted(CRITERIA)]
    for _, line in results:
        print(line, flush=True)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
