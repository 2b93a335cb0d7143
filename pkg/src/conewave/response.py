"""Born terms and finite-difference extraction of the nonlinear response.

For Cauchy data ``eps1 f1 + eps2 f2`` the solution expands as::

    u = eps1 v1 + eps2 v2 - eps1^2 X1 - eps2^2 X2 - 2 eps1 eps2 X12 + O(eps^3)

with ``X1 = Q(a v1^2)``, ``X2 = Q(a v2^2)`` and ``X12 = Q(a v1 v2)``.  The
mixed second difference of four corner runs isolates ``-2 X12``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, ValidationError
from .fields import WaveField, build_coefficient, build_potential, build_pulse
from .solver import Leapfrog, SolverConfig, WaveOperator, scaled_initial, solve_linear, \
    solve_semilinear

__all__ = [
    "CrossResponse",
    "born_terms",
    "born_march",
    "cross_difference",
    "expansion_defect",
    "expansion_ladder",
    "perturbation_split",
    "PerturbationSplit",
    "eps_scale",
    "born_response",
    "fit_loglog",
    "default_stride",
    "max_stable_eps",
]


def default_stride(scene):
    """Slice stride from the scene, or about 60 stored slices when unset."""
    s = scene.experiment.get("save_every")
    if s is not None and s != 1:
        return int(s)
    if scene.solver.save_every != 1:
        return scene.solver.save_every
    return max(1, scene.grid.n_t // 60)


def _operator(scene, threads=1, stride=None):
    cfg = scene.solver.with_(threads=threads, save_every=stride or default_stride(scene))
    return WaveOperator(scene.grid, scene.metric, cfg), cfg


def born_terms(v1: WaveField, v2: WaveField, a_grid, m=None, cfg: SolverConfig | None = None,
               op: WaveOperator | None = None):
    """``(X1, X2, X12)`` from stored linear histories ``v1`` and ``v2``.

    Both histories must hold every time step (stride 1) so the product
    sources ``a v1^2``, ``a v2^2``, ``a v1 v2`` are formed at matching steps.
    """
    if v1.grid is not v2.grid and v1.grid != v2.grid:
        raise ValidationError("v1 and v2 live on different grids")
    if v1.stride != 1 or v2.stride != 1 or v1.steps.size != v1.grid.n_t + 1:
        raise ValidationError("born_terms needs full histories (every step stored)")
    grid = v1.grid
    cfg = cfg or SolverConfig(cfl=max(grid.cfl, 1e-3), boundary=v1.metadata.get("boundary",
                                                                              "sponge"))
    op = op or WaveOperator(grid, m, cfg)
    a = np.asarray(a_grid, dtype=float)
    out = []
    for s1, s2 in ((v1.data, v1.data), (v2.data, v2.data), (v1.data, v2.data)):
        src = a[None] * s1 * s2
        out.append(solve_linear(grid, m, cfg, None, source=src, op=op,
                                metadata={"kind": "born"}))
    return tuple(out)


def born_march(op: WaveOperator, initial1, initial2, a_grid, terms=("X12",), q_grid=None,
               stride=None):
    """Stream ``v1``, ``v2`` and the requested Born terms in lock step.

    Returns a dict of :class:`WaveField` keyed by ``v1``, ``v2`` and each
    requested term (``X1``, ``X2``, ``X12``).  ``initial2`` may be ``None``
    (then only ``v1`` and ``X1`` are meaningful).  Memory is that of the
    stored slices only.
    """
    grid = op.grid
    stride = stride or op.cfg.save_every
    a = np.asarray(a_grid, dtype=float)
    v = {"v1": Leapfrog(op, initial1[0], initial1[1], q_grid)}
    if initial2 is not None:
        v["v2"] = Leapfrog(op, initial2[0], initial2[1], q_grid)
    X = {k: Leapfrog(op, np.zeros(grid.n), None, q_grid) for k in terms}
    pairs = {"X1": ("v1", "v1"), "X2": ("v2", "v2"), "X12": ("v1", "v2")}
    store = {k: [] for k in list(v) + list(terms)}
    steps = []
    for n in range(grid.n_t + 1):
        if n % stride == 0:
            steps.append(n)
            for k, lf in list(v.items()) + list(X.items()):
                store[k].append(lf.curr.copy())
        if n == grid.n_t:
            break
        srcs = {k: a * v[pairs[k][0]].curr * v[pairs[k][1]].curr for k in terms}
        for lf in v.values():
            lf.advance()
        for k, lf in X.items():
            lf.advance(srcs[k])
    steps = np.array(steps)
    md = {"boundary": op.cfg.boundary}
    return {k: WaveField(grid, np.array(s), steps.copy(), dict(md, kind=k))
            for k, s in store.items()}


@dataclass
class CrossResponse:
    """Estimate of the mixed derivative ``d_eps1 d_eps2 u`` at zero."""

    field: WaveField
    eps_pair: tuple
    corners: dict = field(default_factory=dict)
    born_reference: WaveField | None = None
    alpha: float | None = None
    method: str = "nonlinear-cross"

    @classmethod
    def from_born(cls, X12: WaveField, alpha=None):
        """Oracle response ``-2 X12``."""
        return cls(X12.like(-2.0 * X12.data, kind="cross-born"), (0.0, 0.0), {}, X12, alpha,
                   "born-oracle")

    def discrepancy(self):
        """``||field + 2 X12|| / ||X12||`` over all stored slices."""
        if self.born_reference is None:
            raise ValidationError("no Born reference attached")
        ref = self.born_reference.data
        den = np.linalg.norm(ref)
        if den == 0:
            return float(np.linalg.norm(self.field.data))
        return float(np.linalg.norm(self.field.data + 2.0 * ref) / den)

    def report(self):
        out = {"eps_pair": list(self.eps_pair), "method": self.method, "alpha": self.alpha,
               "field_norm": float(np.sqrt(np.sum(self.field.data ** 2) * self.field.grid.h
                                           ** self.field.grid.d * self.field.slice_dt)),
               "field_max": float(np.max(np.abs(self.field.data))),
               "corners": {k: v for k, v in self.corners.items()}}
        if self.born_reference is not None:
            out["born_discrepancy"] = self.discrepancy()
        return out


def _run_corner(args):
    op, e1, e2, src1, src2, a_grid, q_grid = args
    initial = scaled_initial(op.grid, op.metric, e1, e2, src1, src2)
    return solve_semilinear(op.grid, op.metric, op.cfg, e1, e2, src1, src2, None, op=op,
                            a_grid=a_grid, q_grid=q_grid, initial=initial)


def cross_difference(scene, eps1=None, eps2=None, src1=None, src2=None, coeff=None,
                     delta=None, threads=1, born=False, stride=None):
    """Mixed second difference ``[u(e1,e2) - u(e1,0) - u(0,e2) + u(0,0)] / (e1 e2)``.

    The four corner runs are independent and may run concurrently
    (``threads > 1``); the combination is formed in a fixed order so the
    result is identical for any thread count.  With ``delta`` set, the
    potential and the nonlinearity are scaled by ``delta``.  ``born=True``
    attaches the oracle ``X12`` from a streamed Born run.
    """
    de1, de2 = scene.eps_pair
    eps1 = de1 if eps1 is None else float(eps1)
    eps2 = de2 if eps2 is None else float(eps2)
    if eps1 == 0 or eps2 == 0:
        raise ValidationError("cross difference needs nonzero eps1 and eps2", "experiment.eps")
    src1 = src1 or scene.sources[0]
    src2 = src2 or scene.sources[1]
    coeff = coeff or scene.coefficient
    op, cfg = _operator(scene, threads=1, stride=stride)
    a_grid = build_coefficient(scene.grid, coeff)
    q_grid = None
    if delta is not None:
        a_grid = delta * a_grid
        q = build_potential(scene.grid, coeff, delta)
        q_grid = q if np.any(q) else None
    a_use = a_grid if np.any(a_grid) else np.zeros(scene.grid.n)
    corners = [("11", eps1, eps2), ("10", eps1, 0.0), ("01", 0.0, eps2), ("00", 0.0, 0.0)]
    jobs = [(op, e1, e2, src1, src2, a_use, q_grid) for _, e1, e2 in corners]
    results = {}
    errors = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 4)) as ex:
            futs = [ex.submit(_run_corner, j) for j in jobs]
            outs = []
            for f in futs:
                try:
                    outs.append(f.result())
                except BlowUp as exc:
                    outs.append(exc)
    else:
        outs = []
        for j in jobs:
            try:
                outs.append(_run_corner(j))
            except BlowUp as exc:
                outs.append(exc)
    for (name, _, _), r in zip(corners, outs):
        if isinstance(r, BlowUp):
            errors[name] = str(r)
        else:
            results[name] = r
    if errors:
        raise BlowUp(f"corner run(s) blew up: {errors}")
    u11, u10, u01, u00 = (results[k].data for k in ("11", "10", "01", "00"))
    data = (((u11 - u10) - u01) + u00) / (eps1 * eps2)
    base = results["11"]
    # amplitude of cancellation error in the mixed difference: one rounding
    # of the largest corner per step, accumulated as a random walk
    peak = max(float(np.max(np.abs(u))) for u in (u11, u10, u01, u00))
    roundoff = (np.finfo(float).eps * peak * np.sqrt(max(int(base.steps[-1]), 1))
                / abs(eps1 * eps2))
    fld = WaveField(scene.grid, data, base.steps.copy(),
                    {"kind": "cross", "boundary": cfg.boundary, "eps": [eps1, eps2],
                     "roundoff_scale": roundoff})
    info = {k: {"l4": results[k].metadata.get("l4"), "max": float(np.max(np.abs(results[k].data)))}
            for k in results}
    ref = None
    if born:
        i1 = build_pulse(scene.grid, scene.metric, src1)
        i2 = build_pulse(scene.grid, scene.metric, src2)
        ref = born_march(op, i1, i2, a_use, ("X12",), q_grid=q_grid)["X12"]
    return CrossResponse(fld, (eps1, eps2), info, ref, coeff.alpha)


def expansion_ladder(scene, eps_values, src1=None, src2=None, coeff=None, stride=None):
    """Defect ``||u(eps) - eps v + eps^2 Q(a v^2)||_{L2}`` for each ``eps``.

    ``v`` is the linear run of ``pulse1 + pulse2`` and ``u(eps)`` the
    semilinear run with data ``eps (pulse1 + pulse2)``.  ``v`` and
    ``Q(a v^2)`` are computed once for the whole ladder.
    """
    src1 = src1 or scene.sources[0]
    src2 = src2 or scene.sources[1]
    coeff = coeff or scene.coefficient
    op, cfg = _operator(scene, stride=stride)
    a_grid = build_coefficient(scene.grid, coeff)
    init = scaled_initial(scene.grid, scene.metric, 1.0, 1.0, src1, src2)
    bt = born_march(op, init, None, a_grid, ("X1",))
    v, X = bt["v1"], bt["X1"]
    w = scene.grid.h ** scene.grid.d * v.slice_dt
    out = []
    for eps in eps_values:
        u = solve_semilinear(scene.grid, scene.metric, cfg, eps, eps, src1, src2, coeff, op=op,
                             a_grid=a_grid, initial=(eps * init[0], eps * init[1]))
        r = u.data - eps * v.data + eps ** 2 * X.data
        out.append(float(np.sqrt(np.sum(r * r) * w)))
    return np.array(out), {"v": v, "X": X}


def expansion_defect(scene, eps, src1=None, src2=None, coeff=None, candidate=None):
    """Defect at one ``eps``; ``candidate`` replaces the nonlinear run when given."""
    if candidate is None:
        return float(expansion_ladder(scene, [eps], src1, src2, coeff)[0][0])
    src1 = src1 or scene.sources[0]
    src2 = src2 or scene.sources[1]
    coeff = coeff or scene.coefficient
    op, _ = _operator(scene, stride=candidate.stride)
    a_grid = build_coefficient(scene.grid, coeff)
    init = scaled_initial(scene.grid, scene.metric, 1.0, 1.0, src1, src2)
    bt = born_march(op, init, None, a_grid, ("X1",), stride=candidate.stride)
    r = candidate.data - eps * bt["v1"].data + eps ** 2 * bt["X1"].data
    return float(np.sqrt(np.sum(r * r) * scene.grid.h ** scene.grid.d * candidate.slice_dt))


def fit_loglog(x, y):
    """Least-squares slope, intercept and R^2 of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


@dataclass
class PerturbationSplit:
    V_est: WaveField
    W_est: WaveField
    delta: float
    eps: float
    V_oracle: WaveField | None = None
    W_oracle: WaveField | None = None

    def v_discrepancy(self):
        ref = self.V_oracle.data
        den = np.linalg.norm(ref)
        return float(np.linalg.norm(self.V_est.data - ref) / den) if den else \
            float(np.linalg.norm(self.V_est.data))


def perturbation_split(scene, delta=None, eps=None, coeff=None, threads=1, oracle=True,
                       stride=None):
    """Split of the potential-plus-nonlinearity response.

    ``V_est = [u_lin(delta) - u_lin(0)] / delta`` from two linear runs with
    ``a = 0``; ``W_est`` is the cross difference with ``delta q`` and
    ``delta a`` switched on, divided by ``delta``.  The oracles are
    ``-Q(q (u1 + u2))`` and ``-2 Q(a u1 u2)``.
    """
    delta = scene.experiment["delta"] if delta is None else float(delta)
    eps = scene.experiment["eps"] if eps is None else float(eps)
    coeff = coeff or scene.coefficient
    op, cfg = _operator(scene, stride=stride)
    grid = scene.grid
    src1, src2 = scene.sources
    init = scaled_initial(grid, scene.metric, 1.0, 1.0, src1, src2)
    q = build_potential(grid, coeff, delta)
    lin_d = solve_linear(grid, scene.metric, cfg, init, q_grid=q if np.any(q) else None, op=op)
    lin_0 = solve_linear(grid, scene.metric, cfg, init, op=op)
    V = lin_d.like((lin_d.data - lin_0.data) / delta, kind="V_est")
    cr = cross_difference(scene, eps, eps, coeff=coeff, delta=delta, threads=threads,
                          stride=stride)
    W = cr.field.like(cr.field.data / delta, kind="W_est",
                      roundoff_scale=cr.field.metadata["roundoff_scale"] / abs(delta))
    Vo = Wo = None
    if oracle:
        q1 = build_potential(grid, coeff, 1.0)
        Vo = solve_linear(grid, scene.metric, cfg, None, op=op,
                          source=lambda n, u, _q=q1, _v=_LinearTape(op, init): -_q * _v.at(n))
        a1 = build_coefficient(grid, coeff)
        i1 = build_pulse(grid, scene.metric, src1)
        i2 = build_pulse(grid, scene.metric, src2)
        X = born_march(op, i1, i2, a1, ("X12",))["X12"]
        Wo = X.like(-2.0 * X.data, kind="W_oracle")
    return PerturbationSplit(V, W, delta, eps, Vo, Wo)


class _LinearTape:
    """Free linear run advanced on demand, one step per call in order."""

    def __init__(self, op, initial):
        self.lf = Leapfrog(op, initial[0], initial[1])

    def at(self, n):
        while self.lf.n < n:
            self.lf.advance()
        if self.lf.n != n:
            raise ValidationError("tape queried out of order")
        return self.lf.curr



def max_stable_eps(scene, start=1.0, grow=2.0, bisect_steps=6, limit=2.0 ** 20, stride=None):
    """Largest data amplitude ``eps`` (equal pulses) that runs without blow-up.

    Doubles ``eps`` from ``start`` until a run blows up, then bisects
    geometrically.  Returns ``limit`` if nothing blows up below it.
    """
    op, cfg = _operator(scene, stride=stride or scene.grid.n_t)
    a_grid = build_coefficient(scene.grid, scene.coefficient)
    init = scaled_initial(scene.grid, scene.metric, 1.0, 1.0, *scene.sources)

    def stable(eps):
        try:
            solve_semilinear(scene.grid, scene.metric, cfg, eps, eps, None, None, None, op=op,
                             a_grid=a_grid, initial=(eps * init[0], eps * init[1]))
            return True
        except BlowUp:
            return False

    lo, hi = None, None
    eps = start
    while eps <= limit:
        if stable(eps):
            lo = eps
            eps *= grow
        else:
            hi = eps
            break
    if hi is None:
        return limit
    if lo is None:
        lo = hi
        while not stable(lo):
            hi = lo
            lo /= grow
            if lo < 1e-12:
                raise BlowUp("no stable amplitude found")
    for _ in range(bisect_steps):
        mid = np.sqrt(lo * hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


def eps_scale(scene, stride=None):
    """Amplitude scale of the expansion ladder.

    Uses ``experiment.eps_scale`` when set, otherwise the blow-up amplitude
    found by :func:`max_stable_eps`.
    """
    fixed = scene.experiment.get("eps_scale")
    if fixed is not None:
        return float(fixed)
    return float(max_stable_eps(scene, stride=stride))


def born_response(scene, alpha=None, stride=None):
    """Oracle cross response ``-2 X12`` of a scene, optionally at another jump."""
    sc = scene if alpha is None else scene.with_alpha(alpha)
    op, _ = _operator(sc, stride=stride)
    i1 = build_pulse(sc.grid, sc.metric, sc.sources[0])
    i2 = build_pulse(sc.grid, sc.metric, sc.sources[1])
    a_grid = build_coefficient(sc.grid, sc.coefficient)
    X12 = born_march(op, i1, i2, a_grid, ("X12",))["X12"]
    return CrossResponse.from_born(X12, sc.coefficient.alpha)

