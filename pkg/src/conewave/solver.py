"""Leapfrog time stepping for ``P u + q u + a u^2 = f`` with ``P = d_t^2 + Delta_g``.

``Delta_g`` is the positive Laplace-Beltrami operator, discretised in flux
form ``-(1/sqrt g) D-_i (sqrt g g^{ii} D+_i u)`` with centred cross terms
for non-diagonal metrics.  The boundary is a quadratic sponge layer
(default), periodic, or homogeneous Dirichlet.

With the damping ``sigma`` the update is::

    (1 + sigma dt/2) u^{n+1} = 2 u^n - (1 - sigma dt/2) u^{n-1} + dt^2 r^n
    u^1 = u^0 + dt u_t + dt^2/2 (r^0 - sigma u_t)

with ``r^n = -Delta_h u^n - q u^n - a (u^n)^2 + f^n``.  The nonlinear term
is explicit, so the discrete solution has an exact power expansion in the
initial-data amplitude whose terms are again leapfrog solutions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import BlowUp, NoContraction, ValidationError
from .fields import CoefficientSpec, GridSpec, SourceSpec, WaveField, build_coefficient, \
    build_potential, build_pulse
from .geometry import FlatMetric, Metric

__all__ = [
    "SolverConfig",
    "WaveOperator",
    "Leapfrog",
    "step",
    "solve_linear",
    "solve_semilinear",
    "picard_solve",
    "energy_drift",
    "scaled_initial",
]


@dataclass(frozen=True)
class SolverConfig:
    """Solver controls.

    ``sponge_strength`` of ``None`` picks ``25 c_max / (sponge_width h)``.
    ``blowup_cap`` of ``None`` means ``blowup_factor`` times the largest
    initial amplitude.  ``save_every`` sets the stride of stored slices.
    """

    cfl: float = 0.5
    sponge_width: int = 20
    sponge_strength: float | None = None
    blowup_cap: float | None = None
    blowup_factor: float = 1e6
    picard_max_iter: int = 40
    picard_tol: float = 1e-10
    boundary: str = "sponge"
    save_every: int = 1
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.cfl <= 0.5:
            raise ValidationError(f"cfl must lie in (0, 0.5], got {self.cfl}", "solver.cfl")
        if self.boundary not in ("sponge", "periodic", "dirichlet"):
            raise ValidationError(f"unknown boundary {self.boundary!r}", "solver.boundary")
        if self.sponge_width < 0:
            raise ValidationError("sponge_width must be >= 0", "solver.sponge_width")
        if self.save_every < 1:
            raise ValidationError("save_every must be >= 1", "solver.save_every")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1", "solver.threads")
        if self.picard_max_iter < 1 or not self.picard_tol > 0:
            raise ValidationError("invalid Picard controls", "solver.picard_tol")

    def with_(self, **kw):
        return replace(self, **kw)

    def to_config(self):
        return {"cfl": self.cfl, "sponge_width": self.sponge_width,
                "sponge_strength": self.sponge_strength, "blowup_cap": self.blowup_cap,
                "blowup_factor": self.blowup_factor, "picard_max_iter": self.picard_max_iter,
                "picard_tol": self.picard_tol, "boundary": self.boundary,
                "save_every": self.save_every}


class WaveOperator:
    """Discrete operator data for one grid, metric and boundary choice.

    The update is evaluated on slabs of rows along the first axis; each
    cell is computed by the same arithmetic whatever the slab partition, so
    results do not depend on ``threads``.
    """

    def __init__(self, grid: GridSpec, m: Metric | None, cfg: SolverConfig):
        self.grid = grid
        self.metric = m or FlatMetric(grid.d)
        self.cfg = cfg
        self.d = grid.d
        self.h = grid.h
        self.dt = grid.dt
        self.periodic = cfg.boundary == "periodic"
        self.flat = isinstance(self.metric, FlatMetric)
        if cfg.cfl < grid.cfl - 1e-12:
            raise ValidationError(f"grid cfl {grid.cfl:.4g} exceeds solver cfl {cfg.cfl}",
                                  "solver.cfl")
        x = grid.cell_centres()
        if self.flat:
            self.sqrt_g = None
            self.faces = None
            self.cross = None
        else:
            self.sqrt_g = self.metric.sqrt_det_g(x)
            self.faces = [self._face_coef(i) for i in range(self.d)]
            self.cross = None
            if not self.metric.is_diagonal():
                gs = self.metric.gstar(x)
                self.cross = {(i, j): self.sqrt_g * gs[..., i, j]
                              for i in range(self.d) for j in range(self.d) if i != j}
        self.sigma = self._sponge() if cfg.boundary == "sponge" else None
        if self.sigma is not None:
            half = 0.5 * self.dt * self.sigma
            self.c_minus = 1.0 - half
            self.c_plus = 1.0 + half
        n0 = grid.n[0]
        k = min(cfg.threads, n0)
        cuts = np.linspace(0, n0, k + 1).round().astype(int)
        self.blocks = [(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]
        self._pool = ThreadPoolExecutor(max_workers=len(self.blocks)) if len(self.blocks) > 1 \
            else None

    def __del__(self):
        if getattr(self, "_pool", None) is not None:
            self._pool.shutdown(wait=False)

    def _face_coef(self, i):
        # faces j = 0..n_i along axis i, face j sits between cells j-1 and j
        grid = self.grid
        axes = grid.axes()
        axes[i] = grid.origin[i] + np.arange(grid.n[i] + 1) * grid.h
        xf = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        c = self.metric.sqrt_det_g(xf) * self.metric.gstar(xf)[..., i, i]
        if self.periodic:
            first = [slice(None)] * self.d
            last = [slice(None)] * self.d
            first[i] = 0
            last[i] = -1
            c[tuple(first)] = c[tuple(last)]
        return c

    def _sponge(self):
        grid = self.grid
        w = self.cfg.sponge_width
        if w == 0:
            return None
        strength = self.cfg.sponge_strength
        if strength is None:
            strength = 25.0 * grid.c_max / (w * grid.h)
        L = w * grid.h
        sig = np.zeros(grid.n)
        for i, ax in enumerate(grid.axes()):
            lo = grid.origin[i] + L
            hi = grid.origin[i] + grid.extent[i] - L
            depth = np.maximum(np.maximum(lo - ax, ax - hi), 0.0) / L
            shape = [1] * self.d
            shape[i] = -1
            sig = np.maximum(sig, strength * depth.reshape(shape) ** 2)
        return sig

    @property
    def interior_mask(self):
        """Cells outside the sponge layer."""
        if self.sigma is None:
            return np.ones(self.grid.n, dtype=bool)
        return self.sigma == 0

    # -- stencil ------------------------------------------------------------

    def pad(self, u):
        mode = "wrap" if self.periodic else "constant"
        width = 2 if self.cross is not None else 1
        return np.pad(u, width, mode=mode)

    def _lap_block(self, up, i0, i1):
        """``-Delta_h u`` on rows ``i0:i1`` from the padded array ``up``."""
        d, h2 = self.d, self.h * self.h
        p = 2 if self.cross is not None else 1
        n = self.grid.n

        def sl(axis, lo, hi):
            # rows i0:i1 in the interior, with axis `axis` shifted to lo:hi (padded coords)
            idx = [slice(p, p + n[k]) for k in range(d)]
            idx[0] = slice(p + i0, p + i1)
            idx[axis] = slice(lo, hi)
            return up[tuple(idx)]

        if self.flat:
            acc = None
            for k in range(d):
                lo0 = p + (i0 if k == 0 else 0)
                hi0 = p + (i1 if k == 0 else n[k])
                term = sl(k, lo0 + 1, hi0 + 1) + sl(k, lo0 - 1, hi0 - 1)
                acc = term if acc is None else acc + term
            centre = sl(0, p + i0, p + i1)
            return (acc - (2 * d) * centre) / h2

        acc = None
        for k in range(d):
            a0 = i0 if k == 0 else 0
            a1 = i1 if k == 0 else n[k]
            diff = sl(k, p + a0, p + a1 + 1) - sl(k, p + a0 - 1, p + a1)
            cf = self.faces[k]
            cidx = [slice(None)] * d
            cidx[0] = slice(i0, i1 + 1) if k == 0 else slice(i0, i1)
            cidx[k] = slice(a0, a1 + 1)
            flux = cf[tuple(cidx)] * diff
            fa = [slice(None)] * d
            fb = [slice(None)] * d
            fa[k] = slice(1, None)
            fb[k] = slice(None, -1)
            div = flux[tuple(fa)] - flux[tuple(fb)]
            acc = div if acc is None else acc + div
        if self.cross is not None:
            acc = acc + self._cross_block(up, i0, i1)
        return acc / (h2 * self.sqrt_g[i0:i1])

    def _cross_block(self, up, i0, i1):
        # sum_{i != j} D0_i (c_ij D0_j u) times h^2, from an array padded by 2
        d = self.d
        n = self.grid.n
        ext = tuple(slice(1, 3 + n[k]) for k in range(d))
        out = 0.0
        for (i, j), c in self.cross.items():
            lo = list(ext)
            hi = list(ext)
            lo[j] = slice(0, 2 + n[j])
            hi[j] = slice(2, 4 + n[j])
            dj = 0.5 * (up[tuple(hi)] - up[tuple(lo)])
            flux = np.pad(c, 1, mode="wrap" if self.periodic else "edge") * dj
            lo = [slice(1, 1 + n[k]) for k in range(d)]
            hi = list(lo)
            lo[i] = slice(0, n[i])
            hi[i] = slice(2, 2 + n[i])
            out = out + 0.5 * (flux[tuple(hi)] - flux[tuple(lo)])
        return out[i0:i1]

    def laplacian(self, u):
        """``-Delta_h u`` on the whole grid (the d'Alembertian sign: ``u_tt = L u``)."""
        up = self.pad(u)
        return self._lap_block(up, 0, self.grid.n[0])

    def positive_laplacian(self, u):
        """``Delta_h u`` with the positive sign convention."""
        return -self.laplacian(u)

    # -- update ---------------------------------------------------------------

    def _update_block(self, out, up, prev, curr, q, extra, u1, i0, i1):
        dt2 = self.dt * self.dt
        r = slice(i0, i1)
        rhs = self._lap_block(up, i0, i1)
        if q is not None:
            rhs = rhs - q[r] * curr[r]
        if extra is not None:
            rhs = rhs + extra[r]
        sig = self.sigma
        if prev is None:
            if sig is None:
                out[r] = curr[r] + self.dt * u1[r] + 0.5 * dt2 * rhs
            else:
                out[r] = curr[r] + self.dt * u1[r] + 0.5 * dt2 * (rhs - sig[r] * u1[r])
        elif sig is None:
            out[r] = 2.0 * curr[r] - prev[r] + dt2 * rhs
        else:
            out[r] = (2.0 * curr[r] - self.c_minus[r] * prev[r] + dt2 * rhs) / self.c_plus[r]

    def advance(self, prev, curr, q=None, extra=None, u1=None):
        """One leapfrog step; ``prev is None`` selects the first (Taylor) step."""
        if prev is None and u1 is None:
            u1 = np.zeros_like(curr)
        out = np.empty_like(curr)
        up = self.pad(curr)
        if self._pool is None:
            self._update_block(out, up, prev, curr, q, extra, u1, 0, self.grid.n[0])
        else:
            futs = [self._pool.submit(self._update_block, out, up, prev, curr, q, extra, u1, a, b)
                    for a, b in self.blocks]
            for f in futs:
                f.result()
        return out

    # -- diagnostics ------------------------------------------------------------

    def weights(self):
        hd = self.h ** self.d
        return hd if self.sqrt_g is None else self.sqrt_g * hd

    def energy(self, prev, curr, nxt):
        """Energy at the middle slice with centred ``u_t`` over the whole grid."""
        ut = (nxt - prev) / (2 * self.dt)
        w = self.weights()
        kin = np.sum(ut * ut * w)
        pot = 0.0
        for k in range(self.d):
            if self.periodic:
                du = np.roll(curr, -1, axis=k) - curr
            else:
                pad = [(0, 0)] * self.d
                pad[k] = (0, 1)
                du = np.diff(np.pad(curr, pad), axis=k)
            du = du / self.h
            if self.faces is None:
                pot += np.sum(du * du) * self.h ** self.d
            else:
                fidx = [slice(None)] * self.d
                fidx[k] = slice(1, None)
                pot += np.sum(self.faces[k][tuple(fidx)] * du * du) * self.h ** self.d
        return 0.5 * float(kin + pot)


class Leapfrog:
    """Stateful stepper holding the last two slices."""

    def __init__(self, op: WaveOperator, u0, u1=None, q=None):
        self.op = op
        self.n = 0
        self.prev = None
        self.curr = np.array(u0, dtype=float)
        self.u1 = np.zeros_like(self.curr) if u1 is None else np.asarray(u1, dtype=float)
        self.q = q

    @property
    def t(self):
        return self.n * self.op.dt

    def advance(self, extra=None):
        nxt = self.op.advance(self.prev, self.curr, self.q, extra,
                              self.u1 if self.prev is None else None)
        self.prev, self.curr = self.curr, nxt
        self.n += 1
        return nxt


def step(u_prev, u_curr, a_grid, q_grid, f_slice, grid: GridSpec, m: Metric | None,
         cfg: SolverConfig, op: WaveOperator | None = None, u_t=None):
    """Single leapfrog step ``u_next`` from ``(u_prev, u_curr)``.

    ``u_prev=None`` performs the Taylor start using ``u_t``.  Raises
    :class:`BlowUp` if ``max|u_next|`` exceeds ``cfg.blowup_cap`` (when set).
    """
    op = op or WaveOperator(grid, m, cfg)
    extra = _forcing(u_curr, a_grid, f_slice)
    nxt = op.advance(u_prev, np.asarray(u_curr, dtype=float), q_grid, extra, u_t)
    if cfg.blowup_cap is not None:
        _check_blowup(nxt, cfg.blowup_cap, None, None)
    return nxt


def _forcing(u, a, f):
    extra = None
    if a is not None:
        extra = -a * u * u
    if f is not None:
        extra = f if extra is None else extra + f
    return extra


def _check_blowup(u, cap, n, t):
    peak = float(np.max(np.abs(u)))
    if not np.isfinite(peak) or peak > cap:
        raise BlowUp(f"max|u| = {peak:.3e} exceeds cap {cap:.3e} at step {n}", step=n, time=t)


def _cap(cfg: SolverConfig, *arrays):
    if cfg.blowup_cap is not None:
        return cfg.blowup_cap
    ref = max([float(np.max(np.abs(a))) for a in arrays if a is not None] + [0.0])
    return cfg.blowup_factor * (ref if ref > 0 else 1.0)


def _saved_steps(n_t, stride):
    return np.arange(0, n_t + 1, stride)


class _Recorder:
    """Collects stored slices and running diagnostics of one march."""

    def __init__(self, op: WaveOperator, stride, diagnostics=True):
        self.op = op
        self.stride = stride
        self.slices = []
        self.steps = []
        self.diag = diagnostics
        self.rows = []
        self.l2 = 0.0
        self.l4 = 0.0
        self.w = op.weights()

    def record(self, n, u, prev=None, nxt=None):
        if n % self.stride == 0:
            self.slices.append(u.copy())
            self.steps.append(n)
        if self.diag:
            dt = self.op.dt
            uu = u * u
            self.l2 += float(np.sum(uu * self.w)) * dt
            self.l4 += float(np.sum(uu * uu * self.w)) * dt

    def energy_row(self, n, prev, curr, nxt):
        if self.diag and (n % self.stride == 0):
            self.rows.append((n, n * self.op.dt, np.sqrt(self.l2), self.l4 ** 0.25,
                              self.op.energy(prev, curr, nxt)))

    def field(self, grid, metadata, blowup=False):
        md = dict(metadata)
        if self.diag:
            md["diagnostics"] = np.array(self.rows).reshape(-1, 5)
            md["l2"] = float(np.sqrt(self.l2))
            md["l4"] = float(self.l4 ** 0.25)
        return WaveField(grid, np.array(self.slices), np.array(self.steps), md, blowup)


def _march(op: WaveOperator, u0, u1, q, forcing, cap, stride, metadata, diagnostics=True,
           nonlinear_a=None):
    """Shared loop for linear and semilinear solves.

    ``forcing(n, u)`` returns the source slice at step ``n`` (or ``None``).
    """
    grid = op.grid
    lf = Leapfrog(op, u0, u1, q)
    rec = _Recorder(op, stride, diagnostics)
    for n in range(grid.n_t):
        f = forcing(n, lf.curr) if forcing is not None else None
        if nonlinear_a is not None:
            nl = -nonlinear_a * lf.curr * lf.curr
            f = nl if f is None else nl + f
        prev = lf.prev
        rec.record(n, lf.curr)
        nxt = lf.advance(f)
        if prev is not None:
            rec.energy_row(n, prev, lf.prev, nxt)
        try:
            _check_blowup(nxt, cap, n + 1, (n + 1) * grid.dt)
        except BlowUp:
            rec.record(n + 1, nxt)
            raise
    rec.record(grid.n_t, lf.curr)
    md = dict(metadata)
    md.setdefault("boundary", op.cfg.boundary)
    return rec.field(grid, md)


def _source_fn(source, grid):
    if source is None:
        return None
    if callable(source):
        return source
    arr = np.asarray(source, dtype=float)
    if arr.shape != (grid.n_t + 1,) + tuple(grid.n):
        raise ValidationError("source history must have shape (n_t + 1, *n)", "source")
    return lambda n, u: arr[n]


def solve_linear(grid: GridSpec, m: Metric | None, cfg: SolverConfig, initial=None,
                 source=None, q_grid=None, op: WaveOperator | None = None, metadata=None):
    """Linear run ``P v + q v = f`` with Cauchy data ``(u0, u1)``.

    ``source`` is ``None``, a full step history ``(n_t + 1, *n)`` or a
    callable ``(n, u_n) -> slice``.  With zero initial data this is the
    causal inverse ``Q f``.
    """
    op = op or WaveOperator(grid, m, cfg)
    if initial is None:
        u0 = np.zeros(grid.n)
        u1 = None
    else:
        u0, u1 = initial
    fn = _source_fn(source, grid)
    cap = _cap(cfg, u0, u1)
    if initial is None and source is not None and cfg.blowup_cap is None:
        cap = np.inf
    return _march(op, u0, u1, q_grid, fn, cap, cfg.save_every,
                  dict(metadata or {}, kind="linear"))


def scaled_initial(grid: GridSpec, m: Metric | None, eps1, eps2, src1: SourceSpec,
                   src2: SourceSpec):
    """``eps1 * pulse1 + eps2 * pulse2`` as a Cauchy data pair."""
    m = m or FlatMetric(grid.d)
    u0 = np.zeros(grid.n)
    u1 = np.zeros(grid.n)
    for eps, src in ((eps1, src1), (eps2, src2)):
        if eps == 0 or src is None:
            continue
        p0, p1 = build_pulse(grid, m, src)
        u0 = u0 + eps * p0
        u1 = u1 + eps * p1
    return u0, u1


def solve_semilinear(grid: GridSpec, m: Metric | None, cfg: SolverConfig, eps1, eps2,
                     src1: SourceSpec, src2: SourceSpec, coeff: CoefficientSpec | None,
                     delta=None, op: WaveOperator | None = None, a_grid=None, q_grid=None,
                     initial=None):
    """Semilinear run with Cauchy data ``eps1 pulse1 + eps2 pulse2``.

    With ``delta`` given, both the potential and the nonlinear coefficient
    are multiplied by ``delta`` (the two-parameter perturbation setting);
    without it the potential is off and ``a`` is used as is.
    ``metadata['l4']`` and ``metadata['diagnostics']`` (rows of step, time,
    L2, L4 accumulated, energy) are filled in.
    """
    op = op or WaveOperator(grid, m, cfg)
    if a_grid is None:
        a_grid = build_coefficient(grid, coeff) if coeff is not None else np.zeros(grid.n)
        if delta is not None:
            a_grid = delta * a_grid
    if q_grid is None and delta is not None and coeff is not None:
        q_grid = build_potential(grid, coeff, delta)
    if q_grid is not None and not np.any(q_grid):
        q_grid = None
    u0, u1 = initial if initial is not None else scaled_initial(grid, op.metric, eps1, eps2,
                                                                 src1, src2)
    cap = _cap(cfg, u0, u1)
    a_use = a_grid if np.any(a_grid) else None
    md = {"kind": "semilinear", "eps": [eps1, eps2], "delta": delta}
    return _march(op, u0, u1, q_grid, None, cap, cfg.save_every, md, nonlinear_a=a_use)


def _l4_history(fields_diff, w, dt):
    return float(np.sum(fields_diff ** 4 * w) * dt) ** 0.25


def picard_solve(grid: GridSpec, m: Metric | None, cfg: SolverConfig, eps1, eps2,
                 src1: SourceSpec, src2: SourceSpec, coeff: CoefficientSpec | None,
                 op: WaveOperator | None = None, a_grid=None):
    """Picard iteration ``P u_{m+1} = -a u_m^2`` with the scaled pulses as data.

    ``u_1`` is the linear run.  ``B_m = ||u_{m+1} - u_m||_{L4}`` over all
    time steps; iteration stops once ``B_m < picard_tol``.  Returns the
    final iterate and the list ``[B_1, B_2, ...]``.
    """
    cfg1 = cfg.with_(save_every=1)
    op = op or WaveOperator(grid, m, cfg1)
    if a_grid is None:
        a_grid = build_coefficient(grid, coeff) if coeff is not None else np.zeros(grid.n)
    initial = scaled_initial(grid, op.metric, eps1, eps2, src1, src2)
    cap = _cap(cfg, *initial)
    w = op.weights()

    def run(prev_hist):
        if prev_hist is None:
            fn = None
        else:
            fn = lambda n, u: -a_grid * prev_hist[n] * prev_hist[n]  # noqa: E731
        return _march(op, initial[0], initial[1], None, fn, cap, 1, {"kind": "picard"},
                      diagnostics=False)

    u = run(None)
    B = []
    slow = 0
    for it in range(cfg.picard_max_iter):
        nxt = run(u.data)
        b = _l4_history(nxt.data - u.data, w, grid.dt)
        B.append(b)
        u = nxt
        if b < cfg.picard_tol:
            break
        if len(B) >= 2 and B[-2] > 0 and B[-1] / B[-2] > 0.9:
            slow += 1
            if slow >= 2:
                raise NoContraction(f"Picard ratios above 0.9 twice in a row (B = {B[-3:]})")
        else:
            slow = 0
    else:
        raise NoContraction(f"Picard did not reach tol {cfg.picard_tol} in "
                            f"{cfg.picard_max_iter} iterations (last B = {B[-1]:.3e})")
    u.metadata["picard_B"] = list(B)
    u.metadata["picard_iterations"] = len(B)
    if cfg.save_every > 1:
        keep = slice(None, None, cfg.save_every)
        u = WaveField(grid, u.data[keep], u.steps[keep], u.metadata)
    return u, B


def energy_drift(field: WaveField, window=None, metric: Metric | None = None, op=None):
    """``(max - min) / mean`` of the energy over stored slices within ``window``.

    Energies use ``op`` (matching the solver's discrete gradient) when given,
    otherwise :func:`conewave.fields.energy`.  The zero field has drift 0.
    """
    from .fields import energy

    t = field.times
    ks = [k for k in range(1, field.data.shape[0] - 1)
          if window is None or window[0] <= t[k] <= window[1]]
    if not ks:
        raise ValidationError("energy window contains no interior slices", "window")
    if op is not None:
        if field.stride != 1:
            raise ValidationError("operator energies need every time step stored")
        E = np.array([op.energy(field.data[k - 1], field.data[k], field.data[k + 1])
                      for k in ks])
    else:
        E = np.array([energy(field, k, metric) for k in ks])
    mean = float(np.mean(E))
    if mean == 0:
        return 0.0
    return float((E.max() - E.min()) / mean)
