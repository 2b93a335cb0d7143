"""Wavefront detection on predicted surfaces and recovery of the jump.

A surface is *detected* in a field when the high-passed energy in a thin
tube around it exceeds, by a factor ``threshold``, the energy in the same
tube translated ahead of the front along its slice normal.  Cells close to
the other predicted surfaces are excluded from both tubes, so a front that
is tangent to the tested surface does not leak into it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from .errors import DegenerateReference, EmptyTube, NoIntersection, UnderResolved, \
    ValidationError
from .fields import WaveField
from .raytrace import PredictedSupport, SampledSurface, predict_support
from .response import CrossResponse, cross_difference, fit_loglog

__all__ = [
    "DetectionConfig",
    "DetectionReport",
    "JumpEstimate",
    "Tube",
    "highpass",
    "tube_cells",
    "tube_energy",
    "detect_surfaces",
    "locate_interface",
    "recover_jump",
    "frequency_scaling_probe",
    "fit_power_law",
    "cone_tube",
    "prediction_for",
    "cone_report",
    "perturbation_report",
    "interior_mask",
]


@dataclass
class DetectionConfig:
    """Detection thresholds.

    ``radius`` is the tube radius (length), ``shift`` the background offset
    in units of ``radius``, ``exclusion`` the distance (length) from other
    surfaces inside which cells are ignored, ``window`` the time interval
    used (``None`` selects ``[t0 + delay, t_end]`` for the cone and the whole
    run otherwise) and ``cone_delay`` that delay.
    """

    radius: float
    threshold: float = 5.0
    shift: float = 6.0
    exclusion: float | None = None
    window: tuple | None = None
    cone_delay: float = 0.25
    highpass_cut: float | None = None
    interior: np.ndarray | None = None

    @classmethod
    def from_scene(cls, scene, interior=None):
        exp = scene.experiment
        r = scene.tube_radius
        exc = exp.get("exclusion_cells")
        win = exp.get("detect_window")
        return cls(radius=r, threshold=float(exp["threshold"]),
                   shift=float(exp["background_shift"]),
                   exclusion=None if exc is None else float(exc) * scene.grid.h,
                   window=None if win is None else tuple(win), interior=interior)

    @property
    def exclusion_distance(self):
        return 2.0 * self.radius if self.exclusion is None else self.exclusion


@dataclass
class DetectionReport:
    surface: str
    tube_energy: float
    background_energy: float
    snr: float
    detected: bool
    predicted: bool = True
    n_tube: int = 0
    n_background: int = 0
    error: str | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class JumpEstimate:
    alpha_hat: float
    reference_alpha: float
    residual: float
    method: str

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# tubes


def highpass(u, h, radius, highpass_cut=None):
    """Subtract a box blur of width ``2 radius`` (or ``2 pi / highpass_cut``).

    ``highpass_cut = 0`` disables the filter.
    """
    if highpass_cut == 0:
        return u
    width = 2.0 * radius if highpass_cut is None else 2.0 * np.pi / highpass_cut
    size = max(1, int(round(width / h)))
    if size % 2 == 0:
        size += 1
    if size == 1:
        return u
    return u - uniform_filter(u, size=size, mode="constant")


@dataclass
class Tube:
    """Cells of a tube, per stored slice index of a field."""

    cells: dict = field(default_factory=dict)

    @property
    def count(self):
        return int(sum(c.shape[0] for c in self.cells.values()))

    def mask(self, shape, k):
        m = np.zeros(shape, dtype=bool)
        if k in self.cells:
            m[tuple(self.cells[k].T)] = True
        return m


def _slice_map(field: WaveField, sample_times, window):
    """Pairs ``(surface time index, field slice index)`` with matching times."""
    out = []
    tol = 0.5 * field.grid.dt + 1e-12
    for i, t in enumerate(sample_times):
        if window is not None and not (window[0] <= t <= window[1]):
            continue
        j = int(np.argmin(np.abs(field.times - t)))
        if abs(field.times[j] - t) <= tol:
            out.append((i, j))
    return out


def _near(points, cells_xyz, radius):
    if points.shape[0] == 0:
        return np.zeros(cells_xyz.shape[0], dtype=bool)
    tree = cKDTree(points)
    dist, _ = tree.query(cells_xyz, k=1, distance_upper_bound=radius)
    return np.isfinite(dist)


def tube_cells(field: WaveField, surface: SampledSurface, sample_times, radius, window=None,
               exclude=(), exclusion=0.0, interior=None):
    """Cells within ``radius`` of ``surface`` on each matching slice."""
    grid = field.grid
    if radius < 2 * grid.h - 1e-12:
        raise ValidationError("tube radius must be at least 2 grid cells", "radius")
    x = grid.cell_centres().reshape(-1, grid.d)
    idx = np.indices(grid.n).reshape(grid.d, -1).T
    lo, hi = grid.origin, grid.origin + grid.extent
    tube = Tube()
    for i, j in _slice_map(field, sample_times, window):
        pts, _ = surface.at_slice(i)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        pts = pts[inside]
        if pts.shape[0] == 0:
            continue
        # candidate cells from the bounding box
        bl, bh = pts.min(axis=0) - radius, pts.max(axis=0) + radius
        cand = np.all((x >= bl) & (x <= bh), axis=1)
        sel = np.flatnonzero(cand)
        keep = _near(pts, x[sel], radius)
        sel = sel[keep]
        for other in exclude:
            if sel.size == 0:
                break
            opts, _ = other.at_slice(i)
            sel = sel[~_near(opts, x[sel], exclusion)]
        if interior is not None and sel.size:
            sel = sel[interior.reshape(-1)[sel]]
        if sel.size:
            tube.cells[j] = idx[sel]
    return tube


def _tube_mean_square(field: WaveField, tube: Tube, radius, highpass_cut):
    tot = 0.0
    count = 0
    for j, cells in sorted(tube.cells.items()):
        u = highpass(field.data[j], field.grid.h, radius, highpass_cut)
        vals = u[tuple(cells.T)]
        tot += float(np.sum(vals * vals))
        count += cells.shape[0]
    if count == 0:
        raise EmptyTube("no grid cells fall in the tube")
    return tot / count, count


def tube_energy(field: WaveField, surface: SampledSurface, radius, highpass_cut=None,
                sample_times=None, window=None, exclude=(), exclusion=0.0, interior=None):
    """Mean square of the high-passed field over the tube around ``surface``.

    ``sample_times`` are the times the surface is sampled at; by default the
    field's own slice times.  Raises :class:`EmptyTube` when no cell is
    within ``radius``.
    """
    if sample_times is None:
        sample_times = field.times
    tube = tube_cells(field, surface, sample_times, radius, window, exclude, exclusion,
                      interior)
    return _tube_mean_square(field, tube, radius, highpass_cut)[0]


# ---------------------------------------------------------------------------
# detection


def prediction_for(scene, field: WaveField, **kw):
    """Predicted support sampled at the field's stored slice times."""
    return predict_support(scene, sample_times=field.times, **kw)


def _window_for(name, pred: PredictedSupport, cfg: DetectionConfig, t_end):
    if cfg.window is not None:
        return cfg.window
    if name == "cone" and pred.p0 is not None:
        return (pred.p0[0] + cfg.cone_delay, t_end)
    return None


def detect_surfaces(field: WaveField, pred: PredictedSupport, cfg: DetectionConfig,
                    names=None):
    """One :class:`DetectionReport` per predicted surface.

    When the cone is not predicted (no interaction on the interface) the
    report named ``cone`` measures the candidate cone from the ray
    intersection instead and is marked ``predicted=False``.
    """
    surfaces = dict(pred.surfaces())
    cone_predicted = not pred.cone.is_empty
    if not cone_predicted:
        surfaces["cone"] = pred.cone_candidate
    names = list(surfaces) if names is None else list(names)
    t_end = float(field.times[-1])
    scale = float(np.max(field.data ** 2)) if field.data.size else 0.0
    floor = np.finfo(float).eps * max(scale, np.finfo(float).tiny)
    # a background below the round-off level carries no information
    floor = max(floor, float(field.metadata.get("roundoff_scale", 0.0)) ** 2)
    reports = []
    for name in names:
        surf = surfaces[name]
        predicted = cone_predicted if name == "cone" else not surf.is_empty
        others = [s for k, s in surfaces.items() if k != name and not s.is_empty]
        win = _window_for(name, pred, cfg, t_end)
        try:
            if surf.is_empty:
                raise EmptyTube(f"surface {name} has no samples")
            tube = tube_cells(field, surf, pred.sample_times, cfg.radius, win, others,
                              cfg.exclusion_distance, cfg.interior)
            e_t, n_t = _tube_mean_square(field, tube, cfg.radius, cfg.highpass_cut)
            bg_surf = surf.translated(cfg.shift * cfg.radius)
            bg_tube = tube_cells(field, bg_surf, pred.sample_times, cfg.radius, win,
                                 others + [surf], cfg.exclusion_distance, cfg.interior)
            e_b, n_b = _tube_mean_square(field, bg_tube, cfg.radius, cfg.highpass_cut)
        except EmptyTube as exc:
            reports.append(DetectionReport(name, 0.0, 0.0, 0.0, False, predicted, error=str(exc)))
            continue
        snr = e_t / max(e_b, floor)
        reports.append(DetectionReport(name, e_t, e_b, float(snr), bool(snr > cfg.threshold),
                                       predicted, n_t, n_b))
    return reports


def _report(reports, name):
    for r in reports:
        if r.surface == name:
            return r
    raise KeyError(name)


def cone_report(scene, response: CrossResponse, pred: PredictedSupport | None = None,
                interior=None):
    pred = pred or prediction_for(scene, response.field)
    cfg = DetectionConfig.from_scene(scene, interior=interior)
    return _report(detect_surfaces(response.field, pred, cfg, names=["cone"]), "cone"), pred


def perturbation_report(scene, split, interior=None):
    """Detection on the two halves of a perturbation split.

    The linear part ``V_est`` is tested on the reflected tubes and the
    nonlinear part ``W_est`` on the cone.  Returns a dict of reports.
    """
    interior = interior_mask(scene) if interior is None else interior
    cfg = DetectionConfig.from_scene(scene, interior=interior)
    pred = prediction_for(scene, split.V_est)
    v_reps = detect_surfaces(split.V_est, pred, cfg, names=["reflected_1", "reflected_2"])
    w_rep = _report(detect_surfaces(split.W_est, pred, cfg, names=["cone"]), "cone")
    out = {"V_" + r.surface: r.to_dict() for r in v_reps}
    out["W_cone"] = w_rep.to_dict()
    return out


def interior_mask(scene):
    """Cells outside the sponge layer."""
    from .response import _operator

    op, _ = _operator(scene)
    return op.interior_mask


def locate_interface(scene, s0_ladder=None, threads=1, eps=None):
    """Interface membership test at the ray intersection.

    For each ``s0`` the pulses are rebuilt, the cross difference computed
    and the cone tested.  Returns ``(decision, reports)`` where the decision
    is true iff the cone is detected at every rung.
    """
    ladder = s0_ladder if s0_ladder is not None else scene.experiment["s0_ladder"]
    if not ladder:
        raise ValidationError("s0 ladder is empty", "experiment.s0_ladder")
    interior = interior_mask(scene)
    reports = []
    for s0 in ladder:
        sc = scene.with_sources(s0=float(s0))
        cr = cross_difference(sc, eps, eps, threads=threads)
        pred = prediction_for(sc, cr.field)
        if pred.p0 is None:
            raise NoIntersection("central rays do not meet within the hit tolerance")
        rep, _ = cone_report(sc, cr, pred, interior=interior)
        reports.append({"s0": float(s0), **rep.to_dict(), "on_interface": pred.on_interface})
    decision = all(r["detected"] for r in reports)
    return decision, reports


def cone_tube(scene, fld: WaveField, pred: PredictedSupport, interior=None):
    """Tube around the predicted cone (or its candidate when not predicted)."""
    cfg = DetectionConfig.from_scene(scene, interior=interior)
    surf = pred.cone if not pred.cone.is_empty else pred.cone_candidate
    if surf.is_empty:
        raise EmptyTube("no cone samples")
    others = [s for k, s in pred.surfaces().items() if k != "cone" and not s.is_empty]
    win = _window_for("cone", pred, cfg, float(fld.times[-1]))
    return tube_cells(fld, surf, pred.sample_times, cfg.radius, win, others,
                      cfg.exclusion_distance, cfg.interior)


def _tube_values(fld: WaveField, tube: Tube):
    return np.concatenate([fld.data[j][tuple(c.T)] for j, c in sorted(tube.cells.items())])


def recover_jump(observed: CrossResponse, reference: CrossResponse, alpha_ref, tube: Tube,
                 floor=1e-30):
    """Projection estimate of the jump on the cone tube.

    ``alpha_hat = alpha_ref <obs, ref> / <ref, ref>`` and the residual is the
    relative tube norm of ``obs - (alpha_hat / alpha_ref) ref``.
    """
    if observed.field.data.shape != reference.field.data.shape:
        raise ValidationError("observed and reference responses differ in shape")
    if tube.count == 0:
        raise EmptyTube("cone tube is empty")
    o = _tube_values(observed.field, tube)
    r = _tube_values(reference.field, tube)
    rr = float(r @ r)
    if not rr > floor * max(1.0, float(o @ o)):
        raise DegenerateReference("reference response vanishes on the cone tube")
    c = float(o @ r) / rr
    alpha_hat = alpha_ref * c
    on = float(np.linalg.norm(o))
    res = float(np.linalg.norm(o - c * r) / on) if on > 0 else 0.0
    method = "born-oracle" if observed.method == "born-oracle" else "nonlinear-cross"
    return JumpEstimate(float(alpha_hat), float(alpha_ref), res, method)


def fit_power_law(omegas, amplitudes):
    """Exponent and R^2 of ``amplitude ~ omega^p``."""
    slope, _, r2 = fit_loglog(omegas, amplitudes)
    return slope, r2


def frequency_scaling_probe(scene, omega_ladder=None, threads=1, min_ppw=8.0):
    """Cone tube amplitude of the cross response across carrier frequencies.

    ``sigma`` is kept fixed.  Returns ``(exponent, r2, rows)``; each row holds
    ``omega``, points per wavelength and the RMS tube amplitude.
    """
    ladder = omega_ladder if omega_ladder is not None else scene.experiment["omega_ladder"]
    if not ladder:
        raise ValidationError("omega ladder is empty", "experiment.omega_ladder")
    h = scene.grid.h
    for w in ladder:
        ppw = 2 * np.pi / (w * h)
        if ppw < min_ppw:
            raise UnderResolved(f"omega = {w} gives {ppw:.2f} points per wavelength (< {min_ppw})",
                                "experiment.omega_ladder")
    interior = interior_mask(scene)
    rows = []
    for w in ladder:
        sc = scene.with_sources(omega=float(w))
        cr = cross_difference(sc, threads=threads)
        pred = prediction_for(sc, cr.field)
        tube = cone_tube(sc, cr.field, pred, interior)
        vals = _tube_values(cr.field, tube)
        rows.append({"omega": float(w), "ppw": 2 * np.pi / (w * h),
                     "amplitude": float(np.sqrt(np.mean(vals ** 2)))})
    slope, r2 = fit_power_law([r["omega"] for r in rows], [r["amplitude"] for r in rows])
    return slope, r2, rows
