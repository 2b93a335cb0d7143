"""Grids, sampled fields, interface coefficients, pulse initial data and norms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PulseClipped, ValidationError
from .geometry import FlatMetric, Metric, PhasePoint, null_lift, symbol_p
from .raytrace import InterfaceSpec, _trace_to

__all__ = [
    "GridSpec",
    "WaveField",
    "PotentialSpec",
    "CoefficientSpec",
    "SourceSpec",
    "smooth_step",
    "build_coefficient",
    "build_potential",
    "build_pulse",
    "norm",
    "energy",
    "energy_series",
]


@dataclass(frozen=True)
class GridSpec:
    """Isotropic cell-centred grid plus the time discretisation.

    Build with :meth:`GridSpec.build`, which derives ``dt`` from the CFL
    number and the largest wave speed.  ``dt`` is rounded down so that an
    integer number of steps lands on ``t_end``; ``cfl`` records the value
    actually in effect.
    """

    d: int
    origin: np.ndarray
    extent: np.ndarray
    n: tuple
    h: float
    t_end: float
    dt: float
    n_t: int
    cfl: float
    c_max: float = 1.0

    @classmethod
    def build(cls, origin, extent, n, t_end, cfl=0.5, metric: Metric | None = None):
        origin = np.asarray(origin, dtype=float)
        extent = np.asarray(extent, dtype=float)
        n = tuple(int(k) for k in np.atleast_1d(n))
        d = origin.size
        if d not in (2, 3) or extent.size != d or len(n) != d:
            raise ValidationError("origin, extent and n must all have length d in {2, 3}", "grid")
        if np.any(extent <= 0):
            raise ValidationError("grid extent must be positive", "grid.extent")
        if any(k < 4 for k in n):
            raise ValidationError("need at least 4 cells per axis", "grid.n")
        hs = extent / np.array(n)
        h = float(hs[0])
        if np.any(np.abs(hs - h) > 1e-12 * h):
            raise ValidationError("grid must be isotropic (equal spacing on every axis)", "grid.h")
        if not 0 < cfl <= 0.5:
            raise ValidationError(f"cfl must lie in (0, 0.5], got {cfl}", "solver.cfl")
        if not t_end > 0:
            raise ValidationError("t_end must be positive", "grid.t_end")
        metric = metric or FlatMetric(d)
        centres = _cell_centres(origin, h, n)
        c_max = metric.max_speed(centres.reshape(-1, d))
        dt_max = cfl * h / c_max
        n_t = int(np.ceil(t_end / dt_max - 1e-9))
        dt = t_end / n_t
        return cls(d, origin, extent, n, h, float(t_end), float(dt), n_t,
                   float(dt * c_max / h), float(c_max))

    def cell_centres(self):
        """Cell-centre coordinates, shape ``(*n, d)``."""
        return _cell_centres(self.origin, self.h, self.n)

    def axes(self):
        return [self.origin[i] + (np.arange(self.n[i]) + 0.5) * self.h for i in range(self.d)]

    @property
    def diameter(self):
        return float(np.linalg.norm(self.extent))

    @property
    def upper(self):
        return self.origin + self.extent

    def with_t_end(self, t_end):
        return GridSpec.build(self.origin, self.extent, self.n, t_end, self.cfl_nominal)

    @property
    def cfl_nominal(self):
        return min(0.5, self.cfl)

    def index_of(self, x):
        """Nearest cell index of spatial point ``x``."""
        idx = np.floor((np.asarray(x) - self.origin) / self.h).astype(int)
        return tuple(np.clip(idx, 0, np.array(self.n) - 1))

    def to_config(self):
        return {"origin": self.origin.tolist(), "extent": self.extent.tolist(),
                "n": list(self.n), "t_end": self.t_end}


def _cell_centres(origin, h, n):
    axes = [origin[i] + (np.arange(n[i]) + 0.5) * h for i in range(len(n))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


@dataclass
class WaveField:
    """Time history of a scalar field on a :class:`GridSpec`.

    ``data[k]`` is the slice at time step ``steps[k]`` (time
    ``steps[k] * grid.dt``).  Stored slices are equally spaced in steps.
    """

    grid: GridSpec
    data: np.ndarray
    steps: np.ndarray
    metadata: dict = field(default_factory=dict)
    blowup: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.steps = np.asarray(self.steps, dtype=int)
        if self.data.shape[1:] != tuple(self.grid.n):
            raise ValidationError(f"slice shape {self.data.shape[1:]} != grid {self.grid.n}")
        if self.data.shape[0] != self.steps.size:
            raise ValidationError("number of slices and step indices differ")

    @property
    def times(self):
        return self.steps * self.grid.dt

    @property
    def stride(self):
        return int(self.steps[1] - self.steps[0]) if self.steps.size > 1 else 1

    @property
    def slice_dt(self):
        return self.stride * self.grid.dt

    @property
    def final(self):
        return self.data[-1]

    def like(self, data, **meta):
        md = dict(self.metadata)
        md.update(meta)
        return WaveField(self.grid, data, self.steps.copy(), md)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def slice_index(self, t):
        """Index of the stored slice nearest to time ``t``."""
        return int(np.argmin(np.abs(self.times - t)))


def smooth_step(s):
    """C-infinity step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
        out = a / (a + b)
    return np.where(s <= 0, 0.0, np.where(s >= 1, 1.0, out))


_PROFILES = ("jump", "mollified-jump", "power")


@dataclass
class PotentialSpec:
    """Linear potential ``q`` conormal to the same interface as ``a``."""

    strength: float
    profile: str = "jump"
    width: float | None = None
    kappa: float | None = None

    def to_config(self):
        return {"strength": self.strength, "profile": self.profile, "width": self.width,
                "kappa": self.kappa}


@dataclass
class CoefficientSpec:
    """Nonlinear coefficient ``a = alpha * profile(phi)`` (nonzero where ``phi < 0``).

    ``region`` is ``half-space`` for a plane interface or ``bounded`` for a
    closed one; in both cases the coefficient lives on ``{phi < 0}``.
    """

    iface: InterfaceSpec
    alpha: float
    profile: str = "jump"
    width: float | None = None
    kappa: float | None = None
    region: str = "half-space"
    potential: PotentialSpec | None = None

    def __post_init__(self):
        _check_profile(self.profile, self.width, self.kappa, "coefficient")
        if self.region not in ("half-space", "bounded"):
            raise ValidationError(f"unknown region {self.region!r}", "coefficient.region")
        if self.region == "bounded" and self.iface.kind != "sphere":
            raise ValidationError("bounded region needs a closed (sphere) interface",
                                  "coefficient.region")
        if self.potential is not None:
            _check_profile(self.potential.profile, self.potential.width, self.potential.kappa,
                           "coefficient.potential")

    def with_alpha(self, alpha):
        return CoefficientSpec(self.iface, alpha, self.profile, self.width, self.kappa,
                               self.region, self.potential)

    def to_config(self):
        out = {"interface": self.iface.to_config(), "alpha": self.alpha,
               "profile": self.profile, "width": self.width, "kappa": self.kappa,
               "region": self.region}
        out["potential"] = None if self.potential is None else self.potential.to_config()
        return out


def _check_profile(profile, width, kappa, where):
    if profile not in _PROFILES:
        raise ValidationError(f"unknown profile {profile!r}", f"{where}.profile")
    if profile == "mollified-jump" and not (width and width > 0):
        raise ValidationError("mollified-jump needs width > 0", f"{where}.width")
    if profile == "power" and not (kappa and kappa > 0):
        raise ValidationError("power profile needs kappa > 0", f"{where}.kappa")


def _profile_values(phi, grad_norm, profile, width, kappa):
    # signed distance to S0, positive inside {phi < 0}
    dist = -phi / grad_norm
    if profile == "jump":
        return (phi < 0).astype(float)
    if profile == "mollified-jump":
        return smooth_step(dist / width + 0.5)
    return np.where(phi < 0, np.abs(dist) ** kappa, 0.0)


def _interface_on_grid(grid: GridSpec, iface: InterfaceSpec, t):
    x = grid.cell_centres()
    phi = iface.phi_spatial(x, t)
    if iface.kind == "plane":
        gn = float(np.linalg.norm(iface.normal))
    else:
        gn = 1.0
    return phi, gn


def build_coefficient(grid: GridSpec, spec: CoefficientSpec, t=0.0):
    """Nonlinear coefficient sampled at cell centres."""
    if spec.alpha == 0:
        return np.zeros(grid.n)
    phi, gn = _interface_on_grid(grid, spec.iface, t)
    return spec.alpha * _profile_values(phi, gn, spec.profile, spec.width, spec.kappa)


def build_potential(grid: GridSpec, spec: CoefficientSpec, delta=1.0, t=0.0):
    """Potential ``delta * q`` at cell centres (zeros if no potential is set)."""
    pot = spec.potential
    if pot is None or delta == 0 or pot.strength == 0:
        return np.zeros(grid.n)
    phi, gn = _interface_on_grid(grid, spec.iface, t)
    return delta * pot.strength * _profile_values(phi, gn, pot.profile, pot.width, pot.kappa)


@dataclass
class SourceSpec:
    """A plane pulse concentrated near one light-like ray.

    ``p_launch`` is a spacetime point on the central ray and ``zeta`` its
    null covector (forward orientation, ``tau < 0``).  ``s0`` is the beam
    aperture; the lateral half-width of the pulse is ``s0 * L_beam`` with
    ``L_beam`` the grid diameter unless ``beam_length`` is given.
    ``t0`` is the emission time, i.e. the time at which the Cauchy data are
    posed; only ``t0 = 0`` is supported.
    """

    p_launch: np.ndarray
    zeta: np.ndarray
    s0: float
    omega: float
    sigma: float
    amplitude: float = 1.0
    t0: float = 0.0
    mu_proxy: str = "gauss"
    beam_length: float | None = None

    def __post_init__(self):
        self.p_launch = np.asarray(self.p_launch, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        if self.p_launch.shape != self.zeta.shape:
            raise ValidationError("p_launch and zeta must have the same length", "sources.zeta")
        if self.s0 <= 0:
            raise ValidationError("s0 must be positive", "sources.s0")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive", "sources.sigma")
        if self.omega < 0:
            raise ValidationError("omega must be non-negative", "sources.omega")
        if self.t0 != 0.0:
            raise ValidationError("only emission time t0 = 0 is supported", "sources.t0")
        if self.mu_proxy not in ("gauss", "cusp"):
            raise ValidationError(f"unknown mu_proxy {self.mu_proxy!r}", "sources.mu_proxy")
        if self.zeta[0] >= 0:
            raise ValidationError("zeta must be forward oriented (tau < 0)", "sources.zeta")

    @classmethod
    def from_direction(cls, m: Metric, p_launch, xi, **kw):
        pp = null_lift(m, p_launch, xi, "forward")
        return cls(pp.x, pp.zeta, **kw)

    def launch_phase_point(self, m: Metric):
        pp = PhasePoint(self.p_launch, self.zeta)
        scale = max(1.0, float(self.zeta @ self.zeta))
        if abs(symbol_p(m, pp)) > 1e-10 * scale:
            raise ValidationError("source covector is not null for the metric", "sources.zeta")
        return pp

    def center_at(self, m: Metric, t):
        """Phase point on the central ray at time ``t``."""
        return _trace_to(m, self.launch_phase_point(m), t)

    def lateral_radius(self, grid: GridSpec):
        L = self.beam_length if self.beam_length is not None else grid.diameter
        return self.s0 * L

    def with_(self, **kw):
        args = dict(p_launch=self.p_launch, zeta=self.zeta, s0=self.s0, omega=self.omega,
                    sigma=self.sigma, amplitude=self.amplitude, t0=self.t0,
                    mu_proxy=self.mu_proxy, beam_length=self.beam_length)
        args.update(kw)
        return SourceSpec(**args)

    def to_config(self):
        return {"p_launch": self.p_launch.tolist(), "zeta": self.zeta.tolist(),
                "s0": self.s0, "omega": self.omega, "sigma": self.sigma,
                "amplitude": self.amplitude, "t0": self.t0, "mu_proxy": self.mu_proxy,
                "beam_length": self.beam_length}


def _envelope(s, sigma, omega, kind):
    """Longitudinal profile and its derivative in ``s``."""
    if kind == "gauss":
        env = np.exp(-0.5 * (s / sigma) ** 2)
        denv = -s / sigma ** 2 * env
    else:
        env = np.exp(-np.abs(s) / sigma)
        denv = -np.sign(s) / sigma * env
    c = np.cos(omega * s)
    sn = np.sin(omega * s)
    return env * c, denv * c - omega * env * sn


def build_pulse(grid: GridSpec, m: Metric, src: SourceSpec, check_margin=True):
    """Initial data ``(u0, u1)`` of a one-way plane pulse.

    ``u0 = A env(s) cos(omega s) chi_lat`` with ``s`` the coordinate along the
    unit propagation direction through the pulse centre and ``chi_lat`` a
    smooth lateral cutoff (1 inside ``r_lat``, 0 beyond ``1.5 r_lat``);
    ``u1 = -c_loc d_s u0``.
    """
    if src.amplitude == 0:
        return np.zeros(grid.n), np.zeros(grid.n)
    c = src.center_at(m, 0.0)
    x0 = c.x_spatial
    gs = m.gstar(x0)
    v = gs @ c.xi
    nhat = v / np.linalg.norm(v)
    c_loc = np.linalg.norm(v) / abs(c.tau)
    r_lat = src.lateral_radius(grid)
    if check_margin:
        _check_margin(grid, x0, nhat, src.sigma, r_lat)
    x = grid.cell_centres() - x0
    s = x @ nhat
    trans = np.linalg.norm(x - s[..., None] * nhat, axis=-1)
    chi = 1.0 - smooth_step((trans - r_lat) / (0.5 * r_lat))
    prof, dprof = _envelope(s, src.sigma, src.omega, src.mu_proxy)
    u0 = src.amplitude * prof * chi
    u1 = -c_loc * src.amplitude * dprof * chi
    return u0, u1


def _check_margin(grid, x0, nhat, sigma, r_lat):
    d = grid.d
    lat = np.linalg.svd(nhat[None, :])[2][1:]
    corners = []
    for sa in (-4 * sigma, 4 * sigma):
        for sign in (-1.0, 1.0):
            for lv in lat:
                corners.append(x0 + sa * nhat + sign * 1.5 * r_lat * lv)
    corners = np.array(corners)
    if np.any(corners < grid.origin) or np.any(corners > grid.origin + grid.extent):
        raise PulseClipped("pulse support (4 sigma along the ray, 1.5 r_lat across) leaves the grid",
                           "sources")
    del d


# ---------------------------------------------------------------------------
# norms


def _weights(field: WaveField, metric: Metric | None):
    grid = field.grid
    if metric is None or isinstance(metric, FlatMetric):
        w = np.full(grid.n, grid.h ** grid.d)
    else:
        w = metric.sqrt_det_g(grid.cell_centres()) * grid.h ** grid.d
    return w


def _region_mask(grid: GridSpec, region):
    if region is None:
        return None
    lo, hi = (np.asarray(r, dtype=float) for r in region)
    x = grid.cell_centres()
    return np.all((x >= lo) & (x <= hi), axis=-1)


def _time_weights(field: WaveField):
    k = field.data.shape[0]
    if k == 1:
        return np.ones(1)
    tw = np.full(k, field.slice_dt)
    tw[0] = tw[-1] = 0.5 * field.slice_dt
    return tw


def norm(field: WaveField, kind="L2", region=None, metric: Metric | None = None):
    """Riemann-sum norm over the stored spacetime samples.

    Stored slices are combined with trapezoid weights in time (a single
    slice is a spatial norm with unit weight); spatial cells are
    weighted by ``sqrt(det g) h^d``.  ``region`` is an optional spatial box
    ``(lo, hi)``.  ``energy`` returns the energy seminorm at the last slice
    where a centred time difference is available.
    """
    w = _weights(field, metric)
    mask = _region_mask(field.grid, region)
    if mask is not None:
        w = w * mask
    if kind in ("L2", "L4"):
        p = 2 if kind == "L2" else 4
        per_slice = np.sum((np.abs(field.data) ** p * w).reshape(field.data.shape[0], -1), axis=1)
        tw = _time_weights(field)
        return float(per_slice @ tw) ** (1.0 / p)
    if kind in ("energy", "energy-seminorm"):
        if field.data.shape[0] < 3:
            raise ValidationError("energy needs at least three slices")
        return energy(field, field.data.shape[0] - 2, metric=metric, mask=mask)
    raise ValidationError(f"unknown norm kind {kind!r}")


def _gradient_energy_density(u, grid: GridSpec, metric: Metric | None, periodic: bool):
    """``sum_i c_i (D+_i u)^2`` with face coefficients ``sqrt(g) g*^{ii}``."""
    h = grid.h
    tot = np.zeros(grid.n)
    flat = metric is None or isinstance(metric, FlatMetric)
    for i in range(grid.d):
        if periodic:
            du = (np.roll(u, -1, axis=i) - u) / h
        else:
            pad = [(0, 0)] * grid.d
            pad[i] = (0, 1)
            du = np.diff(np.pad(u, pad), axis=i) / h
        if flat:
            tot += du ** 2
        else:
            xf = grid.cell_centres().copy()
            xf[..., i] += 0.5 * h
            coef = metric.sqrt_det_g(xf) * metric.gstar(xf)[..., i, i]
            tot += coef * du ** 2
    return tot


def energy(field: WaveField, k, metric: Metric | None = None, mask=None):
    """``1/2 int (u_t^2 + grad u . g* grad u) sqrt(g) dx`` at slice ``k``.

    ``u_t`` is the centred difference of the neighbouring slices.
    """
    if not 0 < k < field.data.shape[0] - 1:
        raise ValidationError("energy needs a slice with neighbours on both sides")
    grid = field.grid
    periodic = field.metadata.get("boundary") == "periodic"
    ut = (field.data[k + 1] - field.data[k - 1]) / (2 * field.slice_dt)
    hd = grid.h ** grid.d
    if metric is None or isinstance(metric, FlatMetric):
        kin = ut ** 2
    else:
        kin = ut ** 2 * metric.sqrt_det_g(grid.cell_centres())
    pot = _gradient_energy_density(field.data[k], grid, metric, periodic)
    dens = kin + pot
    if mask is not None:
        dens = dens * mask
    return float(0.5 * np.sum(dens) * hd)


def energy_series(field: WaveField, window=None, metric: Metric | None = None):
    """Energy at every interior stored slice whose time lies in ``window``."""
    ks = range(1, field.data.shape[0] - 1)
    t = field.times
    if window is not None:
        ks = [k for k in ks if window[0] <= t[k] <= window[1]]
    ks = list(ks)
    return t[ks], np.array([energy(field, k, metric) for k in ks])
