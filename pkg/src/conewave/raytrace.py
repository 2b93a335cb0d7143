"""Null bicharacteristics, interface reflection and the predicted singular support.

Rays are integrated with classical RK4 in the Hamiltonian flow parameter.
For time-independent metrics ``tau`` is conserved, so ``dt/dtheta = -2 tau``
is constant along a ray; the step is shrunk slightly so that every ray lands
exactly on its target time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CharacteristicInterface,
    NotSpacelike,
    OutOfDomain,
    NoIntersection,
    TangentialIncidence,
    ValidationError,
    ZeroCovector,
)
from .geometry import (
    Metric,
    PhasePoint,
    lorentz_dual,
    lorentz_vector,
    null_lift,
    symbol_p,
)

__all__ = [
    "Ray",
    "InterfaceSpec",
    "SampledSurface",
    "PredictedSupport",
    "trace",
    "trace_many",
    "reflection_parameter",
    "reflect_at_interface",
    "cone_covectors",
    "closest_approach",
    "predict_support",
]

_NONCHAR_MARGIN = 1e-6
_GRAZING_DEG = 5.0


# ---------------------------------------------------------------------------
# rays


@dataclass
class Ray:
    xs: np.ndarray  # (N, 1+d) spacetime points
    zetas: np.ndarray  # (N, 1+d) covectors
    theta_step: float
    p_drift: float
    exited: bool = False

    @property
    def samples(self):
        return [PhasePoint(x, z) for x, z in zip(self.xs, self.zetas)]

    @property
    def end(self):
        return PhasePoint(self.xs[-1], self.zetas[-1])

    def at_times(self, times):
        """Linear interpolation of position and covector at the given times.

        Returns ``(xs, zetas, valid)``; entries outside the traced time range
        are NaN and flagged invalid.
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        t = self.xs[:, 0]
        sign = 1.0 if t[-1] >= t[0] else -1.0
        tt = sign * t
        q = sign * times
        lo, hi = tt[0], tt[-1]
        valid = (q >= lo - 1e-12) & (q <= hi + 1e-12)
        out_x = np.full((times.size, self.xs.shape[1]), np.nan)
        out_z = np.full_like(out_x, np.nan)
        if t.size == 1:
            out_x[valid] = self.xs[0]
            out_z[valid] = self.zetas[0]
            return out_x, out_z, valid
        for c in range(self.xs.shape[1]):
            out_x[valid, c] = np.interp(q[valid], tt, self.xs[:, c])
            out_z[valid, c] = np.interp(q[valid], tt, self.zetas[:, c])
        return out_x, out_z, valid


def _hamilton_batch(m: Metric, X, Z):
    xs = X[:, 1:]
    xi = Z[:, 1:]
    gs = m.gstar(xs)
    dg = m.dgstar(xs)
    dX = np.empty_like(X)
    dZ = np.zeros_like(Z)
    dX[:, 0] = -2.0 * Z[:, 0]
    dX[:, 1:] = 2.0 * np.einsum("nij,nj->ni", gs, xi)
    dZ[:, 1:] = -np.einsum("nkij,ni,nj->nk", dg, xi, xi)
    return dX, dZ


def _symbols(m: Metric, X, Z):
    gs = m.gstar(X[:, 1:])
    return -Z[:, 0] ** 2 + np.einsum("ni,nij,nj->n", Z[:, 1:], gs, Z[:, 1:])


def _inside(box, X):
    if box is None:
        return np.ones(X.shape[0], dtype=bool)
    lo, hi = box
    return np.all((X[:, 1:] >= lo) & (X[:, 1:] <= hi), axis=1)


def trace_many(m: Metric, starts, t_end, step=1e-3, box=None):
    """Integrate a batch of null bicharacteristics to time ``t_end``.

    Rays run forwards in time when ``t_end`` exceeds the start time and
    backwards otherwise; the time direction must agree with the sign of
    ``tau`` (flip the covector to run a ray backwards).  Rays are advanced in
    lock-step and returned in launch order.  A ray that leaves ``box`` (a
    ``(lo, hi)`` pair of spatial corners) or the metric's domain is
    truncated at its last interior sample and flagged ``exited``.
    """
    starts = list(starts)
    X = np.array([s.x for s in starts], dtype=float)
    Z = np.array([s.zeta for s in starts], dtype=float)
    n = X.shape[0]
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (n,)).copy()
    rate = -2.0 * Z[:, 0]
    span = t_end - X[:, 0]
    if np.any(rate == 0) or np.any(span * rate < 0):
        raise ValidationError("ray time orientation does not reach t_end (check sign of tau)")
    theta_total = span / rate
    nsteps = np.maximum(np.ceil(theta_total / step - 1e-9).astype(int), 0)
    hs = np.where(nsteps > 0, theta_total / np.maximum(nsteps, 1), 0.0)

    D = X.shape[1]
    kmax = int(nsteps.max()) if n else 0
    HX = np.full((n, kmax + 1, D), np.nan)
    HZ = np.full((n, kmax + 1, D), np.nan)
    HX[:, 0], HZ[:, 0] = X, Z
    length = np.ones(n, dtype=int)
    active = nsteps > 0
    exited = np.zeros(n, dtype=bool)
    tails = {}
    k = 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        try:
            xn, zn = _rk4(m, X[idx], Z[idx], hs[idx][:, None])
        except OutOfDomain:
            # fall back to ray-by-ray so only the offending rays stop
            for i in idx:
                try:
                    sub = trace_many(m, [PhasePoint(X[i], Z[i])], t_end[i],
                                     step=hs[i] if hs[i] > 0 else step, box=box)[0]
                except OutOfDomain:
                    exited[i] = True
                    continue
                tails[i] = sub
                exited[i] |= sub.exited
            break
        k += 1
        last = k >= nsteps[idx]
        xn[last, 0] = t_end[idx][last]
        ok = _inside(box, xn)
        exited[idx[~ok]] = True
        active[idx[~ok]] = False
        good = idx[ok]
        X[good], Z[good] = xn[ok], zn[ok]
        HX[good, k], HZ[good, k] = xn[ok], zn[ok]
        length[good] = k + 1
        active[idx[ok & last]] = False

    rays = []
    for i in range(n):
        xs = HX[i, :length[i]]
        zs = HZ[i, :length[i]]
        if i in tails:
            xs = np.concatenate([xs, tails[i].xs[1:]])
            zs = np.concatenate([zs, tails[i].zetas[1:]])
        drift = float(np.max(np.abs(_symbols(m, xs, zs)))) if len(xs) else 0.0
        rays.append(Ray(xs, zs, float(hs[i]), drift, bool(exited[i])))
    return rays


def _rk4(m: Metric, x0, z0, h):
    """One RK4 step of the Hamilton flow with parameter steps ``h`` (n, 1)."""
    k1x, k1z = _hamilton_batch(m, x0, z0)
    k2x, k2z = _hamilton_batch(m, x0 + 0.5 * h * k1x, z0 + 0.5 * h * k1z)
    k3x, k3z = _hamilton_batch(m, x0 + 0.5 * h * k2x, z0 + 0.5 * h * k2z)
    k4x, k4z = _hamilton_batch(m, x0 + h * k3x, z0 + h * k3z)
    return (x0 + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            z0 + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z))


def trace(m: Metric, start: PhasePoint, t_end, step=1e-3, box=None) -> Ray:
    """RK4 integration of the Hamilton flow from ``start`` until ``t_end``."""
    scale = max(1.0, float(start.xi @ start.xi), start.tau ** 2)
    if abs(symbol_p(m, start)) > 1e-10 * scale:
        raise ValidationError("start covector is not null")
    if not start.t < t_end:
        raise ValidationError("trace needs start.t < t_end")
    if start.tau >= 0:
        raise ValidationError("forward tracing needs tau < 0")
    return trace_many(m, [start], t_end, step=step, box=box)[0]


def _trace_to(m: Metric, start: PhasePoint, t_target, step=1e-3):
    """Position/covector on the ray through ``start`` at time ``t_target``
    (either direction), returned with the original time orientation."""
    if abs(t_target - start.t) < 1e-15:
        return start
    fwd = start.tau < 0
    want_fwd = t_target > start.t
    z = start.zeta if fwd == want_fwd else -start.zeta
    ray = trace_many(m, [PhasePoint(start.x, z)], t_target, step=step)[0]
    zend = ray.zetas[-1] if fwd == want_fwd else -ray.zetas[-1]
    return PhasePoint(ray.xs[-1], zend)


# ---------------------------------------------------------------------------
# interface


class InterfaceSpec:
    """Level-set description of the interface ``S0 = {phi = 0}``.

    Two kinds are supported: ``plane`` with ``phi = s t + normal . x - offset``
    and ``sphere`` with ``phi = |x - center| - radius`` (a circle in 2-D).
    """

    def __init__(self, kind="plane", normal=None, offset=0.0, time_slope=0.0,
                 center=None, radius=None):
        self.kind = kind
        if kind == "plane":
            if normal is None:
                raise ValidationError("plane interface needs a normal", "coefficient.interface.normal")
            self.normal = np.asarray(normal, dtype=float)
            if not np.any(self.normal):
                raise ValidationError("interface normal must be non-zero",
                                      "coefficient.interface.normal")
            self.offset = float(offset)
            self.time_slope = float(time_slope)
            self.dim = self.normal.size
        elif kind == "sphere":
            if center is None or radius is None or radius <= 0:
                raise ValidationError("sphere interface needs center and radius > 0",
                                      "coefficient.interface")
            self.center = np.asarray(center, dtype=float)
            self.radius = float(radius)
            self.time_slope = 0.0
            self.dim = self.center.size
        else:
            raise ValidationError(f"unknown interface kind {kind!r}", "coefficient.interface.kind")

    @property
    def time_independent(self):
        return self.time_slope == 0.0

    def phi(self, points):
        """Level-set value at spacetime points ``(..., 1+d)``."""
        p = np.asarray(points, dtype=float)
        if self.kind == "plane":
            return self.time_slope * p[..., 0] + p[..., 1:] @ self.normal - self.offset
        return np.linalg.norm(p[..., 1:] - self.center, axis=-1) - self.radius

    def phi_spatial(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        if self.kind == "plane":
            return self.time_slope * t + x @ self.normal - self.offset
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def conormal(self, p):
        """``d phi`` at spacetime point ``p`` as a covector ``(s, beta)``."""
        p = np.asarray(p, dtype=float)
        if self.kind == "plane":
            return np.concatenate(([self.time_slope], self.normal))
        r = p[1:] - self.center
        nr = np.linalg.norm(r)
        if nr == 0:
            raise ValidationError("conormal undefined at the sphere centre")
        return np.concatenate(([0.0], r / nr))

    def check_noncharacteristic(self, m: Metric, p):
        n = self.conormal(p)
        s2 = n[0] ** 2
        b2 = float(n[1:] @ m.gstar(np.asarray(p, dtype=float)[1:]) @ n[1:])
        if abs(s2 - b2) <= _NONCHAR_MARGIN * max(s2, b2):
            raise CharacteristicInterface("interface is characteristic at the sampled point")

    def to_config(self):
        if self.kind == "plane":
            return {"kind": "plane", "normal": self.normal.tolist(), "offset": self.offset,
                    "time_slope": self.time_slope}
        return {"kind": "sphere", "center": self.center.tolist(), "radius": self.radius}

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        kind = cfg.pop("kind", "plane")
        return cls(kind=kind, **cfg)


def reflection_parameter(m: Metric, p, zeta_in, iface: InterfaceSpec):
    """The non-trivial root ``b`` of ``p(x, (1, alpha) + b (s, beta)) = 0``.

    ``(1, alpha)`` is ``zeta_in / tau_in``.  The quadratic in ``b`` always has
    the root ``b = 0``; the other one is returned.
    """
    p = np.asarray(p, dtype=float)
    zeta_in = np.asarray(zeta_in, dtype=float)
    if zeta_in[0] == 0:
        raise ZeroCovector("incident covector must have tau != 0")
    iface.check_noncharacteristic(m, p)
    zn = zeta_in / zeta_in[0]
    nrm = iface.conormal(p)
    x = p[1:]
    # b * (2 g~*(zn, n) + b g~*(n, n)) = 0
    lin = 2.0 * lorentz_dual(m, x, zn, nrm)
    quad = lorentz_dual(m, x, nrm, nrm)
    scale = max(1.0, abs(quad), float(zn[1:] @ zn[1:]))
    if lin * lin <= 1e-12 * scale * scale:
        raise TangentialIncidence("ray is tangent to the interface")
    return -lin / quad


def reflect_at_interface(m: Metric, p, zeta_in, iface: InterfaceSpec, tol=None):
    """Reflected null covector at ``p`` on the interface.

    The result lies in ``span{zeta_in, d phi}`` and keeps the scale and time
    orientation of ``zeta_in`` (it equals ``tau_in * ((1, alpha) + b (s, beta))``).
    """
    p = np.asarray(p, dtype=float)
    zeta_in = np.asarray(zeta_in, dtype=float)
    scale = max(1.0, zeta_in @ zeta_in)
    pp = PhasePoint(p, zeta_in)
    if abs(symbol_p(m, pp)) > 1e-10 * scale:
        raise ValidationError("incident covector is not null")
    if tol is not None and abs(iface.phi(p)) > tol:
        raise ValidationError("point is not on the interface")
    b = reflection_parameter(m, p, zeta_in, iface)
    zn = zeta_in / zeta_in[0] + b * iface.conormal(p)
    return zeta_in[0] * zn


# ---------------------------------------------------------------------------
# cone


def _sqrtm_spd(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(w)) @ v.T


def _orthonormal_complement(w):
    """Orthonormal basis of ``w``-perp, built from the standard basis in order."""
    d = w.size
    basis = [w / np.linalg.norm(w)]
    out = []
    for e in np.eye(d):
        v = e.copy()
        for b in basis:
            v = v - (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            v = v / nv
            basis.append(v)
            out.append(v)
        if len(out) == d - 1:
            break
    return out


def cone_covectors(m: Metric, p0, tangents, n_samples):
    """Forward null covectors at ``p0`` annihilating every tangent vector.

    In two space dimensions ``tangents`` must be empty and the whole light
    cone is returned; in three dimensions exactly one space-like tangent is
    expected.  Samples are uniform in angle, normalised so ``tau = -1``.
    """
    p0 = np.asarray(p0, dtype=float)
    d = p0.size - 1
    x = p0[1:]
    tangents = [np.asarray(v, dtype=float) for v in tangents]
    for v in tangents:
        if lorentz_vector(m, x, v, v) <= 0:
            raise NotSpacelike("tangent vector is not space-like")
    if len(tangents) != d - 2:
        raise ValidationError(f"expected {d - 2} tangent vector(s) in d={d}, got {len(tangents)}")
    gs = m.gstar(x)
    root_g = _sqrtm_spd(np.linalg.inv(gs))  # xi = root_g @ eta with |eta| = 1
    angles = 2.0 * np.pi * np.arange(n_samples) / n_samples
    out = []
    if d == 2:
        for a in angles:
            eta = np.array([np.cos(a), np.sin(a)])
            out.append(PhasePoint(p0, np.concatenate(([-1.0], root_g @ eta))))
        return out
    (v,) = tangents
    # tau = -1 and zeta(v) = 0  =>  xi . theta = v_t ; with xi = root_g eta: eta . w = v_t
    w = root_g @ v[1:]
    nw2 = w @ w
    centre = v[0] / nw2 * w
    radius = np.sqrt(1.0 - v[0] ** 2 / nw2)
    e1, e2 = _orthonormal_complement(w)
    for a in angles:
        eta = centre + radius * (np.cos(a) * e1 + np.sin(a) * e2)
        out.append(PhasePoint(p0, np.concatenate(([-1.0], root_g @ eta))))
    return out


# ---------------------------------------------------------------------------
# predicted support


@dataclass
class SampledSurface:
    """Spacetime surface sampled on a fixed set of time slices.

    ``points`` are spacetime points ``(M, 1+d)``; ``time_index`` refers to
    ``PredictedSupport.sample_times``; ``tangents`` holds ``d`` spacetime
    tangent vectors per sample and ``normals`` the unit spatial normal of
    the slice cross-section, pointing in the propagation direction.
    """

    name: str
    points: np.ndarray
    time_index: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray

    @classmethod
    def empty(cls, name, d):
        return cls(name, np.zeros((0, 1 + d)), np.zeros(0, dtype=int),
                   np.zeros((0, d, 1 + d)), np.zeros((0, d)))

    def __len__(self):
        return self.points.shape[0]

    @property
    def is_empty(self):
        return len(self) == 0

    def at_slice(self, k):
        sel = self.time_index == k
        return self.points[sel, 1:], self.normals[sel]

    def translated(self, distance, name=None):
        pts = self.points.copy()
        pts[:, 1:] += distance * self.normals
        return SampledSurface(name or self.name, pts, self.time_index.copy(),
                              self.tangents.copy(), self.normals.copy())


@dataclass
class PredictedSupport:
    sample_times: np.ndarray
    transmitted_1: SampledSurface
    transmitted_2: SampledSurface
    reflected_1: SampledSurface
    reflected_2: SampledSurface
    cone: SampledSurface
    cone_candidate: SampledSurface
    p0: np.ndarray | None = None
    on_interface: bool = False
    separation: float = np.inf
    info: dict = field(default_factory=dict)

    def surfaces(self):
        return {
            "transmitted_1": self.transmitted_1,
            "transmitted_2": self.transmitted_2,
            "reflected_1": self.reflected_1,
            "reflected_2": self.reflected_2,
            "cone": self.cone,
        }


def _segment_closest(a0, a1, b0, b1, W):
    """Closest points between segments under the quadratic form ``W``."""
    u = a1 - a0
    v = b1 - b0
    w0 = a0 - b0
    A = u @ W @ u
    B = u @ W @ v
    C = v @ W @ v
    D = u @ W @ w0
    E = v @ W @ w0
    den = A * C - B * B
    if den > 1e-14 * max(A * C, 1e-300):
        s = np.clip((B * E - C * D) / den, 0.0, 1.0)
    else:
        s = 0.0
    t = np.clip((B * s + E) / C, 0.0, 1.0) if C > 0 else 0.0
    s = np.clip((B * t - D) / A, 0.0, 1.0) if A > 0 else 0.0
    pa = a0 + s * u
    pb = b0 + t * v
    dv = pa - pb
    return pa, pb, float(np.sqrt(dv @ W @ dv))


def closest_approach(m: Metric, ray1: Ray, ray2: Ray):
    """Closest approach of two rays in the ``dt^2 + g`` distance.

    Returns ``(midpoint, distance)``; the search over sample pairs is refined
    with exact segment-segment distances around the best pair.
    """
    X1, X2 = ray1.xs, ray2.xs
    gmid = m.g(0.5 * (X1[len(X1) // 2, 1:] + X2[len(X2) // 2, 1:]))
    d = X1.shape[1] - 1
    W = np.eye(d + 1)
    W[1:, 1:] = gmid
    diff = X1[:, None, :] - X2[None, :, :]
    dist2 = diff[..., 0] ** 2 + np.einsum("abi,ij,abj->ab", diff[..., 1:], gmid, diff[..., 1:])
    i, j = np.unravel_index(np.argmin(dist2), dist2.shape)
    best = (None, None, np.inf)
    for ia in range(max(i - 2, 0), min(i + 2, len(X1) - 1)):
        for jb in range(max(j - 2, 0), min(j + 2, len(X2) - 1)):
            mid = 0.5 * (X1[ia, 1:] + X2[jb, 1:])
            W[1:, 1:] = m.g(mid)
            pa, pb, dd = _segment_closest(X1[ia], X1[ia + 1], X2[jb], X2[jb + 1], W)
            if dd < best[2]:
                best = (pa, pb, dd)
    if best[0] is None:
        return X1[i], float(np.sqrt(dist2[i, j]))
    return 0.5 * (best[0] + best[1]), best[2]


def _lateral_basis(m: Metric, x, xi):
    """Euclidean-orthonormal directions transverse to the ray velocity."""
    v = m.gstar(x) @ xi
    v = v / np.linalg.norm(v)
    return _orthonormal_complement(v)


def _fan_offsets(d, half_width, n_fan):
    if d == 2:
        return np.linspace(-half_width, half_width, n_fan)[:, None]
    k = max(int(np.ceil(np.sqrt(n_fan))), 2)
    s = np.linspace(-half_width, half_width, k)
    aa, bb = np.meshgrid(s, s, indexing="ij")
    pts = np.stack([aa.ravel(), bb.ravel()], axis=1)
    return pts[np.linalg.norm(pts, axis=1) <= half_width * (1 + 1e-12)]


def _surface_from_rays(name, rays_by_lane, sample_times, m: Metric):
    """Assemble a surface from rays sampled at ``sample_times``.

    ``rays_by_lane`` is an ordered list of rays (``None`` for missing lanes);
    lateral tangents are differences between neighbouring lanes.
    """
    K = len(sample_times)
    n = len(rays_by_lane)
    d = None
    XS = None
    ZS = None
    valid = np.zeros((n, K), dtype=bool)
    for r, ray in enumerate(rays_by_lane):
        if ray is None:
            continue
        xs, zs, ok = ray.at_times(sample_times)
        if XS is None:
            d = xs.shape[1] - 1
            XS = np.full((n, K, d + 1), np.nan)
            ZS = np.full((n, K, d + 1), np.nan)
        XS[r], ZS[r], valid[r] = xs, zs, ok
    if XS is None:
        return None
    # lateral tangent: difference between valid neighbouring lanes
    prev_ok = np.zeros_like(valid)
    next_ok = np.zeros_like(valid)
    prev_ok[1:] = valid[:-1]
    next_ok[:-1] = valid[1:]
    XP = np.roll(XS, 1, axis=0)
    XN = np.roll(XS, -1, axis=0)
    lat = np.zeros_like(XS)
    both = prev_ok & next_ok
    lat[both] = XN[both] - XP[both]
    only_n = next_ok & ~prev_ok
    lat[only_n] = XN[only_n] - XS[only_n]
    only_p = prev_ok & ~next_ok
    lat[only_p] = XP[only_p] - XS[only_p]
    lat[..., 0] = 0.0
    r_idx, k_idx = np.nonzero(valid)
    x = XS[r_idx, k_idx]
    z = ZS[r_idx, k_idx]
    if x.shape[0] == 0:
        return SampledSurface.empty(name, d)
    vel = np.einsum("nij,nj->ni", m.gstar(x[:, 1:]), z[:, 1:]) / (-z[:, :1])
    t_ray = np.concatenate([np.ones((x.shape[0], 1)), vel], axis=1)
    frame = [t_ray, lat[r_idx, k_idx]] + [np.zeros_like(t_ray)] * (d - 2)
    tans = np.stack(frame[:d], axis=1)
    nrms = z[:, 1:] / np.linalg.norm(z[:, 1:], axis=1, keepdims=True)
    return SampledSurface(name, x, k_idx.astype(int), tans, nrms)


def _first_crossing(m: Metric, ray: Ray, iface: InterfaceSpec):
    """First sign change of ``phi`` along the ray, refined by bisection on
    RK4 sub-steps.  Returns ``(x, zeta)`` or ``None``."""
    phis = iface.phi(ray.xs)
    s = np.sign(phis)
    change = np.nonzero(s[1:] * s[:-1] < 0)[0]
    if change.size == 0:
        zero = np.nonzero(phis == 0)[0]
        if zero.size and 0 < zero[0] < len(phis) - 1:
            k = zero[0]
            return ray.xs[k], ray.zetas[k]
        return None
    k = int(change[0])
    x0, z0 = ray.xs[k], ray.zetas[k]
    f0 = phis[k]
    # bisect on the flow parameter within one RK4 sub-step
    lo, hi = 0.0, ray.xs[k + 1, 0] - x0[0]
    rate = -2.0 * z0[0]
    xa, za = x0, z0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        xm, zm = _rk4(m, x0[None], z0[None], np.array([[mid / rate]]))
        xm, zm = xm[0], zm[0]
        if np.sign(iface.phi(xm)) == np.sign(f0):
            lo = mid
        else:
            hi = mid
        xa, za = xm, zm
        if hi - lo < 1e-13:
            break
    return xa, za


def _grazing(m: Metric, x, zeta, iface: InterfaceSpec):
    vel = m.gstar(x[1:]) @ zeta[1:]
    nrm = iface.conormal(x)[1:]
    s = abs(vel @ nrm) / (np.linalg.norm(vel) * np.linalg.norm(nrm))
    return np.degrees(np.arcsin(min(s, 1.0))) < _GRAZING_DEG


def _s012_tangents(m, p0, zetas, iface):
    """Tangent vectors of the triple intersection at ``p0``."""
    d = p0.size - 1
    if d == 2:
        return []
    rows = np.array([iface.conormal(p0)] + [z for z in zetas])
    _, _, vt = np.linalg.svd(rows)
    v = vt[-1]
    return [v]


def predict_support(scene, sample_times=None, n_fan=32, n_cone=None, step=None):
    """Predicted singular support of the nonlinear response for a scene.

    ``scene`` provides ``metric``, ``grid``, ``sources`` (two source specs
    with ``center_at(metric, 0)``, ``zeta`` and ``lateral_radius(grid)``)
    and ``coefficient.iface``.  Surfaces are sampled at ``sample_times``
    (defaults to 41 equispaced times in ``[0, t_end]``).
    """
    m = scene.metric
    grid = scene.grid
    iface = scene.coefficient.iface
    src1, src2 = scene.sources
    d = grid.d
    t_end = grid.t_end
    if sample_times is None:
        sample_times = np.linspace(0.0, t_end, 41)
    sample_times = np.asarray(sample_times, dtype=float)
    if step is None:
        step = min(1e-3, 0.25 * grid.h)
    d_hit = 2.0 * grid.h
    box = (grid.origin, grid.origin + grid.extent)

    starts = [src.launch_phase_point(m) for src in (src1, src2)]
    centres = [src.center_at(m, 0.0) for src in (src1, src2)]
    central = trace_many(m, [PhasePoint(c.x, c.zeta) for c in centres], t_end, step=step)
    p0, sep = closest_approach(m, central[0], central[1])
    info = {"d_hit": d_hit, "launch": [s.x.tolist() for s in starts]}
    if sep > d_hit:
        raise NoIntersection(f"central rays stay {sep:.3g} apart (hit tolerance {d_hit:.3g})")

    transmitted, reflected = [], []
    for c, src in zip(centres, (src1, src2)):
        half = 1.5 * src.lateral_radius(grid)
        lat = _lateral_basis(m, c.x_spatial, c.xi)
        offs = _fan_offsets(d, half, n_fan)
        lanes = []
        for o in offs:
            x = c.x.copy()
            x[1:] += sum(oi * li for oi, li in zip(o, lat))
            lanes.append(null_lift(m, x, c.xi, "forward"))
        rays = trace_many(m, lanes, t_end, step=step, box=box)
        transmitted.append(rays)
        refl = [None] * len(rays)
        pending = []
        for j, ray in enumerate(rays):
            hit = _first_crossing(m, ray, iface)
            if hit is None or hit[0][0] >= t_end:
                continue
            xh, zh = hit
            if _grazing(m, xh, zh, iface):
                continue
            try:
                zr = reflect_at_interface(m, xh, zh, iface)
            except TangentialIncidence:
                continue
            pending.append((j, PhasePoint(xh, zr)))
        if pending:
            out = trace_many(m, [pp for _, pp in pending], t_end, step=step, box=box)
            for (j, _), rr in zip(pending, out):
                refl[j] = rr
        reflected.append(refl)

    tr = [_surface_from_rays(f"transmitted_{i + 1}", transmitted[i], sample_times, m)
          for i in range(2)]
    rf = []
    for i in range(2):
        s = _surface_from_rays(f"reflected_{i + 1}", reflected[i], sample_times, m)
        rf.append(s if s is not None else SampledSurface.empty(f"reflected_{i + 1}", d))

    on_iface = False
    cone_c = SampledSurface.empty("cone", d)
    if p0 is not None:
        gradn = np.linalg.norm(iface.conormal(p0))
        on_iface = bool(abs(iface.phi(p0)) <= d_hit * gradn)
        if n_cone is None:
            radius = max(t_end - p0[0], grid.h)
            n_cone = int(max(64, np.ceil(2 * np.pi * radius / (0.5 * grid.h))))
        zc = [central[0].at_times([p0[0]])[1][0], central[1].at_times([p0[0]])[1][0]]
        tangents = _s012_tangents(m, p0, zc, iface)
        cone_c = _cone_surface(m, p0, tangents, n_cone, sample_times, t_end, step, box, iface,
                               scene, grid)
    cone = cone_c if on_iface else SampledSurface.empty("cone", d)
    info["n_cone"] = n_cone
    return PredictedSupport(sample_times, tr[0], tr[1], rf[0], rf[1], cone, cone_c,
                            p0=p0, on_interface=on_iface, separation=float(sep), info=info)


def _cone_surface(m, p0, tangents, n_cone, sample_times, t_end, step, box, iface, scene, grid):
    d = p0.size - 1
    if p0[0] >= t_end:
        return SampledSurface.empty("cone", d)
    if d == 2:
        origins = [p0]
    else:
        # truncate the triple-intersection curve to where both beams reach it
        (v,) = tangents
        half = min(1.5 * s.lateral_radius(grid) for s in scene.sources)
        span = half / max(np.linalg.norm(v[1:]), 1e-12)
        origins = [p0 + s * v for s in np.linspace(-span, span, 5)]
    lanes_all = []
    for o in origins:
        cov = cone_covectors(m, o, tangents, n_cone)
        rays = trace_many(m, cov, t_end, step=step, box=box)
        lanes_all.extend(rays + [None])
    surf = _surface_from_rays("cone", lanes_all, sample_times, m)
    if surf is None:
        return SampledSurface.empty("cone", d)
    # the cone degenerates to a point at the emission time
    keep = surf.points[:, 0] > p0[0] + 1e-12
    return SampledSurface("cone", surf.points[keep], surf.time_index[keep], surf.tangents[keep],
                          surf.normals[keep])
