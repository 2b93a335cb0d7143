"""Spatial metrics, the wave symbol and its Hamilton vector field.

The wave operator is ``P = d_t^2 + Delta_g`` with the *positive*
Laplace-Beltrami operator, so on a flat metric ``P`` is the ordinary
d'Alembertian.  Its principal symbol at a spacetime covector
``zeta = (tau, xi)`` is ``p = -tau**2 + xi^T g*(x) xi``.

Spacetime points are arrays ``(t, x_1, ..., x_d)`` and covectors are
``(tau, xi_1, ..., xi_d)``.  Forward-in-time bicharacteristics carry
``tau < 0`` so that ``dt/dtheta = -2 tau > 0``.

All metrics here are time independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import OutOfDomain, ValidationError, ZeroCovector

__all__ = [
    "Metric",
    "FlatMetric",
    "DiagonalMetric",
    "SampledMetric",
    "PhasePoint",
    "diag_linear",
    "diag_sine",
    "metric_from_config",
    "symbol_p",
    "hamiltonian_field",
    "null_lift",
    "lorentz_dual",
    "lorentz_vector",
    "riemann_dual_norm",
    "riemann_distance",
]


class Metric:
    """Base class; subclasses provide ``gstar`` and ``dgstar``.

    Every method is vectorised over leading axes of ``x`` (shape
    ``(..., d)``).
    """

    kind = "abstract"
    dim: int

    def gstar(self, x):
        raise NotImplementedError

    def dgstar(self, x):
        """Spatial derivatives, shape ``(..., d, d, d)`` indexed ``[k, i, j]``
        for ``d g*^{ij} / d x^k``."""
        raise NotImplementedError

    def g(self, x):
        return np.linalg.inv(self.gstar(x))

    def sqrt_det_g(self, x):
        return 1.0 / np.sqrt(np.linalg.det(self.gstar(x)))

    def is_diagonal(self):
        return False

    def max_speed(self, points):
        """Largest ``sqrt(lambda_max(g*))`` over an array of points."""
        lam = np.linalg.eigvalsh(self.gstar(points))
        return float(np.sqrt(lam.max()))

    def to_config(self):
        raise NotImplementedError


class FlatMetric(Metric):
    kind = "flat"

    def __init__(self, dim=2):
        if dim not in (2, 3):
            raise ValidationError(f"dimension must be 2 or 3, got {dim}", "metric.dim")
        self.dim = dim

    def gstar(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def dgstar(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def g(self, x):
        return self.gstar(x)

    def sqrt_det_g(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1])

    def diag(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape)

    def is_diagonal(self):
        return True

    def to_config(self):
        return {"kind": "flat", "dim": self.dim}


class DiagonalMetric(Metric):
    """Analytic metric with ``g* = diag(diag_fn(x))``.

    ``diag_grad_fn(x)`` returns ``d g*^{ii} / d x^k`` with shape
    ``(..., d, d)`` indexed ``[i, k]``.
    """

    kind = "diagonal-analytic"

    def __init__(self, dim, diag_fn: Callable, diag_grad_fn: Callable, config=None):
        self.dim = dim
        self._diag = diag_fn
        self._grad = diag_grad_fn
        self._config = config

    def diag(self, x):
        return self._diag(np.asarray(x, dtype=float))

    def gstar(self, x):
        dg = self.diag(x)
        out = np.zeros(dg.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[..., idx, idx] = dg
        return out

    def g(self, x):
        dg = self.diag(x)
        out = np.zeros(dg.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[..., idx, idx] = 1.0 / dg
        return out

    def sqrt_det_g(self, x):
        return 1.0 / np.sqrt(np.prod(self.diag(x), axis=-1))

    def dgstar(self, x):
        grad = self._grad(np.asarray(x, dtype=float))  # [..., i, k]
        out = np.zeros(grad.shape[:-2] + (self.dim,) * 3)
        for i in range(self.dim):
            out[..., :, i, i] = grad[..., i, :]
        return out

    def is_diagonal(self):
        return True

    def max_speed(self, points):
        return float(np.sqrt(self.diag(points).max()))

    def to_config(self):
        if self._config is None:
            raise ValidationError("metric built from bare callables is not serialisable")
        return dict(self._config)


def diag_linear(base, slope):
    """``g*^{ii}(x) = base_i + slope_i . x`` (``slope`` is ``d x d``, row i)."""
    base = np.asarray(base, dtype=float)
    slope = np.asarray(slope, dtype=float)
    d = base.size
    if slope.shape != (d, d):
        raise ValidationError(f"slope must have shape {(d, d)}", "metric.slope")

    def diag_fn(x):
        return base + x @ slope.T

    def grad_fn(x):
        return np.broadcast_to(slope, x.shape[:-1] + (d, d)).copy()

    cfg = {"kind": "diag-linear", "base": base.tolist(), "slope": slope.tolist()}
    return DiagonalMetric(d, diag_fn, grad_fn, cfg)


def diag_sine(base, amplitude, wavevector):
    """``g*^{ii}(x) = base_i * (1 + amplitude_i * sin(k_i . x))``."""
    base = np.asarray(base, dtype=float)
    amp = np.asarray(amplitude, dtype=float)
    k = np.asarray(wavevector, dtype=float)
    d = base.size
    if k.shape != (d, d):
        raise ValidationError(f"wavevector must have shape {(d, d)}", "metric.wavevector")
    if np.any(np.abs(amp) >= 1):
        raise ValidationError("amplitudes must satisfy |a| < 1", "metric.amplitude")

    def diag_fn(x):
        return base * (1.0 + amp * np.sin(x @ k.T))

    def grad_fn(x):
        c = base * amp * np.cos(x @ k.T)
        return c[..., :, None] * k

    cfg = {"kind": "diag-sine", "base": base.tolist(), "amplitude": amp.tolist(),
           "wavevector": k.tolist()}
    return DiagonalMetric(d, diag_fn, grad_fn, cfg)


class SampledMetric(Metric):
    """Dual metric sampled on a regular node grid.

    Values are multilinearly interpolated; spatial derivatives use centred
    differences with step ``h`` (the sampling spacing).
    """

    kind = "sampled-grid"

    def __init__(self, origin, h, gstar_nodes):
        gstar_nodes = np.asarray(gstar_nodes, dtype=float)
        self.dim = gstar_nodes.ndim - 2
        if self.dim not in (2, 3) or gstar_nodes.shape[-2:] != (self.dim, self.dim):
            raise ValidationError("gstar_nodes must have shape (n_1, ..., n_d, d, d)")
        lam = np.linalg.eigvalsh(gstar_nodes)
        if lam.min() <= 0:
            raise ValidationError("sampled metric is not positive definite")
        self.origin = np.asarray(origin, dtype=float)
        self.h = float(h)
        self.nodes = gstar_nodes
        axes = [self.origin[i] + self.h * np.arange(gstar_nodes.shape[i])
                for i in range(self.dim)]
        self.lower = np.array([a[0] for a in axes])
        self.upper = np.array([a[-1] for a in axes])
        flat = gstar_nodes.reshape(gstar_nodes.shape[:self.dim] + (-1,))
        self._interp = RegularGridInterpolator(axes, flat, method="linear",
                                               bounds_error=False, fill_value=None)

    def _check(self, x):
        tol = 1e-12 * max(1.0, self.h)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            raise OutOfDomain("point outside sampled-metric bounding box")

    def gstar(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        vals = self._interp(x.reshape(-1, self.dim))
        out = vals.reshape(x.shape[:-1] + (self.dim, self.dim))
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def dgstar(self, x):
        x = np.asarray(x, dtype=float)
        self._check(x)
        out = np.zeros(x.shape[:-1] + (self.dim,) * 3)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = self.h
            xp = np.minimum(x + e, self.upper)
            xm = np.maximum(x - e, self.lower)
            span = (xp - xm)[..., k]
            out[..., k, :, :] = (self.gstar(xp) - self.gstar(xm)) / span[..., None, None]
        return out

    def is_diagonal(self):
        idx = np.arange(self.dim)
        off = self.nodes.copy()
        off[..., idx, idx] = 0.0
        return not np.any(off)

    def to_config(self):
        return {"kind": "sampled-grid", "origin": self.origin.tolist(), "h": self.h,
                "gstar": self.nodes.tolist()}


def metric_from_config(cfg):
    """Build a metric from its JSON description."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ValidationError("metric config needs a 'kind'", "metric.kind")
    kind = cfg["kind"]
    if kind == "flat":
        return FlatMetric(int(cfg.get("dim", 2)))
    if kind == "diag-linear":
        return diag_linear(cfg["base"], cfg["slope"])
    if kind == "diag-sine":
        return diag_sine(cfg["base"], cfg["amplitude"], cfg["wavevector"])
    if kind == "sampled-grid":
        if "path" in cfg:
            from .snapshot import read_snapshot

            arr, header = read_snapshot(cfg["path"])
            return SampledMetric(header["origin"], header["h"], arr)
        return SampledMetric(cfg["origin"], cfg["h"], cfg["gstar"])
    raise ValidationError(f"unknown metric kind {kind!r}", "metric.kind")


@dataclass(frozen=True)
class PhasePoint:
    """Spacetime point ``x = (t, x_spatial)`` with covector ``zeta = (tau, xi)``."""

    x: np.ndarray = field(repr=True)
    zeta: np.ndarray = field(repr=True)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float))
        if self.x.shape != self.zeta.shape or self.x.ndim != 1:
            raise ValidationError("x and zeta must be 1-D arrays of equal length")
        if not np.any(self.zeta):
            raise ZeroCovector("covector must be non-zero")

    @property
    def t(self):
        return float(self.x[0])

    @property
    def x_spatial(self):
        return self.x[1:]

    @property
    def tau(self):
        return float(self.zeta[0])

    @property
    def xi(self):
        return self.zeta[1:]


def symbol_p(m: Metric, pp: PhasePoint) -> float:
    xi = pp.xi
    return float(-pp.tau ** 2 + xi @ m.gstar(pp.x_spatial) @ xi)


def hamiltonian_field(m: Metric, pp: PhasePoint):
    """Components ``(dp/dzeta, -dp/dx)`` of the Hamilton vector field."""
    xi = pp.xi
    gs = m.gstar(pp.x_spatial)
    dg = m.dgstar(pp.x_spatial)
    dx = np.concatenate(([-2.0 * pp.tau], 2.0 * gs @ xi))
    dzeta = np.concatenate(([0.0], -np.einsum("kij,i,j->k", dg, xi, xi)))
    return dx, dzeta


def null_lift(m: Metric, x, xi, orientation="forward") -> PhasePoint:
    """Complete ``xi`` to a null covector; forward rays get ``tau < 0``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise ZeroCovector("xi must be non-zero")
    mag = np.sqrt(xi @ m.gstar(x[1:]) @ xi)
    if orientation == "forward":
        tau = -mag
    elif orientation == "backward":
        tau = mag
    else:
        raise ValidationError(f"orientation must be forward/backward, got {orientation!r}")
    return PhasePoint(x, np.concatenate(([tau], xi)))


def lorentz_dual(m: Metric, x_spatial, z1, z2):
    """Pairing of two covectors under the dual of ``-dt^2 + g``."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    return float(-z1[0] * z2[0] + z1[1:] @ m.gstar(x_spatial) @ z2[1:])


def lorentz_vector(m: Metric, x_spatial, v1, v2):
    """Pairing of two tangent vectors under ``-dt^2 + g``."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    return float(-v1[0] * v2[0] + v1[1:] @ m.g(x_spatial) @ v2[1:])


def riemann_dual_norm(m: Metric, x_spatial, z):
    """Covector norm under the dual of ``dt^2 + g``."""
    z = np.asarray(z, dtype=float)
    return float(np.sqrt(z[0] ** 2 + z[1:] @ m.gstar(x_spatial) @ z[1:]))


def riemann_distance(m: Metric, a, b):
    """Length of the spacetime displacement ``b - a`` under ``dt^2 + g`` frozen
    at the midpoint (adequate for the short separations it is used on)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dv = b - a
    mid = 0.5 * (a[1:] + b[1:])
    return float(np.sqrt(dv[0] ** 2 + dv[1:] @ m.g(mid) @ dv[1:]))
