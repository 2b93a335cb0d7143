"""JSON scene configuration shared by the library entry points and the CLI.

A scene is one JSON document::

    {
      "metric": {"kind": "flat", "dim": 2},
      "grid": {"origin": [...], "extent": [...], "n": [...], "t_end": 1.2},
      "sources": [{"p_launch": [...], "xi": [...], "s0": ..., "omega": ...,
                   "sigma": ...}, {...}],
      "coefficient": {"interface": {"kind": "plane", "normal": [1, 0]},
                      "alpha": 1.0, "profile": "jump"},
      "solver": {"cfl": 0.5, "sponge_width": 20},
      "experiment": {...},
      "rng_seed": null
    }

``grid`` accepts ``h`` in place of ``n``.  Sources accept either a null
covector ``zeta`` or a spatial covector ``xi`` (lifted forward in time).
``experiment`` keys are listed in :data:`EXPERIMENT_DEFAULTS`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConewaveError, ValidationError
from .fields import CoefficientSpec, GridSpec, PotentialSpec, SourceSpec
from .geometry import Metric, metric_from_config, null_lift
from .raytrace import InterfaceSpec
from .solver import SolverConfig

__all__ = ["SceneConfig", "EXPERIMENT_DEFAULTS", "load_scene", "config_hash"]

EXPERIMENT_DEFAULTS = {
    # cross-difference and Born comparison
    "eps": 1e-3,
    "eps_pair": None,
    # expansion-defect ladder, relative to eps_scale
    "eps_ladder": [2.0 ** -4, 2.0 ** -5, 2.0 ** -6, 2.0 ** -7, 2.0 ** -8],
    "eps_scale": None,
    # perturbation split
    "delta": 0.05,
    # interface membership and frequency probe
    "s0_ladder": None,
    "omega_ladder": None,
    # detection
    "threshold": 5.0,
    "radius_cells": 3.0,
    "background_shift": 6.0,
    "detect_window": None,
    "n_sample_times": 41,
    "exclusion_cells": None,
    # jump recovery
    "alpha_ref": 1.0,
    "save_every": 1,
}

_LADDER_KEYS = {"eps_ladder": "decreasing", "s0_ladder": "decreasing",
                "omega_ladder": "increasing"}


def _num(v, name, positive=False, allow_zero=True):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {v!r}", name) from None
    if not np.isfinite(x):
        raise ValidationError(f"{name} must be finite", name)
    if positive and (x < 0 or (x == 0 and not allow_zero)):
        raise ValidationError(f"{name} must be positive, got {x}", name)
    return x


def _vec(v, name, d=None):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a list of numbers", name) from None
    if a.ndim != 1 or (d is not None and a.size != d) or not np.all(np.isfinite(a)):
        want = f" of length {d}" if d is not None else ""
        raise ValidationError(f"{name} must be a finite vector{want}", name)
    return a


def _check_ladder(vals, name, order):
    if vals is None:
        return
    if not isinstance(vals, (list, tuple)) or len(vals) == 0:
        raise ValidationError(f"{name} must be a nonempty list", f"experiment.{name}")
    a = np.array([_num(v, f"experiment.{name}", positive=True, allow_zero=False) for v in vals])
    step = np.diff(a)
    ok = np.all(step < 0) if order == "decreasing" else np.all(step > 0)
    if not ok:
        raise ValidationError(f"{name} must be strictly {order}", f"experiment.{name}")


@dataclass
class SceneConfig:
    """Validated scene; ``raw`` is the canonical JSON-able dictionary."""

    raw: dict
    metric: Metric
    grid: GridSpec
    sources: list
    coefficient: CoefficientSpec
    solver: SolverConfig
    experiment: dict
    rng_seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, cfg):
        if not isinstance(cfg, dict):
            raise ValidationError("scene config must be a JSON object")
        raw = copy.deepcopy(cfg)
        unknown = set(raw) - {"metric", "grid", "sources", "coefficient", "solver",
                              "experiment", "rng_seed"}
        if unknown:
            raise ValidationError(f"unknown top-level keys {sorted(unknown)}", sorted(unknown)[0])
        for key in ("grid", "sources", "coefficient"):
            if key not in raw:
                raise ValidationError(f"missing '{key}'", key)
        raw.setdefault("metric", {"kind": "flat", "dim": len(raw["grid"].get("origin", [0, 0]))})
        raw.setdefault("solver", {})
        raw.setdefault("experiment", {})
        raw.setdefault("rng_seed", None)

        metric = _wrap("metric", metric_from_config, raw["metric"])
        solver = _build_solver(raw["solver"])
        grid = _build_grid(raw["grid"], metric, solver.cfl)
        if metric.dim != grid.d:
            raise ValidationError("metric and grid dimensions differ", "metric.dim")
        coeff = _build_coefficient(raw["coefficient"], grid.d)
        if not isinstance(raw["sources"], list) or len(raw["sources"]) != 2:
            raise ValidationError("exactly two sources are required", "sources")
        sources = [_build_source(s, metric, grid.d, f"sources[{i}]")
                   for i, s in enumerate(raw["sources"])]
        exp = dict(EXPERIMENT_DEFAULTS)
        unknown = set(raw["experiment"]) - set(EXPERIMENT_DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown experiment keys {sorted(unknown)}",
                                  f"experiment.{sorted(unknown)[0]}")
        exp.update(raw["experiment"])
        for key, order in _LADDER_KEYS.items():
            _check_ladder(exp[key], key, order)
        _num(exp["eps"], "experiment.eps", positive=True, allow_zero=False)
        _num(exp["delta"], "experiment.delta", positive=True, allow_zero=False)
        _num(exp["threshold"], "experiment.threshold", positive=True, allow_zero=False)
        if _num(exp["radius_cells"], "experiment.radius_cells", positive=True) < 2:
            raise ValidationError("tube radius must be at least 2 cells",
                                  "experiment.radius_cells")
        seed = raw["rng_seed"]
        if seed is not None and not isinstance(seed, int):
            raise ValidationError("rng_seed must be an integer or null", "rng_seed")
        return cls(raw, metric, grid, sources, coeff, solver, exp, seed)

    @classmethod
    def from_json(cls, text):
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(cfg)

    def to_dict(self):
        return copy.deepcopy(self.raw)

    def to_json(self):
        return json.dumps(self.raw, sort_keys=True, indent=2)

    def hash(self):
        return config_hash(self.raw)

    # -- derived scenes -------------------------------------------------------

    def updated(self, patch):
        """New scene with ``patch`` deep-merged into the raw config."""
        raw = self.to_dict()
        _merge(raw, copy.deepcopy(patch))
        return SceneConfig.from_dict(raw)

    def with_alpha(self, alpha):
        return self.updated({"coefficient": {"alpha": float(alpha)}})

    def with_sources(self, **kw):
        raw = self.to_dict()
        for s in raw["sources"]:
            s.update(kw)
        return SceneConfig.from_dict(raw)

    def with_interface_shift(self, distance):
        """Plane interface translated ``distance`` along its unit normal."""
        iface = self.raw["coefficient"]["interface"]
        if iface.get("kind", "plane") != "plane":
            raise ValidationError("interface shift needs a plane interface",
                                  "coefficient.interface")
        nrm = float(np.linalg.norm(iface["normal"]))
        off = float(iface.get("offset", 0.0)) + distance * nrm
        return self.updated({"coefficient": {"interface": {"offset": off}}})

    def swapped(self):
        raw = self.to_dict()
        raw["sources"] = raw["sources"][::-1]
        return SceneConfig.from_dict(raw)

    @property
    def eps_pair(self):
        ep = self.experiment["eps_pair"]
        if ep is None:
            e = float(self.experiment["eps"])
            return e, e
        return float(ep[0]), float(ep[1])

    @property
    def tube_radius(self):
        return float(self.experiment["radius_cells"]) * self.grid.h

    def sample_times(self):
        return np.linspace(0.0, self.grid.t_end, int(self.experiment["n_sample_times"]))


def _merge(dst, src):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def _wrap(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConewaveError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {name} config: {exc}", name) from exc


def _build_solver(cfg):
    if not isinstance(cfg, dict):
        raise ValidationError("solver config must be an object", "solver")
    allowed = set(SolverConfig.__dataclass_fields__) - {"threads"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ValidationError(f"unknown solver keys {sorted(unknown)}",
                              f"solver.{sorted(unknown)[0]}")
    return _wrap("solver", SolverConfig, **cfg)


def _build_grid(cfg, metric, cfl):
    if not isinstance(cfg, dict):
        raise ValidationError("grid config must be an object", "grid")
    origin = _vec(cfg.get("origin"), "grid.origin")
    d = origin.size
    extent = _vec(cfg.get("extent"), "grid.extent", d)
    if np.any(extent <= 0):
        raise ValidationError("grid extent must be positive", "grid.extent")
    if "h" in cfg and "n" in cfg:
        raise ValidationError("give either grid.n or grid.h, not both", "grid.h")
    if "h" in cfg:
        h = _num(cfg["h"], "grid.h")
        if h <= 0:
            raise ValidationError(f"grid.h must be positive, got {h}", "grid.h")
        nf = extent / h
        n = np.rint(nf).astype(int)
        if np.any(np.abs(nf - n) > 1e-9 * nf):
            raise ValidationError("extent is not an integer multiple of h", "grid.h")
    elif "n" in cfg:
        n = _vec(cfg["n"], "grid.n", d)
        if np.any(n != np.rint(n)) or np.any(n < 4):
            raise ValidationError("grid.n must be integers >= 4", "grid.n")
        n = n.astype(int)
    else:
        raise ValidationError("grid needs n or h", "grid.n")
    t_end = _num(cfg.get("t_end"), "grid.t_end")
    if t_end <= 0:
        raise ValidationError("grid.t_end must be positive", "grid.t_end")
    return GridSpec.build(origin, extent, n, t_end, cfl=cfl, metric=metric)


def _build_coefficient(cfg, d):
    if not isinstance(cfg, dict):
        raise ValidationError("coefficient config must be an object", "coefficient")
    if "interface" not in cfg:
        raise ValidationError("coefficient needs an interface", "coefficient.interface")
    ic = cfg["interface"]
    iface = _wrap("coefficient.interface", InterfaceSpec.from_config, ic)
    if iface.dim != d:
        raise ValidationError("interface dimension differs from grid", "coefficient.interface")
    pot = cfg.get("potential")
    if pot is not None:
        pot = PotentialSpec(_num(pot.get("strength"), "coefficient.potential.strength"),
                            pot.get("profile", "jump"), pot.get("width"), pot.get("kappa"))
    return CoefficientSpec(iface, _num(cfg.get("alpha", 0.0), "coefficient.alpha"),
                           cfg.get("profile", "jump"), cfg.get("width"), cfg.get("kappa"),
                           cfg.get("region", "half-space"), pot)


def _build_source(cfg, metric, d, where):
    if not isinstance(cfg, dict):
        raise ValidationError("source must be an object", where)
    p = _vec(cfg.get("p_launch"), f"{where}.p_launch", 1 + d)
    if ("zeta" in cfg) == ("xi" in cfg):
        raise ValidationError("give exactly one of zeta or xi", f"{where}.zeta")
    if "xi" in cfg:
        xi = _vec(cfg["xi"], f"{where}.xi", d)
        zeta = _wrap(f"{where}.xi", null_lift, metric, p, xi, "forward").zeta
    else:
        zeta = _vec(cfg["zeta"], f"{where}.zeta", 1 + d)
    kw = {}
    for key in ("s0", "omega", "sigma"):
        if key not in cfg:
            raise ValidationError(f"source needs {key}", f"{where}.{key}")
        kw[key] = _num(cfg[key], f"{where}.{key}")
    for key in ("amplitude", "t0"):
        if key in cfg:
            kw[key] = _num(cfg[key], f"{where}.{key}")
    if "beam_length" in cfg and cfg["beam_length"] is not None:
        kw["beam_length"] = _num(cfg["beam_length"], f"{where}.beam_length")
    if "mu_proxy" in cfg:
        kw["mu_proxy"] = cfg["mu_proxy"]
    try:
        src = SourceSpec(p, zeta, **kw)
    except ValidationError as exc:
        f = exc.field or ""
        raise ValidationError(str(exc), f.replace("sources", where, 1) if f else where) from exc
    try:
        src.launch_phase_point(metric)
    except ValidationError as exc:
        raise ValidationError(str(exc), f"{where}.zeta") from exc
    return src


def config_hash(raw):
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def load_scene(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}", "config") from exc
    return SceneConfig.from_json(text)
