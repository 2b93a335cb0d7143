import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conewave.errors import PulseClipped, ValidationError
from conewave.fields import (CoefficientSpec, GridSpec, SourceSpec, WaveField, build_coefficient,
                             build_pulse, norm, smooth_step)
from conewave.geometry import FlatMetric
from conewave.raytrace import InterfaceSpec
from conewave.solver import SolverConfig, solve_linear

FLAT = FlatMetric(2)


def unit_grid(n=64, t_end=1.0):
    return GridSpec.build([0, 0], [1, 1], [n, n], t_end)


def test_grid_dt_lands_on_t_end():
    g = GridSpec.build([-1, -1], [2, 2], [50, 50], 0.77, cfl=0.5)
    assert g.n_t * g.dt == pytest.approx(0.77, rel=1e-14)
    assert g.cfl <= 0.5
    assert g.h == pytest.approx(0.04)


@pytest.mark.parametrize("cfl", [0.0, 0.51, 1.0])
def test_grid_cfl_guard(cfl):
    with pytest.raises(ValidationError) as exc:
        GridSpec.build([0, 0], [1, 1], [8, 8], 1.0, cfl=cfl)
    assert exc.value.field == "solver.cfl"


def test_grid_rejects_anisotropic_spacing():
    with pytest.raises(ValidationError):
        GridSpec.build([0, 0], [1, 2], [8, 8], 1.0)


# ---------------------------------------------------------------------------
# coefficients


def test_jump_coefficient_values():
    g = GridSpec.build([-1, -1], [2, 2], [40, 40], 1.0)
    spec = CoefficientSpec(InterfaceSpec("plane", normal=[1, 0]), alpha=2.0)
    a = build_coefficient(g, spec)
    x1 = g.cell_centres()[..., 0]
    np.testing.assert_array_equal(a, np.where(x1 < 0, 2.0, 0.0))
    assert set(np.unique(a)) == {0.0, 2.0}
    assert not np.any(build_coefficient(g, spec.with_alpha(0.0)))


def test_mollified_jump_agrees_outside_collar():
    g = GridSpec.build([-1, -1], [2, 2], [80, 80], 1.0)
    iface = InterfaceSpec("plane", normal=[1, 0])
    w = 4 * g.h
    jump = build_coefficient(g, CoefficientSpec(iface, 1.0))
    moll = build_coefficient(g, CoefficientSpec(iface, 1.0, profile="mollified-jump", width=w))
    x1 = g.cell_centres()[..., 0]
    out = np.abs(x1) > 0.5 * w
    np.testing.assert_array_equal(moll[out], jump[out])
    row = moll[:, 0]
    assert np.all(np.diff(row) <= 0)


def test_smooth_step_limits():
    s = np.linspace(-1, 2, 301)
    v = smooth_step(s)
    assert np.all(v[s <= 0] == 0) and np.all(v[s >= 1] == 1)
    assert np.all(np.diff(v) >= 0)


# ---------------------------------------------------------------------------
# pulses


def _src(direction=(1.0, 0.0), amplitude=1.0, **kw):
    base = dict(s0=0.1, omega=0.0, sigma=0.04, amplitude=amplitude)
    base.update(kw)
    return SourceSpec.from_direction(FLAT, [0.0, -0.3, 0.0], direction, **base)


def test_zero_amplitude_pulse():
    u0, u1 = build_pulse(unit_grid_centered(), FLAT, _src(amplitude=0.0))
    assert not np.any(u0) and not np.any(u1)


def unit_grid_centered(n=128, t_end=0.6):
    return GridSpec.build([-1, -1], [2, 2], [n, n], t_end)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_pulse_norm_is_linear_in_amplitude(A):
    g = unit_grid_centered(64)
    u1, _ = build_pulse(g, FLAT, _src(amplitude=1.0))
    uA, _ = build_pulse(g, FLAT, _src(amplitude=A))
    np.testing.assert_allclose(np.linalg.norm(uA), A * np.linalg.norm(u1), rtol=1e-14)


def test_pulse_clipped_near_edge():
    g = unit_grid_centered(64)
    src = SourceSpec.from_direction(FLAT, [0.0, 0.95, 0.0], [1.0, 0.0], s0=0.1, omega=0.0,
                                    sigma=0.04)
    with pytest.raises(PulseClipped):
        build_pulse(g, FLAT, src)


def _centroid_x1(u, g):
    w = u ** 2
    return float(np.sum(w * g.cell_centres()[..., 0]) / np.sum(w))


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_pulse_travels_along_its_direction(sign):
    g = unit_grid_centered(160, t_end=0.5)
    # a carrier keeps the zero-frequency content (which spreads in 2-D) small
    src = SourceSpec.from_direction(FLAT, [0.0, 0.0, 0.0], [sign, 0.0], s0=0.1, omega=40.0,
                                    sigma=0.075)
    out = solve_linear(g, FLAT, SolverConfig(save_every=g.n_t), build_pulse(g, FLAT, src))
    uT = out.final
    x = g.cell_centres()
    near = np.abs(x[..., 0] - sign * g.t_end) <= 2 * src.sigma + g.h
    on = float(np.sum(uT[near] ** 2))
    off = float(np.sum(uT[~near] ** 2))
    assert off < 0.05 * on
    assert _centroid_x1(uT, g) == pytest.approx(sign * g.t_end, abs=2 * g.h)


def test_source_null_check():
    src = SourceSpec(np.zeros(3), np.array([-1.0, 2.0, 0.0]), 0.1, 0.0, 0.05)
    with pytest.raises(ValidationError):
        src.launch_phase_point(FLAT)


# ---------------------------------------------------------------------------
# norms


def _field(g, data):
    data = np.asarray(data)
    return WaveField(g, data, np.arange(data.shape[0]) * (g.n_t // (data.shape[0] - 1)
                                                          if data.shape[0] > 1 else 1))


def test_norms_of_zero_field():
    g = unit_grid(16, 1.0)
    f = _field(g, np.zeros((g.n_t + 1,) + g.n))
    for kind in ("L2", "L4", "energy"):
        assert norm(f, kind) == 0


def test_constant_field_unit_spacetime():
    g = unit_grid(16, 1.0)
    f = WaveField(g, np.ones((g.n_t + 1,) + g.n), np.arange(g.n_t + 1))
    assert norm(f, "L2") == pytest.approx(1.0, rel=1e-12)
    assert norm(f, "L4") == pytest.approx(1.0, rel=1e-12)


def test_sine_slice_norm():
    g = unit_grid(256, 1.0)
    u = np.sin(2 * np.pi * g.cell_centres()[..., 0])
    f = WaveField(g, u[None], np.array([0]))
    assert norm(f, "L2") == pytest.approx(1 / np.sqrt(2), abs=1e-4)


def test_l4_additive_on_disjoint_supports():
    g = unit_grid(32, 1.0)
    rng = np.random.default_rng(3)
    a = np.zeros((5,) + g.n)
    b = np.zeros((5,) + g.n)
    a[:, :10] = rng.normal(size=(5, 10, 32))
    b[:, 20:] = rng.normal(size=(5, 12, 32))
    steps = np.arange(5)
    na, nb, nab = (norm(WaveField(g, x, steps), "L4") for x in (a, b, a + b))
    assert nab ** 4 == pytest.approx(na ** 4 + nb ** 4, rel=1e-13)


def test_norm_region_restricts():
    g = unit_grid(32, 1.0)
    u = np.ones((1,) + g.n)
    f = WaveField(g, u, np.array([0]))
    assert norm(f, "L2", region=([0, 0], [0.5, 1])) == pytest.approx(np.sqrt(0.5), rel=1e-12)
