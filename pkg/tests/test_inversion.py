import numpy as np
import pytest

from conewave.errors import DegenerateReference, UnderResolved
from conewave.fields import GridSpec, WaveField
from conewave.inversion import (DetectionConfig, cone_tube, detect_surfaces, fit_power_law,
                                locate_interface,
                                frequency_scaling_probe, interior_mask, prediction_for,
                                recover_jump, tube_cells, tube_energy)
from conewave.raytrace import SampledSurface
from conewave.response import CrossResponse, born_response


def line_surface(grid, x1, times):
    """The spatial line ``{x1 = const}`` at every sample time."""
    ys = grid.axes()[1]
    pts, tidx = [], []
    for k, t in enumerate(times):
        for y in ys:
            pts.append([t, x1, y])
            tidx.append(k)
    pts = np.array(pts)
    m = len(pts)
    return SampledSurface("line", pts, np.array(tidx), np.zeros((m, 2, 3)),
                          np.tile([1.0, 0.0], (m, 1)))


@pytest.fixture
def box():
    g = GridSpec.build([0, 0], [1, 1], [100, 100], 0.1)
    steps = np.array([0, g.n_t])
    return g, steps


def test_tube_energy_of_zero_field(box):
    g, steps = box
    f = WaveField(g, np.zeros((2,) + g.n), steps)
    assert tube_energy(f, line_surface(g, 0.5, f.times), 3 * g.h) == 0


def test_tube_indicator_has_unit_energy(box):
    g, steps = box
    f0 = WaveField(g, np.zeros((2,) + g.n), steps)
    surf = line_surface(g, 0.5, f0.times)
    tube = tube_cells(f0, surf, f0.times, 3 * g.h)
    data = np.zeros((2,) + g.n)
    for j in tube.cells:
        data[j] = tube.mask(g.n, j)
    f = WaveField(g, data, steps)
    assert tube_energy(f, surf, 3 * g.h, highpass_cut=0) == pytest.approx(1.0, abs=1e-15)


def test_oscillation_in_tube_has_half_energy(box):
    g, steps = box
    x = g.cell_centres()
    w = 2 * np.pi / (6 * g.h)
    u = np.cos(w * x[..., 1]) * (np.abs(x[..., 0] - 0.5) < 0.1)
    f = WaveField(g, np.stack([u, u]), steps)
    e = tube_energy(f, line_surface(g, 0.5, f.times), 3 * g.h, highpass_cut=w / 10)
    assert e == pytest.approx(0.5, rel=0.1)


def test_tube_energy_translation_invariant():
    g = GridSpec.build([0, 0], [1, 1], [128, 128], 0.1)
    steps = np.array([0, g.n_t])
    x = g.cell_centres()
    rng = np.random.default_rng(5)
    u = rng.normal(size=g.n) * np.exp(-((x[..., 1] - 0.5) ** 2) / 0.02)
    u[:, :20] = u[:, -20:] = 0
    f = WaveField(g, np.stack([u, u]), steps)
    shift = 9
    fs = WaveField(g, np.roll(f.data, shift, axis=1), steps)
    e0 = tube_energy(f, line_surface(g, 0.4 + 0.5 * g.h, f.times), 3 * g.h)
    e1 = tube_energy(fs, line_surface(g, 0.4 + (shift + 0.5) * g.h, f.times), 3 * g.h)
    assert e1 == pytest.approx(e0, abs=1e-10 * max(e0, 1))


def test_power_law_fitter():
    w = np.array([10.0, 20.0, 40.0, 80.0])
    s, r2 = fit_power_law(w, w ** -1.5)
    assert s == pytest.approx(-1.5, abs=1e-12) and r2 == pytest.approx(1.0)
    s2, _ = fit_power_law(w, 2 * w ** -1.5)
    assert s2 == pytest.approx(s, abs=1e-12)


# ---------------------------------------------------------------------------
# scene-level checks on a coarse copy of the crossing scene


@pytest.fixture(scope="module")
def coarse():
    from conftest import crossing_dict
    from conewave.scene import SceneConfig
    sc = SceneConfig.from_dict(crossing_dict(n=128))
    ref = born_response(sc, 1.0)
    pred = prediction_for(sc, ref.field)
    tube = cone_tube(sc, ref.field, pred, interior_mask(sc))
    return sc, ref, pred, tube


def test_born_recovery_is_exact(coarse):
    sc, ref, pred, tube = coarse
    obs = born_response(sc, 3.0)
    est = recover_jump(obs, ref, 1.0, tube)
    assert est.alpha_hat == pytest.approx(3.0, abs=1e-10)
    assert est.residual < 1e-10
    same = recover_jump(ref, ref, 1.0, tube)
    assert same.alpha_hat == 1.0 and same.residual == 0.0


def test_born_recovery_is_linear(coarse):
    sc, ref, pred, tube = coarse
    base = recover_jump(born_response(sc, 1.5), ref, 1.0, tube).alpha_hat
    for c in (0.5, 2.0, 4.0):
        est = recover_jump(born_response(sc, 1.5 * c), ref, 1.0, tube).alpha_hat
        assert est / base == pytest.approx(c, abs=1e-9)


def test_degenerate_reference(coarse):
    sc, ref, pred, tube = coarse
    zero = CrossResponse(ref.field.like(np.zeros_like(ref.field.data)), (0, 0))
    with pytest.raises(DegenerateReference):
        recover_jump(ref, zero, 1.0, tube)


def test_cone_snr_monotone_in_alpha(coarse):
    sc, ref, pred, _ = coarse
    cfg = DetectionConfig.from_scene(sc, interior=interior_mask(sc))
    snr = [detect_surfaces(born_response(sc, a).field, pred, cfg, names=["cone"])[0].snr
           for a in (1.0, 2.0)]
    assert snr[1] >= snr[0] * (1 - 1e-12)


def test_born_cone_detected(coarse):
    sc, ref, pred, _ = coarse
    cfg = DetectionConfig.from_scene(sc, interior=interior_mask(sc))
    rep = detect_surfaces(ref.field, pred, cfg, names=["cone"])[0]
    assert rep.predicted and rep.detected


def test_probe_rejects_underresolved_ladder(coarse):
    sc = coarse[0]
    with pytest.raises(UnderResolved):
        frequency_scaling_probe(sc, [20.0, 1000.0])


def test_locate_interface_swap_invariant_and_null(make_scene):
    sc = make_scene()
    d, reps = locate_interface(sc, [0.065])
    d_sw, reps_sw = locate_interface(sc.swapped(), [0.065])
    assert d and d_sw
    assert reps[0]["snr"] == pytest.approx(reps_sw[0]["snr"], rel=1e-9)
    d0, _ = locate_interface(sc.with_alpha(0.0), [0.065])
    assert not d0
