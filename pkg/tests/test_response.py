import numpy as np
import pytest

from conewave.fields import build_coefficient, build_pulse
from conewave.response import (CrossResponse, _operator, born_march, born_response, born_terms,
                               cross_difference, expansion_defect, expansion_ladder, fit_loglog,
                               perturbation_split)
from conewave.solver import SolverConfig, scaled_initial, solve_linear, solve_semilinear


@pytest.fixture(scope="module")
def small(request):
    from conftest import crossing_dict
    from conewave.scene import SceneConfig
    return SceneConfig.from_dict(crossing_dict(n=96, s0=0.08))


def _linear_runs(sc):
    cfg = sc.solver
    v1 = solve_linear(sc.grid, sc.metric, cfg, build_pulse(sc.grid, sc.metric, sc.sources[0]))
    v2 = solve_linear(sc.grid, sc.metric, cfg, build_pulse(sc.grid, sc.metric, sc.sources[1]))
    return v1, v2


def test_born_terms_trivial_cases(small):
    v1, v2 = _linear_runs(small)
    a = build_coefficient(small.grid, small.coefficient)
    for X in born_terms(v1, v2, np.zeros(small.grid.n), small.metric):
        assert not np.any(X.data)
    zero = v2.like(np.zeros_like(v2.data))
    X1, X2, X12 = born_terms(v1, zero, a, small.metric)
    assert not np.any(X2.data) and not np.any(X12.data)
    X1_full, _, _ = born_terms(v1, v2, a, small.metric)
    assert np.array_equal(X1.data, X1_full.data)
    doubled = born_terms(v1, v2, 2 * a, small.metric)
    for Xa, X2a in zip(born_terms(v1, v2, a, small.metric), doubled):
        assert np.array_equal(2 * Xa.data, X2a.data)


def test_streamed_born_matches_stored(small):
    v1, v2 = _linear_runs(small)
    a = build_coefficient(small.grid, small.coefficient)
    _, _, X12 = born_terms(v1, v2, a, small.metric)
    op, _ = _operator(small, stride=1)
    i1 = build_pulse(small.grid, small.metric, small.sources[0])
    i2 = build_pulse(small.grid, small.metric, small.sources[1])
    streamed = born_march(op, i1, i2, a, ("X12",))["X12"]
    assert np.array_equal(streamed.data, X12.data)


def test_born_linear_in_alpha(small):
    r1 = born_response(small, 1.0)
    r2 = born_response(small, 2.0)
    assert np.array_equal(2 * r1.field.data, r2.field.data)


def test_cross_without_nonlinearity_is_roundoff(small):
    cr = cross_difference(small.with_alpha(0.0))
    assert np.max(np.abs(cr.field.data)) < 10 * cr.field.metadata["roundoff_scale"]


def test_cross_symmetric_in_pulses(small):
    a = cross_difference(small, 1e-3, 2e-3)
    b = cross_difference(small.swapped(), 2e-3, 1e-3)
    scale = np.max(np.abs(a.field.data))
    assert np.max(np.abs(a.field.data - b.field.data)) < 1e-6 * scale


def test_unequal_and_equal_eps_share_a_limit(small):
    gaps = []
    for e in (4e-2, 1e-2):
        a = cross_difference(small, e, e).field.data
        b = cross_difference(small, e, e / 2).field.data
        gaps.append(np.linalg.norm(a - b) / np.linalg.norm(a))
    assert gaps[1] < gaps[0]


def test_cross_converges_to_born(small):
    d = [cross_difference(small, e, e, born=True).discrepancy() for e in (1e-2, 5e-3)]
    assert 1.7 <= d[0] / d[1] <= 2.3


def test_expansion_defect_without_nonlinearity(small):
    sc = small.with_alpha(0.0)
    defects, _ = expansion_ladder(sc, [0.5, 0.1])
    scale = 1.0
    assert np.all(defects < 1e-12 * scale)


def test_expansion_defect_of_exact_candidate(small):
    eps = 0.25
    op, _ = _operator(small)
    a = build_coefficient(small.grid, small.coefficient)
    init = scaled_initial(small.grid, small.metric, 1.0, 1.0, *small.sources)
    bt = born_march(op, init, None, a, ("X1",))
    cand = bt["v1"].like(eps * bt["v1"].data - eps ** 2 * bt["X1"].data)
    assert expansion_defect(small, eps, candidate=cand) < 1e-13


def test_defect_ladder_order_and_monotone_tail(small):
    eps = [2.0 * 2.0 ** -k for k in range(5)]
    defects, _ = expansion_ladder(small, eps)
    slope, _, r2 = fit_loglog(eps, defects)
    assert 2.7 <= slope <= 3.3 and r2 > 0.95
    assert np.all(np.diff(defects[-3:]) < 0)


def test_fit_loglog_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    s, c, r2 = fit_loglog(x, 3 * x ** 2.5)
    assert s == pytest.approx(2.5, abs=1e-12) and r2 == pytest.approx(1.0)


def test_split_without_potential(small):
    sp = perturbation_split(small, oracle=False)
    assert not np.any(sp.V_est.data)


def test_split_matches_potential_oracle(make_scene):
    from conftest import crossing_dict
    from conewave.scene import SceneConfig
    raw = crossing_dict(n=96, s0=0.08)
    raw["coefficient"]["potential"] = {"strength": 4.0}
    sc = SceneConfig.from_dict(raw)
    d = [perturbation_split(sc, delta=dl, eps=1e-3).v_discrepancy() for dl in (0.2, 0.1)]
    assert 1.7 <= d[0] / d[1] <= 2.3
