import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conewave.errors import ValidationError, ZeroCovector
from conewave.geometry import (FlatMetric, PhasePoint, SampledMetric, diag_linear, diag_sine,
                               hamiltonian_field, metric_from_config, null_lift, symbol_p)

METRICS = {
    "flat": FlatMetric(2),
    "linear": diag_linear([1.0, 1.5], [[0.1, 0.0], [0.0, -0.05]]),
    "sine": diag_sine([1.0, 1.0], [0.2, 0.1], [[3.0, 1.0], [0.0, 2.0]]),
}


def _sampled():
    n = 33
    x = np.linspace(-1, 1, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    g = np.zeros((n, n, 2, 2))
    g[..., 0, 0] = 1 + 0.2 * X
    g[..., 1, 1] = 1 + 0.1 * Y ** 2
    g[..., 0, 1] = g[..., 1, 0] = 0.05 * X * Y
    return SampledMetric([-1.0, -1.0], x[1] - x[0], g)


@pytest.mark.parametrize("name", sorted(METRICS) + ["sampled"])
def test_null_lift_is_null(name):
    m = METRICS[name] if name != "sampled" else _sampled()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = np.concatenate(([rng.uniform(0, 1)], rng.uniform(-0.8, 0.8, 2)))
        xi = rng.normal(size=2)
        pp = null_lift(m, x, xi)
        assert pp.tau < 0
        assert abs(symbol_p(m, pp)) <= 1e-12 * (xi @ xi)


def _fd_error(m, pp, h):
    _, dz = hamiltonian_field(m, pp)
    g = np.zeros(3)
    for k in (1, 2):
        e = np.zeros(3)
        e[k] = h
        g[k] = (symbol_p(m, PhasePoint(pp.x + e, pp.zeta))
                - symbol_p(m, PhasePoint(pp.x - e, pp.zeta))) / (2 * h)
    return np.linalg.norm(dz + g)


def test_hamiltonian_field_second_order_agreement():
    pp = PhasePoint([0.3, 0.2, -0.1], [-1.3, 0.7, 0.4])
    ratio = _fd_error(METRICS["sine"], pp, 0.02) / _fd_error(METRICS["sine"], pp, 0.01)
    assert 3.5 <= ratio <= 4.5
    # the symbol is linear in x here, so centred differences are exact
    assert _fd_error(METRICS["linear"], pp, 0.01) < 1e-12


def test_flat_field_has_constant_covector():
    dx, dz = hamiltonian_field(FlatMetric(2), PhasePoint([0, 0, 0], [-1, 1, 0]))
    assert np.all(dz == 0)
    np.testing.assert_allclose(dx, [2, 2, 0])


def test_zero_covector_rejected():
    with pytest.raises(ZeroCovector):
        PhasePoint([0, 0, 0], [0, 0, 0])
    with pytest.raises(ZeroCovector):
        null_lift(FlatMetric(2), [0, 0, 0], [0, 0])


def test_metric_config_round_trip():
    for m in METRICS.values():
        m2 = metric_from_config(m.to_config())
        x = np.array([[0.1, -0.3], [0.4, 0.2]])
        np.testing.assert_array_equal(m.gstar(x), m2.gstar(x))


def test_unknown_metric_names_field():
    with pytest.raises(ValidationError) as exc:
        metric_from_config({"kind": "hyperbolic", "dim": 2})
    assert exc.value.field == "metric.kind"


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0.1, 3), st.floats(0, 2 * np.pi))
def test_sampled_metric_null_lift(x, y, r, a):
    m = _sampled()
    pp = null_lift(m, [0.0, x, y], [r * np.cos(a), r * np.sin(a)])
    assert abs(symbol_p(m, pp)) <= 1e-12 * r * r
