import math

import numpy as np
import pytest

from dflow.geometry import (
    DomainError,
    FlowSpec,
    InvalidFlowError,
    D_parts,
    classify_sphere_flow,
    evaluate_D,
    evaluate_D_weighted,
    minimize_D,
    snapshot,
    validate_flow,
)
from dflow.scenarios import expanding_sphere, fast_shrinking_sphere, growing_circle, ricci_sphere, shrinking_circle


def test_static_round_sphere_D_is_twice_ricci():
    flow = FlowSpec("static_manifold", 3, (0.0, 1.0), {"kappa": 2.0})
    snap = snapshot(flow, 0.4)
    X = np.array([0.3, -1.2, 0.5])
    # Ric = kappa (n - 1) g on a space form
    assert evaluate_D(snap, X) == pytest.approx(2 * 2.0 * 2 * snap.inner(X, X), rel=1e-12)


def test_growing_circle_hand_computed():
    # g = (1+t) dtheta^2: S-tensor = -1/2, S = -1/(2(1+t)), c = 0, Q = 1
    flow = growing_circle()
    for t in (0.0, 0.3, 0.9):
        snap = snapshot(flow, t, 1.0)
        assert snap.S == pytest.approx(-0.5 / (1 + t))
        for X in (0.0, 0.7, -2.0):
            assert evaluate_D(snap, [X]) == pytest.approx(X**2, abs=1e-12)


def test_shrinking_circle_hand_computed():
    flow = shrinking_circle()
    for t in (0.0, 0.5):
        snap = snapshot(flow, t, 2.0)
        for X in (0.0, 1.0, 3.0):
            assert evaluate_D(snap, [X]) == pytest.approx(-(1 + X**2) / (1 + t) ** 2, abs=1e-12)


def test_expanding_sphere_constant_term():
    snap = snapshot(expanding_sphere(), 0.5)
    c, b, Q = D_parts(snap)
    assert c == pytest.approx(-2 / 1.25)
    assert np.allclose(b, 0)


def test_minimize_matches_sampling():
    flow = FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.3*sin(theta)+0.5*log(1+t)"})
    rng = np.random.default_rng(0)
    for _ in range(10):
        snap = snapshot(flow, rng.uniform(0, 1), rng.uniform(0, 2 * np.pi))
        res = minimize_D(snap)
        if res.unbounded:
            continue
        samples = [evaluate_D(snap, [x]) for x in np.linspace(-10, 10, 2001)]
        assert min(samples) >= res.min_value - 1e-12
        assert evaluate_D(snap, res.argmin) == pytest.approx(res.min_value, abs=1e-12)


def test_unbounded_below_reports_direction():
    snap = snapshot(fast_shrinking_sphere(), 0.1)
    res = minimize_D(snap)
    assert res.unbounded
    w = res.witness
    assert evaluate_D(snap, 100 * w) < evaluate_D(snap, w) < 0


def test_ricci_sphere_is_zero_and_classified():
    cls = classify_sphere_flow(ricci_sphere())
    assert cls.is_ricci_flow and cls.is_srf and cls.satisfies_D
    assert abs(cls.min_D) <= 1e-10
    bad = classify_sphere_flow(expanding_sphere())
    assert not bad.satisfies_D and bad.concavity_margin < 0


def test_weighted_dimension_errors():
    flow = FlowSpec("weighted_circle", 1, (0.0, 1.0), {"u": "0", "U": "0.2*sin(theta)+t"})
    snap = snapshot(flow, 0.5, 0.3)
    with pytest.raises(ValueError):
        evaluate_D_weighted(snap, [1.0], N=0.5)
    with pytest.raises(ZeroDivisionError):
        evaluate_D_weighted(snap, [1.0], N=1)
    inf_val = evaluate_D_weighted(snap, [1.0])
    assert evaluate_D_weighted(snap, [1.0], N=1e12) == pytest.approx(inf_val, rel=1e-9)
    assert evaluate_D_weighted(snap, [1.0], N=3) < inf_val


def test_weighted_with_zero_potential_matches_plain():
    plain = FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.2*cos(theta)*(1+t)"})
    weighted = FlowSpec("weighted_circle", 1, (0.0, 1.0), {"u": "0.2*cos(theta)*(1+t)", "U": "0"})
    for X in (0.0, 1.3):
        assert evaluate_D_weighted(snapshot(weighted, 0.4, 1.0), [X]) == pytest.approx(evaluate_D(snapshot(plain, 0.4, 1.0), [X]), abs=1e-12)


def test_backward_orientation_matches_forward():
    fwd = FlowSpec("round_sphere", 2, (0.0, 0.4), {"r2": "1-2*t"}, T=0.5)
    bwd = FlowSpec("round_sphere", 2, (0.1, 0.5), {"r2": "2*t"}, orientation="backward", T=0.5)
    for tau in (0.15, 0.3, 0.45):
        a, b = snapshot(bwd, tau), snapshot(fwd, 0.5 - tau)
        assert a.S == pytest.approx(b.S)
        assert a.dt_S == pytest.approx(b.dt_S)
        assert minimize_D(a).min_value == pytest.approx(0.0, abs=1e-10)


def test_circle_volume_weights_sum_to_total_volume():
    from dflow.pde import SpaceTimeGrid

    flow = FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.3*sin(theta)+0.1*t*cos(2*theta)"})
    grid = SpaceTimeGrid(flow, 128)
    for t in (0.0, 0.7):
        assert grid.volume_weights(t).sum() == pytest.approx(flow.total_volume(t), rel=1e-10)


def test_errors():
    with pytest.raises(InvalidFlowError, match="unknown family"):
        FlowSpec("cylinder", 2, (0.0, 1.0), {})
    with pytest.raises(InvalidFlowError):
        FlowSpec("round_sphere", 2, (1.0, 0.0), {"r2": "1"})
    with pytest.raises(InvalidFlowError):
        FlowSpec("round_sphere", 2, (0.0, 1.0), {})
    with pytest.raises(DomainError):
        snapshot(ricci_sphere(), 0.45)
    with pytest.raises(ValueError):
        evaluate_D(snapshot(ricci_sphere(), 0.1), [1.0])


def test_validate_flow_accepts_expression_derivatives():
    worst = validate_flow(FlowSpec("weighted_circle", 1, (0.0, 1.0), {"u": "0.3*sin(theta)*exp(t)", "U": "cos(theta+t)"}))
    assert worst <= 1e-6
    assert math.isfinite(worst)
