import numpy as np
import pytest

from dflow.geometry import FlowSpec, snapshot
from dflow.scenarios import expanding_sphere, growing_circle, ricci_sphere
from dflow.spacetime import (
    SpaceTimeVector,
    ricci_tilde,
    spacetime_block,
    spacetime_positivity_scan,
    warped_D_fiber,
    warped_product_check,
)

WEIGHTED = FlowSpec("weighted_circle", 1, (0.0, 1.0), {"u": "0.1*cos(theta)*(1+t)", "U": "0.2*sin(theta)+0.1*t"})


def test_block_reproduces_the_form():
    flow = FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.3*sin(theta)+0.5*log(1+t)"})
    snap = snapshot(flow, 0.4, 1.1)
    M, E = spacetime_block(snap)
    assert np.allclose(M, M.T)
    rng = np.random.default_rng(0)
    for _ in range(5):
        y, lam = rng.normal(size=1), rng.normal()
        v = np.append(y, lam)
        assert ricci_tilde(snap, SpaceTimeVector(E @ y, lam)) == pytest.approx(v @ M @ v, rel=1e-12, abs=1e-14)


def test_ricci_sphere_block_is_zero_and_scan_passes():
    M, _ = spacetime_block(snapshot(ricci_sphere(), 0.2))
    assert np.max(np.abs(M)) <= 1e-12
    assert spacetime_positivity_scan(ricci_sphere()).verdict == "pass"
    assert spacetime_positivity_scan(growing_circle()).verdict == "pass"
    assert spacetime_positivity_scan(expanding_sphere()).verdict == "fail"


def test_vector_must_be_finite():
    with pytest.raises(ValueError):
        SpaceTimeVector([np.nan], 1.0)


def test_warped_product_horizontal_identity():
    for t, x in ((0.2, 0.5), (0.7, 3.0)):
        rep = warped_product_check(snapshot(WEIGHTED, t, x), k=2)
        assert rep.verdict == "pass"


def test_warped_fiber_scaling_variants():
    snap = snapshot(WEIGHTED, 0.3, 1.0)
    value, literal, pde_term, const = warped_D_fiber(snap, 2, 0.0)
    # without a fiber curvature bound both readings agree
    assert value == pytest.approx(literal)
    assert value == pytest.approx(const - 2 * pde_term)
    v1, l1, _, _ = warped_D_fiber(snap, 2, 1.0)
    assert v1 != pytest.approx(l1)


def test_warped_product_errors():
    with pytest.raises(ValueError):
        warped_product_check(snapshot(WEIGHTED, 0.3, 1.0), k=0)
    with pytest.raises(ValueError):
        warped_product_check(snapshot(growing_circle(), 0.3, 1.0), k=2)
