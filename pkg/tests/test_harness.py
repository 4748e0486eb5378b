import json

import numpy as np
import pytest

from dflow.geometry import FlowSpec, snapshot
from dflow.harness import (
    CheckReport,
    PreconditionError,
    Resolution,
    check_blowup_bound,
    check_D_condition,
    check_monotonicity,
    check_shifted_bochner_equivalence,
    check_wasserstein_contraction,
    decide,
    four_time_shift,
)
from dflow.scenarios import expanding_sphere, growing_circle, ricci_sphere


def test_decide_bands():
    assert decide(0.0, 1e-9) == "pass"
    assert decide(-5e-10, 1e-9) == "pass"
    assert decide(-2e-9, 1e-9) == "fail"
    assert decide(1.0, 1e-3, tol_cap=1e-4) == "indeterminate"
    assert decide(1.0, 1e-9, unresolved=True) == "indeterminate"


def test_resolution_refines_everything():
    r = Resolution(n_x=32, dt=0.02, K=8).refined()
    assert (r.n_x, r.dt, r.K, r.level) == (64, 0.01, 16, 1)


def test_report_round_trips_through_json():
    rep = CheckReport("x", "L0", "pass", np.float64(0.5), 1e-9, {"a": np.arange(3)}, {"t": np.float64(0.1)})
    back = json.loads(json.dumps(rep.to_dict()))
    assert back["parameters"]["a"] == [0, 1, 2]
    assert rep.passed
    with pytest.raises(ValueError):
        CheckReport("x", "L0", "maybe", 0.0, 0.0)


def test_D_condition_reports():
    assert check_D_condition(ricci_sphere()).verdict == "pass"
    bad = check_D_condition(expanding_sphere())
    assert bad.verdict == "fail" and bad.worst_margin < 0


def test_shifted_bochner_identity_holds_for_random_data():
    flow = FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.3*sin(theta)+0.5*log(1+t)"})
    rng = np.random.default_rng(3)
    for _ in range(5):
        snap = snapshot(flow, rng.uniform(0, 1), rng.uniform(0, 6))
        rep = check_shifted_bochner_equivalence(snap, rng.normal(size=1), rng.normal(size=(1, 1)), N=3.0, shifts=(0.5, 2.0, -1.0))
        assert rep.verdict == "pass"
        assert any("skipped" in note for note in rep.notes)


def test_blowup_bound():
    flow = ricci_sphere()
    rep = check_blowup_bound(flow, 0.45, res=Resolution(n_x=8))
    assert rep.verdict == "pass"
    # linear r^2 = 1 - 2t: the predicted bound coincides with extinction
    assert rep.details["bound_minus_extinction"] == pytest.approx(0.0, abs=1e-12)
    assert check_blowup_bound(growing_circle(), 0.8).verdict == "not_applicable"


def test_monotonicity_refuses_entropy():
    with pytest.raises(ValueError):
        check_monotonicity(ricci_sphere(), "entropy")


def test_four_time_shift():
    T0, alpha = four_time_shift(0.1, 0.2, 0.3, 0.5)
    assert (0.2 + T0) / (0.1 + T0) == pytest.approx((0.5 + T0) / (0.3 + T0))
    assert alpha == pytest.approx((0.2 + T0) / (0.1 + T0))
    with pytest.raises(PreconditionError):
        four_time_shift(0.1, 0.3, 0.2, 0.3)


def test_squared_distance_form_needs_static_flow():
    with pytest.raises(PreconditionError):
        check_wasserstein_contraction(growing_circle(), "kuwada", s=0.1, t=0.3)
