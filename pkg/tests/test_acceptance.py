"""Acceptance suite: one or more tests per criterion, summarized at the end of the run.

Every test is marked ``criterion(number, title)``; ``conftest.py`` prints a
PASS/FAIL line per criterion and any ``measured`` values the tests attach.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment, linprog

from dflow.geometry import FlowSpec, bochner_residual, evaluate_D, minimize_D, snapshot
from dflow.functionals import calibrated_trace, monotonicity_trace, sphere_F_rate
from dflow.harness import (
    Resolution,
    check_entropy_convexity,
    check_gradient_estimate,
    check_hj_preservation,
    check_wasserstein_contraction,
    evi_wc_consistency,
)
from dflow.lagrangian import CostFamily, hj_residual, hopf_lax
from dflow.pde import (
    DiscreteMeasure,
    ScalarField,
    SpaceTimeGrid,
    adjoint_heat_propagate,
    duality_residual,
    heat_propagate,
    propagator_matrix,
)
from dflow.scenarios import SATISFYING, SEEDED, expanding_sphere, growing_circle, ricci_sphere, static_flat_circle
from dflow.spacetime import SpaceTimeVector, ricci_tilde, spacetime_positivity_scan
from dflow.transport import kantorovich


def measured(request, text):
    request.node.user_properties.append(("measured", text))


def sphere(n, r2, interval, T=0.0):
    return FlowSpec("round_sphere", n, interval, {"r2": r2}, T=T)


# ---------------------------------------------------------------------------
# 1


@pytest.mark.criterion(1, "D vanishes on round-sphere Ricci flows")
@pytest.mark.parametrize("n", [2, 3])
def test_c01_D_vanishes_on_ricci_flow(request, n):
    rng = np.random.default_rng(100 + n)
    worst = 0.0
    for r0sq in (1.0, 2.5):
        flow = sphere(n, f"{r0sq}-{2 * (n - 1)}*t", (0.0, 0.9 * r0sq / (2 * (n - 1))))
        a, b = flow.interval
        for t in rng.uniform(a, b, 50):
            x = rng.normal(size=n)
            worst = max(worst, abs(minimize_D(snapshot(flow, t, x)).min_value))
    measured(request, f"n={n}: max |inf D| = {worst:.2e} over 100 samples")
    assert worst <= 1e-10


# ---------------------------------------------------------------------------
# 2


def _D_verdict(n, delta, samples=21):
    flow = sphere(n, f"1-{2 * (n - 1)}*t+({delta!r})*t^2", (0.0, 0.2))
    return all(minimize_D(snapshot(flow, t)).min_value >= -1e-10 for t in np.linspace(0.0, 0.2, samples))


@pytest.mark.criterion(2, "sphere classification flips at delta = 0")
@pytest.mark.parametrize("n", [2, 3])
def test_c02_sphere_boundary(request, n):
    assert _D_verdict(n, 0.0)
    for far in (1.0, -1.0):
        assert not _D_verdict(n, far)
        lo, hi = 0.0, far  # verdict(lo) passes, verdict(hi) fails
        while abs(hi - lo) > 1e-8:
            mid = 0.5 * (lo + hi)
            if _D_verdict(n, mid):
                lo = mid
            else:
                hi = mid
        measured(request, f"n={n}: boundary bracket [{min(lo, hi):.1e}, {max(lo, hi):.1e}]")
        assert abs(lo) <= 1e-8 and abs(hi) <= 1e-8


# ---------------------------------------------------------------------------
# 3


@pytest.mark.criterion(3, "F-trace derivative matches the sphere closed form")
@pytest.mark.parametrize(
    "n,r2,interval,T",
    [(2, "1-2*t", (0.0, 0.3), 0.5), (3, "1-4*t", (0.0, 0.15), 0.25), (2, "1+t^2", (0.0, 0.8), 1.0), (3, "1+0.5*t-0.3*t^2", (0.0, 0.8), 1.0)],
)
def test_c03_sphere_F_rate(request, n, r2, interval, T):
    # windows keep r^2 >= 0.4: closer to extinction the O(dt^2) truncation of
    # a central difference at dt = 1e-4 alone exceeds 1e-6 relative
    flow = sphere(n, r2, interval, T)
    grid = SpaceTimeGrid(flow, 1, 1e-4)
    tau1, tau2 = flow.tau(interval[1]), flow.tau(interval[0])
    trace = monotonicity_trace(DiscreteMeasure.uniform(grid, interval[1]), flow, tau1, tau2, "F")
    d = trace.derivative()
    taus = np.asarray(trace.times)
    idx = np.linspace(1, len(taus) - 2, 50).astype(int)
    pred = np.array([-sphere_F_rate(flow, flow.t_of_tau(taus[i])) for i in idx])
    rel = np.max(np.abs(d[idx] - pred) / np.abs(pred))
    measured(request, f"{r2}: max relative error {rel:.2e}")
    assert rel <= 1e-6


# ---------------------------------------------------------------------------
# 4


def _random_density(rng):
    c = rng.uniform(-1, 1, 4)
    return lambda th: np.exp(0.6 * (c[0] * np.sin(th) + c[1] * np.cos(th) + 0.5 * c[2] * np.sin(2 * th) + 0.5 * c[3] * np.cos(2 * th)))


@pytest.mark.criterion(4, "F and W monotone under D >= 0; F increases on the violating sphere")
@pytest.mark.parametrize("functional", ["F", "W"])
def test_c04_monotone_on_growing_circle(request, functional):
    flow = growing_circle()
    rng = np.random.default_rng(7)
    worst = []
    for _ in range(5):
        trace, tol = calibrated_trace(_random_density(rng), flow, 0.5, 1.5, functional, n_x=128)
        worst.append((trace.max_upward_violation(), tol))
        assert trace.max_upward_violation() <= tol
    measured(request, f"{functional}: (max increase, tol) = " + ", ".join(f"({u:.1e}, {t:.1e})" for u, t in worst))


@pytest.mark.criterion(4, "F and W monotone under D >= 0; F increases on the violating sphere")
def test_c04_F_increases_on_expanding_sphere(request):
    flow = expanding_sphere()
    grid = SpaceTimeGrid(flow, 1, 1e-3)
    a, b = flow.forward_interval
    trace = monotonicity_trace(DiscreteMeasure.uniform(grid, b), flow, flow.tau(b), flow.tau(a), "F")
    taus = np.asarray(trace.times)
    steps = np.diff(trace.values)
    mids = 0.5 * (taus[1:] + taus[:-1])
    predicted = np.array([-sphere_F_rate(flow, flow.t_of_tau(m)) for m in mids])
    keep = np.abs(predicted) > 1e-9
    assert np.all(predicted[keep] > 0)
    assert np.all(np.sign(steps[keep]) == np.sign(predicted[keep]))
    measured(request, f"expanding sphere: smallest F step {steps[keep].min():.2e} over {keep.sum()} samples")


# ---------------------------------------------------------------------------
# 5

_BOCHNER_FLOWS = {
    "L0": FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.5*log(1+t)+0.1*sin(theta)"}, T=1.5),
    "Lminus": FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.5*log(1+t)+0.1*sin(theta)"}, T=1.5),
    "weighted_L0": FlowSpec("weighted_circle", 1, (0.0, 1.0), {"u": "0.1*cos(theta)*(1+t)", "U": "0.2*sin(theta)+0.1*t"}, T=1.5),
}


def _bochner_levels(flow, family, coeffs, levels=5, t_base=0.1, t_eval=0.3):
    """Residual fields at a common time slice for (h, dt) halved together."""
    out = []
    for j in range(levels):
        dt = 0.05 / 2**j
        grid = SpaceTimeGrid(flow, 16 * 2**j, dt)
        th = grid.theta
        c = coeffs
        v0 = c[0] * np.sin(th) + c[1] * np.cos(th) + c[2] * np.sin(2 * th) + c[3] * np.cos(3 * th) + c[4]
        v = heat_propagate(ScalarField(grid, t_base, v0, "heat_slice"), flow, t_base, t_eval - dt)
        out.append(bochner_residual(flow, v, t_eval - dt, family, {}).values)
    return out


@pytest.mark.criterion(5, "Bochner identity residuals converge to zero")
@pytest.mark.parametrize("family", ["L0", "Lminus", "weighted_L0"])
def test_c05_bochner_residuals(request, family):
    flow = _BOCHNER_FLOWS[family]
    rng = np.random.default_rng(11)
    for trial in range(3):
        fields = _bochner_levels(flow, family, rng.normal(size=5))
        mx = [float(np.max(np.abs(f))) for f in fields]
        ratios = [mx[i] / mx[i + 1] for i in range(len(mx) - 1)]
        # Richardson on common nodes: remove the h^2 term, then the h^4 term
        e1 = [(4 * fields[i + 1][::2] - fields[i]) / 3 for i in range(len(fields) - 1)]
        e2 = [(16 * e1[i + 1][::2] - e1[i]) / 15 for i in range(len(e1) - 1)]
        extrapolated = float(np.max(np.abs(e2[-1])))
        measured(request, f"{family} data {trial}: ratios {', '.join(f'{r:.2f}' for r in ratios)}; extrapolated {extrapolated:.1e}")
        assert all(2.0 <= r <= 4.5 for r in ratios[1:])
        assert extrapolated <= 1e-6


# ---------------------------------------------------------------------------
# 6


def _ge_window(flow, kind):
    a, b = flow.forward_interval
    if kind == "L0":
        return a + 0.1 * (b - a), a + 0.6 * (b - a)
    lo, hi = flow.tau(b), flow.tau(a)
    return lo + 0.1 * (hi - lo), hi - 0.05 * (hi - lo)


@pytest.mark.criterion(6, "gradient estimates with v = 0")
@pytest.mark.parametrize("name", sorted(SATISFYING))
@pytest.mark.parametrize("kind", ["L0", "Lminus"])
def test_c06_gradient_estimate_zero_field(request, name, kind):
    flow = SATISFYING[name]()
    s, t = _ge_window(flow, kind)
    rep = check_gradient_estimate(flow, kind, s=s, t=t)
    measured(request, f"{name} {kind}: margin {rep.worst_margin:.2e}, tol {rep.tolerance:.1e}")
    assert rep.verdict == "pass"


@pytest.mark.criterion(6, "gradient estimates with v = 0")
def test_c06_Lminus_saturated_on_ricci_sphere(request):
    flow = ricci_sphere()
    for s, t in [(0.1, 0.3), (0.15, 0.45), (0.2, 0.5)]:
        rep = check_gradient_estimate(flow, "Lminus", s=s, t=t, calibrate_tol=False)
        S_tau = snapshot(flow, flow.t_of_tau(t)).S
        rel = abs(rep.worst_margin) / (t**2 * abs(S_tau))
        measured(request, f"sigma={s}, tau={t}: relative slack {rel:.1e}")
        assert rel <= 1e-6


# ---------------------------------------------------------------------------
# 7

_PAIRS = [
    (("delta", 0.5), ("delta", 3.0)),
    ({"density": "1+0.5*sin(theta)"}, {"density": "1+0.8*cos(2*theta)"}),
    ("uniform", ("delta", 1.0)),
    (("delta", 0.0), {"density": "exp(cos(theta))"}),
    ({"density": "1+0.9*sin(3*theta)"}, "uniform"),
]
_WC_RES = Resolution(n_x=64, K=64)


@pytest.mark.criterion(7, "Wasserstein contraction on D >= 0 circles")
@pytest.mark.parametrize("name", ["static_flat_circle", "growing_circle"])
@pytest.mark.parametrize("form", ["L0", "Lminus"])
def test_c07_contraction(request, name, form):
    flow = SEEDED[name]()
    a, b = flow.forward_interval
    lo, hi = flow.tau(b), flow.tau(a)
    margins = []
    for mu, nu in _PAIRS:
        if form == "L0":
            rep = check_wasserstein_contraction(flow, "L0", mu, nu, s=a, t=a + 0.5 * (b - a), h=0.25 * (b - a), res=_WC_RES)
        else:
            s, t = lo + 0.1 * (hi - lo), lo + 0.4 * (hi - lo)
            rep = check_wasserstein_contraction(flow, "Lminus", mu, nu, s=s, t=t, alpha=min(1.5, 1 + 0.9 * (hi / t - 1)), res=_WC_RES)
        margins.append(rep.worst_margin)
        assert rep.verdict == "pass", rep.to_dict()
    measured(request, f"{name} {form}: smallest margin {min(margins):.2e}")


@pytest.mark.criterion(7, "Wasserstein contraction on D >= 0 circles")
def test_c07_kuwada_static(request):
    flow = static_flat_circle()
    slacks = []
    for mu, nu in _PAIRS:
        rep = check_wasserstein_contraction(flow, "kuwada", mu, nu, s=0.1, t=0.4, res=_WC_RES)
        assert rep.verdict == "pass"
        assert rep.details["additive_term"] == pytest.approx(2 * (math.sqrt(0.4) - math.sqrt(0.1)) ** 2)
        slacks.append(rep.details["measured_slack"])
    measured(request, "kuwada slack: " + ", ".join(f"{x:.3f}" for x in slacks))


# ---------------------------------------------------------------------------
# 8


@pytest.mark.criterion(8, "dimensional contraction on the Ricci sphere and its sharpness")
def test_c08_dimensional_contraction(request):
    flow = ricci_sphere()
    n = flow.n
    windows = [(0.1, 0.3), (0.2, 0.4), (0.15, 0.45), (0.12, 0.25)]
    strict = {n / 2: [], n / 4: []}
    for alpha in (1.1, 1.5):
        for s, t in windows:
            if alpha * t > flow.tau(flow.forward_interval[0]):
                continue
            rep = check_wasserstein_contraction(flow, "L0N", s=s, t=t, alpha=alpha, N=n)
            assert rep.verdict == "pass", (alpha, s, t, rep.worst_margin)
            for N in strict:
                low = check_wasserstein_contraction(flow, "L0N", s=s, t=t, alpha=alpha, N=N)
                assert low.verdict in ("fail", "indeterminate", "pass")
                strict[N].append(low.verdict == "fail")
    measured(request, f"N=n passes; strict failures: N=n/2 {sum(strict[n / 2])}, N=n/4 {sum(strict[n / 4])} configurations")
    assert any(strict[n / 4])


# ---------------------------------------------------------------------------
# 9


@pytest.mark.criterion(9, "Hamilton-Jacobi machinery")
@pytest.mark.parametrize("kind,s,rs", [("L0", 0.2, (0.3, 0.5)), ("Lminus", 1.2, (1.3, 1.5))])
def test_c09_hopf_lax_residual_first_order(request, kind, s, rs):
    flow = static_flat_circle()
    family = CostFamily(kind)
    rng = np.random.default_rng(3)
    sizes = np.array([32, 64, 128, 256])
    hs = 2 * np.pi / sizes
    for _ in range(3):
        c = rng.uniform(-1, 1, 3)
        out = []
        for nx in sizes:
            grid = SpaceTimeGrid(flow, nx)
            th = grid.theta
            phi = ScalarField(grid, family.to_forward(flow, s), 0.5 * c[0] * np.sin(th) + 0.5 * c[1] * np.cos(th) + 0.2 * c[2] * np.sin(2 * th), "potential")
            r_vals = np.linspace(rs[0], rs[1], 5)
            traj = [hopf_lax(phi, flow, family, s, r) for r in r_vals]
            out.append(hj_residual(traj, r_vals, flow, family, DiscreteMeasure.uniform(grid, family.to_forward(flow, r_vals[0]))))
        out = np.array(out)
        order = np.polyfit(np.log(hs), np.log(out), 1)[0]
        measured(request, f"{kind}: residuals {', '.join(f'{x:.1e}' for x in out)}; fitted order {order:.2f}")
        # grid minimization makes single levels noisy; judge the fitted order
        # and the end-to-end reduction over an 8x refinement
        assert order >= 0.9
        assert out[-1] <= 2 * out[0] * hs[-1] / hs[0]


@pytest.mark.criterion(9, "Hamilton-Jacobi machinery")
@pytest.mark.parametrize("name", sorted(SATISFYING))
@pytest.mark.parametrize("kind", ["L0", "Lminus"])
def test_c09_hj_preservation(request, name, kind):
    flow = SATISFYING[name]()
    a, b = flow.forward_interval
    if kind == "L0":
        rep = check_hj_preservation(flow, "L0", t1=a, t2=a + 0.3 * (b - a), h=0.3 * (b - a))
    else:
        lo, hi = flow.tau(b), flow.tau(a)
        lo = lo + 0.05 * (hi - lo)
        rep = check_hj_preservation(flow, "Lminus", t1=lo, t2=lo + 0.5 * (hi / 1.5 - lo), alpha=1.5)
    measured(request, f"{name} {kind}: margin {rep.worst_margin:.2e}, tol {rep.tolerance:.1e}")
    assert rep.verdict == "pass"


# ---------------------------------------------------------------------------
# 10


@pytest.mark.criterion(10, "EVI margins bound the contraction rate")
@pytest.mark.parametrize("name", ["static_flat_circle", "growing_circle", "shrinking_circle"])
def test_c10_evi_wc_consistency(request, name):
    flow = SEEDED[name]()
    rep = evi_wc_consistency(
        flow, {"density": "1+0.5*sin(theta)"}, {"density": "1+0.5*cos(theta+1)"}, s=0.1, t=0.3, res=Resolution(n_x=48)
    )
    d = rep.details
    measured(request, f"{name}: EVI sum {d['evi_margin_sum']:.4f}, WC rate {d['wc_rate']:.4f}, slack {rep.worst_margin:.2e}")
    assert rep.verdict == "pass"


# ---------------------------------------------------------------------------
# 11

_ST_FLOWS = [
    FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.3*sin(theta)*(1+t)+0.2*t*cos(2*theta)"}, T=2.0),
    FlowSpec("round_sphere", 3, (0.0, 0.5), {"r2": "1+t-t^2"}, T=1.0),
    FlowSpec("flat_torus", 2, (0.0, 1.0), {"A1": "1+t", "A2": "exp(-t)"}, T=2.0),
]


@pytest.mark.criterion(11, "space-time Ricci form against D")
def test_c11_spacetime_identity(request):
    rng = np.random.default_rng(5)
    flows = [f() for f in SEEDED.values()] + _ST_FLOWS
    worst, count = 0.0, 0
    per_flow = 10_000 // len(flows) + 1
    for flow in flows:
        a, b = flow.forward_interval
        for _ in range(per_flow // 25 + 1):
            snap = snapshot(flow, rng.uniform(a, b), rng.uniform(0, 2 * np.pi))
            for _ in range(25):
                X = rng.normal(size=flow.n) * rng.uniform(0.1, 3)
                lam = rng.choice([-1, 1]) * rng.uniform(0.05, 3)
                lhs = ricci_tilde(snap, SpaceTimeVector(X, lam))
                rhs = 0.5 * lam**2 * evaluate_D(snap, X / lam)
                worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
                count += 1
    measured(request, f"{count} samples: max relative difference {worst:.1e}")
    assert count >= 10_000
    assert worst <= 1e-12


@pytest.mark.criterion(11, "space-time Ricci form against D")
@pytest.mark.parametrize("name", sorted(SEEDED))
def test_c11_scan_matches_minimize_D(request, name):
    flow = SEEDED[name]()
    rep = spacetime_positivity_scan(flow)
    assert rep.details["agreement"]
    expected = "pass" if name in SATISFYING else "fail"
    assert rep.verdict == expected
    assert all(p["D_ok"] for p in rep.details["points"]) == (name in SATISFYING)


# ---------------------------------------------------------------------------
# 12


@pytest.mark.criterion(12, "duality, mass conservation and transport optimality")
def test_c12_duality_and_mass(request):
    rng = np.random.default_rng(12)
    flows = [static_flat_circle(), growing_circle(), SEEDED["shrinking_circle"](), _ST_FLOWS[0]]
    worst_dual, worst_mass = 0.0, 0.0
    for k in range(100):
        flow = flows[k % len(flows)]
        grid = SpaceTimeGrid(flow, int(rng.choice([16, 32, 48])), dt=float(rng.uniform(0.01, 0.05)))
        a, b = flow.forward_interval
        s, t = np.sort(rng.uniform(a, b, 2))
        v = ScalarField(grid, s, rng.normal(size=grid.n_x), "heat_slice")
        mu = DiscreteMeasure(grid, t, rng.dirichlet(np.ones(grid.n_x)))
        worst_dual = max(worst_dual, duality_residual(v, mu, flow, s, t))
        raw = propagator_matrix(grid, s, t).T @ mu.p  # before any renormalization
        worst_mass = max(worst_mass, abs(raw.sum() - 1.0))
        assert abs(adjoint_heat_propagate(mu, flow, t, s).p.sum() - 1.0) <= 1e-12
    measured(request, f"duality residual {worst_dual:.1e}; mass drift {worst_mass:.1e}")
    assert worst_dual <= 1e-8
    assert worst_mass <= 1e-10


def _dense_dual_lp(a, b, C):
    """Dual transport LP in dense form, solved by interior point with crossover."""
    n, m = C.shape
    A = np.zeros((n * m, n + m))
    for i in range(n):
        for j in range(m):
            A[i * m + j, i] = 1.0
            A[i * m + j, n + j] = 1.0
    res = linprog(-np.concatenate([a, b]), A_ub=A, b_ub=C.ravel(), bounds=(None, None), method="highs-ipm")
    assert res.status == 0
    return -res.fun


def _permutation_value(C):
    n = C.shape[0]
    idx = np.arange(n)
    return min(C[idx, list(p)].sum() for p in itertools.permutations(range(n))) / n


@pytest.mark.criterion(12, "duality, mass conservation and transport optimality")
def test_c12_kantorovich(request):
    rng = np.random.default_rng(13)
    worst_gap, worst_agree, checked = 0.0, 0.0, 0
    for k in range(50):
        n, m = (int(x) for x in rng.integers(2, 25, 2))
        uniform = k % 5 == 0
        if uniform:
            m = n
            a = b = np.full(n, 1.0 / n)
        else:
            a = rng.dirichlet(np.ones(n))
            b = rng.dirichlet(np.ones(m))
            a[rng.random(n) < 0.2] = 0.0
            a /= a.sum()
        C = rng.uniform(0, 3, (n, m)) ** 2
        sol = kantorovich(a, b, C)
        scale = max(1.0, float(np.max(np.abs(C))))
        worst_gap = max(worst_gap, sol.gap / scale)
        assert sol.gap <= 1e-8 * scale
        assert np.all(sol.phi[:, None] + sol.psi[None, :] <= C + 1e-9 * scale)
        if max(n, m) <= 16:
            refs = [_dense_dual_lp(a, b, C)]
            if uniform:
                refs.append(float(C[linear_sum_assignment(C)].sum()) / n)
                if n <= 7:
                    refs.append(_permutation_value(C))
            for ref in refs:
                worst_agree = max(worst_agree, abs(sol.value - ref))
                assert abs(sol.value - ref) <= 1e-10 * scale
            checked += 1
    measured(request, f"max gap/scale {worst_gap:.1e}; {checked} small instances agree to {worst_agree:.1e}")


# ---------------------------------------------------------------------------
# 13

_EC_PAIRS = [
    ({"density": "1+0.6*sin(theta)"}, {"density": "1+0.6*cos(2*theta)"}),
    (("delta", 1.0), ("delta", 2.5)),
]


@pytest.mark.criterion(13, "entropy convexity")
@pytest.mark.parametrize("name", sorted(SATISFYING))
@pytest.mark.parametrize("kind", ["L0", "Lminus", "L0N"])
def test_c13_convexity_under_D(request, name, kind):
    flow = SATISFYING[name]()
    a, b = flow.forward_interval
    lo, hi = flow.tau(b), flow.tau(a)
    s, t = (a + 0.2 * (b - a), a + 0.7 * (b - a)) if kind == "L0" else (lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo))
    for mu0, mu1 in _EC_PAIRS:
        rep = check_entropy_convexity(flow, kind, mu0, mu1, s=s, t=t, res=Resolution(n_x=64))
        measured(request, f"{name} {kind}: defect {rep.worst_margin:.2e}, tol {rep.tolerance:.1e}")
        assert rep.verdict == "pass"


@pytest.mark.criterion(13, "entropy convexity")
def test_c13_Lminus_defect_negative_on_violating_sphere(request):
    flow = expanding_sphere()
    lo, hi = flow.tau(flow.forward_interval[1]), flow.tau(flow.forward_interval[0])
    worst = None
    for s in np.linspace(lo, hi - 0.1, 10):
        for t in np.linspace(s + 0.1, hi, 5):
            rep = check_entropy_convexity(flow, "Lminus", s=float(s), t=float(t))
            if worst is None or rep.worst_margin < worst.worst_margin:
                worst = rep
    p = worst.parameters
    measured(request, f"most negative defect {worst.worst_margin:.2e} (tol {worst.tolerance:.1e}) at s={p.get('s')}, t={p.get('t')}")
    assert worst.verdict == "fail"
    assert worst.worst_margin < -worst.tolerance
