"""One-sided verifiers for the equivalent characterizations of ``D >= 0``.

Every check evaluates a signed margin (negative means the inequality is
violated) and a tolerance measured by re-running the same computation at
half the spatial step and half the time step (and twice the path layers):

    tol = 2 |margin(h) - margin(h/2)| + 1e-9 * scale

Verdicts: ``pass`` iff ``margin >= -tol``; ``fail`` otherwise.  A check is
``indeterminate`` when its Dini-derivative surrogate is not monotone and the
margin lies inside the surrogate spread, or when the calibrated tolerance
exceeds a caller-supplied cap (the grid is too coarse to decide).

Time conventions follow the cost families: ``L0``/``Lplus``/weighted checks
take forward times; ``Lminus`` and the dimensional ``L0N`` checks take
backward times ``tau = T - t``.  Measures are passed as specs (see
:func:`dflow.functionals.measure_on_grid`) so that they can be rebuilt on the
refined grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .functionals import is_delta_spec, measure_on_grid
from .geometry import DomainError, GeometrySnapshot, evaluate_D
from .lagrangian import CostFamily, cost_table, hopf_lax, spatially_constant
from .pde import (
    DiscreteMeasure,
    ScalarField,
    SpaceTimeGrid,
    adjoint_heat_propagate,
    d_theta,
    grad_norm_sq,
    laplacian_matrix,
    propagator_matrix,
)
from .transport import entropy, kantorovich, wasserstein_geodesic

VERDICTS = ("pass", "fail", "indeterminate", "not_applicable")
FLOOR = 1e-9


class PreconditionError(ValueError):
    """Inputs violate a check's stated preconditions."""


# --------------------------------------------------------------------------
# reports


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, CostFamily):
        return value.label()
    if value is None or isinstance(value, (str, int, bool)):
        return value
    if callable(value):
        return getattr(value, "__name__", "callable")
    return str(value)


@dataclass
class CheckReport:
    check_id: str
    family: str
    verdict: str
    worst_margin: float
    tolerance: float
    parameters: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return _jsonable(
            {
                "check_id": self.check_id,
                "family": self.family,
                "verdict": self.verdict,
                "worst_margin": self.worst_margin,
                "tolerance": self.tolerance,
                "parameters": self.parameters,
                "witness": self.witness,
                "hashes": self.hashes,
                "notes": list(self.notes),
                "details": self.details,
            }
        )


def decide(margin, tol, unresolved=False, tol_cap=None):
    """Verdict from a margin and its tolerance (see module docstring)."""
    if tol_cap is not None and tol > tol_cap:
        return "indeterminate"
    if unresolved:
        return "indeterminate"
    return "pass" if margin >= -tol else "fail"


# --------------------------------------------------------------------------
# resolution and calibration


@dataclass(frozen=True)
class Resolution:
    """Discretization knobs: nodes, time step (default: the grid spacing), path layers."""

    n_x: int = 64
    dt: float | None = None
    K: int | None = None
    scheme: str = "expm"
    method: str = "auto"
    window: int | None = None  # DP band half-width
    level: int = 0  # number of refinements applied

    def refined(self):
        return replace(
            self,
            n_x=2 * self.n_x,
            dt=None if self.dt is None else self.dt / 2,
            K=None if self.K is None else 2 * self.K,
            level=self.level + 1,
        )

    def grid(self, flow):
        dt = self.dt
        if dt is None and flow.homogeneous:
            dt = 1e-3 / 2**self.level
        return SpaceTimeGrid(flow, self.n_x, dt, self.scheme)

    def as_dict(self):
        return {"n_x": self.n_x, "dt": self.dt, "K": self.K, "scheme": self.scheme, "method": self.method, "window": self.window}


def _pinned(*specs):
    return any(isinstance(s, (DiscreteMeasure, ScalarField)) for s in specs)


def calibrate(evaluate, res: Resolution, enabled=True):
    """Run ``evaluate(res)`` and, if enabled, ``evaluate(res.refined())``.

    ``evaluate`` returns a dict with at least ``margin`` (and optionally
    ``scale``).  Returns ``(base_result, tol, tol_parts)``.
    """
    base = evaluate(res)
    parts = {"floor": FLOOR * max(1.0, float(base.get("scale", 1.0)))}
    if enabled:
        fine = evaluate(res.refined())
        parts["refinement"] = 2.0 * abs(base["margin"] - fine["margin"])
        parts["refined_margin"] = fine["margin"]
    tol = parts["floor"] + parts.get("refinement", 0.0)
    return base, tol, parts


def _finish(check_id, family, base, tol, parts, params, res, flow, notes=(), unresolved=False, tol_cap=None, extra_tol=0.0):
    tol = tol + extra_tol
    margin = float(base["margin"])
    verdict = decide(margin, tol, unresolved=unresolved and abs(margin) <= base.get("spread", 0.0), tol_cap=tol_cap)
    notes = list(notes)
    if tol_cap is not None and tol > tol_cap:
        notes.append(f"calibrated tolerance {tol:.3e} exceeds the cap {tol_cap:.3e}; refine the grid")
    details = {k: v for k, v in base.items() if k not in ("margin", "witness", "hashes")}
    details["tolerance_parts"] = dict(parts, extra=extra_tol)
    details["resolution"] = res.as_dict()
    return CheckReport(
        check_id,
        family,
        verdict,
        margin,
        float(tol),
        dict(params, flow=flow.name or flow.family),
        base.get("witness", {}),
        base.get("hashes", {}),
        notes,
        details,
    )


def _family_label(family):
    return family.label() if isinstance(family, CostFamily) else str(family)


def _argmin_witness(grid, values, t):
    i = int(np.argmin(values))
    return {"node": i, "theta": float(grid.theta[i]), "t": float(t), "value": float(values[i])}


# --------------------------------------------------------------------------
# field helpers


def _field_values(spec, grid, t):
    """Node values of a test function given as None (zero), callable of theta, number or ScalarField."""
    if spec is None:
        return np.zeros(grid.n_x)
    if isinstance(spec, ScalarField):
        if spec.grid is not grid and spec.grid.n_x != grid.n_x:
            raise PreconditionError("pinned field does not live on this grid")
        return np.array(spec.values, float)
    if callable(spec):
        if grid.n_x == 1:
            return np.atleast_1d(np.asarray(spec(np.zeros(1)), float))[:1].copy()
        return np.asarray(spec(grid.theta), float) * np.ones(grid.n_x)
    if isinstance(spec, str):
        from .expr import parse

        e = parse(spec)
        return np.asarray(e(0.0, grid.theta), float) * np.ones(grid.n_x)
    return np.full(grid.n_x, float(spec))


def _gn(values, grid, t):
    return grad_norm_sq(ScalarField(grid, t, values), t)


def _lap(values, grid, t, weighted=False):
    return laplacian_matrix(grid, t, weighted) @ values


def _S(grid, t, weighted=False):
    return grid.S_U_values(t) if weighted else grid.S_values(t)


def _measure_at(spec, grid, t, eps=0.0, kind="L0", shift=0.0):
    """Measure at forward time ``t``; delta specs are smoothed by the conjugate
    heat flow started at the raw time that :func:`transport.smoothing_time`
    maps to ``t``."""
    flow = grid.flow
    if eps <= 0 or not is_delta_spec(spec) or grid.n_x == 1:
        return measure_on_grid(spec, grid, t)
    if kind == "L0":
        t_raw = t + eps
    elif kind == "Lminus":
        tau_raw = math.exp(-eps) * (flow.tau(t) + shift) - shift
        t_raw = flow.t_of_tau(tau_raw)
    else:
        t_raw = math.exp(eps) * (t + shift) - shift
    a, b = flow.forward_interval
    if t_raw > b + 1e-12:
        raise DomainError(f"smoothing window eps={eps} leaves the flow interval at t={t}")
    raw = measure_on_grid(spec, grid, t_raw)
    return adjoint_heat_propagate(raw, flow, t_raw, t)


def _conj(mu, flow, t_to):
    """``P^`` from the measure's time to an earlier forward time ``t_to``."""
    if abs(mu.t - t_to) < 1e-15:
        return mu
    return adjoint_heat_propagate(mu, flow, mu.t, t_to)


def _W(mu, nu, flow, family, r0, r1, res, grid):
    table = cost_table(flow, family, r0, r1, grid, K=res.K, method=res.method, window=res.window)
    return kantorovich(mu, nu, table).value


def _E(mu, family):
    return entropy(mu, weighted=family.weighted)


def _default_eps(grid):
    return 0.0 if grid.n_x == 1 else 2.0 * grid.h


# --------------------------------------------------------------------------
# gradient estimates

GE_KINDS = ("L0", "Lminus", "Lplus", "L0N", "weighted_L0")


def check_gradient_estimate(
    flow,
    kind,
    v=None,
    s=None,
    t=None,
    T0=0.0,
    N=None,
    lam=None,
    v_scales=(1.0,),
    res=Resolution(),
    calibrate_tol=True,
    tol_cap=None,
):
    """Pointwise gradient estimate between two times.

    ``kind`` is one of ``L0``, ``Lplus``, ``weighted_L0`` (forward times
    ``s < t``, ``v`` given at ``s``) or ``Lminus``, ``L0N`` (backward times
    ``s = sigma < t = tau``, ``v`` given at ``tau``).  ``v`` is a callable of
    theta, a number, an expression string or ``None`` (zero).  ``lam`` enables
    the parametrized ``Lminus`` estimate; ``N`` sets the dimension parameter
    (``L0N`` requires it, ``Lminus`` uses it in place of ``n``).
    The margin is ``min over nodes and scales of (RHS - LHS)``.
    """
    if kind not in GE_KINDS:
        raise ValueError(f"unknown gradient-estimate family {kind!r}")
    if s is None or t is None or not s < t:
        raise PreconditionError("need times s < t")
    if kind == "L0N" and N is None:
        raise PreconditionError("L0N needs a dimension parameter N")
    if kind == "weighted_L0" and not flow.weighted:
        raise PreconditionError("weighted_L0 needs a weighted flow")
    if lam is not None and kind != "Lminus":
        raise PreconditionError("the parameter lambda applies to the Lminus family only")
    backward = kind in ("Lminus", "L0N")
    if backward:
        sig, tau = s + T0, t + T0
        if kind == "Lminus" and sig <= 0:
            raise PreconditionError("shifted backward times must be positive")
        if lam is not None and not 0 < lam < tau / sig:
            raise PreconditionError("lambda must satisfy 0 < lambda < tau/sigma")
        t_from, t_to = flow.t_of_tau(t), flow.t_of_tau(s)
    else:
        if kind == "Lplus" and s + T0 <= 0:
            raise PreconditionError("shifted forward times must be positive")
        t_from, t_to = s, t
    flow.check_time([t_from, t_to])
    n_eff = float(N) if N is not None else float(flow.n)
    weighted = kind == "weighted_L0"

    def bracket(vals, grid, time, coeff, sq_coeff, lap_sign=-1.0):
        return _gn(vals, grid, time) + lap_sign * 2 * coeff * _lap(vals, grid, time, weighted) - sq_coeff * _S(grid, time, weighted)

    def evaluate(r):
        grid = r.grid(flow)
        P = propagator_matrix(grid, t_from, t_to)
        v0 = _field_values(v, grid, t_from)
        worst, wit, per_scale = math.inf, {}, {}
        scale = 1.0
        for c in v_scales:
            vv = c * v0
            w = P @ vv
            if kind in ("L0", "weighted_L0"):
                lhs = bracket(w, grid, t_to, 1.0, 1.0)
                rhs = P @ bracket(vv, grid, t_from, 1.0, 1.0)
            elif kind == "Lplus":
                a, b = t + T0, s + T0
                lhs = bracket(w, grid, t_to, a, a * a)
                rhs = P @ bracket(vv, grid, t_from, b, b * b) + 0.5 * n_eff * (a - b)
            elif kind == "Lminus":
                ls = (lam if lam is not None else 1.0) * sig
                lhs = bracket(w, grid, t_to, ls, ls * ls)
                extra = 0.5 * n_eff * (tau - ls) ** 2 / (tau - sig)
                rhs = P @ bracket(vv, grid, t_from, tau, tau * tau) + extra
            else:  # L0N, backward bracket with +2 Laplacian
                lhs = bracket(w, grid, t_to, 1.0, 1.0, lap_sign=1.0)
                rhs = P @ bracket(vv, grid, t_from, 1.0, 1.0, lap_sign=1.0) - _dimensional_integral(grid, vv, t_from, t_to, N)
            m = rhs - lhs
            scale = max(scale, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
            per_scale[repr(float(c))] = float(np.min(m))
            if float(np.min(m)) < worst:
                worst = float(np.min(m))
                wit = dict(_argmin_witness(grid, m, t_to), v_scale=float(c))
        return {"margin": worst, "witness": wit, "scale": scale, "per_scale_margin": per_scale, "hashes": {"grid": grid.hash()}}

    base, tol, parts = calibrate(evaluate, res, calibrate_tol and not _pinned(v))
    params = {"s": s, "t": t, "T0": T0, "N": N, "lambda": lam, "v_scales": list(v_scales)}
    return _finish("gradient_estimate", kind, base, tol, parts, params, res, flow, tol_cap=tol_cap)


def _dimensional_integral(grid, v_from, t_from, t_to, N):
    """``(2/N) int |P_{t_to,r}(S_r - Lap_r P_{r,t_from} v)|^2 dr`` by the trapezoid rule (forward r)."""
    nodes = grid.time_nodes(t_from, t_to)
    steps = [propagator_matrix(grid, a, b) for a, b in zip(nodes[:-1], nodes[1:])]
    # forward values u_r = P_{r, t_from} v
    u = [v_from]
    for B in steps:
        u.append(B @ u[-1])
    # backward accumulation of P_{t_to, r}
    n = grid.n_x
    acc = np.eye(n)
    vals = [None] * len(nodes)
    for k in range(len(nodes) - 1, -1, -1):
        r = nodes[k]
        w = grid.S_values(r) - _lap(u[k], grid, r)
        vals[k] = (acc @ w) ** 2
        if k > 0:
            acc = acc @ steps[k - 1]
    dr = np.diff(nodes)
    integral = np.zeros(n)
    for k in range(len(dr)):
        integral += 0.5 * dr[k] * (vals[k] + vals[k + 1])
    return (2.0 / N) * integral


# --------------------------------------------------------------------------
# Wasserstein contraction

WC_FORMS = ("L0", "Lminus", "Lminus_four_times", "Lplus", "L0N", "kuwada")


def four_time_shift(s1, s2, t1, t2):
    """Shift making ``(s2+T0)/(s1+T0) = (t2+T0)/(t1+T0)``; raises on incompatible times."""
    checks = [(s1 < s2, "sigma1 < sigma2"), (t1 < t2, "tau1 < tau2"), (s1 < t1, "sigma1 < tau1"), (s2 < t2, "sigma2 < tau2")]
    for ok, name in checks:
        if not ok:
            raise PreconditionError(f"four-time configuration violates {name}")
    if not (t2 - t1) > (s2 - s1):
        raise PreconditionError("four-time configuration violates tau2 - tau1 > sigma2 - sigma1")
    T0 = (s2 * t1 - s1 * t2) / ((t2 - t1) - (s2 - s1))
    alpha = (s2 + T0) / (s1 + T0)
    return T0, alpha


def check_wasserstein_contraction(
    flow,
    form,
    mu="uniform",
    nu="uniform",
    s=None,
    t=None,
    h=None,
    alpha=None,
    a=None,
    S=None,
    T=None,
    times4=None,
    T0=0.0,
    N=None,
    weighted=False,
    res=Resolution(),
    calibrate_tol=True,
    tol_cap=None,
):
    """Contraction of the conjugate heat flow in a transport cost.

    ``form``:

    * ``L0`` (forward ``s < t``, ``h > 0``; ``mu`` at ``s+h``, ``nu`` at ``t+h``);
    * ``Lminus`` (backward ``s = sigma < t = tau``, factor ``alpha > 1``, optional shift ``T0``);
    * ``Lminus_four_times`` (``times4 = (sigma1, sigma2, tau1, tau2)``; the shift is derived);
    * ``Lplus`` (forward ``s < t``, factor ``a > 1``, optional shift; ``mu`` at ``a s``, ``nu`` at ``a t``);
    * ``L0N`` (backward ``sigma < tau``, ``S < T`` with ``sigma < S``, ``tau < T``, dimension ``N``;
      ``alpha`` may replace ``S, T`` by ``(alpha sigma, alpha tau)``);
    * ``kuwada`` (static flows; squared-distance cost, heat flow for times ``s < t`` from the interval start).

    Margin = RHS - LHS.
    """
    if form not in WC_FORMS:
        raise ValueError(f"unknown contraction form {form!r}")
    n = flow.n
    notes = []
    if form == "L0":
        if h is None or not h > 0 or not s < t:
            raise PreconditionError("L0 contraction needs s < t and h > 0")
        fam = CostFamily("L0", weighted=weighted)
        lhs_w, rhs_w = (s, t), (s + h, t + h)
        mu_t, nu_t = s + h, t + h
        mu_to, nu_to = s, t
        additive = 0.0
    elif form in ("Lminus", "Lminus_four_times"):
        if form == "Lminus_four_times":
            s1, s2, t1, t2 = times4
            T0, alpha = four_time_shift(s1, s2, t1, t2)
            s, t = s1, t1
            lhs_w = (s2, t2)
            additive = 0.5 * n * (math.sqrt(t2 - t1) - math.sqrt(s2 - s1)) ** 2
        else:
            if alpha is None or not alpha > 1 or not s < t:
                raise PreconditionError("Lminus contraction needs sigma < tau and alpha > 1")
            lhs_w = (alpha * (s + T0) - T0, alpha * (t + T0) - T0)
            additive = (math.sqrt(t + T0) - math.sqrt(s + T0)) ** 2 * 0.5 * n * (alpha - 1)
        if s + T0 <= 0:
            raise PreconditionError("shifted backward times must be positive")
        fam = CostFamily("Lminus", shift=T0, normalized=True, weighted=weighted)
        rhs_w = (s, t)
        mu_t, nu_t = flow.t_of_tau(s), flow.t_of_tau(t)
        mu_to, nu_to = flow.t_of_tau(lhs_w[0]), flow.t_of_tau(lhs_w[1])
    elif form == "Lplus":
        if a is None or not a > 1 or not s < t or s + T0 <= 0:
            raise PreconditionError("Lplus contraction needs 0 < s + T0 < t + T0 and a > 1")
        fam = CostFamily("Lplus", shift=T0, normalized=True, weighted=weighted)
        sa, ta = a * (s + T0) - T0, a * (t + T0) - T0
        lhs_w, rhs_w = (s, t), (sa, ta)
        mu_t, nu_t = sa, ta
        mu_to, nu_to = s, t
        additive = 0.5 * n * (a - 1) * (math.sqrt(t + T0) - math.sqrt(s + T0)) ** 2
    elif form == "L0N":
        if N is None:
            raise PreconditionError("L0N contraction needs N")
        if alpha is not None:
            S, T = alpha * s, alpha * t
        if not (s < t and S < T and s < S and t < T):
            raise PreconditionError("L0N contraction needs sigma < tau, S < T, sigma < S, tau < T")
        fam = CostFamily("L0", normalized=True, backward=True, weighted=weighted)
        lhs_w, rhs_w = (S, T), (s, t)
        mu_t, nu_t = flow.t_of_tau(s), flow.t_of_tau(t)
        mu_to, nu_to = flow.t_of_tau(S), flow.t_of_tau(T)
        additive = 0.25 * N * math.log((T - t) / (S - s)) * ((T - S) - (t - s))
    else:
        return _check_kuwada(flow, mu, nu, s, t, res, calibrate_tol, tol_cap)

    flow.check_time([mu_t, nu_t, mu_to, nu_to])

    def evaluate(r):
        grid = r.grid(flow)
        m0 = measure_on_grid(mu, grid, mu_t)
        n0 = measure_on_grid(nu, grid, nu_t)
        rhs = _W(m0, n0, flow, fam, rhs_w[0], rhs_w[1], r, grid) + additive
        lhs = _W(_conj(m0, flow, mu_to), _conj(n0, flow, nu_to), flow, fam, lhs_w[0], lhs_w[1], r, grid)
        return {
            "margin": rhs - lhs,
            "lhs": lhs,
            "rhs": rhs,
            "additive_term": additive,
            "scale": max(1.0, abs(lhs), abs(rhs)),
            "hashes": {"grid": grid.hash()},
        }

    base, tol, parts = calibrate(evaluate, res, calibrate_tol and not _pinned(mu, nu))
    params = {"form": form, "s": s, "t": t, "h": h, "alpha": alpha, "a": a, "S": S, "T": T, "times4": times4, "T0": T0, "N": N, "family": fam}
    return _finish("wasserstein_contraction", form, base, tol, parts, params, res, flow, notes, tol_cap=tol_cap)


def _is_static(flow, samples=5):
    if flow.family == "static_manifold":
        return True
    if flow.homogeneous:
        return False
    a, b = flow.forward_interval
    th = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    ut = flow.param("u").d("t")
    return all(np.max(np.abs(ut(tt, th))) == 0.0 for tt in np.linspace(a, b, samples))


def _check_kuwada(flow, mu, nu, s, t, res, calibrate_tol, tol_cap):
    if not _is_static(flow):
        raise PreconditionError("the squared-distance contraction form needs a static flow")
    if s is None or t is None or not 0 <= s < t:
        raise PreconditionError("need heat-flow durations 0 <= s < t")
    lo, hi = flow.forward_interval
    if t > hi - lo:
        raise PreconditionError("heat-flow duration exceeds the flow interval")
    n = flow.n
    additive = 2 * n * (math.sqrt(t) - math.sqrt(s)) ** 2
    # on a static flow P^ from hi back to hi - s is the heat flow run for time s
    fam = CostFamily("L0")

    def evaluate(r):
        grid = r.grid(flow)
        d2 = 2.0 * (hi - lo) * cost_table(flow, fam, lo, hi, grid, K=r.K, method=r.method, window=r.window).values
        m0 = measure_on_grid(mu, grid, hi)
        n0 = measure_on_grid(nu, grid, hi)
        w0 = kantorovich(m0, n0, d2).value
        w1 = kantorovich(_conj(m0, flow, hi - s), _conj(n0, flow, hi - t), d2).value
        return {
            "margin": w0 + additive - w1,
            "lhs": w1,
            "rhs": w0 + additive,
            "additive_term": additive,
            "measured_slack": w0 + additive - w1,
            "scale": max(1.0, w0, w1),
            "hashes": {"grid": grid.hash()},
        }

    base, tol, parts = calibrate(evaluate, res, calibrate_tol and not _pinned(mu, nu))
    params = {"form": "kuwada", "s": s, "t": t}
    return _finish("wasserstein_contraction", "kuwada", base, tol, parts, params, res, flow, tol_cap=tol_cap)


# --------------------------------------------------------------------------
# entropy convexity

EC_KINDS = ("L0", "Lminus", "Lplus", "L0N")


def _kind_family(kind, T0=0.0, weighted=False):
    if kind == "L0":
        return CostFamily("L0", weighted=weighted)
    if kind == "Lminus":
        return CostFamily("Lminus", shift=T0, weighted=weighted)
    if kind == "Lplus":
        return CostFamily("Lplus", shift=T0, weighted=weighted)
    if kind == "L0N":
        return CostFamily("L0", backward=True, weighted=weighted)
    raise ValueError(f"unknown family {kind!r}")


def _smoothing_kind(kind):
    return "Lminus" if kind in ("Lminus", "L0N") else kind


def check_entropy_convexity(
    flow,
    kind,
    mu0="uniform",
    mu1="uniform",
    s=None,
    t=None,
    r_bar=None,
    N=None,
    T0=0.0,
    weighted=False,
    eps=None,
    quad_points=9,
    res=Resolution(),
    calibrate_tol=True,
    tol_cap=None,
):
    """Three-point convexity defect along the discrete transport geodesic.

    Family times ``s < r_bar < t`` (backward for ``Lminus``/``L0N``).  Delta
    endpoints are smoothed by the conjugate heat flow over ``eps`` (default
    twice the grid spacing).  ``L0N`` uses ``N`` (default: the dimension) in
    the logarithmic terms and a trapezoid rule over ``quad_points`` geodesic
    samples per sub-interval for the integral terms.
    """
    if kind not in EC_KINDS:
        raise ValueError(f"unknown convexity family {kind!r}")
    if r_bar is None:
        r_bar = 0.5 * (s + t)
    if not s < r_bar < t:
        raise PreconditionError("need s < r_bar < t")
    fam = _kind_family(kind, T0, weighted)
    n_eff = float(N) if N is not None else float(flow.n)
    if kind in ("Lminus", "Lplus", "L0N") and s + T0 <= 0:
        raise PreconditionError("shifted times must be positive")
    flow.check_time([fam.to_forward(flow, s), fam.to_forward(flow, t)])

    def evaluate(r):
        grid = r.grid(flow)
        e = _default_eps(grid) if eps is None else eps
        skind = _smoothing_kind(kind)
        m_s = _measure_at(mu0, grid, fam.to_forward(flow, s), e, skind, T0)
        m_t = _measure_at(mu1, grid, fam.to_forward(flow, t), e, skind, T0)
        table = cost_table(flow, fam, s, t, grid, K=r.K, method=r.method, window=r.window)
        if kind == "L0N":
            # samples uniform in ln(eta) so the integral terms are trapezoids in ln(eta)
            left = np.exp(np.linspace(math.log(s), math.log(r_bar), quad_points))
            right = np.exp(np.linspace(math.log(r_bar), math.log(t), quad_points))[1:]
            rs = np.concatenate([left, right])
        else:
            rs = np.array([s, r_bar, t])
        curve = wasserstein_geodesic(m_s, m_t, flow, fam, s, t, rs, table=table)
        k_bar = int(np.argmin(np.abs(rs - r_bar)))
        m_b = curve[k_bar]
        E_s, E_b, E_t = _E(m_s, fam), _E(m_b, fam), _E(m_t, fam)
        W_sb = _W(m_s, m_b, flow, fam, s, r_bar, r, grid)
        W_bt = _W(m_b, m_t, flow, fam, r_bar, t, r, grid)
        ss, bb, tt = s + T0, r_bar + T0, t + T0
        if kind == "L0":
            wa, wb = (t - r_bar) / (t - s), (r_bar - s) / (t - s)
            defect = wa * E_s + wb * E_t - E_b + wa * W_sb - wb * W_bt
        elif kind == "Lminus":
            x_s, x_b, x_t = ss**-0.5, bb**-0.5, tt**-0.5
            wa = (x_b - x_t) / (x_s - x_t)
            wb = 1.0 - wa
            g = lambda E, z: E + 0.5 * n_eff * math.log(z)  # noqa: E731
            defect = wa * g(E_s, ss) + wb * g(E_t, tt) - g(E_b, bb) - wa * ss**-0.5 * W_sb + wb * tt**-0.5 * W_bt
        elif kind == "Lplus":
            x_s, x_b, x_t = ss**-0.5, bb**-0.5, tt**-0.5
            wa = (x_b - x_t) / (x_s - x_t)
            wb = 1.0 - wa
            g = lambda E, z: E + 0.5 * n_eff * math.log(z)  # noqa: E731
            defect = wa * g(E_s, ss) + wb * g(E_t, tt) - g(E_b, bb) + wa * ss**-0.5 * W_sb - wb * tt**-0.5 * W_bt
        else:
            # convexity in ln(eta) of
            # phi(eta) = E_eta - E_s + W_{s,eta} + (n/8) ln^2(eta/s) - int_s^eta W_{s,e}/e de
            L = math.log(t / s)
            wa, wb = math.log(t / r_bar) / L, math.log(r_bar / s) / L
            ws = np.array([0.0] + [_W(m_s, curve[k], flow, fam, s, rs[k], r, grid) for k in range(1, len(rs))])
            x = np.log(rs)
            integral = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(x) * (ws[1:] + ws[:-1]))])
            Es = np.array([_E(m, fam) for m in curve])
            Es[0], Es[-1] = E_s, E_t
            phi = Es - E_s + ws + n_eff / 8.0 * (x - x[0]) ** 2 - integral
            defect = wa * phi[0] + wb * phi[-1] - phi[k_bar]
        scale = max(1.0, abs(E_s), abs(E_t), abs(E_b), abs(W_sb), abs(W_bt))
        return {
            "margin": float(defect),
            "entropies": [E_s, E_b, E_t],
            "W_left": W_sb,
            "W_right": W_bt,
            "weights": [wa, wb],
            "eps": e,
            "scale": scale,
            "witness": {"r_bar": r_bar},
            "hashes": {"grid": grid.hash(), "cost_table": table.value_hash()},
        }

    base, tol, parts = calibrate(evaluate, res, calibrate_tol and not _pinned(mu0, mu1))
    notes = []
    if base["margin"] < -tol and not flow.homogeneous:
        notes.append("selection-dependent: the defect is measured on one discrete geodesic")
    params = {"s": s, "t": t, "r_bar": r_bar, "N": N, "T0": T0, "family": fam}
    return _finish("entropy_convexity", kind, base, tol, parts, params, res, flow, notes, tol_cap=tol_cap)


# --------------------------------------------------------------------------
# EVI

EVI_KINDS = ("L0", "Lminus", "Lplus")


def _dini(values_at, probe, steps, side):
    """Difference quotients at the given steps; ``side`` is ``-1`` (left) or ``+1`` (right)."""
    f0 = values_at(probe)
    qs = []
    for d in steps:
        if side < 0:
            qs.append((f0 - values_at(probe - d)) / d)
        else:
            qs.append((values_at(probe + d) - f0) / d)
    return f0, np.array(qs)


def _monotone(qs):
    d = np.diff(qs)
    return bool(np.all(d >= -1e-14) or np.all(d <= 1e-14))


def _dini_value(qs, extreme):
    """Limit estimate of difference quotients taken at steps d, d/2, d/4.

    Monotone quotients are extrapolated linearly in the step
    (``2 q(d/4) - q(d/2)``); otherwise the extreme quotient is used.
    """
    if _monotone(qs):
        return float(2 * qs[-1] - qs[-2])
    return float(extreme(qs))


def evi_terms(flow, kind, mu, nu, s, t, form, probe, delta, res, T0=0.0, weighted=False, eps=None, grid=None):
    """LHS surrogate, RHS and quotient data for one EVI at one probe time (family times)."""
    if kind not in EVI_KINDS:
        raise ValueError(f"unknown EVI family {kind!r}")
    if form not in ("a", "b"):
        raise ValueError("form must be 'a' or 'b'")
    fam = _kind_family(kind, T0, weighted)
    grid = res.grid(flow) if grid is None else grid
    e = _default_eps(grid) if eps is None else eps
    n = flow.n
    steps = [delta, delta / 2, delta / 4]
    fw = lambda r: fam.to_forward(flow, r)  # noqa: E731
    skind = _smoothing_kind(kind)
    m_mu = None
    m_nu = None

    if kind == "L0":
        m_mu = _measure_at(mu, grid, fw(s), e, skind)
        m_nu = _measure_at(nu, grid, fw(t), e, skind)
        if form == "a":
            if not s < probe <= t:
                raise PreconditionError("EVI form a needs s < a <= t")
            val = lambda u: _W(m_mu, _conj(m_nu, flow, fw(u)), flow, fam, s, u, res, grid)  # noqa: E731
            F, qs = _dini(val, probe, steps, -1)
            lhs = -_dini_value(qs, np.min)
            rhs = (_E(m_mu, fam) - _E(_conj(m_nu, flow, fw(probe)), fam) + F) / (probe - s)
            weight = 1.0
        else:
            if not probe <= s:
                raise PreconditionError("EVI form b needs b <= s")
            val = lambda u: _W(_conj(m_mu, flow, fw(u)), m_nu, flow, fam, u, t, res, grid)  # noqa: E731
            F, qs = _dini(val, probe, steps, -1)
            lhs = -_dini_value(qs, np.min)
            rhs = (_E(m_nu, fam) - _E(_conj(m_mu, flow, fw(probe)), fam) - F) / (t - probe)
            weight = 1.0
    elif kind == "Lminus":
        # nu at sigma = s, mu at tau = t (backward times)
        m_nu = _measure_at(nu, grid, fw(s), e, skind, T0)
        m_mu = _measure_at(mu, grid, fw(t), e, skind, T0)
        ss, tt = s + T0, t + T0
        if form == "a":
            if not s <= probe < t:
                raise PreconditionError("EVI form a needs sigma <= eta < tau")
            val = lambda u: _W(_conj(m_nu, flow, fw(u)), m_mu, flow, fam, u, t, res, grid)  # noqa: E731
            F, qs = _dini(val, probe, steps, +1)
            ee = probe + T0
            lhs = ee * _dini_value(qs, np.max)
            den = ee**-0.5 - tt**-0.5
            rhs = (_E(m_mu, fam) - _E(_conj(m_nu, flow, fw(probe)), fam) + F / math.sqrt(tt)) / (2 * den)
            rhs += n * math.log(tt / ee) / (4 * den) - n * math.sqrt(ee) / 2
            weight = ee
        else:
            if not probe >= t:
                raise PreconditionError("EVI form b needs varsigma >= tau")
            val = lambda u: _W(m_nu, _conj(m_mu, flow, fw(u)), flow, fam, s, u, res, grid)  # noqa: E731
            F, qs = _dini(val, probe, steps, +1)
            pp = probe + T0
            lhs = pp * _dini_value(qs, np.max)
            den = ss**-0.5 - pp**-0.5
            rhs = (_E(m_nu, fam) - _E(_conj(m_mu, flow, fw(probe)), fam) - F / math.sqrt(ss)) / (2 * den)
            rhs += n * math.log(ss / pp) / (4 * den) + n * math.sqrt(pp) / 2
            weight = pp
    else:
        # Lplus, forward times: nu at s, mu at t
        m_nu = _measure_at(nu, grid, fw(s), e, skind, T0)
        m_mu = _measure_at(mu, grid, fw(t), e, skind, T0)
        ss, tt = s + T0, t + T0
        if form == "a":
            if not probe <= s:
                raise PreconditionError("EVI form a needs a <= s")
            val = lambda u: _W(_conj(m_nu, flow, fw(u)), m_mu, flow, fam, u, t, res, grid)  # noqa: E731
            F, qs = _dini(val, probe, steps, -1)
            aa = probe + T0
            lhs = -aa * _dini_value(qs, np.min)
            den = aa**-0.5 - tt**-0.5
            rhs = (_E(m_mu, fam) - _E(_conj(m_nu, flow, fw(probe)), fam) - F / math.sqrt(tt)) / (2 * den)
            rhs += n * math.log(tt / aa) / (4 * den) - n * math.sqrt(aa) / 2
            weight = aa
        else:
            if not s < probe <= t:
                raise PreconditionError("EVI form b needs s < b <= t")
            val = lambda u: _W(m_nu, _conj(m_mu, flow, fw(u)), flow, fam, s, u, res, grid)  # noqa: E731
            F, qs = _dini(val, probe, steps, -1)
            bb = probe + T0
            lhs = -bb * _dini_value(qs, np.min)
            den = ss**-0.5 - bb**-0.5
            rhs = (_E(m_nu, fam) - _E(_conj(m_mu, flow, fw(probe)), fam) + F / math.sqrt(ss)) / (2 * den)
            rhs += n * math.log(ss / bb) / (4 * den) + n * math.sqrt(bb) / 2
            weight = bb
    spread = weight * float(np.max(qs) - np.min(qs))
    dini_err = weight * float(abs(qs[-1] - qs[-2]))
    return {
        "margin": float(rhs - lhs),
        "lhs": float(lhs),
        "rhs": float(rhs),
        "quotients": qs.tolist(),
        "steps": steps,
        "monotone": _monotone(qs),
        "spread": spread,
        "dini_error": dini_err,
        "value_at_probe": float(F),
        "eps": e,
        "scale": max(1.0, abs(lhs), abs(rhs)),
        "hashes": {"grid": grid.hash()},
    }


def check_evi(
    flow,
    kind,
    mu="uniform",
    nu="uniform",
    s=None,
    t=None,
    form="a",
    probe=None,
    delta=None,
    T0=0.0,
    weighted=False,
    eps=None,
    res=Resolution(),
    calibrate_tol=True,
    tol_cap=None,
):
    """EVI at one probe time with a three-step Dini surrogate.

    The derivative is estimated from quotients at ``delta, delta/2, delta/4``:
    linear extrapolation to zero step when they are monotone, the extreme
    quotient on the side that makes the left-hand side largest otherwise.
    The tolerance adds the change between the two smallest-step quotients to
    the refinement calibration.  Non-monotone quotients with the margin inside their spread
    give ``indeterminate``.
    """
    if probe is None:
        probe = {"L0": {"a": t, "b": s}, "Lminus": {"a": s, "b": t}, "Lplus": {"a": s, "b": t}}[kind][form]
    if delta is None:
        delta = 0.05 * (t - s)

    def evaluate(r):
        return evi_terms(flow, kind, mu, nu, s, t, form, probe, delta, r, T0, weighted, eps)

    base, tol, parts = calibrate(evaluate, res, calibrate_tol and not _pinned(mu, nu))
    params = {"s": s, "t": t, "form": form, "probe": probe, "delta": delta, "T0": T0}
    return _finish(
        "evi",
        kind,
        base,
        tol,
        parts,
        params,
        res,
        flow,
        unresolved=not base["monotone"],
        tol_cap=tol_cap,
        extra_tol=base["dini_error"],
    )


def evi_wc_consistency(flow, mu="uniform", nu="uniform", s=None, t=None, delta=None, weighted=False, eps=None, res=Resolution()):
    """Summed L0 EVI margins (``a = t`` and ``b = s``) against the contraction rate.

    The two right-hand sides cancel, so the summed margins approximate the
    limit of ``(W_{s,t}(mu,nu) - W_{s-d,t-d}(P^mu, P^nu)) / d`` (extrapolated
    from ``d = delta/2, delta/4``).  The report passes when the two agree
    within twice the summed difference-quotient errors.
    """
    if delta is None:
        delta = 0.05 * (t - s)
    grid = res.grid(flow)
    fam = _kind_family("L0", weighted=weighted)
    ta = evi_terms(flow, "L0", mu, nu, s, t, "a", t, delta, res, weighted=weighted, eps=eps, grid=grid)
    tb = evi_terms(flow, "L0", mu, nu, s, t, "b", s, delta, res, weighted=weighted, eps=eps, grid=grid)
    e = ta["eps"]
    m_mu = _measure_at(mu, grid, s, e, "L0")
    m_nu = _measure_at(nu, grid, t, e, "L0")
    w0 = _W(m_mu, m_nu, flow, fam, s, t, res, grid)

    def rate_at(d):
        w1 = _W(_conj(m_mu, flow, s - d), _conj(m_nu, flow, t - d), flow, fam, s - d, t - d, res, grid)
        return (w0 - w1) / d

    r2, r4 = rate_at(delta / 2), rate_at(delta / 4)
    rate = 2 * r4 - r2
    rate_err = abs(r2 - r4)
    total = ta["margin"] + tb["margin"]
    surrogate_err = ta["dini_error"] + tb["dini_error"] + rate_err
    bound = 2.0 * surrogate_err + FLOOR * max(1.0, abs(rate))
    diff = abs(total - rate)
    margin = bound - diff
    base = {
        "margin": margin,
        "evi_margin_sum": total,
        "wc_rate": rate,
        "dini_errors": [ta["dini_error"], tb["dini_error"], rate_err],
        "spreads": [ta["spread"], tb["spread"]],
        "evi_a": ta,
        "evi_b": tb,
        "scale": 1.0,
        "hashes": {"grid": grid.hash()},
    }
    params = {"s": s, "t": t, "delta": delta}
    return _finish("evi_wc_consistency", "L0", base, 0.0, {"floor": 0.0}, params, res, flow)


# --------------------------------------------------------------------------
# Hamilton-Jacobi preservation


def _field_in_time(f, flow, grid, times, family, window=None, res=None):
    """Node values of a space-time field at the given family times.

    ``f`` is a callable ``f(r, theta)`` or ``("hopf_lax", phi, r0)`` with
    ``phi`` a callable of theta.
    """
    if isinstance(f, tuple) and f and f[0] == "hopf_lax":
        _, phi, r0 = f
        fam = family if window is None else replace(family, normalized=True, norm=window)
        phi0 = ScalarField(grid, fam.to_forward(flow, r0), _field_values(phi, grid, 0.0), "potential")
        out = []
        for r in times:
            if r <= r0 + 1e-15:
                out.append(phi0.values.copy())
            else:
                out.append(hopf_lax(phi0, flow, fam, r0, r, K=None if res is None else res.K, method="auto" if res is None else res.method).values)
        return out
    return [np.asarray(f(r, grid.theta), float) * np.ones(grid.n_x) for r in times]


def hj_subsolution(flow, family, r0, c, amplitude=0.5, window=None):
    """``f(r, theta) = a cos(theta) + A(r)`` solving the HJ inequality with equality at the worst point.

    ``A' = c w S_min / 2 - a^2 G / (2 c w)`` where ``w`` is the family weight,
    ``S_min`` the spatial minimum of ``S`` and ``G = max sin^2(theta) |dtheta|^2_g``.
    On homogeneous flows the gradient term vanishes and ``f`` solves the HJ
    equation exactly.
    """
    from scipy.integrate import quad

    th = np.linspace(0.0, 2 * math.pi, 513)

    def rate(e):
        tf = family.to_forward(flow, e)
        w = family.weight(e)
        if flow.homogeneous:
            from .pde import snapshot_forward

            return c * w * snapshot_forward(flow, tf).S / 2
        u = flow.param("u")
        S = -u.d("t")(tf, th)
        if flow.weighted and family.weighted:
            S = S + flow.param("U").d("t")(tf, th)
        G = float(np.max(np.sin(th) ** 2 * np.exp(-2 * u(tf, th))))
        return c * w * float(np.min(S)) / 2 - amplitude**2 * G / (2 * c * w)

    cache = {}

    def A(r):
        key = float(r)
        if key not in cache:
            cache[key] = quad(rate, r0, key, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return cache[key]

    def f(r, theta):
        theta = np.asarray(theta, float)
        amp = 0.0 if flow.homogeneous else amplitude
        return amp * np.cos(theta) + A(r)

    f.__name__ = "hj_subsolution"
    return f


def _time_derivative(values, rs):
    """Central differences at interior samples of a uniformly sampled trajectory."""
    return [(values[k + 1] - values[k - 1]) / (rs[k + 1] - rs[k - 1]) for k in range(1, len(rs) - 1)]


def check_hj_preservation(
    flow,
    kind="L0",
    f=None,
    t1=None,
    t2=None,
    h=None,
    alpha=None,
    samples=9,
    res=Resolution(),
    calibrate_tol=True,
    tol_cap=None,
):
    """Heat flow applied to an HJ subsolution stays a subsolution and stays dominated.

    ``L0``: ``f`` on forward ``[t1, t2]`` satisfies
    ``d_t f + |grad f|^2/2 - S/2 <= 0``; ``P_h f(r + h) = P_{r+h,r} f_r`` is
    checked for the same inequality on ``[t1+h, t2+h]`` and for
    ``P_h f(t, y) - P_h f(s, x) <= L0^{s,t}(x, y)``.

    ``Lminus``: ``f`` on backward ``[alpha t1, alpha t2]`` satisfies
    ``d_tau f + |grad f|^2/(2 c sqrt(tau)) - c sqrt(tau) S/2 <= 0`` with
    ``c = sqrt(alpha t2) - sqrt(alpha t1)``.  ``P_alpha f(tau) = P_{tau, alpha tau} f_{alpha tau}``
    on ``[t1, t2]`` must satisfy the same inequality with ``c' = sqrt t2 - sqrt t1``
    up to ``(n/4)(alpha - 1) c' / sqrt(tau)``, and
    ``P_alpha f(tau, y) - P_alpha f(sigma, x)`` must stay below the normalized
    cost plus ``(n/2)(alpha - 1) c' (sqrt tau - sqrt sigma)``, the time
    integral of that error term.  The gap with ``n/4`` in place of ``n/2`` is
    reported as ``domination_margin_n4`` for information.

    ``f`` is a callable ``f(r, theta)`` in family time, ``("hopf_lax", phi, r0)``,
    or ``None`` for :func:`hj_subsolution`.  The number of time samples
    doubles with each refinement so the calibration also sees the
    time-differencing error.
    """
    n = flow.n
    if kind == "L0":
        if h is None or not h > 0 or not t1 < t2:
            raise PreconditionError("L0 preservation needs t1 < t2 and h > 0")
        fam = CostFamily("L0")
        flow.check_time([t1, t2 + h])
        c_in = c_out = 1.0
        src_of = lambda r: r - h  # noqa: E731
        r_lo, r_hi = t1 + h, t2 + h
        window = None
    elif kind == "Lminus":
        if alpha is None or not alpha > 1 or not 0 < t1 < t2:
            raise PreconditionError("Lminus preservation needs 0 < tau1 < tau2 and alpha > 1")
        fam = CostFamily("Lminus")
        flow.check_time([flow.t_of_tau(alpha * t2), flow.t_of_tau(t1)])
        c_in = math.sqrt(alpha * t2) - math.sqrt(alpha * t1)
        c_out = math.sqrt(t2) - math.sqrt(t1)
        src_of = lambda r: alpha * r  # noqa: E731
        r_lo, r_hi = t1, t2
        window = (alpha * t1, alpha * t2)
    else:
        raise ValueError(f"unknown HJ family {kind!r}")

    def extra(r):
        return 0.25 * n * (alpha - 1) * c_out / math.sqrt(r) if kind == "Lminus" else 0.0

    f_spec = f
    if f_spec is None:
        f_spec = hj_subsolution(flow, fam, src_of(r_lo), c_in)

    def residual(vals, dvals, rs, grid, c, allowance):
        worst, wit = -math.inf, {}
        for k, r in enumerate(rs):
            tf = fam.to_forward(flow, r)
            w = fam.weight(r)
            res_k = dvals[k] + _gn(vals[k], grid, tf) / (2 * c * w) - c * w * grid.S_values(tf) / 2 - allowance(r)
            if float(np.max(res_k)) > worst:
                worst = float(np.max(res_k))
                i = int(np.argmax(res_k))
                wit = {"r": float(r), "theta": float(grid.theta[i])}
        return worst, wit

    def evaluate(r):
        grid = r.grid(flow)
        m = (samples - 1) * 2**r.level + 1
        dst = np.linspace(r_lo, r_hi, m)
        src = np.array([src_of(x) for x in dst])
        f_src = _field_in_time(f_spec, flow, grid, src, fam, window, r)
        if callable(f_spec):
            d = 1e-5 * (src[-1] - src[0])
            df_src = [(np.asarray(f_spec(x + d, grid.theta), float) - np.asarray(f_spec(x - d, grid.theta), float)) / (2 * d) * np.ones(grid.n_x) for x in src[1:-1]]
        else:
            df_src = _time_derivative(f_src, src)
        in_res, _ = residual(f_src[1:-1], df_src, src[1:-1], grid, c_in, lambda x: 0.0)
        out = [propagator_matrix(grid, fam.to_forward(flow, a), fam.to_forward(flow, b)) @ v if fam.to_forward(flow, a) <= fam.to_forward(flow, b) else None for a, b, v in zip(src, dst, f_src)]
        if any(o is None for o in out):
            raise PreconditionError("heat-flow window runs backward in forward time")
        out_res, out_wit = residual(out[1:-1], _time_derivative(out, dst), dst[1:-1], grid, c_out, extra)
        dfam = fam if kind == "L0" else CostFamily("Lminus", normalized=True, norm=(t1, t2))
        stride = 2**r.level
        idx = list(range(0, m, stride))
        dom = dom4 = math.inf
        dom_wit = {}
        for ii, i in enumerate(idx):
            for j in idx[ii + 1 :]:
                table = cost_table(flow, dfam, dst[i], dst[j], grid, K=r.K, method=r.method, window=r.window)
                gap = out[j][None, :] - out[i][:, None] - table.values
                k2 = 0.5 * n * (alpha - 1) * c_out * (math.sqrt(dst[j]) - math.sqrt(dst[i])) if kind == "Lminus" else 0.0
                dom4 = min(dom4, float(np.min(k2 / 2 - gap)))
                mm = float(np.min(k2 - gap))
                if mm < dom:
                    dom = mm
                    x, y = np.unravel_index(int(np.argmax(gap)), gap.shape)
                    dom_wit = {"s": float(dst[i]), "t": float(dst[j]), "x": float(grid.theta[x]), "y": float(grid.theta[y])}
        result = {
            "margin": min(-out_res, dom),
            "input_hj_residual": in_res,
            "output_hj_residual": out_res,
            "domination_margin": dom,
            "witness": {"hj": out_wit, "domination": dom_wit},
            "samples": m,
            "scale": max(1.0, max(float(np.max(np.abs(v))) for v in out)),
            "hashes": {"grid": grid.hash()},
        }
        if kind == "Lminus":
            result["domination_margin_n4"] = dom4
        return result

    base, tol, parts = calibrate(evaluate, res, calibrate_tol and not _pinned(f))
    notes = []
    if base["input_hj_residual"] > tol:
        notes.append(f"input field violates its HJ inequality by {base['input_hj_residual']:.3e} (> tol)")
        base = dict(base, margin=min(base["margin"], -base["input_hj_residual"]))
    params = {"t1": t1, "t2": t2, "h": h, "alpha": alpha, "samples": samples}
    return _finish("hj_preservation", kind, base, tol, parts, params, res, flow, notes, tol_cap=tol_cap)


# --------------------------------------------------------------------------
# shifted Bochner identities


def _tensor_norm_sq(A, g):
    gi = np.linalg.inv(g)
    return float(np.trace(gi @ A @ gi @ A))


def bochner_values(snap: GeometrySnapshot, X, H, N, c=None, sign=-1):
    """Right-hand sides of the Bochner identities at a point.

    ``B0 = -2|S + H|^2 - D(X)``; with ``c = T_- + tau_0 > 0`` (``sign=-1``)
    ``B- = -2|c S - g/2 + c H|^2 - c^2 D(X) - (N - n)/2``; ``sign=+1`` gives the
    ``L+`` analogue with ``+ g/2`` in the square.  ``X`` is the gradient
    of ``v`` (index raised), ``H`` its Hessian.
    """
    X = np.atleast_1d(np.asarray(X, float))
    H = np.atleast_2d(np.asarray(H, float))
    D = evaluate_D(snap, X)
    B0 = -2 * _tensor_norm_sq(snap.S_tensor + H, snap.g) - D
    if c is None:
        return B0, None
    A = c * snap.S_tensor + sign * 0.5 * snap.g + c * H
    Bc = -2 * _tensor_norm_sq(A, snap.g) - c * c * D - 0.5 * (N - snap.n)
    return B0, Bc


def check_shifted_bochner_equivalence(snap: GeometrySnapshot, X, H, N, shifts=(0.5, 1.0, 2.0, 5.0), tau0=None, tol=1e-10):
    """Completion-of-squares identities linking the ``L0,N`` and shifted ``L+-`` Bochner quantities.

    For each shifted time ``c`` (``c = T_- + tau_0`` for ``L-``, ``T_+ + t_0``
    for ``L+``; non-positive values are skipped):

        B0 + (2/N)(S + Lap v)^2 = B-/c^2 + (2/N)(Lap v + S - N/(2c))^2
        B0 + (2/N)(S + Lap v)^2 = B+/c^2 + (2/N)(Lap v + S + N/(2c))^2

    If ``Lap v + S > 0`` (``< 0``) the shift ``c = N/(2(Lap v + S))``
    (``-N/(2(...))``) removes the correction and ``B-`` (``B+``) alone matches.
    """
    H = np.atleast_2d(np.asarray(H, float))
    lap_v = float(np.trace(np.linalg.inv(snap.g) @ H))
    A = lap_v + snap.S
    worst = 0.0
    skipped = []
    rows = []
    cs = list(shifts)
    zero_c = None
    if A > 0:
        zero_c = ("minus", N / (2 * A))
    elif A < 0:
        zero_c = ("plus", -N / (2 * A))
    scale = 1.0
    for c in cs:
        if not c > 0:
            skipped.append(c)
            continue
        B0, Bm = bochner_values(snap, X, H, N, c, -1)
        _, Bp = bochner_values(snap, X, H, N, c, +1)
        lhs = B0 + (2 / N) * A**2
        rm = Bm / c**2 + (2 / N) * (A - N / (2 * c)) ** 2
        rp = Bp / c**2 + (2 / N) * (A + N / (2 * c)) ** 2
        scale = max(scale, abs(lhs), abs(rm), abs(rp))
        worst = max(worst, abs(lhs - rm), abs(lhs - rp))
        rows.append({"c": c, "B0": B0, "B_minus": Bm, "B_plus": Bp, "residual_minus": lhs - rm, "residual_plus": lhs - rp})
    zero_res = None
    if zero_c is not None:
        side, c = zero_c
        B0, Bc = bochner_values(snap, X, H, N, c, -1 if side == "minus" else +1)
        zero_res = abs(B0 + (2 / N) * A**2 - Bc / c**2)
        worst = max(worst, zero_res)
    tolerance = tol * scale
    margin = -worst
    notes = [f"skipped non-positive shifted time {c}" for c in skipped]
    return CheckReport(
        "shifted_bochner",
        "L0N",
        decide(margin, tolerance),
        margin,
        tolerance,
        {"N": N, "shifts": cs, "tau0": tau0},
        {"lap_v_plus_S": A},
        {},
        notes,
        {"rows": rows, "zero_correction": {"shift": zero_c, "residual": zero_res}},
    )


# --------------------------------------------------------------------------
# blow-up bound


def check_blowup_bound(flow, tau, sigmas=None, res=Resolution(), calibrate_tol=True, tol_cap=None):
    """Lower bound ``sigma^2 S_sigma >= tau^2 inf S_tau - (n/2)(tau - sigma)`` along the flow.

    The margin is ``min over sigma and nodes`` of the difference, with
    ``S_sigma`` the actual flow's scalar on the grid.  For round spheres with
    linear squared radius the predicted existence bound
    ``tau - n/(2 inf S_tau)`` is compared with the closed-form extinction time.
    """
    n = flow.n
    grid0 = res.grid(flow)
    t_tau = flow.t_of_tau(tau)
    flow.check_time(t_tau)
    S_min = float(np.min(grid0.S_values(t_tau)))
    if not S_min > 0:
        return CheckReport(
            "blowup_bound", "Lminus", "not_applicable", 0.0, 0.0, {"tau": tau}, {}, {}, [f"inf S at tau={tau} is {S_min:.3e} <= 0"], {"S_min": S_min}
        )
    if sigmas is None:
        a, b = flow.forward_interval
        lo = max(flow.tau(b), 1e-6)
        sigmas = np.linspace(lo, tau, 9)[:-1]
    sigmas = [float(x) for x in sigmas if 0 < x < tau]

    def evaluate(r):
        grid = r.grid(flow)
        Smin_tau = float(np.min(grid.S_values(t_tau)))
        worst, wit = math.inf, {}
        for sg in sigmas:
            Ssg = grid.S_values(flow.t_of_tau(sg))
            m = sg**2 * Ssg - (tau**2 * Smin_tau - 0.5 * n * (tau - sg))
            if float(np.min(m)) < worst:
                worst = float(np.min(m))
                wit = dict(_argmin_witness(grid, m, flow.t_of_tau(sg)), sigma=sg)
        return {"margin": worst, "witness": wit, "scale": max(1.0, tau**2 * abs(Smin_tau)), "hashes": {"grid": grid.hash()}}

    base, tol, parts = calibrate(evaluate, res, calibrate_tol)
    predicted = tau - n / (2 * S_min)
    base["predicted_existence_bound"] = predicted
    if flow.family == "round_sphere":
        r2 = flow.param("r2")
        rate = r2.d("t")(t_tau)
        if abs(r2.d("t").d("t")(t_tau)) == 0 and rate < 0:
            # r2 linear in t and shrinking: vanishes at backward time tau - r2/|rate|
            base["extinction_tau"] = tau - r2(t_tau) / (-rate)
            base["bound_minus_extinction"] = predicted - base["extinction_tau"]
    params = {"tau": tau, "sigmas": sigmas}
    return _finish("blowup_bound", "Lminus", base, tol, parts, params, res, flow, tol_cap=tol_cap)


# --------------------------------------------------------------------------
# pointwise condition and functional monotonicity


def check_D_condition(flow, times=None, thetas=None, tol=1e-10):
    """``inf_X D(X) >= 0`` at sampled points (closed-form minimization per point)."""
    from .geometry import minimize_D
    from .pde import snapshot_forward

    a, b = flow.forward_interval
    times = np.linspace(a, b, 11) if times is None else times
    xs = [0.0] if flow.homogeneous else (np.linspace(0, 2 * math.pi, 16, endpoint=False) if thetas is None else thetas)
    worst, wit = math.inf, {}
    for t in times:
        for x in xs:
            r = minimize_D(snapshot_forward(flow, float(t), float(x)))
            if r.min_value < worst:
                worst = r.min_value
                direction = r.witness if r.unbounded else r.argmin
                wit = {"t": float(t), "x": float(x), "X": None if direction is None else np.asarray(direction).tolist()}
    return CheckReport("D_condition", "L0", decide(worst, tol), float(worst), tol, {"flow": flow.name or flow.family}, wit)


def check_monotonicity(flow, functional="F", measure="uniform", tau1=None, tau2=None, steps=None, res=Resolution(), tol_cap=None):
    """Non-increase in ``tau`` of ``F`` or ``W`` along the conjugate heat flow.

    The margin is minus the largest increase between consecutive samples; the
    tolerance is twice the largest deviation from the trace at half the step.
    """
    from .functionals import calibrated_trace

    if functional not in ("F", "W"):
        raise ValueError(f"no monotonicity statement for {functional!r}; trace it with 'dflow trace' instead")
    a, b = flow.forward_interval
    if tau1 is None:
        tau1 = flow.tau(b)
    if tau2 is None:
        tau2 = flow.tau(a)
    if functional == "W" and not tau1 > 0:
        raise PreconditionError("W needs tau > 0")
    trace, tol_trace = calibrated_trace(measure, flow, tau1, tau2, functional, res.n_x, res.grid(flow).dt, steps)
    tol = tol_trace + FLOOR * max(1.0, float(np.max(np.abs(trace.values))))
    viol = trace.max_upward_violation()
    d = np.diff(trace.values)
    k = int(np.argmax(d)) if d.size else 0
    report = CheckReport(
        "monotonicity",
        functional,
        decide(-viol, tol, tol_cap=tol_cap),
        -viol,
        tol,
        {"flow": flow.name or flow.family, "functional": functional, "tau1": tau1, "tau2": tau2, "steps": len(trace.times) - 1},
        {"tau": trace.times[k], "increase": float(d[k]) if d.size else 0.0},
        {"grid": trace.metadata.get("grid_hash", "")},
        [],
        {"resolution": res.as_dict()},
    )
    return report, trace


__all__ = [
    "check_D_condition",
    "check_monotonicity",
    "CheckReport",
    "Resolution",
    "PreconditionError",
    "decide",
    "calibrate",
    "check_gradient_estimate",
    "check_wasserstein_contraction",
    "four_time_shift",
    "check_entropy_convexity",
    "check_evi",
    "evi_terms",
    "evi_wc_consistency",
    "check_hj_preservation",
    "hj_subsolution",
    "bochner_values",
    "check_shifted_bochner_equivalence",
    "check_blowup_bound",
]
