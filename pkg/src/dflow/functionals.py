"""Fisher-type energy ``F``, the scale-invariant entropy ``W`` and their traces.

Traces run in backward time ``tau = T - t``: a measure given at ``tau1`` is
pushed by the conjugate heat flow to larger ``tau`` and the functional is
recorded at every step.  Non-increase in ``tau`` is the expected behaviour on
flows with ``D >= 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainError
from .pde import ContractError, DiscreteMeasure, SpaceTimeGrid, adjoint_heat_propagate, d_theta
from .transport import entropy

FUNCTIONALS = ("F", "W", "entropy")


@dataclass
class FunctionalTrace:
    times: list  # backward times tau
    values: list
    functional: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace values must be finite")

    def derivative(self):
        """Finite-difference derivative in tau (centered inside, one-sided at the ends)."""
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        if t.size < 2:
            return np.zeros_like(v)
        return np.gradient(v, t)

    def max_upward_violation(self):
        """Largest increase between consecutive samples (0 for a non-increasing trace)."""
        v = np.asarray(self.values, float)
        if v.size < 2:
            return 0.0
        return float(max(0.0, np.max(np.diff(v))))

    def to_csv(self, path):
        d = self.derivative()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", self.functional, "d_dtau"])
            for t, v, dv in zip(self.times, self.values, d):
                w.writerow([repr(float(t)), repr(float(v)), repr(float(dv))])


def _log_density(mu: DiscreteMeasure):
    rho = mu.density
    if np.any(rho <= 0):
        raise ContractError("functional needs a strictly positive density; smooth the measure first")
    return np.log(rho)


def _grad_sq(values, grid, t):
    if grid.flow.homogeneous:
        return np.zeros_like(values)
    u = grid.flow.param("u")(t, grid.theta)
    return np.exp(-2 * u) * d_theta(values, grid.h) ** 2


def fisher_F(mu: DiscreteMeasure, flow, t=None) -> float:
    """``sum_i (|grad ln rho|^2 + S) p_i`` at the measure's forward time.

    ``t`` defaults to ``mu.t``; passing a different time raises.
    """
    t = mu.t if t is None else t
    if abs(t - mu.t) > 1e-12:
        raise ContractError(f"measure lives at t={mu.t}, not t={t}")
    grid = mu.grid
    lr = _log_density(mu)
    return float(np.sum((_grad_sq(lr, grid, t) + grid.S_values(t)) * mu.p))


def perelman_W(mu: DiscreteMeasure, flow, tau) -> float:
    """``sum_i [tau (|grad f|^2 + S) + f - n] p_i`` with ``rho = (4 pi tau)^(-n/2) e^(-f)``."""
    if not tau > 0:
        raise DomainError(f"W needs tau > 0 (got {tau})")
    grid = mu.grid
    n = flow.n
    f = -_log_density(mu) - 0.5 * n * math.log(4 * math.pi * tau)
    integrand = tau * (_grad_sq(f, grid, mu.t) + grid.S_values(mu.t)) + f - n
    return float(np.sum(integrand * mu.p))


def W_from_F(F, E, tau, n):
    """``tau F - E - (n/2) ln(4 pi tau) - n`` where ``E = int rho ln rho dV``."""
    return tau * F - E - 0.5 * n * math.log(4 * math.pi * tau) - n


def sphere_F_rate(flow, t):
    """Closed-form ``dF/dt`` of the normalized volume on a round-sphere flow."""
    if flow.family != "round_sphere":
        raise ValueError("closed-form F rate is for round_sphere flows")
    r2 = flow.param("r2")
    a, a1, a2 = r2(t), r2.d("t")(t), r2.d("t").d("t")(t)
    return flow.n / (2 * a) * (-a2 + a1**2 / a)


def _evaluate(functional, mu, flow, tau):
    if functional == "F":
        return fisher_F(mu, flow)
    if functional == "W":
        return perelman_W(mu, flow, tau)
    if functional == "entropy":
        return entropy(mu)
    raise ValueError(f"unknown functional {functional!r}")


def monotonicity_trace(mu_init: DiscreteMeasure, flow, tau1, tau2, functional="F", steps=None) -> FunctionalTrace:
    """Record ``functional`` along the conjugate heat flow from ``tau1`` to ``tau2``.

    ``mu_init`` must live at forward time ``T - tau1``.  ``steps`` defaults to
    one sample per grid time step.
    """
    if not tau2 > tau1:
        raise ValueError("need tau1 < tau2")
    t1 = flow.t_of_tau(tau1)
    if abs(mu_init.t - t1) > 1e-12:
        raise ContractError(f"initial measure lives at t={mu_init.t}, expected t={t1}")
    grid = mu_init.grid
    if steps is None:
        steps = max(1, int(math.ceil((tau2 - tau1) / grid.dt - 1e-9)))
    taus = np.linspace(tau1, tau2, int(steps) + 1)
    values = []
    mu = mu_init
    for k, tau in enumerate(taus):
        if k > 0:
            mu = adjoint_heat_propagate(mu, flow, mu.t, flow.t_of_tau(tau))
        values.append(_evaluate(functional, mu, flow, tau))
    meta = {
        "flow": flow.name or flow.family,
        "grid_hash": grid.hash(),
        "n_x": grid.n_x,
        "dt": grid.dt,
        "tau1": float(tau1),
        "tau2": float(tau2),
        "max_upward_violation": float(max(0.0, np.max(np.diff(values)))) if len(values) > 1 else 0.0,
    }
    return FunctionalTrace(list(map(float, taus)), list(map(float, values)), functional, meta)


def is_delta_spec(spec):
    return (isinstance(spec, tuple) and bool(spec) and spec[0] == "delta") or (isinstance(spec, dict) and "delta" in spec)


def measure_on_grid(spec, grid: SpaceTimeGrid, t):
    """Instantiate a measure spec on ``grid`` at forward time ``t``.

    Accepted specs: ``"uniform"``; ``("delta", theta0)`` or ``{"delta": theta0}``;
    a density given as a callable of theta, as ``{"density": f}`` or as
    ``{"density": "expression in theta"}``; a :class:`DiscreteMeasure`
    (returned unchanged, so it cannot be re-instantiated for calibration).
    Homogeneous grids have one cell, where every spec is the uniform measure.
    """
    if isinstance(spec, DiscreteMeasure):
        return spec
    if isinstance(spec, str):
        if spec != "uniform":
            raise ValueError(f"unknown measure spec {spec!r}")
        return DiscreteMeasure.uniform(grid, t)
    if is_delta_spec(spec):
        if grid.n_x == 1:
            return DiscreteMeasure.uniform(grid, t)
        theta0 = spec[1] if isinstance(spec, tuple) else spec["delta"]
        idx = int(round(float(theta0) / grid.h)) % grid.n_x
        return DiscreteMeasure.delta(grid, t, idx)
    if isinstance(spec, dict) and "density" in spec:
        dens = spec["density"]
        if isinstance(dens, str):
            from .expr import parse

            expr = parse(dens)
            if expr.depends_on("t"):
                raise ValueError("measure densities may depend on theta only")
            dens = lambda th, _e=expr: _e(0.0, th)  # noqa: E731
        spec = dens
    if callable(spec):
        if grid.n_x == 1:
            return DiscreteMeasure.uniform(grid, t)
        rho = np.asarray(spec(grid.theta), float) * np.ones(grid.n_x)
        return DiscreteMeasure.from_density(grid, t, rho)
    raise ValueError(f"unsupported measure spec {spec!r}")


def calibrated_trace(mu_spec, flow, tau1, tau2, functional="F", n_x=128, dt=None, steps=None):
    """Trace at ``(n_x, dt)`` plus the half-resolution run used as tolerance.

    Returns ``(trace, tol)`` with ``tol = 2 max |trace_h - trace_{h/2}|`` over
    the coarse sample times.
    """
    g1 = SpaceTimeGrid(flow, n_x, dt)
    g2 = SpaceTimeGrid(flow, 2 * g1.n_x if not flow.homogeneous else 1, g1.dt / 2)
    t1 = flow.t_of_tau(tau1)
    tr1 = monotonicity_trace(measure_on_grid(mu_spec, g1, t1), flow, tau1, tau2, functional, steps)
    n_steps = len(tr1.times) - 1
    tr2 = monotonicity_trace(measure_on_grid(mu_spec, g2, t1), flow, tau1, tau2, functional, 2 * n_steps)
    diff = np.abs(np.asarray(tr1.values) - np.asarray(tr2.values)[::2])
    tol = 2 * float(np.max(diff))
    tr1.metadata["tolerance"] = tol
    return tr1, tol


__all__ = [
    "FunctionalTrace",
    "fisher_F",
    "perelman_W",
    "W_from_F",
    "sphere_F_rate",
    "monotonicity_trace",
    "calibrated_trace",
    "measure_on_grid",
    "is_delta_spec",
]
