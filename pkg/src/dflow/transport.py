"""Discrete optimal transport with Lagrangian costs.

The Kantorovich problem is solved exactly as a linear program (HiGHS through
``scipy.optimize.linprog``); the dual pair is post-processed so that ``psi``
is the c-transform of ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .geometry import DomainError
from .lagrangian import CostFamily, CostTable, cost_table, dp_path
from .pde import ContractError, DiscreteMeasure, ScalarField, adjoint_heat_propagate

__all__ = [
    "DiscreteMeasure",
    "TransportSolution",
    "kantorovich",
    "wasserstein_geodesic",
    "entropy",
    "metric_derivative",
    "continuity_potential",
    "smooth_curve",
    "W_cost",
]


@dataclass
class TransportSolution:
    value: float
    plan: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    dual_value: float
    gap: float
    marginal_error: float


def _lp_options():
    return {
        "presolve": True,
        "primal_feasibility_tolerance": 1e-10,
        "dual_feasibility_tolerance": 1e-10,
    }


def kantorovich(mu, nu, cost) -> TransportSolution:
    """Optimal plan, value and c-concave dual pair for ``cost`` (a table or matrix)."""
    C = cost.values if isinstance(cost, CostTable) else np.asarray(cost, float)
    a = mu.p if isinstance(mu, DiscreteMeasure) else np.asarray(mu, float)
    b = nu.p if isinstance(nu, DiscreteMeasure) else np.asarray(nu, float)
    n, m = C.shape
    if a.shape != (n,) or b.shape != (m,):
        raise ContractError(f"marginals {a.shape}, {b.shape} do not match cost {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ContractError("cost table has non-finite entries")
    if abs(a.sum() - b.sum()) > 1e-10:
        raise ContractError(f"mass mismatch {a.sum() - b.sum():.3e}")
    if n == 1 or m == 1:
        plan = np.outer(a, b) / max(a.sum(), 1e-300)
        value = float(np.sum(plan * C))
        phi = np.zeros(n)
        psi = np.min(C - phi[:, None], axis=0)
        if n == 1:
            psi = C[0].copy()
        else:
            phi = C[:, 0].copy()
            psi = np.zeros(1)
        dual = float(phi @ a + psi @ b)
        return TransportSolution(value, plan, phi, psi, dual, abs(value - dual), 0.0)
    # equality constraints: row sums then column sums.  One column constraint is
    # redundant; dropping the heaviest column keeps its implied mass positive
    # when the marginal totals differ by rounding.
    rows = np.repeat(np.arange(n), m)
    cols = np.tile(np.arange(m), n)
    from scipy.sparse import coo_matrix, vstack

    keep = np.delete(np.arange(m), int(np.argmax(b)))
    A_rows = coo_matrix((np.ones(n * m), (rows, np.arange(n * m))), shape=(n, n * m))
    A_cols = coo_matrix((np.ones(n * m), (cols, np.arange(n * m))), shape=(m, n * m))
    A = vstack([A_rows, A_cols.tocsr()[keep]]).tocsr()
    rhs = np.concatenate([a, b[keep]])
    res = linprog(C.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs-ds", options=_lp_options())
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    value = float(np.sum(plan * C))
    duals = res.eqlin.marginals
    phi = np.asarray(duals[:n], float)
    psi = np.min(C - phi[:, None], axis=0)  # c-transform
    phi = np.min(C - psi[None, :], axis=1)  # and back, keeps phi + psi <= c
    psi = np.min(C - phi[:, None], axis=0)
    dual = float(phi @ a + psi @ b)
    marg = max(np.max(np.abs(plan.sum(axis=1) - a)), np.max(np.abs(plan.sum(axis=0) - b)))
    return TransportSolution(value, plan, phi, psi, dual, abs(value - dual), float(marg))


def W_cost(mu, nu, flow, family: CostFamily, s, t, K=None, method="auto") -> float:
    """``W_{L^{s,t}}(mu, nu)`` with a freshly built cost table (family times)."""
    table = cost_table(flow, family, s, t, mu.grid, K=K, method=method)
    return kantorovich(mu, nu, table).value


# --------------------------------------------------------------------------
# geodesics


def _deposit(n, pos, mass, out):
    """Split ``mass`` at fractional node positions ``pos`` between neighbours."""
    base = np.floor(pos).astype(int)
    w = pos - base
    np.add.at(out, base % n, mass * (1 - w))
    np.add.at(out, (base + 1) % n, mass * w)


def wasserstein_geodesic(mu_s, mu_t, flow, family: CostFamily, s, t, r_values, table=None, K=None, method="auto"):
    """Displacement interpolation at family times ``r_values`` in ``[s, t]``."""
    grid = mu_s.grid
    if table is None:
        table = cost_table(flow, family, s, t, grid, K=K, method=method)
    sol = kantorovich(mu_s, mu_t, table)
    plan = sol.plan
    n = grid.n_x
    I, J = np.nonzero(plan > 1e-15)
    mass = plan[I, J]
    mass = mass / mass.sum()
    out = []
    for r in r_values:
        tf = family.to_forward(flow, r)
        if r <= s:
            out.append(DiscreteMeasure(grid, tf, mu_s.p.copy()))
            continue
        if r >= t:
            out.append(DiscreteMeasure(grid, tf, mu_t.p.copy()))
            continue
        p = np.zeros(n)
        if n == 1:
            p[0] = 1.0
        elif table.method == "separable":
            pos = I + table.frac(r) * table.signed_disp[I, J]
            _deposit(n, pos, mass, p)
        elif table.method == "action":
            paths = table.extra["paths"][I, J]  # (pairs, K+1) in radians
            layers = table.layers
            k = min(int(np.searchsorted(layers, r, side="right")) - 1, len(layers) - 2)
            lam = (r - layers[k]) / (layers[k + 1] - layers[k])
            theta = (1 - lam) * paths[:, k] + lam * paths[:, k + 1]
            _deposit(n, theta / grid.h, mass, p)
        else:
            layers = table.layers
            k = int(np.argmin(np.abs(layers - r)))
            for i, j, m_ in zip(I, J, mass):
                p[dp_path(table, i, j)[k]] += m_
        out.append(DiscreteMeasure(grid, tf, p, normalize=True))
    return out


# --------------------------------------------------------------------------
# entropy and derivatives


def entropy(mu: DiscreteMeasure, weighted=False) -> float:
    """``int rho ln rho dV`` (relative to ``e^{-U} dV`` when ``weighted``)."""
    ref = mu.grid.reference_weights(mu.t) if weighted else mu.grid.volume_weights(mu.t)
    p = mu.p
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / ref[nz])))


def metric_derivative(curve, rs, flow, family: CostFamily, r, K=None, method="auto"):
    """Richardson-combined central difference of ``W_{L^{r,r+h}}(mu_r, mu_{r+h}) / h``.

    ``curve`` holds measures at the family times ``rs`` (uniformly spaced).
    """
    rs = np.asarray(rs, float)
    k = int(np.argmin(np.abs(rs - r)))
    if abs(rs[k] - r) > 1e-12 or k == 0 or k == len(rs) - 1:
        raise ValueError("insufficient resolution: need samples on both sides of r")

    def q(j):
        fwd = W_cost(curve[k], curve[k + j], flow, family, rs[k], rs[k + j], K, method) / (rs[k + j] - rs[k])
        bwd = W_cost(curve[k - j], curve[k], flow, family, rs[k - j], rs[k], K, method) / (rs[k] - rs[k - j])
        return 0.5 * (fwd + bwd)

    q1 = q(1)
    if k >= 2 and k <= len(rs) - 3:
        return (4 * q1 - q(2)) / 3
    return q1


def continuity_potential(rho: ScalarField, drho_dt: ScalarField, flow, t):
    """Solve ``drho/dt - S rho = -div(rho grad phi)`` for mean-zero ``phi``.

    ``rho`` is a density with respect to ``dV_t``; the ``S rho`` term accounts
    for the evolving volume form.  Raises when the data are incompatible.
    """
    grid = rho.grid
    if np.any(rho.values <= 0):
        raise ContractError("continuity potential needs a positive density")
    n, h = grid.n_x, grid.h
    if n == 1:
        return ScalarField(grid, t, np.zeros(1), "potential")
    u = flow.param("u")
    un = u(t, grid.theta)
    uh = u(t, grid.theta + 0.5 * h)
    rhs = drho_dt.values - grid.S_values(t) * rho.values
    dv = np.exp(un) * h
    compat = float(rhs @ dv)
    scale = max(1.0, float(np.abs(rhs) @ dv))
    if abs(compat) > 1e-8 * scale:
        raise ValueError(f"inconsistent continuity data: total rate {compat:.3e}")
    rho_half = 0.5 * (rho.values + np.roll(rho.values, -1))
    a = rho_half * np.exp(-uh) / h**2
    idx = np.arange(n)
    M = np.zeros((n, n))
    # -div(rho grad phi)_i = -e^{-u_i} (a_{i+1/2}(phi_{i+1}-phi_i) - a_{i-1/2}(phi_i-phi_{i-1}))
    pref = np.exp(-un)
    am = np.roll(a, 1)
    M[idx, (idx + 1) % n] -= pref * a
    M[idx, (idx - 1) % n] -= pref * am
    M[idx, idx] += pref * (a + am)
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = M * dv[:, None]  # symmetric form
    aug[:n, n] = dv
    aug[n, :n] = dv
    sol = np.linalg.solve(aug, np.concatenate([rhs * dv, [0.0]]))
    phi = sol[:n]
    phi = phi - phi @ dv / dv.sum()
    return ScalarField(grid, t, phi, "potential")


def continuity_residual(rho, drho_dt, phi, flow, t):
    """Max-norm residual of the discrete continuity equation."""
    grid = rho.grid
    n, h = grid.n_x, grid.h
    u = flow.param("u")
    un = u(t, grid.theta)
    uh = u(t, grid.theta + 0.5 * h)
    rho_half = 0.5 * (rho.values + np.roll(rho.values, -1))
    flux = rho_half * np.exp(-uh) * (np.roll(phi.values, -1) - phi.values) / h
    div = np.exp(-un) * (flux - np.roll(flux, 1)) / h
    rhs = drho_dt.values - grid.S_values(t) * rho.values
    return float(np.max(np.abs(rhs + div)))


def smoothing_time(flow, t, eps, kind, shift=0.0):
    """Forward time reached by the sliding-window smoothing of a sample at ``t``."""
    if kind == "L0":
        return t - eps
    if kind == "Lminus":
        tau = flow.tau(t) + shift
        return flow.t_of_tau(math.exp(eps) * tau - shift)
    if kind == "Lplus":
        return math.exp(-eps) * (t + shift) - shift
    raise ValueError(f"unknown kind {kind!r}")


def smooth_curve(curve, flow, eps, kind="L0", shift=0.0):
    """``mu^eps = P^_{t, t^eps} mu_t`` for every sample (see :func:`smoothing_time`)."""
    if eps < 0:
        raise DomainError("smoothing parameter must be nonnegative")
    out = []
    a, b = flow.forward_interval
    for mu in curve:
        te = smoothing_time(flow, mu.t, eps, kind, shift)
        if te < a - 1e-12 or te > mu.t + 1e-15:
            raise DomainError(f"eps = {eps} moves the sample at t={mu.t} outside the flow interval")
        out.append(adjoint_heat_propagate(mu, flow, mu.t, te) if te < mu.t else mu)
    return out
