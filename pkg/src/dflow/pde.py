"""Grids, discrete Laplacians and the heat / conjugate heat propagators.

Circle flows live on a periodic grid ``theta_i = 2*pi*i/N``; homogeneous
flows (spheres, tori, static spaces) use a single cell, where the heat flow
acts trivially and the conjugate heat flow keeps the normalized volume.
All times in this module are forward times.

The discrete weighted Laplacian is the symmetric divergence-form stencil

    (L f)_i = e^{U_i-u_i} (a_{i+1/2}(f_{i+1}-f_i) - a_{i-1/2}(f_i-f_{i-1})) / h^2,
    a = e^{-u-U} at half nodes,

which is self-adjoint for the node weights ``m_i = e^{u_i-U_i} h``.  One time
step uses the matrix exponential of ``dt * L`` frozen at the step midpoint,
so every step is a stochastic matrix (positivity, maximum principle, constants
preserved).  The conjugate propagator acts on measure weights by the exact
transpose, which makes the duality pairing and mass conservation hold to
round-off.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .geometry import circle_fields, snapshot, evaluate_D, evaluate_D_weighted, weighted_snapshot_from_plain


class ContractError(ValueError):
    """Input violates an operation's contract."""


class GridMismatchError(ValueError):
    pass


FIELD_TAGS = ("generic", "heat_slice", "potential", "density")


class SpaceTimeGrid:
    """Spatial nodes of a flow plus a time-step size for propagation.

    ``n_x`` is ignored (forced to one cell) for homogeneous flows.
    ``scheme`` is ``"expm"`` (default) or ``"cn"`` (Crank-Nicolson with two
    implicit-Euler half steps at each end of the window).
    """

    def __init__(self, flow, n_x=128, dt=None, scheme="expm"):
        self.flow = flow
        self.n_x = 1 if flow.homogeneous else int(n_x)
        if self.n_x < 3 and not flow.homogeneous:
            raise ValueError("circle grids need at least 3 nodes")
        self.h = 2 * math.pi / self.n_x
        self.theta = self.h * np.arange(self.n_x)
        self.dt = float(dt) if dt is not None else self.h
        if scheme not in ("expm", "cn"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        self._prop_cache = {}

    # -- geometry on nodes -------------------------------------------------
    def fields(self, t, theta=None):
        return circle_fields(self.flow, t, self.theta if theta is None else theta)

    def volume_weights(self, t):
        """``dV_i = sqrt(det g)(t, theta_i) * h``; the full volume for one cell."""
        if self.flow.homogeneous:
            return np.array([self.flow.total_volume(t)])
        u = self.flow.param("u")(t, self.theta)
        return np.exp(u) * self.h

    def reference_weights(self, t):
        """Weights of ``e^{-U} dV`` (equal to ``dV`` without a weight)."""
        dv = self.volume_weights(t)
        if self.flow.weighted:
            return dv * np.exp(-self.flow.param("U")(t, self.theta))
        return dv

    def S_values(self, t):
        """Scalar ``S`` on nodes."""
        if self.flow.homogeneous:
            return np.array([snapshot_forward(self.flow, t).S])
        return -self.flow.param("u").d("t")(t, self.theta)

    def S_U_values(self, t):
        S = self.S_values(t)
        if self.flow.weighted:
            S = S + self.flow.param("U").d("t")(t, self.theta)
        return S

    def time_nodes(self, s, t):
        if t < s:
            raise ValueError("time window must satisfy s <= t")
        k = max(1, int(math.ceil((t - s) / self.dt - 1e-9))) if t > s else 0
        return np.linspace(s, t, k + 1)

    def key(self):
        return (self.flow.family, self.n_x, self.dt, self.scheme, id(self.flow))

    def hash(self):
        import hashlib

        payload = f"{self.flow.family}|{self.flow.name}|{self.n_x}|{self.dt}|{self.scheme}"
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def snapshot_forward(flow, t, x=0.0):
    return snapshot(flow, flow.native_time(t), x)


@dataclass
class ScalarField:
    grid: SpaceTimeGrid
    t: float
    values: np.ndarray
    tag: str = "generic"

    def __post_init__(self):
        self.values = np.asarray(self.values, float).reshape(-1)
        if self.values.shape != (self.grid.n_x,):
            raise GridMismatchError(f"field has {self.values.size} values, grid has {self.grid.n_x} nodes")
        if self.tag not in FIELD_TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.tag == "density" and np.any(self.values < 0):
            raise ContractError("density field has negative values")

    def with_values(self, values, t=None, tag=None):
        return ScalarField(self.grid, self.t if t is None else t, values, self.tag if tag is None else tag)


@dataclass
class DiscreteMeasure:
    """Probability weights ``p_i`` on grid nodes at forward time ``t``."""

    grid: SpaceTimeGrid
    t: float
    p: np.ndarray
    normalize: bool = field(default=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.p, float).reshape(-1)
        if p.shape != (self.grid.n_x,):
            raise GridMismatchError("measure size does not match the grid")
        if np.any(p < -1e-14):
            raise ContractError("measure weights must be nonnegative")
        p = np.clip(p, 0.0, None)
        if self.normalize:
            p = p / p.sum()
        elif abs(p.sum() - 1.0) > 1e-10:
            raise ContractError(f"measure has mass {p.sum():.15g}, expected 1")
        self.p = p

    @property
    def dV(self):
        return self.grid.volume_weights(self.t)

    @property
    def density(self):
        return self.p / self.dV

    @classmethod
    def from_density(cls, grid, t, rho):
        rho = np.asarray(rho, float)
        if np.any(rho < 0):
            raise ContractError("negative density")
        return cls(grid, t, rho * grid.volume_weights(t), normalize=True)

    @classmethod
    def uniform(cls, grid, t):
        return cls(grid, t, grid.volume_weights(t), normalize=True)

    @classmethod
    def delta(cls, grid, t, index):
        p = np.zeros(grid.n_x)
        p[index] = 1.0
        return cls(grid, t, p)


# --------------------------------------------------------------------------
# operators


def _half_nodes(grid):
    return grid.theta + 0.5 * grid.h


def laplacian_matrix(grid, t, weighted=False):
    """Dense matrix of the discrete (weighted) Laplace-Beltrami operator."""
    n = grid.n_x
    if grid.flow.homogeneous:
        return np.zeros((1, 1))
    flow = grid.flow
    u = flow.param("u")
    th_half = _half_nodes(grid)
    expo_half = -u(t, th_half)
    expo_node = -u(t, grid.theta)
    if weighted and flow.weighted:
        U = flow.param("U")
        expo_half = expo_half - U(t, th_half)
        expo_node = expo_node + U(t, grid.theta)
    a = np.exp(expo_half)  # a_{i+1/2}
    pref = np.exp(expo_node) / grid.h**2
    L = np.zeros((n, n))
    idx = np.arange(n)
    ip = (idx + 1) % n
    im = (idx - 1) % n
    a_minus = a[im]
    L[idx, ip] += pref * a
    L[idx, im] += pref * a_minus
    L[idx, idx] -= pref * (a + a_minus)
    return L


def _symmetrizer(grid, t, weighted):
    """Node weights ``m`` for which ``m * L`` is symmetric."""
    u = grid.flow.param("u")(t, grid.theta)
    expo = u
    if weighted and grid.flow.weighted:
        expo = expo - grid.flow.param("U")(t, grid.theta)
    return np.exp(expo) * grid.h


def laplacian_apply(field: ScalarField, flow, t, weighted=False) -> ScalarField:
    """Apply the discrete Laplacian (``weighted=True`` subtracts ``<grad U, grad f>``)."""
    if field.grid.flow is not flow:
        raise GridMismatchError("field grid belongs to a different flow")
    if abs(field.t - t) > 1e-12:
        raise GridMismatchError(f"field is at t={field.t}, operator requested at t={t}")
    L = laplacian_matrix(field.grid, t, weighted)
    return field.with_values(L @ field.values, tag="generic")


def _heat_weighted(grid):
    # the heat flow of a weighted flow is driven by the weighted Laplacian
    return grid.flow.weighted


def _step(grid, t0, t1):
    dt = t1 - t0
    tm = 0.5 * (t0 + t1)
    weighted = _heat_weighted(grid)
    L = laplacian_matrix(grid, tm, weighted)
    if grid.scheme == "cn":
        n = L.shape[0]
        I = np.eye(n)
        return np.linalg.solve(I - 0.5 * dt * L, I + 0.5 * dt * L)
    m = _symmetrizer(grid, tm, weighted)
    r = np.sqrt(m)
    sym = (r[:, None] * L) / r[None, :]
    sym = 0.5 * (sym + sym.T)
    lam, V = np.linalg.eigh(sym)
    lam = np.minimum(lam, 0.0)
    E = (V * np.exp(dt * lam)) @ V.T
    return (E / r[:, None]) * r[None, :]


def _implicit_euler(grid, t0, t1):
    dt = t1 - t0
    L = laplacian_matrix(grid, 0.5 * (t0 + t1), _heat_weighted(grid))
    return np.linalg.solve(np.eye(L.shape[0]) - dt * L, np.eye(L.shape[0]))


def propagator_matrix(grid, s, t):
    """Matrix of ``P_{t,s}`` acting on node values (forward times ``s <= t``)."""
    if t < s - 1e-15:
        raise ValueError(f"propagator needs s <= t (got s={s}, t={t})")
    grid.flow.check_time([s, t])
    key = (round(float(s), 13), round(float(t), 13))
    cached = grid._prop_cache.get(key)
    if cached is not None:
        return cached
    n = grid.n_x
    P = np.eye(n)
    if grid.flow.homogeneous or t <= s:
        grid._prop_cache[key] = P
        return P
    nodes = grid.time_nodes(s, t)
    steps = list(zip(nodes[:-1], nodes[1:]))
    for j, (a, b) in enumerate(steps):
        if grid.scheme == "cn" and (j == 0 or j == len(steps) - 1):
            mid = 0.5 * (a + b)
            B = _implicit_euler(grid, mid, b) @ _implicit_euler(grid, a, mid)
        else:
            B = _step(grid, a, b)
        P = B @ P
    if len(grid._prop_cache) > 256:
        grid._prop_cache.clear()
    grid._prop_cache[key] = P
    return P


def heat_propagate(v_s: ScalarField, flow, s, t) -> ScalarField:
    """``P_{t,s} v_s``: solve the heat equation from time ``s`` up to ``t``."""
    if v_s.grid.flow is not flow:
        raise GridMismatchError("field grid belongs to a different flow")
    if abs(v_s.t - s) > 1e-12:
        raise GridMismatchError(f"field is at t={v_s.t}, not s={s}")
    P = propagator_matrix(v_s.grid, s, t)
    tag = v_s.tag if v_s.tag in ("heat_slice", "generic") else "generic"
    if tag == "generic":
        tag = "heat_slice"
    return ScalarField(v_s.grid, t, P @ v_s.values, tag)


def adjoint_heat_propagate(mu_t, flow, t, s) -> DiscreteMeasure:
    """``P^_{t,s} mu_t`` for ``s <= t``: the conjugate heat flow run backward.

    Accepts a :class:`DiscreteMeasure` or a density :class:`ScalarField`.
    """
    if isinstance(mu_t, ScalarField):
        if np.any(mu_t.values < 0):
            raise ContractError("negative input density")
        mu_t = DiscreteMeasure.from_density(mu_t.grid, mu_t.t, mu_t.values)
    if mu_t.grid.flow is not flow:
        raise GridMismatchError("measure grid belongs to a different flow")
    if abs(mu_t.t - t) > 1e-12:
        raise GridMismatchError(f"measure is at t={mu_t.t}, not t={t}")
    P = propagator_matrix(mu_t.grid, s, t)
    p = P.T @ mu_t.p
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if abs(total - 1.0) > 1e-9:
        raise ContractError(f"mass drift {total - 1.0:.3e} in conjugate propagation")
    return DiscreteMeasure(mu_t.grid, s, p / total)


def duality_residual(v: ScalarField, mu: DiscreteMeasure, flow, s, t) -> float:
    """``|<P_{t,s} v, mu> - <v, P^_{t,s} mu>|`` with ``v`` at ``s`` and ``mu`` at ``t``."""
    lhs = float(heat_propagate(v, flow, s, t).values @ mu.p)
    rhs = float(v.values @ adjoint_heat_propagate(mu, flow, t, s).p)
    return abs(lhs - rhs)


# --------------------------------------------------------------------------
# finite differences on the circle


def d_theta(values, h):
    return (np.roll(values, -1) - np.roll(values, 1)) / (2 * h)


def d2_theta(values, h):
    return (np.roll(values, -1) - 2 * values + np.roll(values, 1)) / h**2


def grad_norm_sq(field: ScalarField, t=None):
    """``|grad f|^2_g`` on nodes by centered differences."""
    grid = field.grid
    if grid.flow.homogeneous:
        return np.zeros(1)
    t = field.t if t is None else t
    u = grid.flow.param("u")(t, grid.theta)
    return np.exp(-2 * u) * d_theta(field.values, grid.h) ** 2


def hessian_coord(field: ScalarField, t=None):
    """Coordinate Hessian ``f'' - u' f'`` on nodes."""
    grid = field.grid
    t = field.t if t is None else t
    uth = grid.flow.param("u").d("theta")(t, grid.theta)
    return d2_theta(field.values, grid.h) - uth * d_theta(field.values, grid.h)


def export_csv(fields, path):
    """Write a field time series as ``t,node,value`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node", "value"])
        for f in fields:
            for i, val in enumerate(f.values):
                w.writerow([repr(float(f.t)), i, repr(float(val))])


# --------------------------------------------------------------------------
# Bochner residuals


def _bracket(grid, v, t, family, params):
    """The quantity inside the heat operator, on nodes."""
    flow = grid.flow
    weighted = family == "weighted_L0"
    L = laplacian_matrix(grid, t, weighted)
    lap_v = L @ v.values
    gn = grad_norm_sq(v, t)
    if family == "L0":
        return gn + 2 * lap_v - grid.S_values(t)
    if family == "weighted_L0":
        return gn - 2 * lap_v - grid.S_U_values(t)
    tau = flow.tau(t) + params.get("shift", 0.0)
    return gn - 2 * tau * lap_v - tau**2 * grid.S_values(t) + 0.5 * flow.n * tau


def bochner_residual_field(flow, v, t, family, params):
    if family not in ("L0", "Lminus", "weighted_L0"):
        raise ValueError(f"unknown Bochner family {family!r}")
    if v.tag != "heat_slice":
        raise ContractError("Bochner identities hold for heat-flow slices; tag the field 'heat_slice'")
    grid = v.grid
    if grid.flow is not flow:
        raise GridMismatchError("field grid belongs to a different flow")
    if family == "weighted_L0" and not flow.weighted:
        raise ValueError("weighted_L0 needs a weighted flow")
    if family == "Lminus" and flow.tau(t) + params.get("shift", 0.0) <= 0:
        raise ValueError("Lminus needs a positive backward time")
    dt = float(params.get("dt", grid.dt))
    v1 = heat_propagate(v, flow, t, t + dt)
    v2 = heat_propagate(v1, flow, t + dt, t + 2 * dt)
    phi = [_bracket(grid, w, w.t, family, params) for w in (v, v1, v2)]
    dphi = (phi[2] - phi[0]) / (2 * dt)
    weighted = family == "weighted_L0"
    t = t + dt
    v = v1
    lhs = dphi - laplacian_matrix(grid, t, weighted) @ phi[1]
    rhs = np.empty(grid.n_x)
    if flow.homogeneous:
        snap = snapshot_forward(flow, t)
        gi = 1.0 / snap.g[0, 0]
        if family == "L0":
            rhs[:] = -2 * snap.norm_S_sq - evaluate_D(snap, np.zeros(flow.n))
        else:
            tau = flow.tau(t) + params.get("shift", 0.0)
            A = tau * snap.S_tensor - 0.5 * snap.g
            norm = float(np.trace(np.linalg.inv(snap.g) @ A @ np.linalg.inv(snap.g) @ A))
            rhs[:] = -2 * norm - tau**2 * evaluate_D(snap, np.zeros(flow.n))
        del gi
        return ScalarField(grid, t, lhs - rhs, "generic")
    f = grid.fields(t)
    e2u = np.exp(2 * f["u"])
    vth = d_theta(v.values, grid.h)
    hess = hessian_coord(v, t)
    grad_v = vth / e2u  # raised index
    for i, th in enumerate(grid.theta):
        snap = snapshot_forward(flow, t, th)
        Sc = snap.S_tensor[0, 0]
        if family == "L0":
            A = Sc - hess[i]
            rhs[i] = -2 * (A / e2u[i]) ** 2 - evaluate_D(snap, [-grad_v[i]])
        elif family == "weighted_L0":
            A = hess[i] + Sc
            rhs[i] = -2 * (A / e2u[i]) ** 2 - evaluate_D_weighted(snap, [grad_v[i]])
        else:
            tau = flow.tau(t) + params.get("shift", 0.0)
            A = tau * Sc - 0.5 * e2u[i] + hess[i]
            rhs[i] = -2 * (A / e2u[i]) ** 2 - tau**2 * evaluate_D(snap, [grad_v[i] / tau])
    return ScalarField(grid, t, lhs - rhs, "generic")


__all__ = [
    "SpaceTimeGrid",
    "ScalarField",
    "DiscreteMeasure",
    "ContractError",
    "laplacian_matrix",
    "laplacian_apply",
    "propagator_matrix",
    "heat_propagate",
    "adjoint_heat_propagate",
    "duality_residual",
    "grad_norm_sq",
    "hessian_coord",
    "export_csv",
    "weighted_snapshot_from_plain",
]
