"""Lagrangians, Hamiltonians, cost tables and the Hopf-Lax semigroup.

Family time:  ``L0`` and ``Lplus`` use forward time by default; ``Lminus``
uses backward time ``tau = T - t``.  ``CostFamily(backward=True)`` runs ``L0``
in backward time (the dimensional statements are phrased that way).

Lagrangian:  ``L(v, x, r) = 1/2 * w(r) * (|v|^2_{g_r} + S_r(x))`` with
``w = 1`` (L0), ``sqrt(r + T0)`` (Lminus, Lplus).  Normalized costs multiply
the whole action by ``t - s`` (L0) or ``sqrt(t + T0) - sqrt(s + T0)`` (L+-),
unless an explicit ``norm`` window is supplied.

Two cost-table methods:

* ``separable``: exact when the metric and ``S`` do not depend on the point
  (homogeneous flows, circle flows with ``u = u(t)``).  The optimal path moves
  with coordinate speed proportional to ``1/(w a)`` (``g = a dtheta^2``), so
  the kinetic part is ``d^2 / (2 * int 1/(w a))`` and the potential part is
  the time integral of ``w S / 2``.
* ``action``: for spatially varying circle flows.  The ``K``-layer discrete
  action (chord speed and metric/``S`` at each layer's midpoint in time and
  space) is minimized over continuous knot positions by a batched Newton
  iteration, for both ways around the circle.
* ``dp``: Bellman recursion over node-valued paths with a transition window
  of ``window`` nodes.  Kept as a reference; node paths carry a quantization
  bias of order ``K h^2`` per unit displacement.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad

from .geometry import DomainError

KINDS = ("L0", "Lminus", "Lplus")


class DegenerateCostError(ValueError):
    pass


class InfeasiblePathError(ValueError):
    pass


@dataclass(frozen=True)
class CostFamily:
    kind: str = "L0"
    shift: float = 0.0
    normalized: bool = False
    weighted: bool = False
    backward: bool | None = None
    norm: tuple | None = None  # explicit normalization window (a, b)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cost family {self.kind!r}")
        if self.backward is None:
            object.__setattr__(self, "backward", self.kind == "Lminus")

    def weight(self, r):
        if self.kind == "L0":
            return np.ones_like(np.asarray(r, float)) if np.ndim(r) else 1.0
        arg = np.asarray(r, float) + self.shift
        if np.any(arg <= 0):
            raise DomainError(f"{self.kind} needs shifted time r + T0 > 0 (got {np.min(arg)})")
        out = np.sqrt(arg)
        return float(out) if out.ndim == 0 else out

    def norm_factor(self, s, t):
        """Multiplier turning the action into the normalized cost."""
        if not self.normalized:
            return 1.0
        a, b = self.norm if self.norm is not None else (s, t)
        if self.kind == "L0":
            f = b - a
        else:
            f = math.sqrt(b + self.shift) - math.sqrt(a + self.shift)
        if f == 0:
            raise DegenerateCostError("normalization window has zero length")
        return f

    def to_forward(self, flow, r):
        r = np.asarray(r, float)
        out = flow.T - r if self.backward else r
        return float(out) if out.ndim == 0 else out

    def from_forward(self, flow, t):
        return self.to_forward(flow, t)  # the map is an involution

    def label(self):
        s = self.kind
        if self.normalized:
            s = "normalized " + s
        if self.shift:
            s += f" (T0={self.shift:g})"
        return s


# --------------------------------------------------------------------------
# local data


def _metric_coeff(flow, t, theta):
    """``a`` with ``g = a dtheta^2`` (circle), or 1 for homogeneous flows."""
    if flow.homogeneous:
        return np.ones_like(np.asarray(theta, float)) if np.ndim(theta) else 1.0
    return np.exp(2 * flow.param("u")(t, theta))


def _S_at(flow, t, theta, weighted):
    if flow.homogeneous:
        from .pde import snapshot_forward

        val = snapshot_forward(flow, t).S
        return np.full(np.shape(theta), val) if np.ndim(theta) else val
    S = -flow.param("u").d("t")(t, theta)
    if weighted and flow.weighted:
        S = S + flow.param("U").d("t")(t, theta)
    return S


def lagrangian_eval(family: CostFamily, v, x, r, flow, window=None) -> float:
    """``1/2 * w(r) * (|v|^2 + S)`` (times the normalization factor if any)."""
    t = family.to_forward(flow, r)
    flow.check_time(t)
    w = family.weight(r)
    v = np.atleast_1d(np.asarray(v, float))
    if flow.homogeneous:
        from .pde import snapshot_forward

        snap = snapshot_forward(flow, t)
        speed2 = float(v @ snap.g @ v)
    else:
        speed2 = float(_metric_coeff(flow, t, x) * v[0] ** 2)
    S = float(_S_at(flow, t, x, family.weighted))
    nf = family.norm_factor(*window) if (family.normalized and window) else 1.0
    if family.normalized and window is None and family.norm is not None:
        nf = family.norm_factor(None, None)
    return 0.5 * nf * w * (speed2 + S)


def hamiltonian_eval(family: CostFamily, w_cov, x, r, flow, window=None) -> float:
    """Legendre transform ``|w|^2 / (2 c) - c S / 2`` with ``c = factor * weight``."""
    t = family.to_forward(flow, r)
    flow.check_time(t)
    c = family.weight(r)
    if family.normalized:
        if window is None and family.norm is None:
            raise DegenerateCostError("normalized family needs a window")
        c = c * (family.norm_factor(*window) if window else family.norm_factor(None, None))
    if c == 0:
        raise DegenerateCostError("zero Lagrangian weight")
    w_cov = np.atleast_1d(np.asarray(w_cov, float))
    if flow.homogeneous:
        from .pde import snapshot_forward

        gi = np.linalg.inv(snapshot_forward(flow, t).g)
        norm2 = float(w_cov @ gi @ w_cov)
    else:
        norm2 = float(w_cov[0] ** 2 / _metric_coeff(flow, t, x))
    S = float(_S_at(flow, t, x, family.weighted))
    return norm2 / (2 * c) - c * S / 2


# --------------------------------------------------------------------------
# cost tables


@dataclass
class CostTable:
    family: CostFamily
    s: float
    t: float
    values: np.ndarray
    method: str
    K: int = 0
    window: int = 0
    grid_hash: str = ""
    # geodesic data
    frac: object = None  # separable: callable r -> fraction of coordinate displacement
    signed_disp: np.ndarray | None = None  # separable: signed node displacement i -> j
    layers: np.ndarray | None = None  # dp: layer times
    back: list | None = None  # dp: back pointers per layer
    extra: dict = field(default_factory=dict)

    def metadata(self):
        return {
            "family": self.family.kind,
            "normalized": self.family.normalized,
            "shift": self.family.shift,
            "weighted": self.family.weighted,
            "backward": self.family.backward,
            "s": self.s,
            "t": self.t,
            "method": self.method,
            "K": self.K,
            "W": self.window,
            "grid_hash": self.grid_hash,
            "shape": list(self.values.shape),
        }

    def value_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()[:16]

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(self.metadata()) + "\n")
            np.savetxt(fh, self.values, delimiter=",", fmt="%.17g")


def spatially_constant(flow, samples=9):
    """True when metric and S do not depend on the point."""
    if flow.homogeneous:
        return True
    from . import expr as _expr

    keys = ["u"] + (["U"] if flow.weighted else [])
    for key in keys:
        p = flow.param(key)
        if isinstance(p, _expr.Expr):
            if p.depends_on("theta"):
                return False
            continue
        a, b = flow.forward_interval
        ts = np.linspace(a, b, samples)
        th = np.linspace(0, 2 * math.pi, samples, endpoint=False)
        T, TH = np.meshgrid(ts, th)
        if np.max(np.abs(p.d("theta")(T, TH))) > 0:
            return False
    return True


def _log_vol_density(flow, t, weighted):
    """``ln sqrt(det g)`` (plus ``-U`` if weighted) for spatially constant flows."""
    fam = flow.family
    if fam == "round_sphere":
        return 0.5 * flow.n * math.log(flow.param("r2")(t))
    if fam == "flat_torus":
        return sum(0.5 * math.log(flow.param(f"A{i + 1}")(t)) for i in range(flow.n))
    if fam == "static_manifold":
        return 0.0
    val = flow.param("u")(t, 0.0)
    if weighted and flow.weighted:
        val = val - flow.param("U")(t, 0.0)
    return float(val)


def integrate_S(flow, family: CostFamily, s, t):
    """``int_s^t w(r) S(r) dr`` for spatially constant S (family time)."""
    if t == s:
        return 0.0
    if family.kind == "L0":
        # S = -d/dt ln sqrt(det g) exactly; the backward sign flips twice
        a, b = family.to_forward(flow, s), family.to_forward(flow, t)
        val = -(_log_vol_density(flow, b, family.weighted) - _log_vol_density(flow, a, family.weighted))
        return -val if family.backward else val

    def f(r):
        return family.weight(r) * float(_S_at(flow, family.to_forward(flow, r), 0.0, family.weighted))

    return quad(f, s, t, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def _inv_mobility(flow, family, s, t):
    """``int_s^t dr / (w(r) a(r))`` and the fraction function."""

    def f(r):
        return 1.0 / (family.weight(r) * float(_metric_coeff(flow, family.to_forward(flow, r), 0.0)))

    total = quad(f, s, t, epsabs=1e-14, epsrel=1e-13, limit=200)[0]

    def frac(r):
        if r <= s:
            return 0.0
        if r >= t:
            return 1.0
        return quad(f, s, r, epsabs=1e-14, epsrel=1e-13, limit=200)[0] / total

    return total, frac


def _check_family_times(flow, family, s, t):
    if not t > s:
        raise DegenerateCostError(f"cost needs s < t in family time (got s={s}, t={t})")
    flow.check_time([family.to_forward(flow, s), family.to_forward(flow, t)])
    family.weight(np.array([s, t]))


def cost_table(flow, family: CostFamily, s, t, grid, K=None, method="auto", window=None) -> CostTable:
    """Pairwise cost ``L^{s,t}(x_i, y_j)`` on ``grid`` nodes (family time)."""
    _check_family_times(flow, family, s, t)
    nf = family.norm_factor(s, t)
    if method == "auto":
        method = "separable" if spatially_constant(flow) else "action"
    if method == "separable":
        if not spatially_constant(flow):
            raise ValueError("separable costs need spatially constant metric and S")
        pot = 0.5 * integrate_S(flow, family, s, t)
        n = grid.n_x
        if n == 1:
            vals = np.array([[pot]])
            disp = np.zeros((1, 1))
            frac = lambda r: 0.0  # noqa: E731
        else:
            idx = np.arange(n)
            diff = (idx[None, :] - idx[:, None]) % n
            disp = np.where(diff <= n // 2, diff, diff - n).astype(float)
            if n % 2 == 0:
                disp[diff == n // 2] = n // 2  # antipodes: move toward increasing index
            inv_mob, frac = _inv_mobility(flow, family, s, t)
            d = np.abs(disp) * grid.h
            vals = 0.5 * d**2 / inv_mob + pot
        return CostTable(family, s, t, nf * vals, "separable", 0, grid.n_x, grid.hash(), frac=frac, signed_disp=disp)
    if method == "action":
        return _action_table(flow, family, s, t, grid, K, nf)
    if method != "dp":
        raise ValueError(f"unknown cost method {method!r}")
    return _dp_table(flow, family, s, t, grid, K, window, nf)


def _layer_coeffs(flow, family, r, theta):
    """Metric coefficient, S and their first two theta-derivatives at family time r."""
    t = family.to_forward(flow, r)
    u = flow.param("u")
    uth, uthth = u.d("theta")(t, theta), u.d("theta").d("theta")(t, theta)
    alpha = np.exp(2 * u(t, theta))
    a1 = 2 * uth * alpha
    a2 = (2 * uthth + 4 * uth**2) * alpha
    ut = u.d("t")
    beta = -ut(t, theta)
    b1 = -ut.d("theta")(t, theta)
    b2 = -ut.d("theta").d("theta")(t, theta)
    if family.weighted and flow.weighted:
        Ut = flow.param("U").d("t")
        beta = beta + Ut(t, theta)
        b1 = b1 + Ut.d("theta")(t, theta)
        b2 = b2 + Ut.d("theta").d("theta")(t, theta)
    return alpha, a1, a2, beta, b1, b2


def _solve_tridiag(lower, diag, upper, rhs):
    """Batched Thomas algorithm along the last axis."""
    n = diag.shape[-1]
    c = np.zeros_like(diag)
    d = np.zeros_like(rhs)
    c[..., 0] = upper[..., 0] / diag[..., 0] if n > 1 else 0.0
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        denom = diag[..., i] - lower[..., i - 1] * c[..., i - 1]
        if i < n - 1:
            c[..., i] = upper[..., i] / denom
        d[..., i] = (rhs[..., i] - lower[..., i - 1] * d[..., i - 1]) / denom
    x = np.zeros_like(rhs)
    x[..., -1] = d[..., -1]
    for i in range(n - 2, -1, -1):
        x[..., i] = d[..., i] - c[..., i] * x[..., i + 1]
    return x


def _discrete_action(z, layers, flow, family, derivs=False):
    """Action of knot paths ``z[..., 0..K]``; optionally gradient and tridiagonal Hessian."""
    K = len(layers) - 1
    total = np.zeros(z.shape[:-1])
    if derivs:
        g = np.zeros_like(z)
        hd = np.zeros_like(z)
        ho = np.zeros(z.shape[:-1] + (K,))
    for k in range(K):
        a, b = z[..., k], z[..., k + 1]
        dr = layers[k + 1] - layers[k]
        rm = 0.5 * (layers[k] + layers[k + 1])
        w = 0.5 * family.weight(rm)
        m = 0.5 * (a + b)
        dl = b - a
        al, a1, a2, be, b1, b2 = _layer_coeffs(flow, family, rm, m)
        total += w * (al * dl**2 / dr + dr * be)
        if derivs:
            Pm = a1 * dl**2 / dr + dr * b1
            Pd = 2 * al * dl / dr
            Pmm = a2 * dl**2 / dr + dr * b2
            Pmd = 2 * a1 * dl / dr
            Pdd = 2 * al / dr
            g[..., k] += w * (0.5 * Pm - Pd)
            g[..., k + 1] += w * (0.5 * Pm + Pd)
            hd[..., k] += w * (0.25 * Pmm - Pmd + Pdd)
            hd[..., k + 1] += w * (0.25 * Pmm + Pmd + Pdd)
            ho[..., k] = w * (0.25 * Pmm - Pdd)
    if derivs:
        return total, g, hd, ho
    return total


def minimize_action(x0, x1, layers, flow, family, iters=60, tol=1e-13):
    """Optimal interior knots for paths from ``x0`` to ``x1`` (arrays of lifts)."""
    K = len(layers) - 1
    frac = (np.asarray(layers) - layers[0]) / (layers[-1] - layers[0])
    z = x0[..., None] + (x1 - x0)[..., None] * frac
    if K == 1:
        return z, _discrete_action(z, layers, flow, family)
    lam = np.zeros(z.shape[:-1])
    for _ in range(iters):
        A, g, hd, ho = _discrete_action(z, layers, flow, family, True)
        gi = g[..., 1:-1]
        if np.max(np.abs(gi)) < tol * max(1.0, np.max(np.abs(A))):
            break
        diag = hd[..., 1:-1] + lam[..., None]
        off = ho[..., 1:-1]
        step = _solve_tridiag(off, diag, off, -gi)
        step = np.clip(step, -0.5, 0.5)
        if np.max(np.abs(step)) < 1e-12:
            break
        z_new = z.copy()
        z_new[..., 1:-1] += step
        A_new = _discrete_action(z_new, layers, flow, family)
        better = A_new <= A + 1e-15 * np.abs(A)
        z = np.where(better[..., None], z_new, z)
        lam = np.where(better, lam * 0.3, np.maximum(lam * 10, 1e-3 * np.abs(hd[..., 1:-1]).max(axis=-1) + 1e-12))
    return z, _discrete_action(z, layers, flow, family)


def _action_table(flow, family, s, t, grid, K, nf):
    n = grid.n_x
    if K is None:
        K = max(4, int(math.ceil((t - s) / grid.h)))
    layers = np.linspace(s, t, int(K) + 1)
    th = grid.theta
    X0 = np.broadcast_to(th[:, None], (n, n))
    disp = (th[None, :] - th[:, None] + math.pi) % (2 * math.pi) - math.pi
    if n % 2 == 0:
        disp[np.isclose(np.abs(disp), math.pi)] = math.pi
    other = disp - 2 * math.pi * np.sign(disp)
    other[disp == 0] = 2 * math.pi
    best_z, best_A = minimize_action(X0, X0 + disp, layers, flow, family)
    z2, A2 = minimize_action(X0, X0 + other, layers, flow, family)
    use2 = A2 < best_A - 1e-14 * np.abs(best_A)
    best_A = np.where(use2, A2, best_A)
    best_z = np.where(use2[..., None], z2, best_z)
    return CostTable(family, s, t, nf * best_A, "action", int(K), n, grid.hash(), layers=layers, extra={"paths": best_z})


def _chord_data(flow, family, grid, r):
    """Distance matrix and arclength-averaged S between all node pairs at family time ``r``."""
    t = family.to_forward(flow, r)
    n, h = grid.n_x, grid.h
    half = grid.theta + 0.5 * h
    seg = np.exp(flow.param("u")(t, half)) * h  # segment lengths
    Sh = _S_at(flow, t, half, family.weighted)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    cumS = np.concatenate([[0.0], np.cumsum(seg * Sh)])
    total, totalS = cum[-1], cumS[-1]
    i = np.arange(n)
    c, cS = cum[:n], cumS[:n]
    wrap = i[None, :] < i[:, None]
    fwd = c[None, :] - c[:, None]  # arc from i to j in the increasing direction
    fwdS = cS[None, :] - cS[:, None]
    fwd = np.where(wrap, fwd + total, fwd)
    fwdS = np.where(wrap, fwdS + totalS, fwdS)
    bwd = total - fwd
    bwdS = totalS - fwdS
    use_fwd = fwd <= bwd
    d = np.where(use_fwd, fwd, bwd)
    intS = np.where(use_fwd, fwdS, bwdS)
    with np.errstate(invalid="ignore", divide="ignore"):
        avgS = np.where(d > 0, intS / np.where(d > 0, d, 1.0), _S_at(flow, t, grid.theta, family.weighted)[:, None])
    return d, avgS


def _dp_table(flow, family, s, t, grid, K, window, nf):
    n = grid.n_x
    if K is None:
        K = max(1, int(math.ceil((t - s) / grid.h)))
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    W = n if window is None else int(window)
    layers = np.linspace(s, t, K + 1)
    idx = np.arange(n)
    circ = np.abs(idx[None, :] - idx[:, None])
    circ = np.minimum(circ, n - circ)
    allowed = circ <= W // 2 if W < n else np.ones((n, n), bool)
    C = None
    back = []
    for k in range(K):
        a, b = layers[k], layers[k + 1]
        dr = b - a
        rm = 0.5 * (a + b)
        d, avgS = _chord_data(flow, family, grid, rm)
        w = family.weight(rm)
        step = 0.5 * w * (d**2 / dr + dr * avgS)
        step = np.where(allowed, step, np.inf)
        if C is None:
            C = step.copy()
            back.append(None)
            continue
        # C_new[i, j] = min_m C[i, m] + step[m, j]
        tot = C[:, :, None] + step[None, :, :]
        arg = np.argmin(tot, axis=1)
        C = np.take_along_axis(tot, arg[:, None, :], axis=1)[:, 0, :]
        back.append(arg.astype(np.int32))
    if not np.all(np.isfinite(C)):
        raise InfeasiblePathError(f"window of {W} nodes cannot connect all pairs in {K} layers; enlarge the window")
    return CostTable(family, s, t, nf * C, "dp", K, W, grid.hash(), layers=layers, back=back)


def dp_path(table: CostTable, i, j):
    """Node sequence over the DP layers from ``i`` to ``j`` (lowest-index ties)."""
    K = table.K
    path = [j]
    cur = j
    for k in range(K - 1, 0, -1):
        cur = int(table.back[k][i, cur])
        path.append(cur)
    path.append(i)
    return path[::-1]


# --------------------------------------------------------------------------
# Hopf-Lax and HJ residuals


def hopf_lax(phi, flow, family: CostFamily, s, t, table=None, K=None, method="auto"):
    """``Q^{s,t} phi(y) = min_i phi(x_i) + L^{s,t}(x_i, y)`` on the grid."""
    from .pde import ScalarField

    if t == s:
        return phi.with_values(phi.values.copy(), tag="potential")
    grid = phi.grid
    if table is None:
        table = cost_table(flow, family, s, t, grid, K=K, method=method)
    vals = np.min(phi.values[:, None] + table.values, axis=0)
    return ScalarField(grid, family.to_forward(flow, t), vals, "potential")


def hamiltonian_nodes(flow, family, grid, r, grad_sq, window=None):
    """Hamiltonian on nodes given ``|w|^2_g`` values."""
    t = family.to_forward(flow, r)
    c = family.weight(r)
    if family.normalized:
        c = c * (family.norm_factor(*window) if window else family.norm_factor(None, None))
    if flow.homogeneous:
        S = np.array([float(_S_at(flow, t, 0.0, family.weighted))])
    else:
        S = _S_at(flow, t, grid.theta, family.weighted)
    return grad_sq / (2 * c) - c * S / 2


def upwind_grad_sq(values, flow, t, grid):
    """Godunov upwind ``|grad Q|^2_g`` for a convex Hamiltonian minimized at 0."""
    if flow.homogeneous:
        return np.zeros_like(values)
    h = grid.h
    dm = (values - np.roll(values, 1)) / h
    dp = (np.roll(values, -1) - values) / h
    g2 = np.maximum(np.maximum(dm, 0.0) ** 2, np.minimum(dp, 0.0) ** 2)
    return np.exp(-2 * flow.param("u")(t, grid.theta)) * g2


def hj_residual(trajectory, rs, flow, family: CostFamily, test_measure, window=None):
    """Max over interior samples of ``|d/dr int Q_r dmu + int H(dQ_r) dmu|``.

    ``trajectory`` holds Hopf-Lax values at the family times ``rs``
    (uniformly spaced, at least three).
    """
    if len(trajectory) < 3:
        raise ValueError("need at least three trajectory samples")
    rs = np.asarray(rs, float)
    p = test_measure.p
    grid = test_measure.grid
    ints = np.array([float(q.values @ p) for q in trajectory])
    worst = 0.0
    for k in range(1, len(rs) - 1):
        ddr = (ints[k + 1] - ints[k - 1]) / (rs[k + 1] - rs[k - 1])
        t = family.to_forward(flow, rs[k])
        g2 = upwind_grad_sq(trajectory[k].values, flow, t, grid)
        H = hamiltonian_nodes(flow, family, grid, rs[k], g2, window)
        worst = max(worst, abs(ddr + float(H @ p)))
    return worst


def shifted_family(family: CostFamily, T0):
    return replace(family, shift=T0)
