"""Model flows, pointwise geometry and the D-tensor.

Every flow stores its parameters in forward time ``t``.  A flow declared with
``orientation="backward"`` has parameters written in ``tau``; they are
converted once, at construction, through ``t = T - tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import expr as _expr

FAMILIES = ("round_sphere", "flat_torus", "circle_conformal", "weighted_circle", "static_manifold")
CIRCLE_FAMILIES = ("circle_conformal", "weighted_circle")
EIG_TOL = 1e-10
RANGE_TOL = 1e-8


class DomainError(ValueError):
    """A time or point outside the flow's domain."""


class InvalidFlowError(ValueError):
    """Non-positive metric data or inconsistent parameters."""


# --------------------------------------------------------------------------
# parameters


class CallableParam:
    """Parameter given by plain callables ``f(t, theta)`` and their derivatives.

    ``derivs`` maps a derivative label to a callable.  Labels are strings of
    variable names joined by commas in the order ``t`` before ``theta``, e.g.
    ``""`` (value), ``"t"``, ``"t,t"``, ``"theta"``, ``"t,theta"``.
    """

    def __init__(self, derivs: Mapping[str, Callable], label: str = ""):
        self.derivs = dict(derivs)
        self.label = label

    def _key(self, extra=None):
        parts = [p for p in self.label.split(",") if p]
        if extra:
            parts.append(extra)
        parts.sort(key=lambda v: 0 if v == "t" else 1)
        return ",".join(parts)

    def __call__(self, t=0.0, theta=0.0):
        key = self._key()
        if key not in self.derivs:
            raise InvalidFlowError(f"derivative {key or 'value'!r} not supplied")
        t_arr, th_arr = np.broadcast_arrays(np.asarray(t, float), np.asarray(theta, float))
        out = np.asarray(self.derivs[key](t_arr, th_arr), float)
        out = np.broadcast_to(out, t_arr.shape).copy()
        return float(out) if out.ndim == 0 else out

    def d(self, var):
        if var not in ("t", "theta"):
            raise ValueError(f"cannot differentiate with respect to {var!r}")
        return CallableParam(self.derivs, self._key(var))


class _Reversed:
    """``p(T - t, theta)`` with the chain-rule sign on time derivatives."""

    def __init__(self, base, T, sign=1.0):
        self.base, self.T, self.sign = base, float(T), sign

    def __call__(self, t=0.0, theta=0.0):
        return self.sign * self.base(self.T - np.asarray(t, float), theta)

    def d(self, var):
        cache = self.__dict__.setdefault("_dcache", {})
        if var not in cache:
            sign = -self.sign if var == "t" else self.sign
            cache[var] = _Reversed(self.base.d(var), self.T, sign)
        return cache[var]


def as_param(value):
    """Coerce a string, number, Expr, callable-dict or CallableParam."""
    if isinstance(value, (_expr.Expr, CallableParam, _Reversed)):
        return value
    if isinstance(value, (str, int, float)):
        return _expr.parse(value)
    if isinstance(value, Mapping):
        return CallableParam(value)
    raise InvalidFlowError(f"cannot interpret parameter {value!r}")


def _reverse(param, T):
    if isinstance(param, _expr.Expr):
        return param.substitute("t", _expr.const(T) - _expr.var("t"))
    return _Reversed(param, T)


_REQUIRED = {
    "round_sphere": ("r2",),
    "flat_torus": (),
    "circle_conformal": ("u",),
    "weighted_circle": ("u", "U"),
    "static_manifold": (),
}


@dataclass(frozen=True)
class FlowSpec:
    """A closed-form model flow.

    Parameters (all functions of the flow's native time, plus ``theta`` for
    circle families):

    * ``round_sphere``: ``r2`` = squared radius; the metric is ``r2 * g_{S^n}``.
    * ``flat_torus``: ``A1 .. An`` = squared side scales; ``g = sum A_i dx_i^2``
      on the torus with periods ``2*pi``.
    * ``circle_conformal``: ``u``; ``g = exp(2u) dtheta^2``.
    * ``weighted_circle``: ``u`` and weight potential ``U``.
    * ``static_manifold``: constant sectional curvature ``kappa`` (a number,
      default 1) and optional ``volume`` when ``kappa <= 0``.
    """

    family: str
    n: int
    interval: tuple
    params: dict = field(default_factory=dict)
    orientation: str = "forward"
    T: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidFlowError(f"unknown family {self.family!r}")
        if self.orientation not in ("forward", "backward"):
            raise InvalidFlowError(f"unknown orientation {self.orientation!r}")
        n = int(self.n)
        if n < 1:
            raise InvalidFlowError("dimension must be positive")
        if self.family in CIRCLE_FAMILIES and n != 1:
            raise InvalidFlowError("circle families have dimension 1")
        a, b = (float(v) for v in self.interval)
        if not a < b:
            raise InvalidFlowError("time interval must satisfy t_min < t_max")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "interval", (a, b))
        required = _REQUIRED[self.family]
        if self.family == "flat_torus":
            required = tuple(f"A{i + 1}" for i in range(n))
        missing = [k for k in required if k not in self.params]
        if missing:
            raise InvalidFlowError(f"missing parameters {missing} for {self.family}")
        params = {}
        for key, value in self.params.items():
            if key in ("kappa", "volume"):
                params[key] = float(value)
            else:
                params[key] = as_param(value)
        object.__setattr__(self, "params", params)
        fwd = {}
        for key, p in params.items():
            if isinstance(p, float) or self.orientation == "forward":
                fwd[key] = p
            else:
                fwd[key] = _reverse(p, self.T)
        object.__setattr__(self, "_fwd", fwd)

    # -- time conventions -------------------------------------------------
    @property
    def homogeneous(self):
        return self.family not in CIRCLE_FAMILIES

    @property
    def weighted(self):
        return self.family == "weighted_circle"

    def forward_time(self, native):
        """Forward time ``t`` for a native time value."""
        native = np.asarray(native, float)
        out = native if self.orientation == "forward" else self.T - native
        return float(out) if out.ndim == 0 else out

    def native_time(self, t):
        t = np.asarray(t, float)
        out = t if self.orientation == "forward" else self.T - t
        return float(out) if out.ndim == 0 else out

    def tau(self, t):
        """Backward time ``tau = T - t`` for a forward time."""
        return self.T - t

    def t_of_tau(self, tau):
        return self.T - tau

    @property
    def forward_interval(self):
        a, b = (self.forward_time(v) for v in self.interval)
        return (min(a, b), max(a, b))

    def check_time(self, t, slack=1e-12):
        a, b = self.forward_interval
        t_arr = np.atleast_1d(np.asarray(t, float))
        if np.any(t_arr < a - slack) or np.any(t_arr > b + slack):
            raise DomainError(f"forward time {t} outside [{a}, {b}]")

    def param(self, key):
        """Forward-time parameter object."""
        return self._fwd[key]

    def shifted(self, T0):
        """The same flow with forward time translated: ``g'(t) = g(t - T0)``."""
        params = {}
        for key, p in self._fwd.items():
            if isinstance(p, float):
                params[key] = p
            elif isinstance(p, _expr.Expr):
                params[key] = p.substitute("t", _expr.var("t") - _expr.const(T0))
            else:
                params[key] = _Reversed(_Reversed(p, -T0), 0.0)
        a, b = self.forward_interval
        return FlowSpec(self.family, self.n, (a + T0, b + T0), params, "forward", self.T + T0, self.name)

    # -- volume -----------------------------------------------------------
    def total_volume(self, t):
        """Closed-form total volume at forward time ``t`` (circle: quadrature)."""
        n = self.n
        if self.family == "round_sphere":
            r2 = self.param("r2")(t)
            return _unit_sphere_volume(n) * r2 ** (n / 2)
        if self.family == "flat_torus":
            vol = (2 * math.pi) ** n
            for i in range(n):
                vol *= math.sqrt(self.param(f"A{i + 1}")(t))
            return vol
        if self.family == "static_manifold":
            kappa = self.params.get("kappa", 1.0)
            if kappa > 0:
                return _unit_sphere_volume(n) * kappa ** (-n / 2)
            return self.params.get("volume", 1.0)
        from scipy.integrate import quad

        u = self.param("u")
        return quad(lambda th: math.exp(u(t, th)), 0.0, 2 * math.pi, limit=200, epsabs=1e-14, epsrel=1e-13)[0]


def _unit_sphere_volume(n):
    return 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def static_flat_circle(interval=(0.0, 1.0)):
    return FlowSpec("circle_conformal", 1, interval, {"u": "0"}, name="static flat circle")


def validate_flow(flow, n_samples=7, rel_tol=1e-6, seed=0):
    """Compare supplied derivatives with central finite differences.

    Returns the worst relative discrepancy; raises :class:`InvalidFlowError`
    above ``rel_tol``.
    """
    rng = np.random.default_rng(seed)
    a, b = flow.forward_interval
    worst = 0.0
    for key, p in flow._fwd.items():
        if isinstance(p, float):
            continue
        checks = [((), "t"), (("t",), "t"), ((), "theta"), (("theta",), "theta"), (("t",), "theta")]
        for base_path, var in checks:
            base = p
            try:
                for v in base_path:
                    base = base.d(v)
                deriv = base.d(var)
            except InvalidFlowError:
                continue
            for _ in range(n_samples):
                t = a + (b - a) * (0.1 + 0.8 * rng.random())
                th = 2 * math.pi * rng.random()
                eps = 1e-5 * max(1.0, b - a)
                try:
                    exact = deriv(t, th)
                except InvalidFlowError:
                    break
                if var == "t":
                    fd = (base(t + eps, th) - base(t - eps, th)) / (2 * eps)
                else:
                    fd = (base(t, th + eps) - base(t, th - eps)) / (2 * eps)
                err = abs(exact - fd) / max(1.0, abs(exact))
                worst = max(worst, err)
    if worst > rel_tol:
        raise InvalidFlowError(f"derivative callables disagree with finite differences (rel err {worst:.2e})")
    return worst


# --------------------------------------------------------------------------
# snapshots


@dataclass
class GeometrySnapshot:
    """Geometric data at one space-time point in forward time.

    Tensors are coordinate matrices: spheres use an orthonormal frame of the
    unit round metric (so ``g = r2 * I``), tori the flat coordinates and
    circles the angle ``theta``.  ``grad_*`` are vectors (index raised),
    ``div_S`` is a covector.
    """

    t: float
    x: object
    n: int
    g: np.ndarray
    S_tensor: np.ndarray
    S: float
    Ric: np.ndarray
    grad_S: np.ndarray
    div_S: np.ndarray
    dt_S: float
    lap_S: float
    norm_S_sq: float
    family: str = ""
    # weighted data (None when the flow carries no weight)
    U: float | None = None
    grad_U: np.ndarray | None = None
    hess_U: np.ndarray | None = None
    dt_U: float | None = None
    S_U: float | None = None
    grad_S_U: np.ndarray | None = None
    dt_S_U: float | None = None
    lap_U_S_U: float | None = None

    @property
    def dtau_S(self):
        """Backward-time derivative of S."""
        return -self.dt_S

    @property
    def weighted(self):
        return self.grad_U is not None

    def inner(self, X, Y):
        return float(np.asarray(X) @ self.g @ np.asarray(Y))

    def check_invariants(self, tol=1e-12):
        gi = np.linalg.inv(self.g)
        trace = float(np.trace(gi @ self.S_tensor))
        scale = max(1.0, abs(self.S))
        if abs(trace - self.S) > tol * scale:
            raise InvalidFlowError("S differs from the trace of the S-tensor")
        for name in ("g", "S_tensor", "Ric"):
            m = getattr(self, name)
            if np.max(np.abs(m - m.T), initial=0.0) > tol * max(1.0, np.max(np.abs(m))):
                raise InvalidFlowError(f"{name} is not symmetric")
        if np.min(np.linalg.eigvalsh(self.g)) <= 0:
            raise InvalidFlowError("metric is not positive definite")
        return True

    def to_record(self):
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
            elif isinstance(value, (float, int, str)) or value is None:
                out[key] = value
            else:
                out[key] = float(value) if np.isscalar(value) else str(value)
        return out


def circle_fields(flow, t, theta):
    """Arrays of ``u`` (and ``U``) with all derivatives used downstream."""
    u = flow.param("u")
    ut = u.d("t")
    uth = u.d("theta")
    f = {
        "u": u(t, theta),
        "u_t": ut(t, theta),
        "u_tt": ut.d("t")(t, theta),
        "u_th": uth(t, theta),
        "u_thth": uth.d("theta")(t, theta),
        "u_tth": ut.d("theta")(t, theta),
        "u_tthth": ut.d("theta").d("theta")(t, theta),
    }
    if flow.weighted:
        U = flow.param("U")
        Ut = U.d("t")
        Uth = U.d("theta")
        f.update(
            {
                "U": U(t, theta),
                "U_t": Ut(t, theta),
                "U_tt": Ut.d("t")(t, theta),
                "U_th": Uth(t, theta),
                "U_thth": Uth.d("theta")(t, theta),
                "U_tth": Ut.d("theta")(t, theta),
                "U_tthth": Ut.d("theta").d("theta")(t, theta),
            }
        )
    return f


def snapshot(flow: FlowSpec, t, x=0.0, validate=True) -> GeometrySnapshot:
    """Geometry of ``flow`` at native time ``t`` and point ``x``."""
    tn = float(t)
    a, b = flow.interval
    if tn < a - 1e-12 or tn > b + 1e-12:
        raise DomainError(f"time {tn} outside {flow.interval}")
    tf = flow.forward_time(tn)
    snap = _snapshot_forward(flow, tf, x)
    if validate:
        snap.check_invariants()
    return snap


def _snapshot_forward(flow, t, x):
    n = flow.n
    fam = flow.family
    zero_v = np.zeros(n)
    if fam == "round_sphere":
        r2p = flow.param("r2")
        r2, r2t, r2tt = r2p(t), r2p.d("t")(t), r2p.d("t").d("t")(t)
        if not r2 > 0:
            raise InvalidFlowError(f"r2({t}) = {r2} is not positive")
        g = r2 * np.eye(n)
        St = -0.5 * r2t * np.eye(n)
        S = -0.5 * n * r2t / r2
        dt_S = -0.5 * n * (r2tt / r2 - r2t**2 / r2**2)
        norm = n * r2t**2 / (4 * r2**2)
        Ric = (n - 1) * np.eye(n)
        return GeometrySnapshot(t, x, n, g, St, S, Ric, zero_v.copy(), zero_v.copy(), dt_S, 0.0, norm, fam)
    if fam == "flat_torus":
        A = np.array([flow.param(f"A{i + 1}")(t) for i in range(n)])
        At = np.array([flow.param(f"A{i + 1}").d("t")(t) for i in range(n)])
        Att = np.array([flow.param(f"A{i + 1}").d("t").d("t")(t) for i in range(n)])
        if np.any(A <= 0):
            raise InvalidFlowError(f"torus scales {A} not positive at t={t}")
        g = np.diag(A)
        St = np.diag(-0.5 * At)
        S = float(np.sum(-0.5 * At / A))
        dt_S = float(np.sum(-0.5 * (Att / A - At**2 / A**2)))
        norm = float(np.sum(0.25 * At**2 / A**2))
        return GeometrySnapshot(t, x, n, g, St, S, np.zeros((n, n)), zero_v.copy(), zero_v.copy(), dt_S, 0.0, norm, fam)
    if fam == "static_manifold":
        kappa = flow.params.get("kappa", 1.0)
        z = np.zeros((n, n))
        return GeometrySnapshot(t, x, n, np.eye(n), z, 0.0, (n - 1) * kappa * np.eye(n), zero_v.copy(), zero_v.copy(), 0.0, 0.0, 0.0, fam)
    # circle families
    th = float(x)
    f = circle_fields(flow, t, th)
    e2 = math.exp(2 * f["u"])
    em2 = 1.0 / e2
    g = np.array([[e2]])
    St = np.array([[-f["u_t"] * e2]])
    S = -f["u_t"]
    grad_S = np.array([-em2 * f["u_tth"]])
    div_S = np.array([-f["u_tth"]])
    dt_S = -f["u_tt"]
    lap_S = -em2 * (f["u_tthth"] - f["u_th"] * f["u_tth"])
    norm = f["u_t"] ** 2
    snap = GeometrySnapshot(t, th, 1, g, St, S, np.zeros((1, 1)), grad_S, div_S, dt_S, lap_S, norm, fam)
    if flow.weighted:
        U_th, U_t = f["U_th"], f["U_t"]
        SU_th = -f["u_tth"] + f["U_tth"]
        SU_thth = -f["u_tthth"] + f["U_tthth"]
        snap.U = float(f["U"])
        snap.grad_U = np.array([em2 * U_th])
        snap.hess_U = np.array([[f["U_thth"] - f["u_th"] * U_th]])
        snap.dt_U = U_t
        snap.S_U = S + U_t
        snap.grad_S_U = np.array([em2 * SU_th])
        snap.dt_S_U = -f["u_tt"] + f["U_tt"]
        snap.lap_U_S_U = em2 * (SU_thth - f["u_th"] * SU_th) - em2 * U_th * SU_th
    return snap


# --------------------------------------------------------------------------
# the D-tensor


def D_parts(snap: GeometrySnapshot):
    """Homogeneity split ``(c, b, Q)`` with ``D(X) = c + b.X + X^T Q X``."""
    c = snap.dt_S - snap.lap_S - 2.0 * snap.norm_S_sq
    b = 4.0 * np.asarray(snap.div_S, float) - 2.0 * (snap.g @ snap.grad_S)
    Q = 2.0 * (snap.Ric - snap.S_tensor)
    return float(c), b, Q


def _vector(snap, X):
    X = np.atleast_1d(np.asarray(X, float))
    if X.shape != (snap.n,):
        raise ValueError(f"tangent vector of shape {X.shape} does not match dimension {snap.n}")
    return X


def evaluate_D(snap: GeometrySnapshot, X) -> float:
    """``D(X) = dS/dt - Lap S - 2|S|^2 + 4 div S(X) - 2<grad S, X> + 2(Ric - S)(X, X)``."""
    X = _vector(snap, X)
    c, b, Q = D_parts(snap)
    return float(c + b @ X + X @ Q @ X)


@dataclass
class MinimizeResult:
    min_value: float
    argmin: np.ndarray | None
    witness: np.ndarray | None = None  # descent direction when unbounded below

    @property
    def unbounded(self):
        return self.min_value == -math.inf


def _orthonormal_frame(g):
    L = np.linalg.cholesky(g)
    return np.linalg.inv(L).T  # X = M Y gives X^T g X = Y^T Y


def minimize_quadratic(c, b, Q, g):
    """Minimize ``c + b.X + X^T Q X`` over tangent vectors (see :func:`minimize_D`)."""
    M = _orthonormal_frame(g)
    Qh = M.T @ Q @ M
    Qh = 0.5 * (Qh + Qh.T)
    bh = M.T @ b
    lam, V = np.linalg.eigh(Qh)
    if lam[0] < -EIG_TOL:
        return MinimizeResult(-math.inf, None, M @ V[:, 0])
    coeff = V.T @ bh
    null = np.abs(lam) <= EIG_TOL
    bnorm = float(np.linalg.norm(bh))
    if np.any(null):
        resid = float(np.linalg.norm(coeff[null]))
        if resid > RANGE_TOL * bnorm and resid > 0:
            direction = V[:, null] @ coeff[null]
            return MinimizeResult(-math.inf, None, -(M @ direction))
    pos = ~null
    y = np.zeros_like(bh)
    y_coeff = np.zeros_like(coeff)
    y_coeff[pos] = -0.5 * coeff[pos] / lam[pos]
    y = V @ y_coeff
    value = c - 0.25 * float(np.sum(coeff[pos] ** 2 / lam[pos]))
    return MinimizeResult(float(value), M @ y)


def minimize_D(snap: GeometrySnapshot) -> MinimizeResult:
    """Closed-form infimum of ``X -> D(X)`` at the snapshot point.

    Eigenvalues of the quadratic part (in a g-orthonormal frame) below
    ``-1e-10`` give ``-inf``; eigenvalues within ``1e-10`` of zero are treated
    as a null space, and the linear part must lie in the range up to
    ``1e-8 |b|``.
    """
    c, b, Q = D_parts(snap)
    return minimize_quadratic(c, b, Q, snap.g)


def weighted_D_parts(snap: GeometrySnapshot, N=math.inf):
    """``(c, b, Q)`` for the weighted tensor, before the finite-N correction."""
    if not snap.weighted:
        raise ValueError("snapshot carries no weight")
    m = snap.n
    if N < m:
        raise ValueError(f"N = {N} is below the manifold dimension {m}")
    gU = snap.grad_U
    div_U = np.asarray(snap.div_S, float) - snap.S_tensor @ gU
    Ric_U = snap.Ric + snap.hess_U
    c = snap.dt_S_U - snap.lap_U_S_U - 2.0 * snap.norm_S_sq
    b = 4.0 * div_U - 2.0 * (snap.g @ snap.grad_S_U)
    Q = 2.0 * (Ric_U - snap.S_tensor)
    return float(c), b, Q


def evaluate_D_weighted(snap: GeometrySnapshot, X, N=math.inf) -> float:
    """Weighted tensor with dimension parameter ``N`` (``math.inf`` allowed).

    ``D_{U,N}(X) = D_{U,inf}(X) - 2(<grad U, X> - dU/dt)^2 / (N - m)``.
    """
    X = _vector(snap, X)
    c, b, Q = weighted_D_parts(snap, N)
    value = c + b @ X + X @ Q @ X
    if math.isinf(N):
        return float(value)
    numer = snap.inner(snap.grad_U, X) - snap.dt_U
    if N == snap.n:
        if numer != 0.0:
            raise ZeroDivisionError("N equals the dimension while <grad U, X> - dU/dt is nonzero")
        return float(value)
    return float(value - 2.0 * numer**2 / (N - snap.n))


def weighted_snapshot_from_plain(snap: GeometrySnapshot) -> GeometrySnapshot:
    """Attach a zero weight to an unweighted snapshot."""
    n = snap.n
    out = GeometrySnapshot(**{k: v for k, v in snap.__dict__.items()})
    out.U = 0.0
    out.grad_U = np.zeros(n)
    out.hess_U = np.zeros((n, n))
    out.dt_U = 0.0
    out.S_U = snap.S
    out.grad_S_U = np.array(snap.grad_S, float)
    out.dt_S_U = snap.dt_S
    out.lap_U_S_U = snap.lap_S
    return out


# --------------------------------------------------------------------------
# sphere classification


@dataclass
class SphereClassification:
    is_ricci_flow: bool
    is_srf: bool
    satisfies_D: bool
    ricci_margin: float  # sup |d r2/dt + 2(n-1)|
    srf_margin: float  # inf (d r2/dt + 2(n-1))
    concavity_margin: float  # inf (-d^2 r2/dt^2)
    min_D: float  # inf over samples of minimize_D


def classify_sphere_flow(flow: FlowSpec, samples=201, ricci_tol=1e-10) -> SphereClassification:
    """Evaluate the Ricci-flow, super-Ricci-flow and D criteria on a time sample."""
    if flow.family != "round_sphere":
        raise ValueError("classify_sphere_flow needs a round_sphere flow")
    n = flow.n
    a, b = flow.forward_interval
    ts = np.linspace(a, b, samples)
    r2 = flow.param("r2")
    r2t = np.array([r2.d("t")(t) for t in ts])
    r2tt = np.array([r2.d("t").d("t")(t) for t in ts])
    srf = r2t + 2 * (n - 1)
    ricci_margin = float(np.max(np.abs(srf)))
    srf_margin = float(np.min(srf))
    conc = float(np.min(-r2tt))
    min_D = min(minimize_D(_snapshot_forward(flow, t, 0.0)).min_value for t in ts)
    return SphereClassification(
        is_ricci_flow=ricci_margin <= ricci_tol * max(1.0, 2 * (n - 1)),
        is_srf=srf_margin >= 0,
        satisfies_D=srf_margin >= 0 and conc >= 0,
        ricci_margin=ricci_margin,
        srf_margin=srf_margin,
        concavity_margin=conc,
        min_D=float(min_D),
    )


# --------------------------------------------------------------------------
# Bochner residuals (uses the discrete heat flow)


def bochner_residual(flow, v, t, family="L0", params=None):
    """Pointwise residual of the Bochner identity for a heat-flow slice.

    ``v`` is a :class:`dflow.pde.ScalarField` tagged ``heat_slice`` at forward
    time ``t``.  The field is advanced two heat steps of size ``params["dt"]``
    (default: the grid step) and the residual is reported at the middle slice
    ``t + dt``.  The left side applies the discrete heat operator to the
    bracketed quantity (centered time difference, discrete Laplacian); the
    right side is the squared tensor norm plus the D-tensor.  ``family`` is ``"L0"``, ``"Lminus"`` (needs
    ``params["tau"]``, the backward time at ``t``) or ``"weighted_L0"``.
    """
    from .pde import bochner_residual_field

    return bochner_residual_field(flow, v, t, family, params or {})
