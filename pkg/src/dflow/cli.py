"""Scenario-driven batch runner.

Scenario documents are JSON objects::

    {
      "name": "ricci sphere",
      "flow": {"family": "round_sphere", "n": 2, "interval": [0, 0.4],
               "params": {"r2": "1-2*t"}, "orientation": "forward", "T": 0.5},
      "grid": {"Nx": 64, "dt": null, "K": null, "W": null, "scheme": "expm"},
      "checks": [{"id": "gradient_estimate", "family": "L0", "s": 0.1, "t": 0.3}],
      "output": {"dir": "dflow_out", "formats": ["json", "csv", "table"]},
      "calibrate": true,
      "tol_cap": null,
      "trace": {"measure": "uniform", "tau1": null, "tau2": null, "steps": null}
    }

``flow`` may instead be ``{"seeded": "<name>"}`` for one of the flows in
:mod:`dflow.scenarios`.  Exit status: 1 if any check fails or errors, else 2
if any check is indeterminate, else 0.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import harness as H
from .expr import ExpressionError
from .geometry import FlowSpec, InvalidFlowError
from .scenarios import SEEDED

CHECK_IDS = (
    "D_condition",
    "spacetime_scan",
    "gradient_estimate",
    "wasserstein_contraction",
    "entropy_convexity",
    "evi",
    "evi_wc_consistency",
    "hj_preservation",
    "shifted_bochner",
    "blowup_bound",
    "monotonicity",
    "warped_product",
)
CAPS = {"Nx": 512, "K": 512}
GRID_DEFAULTS = {"Nx": 64, "dt": None, "K": None, "W": None, "scheme": "expm", "method": "auto"}
OUTPUT_DEFAULTS = {"dir": "dflow_out", "formats": ["json", "csv", "table"]}
TRACE_DEFAULTS = {"measure": "uniform", "tau1": None, "tau2": None, "steps": None}
FORMATS = ("json", "csv", "table")


class ScenarioError(ValueError):
    """Schema violation; the message starts with the offending path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class ScenarioConfig:
    name: str
    flow_doc: dict
    flow: FlowSpec
    grid: dict
    checks: list
    output: dict
    calibrate: bool = True
    tol_cap: float | None = None
    trace: dict = field(default_factory=dict)

    def resolution(self):
        g = self.grid
        return H.Resolution(n_x=g["Nx"], dt=g["dt"], K=g["K"], scheme=g["scheme"], method=g["method"], window=g["W"])


# --------------------------------------------------------------------------
# parsing


def _require(cond, path, message):
    if not cond:
        raise ScenarioError(path, message)


def _number(doc, key, path, positive=False, allow_none=True):
    v = doc.get(key)
    if v is None:
        _require(allow_none, f"{path}.{key}", "is required")
        return None
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"{path}.{key}", "must be a number")
    _require(math.isfinite(v), f"{path}.{key}", "must be finite")
    if positive:
        _require(v > 0, f"{path}.{key}", "must be > 0")
    return v


def _build_flow(doc):
    _require(isinstance(doc, dict), "flow", "must be an object")
    if "seeded" in doc:
        name = doc["seeded"]
        _require(name in SEEDED, "flow.seeded", f"unknown seeded flow {name!r}; known: {sorted(SEEDED)}")
        return SEEDED[name]()
    for key in ("family", "n", "interval"):
        _require(key in doc, f"flow.{key}", "is required")
    interval = doc["interval"]
    _require(isinstance(interval, list) and len(interval) == 2, "flow.interval", "must be a two-element list")
    params = doc.get("params", {})
    _require(isinstance(params, dict), "flow.params", "must be an object")
    for key, value in params.items():
        _require(isinstance(value, (str, int, float)), f"flow.params.{key}", "must be an expression string or number")
    try:
        return FlowSpec(
            doc["family"],
            doc["n"],
            tuple(interval),
            params,
            doc.get("orientation", "forward"),
            float(doc.get("T", 0.0)),
            doc.get("name", ""),
        )
    except ExpressionError as exc:
        raise ScenarioError("flow.params", str(exc)) from exc
    except InvalidFlowError as exc:
        raise ScenarioError("flow.family" if "family" in str(exc) else "flow", str(exc)) from exc


def parse_scenario(document) -> ScenarioConfig:
    """Validate a scenario (dict, JSON text or file path) and fill in defaults."""
    if isinstance(document, (str, os.PathLike)):
        text = str(document)
        if os.path.exists(text):
            with open(text) as fh:
                text = fh.read()
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("$", f"invalid JSON: {exc}") from exc
    _require(isinstance(document, dict), "$", "scenario must be a JSON object")
    doc = copy.deepcopy(document)
    known = {"name", "flow", "grid", "checks", "output", "calibrate", "tol_cap", "trace"}
    for key in doc:
        _require(key in known, key, "unknown top-level key")
    _require("flow" in doc, "flow", "is required")
    flow = _build_flow(doc["flow"])

    grid = dict(GRID_DEFAULTS)
    g = doc.get("grid", {}) or {}
    _require(isinstance(g, dict), "grid", "must be an object")
    for key in g:
        _require(key in GRID_DEFAULTS, f"grid.{key}", "unknown grid parameter")
    grid.update(g)
    for key in ("Nx", "K", "W"):
        if grid[key] is not None:
            _require(isinstance(grid[key], int) and not isinstance(grid[key], bool), f"grid.{key}", "must be an integer")
            _require(grid[key] >= (3 if key == "Nx" else 1), f"grid.{key}", "is too small")
            if key in CAPS:
                _require(grid[key] <= CAPS[key], f"grid.{key}", f"must be <= {CAPS[key]}")
    _require(grid["Nx"] is not None, "grid.Nx", "is required")
    _number(grid, "dt", "grid", positive=True)
    _require(grid["scheme"] in ("expm", "cn"), "grid.scheme", "must be 'expm' or 'cn'")
    _require(grid["method"] in ("auto", "separable", "action", "dp"), "grid.method", "unknown cost method")

    checks = doc.get("checks", [])
    _require(isinstance(checks, list), "checks", "must be a list")
    for i, c in enumerate(checks):
        _require(isinstance(c, dict), f"checks[{i}]", "must be an object")
        _require(c.get("id") in CHECK_IDS, f"checks[{i}].id", f"unknown check id {c.get('id')!r}")

    output = dict(OUTPUT_DEFAULTS)
    output.update(doc.get("output", {}) or {})
    _require(isinstance(output["formats"], list), "output.formats", "must be a list")
    for f in output["formats"]:
        _require(f in FORMATS, "output.formats", f"unknown format {f!r}")

    calibrate = doc.get("calibrate", True)
    _require(isinstance(calibrate, bool), "calibrate", "must be a boolean")
    tol_cap = _number(doc, "tol_cap", "$", positive=True)
    trace = dict(TRACE_DEFAULTS)
    trace.update(doc.get("trace", {}) or {})

    return ScenarioConfig(
        name=doc.get("name", flow.name or flow.family),
        flow_doc=doc["flow"],
        flow=flow,
        grid=grid,
        checks=checks,
        output=output,
        calibrate=calibrate,
        tol_cap=tol_cap,
        trace=trace,
    )


# --------------------------------------------------------------------------
# check dispatch


def _measure(spec):
    if isinstance(spec, list) and len(spec) == 2 and spec[0] == "delta":
        return ("delta", float(spec[1]))
    return spec


def _default_window(flow, backward, frac=(0.25, 0.75)):
    a, b = flow.forward_interval
    if backward:
        lo, hi = flow.tau(b), flow.tau(a)
        lo = max(lo, 1e-3 * (hi - lo))
    else:
        lo, hi = a, b
    return lo + frac[0] * (hi - lo), lo + frac[1] * (hi - lo)


def _pick(params, *keys):
    return {k: params[k] for k in keys if k in params}


def _run_check(flow, check, res, calibrate, tol_cap):
    """Dispatch one check dict; returns ``(report, trace_or_None)``."""
    p = dict(check)
    cid = p.pop("id")
    fam = p.pop("family", None)
    common = {"res": res, "calibrate_tol": calibrate, "tol_cap": tol_cap}
    if cid == "D_condition":
        return H.check_D_condition(flow, **_pick(p, "times", "thetas")), None
    if cid == "spacetime_scan":
        from .spacetime import spacetime_positivity_scan

        return spacetime_positivity_scan(flow, **_pick(p, "times", "thetas")), None
    if cid == "gradient_estimate":
        kind = fam or "L0"
        s, t = _default_window(flow, kind in ("Lminus", "L0N"))
        kw = _pick(p, "v", "T0", "N", "v_scales")
        if "lambda" in p:
            kw["lam"] = p["lambda"]
        if kind == "L0N" and "N" not in kw:
            kw["N"] = flow.n
        return H.check_gradient_estimate(flow, kind, s=p.get("s", s), t=p.get("t", t), **kw, **common), None
    if cid == "wasserstein_contraction":
        form = fam or "L0"
        kw = _pick(p, "h", "alpha", "a", "S", "T", "T0", "N", "weighted")
        if "times4" in p:
            kw["times4"] = tuple(p["times4"])
        if form == "L0" and "h" not in kw:
            a, b = flow.forward_interval
            kw["h"] = 0.25 * (b - a)
            s, t = a, a + 0.5 * (b - a)
        elif form == "kuwada":
            a, b = flow.forward_interval
            s, t = 0.1 * (b - a), 0.4 * (b - a)
        else:
            s, t = _default_window(flow, form in ("Lminus", "L0N"), (0.1, 0.4) if form != "Lplus" else (0.2, 0.4))
        if form in ("Lminus", "L0N") and "alpha" not in kw and not ("S" in kw and "T" in kw):
            # largest factor up to 1.5 that keeps alpha * tau inside the flow interval
            T0 = kw.get("T0", 0.0)
            tau_hi = flow.tau(flow.forward_interval[0])
            kw["alpha"] = min(1.5, 1 + 0.9 * ((tau_hi + T0) / (p.get("t", t) + T0) - 1))
        if form == "L0N" and "N" not in kw:
            kw["N"] = flow.n
        if form == "Lplus" and "a" not in kw:
            kw["a"] = 1.5
        return (
            H.check_wasserstein_contraction(
                flow, form, mu=_measure(p.get("mu", "uniform")), nu=_measure(p.get("nu", "uniform")), s=p.get("s", s), t=p.get("t", t), **kw, **common
            ),
            None,
        )
    if cid == "entropy_convexity":
        kind = fam or "L0"
        s, t = _default_window(flow, kind in ("Lminus", "L0N"))
        kw = _pick(p, "r_bar", "N", "T0", "weighted", "eps", "quad_points")
        return (
            H.check_entropy_convexity(
                flow, kind, mu0=_measure(p.get("mu0", "uniform")), mu1=_measure(p.get("mu1", "uniform")), s=p.get("s", s), t=p.get("t", t), **kw, **common
            ),
            None,
        )
    if cid == "evi":
        kind = fam or "L0"
        s, t = _default_window(flow, kind == "Lminus")
        kw = _pick(p, "form", "probe", "delta", "T0", "weighted", "eps")
        return (
            H.check_evi(flow, kind, mu=_measure(p.get("mu", "uniform")), nu=_measure(p.get("nu", "uniform")), s=p.get("s", s), t=p.get("t", t), **kw, **common),
            None,
        )
    if cid == "evi_wc_consistency":
        s, t = _default_window(flow, False)
        kw = _pick(p, "delta", "weighted", "eps")
        return (
            H.evi_wc_consistency(flow, mu=_measure(p.get("mu", "uniform")), nu=_measure(p.get("nu", "uniform")), s=p.get("s", s), t=p.get("t", t), res=res, **kw),
            None,
        )
    if cid == "hj_preservation":
        kind = fam or "L0"
        kw = _pick(p, "h", "alpha", "samples")
        if kind == "L0":
            a, b = flow.forward_interval
            t1, t2 = a, a + 0.3 * (b - a)
            kw.setdefault("h", 0.3 * (b - a))
        else:
            kw.setdefault("alpha", 1.5)
            lo, hi = _default_window(flow, True, (0.05, 1.0))
            t1, t2 = lo, lo + 0.5 * (hi / kw["alpha"] - lo)
        return H.check_hj_preservation(flow, kind, t1=p.get("t1", t1), t2=p.get("t2", t2), **kw, **common), None
    if cid == "shifted_bochner":
        import numpy as np

        from .pde import snapshot_forward

        a, b = flow.forward_interval
        snap = snapshot_forward(flow, p.get("t", 0.5 * (a + b)), p.get("x", 0.0))
        n = flow.n
        X = np.asarray(p.get("X", [0.3] * n), float)
        Hm = np.asarray(p.get("H", np.diag([0.2] * n).tolist()), float)
        N = p.get("N", n + 1)
        kw = _pick(p, "shifts", "tau0")
        return H.check_shifted_bochner_equivalence(snap, X, Hm, N, **kw), None
    if cid == "blowup_bound":
        a, b = flow.forward_interval
        return H.check_blowup_bound(flow, p.get("tau", flow.tau(a)), p.get("sigmas"), **common), None
    if cid == "monotonicity":
        report, trace = H.check_monotonicity(
            flow,
            p.get("functional", fam or "F"),
            _measure(p.get("measure", "uniform")),
            p.get("tau1"),
            p.get("tau2"),
            p.get("steps"),
            res=res,
            tol_cap=tol_cap,
        )
        return report, trace
    if cid == "warped_product":
        from .pde import snapshot_forward
        from .spacetime import warped_product_check

        a, b = flow.forward_interval
        snap = snapshot_forward(flow, p.get("t", 0.5 * (a + b)), p.get("x", 0.0))
        return warped_product_check(snap, p.get("k", 2), p.get("fiber_ric_lower", 0.0)), None
    raise ScenarioError("checks.id", f"unknown check id {cid!r}")


def _error_report(check, exc):
    return H.CheckReport(
        check.get("id", "?"),
        str(check.get("family", "")),
        "fail",
        -math.inf,
        0.0,
        {k: v for k, v in check.items() if k != "id"},
        {},
        {},
        [f"error: {type(exc).__name__}: {exc}"],
        {"error": type(exc).__name__},
    )


def _worker(args):
    flow_doc, check, grid, calibrate, tol_cap = args
    flow = _build_flow(flow_doc)
    res = H.Resolution(n_x=grid["Nx"], dt=grid["dt"], K=grid["K"], scheme=grid["scheme"], method=grid["method"], window=grid["W"])
    try:
        report, trace = _run_check(flow, check, res, calibrate, tol_cap)
    except Exception as exc:  # recorded per check; the batch continues
        return _error_report(check, exc), None
    return report, trace


@dataclass
class BatchResult:
    reports: list
    traces: list
    exit_code: int
    paths: dict = field(default_factory=dict)


def exit_code_for(reports):
    verdicts = [r.verdict for r in reports]
    if "fail" in verdicts:
        return 1
    if "indeterminate" in verdicts:
        return 2
    return 0


def summary_table(reports):
    lines = [f"{'#':>3}  {'check':<24} {'family':<18} {'verdict':<15} {'margin':>12} {'tolerance':>11}"]
    for i, r in enumerate(reports):
        lines.append(f"{i:>3}  {r.check_id:<24} {r.family:<18} {r.verdict:<15} {r.worst_margin:>12.4e} {r.tolerance:>11.3e}")
    return "\n".join(lines)


def run_scenario(config: ScenarioConfig, out_dir=None, parallel=1, write=True) -> BatchResult:
    """Run every check, write the JSON report, CSV traces and summary table."""
    jobs = [(config.flow_doc, c, config.grid, config.calibrate, config.tol_cap) for c in config.checks]
    if parallel and parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    reports = [r for r, _ in results]
    traces = [(i, tr) for i, (_, tr) in enumerate(results) if tr is not None]
    batch = BatchResult(reports, traces, exit_code_for(reports))
    if write:
        out = out_dir or config.output["dir"]
        os.makedirs(out, exist_ok=True)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        fmts = config.output["formats"]
        if "json" in fmts:
            rows = []
            for r in reports:
                row = r.to_dict()
                row["scenario"] = config.name
                row["timestamp"] = stamp
                rows.append(row)
            path = os.path.join(out, "report.json")
            with open(path, "w") as fh:
                json.dump(rows, fh, indent=2, sort_keys=True)
                fh.write("\n")
            batch.paths["json"] = path
        if "csv" in fmts:
            for i, tr in traces:
                path = os.path.join(out, f"trace_{i:02d}_{tr.functional}.csv")
                tr.to_csv(path)
                batch.paths.setdefault("traces", []).append(path)
        if "table" in fmts:
            path = os.path.join(out, "summary.txt")
            with open(path, "w") as fh:
                fh.write(summary_table(reports) + "\n")
            batch.paths["table"] = path
    return batch


# --------------------------------------------------------------------------
# command line


def _apply_override(config, text):
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ScenarioError("--grid-override", f"expected key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in GRID_DEFAULTS:
            raise ScenarioError(f"grid.{key}", "unknown grid parameter")
        if key == "scheme" or key == "method":
            config.grid[key] = value
        elif key == "dt":
            config.grid[key] = float(value)
        else:
            config.grid[key] = int(value)
    # re-validate through the parser
    doc = {
        "name": config.name,
        "flow": config.flow_doc,
        "grid": config.grid,
        "checks": config.checks,
        "output": config.output,
        "calibrate": config.calibrate,
        "tol_cap": config.tol_cap,
        "trace": config.trace,
    }
    return parse_scenario(doc)


def _cmd_check(args):
    config = parse_scenario(args.scenario)
    if args.grid_override:
        config = _apply_override(config, args.grid_override)
    batch = run_scenario(config, out_dir=args.out, parallel=args.parallel)
    print(summary_table(batch.reports))
    for r in batch.reports:
        for note in r.notes:
            print(f"  [{r.check_id}] {note}")
    print(f"exit status {batch.exit_code}")
    return batch.exit_code


def _cmd_trace(args):
    from .functionals import calibrated_trace

    config = parse_scenario(args.scenario)
    flow = config.flow
    tr = config.trace
    a, b = flow.forward_interval
    tau1 = tr["tau1"] if tr["tau1"] is not None else flow.tau(b)
    tau2 = tr["tau2"] if tr["tau2"] is not None else flow.tau(a)
    res = config.resolution()
    trace, tol = calibrated_trace(_measure(tr["measure"]), flow, tau1, tau2, args.functional, res.n_x, res.grid(flow).dt, tr["steps"])
    out = args.out or config.output["dir"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"trace_{args.functional}.csv")
    trace.to_csv(path)
    print(f"{args.functional} trace: {len(trace.times)} samples, tau in [{tau1:g}, {tau2:g}]")
    print(f"largest increase {trace.max_upward_violation():.3e}, calibrated tolerance {tol:.3e}")
    print(f"written to {path}")
    return 0


def _cmd_cost_table(args):
    from .lagrangian import CostFamily, cost_table

    config = parse_scenario(args.scenario)
    flow = config.flow
    kind = {"l0": "L0", "lminus": "Lminus", "lplus": "Lplus"}[args.family]
    fam = CostFamily(kind, shift=args.T0, normalized=args.normalized)
    res = config.resolution()
    grid = res.grid(flow)
    table = cost_table(flow, fam, args.s, args.t, grid, K=res.K, method=res.method, window=res.window)
    out = args.out or config.output["dir"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"cost_{args.family}_{args.s:g}_{args.t:g}.csv")
    table.save_csv(path)
    print(f"{fam.label()} cost on {grid.n_x} nodes, method {table.method}: min {table.values.min():.6g}, max {table.values.max():.6g}")
    print(f"written to {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dflow", description="Numerical checks of the D-condition characterizations on model flows.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", help="run the checks of a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", default=None)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--grid-override", default=None, help="comma-separated key=value pairs, e.g. Nx=128,dt=0.01")
    p.set_defaults(func=_cmd_check)
    p = sub.add_parser("trace", help="write a functional trace along the conjugate heat flow")
    p.add_argument("scenario")
    p.add_argument("--functional", choices=("F", "W", "entropy"), required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_trace)
    p = sub.add_parser("cost-table", help="write a pairwise cost table")
    p.add_argument("scenario")
    p.add_argument("--family", choices=("l0", "lminus", "lplus"), required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--T0", type=float, default=0.0)
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_cost_table)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ExpressionError, InvalidFlowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
