import json
import math
import os
import time
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import export_utils
from characteristics_utils import (
    fan_table,
    snapshot_table,
    solve_composed,
    terminal_report,
    trace,
    verify_no_blowup_bound,
)
from control_utils import STRATEGIES, compose_full_control
from errors import ClawError, OneSidedViolation, ScenarioError
from flux_utils import (
    Interval,
    builtin_flux,
    hypothesis_regime,
    load_flux_table,
    sup_norm_on,
    sup_norm_with_arg,
    usable_bounds,
)
from fv_utils import l1_against, solve_fv, total_variation, trace_boundary, verify_terminal
from metrics_utils import (
    REGIMES,
    Truncation,
    _num,
    boundary_control_time,
    check_hypotheses,
    controllability_times,
    curvature_reference,
    metric_for,
    one_sided_parts,
    report_dict,
)
from profile_utils import (
    ProfileBV,
    ProfileC1,
    l1_distance,
    mollify_lower_dini,
    mollify_one_sided,
    profile_from_dict,
    variation_report,
)
from settings_utils import load_settings

# Configure logging
logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TOP_FIELDS = {
    "schema", "name", "flux", "a", "b", "T", "rho", "regime", "J1", "J2", "truncation",
    "ubar", "psi", "strategy", "grid", "metrics", "bv", "tolerances", "output_dir",
}
GRID_FIELDS = {"dx", "nt", "fv_dx"}
METRICS_FIELDS = {"intervals", "pairs"}
BV_FIELDS = {"n"}
TOLERANCE_FIELDS = {"terminal", "fv_terminal"}
PROFILE_TYPES = ("constant", "linear", "sine", "knots", "step", "pieces", "file")
DEFAULT_BV_N = [25, 50, 100]
BOUND_SLACK = 1e-9


@dataclass
class Scenario:
    name: str
    flux: object
    flux_spec: dict
    a: float
    b: float
    T: Optional[float] = None
    rho: float = 0.0
    regime: str = "bounded_two_sided"
    J1: Optional[Interval] = None
    J2: Optional[Interval] = None
    truncation: Optional[Truncation] = None
    ubar: object = None
    psi: object = None
    strategy: str = "bridge"
    dx: float = 0.002
    nt: int = 200
    fv_dx: Optional[float] = None
    metric_intervals: list = field(default_factory=list)
    metric_pairs: list = field(default_factory=list)
    bv_n: list = field(default_factory=lambda: list(DEFAULT_BV_N))
    terminal_tol: float = 1e-6
    fv_terminal_tol: Optional[float] = None
    output_dir: Optional[str] = None
    source: Optional[str] = None

# --- Parsing ---

def _number(data, key, path, required=True, default=None):
    if key not in data:
        if required:
            raise ScenarioError(f"{path}.{key}: required field missing")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(f"{path}.{key}: expected a finite number, got {value!r}")
    return float(value)


def _reject_unknown(data, allowed, path):
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected an object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ScenarioError(f"{path}: unknown field(s) {sorted(unknown)}")


def _interval(value, path):
    try:
        return Interval.from_list(value)
    except ClawError as e:
        raise ScenarioError(f"{path}: {e}")
    except (TypeError, ValueError, IndexError):
        raise ScenarioError(f"{path}: expected [lo, hi], got {value!r}")


def _flux(spec, base_dir, path="scenario.flux"):
    if isinstance(spec, str):
        return builtin_flux(spec), {"builtin": spec}
    _reject_unknown(spec, {"builtin", "custom_csv", "name"}, path)
    if "builtin" in spec:
        return builtin_flux(spec["builtin"]), dict(spec)
    if "custom_csv" in spec:
        csv_path = os.path.join(base_dir, spec["custom_csv"])
        if not os.path.exists(csv_path):
            raise ScenarioError(f"{path}.custom_csv: file not found: {csv_path}")
        return load_flux_table(csv_path, spec.get("name")), dict(spec)
    raise ScenarioError(f"{path}: expected 'builtin' or 'custom_csv'")


def build_profile(spec, a: float, b: float, base_dir: str = ".", path: str = "profile"):
    """Profile from a scenario spec; every spec lives on [a, b]."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ScenarioError(f"{path}: expected an object with 'type' ({', '.join(PROFILE_TYPES)})")
    kind = spec["type"]
    if kind == "constant":
        _reject_unknown(spec, {"type", "value"}, path)
        return ProfileC1.constant(_number(spec, "value", path), a, b)
    if kind == "linear":
        _reject_unknown(spec, {"type", "c0", "c1"}, path)
        return ProfileC1.linear(_number(spec, "c0", path), _number(spec, "c1", path), a, b)
    if kind == "sine":
        _reject_unknown(spec, {"type", "mean", "amplitude", "periods", "phase", "n"}, path)
        mean = _number(spec, "mean", path)
        amp = _number(spec, "amplitude", path)
        omega = 2 * math.pi * _number(spec, "periods", path, False, 1.0) / (b - a)
        phase = _number(spec, "phase", path, False, 0.0)
        n = int(_number(spec, "n", path, False, 65))
        return ProfileC1.from_function(
            lambda x: mean + amp * np.sin(omega * (x - a) + phase),
            lambda x: amp * omega * np.cos(omega * (x - a) + phase),
            a, b, n,
        )
    if kind == "knots":
        _reject_unknown(spec, {"type", "knots"}, path)
        try:
            prof = ProfileC1.from_knots([tuple(float(v) for v in k) for k in spec["knots"]])
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"{path}.knots: expected [[x, u, du], ...] ({e})")
    elif kind == "step":
        _reject_unknown(spec, {"type", "x", "left", "right"}, path)
        x_jump = _number(spec, "x", path)
        if not a < x_jump < b:
            raise ScenarioError(f"{path}.x: jump location {x_jump} must lie inside ({a}, {b})")
        return ProfileBV.step(a, b, x_jump, _number(spec, "left", path), _number(spec, "right", path))
    elif kind == "pieces":
        _reject_unknown(spec, {"type", "pieces", "jumps"}, path)
        prof = profile_from_dict({k: v for k, v in spec.items() if k != "type"})
    elif kind == "file":
        _reject_unknown(spec, {"type", "path"}, path)
        file_path = os.path.join(base_dir, str(spec.get("path", "")))
        if not os.path.exists(file_path):
            raise ScenarioError(f"{path}.path: file not found: {file_path}")
        with open(file_path, "r") as f:
            prof = profile_from_dict(json.load(f))
    else:
        raise ScenarioError(f"{path}.type: unknown profile type '{kind}' (known: {', '.join(PROFILE_TYPES)})")
    if abs(prof.a - a) > 1e-12 or abs(prof.b - b) > 1e-12:
        raise ScenarioError(f"{path}: profile spans [{prof.a}, {prof.b}], scenario interval is [{a}, {b}]")
    return prof


def parse_scenario(data: dict, base_dir: str = ".", settings: Optional[dict] = None, source=None) -> Scenario:
    """Validates a scenario object before any computation; errors name the offending field."""
    settings = settings or load_settings()
    path = "scenario"
    _reject_unknown(data, TOP_FIELDS, path)
    if data.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(f"{path}.schema: expected {SCHEMA_VERSION}, got {data.get('schema')!r}")
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise ScenarioError(f"{path}.name: required non-empty string")
    if "flux" not in data:
        raise ScenarioError(f"{path}.flux: required field missing")
    flux, flux_spec = _flux(data["flux"], base_dir)
    a = _number(data, "a", path)
    b = _number(data, "b", path)
    if not a < b:
        raise ScenarioError(f"{path}: need a < b, got a={a}, b={b}")

    scn = Scenario(name=name, flux=flux, flux_spec=flux_spec, a=a, b=b, source=source)
    scn.T = _number(data, "T", path, required=False)
    if scn.T is not None and scn.T <= 0:
        raise ScenarioError(f"{path}.T: must be positive")
    scn.rho = _number(data, "rho", path, False, 0.0)
    scn.regime = data.get("regime", "bounded_two_sided")
    if scn.regime not in REGIMES:
        raise ScenarioError(f"{path}.regime: unknown regime '{scn.regime}' (known: {', '.join(REGIMES)})")
    scn.strategy = data.get("strategy", "bridge")
    if scn.strategy not in STRATEGIES:
        raise ScenarioError(f"{path}.strategy: unknown strategy '{scn.strategy}'")
    if "J1" in data:
        scn.J1 = _interval(data["J1"], f"{path}.J1")
    if "J2" in data:
        scn.J2 = _interval(data["J2"], f"{path}.J2")
    if "truncation" in data:
        tr = data["truncation"]
        _reject_unknown(tr, {"u0", "direction"}, f"{path}.truncation")
        if tr.get("direction") not in ("k_nonneg", "k_nonpos"):
            raise ScenarioError(f"{path}.truncation.direction: expected 'k_nonneg' or 'k_nonpos'")
        scn.truncation = Truncation(_number(tr, "u0", f"{path}.truncation"), tr["direction"])
    if "ubar" in data:
        scn.ubar = build_profile(data["ubar"], a, b, base_dir, f"{path}.ubar")
    if "psi" in data:
        scn.psi = build_profile(data["psi"], a, b, base_dir, f"{path}.psi")

    grid = data.get("grid", {})
    _reject_unknown(grid, GRID_FIELDS, f"{path}.grid")
    scn.dx = _number(grid, "dx", f"{path}.grid", False, settings["dx"])
    scn.nt = int(_number(grid, "nt", f"{path}.grid", False, 200))
    scn.fv_dx = _number(grid, "fv_dx", f"{path}.grid", False, None)
    if scn.dx <= 0 or scn.nt <= 0 or (scn.fv_dx is not None and scn.fv_dx <= 0):
        raise ScenarioError(f"{path}.grid: dx, nt and fv_dx must be positive")

    metrics = data.get("metrics", {})
    _reject_unknown(metrics, METRICS_FIELDS, f"{path}.metrics")
    scn.metric_intervals = [_interval(v, f"{path}.metrics.intervals[{i}]")
                            for i, v in enumerate(metrics.get("intervals", []))]
    for i, pair in enumerate(metrics.get("pairs", [])):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(j, int) and 0 <= j < len(scn.metric_intervals) for j in pair)):
            raise ScenarioError(f"{path}.metrics.pairs[{i}]: expected two indices into metrics.intervals")
        scn.metric_pairs.append(tuple(pair))

    bv = data.get("bv", {})
    _reject_unknown(bv, BV_FIELDS, f"{path}.bv")
    if "n" in bv:
        if not isinstance(bv["n"], list) or not all(isinstance(n, int) and n > 0 for n in bv["n"]):
            raise ScenarioError(f"{path}.bv.n: expected a list of positive integers")
        scn.bv_n = list(bv["n"])

    tol = data.get("tolerances", {})
    _reject_unknown(tol, TOLERANCE_FIELDS, f"{path}.tolerances")
    scn.terminal_tol = _number(tol, "terminal", f"{path}.tolerances", False, settings["terminal_tol"])
    scn.fv_terminal_tol = _number(tol, "fv_terminal", f"{path}.tolerances", False, None)
    scn.output_dir = data.get("output_dir")
    return scn


def load_scenario(path: str, settings: Optional[dict] = None) -> Scenario:
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    return parse_scenario(data, os.path.dirname(os.path.abspath(path)), settings, source=path)

# --- Report helpers ---

def _bound(name: str, claimed: float, measured: float) -> dict:
    return {
        "name": name,
        "claimed": claimed,
        "measured": measured,
        "passed": bool(measured <= claimed * (1 + BOUND_SLACK)),
    }


def _require(scn: Scenario, *fields):
    for name in fields:
        if getattr(scn, name) is None:
            raise ScenarioError(f"scenario.{name}: required for this command")


def _state_measure(composed, n_x: int = 401, n_t: int = 61) -> float:
    """max over sampled t of sup|u(t)| + TV(u(t)) on [a, b]."""
    xs = np.linspace(composed.a, composed.b, n_x)
    ts = np.unique(np.concatenate([np.linspace(0.0, composed.T, n_t), [composed.t_enter, composed.t_leave]]))
    worst = 0.0
    for t in ts:
        u = np.asarray(composed(t, xs), dtype=float)
        worst = max(worst, float(np.max(np.abs(u))) + total_variation(u))
    return worst


def _times(scn: Scenario, plan=None) -> dict:
    out = {}
    if plan is not None:
        out["T1_star"], out["T2_star"] = plan.times
        out["T_star"] = plan.times[0] + plan.times[1]
    elif scn.J1 is not None and scn.J2 is not None and not scn.regime.startswith("growth"):
        out["T1_star"], out["T2_star"], out["T_star"] = controllability_times(scn.flux, scn.J1, scn.J2, scn.a, scn.b)
    if scn.psi is not None:
        out["T_bar"] = boundary_control_time(scn.flux, scn.psi)
    if scn.T is not None:
        out["T"] = scn.T
    return out


def _steer_core(scn: Scenario, ubar, psi, force: bool, strategy: Optional[str], tol_blowup: float):
    """Hypotheses, synthesis, classical composite and its certificate checks."""
    regime = scn.regime
    verdict = check_hypotheses(regime, scn.flux, ubar, psi, scn.T, scn.rho, scn.J1, scn.J2, scn.truncation)
    if not verdict.holds and not force:
        return verdict, None, None, None, None
    solve_regime = regime.replace("_bv", "_one_sided")
    signal, plan = compose_full_control(scn.flux, ubar, psi, scn.T, scn.rho, scn.J1, scn.J2,
                                        solve_regime, strategy or scn.strategy)
    composed = solve_composed(scn.flux, plan, signal, scn.dx, tol_blowup, scn.nt)
    checks = {
        "stage_a": verify_no_blowup_bound(composed.sol_a, plan.cert_a),
        "stage_c": verify_no_blowup_bound(composed.sol_c, plan.cert_c),
    }
    return verdict, signal, plan, composed, checks


def _certificate_bounds(signal, plan, composed, checks) -> list:
    bounds = [
        _bound("|h| + TV(h)", plan.claimed_control_bound, signal.sup_norm + signal.total_variation),
        _bound("sup|u| + TV(u)", plan.claimed_state_bound, _state_measure(composed)),
    ]
    for label, cert, sig in (("stage A", plan.cert_a, plan.stage_a_signal), ("stage C", plan.cert_c, plan.stage_c_signal)):
        bounds.append(_bound(f"{label} TV(h)", cert.claimed_h_tv, sig.total_variation))
        bounds.append(_bound(f"{label} |h|", cert.claimed_h_sup, sig.sup_norm))
    for key, label in (("stage_a", "stage A"), ("stage_c", "stage C")):
        report = checks[key]
        inv = report["min_inverse_slope"]
        measured = 0.0 if inv == "+inf" else 1.0 / inv
        claimed = math.inf if report["bound"] == 0 else 1.0 / report["bound"]
        bounds.append(_bound(f"{label} max |u_x| along characteristics", claimed, measured))
    return bounds


def _write_outputs(out_dir: str, report: dict, meta: dict, control: Optional[dict] = None, tables=None):
    os.makedirs(out_dir, exist_ok=True)
    files = {"report": export_utils.write_json(os.path.join(out_dir, "report.json"), report),
             "run_meta": export_utils.write_json(os.path.join(out_dir, "run_meta.json"), meta)}
    if control is not None:
        files["control"] = export_utils.write_json(os.path.join(out_dir, "control.json"), control)
    for name, (rows, header) in (tables or {}).items():
        files[name] = export_utils.write_csv(os.path.join(out_dir, "snapshots", f"{name}.csv"), rows, header)
    return files


def _out_dir(scn: Scenario, out: Optional[str], settings: dict) -> str:
    return out or scn.output_dir or os.path.join(settings["output_dir"], scn.name)


def _base_report(scn: Scenario, command: str) -> dict:
    return {
        "command": command,
        "scenario": scn.name,
        "flux": scn.flux.name,
        "regime": scn.regime,
        "a": scn.a,
        "b": scn.b,
    }


def _run(command: str, fn, scn: Scenario, out: Optional[str], settings: Optional[dict], **kwargs) -> dict:
    """Result-dict wrapper: {"ok", "error", "exit_code", "report", "files"}; ClawErrors never escape."""
    settings = settings or load_settings()
    report = _base_report(scn, command)
    started = time.time()
    try:
        exit_code, report, meta, control, tables = fn(scn, report, settings, **kwargs)
    except ClawError as e:
        logger.warning(f"{command} {scn.name}: {type(e).__name__}: {e}")
        report["error"] = {"type": type(e).__name__, "message": str(e)}
        return {"ok": False, "error": f"{type(e).__name__}: {e}", "exit_code": e.exit_code, "report": report, "files": {}}
    except Exception as e:
        logger.exception(f"{command} {scn.name}: unexpected failure")
        report["error"] = {"type": type(e).__name__, "message": str(e)}
        return {"ok": False, "error": f"{type(e).__name__}: {e}", "exit_code": 3, "report": report, "files": {}}
    meta = dict(meta or {})
    meta.update({"elapsed_seconds": round(time.time() - started, 3), "source": scn.source,
                 "settings": {k: v for k, v in settings.items() if k != "sources"}})
    files = _write_outputs(_out_dir(scn, out, settings), report, meta, control, tables)
    error = None if exit_code == 0 else report.get("failure", "verification failed")
    return {"ok": exit_code == 0, "error": error, "exit_code": exit_code, "report": report, "files": files}

# --- Commands ---

def _metrics(scn: Scenario, report: dict, settings: dict):
    model = scn.flux
    intervals = list(scn.metric_intervals)
    if not intervals:
        intervals = [J for J in (scn.J1, scn.J2) if J is not None]
    entries = [report_dict(metric_for(model, J, scn.truncation), J) for J in intervals]
    pairs = []
    for i, j in scn.metric_pairs:
        t1, t2, t_star = controllability_times(model, intervals[i], intervals[j], scn.a, scn.b)
        pairs.append({"intervals": [i, j], "T1_star": t1, "T2_star": t2, "T_star": t_star})
    f2, arg = sup_norm_with_arg(model, "d2f", usable_bounds(model), check_domain=False)
    report.update({
        "flux_class": hypothesis_regime(model),
        "intervals": entries,
        "pairs": pairs,
        "f2_sup": {"value": f2, "argmax": arg},
    })
    if scn.psi is not None:
        report["T_bar"] = boundary_control_time(model, scn.psi)
    if scn.ubar is not None and scn.T is not None:
        report["verdict"] = check_hypotheses(scn.regime, model, scn.ubar, scn.psi, scn.T, scn.rho,
                                             scn.J1, scn.J2, scn.truncation).to_dict()
    return 0, report, {}, None, None


def _steer(scn: Scenario, report: dict, settings: dict, force: bool = False, strategy: Optional[str] = None):
    _require(scn, "T", "ubar", "psi")
    if isinstance(scn.ubar, ProfileBV) or isinstance(scn.psi, ProfileBV):
        raise ScenarioError("scenario.ubar/psi: piecewise states with jumps go through the bv command")
    verdict, signal, plan, composed, checks = _steer_core(scn, scn.ubar, scn.psi, force, strategy,
                                                           settings["tol_blowup"])
    report["verdict"] = verdict.to_dict()
    if signal is None:
        report["times"] = _times(scn)
        report["failure"] = "hypotheses do not hold: " + "; ".join(c.label for c in verdict.violated_conditions)
        return 2, report, {}, None, None

    terminal = terminal_report(composed, scn.psi)
    bounds = _certificate_bounds(signal, plan, composed, checks)
    bounds.append(_bound("terminal sup error", scn.terminal_tol, terminal["sup_error"]))
    meta = {}
    tables = {
        "classical": (snapshot_table(composed, np.linspace(0.0, scn.T, 11)), ["t", "x", "u"]),
        "fan_stage_a": (fan_table(composed.sol_a), ["x0", "t", "x", "z0", "z1"]),
    }
    if scn.fv_dx is not None:
        hist = solve_fv(scn.flux, scn.ubar, signal, scn.T, scn.fv_dx, boundary=trace_boundary(composed, scn.fv_dx))
        fv_check = verify_terminal(hist, scn.psi, scn.fv_terminal_tol or math.inf)
        terminal["fv_l1_error"] = fv_check.l1_error
        if scn.fv_terminal_tol is not None:
            bounds.append(_bound("FV terminal L1 error", scn.fv_terminal_tol, fv_check.l1_error))
        meta["fv"] = hist.meta()
        tables["fv"] = (np.column_stack([np.full(hist.centres.size, hist.T), hist.centres, hist.final]), ["t", "x", "u"])

    report.update({
        "times": _times(scn, plan),
        "plan": plan.to_dict(),
        "riccati_checks": checks,
        "terminal": terminal,
        "plateau_feet_ok": terminal.pop("plateau_feet_ok"),
        "bounds": bounds,
    })
    failed = [b["name"] for b in bounds if not b["passed"]]
    if not report["plateau_feet_ok"]:
        failed.append("plateau foot points")
    if failed:
        report["failure"] = "bounds not met: " + ", ".join(failed)
    control = {"signal": signal.to_dict(), "plan": plan.to_dict()}
    return (4 if failed else 0), report, meta, control, tables


def _mollifiers(model):
    """Mollifier per role: the bounded one-sided part decides which Dini variant applies."""
    d_u, d_psi = one_sided_parts(model)
    pick = {"d_plus": mollify_one_sided, "d_minus": mollify_lower_dini}
    return (d_u, pick[d_u]), (d_psi, pick[d_psi])


def _mollifier_bound(scn: Scenario, prof, part: str, J: Optional[Interval]) -> float:
    measured = getattr(prof, part)
    if math.isinf(measured):
        raise OneSidedViolation(f"{part} of the BV state is infinite: a jump of the forbidden sign")
    if scn.regime.startswith("growth") or J is None:
        return measured + 1.0
    n = metric_for(scn.flux, J, scn.truncation).value
    f2 = sup_norm_on(scn.flux, "d2f", curvature_reference(scn.flux, [J], scn.truncation), check_domain=False)
    if math.isinf(n) or f2 == 0:
        return measured + 1.0
    return n / ((scn.b - scn.a) * f2) - scn.rho


def _bv_pipeline(scn: Scenario, report: dict, settings: dict, n_sequence=None, strategy: Optional[str] = None):
    _require(scn, "T", "ubar", "psi")
    if not scn.regime.endswith("bv"):
        raise ScenarioError(f"scenario.regime: the BV pipeline needs bounded_bv or growth_bv, got '{scn.regime}'")
    model = scn.flux
    verdict = check_hypotheses(scn.regime, model, scn.ubar, scn.psi, scn.T, scn.rho, scn.J1, scn.J2, scn.truncation)
    report["verdict"] = verdict.to_dict()
    if not verdict.holds:
        report["failure"] = "hypotheses do not hold: " + "; ".join(c.label for c in verdict.violated_conditions)
        return 2, report, {}, None, None

    (part_u, moll_u), (part_psi, moll_psi) = _mollifiers(model)
    M_u = _mollifier_bound(scn, scn.ubar, part_u, scn.J1)
    M_psi = _mollifier_bound(scn, scn.psi, part_psi, scn.J2)
    fv_dx = scn.fv_dx or settings["fv_dx"]
    tv_u, _, _, sup_u = variation_report(scn.ubar)
    tv_psi, _, _, sup_psi = variation_report(scn.psi)

    rows, bounds, meta, previous = [], [], {"fv": []}, None
    for n in (n_sequence or scn.bv_n):
        u_n = moll_u(scn.ubar, M_u, n)
        psi_n = moll_psi(scn.psi, M_psi, n)
        _, signal, plan, composed, checks = _steer_core(scn, u_n, psi_n, True, strategy, settings["tol_blowup"])
        hist = solve_fv(model, u_n, signal, scn.T, fv_dx, boundary=trace_boundary(composed, fv_dx))
        check = verify_terminal(hist, scn.psi, math.inf)
        gap_u = l1_distance(u_n, scn.ubar, scn.a, scn.b)
        gap_psi = l1_distance(psi_n, scn.psi, scn.a, scn.b)
        state = max(float(np.max(np.abs(s))) + total_variation(s) for s in hist.snapshots)
        cauchy = None if previous is None else l1_against(hist, lambda x, p=previous: np.interp(x, p[0], p[1]), scn.a, scn.b)
        previous = (hist.centres, hist.final)
        rows.append({
            "n": n,
            "terminal_l1": check.l1_error,
            "mollification_l1_initial": gap_u,
            "mollification_l1_target": gap_psi,
            "h_sup": signal.sup_norm,
            "h_tv": signal.total_variation,
            "state_sup_plus_tv": state,
            "claimed_control_bound": plan.claimed_control_bound,
            "claimed_state_bound": plan.claimed_state_bound,
            "cauchy_l1": cauchy,
        })
        bounds.append(_bound(f"n={n} terminal L1", gap_psi + 10 * fv_dx * max(tv_psi, tv_u), check.l1_error))
        bounds.append(_bound(f"n={n} |h| + TV(h)", plan.claimed_control_bound, signal.sup_norm + signal.total_variation))
        bounds.append(_bound(f"n={n} sup|u| + TV(u)", plan.claimed_state_bound, state))
        meta["fv"].append(hist.meta())
        logger.info(f"n={n}: terminal L1 {check.l1_error:.4g}, mollification gap {gap_psi:.4g}")

    report.update({
        "times": _times(scn),
        "sequence": rows,
        "bv_data": {"initial_tv": tv_u, "initial_sup": sup_u, "target_tv": tv_psi, "target_sup": sup_psi,
                    "mollifier_bounds": {"initial": M_u, "target": M_psi}},
        "bounds": bounds,
    })
    failed = [b["name"] for b in bounds if not b["passed"]]
    if failed:
        report["failure"] = "bounds not met: " + ", ".join(failed)
    table = np.array([[r["n"], r["terminal_l1"], r["mollification_l1_target"], r["h_sup"], r["h_tv"],
                       r["state_sup_plus_tv"]] for r in rows])
    tables = {"bv_sequence": (table, ["n", "terminal_l1", "mollification_l1", "h_sup", "h_tv", "state_sup_plus_tv"])}
    return (4 if failed else 0), report, meta, None, tables


def _trace(scn: Scenario, report: dict, settings: dict, force: bool = False, strategy: Optional[str] = None):
    _require(scn, "T", "ubar", "psi")
    verdict, signal, plan, composed, _ = _steer_core(scn, scn.ubar, scn.psi, force, strategy, settings["tol_blowup"])
    report["verdict"] = verdict.to_dict()
    if signal is None:
        report["failure"] = "hypotheses do not hold"
        return 2, report, {}, None, None
    ts, left = trace(composed, "left")
    _, right = trace(composed, "right")
    report.update({
        "times": _times(scn, plan),
        "trace_end": {"left": float(left[-1]), "right": float(right[-1]),
                      "psi_a": float(scn.psi.value(scn.a)), "psi_b": float(scn.psi.value(scn.b))},
        "trace_start": {"left": float(left[0]), "right": float(right[0])},
    })
    tables = {"traces": (np.column_stack([ts, left, right]), ["t", "u_left", "u_right"])}
    return 0, report, {}, {"signal": signal.to_dict()}, tables


def cmd_metrics(scenario: Scenario, out: Optional[str] = None, settings: Optional[dict] = None) -> dict:
    return _run("metrics", _metrics, scenario, out, settings)


def cmd_steer(scenario: Scenario, out: Optional[str] = None, settings: Optional[dict] = None,
              force: bool = False, strategy: Optional[str] = None) -> dict:
    return _run("steer", _steer, scenario, out, settings, force=force, strategy=strategy)


def cmd_bv_pipeline(scenario: Scenario, n_sequence=None, out: Optional[str] = None,
                    settings: Optional[dict] = None, strategy: Optional[str] = None) -> dict:
    return _run("bv", _bv_pipeline, scenario, out, settings, n_sequence=n_sequence, strategy=strategy)


def cmd_trace(scenario: Scenario, out: Optional[str] = None, settings: Optional[dict] = None,
              force: bool = False, strategy: Optional[str] = None) -> dict:
    return _run("trace", _trace, scenario, out, settings, force=force, strategy=strategy)

# --- Golden values ---

def _lookup(report: dict, dotted: str):
    node = report
    for part in dotted.split("."):
        node = node[int(part)] if isinstance(node, list) else node[part]
    return node


def compare_expected(report: dict, expected: dict) -> list:
    """
    Checks {"values": {dotted.path: {"value": v, "tol": t}}} against a report.
    Returns the list of mismatches as (path, expected, got) tuples.
    """
    mismatches = []
    for dotted, spec in expected.get("values", {}).items():
        try:
            got = _lookup(report, dotted)
        except (KeyError, IndexError, TypeError):
            mismatches.append((dotted, spec["value"], None))
            continue
        want = spec["value"]
        if isinstance(want, str) or isinstance(got, str):
            ok = str(want) == str(_num(got) if not isinstance(got, str) else got)
        elif isinstance(want, bool):
            ok = bool(got) == want
        else:
            ok = abs(float(got) - float(want)) <= float(spec.get("tol", 1e-9))
        if not ok:
            mismatches.append((dotted, want, got))
    return mismatches
