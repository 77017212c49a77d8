import math
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_trapezoid

from characteristics_utils import default_window
from errors import StepFailure, WindowTooSmall
from flux_utils import FluxModel, Interval

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_FV_DX = 0.004
DEFAULT_CFL = 0.5
SCHEMES = ("auto", "godunov", "engquist_osher")
SPLIT_TABLE_POINTS = 8193
EDGE_TOL = 1e-10
GL4_NODES, GL4_WEIGHTS = leggauss(4)


# --- Numerical fluxes ---

class NumericalFlux:
    """
    Two-point monotone flux. Godunov in closed form for convex (max formula) and
    concave (min formula) fluxes with a known sonic point; Engquist-Osher otherwise.
    """

    def __init__(self, model: FluxModel, scheme: str = "auto"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{scheme}' (known: {', '.join(SCHEMES)})")
        godunov_ok = model.shape in ("convex", "concave") and model.sonic_point is not None
        if scheme == "godunov" and not godunov_ok:
            raise ValueError("closed-form Godunov flux needs a convex or concave flux with a sonic point")
        self.model = model
        self.name = "godunov" if scheme in ("auto", "godunov") and godunov_ok else "engquist_osher"
        self._table = None

    def ensure_range(self, lo: float, hi: float):
        """Tabulates the split flux f+ over [lo, hi] (padded) unless the current table covers it."""
        if self.name != "engquist_osher":
            return
        if self._table is not None and self._table[0][0] <= lo and self._table[0][-1] >= hi:
            return
        pad = 0.25 * max(hi - lo, 1.0)
        us = np.linspace(lo - pad, hi + pad, SPLIT_TABLE_POINTS)
        plus = self.model.eval_f(us[0]) + cumulative_trapezoid(np.maximum(self.model.eval_df(us), 0.0), us, initial=0.0)
        self._table = (us, plus)
        logger.debug(f"split flux table rebuilt on [{us[0]:.4g}, {us[-1]:.4g}]")

    def _f_plus(self, u):
        us, plus = self._table
        return np.interp(u, us, plus)

    def __call__(self, ul, ur):
        f = self.model.eval_f
        if self.name == "godunov":
            s = self.model.sonic_point
            if self.model.shape == "convex":
                return np.maximum(f(np.maximum(ul, s)), f(np.minimum(ur, s)))
            return np.minimum(f(np.minimum(ul, s)), f(np.maximum(ur, s)))
        # f- = f - f+ keeps F(u, u) = f(u) exactly
        return self._f_plus(ul) + (f(ur) - self._f_plus(ur))


# --- History ---

@dataclass
class FVHistory:
    centres: np.ndarray
    dx: float
    window: Interval
    cfl: float
    scheme: str
    boundary: str
    snapshot_times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    dH_history: list = field(default_factory=list)
    tv_history: list = field(default_factory=list)
    mass_history: list = field(default_factory=list)
    boundary_flux: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def T(self) -> float:
        return self.snapshot_times[-1]

    def snapshot(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(np.asarray(self.snapshot_times) - t)))
        return self.snapshots[i]

    def meta(self) -> dict:
        return {
            "dx": self.dx,
            "cfl": self.cfl,
            "scheme": self.scheme,
            "boundary": self.boundary,
            "window": self.window.to_list(),
            "steps": len(self.dt_history),
            "dt_min": min(self.dt_history) if self.dt_history else 0.0,
            "dt_max": max(self.dt_history) if self.dt_history else 0.0,
        }


def total_variation(u) -> float:
    return float(np.sum(np.abs(np.diff(u))))


# --- Solver ---

def solve_fv(model: FluxModel, u0, h, T: float, dx: float = DEFAULT_FV_DX, window: Optional[Interval] = None,
             boundary="extended", cfl: float = DEFAULT_CFL, scheme: str = "auto", record: str = "snapshots",
             n_snapshots: int = 11) -> FVHistory:
    """
    Lie splitting: a monotone conservative step for u_t + f(u)_x = 0, then the exact
    source shift u += H(t + dt) - H(t) in every cell.

    boundary is "extended" (transmissive far field over a window wide enough that the
    edge cells only ever see the plateau values) or a pair of callables t -> ghost value
    for the left and right ghost cells ("traces").
    """
    if not 0 < cfl <= 0.5:
        raise ValueError(f"CFL number must lie in (0, 0.5], got {cfl}")
    if record not in ("snapshots", "all"):
        raise ValueError(f"record must be 'snapshots' or 'all', got '{record}'")
    traces = not isinstance(boundary, str)
    if traces:
        left_fn, right_fn = boundary
        window = window or Interval(u0.a, u0.b)
    elif boundary == "extended":
        window = window or default_window(model, u0, h, T)
    else:
        raise ValueError(f"unknown boundary mode '{boundary}'")

    n = max(int(round(window.length / dx)), 2)
    dx = window.length / n
    edges = np.linspace(window.lo, window.hi, n + 1)
    centres = 0.5 * (edges[:-1] + edges[1:])
    u = np.asarray(u0.cell_averages(edges), dtype=float)
    flux = NumericalFlux(model, scheme)
    hist = FVHistory(centres, dx, window, cfl, flux.name, "traces" if traces else "extended")

    edge_values = (u[0], u[-1])
    targets = list(np.linspace(0.0, T, max(n_snapshots, 2)))
    hist.snapshot_times.append(0.0)
    hist.snapshots.append(u.copy())
    hist.tv_history.append(total_variation(u))
    hist.mass_history.append(float(np.sum(u) * dx))
    hist.boundary_flux.append(0.0)
    next_target = 1
    t = 0.0
    h_now = float(h.H(0.0))
    while t < T - 1e-14 * max(1.0, T):
        if traces:
            gl, gr = float(left_fn(t)), float(right_fn(t))
        else:
            gl, gr = u[0], u[-1]
        U = np.concatenate([[gl], u, [gr]])
        flux.ensure_range(float(U.min()), float(U.max()))
        speed = float(np.max(np.abs(model.eval_df(U))))
        dt = cfl * dx / speed if speed > 0 else T - t
        dt = min(dt, T - t, targets[next_target] - t)
        if dt <= 1e-14 * max(1.0, T):
            raise StepFailure(f"time step underflow at t={t:.6g} (dt={dt:.3g}, max speed {speed:.6g})")
        F = flux(U[:-1], U[1:])
        v = u - dt / dx * (F[1:] - F[:-1])
        tv_step = total_variation(v)
        h_next = float(h.H(t + dt))
        dH = h_next - h_now
        u_next = v + dH
        if record == "all":
            hist.steps.append((t, dt, dH, U, u_next.copy()))
        u = u_next
        t += dt
        h_now = h_next

        hist.dt_history.append(dt)
        hist.dH_history.append(dH)
        hist.tv_history.append(tv_step)
        hist.mass_history.append(float(np.sum(u) * dx))
        hist.boundary_flux.append(hist.boundary_flux[-1] + dt * float(F[0] - F[-1]))

        if not traces:
            shift = h_now - float(h.H(0.0))
            drift = max(abs(u[0] - edge_values[0] - shift), abs(u[-1] - edge_values[1] - shift))
            if drift > EDGE_TOL * max(1.0, abs(edge_values[0]), abs(edge_values[1])):
                raise WindowTooSmall(f"nontrivial data reached the edge of {window.to_list()} at t={t:.6g}")
        if next_target < len(targets) and abs(t - targets[next_target]) <= 1e-12 * max(1.0, T):
            t = targets[next_target]
            hist.snapshot_times.append(t)
            hist.snapshots.append(u.copy())
            next_target = min(next_target + 1, len(targets) - 1)

    logger.info(f"FV solve ({flux.name}, {n} cells, dx={dx:.3g}): {len(hist.dt_history)} steps to t={t:.6g}")
    return hist


# --- Verification ---

def discrete_entropy_check(history: FVHistory, model: FluxModel, sample_k) -> float:
    """
    Max positive part over cells, steps and sampled k of the cell entropy residual
    |u^{n+1} - k| - |u^n - k| + dt/dx (Q_{i+1/2} - Q_{i-1/2}) - sgn(v - k) dH,
    with the Kruzhkov numerical entropy flux Q = F(u v k, w v k) - F(u ^ k, w ^ k)
    and v = u^{n+1} - dH the pre-source state.
    """
    if not history.steps:
        raise ValueError("entropy check needs a history recorded with record='all'")
    flux = NumericalFlux(model, "godunov" if history.scheme == "godunov" else "engquist_osher")
    ks = np.asarray(sample_k, dtype=float)
    lo = min(min(float(s[3].min()) for s in history.steps), float(ks.min()))
    hi = max(max(float(s[3].max()) for s in history.steps), float(ks.max()))
    flux.ensure_range(lo, hi)

    worst = 0.0
    for _, dt, dH, U, u_next in history.steps:
        lam = dt / history.dx
        u_prev = U[1:-1]
        v = u_next - dH
        for k in ks:
            Q = flux(np.maximum(U[:-1], k), np.maximum(U[1:], k)) - flux(np.minimum(U[:-1], k), np.minimum(U[1:], k))
            res = np.abs(u_next - k) - np.abs(u_prev - k) + lam * (Q[1:] - Q[:-1]) - np.sign(v - k) * dH
            worst = max(worst, float(res.max()))
    return max(worst, 0.0)


@dataclass
class TerminalCheck:
    l1_error: float
    tol: float
    passed: bool

    def to_dict(self):
        return {"l1_error": self.l1_error, "tol": self.tol, "passed": self.passed}


def l1_against(history: FVHistory, fn, a: float, b: float, u=None) -> float:
    """L1([a,b]) distance between the cell-constant state and fn, 4-point Gauss per cell piece."""
    u = history.final if u is None else u
    half = 0.5 * history.dx
    lo_edges = history.centres - half
    hi_edges = history.centres + half
    lo = np.maximum(lo_edges, a)
    hi = np.minimum(hi_edges, b)
    live = hi > lo
    lo, hi, vals = lo[live], hi[live], u[live]
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    xs = mid[:, None] + rad[:, None] * GL4_NODES[None, :]
    diffs = np.abs(vals[:, None] - np.asarray(fn(xs.ravel())).reshape(xs.shape))
    return float(np.sum(rad * (diffs @ GL4_WEIGHTS)))


def verify_terminal(history: FVHistory, psi, tol: float, a: Optional[float] = None,
                    b: Optional[float] = None) -> TerminalCheck:
    a = psi.a if a is None else a
    b = psi.b if b is None else b
    err = l1_against(history, psi.value, a, b)
    return TerminalCheck(err, tol, bool(err <= tol))


def trace_boundary(composed, dx: float, n_times: int = 401):
    """
    Ghost-cell feeds for the traces mode: the composed solution half a cell outside
    [a, b], tabulated in time and linearly interpolated.
    """
    a, b = composed.a, composed.b
    times = np.unique(np.concatenate([composed.times, np.linspace(0.0, composed.T, n_times)]))
    left = np.array([float(composed(t, np.array([a - 0.5 * dx]))[0]) for t in times])
    right = np.array([float(composed(t, np.array([b + 0.5 * dx]))[0]) for t in times])
    return (
        lambda t: float(np.interp(t, times, left)),
        lambda t: float(np.interp(t, times, right)),
    )


def convergence_ratio(errors) -> list:
    """Successive error ratios of a dx-halving sequence."""
    return [errors[i] / errors[i + 1] if errors[i + 1] > 0 else math.inf for i in range(len(errors) - 1)]
