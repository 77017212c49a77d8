import math
import logging
from typing import Optional

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.interpolate import CubicHermiteSpline

from errors import BlowUp, CertificateViolation, WindowTooSmall
from flux_utils import FluxModel, Interval, sup_norm_on, usable_bounds

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_DX = 0.002
DEFAULT_TOL_BLOWUP = 1e10
DEFAULT_NT = 200
PLATEAU_FEET = 6
STATE_CACHE_SIZE = 32
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10


def _speed_integrals(model: FluxModel, h, values, t0: float, t1: float):
    """
    (int f'(v + H), int f''(v + H)) over [t0, t1] for every foot value v,
    by adaptive Gauss-Kronrod with the control breakpoints as split points.
    """
    values = np.asarray(values, dtype=float)
    if t1 <= t0:
        return np.zeros_like(values), np.zeros_like(values)
    m = values.size

    def integrand(tau):
        z = values + float(h.H(tau))
        return np.concatenate([model.eval_df(z), model.eval_d2f(z)])

    inner = [t for t in h.breakpoints if t0 < t < t1]
    out, _ = quad_vec(integrand, t0, t1, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, norm="max",
                      points=inner or None)
    return out[:m], out[m:]


class ClassicalSolution:
    """
    Fan of characteristics x(t; x0) = x0 + int f'(z0), z0 = ubar(x0) + H(t), with the
    closed-form Riccati slope z1 = d/(1 + d int f''(z0)), d = ubar'(x0).
    u(t, .) is the cubic Hermite interpolant of (x, z0) with slopes z1.
    """

    def __init__(self, model, profile, h, x0, values, slopes, unique_values, inverse, times, F1, F2,
                 blowup=None):
        self.model = model
        self.profile = profile
        self.h = h
        self.x0 = x0
        self.values = values
        self.slopes = slopes
        self.unique_values = unique_values
        self.inverse = inverse
        self.times = times
        self.F1 = F1
        self.F2 = F2
        self.blowup = blowup
        self._cache = {}

    @property
    def a(self) -> float:
        return self.profile.a

    @property
    def b(self) -> float:
        return self.profile.b

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def _integrals_at(self, t: float):
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 1)
        if abs(self.times[i] - t) <= 1e-14 * max(1.0, abs(t)):
            return self.F1[i], self.F2[i]
        extra1, extra2 = _speed_integrals(self.model, self.h, self.unique_values, float(self.times[i]), t)
        return self.F1[i] + extra1, self.F2[i] + extra2

    def state(self, t: float):
        """(x, z0, z1) of every characteristic at time t."""
        t = float(t)
        if t < -1e-14 or t > self.T + 1e-12 * max(1.0, self.T):
            raise WindowTooSmall(f"t={t:.6g} lies outside the solved horizon [0, {self.T:.6g}]")
        key = round(t, 15)
        if key not in self._cache:
            f1, f2 = self._integrals_at(min(max(t, 0.0), self.T))
            f1, f2 = f1[self.inverse], f2[self.inverse]
            X = self.x0 + f1
            Z0 = self.values + float(self.h.H(t))
            q = 1.0 + self.slopes * f2
            Z1 = np.where(self.slopes == 0, 0.0, self.slopes / np.where(q == 0, np.inf, q))
            if len(self._cache) >= STATE_CACHE_SIZE:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = (X, Z0, Z1)
        return self._cache[key]

    def _interpolant(self, t: float, x):
        X, Z0, Z1 = self.state(t)
        x = np.asarray(x, dtype=float)
        if np.any(x < X[0] - 1e-12) or np.any(x > X[-1] + 1e-12):
            raise WindowTooSmall(
                f"query x in [{x.min():.6g}, {x.max():.6g}] leaves the fan [{X[0]:.6g}, {X[-1]:.6g}] at t={t:.6g}"
            )
        keep = np.concatenate([[True], np.diff(X) > 0])
        return CubicHermiteSpline(X[keep], Z0[keep], Z1[keep]), np.clip(x, X[0], X[-1])

    def __call__(self, t: float, x):
        spline, x = self._interpolant(t, x)
        return spline(x)

    def slope(self, t: float, x):
        spline, x = self._interpolant(t, x)
        return spline(x, 1)

    def feet_landing_in(self, t: float, lo: float, hi: float):
        X, _, _ = self.state(t)
        return self.x0[(X >= lo) & (X <= hi)]


def _foot_grid(profile, dx: float, window: Interval):
    a, b = profile.a, profile.b
    lo = getattr(profile, "lo", a)
    hi = getattr(profile, "hi", b)
    width = getattr(profile, "width", None)
    spacing = min(dx, (b - a) / 400)
    if width:
        spacing = min(spacing, width / 8)
    n = int(math.ceil((hi - lo) / spacing)) + 1
    dense = np.linspace(lo, hi, n)
    left = np.linspace(window.lo, lo, PLATEAU_FEET)[:-1] if window.lo < lo else np.array([])
    right = np.linspace(hi, window.hi, PLATEAU_FEET)[1:] if window.hi > hi else np.array([])
    knots = np.asarray(profile.knots, dtype=float)
    return np.unique(np.concatenate([left, dense, knots, right]))


def default_window(model: FluxModel, profile, h, T: float, margin: float = 0.1) -> Interval:
    """[a - R, b + R] with R covering every backward domain of dependence on [0, T]."""
    v_lo, v_hi = profile.value_range()
    H_lo, H_hi = h.primitive_range()
    dom = usable_bounds(model)
    s_lo, s_hi = max(v_lo + min(H_lo, 0.0), dom.lo), min(v_hi + max(H_hi, 0.0), dom.hi)
    if s_hi - s_lo < 1e-9:
        s_lo, s_hi = s_lo - 1e-9, s_hi + 1e-9
    f1 = sup_norm_on(model, "df", Interval(s_lo, s_hi), check_domain=False)
    length = profile.b - profile.a
    reach = f1 * T + 0.1 * length + margin
    lo = min(getattr(profile, "lo", profile.a), profile.a - reach)
    hi = max(getattr(profile, "hi", profile.b), profile.b + reach)
    return Interval(lo, hi)


def solve_classical(model: FluxModel, profile, h, T: float, dx: float = DEFAULT_DX,
                    tol_blowup: float = DEFAULT_TOL_BLOWUP, window: Optional[Interval] = None,
                    allow_blowup: bool = False, nt: int = DEFAULT_NT) -> ClassicalSolution:
    """
    Solves u_t + f(u)_x = h(t), u(0) = profile, by characteristics on [0, T].
    Raises BlowUp when some |z1| passes tol_blowup or the fan folds; with
    allow_blowup the solution is cut at the last safe time and the event recorded.
    """
    window = window or default_window(model, profile, h, T)
    x0 = _foot_grid(profile, dx, window)
    values = np.asarray(profile.value(x0), dtype=float)
    slopes = np.asarray(profile.slope(x0), dtype=float)
    unique_values, inverse = np.unique(values, return_inverse=True)

    breaks = [t for t in h.breakpoints if 0 < t < T]
    times = np.unique(np.concatenate([np.linspace(0.0, T, nt + 1), breaks]))
    m = unique_values.size
    F1 = np.zeros((times.size, m))
    F2 = np.zeros((times.size, m))
    for i in range(1, times.size):
        d1, d2 = _speed_integrals(model, h, unique_values, times[i - 1], times[i])
        F1[i] = F1[i - 1] + d1
        F2[i] = F2[i - 1] + d2

    # blow-up: q = 1 + d int f'' must stay above |d|/tol; the fan must stay ordered
    q = 1.0 + slopes[None, :] * F2[:, inverse]
    bad_q = q <= np.abs(slopes)[None, :] / tol_blowup
    X = x0[None, :] + F1[:, inverse]
    folded = np.any(np.diff(X, axis=1) <= 0, axis=1)
    bad_rows = np.where(np.any(bad_q, axis=1) | folded)[0]
    blowup = None
    if bad_rows.size:
        i = int(bad_rows[0])
        if np.any(bad_q[i]):
            j = int(np.argmin(q[i]))
            q0, q1 = q[i - 1, j], q[i, j]
            frac = q0 / (q0 - q1) if q0 != q1 else 1.0
            t_event = float(times[i - 1] + frac * (times[i] - times[i - 1]))
        else:
            j = int(np.argmin(np.diff(X[i])))
            t_event = float(times[i])
        blowup = (t_event, float(x0[j]))
        if not allow_blowup:
            raise BlowUp(t_event, float(x0[j]))
        logger.warning(f"gradient blow-up at t={t_event:.6g}; solution cut at t={times[i - 1]:.6g}")
        times, F1, F2 = times[:i], F1[:i], F2[:i]

    sol = ClassicalSolution(model, profile, h, x0, values, slopes, unique_values, inverse, times, F1, F2, blowup)
    X_end = sol.state(sol.T)[0]
    if X_end[0] > sol.a or X_end[-1] < sol.b:
        raise WindowTooSmall(f"fan [{X_end[0]:.6g}, {X_end[-1]:.6g}] no longer covers [{sol.a}, {sol.b}]")
    logger.debug(f"classical solve: {x0.size} feet ({m} distinct states), {times.size} time levels")
    return sol


def verify_no_blowup_bound(sol: ClassicalSolution, cert) -> dict:
    """
    Checks the certified lower bound (b-a) eps1 |f''| / (2 [|f|]) on 1/|z1| over [0, T1]
    on every constrained characteristic, and the sign-side Riccati bound on the others.
    """
    length = cert.b - cert.a
    bound = length * cert.eps1 * cert.f2_norm / (2 * cert.bracket)
    upto = min(cert.T1, sol.T)
    check_times = np.unique(np.concatenate([sol.times[sol.times <= upto], [upto]]))
    d = sol.slopes
    if cert.mode == "full_bound":
        constrained = d != 0
    elif sol.model.shape == "concave":
        constrained = d > 0
    else:
        constrained = d < 0
    free = (d != 0) & ~constrained

    worst = math.inf
    side_ok = True
    for t in check_times:
        _, _, z1 = sol.state(t)
        if np.any(constrained):
            inv = 1.0 / np.maximum(np.abs(z1[constrained]), 1e-300)
            worst = min(worst, float(inv.min()))
        if np.any(free):
            if sol.model.shape == "concave":
                side_ok &= bool(np.all(z1[free] >= np.minimum(0.0, d[free]) - 1e-9 * np.abs(d[free])))
            else:
                side_ok &= bool(np.all(z1[free] <= np.maximum(0.0, d[free]) + 1e-9 * np.abs(d[free])))
    report = {
        "bound": bound,
        "min_inverse_slope": worst if not math.isinf(worst) else "+inf",
        "lines_checked": int(np.count_nonzero(constrained)),
        "one_sided_ok": side_ok,
        "passed": (worst >= bound * (1 - 1e-9)) and side_ok,
    }
    if not report["passed"]:
        raise CertificateViolation(
            f"Riccati bound violated: min 1/|z1| = {worst:.6g} < {bound:.6g} or one-sided check failed"
        )
    return report


def trace(sol, side: str, times=None):
    """u(t, a+) or u(t, b-) on the given (or the solver's) time grid."""
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got '{side}'")
    times = np.asarray(sol.times if times is None else times, dtype=float)
    x = sol.a if side == "left" else sol.b
    return times, np.array([float(sol(t, x)) for t in times])


def riccati_cross_check(sol: ClassicalSolution, x0s) -> float:
    """Max relative deviation between the closed-form z1 and a direct ODE integration."""
    worst = 0.0
    t_end = sol.T
    for xf in np.asarray(x0s, dtype=float):
        v = float(sol.profile.value(xf))
        d = float(sol.profile.slope(xf))
        if d == 0:
            continue
        ivp = solve_ivp(lambda t, z: -sol.model.eval_d2f(v + float(sol.h.H(t))) * z ** 2,
                        (0.0, t_end), [d], method="DOP853", rtol=1e-11, atol=1e-14)
        _, f2 = _speed_integrals(sol.model, sol.h, np.array([v]), 0.0, t_end)
        closed = d / (1.0 + d * f2[0])
        worst = max(worst, abs(ivp.y[0, -1] - closed) / max(abs(closed), 1e-300))
    return worst


# --- Composition of the two stages ---

class ComposedSolution:
    """
    Stage A fan on [0, T1(A)], the constant phase w1 + H(t) - H(T1(A)) on [a,b],
    then the reflected, time-reversed stage C fan on [T - T1(C), T].
    """

    def __init__(self, plan, signal, sol_a: ClassicalSolution, sol_c: ClassicalSolution):
        self.plan = plan
        self.signal = signal
        self.sol_a = sol_a
        self.sol_c = sol_c
        self.a = plan.a
        self.b = plan.b
        self.T = plan.T
        self.t_enter, self.t_leave = plan.phase_window
        self.times = np.unique(np.concatenate([
            sol_a.times[sol_a.times <= self.t_enter],
            np.linspace(self.t_enter, self.t_leave, 21),
            self.T - sol_c.times[::-1],
        ]))

    def __call__(self, t: float, x):
        x = np.asarray(x, dtype=float)
        if t <= self.t_enter:
            return self.sol_a(t, x)
        if t >= self.t_leave:
            return self.sol_c(self.T - t, self.a + self.b - x)
        return np.full(x.shape, float(self.plan.phase_value(t, self.signal)))


def solve_composed(model: FluxModel, plan, signal, dx: float = DEFAULT_DX,
                   tol_blowup: float = DEFAULT_TOL_BLOWUP, nt: int = DEFAULT_NT) -> ComposedSolution:
    cert_a, cert_c = plan.cert_a, plan.cert_c
    sol_a = solve_classical(model, cert_a.extension, plan.stage_a_signal, cert_a.T1, dx, tol_blowup, nt=nt)
    sol_c = solve_classical(model, cert_c.extension, plan.stage_c_signal, cert_c.T1, dx, tol_blowup, nt=nt)
    return ComposedSolution(plan, signal, sol_a, sol_c)


def terminal_report(composed: ComposedSolution, psi, n: int = 2001) -> dict:
    """
    Sup errors at both plateaus and at the hand-over between the constant phase and the
    reversed stage, plus the plateau foot-point check of stage A. The reversed stage starts
    from the reflected target, so reconstruction_error only checks the reflection itself.
    """
    a, b = composed.a, composed.b
    xs = np.linspace(a, b, n)
    plan = composed.plan
    terminal = float(np.max(np.abs(composed(composed.T, xs) - psi.value(xs))))
    plateau_a = float(np.max(np.abs(composed.sol_a(plan.cert_a.T1, xs) - plan.w1)))
    plateau_c = float(np.max(np.abs(composed.sol_c(plan.cert_c.T1, xs) - plan.w2)))
    junction = abs(float(plan.phase_value(composed.t_leave, composed.signal)) - plan.w2)

    cert = plan.cert_a
    margin = cert.eps1 * (b - a)
    feet = composed.sol_a.feet_landing_in(cert.T1, a, b)
    if cert.direction == "right":
        feet_ok = bool(np.all(feet <= a - margin + 1e-12))
    else:
        feet_ok = bool(np.all(feet >= b + margin - 1e-12))
    return {
        "reconstruction_error": terminal,
        "plateau_error_a": plateau_a,
        "plateau_error_c": plateau_c,
        "junction_error": junction,
        "sup_error": max(terminal, plateau_a, plateau_c, junction),
        "plateau_feet_ok": feet_ok,
    }


def snapshot_table(sol, times, n: int = 201):
    """Rows (t, x, u) on [a, b] at the requested times."""
    xs = np.linspace(sol.a, sol.b, n)
    rows = [np.column_stack([np.full(n, t), xs, sol(t, xs)]) for t in times]
    return np.vstack(rows)


def fan_table(sol: ClassicalSolution, stride: int = 10, time_stride: int = 10):
    """Rows (x0, t, x, z0, z1) for every stride-th characteristic."""
    rows = []
    for t in sol.times[::time_stride]:
        X, Z0, Z1 = sol.state(t)
        idx = slice(None, None, stride)
        rows.append(np.column_stack([sol.x0[idx], np.full(X[idx].size, t), X[idx], Z0[idx], Z1[idx]]))
    return np.vstack(rows)
