import math
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PPoly

from errors import ControlError, ExtensionInfeasible, FeasibilityError, H2Violation, HypothesisError
from flux_utils import FluxModel, Interval, sup_norm_on, usable_bounds
from metrics_utils import (
    BRANCHES,
    Truncation,
    _delta,
    _num,
    argsup_k,
    bracket_norm_truncated,
    controllability_times,
    curvature_reference,
    growth_direction,
    metric_for,
    one_sided_parts,
    smallest_shift,
)
from profile_utils import ExtendedProfile, ProfileC1, extend_profile, padded_hull, reflect

# Configure logging
logger = logging.getLogger(__name__)

EPS1_DYADICS = [2.0 ** -j for j in range(1, 21)]
STAGE_SPLIT = {"bridge": (0.4, 0.2, 0.4), "null_tails": (0.5, 0.0, 0.5)}
STRATEGIES = tuple(STAGE_SPLIT)
GROWTH_HEADROOM = 1.5
MAX_SPEED_DOUBLINGS = 60


# --- Control signals ---

def ramp(lo: float, hi: float, start: float, stop: float) -> tuple:
    """Linear piece from start at lo to exactly stop at hi."""
    span = hi - lo
    return (lo, hi, start, (stop - start) / span if span > 0 else 0.0)


class ControlSignal:
    """
    Continuous piecewise-linear source h(t). Pieces are (t_lo, t_hi, c0, c1) with
    h(t) = c0 + c1 (t - t_lo); the primitive H(t) = int_start^t h is exact.
    """

    def __init__(self, pieces):
        pieces = [tuple(float(v) for v in p) for p in pieces if p[1] - p[0] > 0]
        if not pieces:
            raise ControlError("a control signal needs at least one piece of positive length")
        for (lo0, hi0, c00, c10), (lo1, hi1, c01, c11) in zip(pieces, pieces[1:]):
            if abs(hi0 - lo1) > 1e-12 * max(1.0, abs(hi0)):
                raise ControlError(f"pieces are not contiguous at t={hi0:.12g}")
            end = c00 + c10 * (hi0 - lo0)
            scale = max(1.0, abs(c00) + abs(c10) * (hi0 - lo0), abs(c01) + abs(c11) * (hi1 - lo1))
            if abs(end - c01) > 1e-10 * scale:
                raise ControlError(f"control jumps from {end:.12g} to {c01:.12g} at t={hi0:.12g}")
        self.pieces = pieces
        breaks = np.array([p[0] for p in pieces] + [pieces[-1][1]])
        coeffs = np.array([[p[3] for p in pieces], [p[2] for p in pieces]])
        self.poly = PPoly(coeffs, breaks)
        self.primitive_poly = self.poly.antiderivative()

    @classmethod
    def zero(cls, t0: float, t1: float):
        return cls([(t0, t1, 0.0, 0.0)])

    @classmethod
    def concatenate(cls, signals):
        return cls([p for s in signals for p in s.pieces])

    @property
    def start(self) -> float:
        return self.pieces[0][0]

    @property
    def end(self) -> float:
        return self.pieces[-1][1]

    @property
    def breakpoints(self):
        return np.array([p[0] for p in self.pieces] + [self.end])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.start) & (t <= self.end)
        return np.where(inside, self.poly(np.clip(t, self.start, self.end)), 0.0)

    def H(self, t):
        """Primitive, constant outside the support."""
        return self.primitive_poly(np.clip(np.asarray(t, dtype=float), self.start, self.end))

    def _end_values(self):
        return np.array([(c0, c0 + c1 * (hi - lo)) for lo, hi, c0, c1 in self.pieces])

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self._end_values())))

    @property
    def total_variation(self) -> float:
        return float(sum(abs(c1) * (hi - lo) for lo, hi, _, c1 in self.pieces))

    def primitive_range(self):
        """(min H, max H) over the support; extremes sit at breakpoints or zeros of h."""
        pts = list(self.breakpoints)
        for lo, hi, c0, c1 in self.pieces:
            if c1 != 0:
                t = lo - c0 / c1
                if lo < t < hi:
                    pts.append(t)
        vals = self.H(np.array(pts))
        return float(vals.min()), float(vals.max())

    def reversed_negated(self):
        """s -> -h(start + end - s) on the same support."""
        s = self.start + self.end
        flipped = []
        for lo, hi, c0, c1 in reversed(self.pieces):
            flipped.append(ramp(s - hi, s - lo, -(c0 + c1 * (hi - lo)), -c0))
        return ControlSignal(flipped)

    def shifted(self, dt: float):
        return ControlSignal([ramp(lo + dt, hi + dt, c0, c0 + c1 * (hi - lo)) for lo, hi, c0, c1 in self.pieces])

    def to_dict(self):
        return {"pieces": [{"t_lo": lo, "t_hi": hi, "c0": c0, "c1": c1} for lo, hi, c0, c1 in self.pieces]}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls([(p["t_lo"], p["t_hi"], p["c0"], p["c1"]) for p in data["pieces"]])
        except (KeyError, TypeError) as e:
            raise ControlError(f"malformed control signal: {e}")


def trapezoid_signal(t0: float, tau: float, area: float) -> ControlSignal:
    """Ramp, plateau and ramp over quarter/half/quarter of [t0, t0 + tau] with the given integral."""
    if area == 0:
        return ControlSignal.zero(t0, t0 + tau)
    height = area / (0.75 * tau)
    q = tau / 4
    return ControlSignal([
        ramp(t0, t0 + q, 0.0, height),
        (t0 + q, t0 + 3 * q, height, 0.0),
        ramp(t0 + 3 * q, t0 + tau, height, 0.0),
    ])


# --- Certificates ---

@dataclass
class SynthesisCertificate:
    a: float
    b: float
    T: float
    eps1: float
    T0: float
    tau1: float
    T1: float
    k_bar: float
    h_bar: float
    alpha: float
    direction: str
    w_star: Optional[float]
    bracket: float
    target_speed: bool
    f1_norm: float
    f2_norm: float
    deriv_bound: float
    deriv_measure: float
    mode: str
    C1: float
    c1: float
    argsup_envelope: Optional[float]
    envelope_ok: Optional[bool]
    claimed_h_sup: float
    claimed_h_tv: float
    claimed_state_bound: float
    interval: list
    truncation: Optional[dict] = None
    extension: Optional[ExtendedProfile] = field(default=None, repr=False)

    @property
    def tail_constant(self) -> Optional[float]:
        if self.w_star is None:
            return None
        return self.alpha + self.T0 * self.h_bar - self.w_star

    @property
    def plateau_state(self) -> float:
        """State on [a,b] once the lift is complete, at time T1."""
        return self.alpha + self.k_bar

    def to_dict(self):
        data = {}
        for name in self.__dataclass_fields__:
            if name == "extension":
                continue
            value = getattr(self, name)
            data[name] = _num(value) if isinstance(value, float) else value
        return data


def _image_interval(ext: ExtendedProfile, dom: Interval) -> Interval:
    lo, hi = ext.value_range()
    if hi - lo >= 1e-12:
        return Interval(lo, hi)
    lo, hi = max(lo - 1e-12, dom.lo), min(hi + 1e-12, dom.hi)
    return Interval(lo, hi) if hi > lo else Interval(lo - 1e-12, lo)


def _derivative_measure(model: FluxModel, profile, mode: str):
    """(side rule, measured derivative) for the bound the mode enforces on the initial state."""
    if mode == "full_bound":
        return "two_sided", profile.d_abs
    if model.shape == "convex":
        return "lower_only", profile.d_minus
    if model.shape == "concave":
        return "upper_only", profile.d_plus
    raise FeasibilityError(f"one-sided bounds need a convex or concave flux, {model.name} is {model.shape}")


def _extension_measure(ext: ExtendedProfile, side_rule: str) -> float:
    return {"two_sided": ext.d_abs, "lower_only": ext.d_minus, "upper_only": ext.d_plus}[side_rule]


def select_parameters(model: FluxModel, ubar: ProfileC1, J1p: Interval, T: float, rho: float = 0.0,
                      mode: str = "full_bound", truncation: Optional[Truncation] = None,
                      w_star: Optional[float] = None) -> SynthesisCertificate:
    """
    Chooses eps1 (largest dyadic meeting the time and slope constraints), the lift k_bar
    (smallest shift whose chord slopes clear the bracket norm minus half the slack), the
    plateau side and tau1, and returns them with the closed-form bounds they imply.
    """
    a, b = ubar.a, ubar.b
    length = b - a
    lo, hi = ubar.value_range()
    if lo < J1p.lo - 1e-12 or hi > J1p.hi + 1e-12:
        raise FeasibilityError(f"initial image [{lo:.6g}, {hi:.6g}] is not inside {J1p.to_list()}")
    dom = truncation.domain(model) if truncation else usable_bounds(model)
    branches = (truncation.direction,) if truncation else BRANCHES

    report = metric_for(model, J1p, truncation)
    norm = report.value
    if norm <= 0:
        raise FeasibilityError(f"bracket norm vanishes on {J1p.to_list()}")
    f2 = sup_norm_on(model, "d2f", curvature_reference(model, [J1p], truncation), check_domain=False)
    side_rule, deriv = _derivative_measure(model, ubar, mode)
    target_speed = math.isinf(norm)

    if mode == "one_sided" and not target_speed and f2 > 0 and deriv > norm / (length * f2) - rho:
        raise FeasibilityError(
            f"one-sided slope {deriv:.6g} exceeds bracket/((b-a)|f''|) - rho = {norm / (length * f2) - rho:.6g}"
        )

    chosen = None
    for eps1 in EPS1_DYADICS:
        speed = (1 + 2 * eps1) * length / (0.75 * T) if target_speed else norm
        for _ in range(MAX_SPEED_DOUBLINGS if target_speed else 1):
            bound = math.inf if f2 == 0 else speed / (length * (1 + 3 * eps1) * f2)
            if deriv < bound:
                break
            speed *= 2
        T0 = length * (1 + 2 * eps1) / speed
        if not (T > T0) or not (deriv < bound):
            continue
        try:
            ext = extend_profile(ubar, eps1, bound, side_rule, value_interval=J1p)
        except ExtensionInfeasible as e:
            logger.debug(f"eps1={eps1}: {e}")
            continue
        if not _extension_measure(ext, side_rule) < bound:
            continue
        chosen = (eps1, speed, T0, bound, ext)
        break
    if chosen is None:
        t_star = 0.0 if target_speed else length / norm
        raise FeasibilityError(
            f"T too small or derivative bound violated: T={T:.6g}, T1*={t_star:.6g}, slope {deriv:.6g}"
        )
    eps1, speed, T0, bound, ext = chosen

    image = _image_interval(ext, dom)
    threshold = speed - eps1 * length / (4 * T0)
    k_bar = smallest_shift(model, image, threshold, domain=dom, branches=branches)
    if k_bar is None:
        raise FeasibilityError(f"no admissible shift lifts {image.to_list()} above speed {threshold:.6g}")
    mid = 0.5 * (image.lo + image.hi)
    direction = "right" if float(_delta(model, mid, k_bar)) > 0 else "left"
    alpha = ext.alpha_minus if direction == "right" else ext.alpha_plus

    reach = Interval(max(min(image.lo, image.lo + k_bar), dom.lo), min(max(image.hi, image.hi + k_bar), dom.hi))
    f1 = sup_norm_on(model, "df", reach, check_domain=False)
    tau1 = 0.5 * min(eps1 * length / (6 * f1) if f1 > 0 else math.inf, eps1 * length / speed, (T - T0) / 2)
    T1 = T0 + tau1
    h_bar = k_bar / T0

    kb = abs(k_bar)
    C1 = max((6 * T + 3 * T0) * (1 + kb) / (T0 * (T - T0)), 8 * (1 + kb) / (T - T0), 4 * (2 + length) + kb)

    c1 = eps1 * speed / (2 * (1 + 2 * eps1))
    envelope, envelope_ok = None, None
    if not target_speed and c1 < norm:
        try:
            envelope = abs(argsup_k(model, J1p, c1, report=report, domain=dom)) + 1
            envelope_ok = kb <= envelope + 1e-12
        except HypothesisError as e:
            logger.debug(f"argsup envelope unavailable: {e}")

    h_tv = 2 * kb / T0
    h_sup = kb / T0
    if w_star is not None:
        tail = abs(alpha + k_bar - w_star)
        h_tv += 8 * tail / (3 * (T - T1))
        h_sup = max(h_sup, 4 * tail / (3 * (T - T1)))
    d_state = getattr(ubar, one_sided_parts(model)[0])
    cert = SynthesisCertificate(
        a=a, b=b, T=T, eps1=eps1, T0=T0, tau1=tau1, T1=T1, k_bar=k_bar, h_bar=h_bar, alpha=alpha,
        direction=direction, w_star=w_star, bracket=speed, target_speed=target_speed, f1_norm=f1,
        f2_norm=f2, deriv_bound=bound, deriv_measure=deriv, mode=mode, C1=C1, c1=c1,
        argsup_envelope=envelope, envelope_ok=envelope_ok, claimed_h_sup=h_sup, claimed_h_tv=h_tv,
        claimed_state_bound=C1 * (1 + ubar.sup_norm + d_state), interval=J1p.to_list(),
        truncation=truncation.to_dict() if truncation else None, extension=ext,
    )
    logger.info(f"certificate: eps1={eps1:g}, T0={T0:.6g}, T1={T1:.6g}, k_bar={k_bar:.6g}, {direction}-moving")
    return cert


def build_null_control(cert: SynthesisCertificate, T: Optional[float] = None) -> ControlSignal:
    """
    Lift ramp, hold and ramp down over [0, T1] with integral T0*h_bar, then either the
    three-piece tail removing alpha + T0*h_bar - w_star, or a zero hold when w_star is None.
    """
    T = cert.T if T is None else T
    tau1, T0, T1, h_bar = cert.tau1, cert.T0, cert.T1, cert.h_bar
    if not T > T1 - 1e-12:
        raise ControlError(f"horizon {T:.6g} ends before the lift completes at {T1:.6g}")
    pieces = [
        ramp(0.0, tau1, 0.0, h_bar),
        (tau1, T0, h_bar, 0.0),
        ramp(T0, T1, h_bar, 0.0),
    ]
    if cert.w_star is None:
        if T > T1:
            pieces.append((T1, T, 0.0, 0.0))
        return ControlSignal(pieces)

    C = cert.tail_constant
    span = T - T1
    depth = -4 * C / (3 * span)
    q = span / 4
    pieces += [
        ramp(T1, T1 + q, 0.0, depth),
        (T1 + q, T1 + 3 * q, depth, 0.0),
        ramp(T1 + 3 * q, T, depth, 0.0),
    ]
    return ControlSignal(pieces)


# --- Growth regime ---

def u0_search(model: FluxModel, ubar, T: float, Jp: Optional[Interval] = None, headroom: float = 1.0,
              deriv: Optional[float] = None, max_steps: int = 60) -> Truncation:
    """
    Smallest truncation point u0 on a geometric grid beyond Jp for which the truncated
    bracket norm makes T and the slope of ubar admissible (with the given headroom).
    """
    direction = growth_direction(model)
    Jp = Jp or padded_hull(ubar)
    length = ubar.b - ubar.a
    deriv = ubar.d_abs if deriv is None else deriv
    step = max(1.0, Jp.length)
    full = usable_bounds(model)
    for j in range(max_steps):
        u0 = Jp.hi + step * 2.0 ** j if direction == "k_nonneg" else Jp.lo - step * 2.0 ** j
        if not (full.lo <= u0 <= full.hi):
            break
        truncation = Truncation(u0, direction)
        norm = bracket_norm_truncated(model, Jp, u0, direction).value
        if norm <= 0:
            continue
        f2 = sup_norm_on(model, "d2f", truncation.reference(Jp), check_domain=False)
        time_ok = T > headroom * length / norm
        slope_ok = f2 == 0 or headroom * deriv < norm / (length * f2)
        logger.debug(f"u0={u0:.6g}: bracket {norm:.6g}, time ok {time_ok}, slope ok {slope_ok}")
        if time_ok and slope_ok:
            return truncation
    raise H2Violation(f"{model.name}: no truncation point makes T={T:.6g} admissible before the overflow guard")


# --- Composition ---

@dataclass
class CompositionPlan:
    strategy: str
    regime: str
    T: float
    a: float
    b: float
    stages: dict
    w1: float
    w2: float
    times: tuple
    cert_a: SynthesisCertificate
    cert_c: SynthesisCertificate
    control_constant: float
    state_constant: float
    claimed_control_bound: float
    claimed_state_bound: float
    stage_a_signal: ControlSignal = field(repr=False)
    stage_c_signal: ControlSignal = field(repr=False)

    def phase_value(self, t, signal: ControlSignal):
        """Constant state on [a,b] between the end of the forward lift and the start of the reversed stage."""
        return self.w1 + signal.H(t) - signal.H(self.cert_a.T1)

    @property
    def phase_window(self):
        return self.cert_a.T1, self.T - self.cert_c.T1

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "regime": self.regime,
            "T": self.T,
            "stages": {k: (list(v) if v else None) for k, v in self.stages.items()},
            "w1": self.w1,
            "w2": self.w2,
            "T1_star": _num(self.times[0]),
            "T2_star": _num(self.times[1]),
            "control_constant": self.control_constant,
            "state_constant": self.state_constant,
            "claimed_control_bound": self.claimed_control_bound,
            "claimed_state_bound": self.claimed_state_bound,
            "stage_a": self.cert_a.to_dict(),
            "stage_c": self.cert_c.to_dict(),
        }


def _mode_for(regime: str) -> str:
    return "full_bound" if regime.endswith("two_sided") else "one_sided"


def compose_full_control(model: FluxModel, ubar: ProfileC1, psi: ProfileC1, T: float, rho: float = 0.0,
                         J1p: Optional[Interval] = None, J2p: Optional[Interval] = None,
                         regime: str = "bounded_two_sided", strategy: str = "bridge"):
    """
    Steers ubar to psi in time T: a forward null control of ubar, a transfer between the two
    constant levels (bridge) or two full tails through zero, and the time reversal of the null
    control of the reflected target.
    """
    if strategy not in STAGE_SPLIT:
        raise ValueError(f"unknown strategy '{strategy}' (known: {', '.join(STRATEGIES)})")
    a, b = ubar.a, ubar.b
    if abs(psi.a - a) > 1e-12 or abs(psi.b - b) > 1e-12:
        raise FeasibilityError("initial and target states must live on the same interval")
    length = b - a
    mode = _mode_for(regime)
    psi_r = reflect(psi)
    J1p = J1p or padded_hull(ubar)
    J2p = J2p or padded_hull(psi)
    share_a, share_b, share_c = STAGE_SPLIT[strategy]
    growth = regime.startswith("growth")

    trunc_a = trunc_c = None
    if growth:
        _, deriv_a = _derivative_measure(model, ubar, mode)
        _, deriv_c = _derivative_measure(model, psi_r, mode)
        T_A, T_C = share_a * T, share_c * T
        tau_B = share_b * T
        trunc_a = u0_search(model, ubar, T_A, J1p, GROWTH_HEADROOM, deriv_a)
        trunc_c = u0_search(model, psi_r, T_C, J2p, GROWTH_HEADROOM, deriv_c)
        times = (length / metric_for(model, J1p, trunc_a).value, length / metric_for(model, J2p, trunc_c).value)
    else:
        t1, t2, t_star = controllability_times(model, J1p, J2p, a, b)
        if not T > t_star:
            raise FeasibilityError(f"T={T:.6g} does not exceed T*={t_star:.6g} (T1*={t1:.6g}, T2*={t2:.6g})")
        slack = T - t_star
        T_A, tau_B, T_C = t1 + share_a * slack, share_b * slack, t2 + share_c * slack
        times = (t1, t2)

    w_star = None if strategy == "bridge" else 0.0
    cert_a = select_parameters(model, ubar, J1p, T_A, rho, mode, trunc_a, w_star)
    cert_c = select_parameters(model, psi_r, J2p, T_C, rho, mode, trunc_c, w_star)
    h_a = build_null_control(cert_a, T_A)
    h_c = build_null_control(cert_c, T_C)
    w1, w2 = cert_a.plateau_state, cert_c.plateau_state

    parts = [h_a]
    control_constant = cert_a.C1 + cert_c.C1
    stage_b = None
    if strategy == "bridge":
        parts.append(trapezoid_signal(T_A, tau_B, w2 - w1))
        control_constant += 4 * (1 + abs(cert_a.k_bar) + abs(cert_c.k_bar)) / tau_B
        stage_b = (T_A, T_A + tau_B)
    parts.append(h_c.reversed_negated().shifted(T - T_C))
    signal = ControlSignal.concatenate(parts)

    d_u, d_psi = one_sided_parts(model)
    state_constant = max(cert_a.C1, cert_c.C1)
    sizes = 1 + ubar.sup_norm + psi.sup_norm
    plan = CompositionPlan(
        strategy=strategy, regime=regime, T=T, a=a, b=b,
        stages={"A": (0.0, T_A), "B": stage_b, "C": (T - T_C, T)},
        w1=w1, w2=w2, times=times, cert_a=cert_a, cert_c=cert_c,
        control_constant=control_constant, state_constant=state_constant,
        claimed_control_bound=control_constant * sizes,
        claimed_state_bound=state_constant * (sizes + getattr(ubar, d_u) + getattr(psi, d_psi)),
        stage_a_signal=h_a, stage_c_signal=h_c,
    )
    logger.info(f"composed {strategy} control on [0, {T:.6g}]: w1={w1:.6g}, w2={w2:.6g}")
    return signal, plan
