import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from errors import DomainError, FluxTableError, UnboundedNorm, UnknownFlux

# Configure logging
logger = logging.getLogger(__name__)

SINGULAR_MARGIN = 1e-6
OVERFLOW_GUARD = 1e12
SUP_GRID_POINTS = 4096
SUP_REFINE_TOP = 8
PHI_RATIO = 2 / (1 + math.sqrt(5))

SHAPES = ("convex", "concave", "general")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise DomainError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains_interval(self, other: "Interval", slack: float = 1e-12) -> bool:
        return other.lo >= self.lo - slack and other.hi <= self.hi + slack

    def to_list(self):
        return [self.lo, self.hi]

    @classmethod
    def from_list(cls, pair):
        lo, hi = pair
        return cls(float(lo), float(hi))


@dataclass(frozen=True)
class FluxModel:
    name: str
    domain: Interval
    eval_f: Callable
    eval_df: Callable
    eval_d2f: Callable
    shape: str = "general"
    sonic_point: Optional[float] = None
    singular_hi: bool = False
    source: str = field(default="builtin", compare=False)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown flux shape '{self.shape}'")


# --- Golden section ---

def golden_section_max(fn, lo, hi, tol=1e-10, max_iter=200):
    """
    Maximizes a scalar function on [lo, hi] by golden-section search.
    Returns (argmax, max); the bracket ends are compared at the end so a
    monotone function reports its endpoint.
    """
    x_lo0, x_hi0 = lo, hi
    f_lo0, f_hi0 = fn(lo), fn(hi)
    x1 = hi - PHI_RATIO * (hi - lo)
    x2 = lo + PHI_RATIO * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    iteration = 0
    while iteration < max_iter and abs(hi - lo) > tol:
        if f2 < f1:
            hi = x2
            x2, f2 = x1, f1
            x1 = hi - PHI_RATIO * (hi - lo)
            f1 = fn(x1)
        else:
            lo = x1
            x1, f1 = x2, f2
            x2 = lo + PHI_RATIO * (hi - lo)
            f2 = fn(x2)
        iteration += 1

    best_x, best_f = (x1, f1) if f1 >= f2 else (x2, f2)
    if f_lo0 > best_f:
        best_x, best_f = x_lo0, f_lo0
    if f_hi0 > best_f:
        best_x, best_f = x_hi0, f_hi0
    return best_x, best_f


# --- Builtin fluxes ---

def _burgers():
    return FluxModel(
        name="burgers",
        domain=Interval(-math.inf, math.inf),
        eval_f=lambda u: 0.5 * np.asarray(u, dtype=float) ** 2,
        eval_df=lambda u: np.asarray(u, dtype=float) * 1.0,
        eval_d2f=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        shape="convex",
        sonic_point=0.0,
    )


def _greenshields():
    return FluxModel(
        name="lwr_greenshields",
        domain=Interval(0.0, 2.0),
        eval_f=lambda r: np.asarray(r, dtype=float) * (2.0 - np.asarray(r, dtype=float)),
        eval_df=lambda r: 2.0 - 2.0 * np.asarray(r, dtype=float),
        eval_d2f=lambda r: np.full_like(np.asarray(r, dtype=float), -2.0),
        shape="concave",
        sonic_point=1.0,
    )


def _bonzani_terms(r):
    """exp(-g) and the first two derivatives of g(r) = r/(2-r); zero beyond the singular end."""
    r = np.asarray(r, dtype=float)
    s = 2.0 - r
    # exp(-r/s) underflows to exactly 0 well before s reaches 1e-3
    live = s > 1e-3
    s_safe = np.where(live, s, 1.0)
    e = np.where(live, np.exp(-r / s_safe), 0.0)
    g1 = np.where(live, 2.0 / s_safe ** 2, 0.0)
    g2 = np.where(live, 4.0 / s_safe ** 3, 0.0)
    return r, e, g1, g2


def _bonzani_f(r):
    r, e, _, _ = _bonzani_terms(r)
    return r * e


def _bonzani_df(r):
    r, e, g1, _ = _bonzani_terms(r)
    return e * (1.0 - r * g1)


def _bonzani_d2f(r):
    r, e, g1, g2 = _bonzani_terms(r)
    return e * (r * g1 ** 2 - 2.0 * g1 - r * g2)


def _bonzani_mussone():
    return FluxModel(
        name="lwr_bonzani_mussone",
        domain=Interval(0.0, 2.0),
        eval_f=_bonzani_f,
        eval_df=_bonzani_df,
        eval_d2f=_bonzani_d2f,
        shape="general",
        singular_hi=True,
    )


def _kynch():
    return FluxModel(
        name="kynch_mw",
        domain=Interval(0.0, 1.0),
        eval_f=lambda u: -np.asarray(u, dtype=float) * (1.0 - np.asarray(u, dtype=float)) ** 2,
        eval_df=lambda u: -1.0 + 4.0 * np.asarray(u, dtype=float) - 3.0 * np.asarray(u, dtype=float) ** 2,
        eval_d2f=lambda u: 4.0 - 6.0 * np.asarray(u, dtype=float),
        shape="general",
    )


BUILTIN_FLUXES = {
    "burgers": _burgers,
    "lwr_greenshields": _greenshields,
    "lwr_bonzani_mussone": _bonzani_mussone,
    "kynch_mw": _kynch,
}


def builtin_flux(name: str) -> FluxModel:
    """Returns one of the builtin fluxes with closed-form derivatives."""
    factory = BUILTIN_FLUXES.get(name)
    if factory is None:
        raise UnknownFlux(f"unknown flux '{name}' (known: {', '.join(sorted(BUILTIN_FLUXES))})")
    return factory()


# --- Custom tabulated fluxes ---

def load_flux_table(path: str, name: Optional[str] = None) -> FluxModel:
    """
    Builds a flux from a CSV table with header u,f,df,d2f.
    f is interpolated with Hermite slopes df, df with Hermite slopes d2f,
    d2f with PCHIP; the three are checked against each other at midpoints.
    """
    try:
        table = np.genfromtxt(path, delimiter=",", names=True)
    except (OSError, ValueError) as e:
        raise FluxTableError(f"{path}: cannot read flux table ({e})")

    if table.dtype.names is None or tuple(table.dtype.names) != ("u", "f", "df", "d2f"):
        raise FluxTableError(f"{path}: header must be exactly u,f,df,d2f")
    table = np.atleast_1d(table)
    u, f, df, d2f = (np.asarray(table[c], dtype=float) for c in ("u", "f", "df", "d2f"))
    if u.size < 4:
        raise FluxTableError(f"{path}: need at least 4 samples, got {u.size}")
    if not np.all(np.isfinite(np.column_stack([u, f, df, d2f]))):
        raise FluxTableError(f"{path}: non-finite entries")
    if np.any(np.diff(u) <= 0):
        bad = int(np.argmax(np.diff(u) <= 0)) + 2
        raise FluxTableError(f"{path}:{bad + 1}: u column must be strictly increasing")

    f_spline = CubicHermiteSpline(u, f, df)
    df_spline = CubicHermiteSpline(u, df, d2f)
    d2f_spline = PchipInterpolator(u, d2f)

    mid = 0.5 * (u[1:] + u[:-1])
    slope_gap = np.max(np.abs(f_spline.derivative()(mid) - df_spline(mid)))
    curve_gap = np.max(np.abs(df_spline.derivative()(mid) - d2f_spline(mid)))
    slope_scale = 1.0 + np.max(np.abs(df))
    curve_scale = 1.0 + np.max(np.abs(d2f))
    if slope_gap > 1e-3 * slope_scale or curve_gap > 1e-2 * curve_scale:
        raise FluxTableError(
            f"{path}: derivative columns inconsistent with f (slope gap {slope_gap:.3g}, curvature gap {curve_gap:.3g})"
        )

    if np.all(d2f >= 0):
        shape = "convex"
    elif np.all(d2f <= 0):
        shape = "concave"
    else:
        shape = "general"

    sonic = None
    if shape != "general":
        sign = -1.0 if shape == "convex" else 1.0
        sonic, _ = golden_section_max(lambda x: sign * float(f_spline(x)), u[0], u[-1])

    return FluxModel(
        name=name or path,
        domain=Interval(float(u[0]), float(u[-1])),
        eval_f=lambda x: f_spline(np.asarray(x, dtype=float)),
        eval_df=lambda x: df_spline(np.asarray(x, dtype=float)),
        eval_d2f=lambda x: d2f_spline(np.asarray(x, dtype=float)),
        shape=shape,
        sonic_point=sonic,
        source=path,
    )


# --- Domain helpers ---

def usable_bounds(model: FluxModel) -> Interval:
    """Closed state interval the numerics evaluate; stops short of a singular end."""
    hi = model.domain.hi - SINGULAR_MARGIN if model.singular_hi else model.domain.hi
    return Interval(model.domain.lo, hi)


def contains(model: FluxModel, J: Interval) -> bool:
    return usable_bounds(model).contains_interval(J)


def _evaluator(model: FluxModel, which: str):
    evaluators = {"f": model.eval_f, "df": model.eval_df, "d2f": model.eval_d2f}
    if which not in evaluators:
        raise ValueError(f"unknown derivative selector '{which}'")
    return evaluators[which]


# --- Sup norms ---

def sup_norm_with_arg(model: FluxModel, which: str, J: Interval, check_domain: bool = True):
    """
    Returns (sup |g|, argmax) over J for g = f, f' or f''.
    Dense grid followed by golden-section refinement around the best grid maxima.
    """
    if check_domain and not contains(model, J):
        raise DomainError(f"{J.to_list()} is not inside the usable domain {usable_bounds(model).to_list()} of {model.name}")
    g = _evaluator(model, which)

    def absval(x):
        return float(np.abs(g(np.asarray(x, dtype=float))))

    if not J.is_finite:
        return _sup_on_unbounded(absval, g, J)

    xs = np.linspace(J.lo, J.hi, SUP_GRID_POINTS)
    vals = np.abs(g(xs))
    if not np.all(np.isfinite(vals)) or np.max(vals) > OVERFLOW_GUARD:
        raise UnboundedNorm(f"|{which}| exceeds the overflow guard on {J.to_list()}")

    # local maxima of the sampled curve, endpoints included
    padded = np.concatenate([[-np.inf], vals, [-np.inf]])
    peaks = np.where((padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:]))[0]
    peaks = peaks[np.argsort(-vals[peaks], kind="stable")][:SUP_REFINE_TOP]

    best_x, best_v = float(xs[peaks[0]]), float(vals[peaks[0]])
    for i in peaks:
        lo = xs[max(i - 1, 0)]
        hi = xs[min(i + 1, xs.size - 1)]
        x, v = golden_section_max(absval, float(lo), float(hi))
        if v > best_v:
            best_x, best_v = float(x), float(v)
    return best_v, best_x


def _sup_on_unbounded(absval, g, J: Interval):
    samples = [0.0] + [s * 2.0 ** j for j in range(0, 48) for s in (1.0, -1.0)]
    samples = np.array([p for p in samples if J.lo <= p <= J.hi] or [J.lo if math.isfinite(J.lo) else J.hi])
    core_lo = max(J.lo, -8.0)
    core_hi = min(J.hi, 8.0)
    if core_lo < core_hi:
        samples = np.concatenate([samples, np.linspace(core_lo, core_hi, SUP_GRID_POINTS)])
    vals = np.abs(g(samples))
    if not np.all(np.isfinite(vals)) or np.max(vals) > OVERFLOW_GUARD:
        raise UnboundedNorm(f"sup over {J.to_list()} diverges")
    i = int(np.argmax(vals))
    return float(vals[i]), float(samples[i])


def sup_norm_on(model: FluxModel, which: str, J: Interval, check_domain: bool = True) -> float:
    """sup of |f'| or |f''| over J."""
    value, _ = sup_norm_with_arg(model, which, J, check_domain=check_domain)
    return value


# --- Growth classification ---

def growth_check(model: FluxModel, direction: str, anchor: float = 0.0) -> bool:
    """
    Numerical test of the growth hypothesis in the given direction ("upper"
    for u -> +inf, "lower" for u -> -inf): |f'(u)| and |f'(u)|/sup|f''| over
    the states between the anchor and u must both become large before the
    overflow guard.
    """
    end = model.domain.hi if direction == "upper" else model.domain.lo
    if math.isfinite(end):
        return False
    sign = 1.0 if direction == "upper" else -1.0
    ratios = []
    for j in range(1, 60):
        u = anchor + sign * 2.0 ** j
        speed = abs(float(model.eval_df(u)))
        if not math.isfinite(speed) or speed > OVERFLOW_GUARD:
            break
        J = Interval(anchor, u) if sign > 0 else Interval(u, anchor)
        try:
            curvature = sup_norm_on(model, "d2f", J, check_domain=False)
        except UnboundedNorm:
            break
        ratio = math.inf if curvature == 0 else speed / curvature
        ratios.append((speed, ratio))
        if speed >= 1e4 and ratio >= 1e4:
            tail = [r for _, r in ratios[-3:]]
            if all(b >= a for a, b in zip(tail, tail[1:])):
                return True
    logger.debug(f"growth check failed for {model.name} ({direction}): {ratios[-3:]}")
    return False


def hypothesis_regime(model: FluxModel) -> str:
    """Classifies the flux as 'growth_upper', 'growth_lower', 'bounded' or 'none'."""
    if growth_check(model, "upper"):
        return "growth_upper"
    if growth_check(model, "lower"):
        return "growth_lower"
    J = usable_bounds(model)
    try:
        sup_norm_on(model, "df", J)
        sup_norm_on(model, "d2f", J)
    except UnboundedNorm:
        return "none"
    return "bounded"
