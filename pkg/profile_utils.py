import json
import math
import os
import re
import logging
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline

from errors import ExtensionInfeasible, OneSidedViolation, ProfileError
from flux_utils import Interval

# Configure logging
logger = logging.getLogger(__name__)

PROFILES_DIR = "profiles"
SIDE_RULES = ("two_sided", "lower_only", "upper_only")
MAX_BRIDGE_HALVINGS = 60
GL_NODES, GL_WEIGHTS = leggauss(64)


# --- C1 profiles ---

class ProfileC1:
    """
    C1 state on [a,b]: cubic Hermite interpolation of knot values and slopes.
    Outside [a,b] the profile is continued by its end values with zero slope.
    """

    jumps = ()

    def __init__(self, x, u, du):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        du = np.asarray(du, dtype=float)
        if x.ndim != 1 or x.size < 2 or u.shape != x.shape or du.shape != x.shape:
            raise ProfileError("a C1 profile needs at least two knots with value and slope")
        if not np.all(np.isfinite(np.concatenate([x, u, du]))):
            raise ProfileError("profile knots must be finite")
        if np.any(np.diff(x) <= 0):
            raise ProfileError("profile knots must be strictly increasing in x")
        self.x = x
        self.u = u
        self.du = du
        self.spline = CubicHermiteSpline(x, u, du)
        self._slope = self.spline.derivative()
        self._curv = self.spline.derivative(2)
        self._primitive = self.spline.antiderivative()
        self._cache = {}

    # constructors

    @classmethod
    def from_knots(cls, knots):
        knots = sorted(knots, key=lambda k: k[0])
        return cls([k[0] for k in knots], [k[1] for k in knots], [k[2] for k in knots])

    @classmethod
    def from_function(cls, fn, dfn, a, b, n=65):
        xs = np.linspace(a, b, n)
        return cls(xs, fn(xs), dfn(xs))

    @classmethod
    def constant(cls, c, a, b):
        return cls([a, b], [c, c], [0.0, 0.0])

    @classmethod
    def linear(cls, c0, c1, a, b):
        """c0 + c1 * x on [a,b]."""
        return cls([a, b], [c0 + c1 * a, c0 + c1 * b], [c1, c1])

    # evaluation

    @property
    def a(self) -> float:
        return float(self.x[0])

    @property
    def b(self) -> float:
        return float(self.x[-1])

    @property
    def knots(self):
        return self.x

    def value(self, x):
        return self.spline(np.clip(x, self.a, self.b))

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a) & (x <= self.b)
        return np.where(inside, self._slope(np.clip(x, self.a, self.b)), 0.0)

    def primitive(self, x):
        """Antiderivative of the continued profile, zero at a."""
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.a, self.b)
        inner = self._primitive(xc) - self._primitive(self.a)
        below = (x - self.a) * self.u[0]
        above = (x - self.b) * self.u[-1]
        return np.where(x < self.a, below, np.where(x > self.b, inner + above, inner))

    def cell_averages(self, edges):
        edges = np.asarray(edges, dtype=float)
        return np.diff(self.primitive(edges)) / np.diff(edges)

    # extrema and variation

    def _roots(self, poly):
        r = poly.roots(discontinuity=False, extrapolate=False)
        r = r[np.isfinite(r)]
        return r[(r >= self.a) & (r <= self.b)]

    def _turning_points(self):
        if "turning" not in self._cache:
            pts = np.unique(np.concatenate([self.x, self._roots(self._slope)]))
            self._cache["turning"] = pts
        return self._cache["turning"]

    def value_range(self):
        vals = self.spline(self._turning_points())
        return float(vals.min()), float(vals.max())

    def slope_range(self):
        if "slope_range" not in self._cache:
            pts = np.unique(np.concatenate([self.x, self._roots(self._curv)]))
            vals = self._slope(pts)
            self._cache["slope_range"] = (float(vals.min()), float(vals.max()))
        return self._cache["slope_range"]

    @property
    def sup_norm(self) -> float:
        lo, hi = self.value_range()
        return max(abs(lo), abs(hi))

    @property
    def d_abs(self) -> float:
        lo, hi = self.slope_range()
        return max(abs(lo), abs(hi))

    @property
    def d_minus(self) -> float:
        """sup of the negative part of the derivative."""
        return max(0.0, -self.slope_range()[0])

    @property
    def d_plus(self) -> float:
        """sup of the positive part of the derivative."""
        return max(0.0, self.slope_range()[1])

    def variations(self):
        """(total, negative, positive) variation over [a,b]."""
        steps = np.diff(self.spline(self._turning_points()))
        return (float(np.sum(np.abs(steps))), float(np.sum(np.maximum(-steps, 0.0))),
                float(np.sum(np.maximum(steps, 0.0))))

    @property
    def total_variation(self) -> float:
        return self.variations()[0]

    def to_dict(self):
        return {
            "pieces": [{
                "x_lo": self.a,
                "x_hi": self.b,
                "knots": [{"x": float(x), "u": float(u), "du": float(d)} for x, u, d in zip(self.x, self.u, self.du)],
            }],
            "jumps": [],
        }


# --- BV profiles ---

class ProfileBV:
    """Piecewise C1 state with jumps at the piece boundaries; right-continuous at a jump."""

    def __init__(self, pieces):
        if not pieces:
            raise ProfileError("a BV profile needs at least one piece")
        for left, right in zip(pieces, pieces[1:]):
            if abs(left.b - right.a) > 1e-12:
                raise ProfileError(f"pieces must be contiguous: gap between {left.b} and {right.a}")
        self.pieces = list(pieces)
        self.breaks = np.array([p.a for p in self.pieces[1:]])
        self.jumps = [(p.a, float(q.value(q.b)), float(p.value(p.a))) for q, p in zip(self.pieces, self.pieces[1:])]

    @classmethod
    def from_pieces(cls, knot_lists):
        return cls([ProfileC1.from_knots(k) for k in knot_lists])

    @classmethod
    def step(cls, a, b, x_jump, left, right):
        return cls([ProfileC1.constant(left, a, x_jump), ProfileC1.constant(right, x_jump, b)])

    @property
    def a(self) -> float:
        return self.pieces[0].a

    @property
    def b(self) -> float:
        return self.pieces[-1].b

    @property
    def knots(self):
        return np.unique(np.concatenate([p.x for p in self.pieces]))

    def _piece_index(self, x):
        return np.searchsorted(self.breaks, x, side="right")

    def _piecewise(self, x, method):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = self._piece_index(x)
        out = np.zeros_like(x)
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if np.any(mask):
                out[mask] = getattr(piece, method)(x[mask])
        return float(out[0]) if scalar else out

    def value(self, x):
        return self._piecewise(x, "value")

    def slope(self, x):
        return self._piecewise(x, "slope")

    def primitive(self, x):
        """Antiderivative zero at a; each piece contributes its integral up to x clipped to the piece."""
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        last = len(self.pieces) - 1
        for i, piece in enumerate(self.pieces):
            lo = -np.inf if i == 0 else piece.a
            hi = np.inf if i == last else piece.b
            total = total + piece.primitive(np.clip(x, lo, hi))
        return total

    def cell_averages(self, edges):
        edges = np.asarray(edges, dtype=float)
        return np.diff(self.primitive(edges)) / np.diff(edges)

    def value_range(self):
        ranges = [p.value_range() for p in self.pieces]
        return min(r[0] for r in ranges), max(r[1] for r in ranges)

    @property
    def sup_norm(self) -> float:
        lo, hi = self.value_range()
        return max(abs(lo), abs(hi))

    def _jump_sizes(self):
        return np.array([r - l for _, l, r in self.jumps])

    @property
    def d_minus(self) -> float:
        """sup of the negative part of the lower Dini derivative; +inf at a downward jump."""
        if np.any(self._jump_sizes() < -1e-14):
            return math.inf
        return max(p.d_minus for p in self.pieces)

    @property
    def d_plus(self) -> float:
        """sup of the positive part of the upper Dini derivative; +inf at an upward jump."""
        if np.any(self._jump_sizes() > 1e-14):
            return math.inf
        return max(p.d_plus for p in self.pieces)

    @property
    def d_abs(self) -> float:
        if np.any(np.abs(self._jump_sizes()) > 1e-14):
            return math.inf
        return max(p.d_abs for p in self.pieces)

    def variations(self):
        jumps = self._jump_sizes()
        parts = np.array([p.variations() for p in self.pieces]).sum(axis=0)
        return (float(parts[0] + np.sum(np.abs(jumps))),
                float(parts[1] + np.sum(np.maximum(-jumps, 0.0))),
                float(parts[2] + np.sum(np.maximum(jumps, 0.0))))

    @property
    def total_variation(self) -> float:
        return self.variations()[0]

    def to_dict(self):
        return {
            "pieces": [p.to_dict()["pieces"][0] for p in self.pieces],
            "jumps": [{"x": x, "u_left": l, "u_right": r} for x, l, r in self.jumps],
        }


# --- Extension to the line ---

class ExtendedProfile:
    """
    A C1 profile continued past [a,b] by bridges of width eps1*(b-a) that settle on
    the plateaus alpha_minus = p(a) on the left and alpha_plus = p(b) on the right.
    """

    def __init__(self, inner: ProfileC1, full: ProfileC1, eps1: float, width: float, split):
        self.inner = inner
        self.full = full
        self.eps1 = eps1
        self.width = width
        self.split = split
        self.alpha_minus = float(inner.u[0])
        self.alpha_plus = float(inner.u[-1])

    @property
    def a(self) -> float:
        return self.inner.a

    @property
    def b(self) -> float:
        return self.inner.b

    @property
    def lo(self) -> float:
        return self.full.a

    @property
    def hi(self) -> float:
        return self.full.b

    @property
    def knots(self):
        return self.full.x

    def value(self, x):
        return self.full.value(x)

    def slope(self, x):
        return self.full.slope(x)

    def primitive(self, x):
        return self.full.primitive(x)

    def cell_averages(self, edges):
        return self.full.cell_averages(edges)

    def value_range(self):
        return self.full.value_range()

    def slope_range(self):
        return self.full.slope_range()

    @property
    def sup_norm(self) -> float:
        return self.full.sup_norm

    @property
    def d_abs(self) -> float:
        return self.full.d_abs

    @property
    def d_minus(self) -> float:
        return self.full.d_minus

    @property
    def d_plus(self) -> float:
        return self.full.d_plus

    def variations(self):
        return self.full.variations()

    @property
    def total_variation(self) -> float:
        return self.full.total_variation


def _opposite_slope_allowed(m0: float, opp: float, bound: float, side_rule: str) -> bool:
    # the settling piece of each bridge slopes against the end slope m0
    if opp == 0:
        return True
    if side_rule == "two_sided":
        return opp <= 0.5 * bound
    if side_rule == "lower_only":
        return m0 <= 0 or opp <= 0.5 * bound
    return m0 >= 0 or opp <= 0.5 * bound


def _bridge_split(v, m0, width, bound, side_rule, value_interval, inner_tv, inner_sup, side):
    w1 = 0.5 * width
    for _ in range(MAX_BRIDGE_HALVINGS):
        excursion = abs(m0) * w1 / 2
        opp = 0.75 * abs(m0) * w1 / (width - w1)
        outer = v - m0 * w1 / 2 if side == "left" else v + m0 * w1 / 2
        inside = value_interval is None or excursion == 0 or (value_interval.lo < outer < value_interval.hi)
        tv_ok = 2 * excursion <= 0.5 * inner_tv + 1e-15
        sup_ok = abs(outer) <= 2 * inner_sup + 1e-15
        if _opposite_slope_allowed(m0, opp, bound, side_rule) and inside and tv_ok and sup_ok:
            return w1, outer
        w1 *= 0.5
    raise ExtensionInfeasible(
        f"{side} bridge cannot meet slope bound {bound:.6g} within width {width:.6g} (end slope {m0:.6g})"
    )


def extend_profile(p: ProfileC1, eps1: float, deriv_bound: float, side_rule: str = "two_sided",
                   value_interval: Optional[Interval] = None) -> ExtendedProfile:
    """
    Continues p to the line. Each bridge first lets the slope decay linearly to zero
    over w1, then returns to the end value with a zero-slope cubic over width - w1;
    w1 is halved until the returning slope, the excursion and the factor-2 bounds hold.
    """
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    if side_rule not in SIDE_RULES:
        raise ValueError(f"unknown side rule '{side_rule}'")
    width = eps1 * (p.b - p.a)
    tv = p.total_variation
    sup = p.sup_norm

    v_a, m_a = float(p.u[0]), float(p.du[0])
    v_b, m_b = float(p.u[-1]), float(p.du[-1])
    w1_left, outer_left = _bridge_split(v_a, m_a, width, deriv_bound, side_rule, value_interval, tv, sup, "left")
    w1_right, outer_right = _bridge_split(v_b, m_b, width, deriv_bound, side_rule, value_interval, tv, sup, "right")

    knots = [(p.a - width, v_a, 0.0), (p.a - w1_left, outer_left, 0.0)]
    knots += list(zip(p.x, p.u, p.du))
    knots += [(p.b + w1_right, outer_right, 0.0), (p.b + width, v_b, 0.0)]
    full = ProfileC1.from_knots(knots)
    logger.debug(f"extended profile: width {width:.4g}, splits {w1_left:.3g}/{w1_right:.3g}")
    return ExtendedProfile(p, full, eps1, width, (w1_left, w1_right))


# --- Reflection and sign flip ---

def reflect(p):
    """x -> a + b - x."""
    if isinstance(p, ProfileBV):
        return ProfileBV([reflect(q) for q in reversed(p.pieces)])
    s = p.a + p.b
    return ProfileC1(s - p.x[::-1], p.u[::-1], -p.du[::-1])


def negate(p):
    if isinstance(p, ProfileBV):
        return ProfileBV([negate(q) for q in p.pieces])
    return ProfileC1(p.x, -p.u, -p.du)


# --- Mollification ---

_BUMP_MASS = quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1.0, 1.0)[0]


def _kernel(s, radius):
    t = np.asarray(s, dtype=float) / radius
    inside = np.abs(t) < 1.0
    t_safe = np.where(inside, t, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - t_safe ** 2)), 0.0) / (_BUMP_MASS * radius)


def _as_bv(p):
    return p if isinstance(p, ProfileBV) else ProfileBV([p])


def _convolve_at(p: ProfileBV, x: float, radius: float, cuts):
    """Mollified value and slope at x; slope gets the smooth part plus kernel-weighted jumps."""
    lo, hi = x - radius, x + radius
    inner_cuts = [c for c in cuts if lo < c < hi]
    edges = [lo] + inner_cuts + [hi]
    val = 0.0
    der = 0.0
    for s0, s1 in zip(edges, edges[1:]):
        half = 0.5 * (s1 - s0)
        ys = 0.5 * (s0 + s1) + half * GL_NODES
        # sample just inside the segment so the right-continuous lookup picks the correct piece
        ys = np.clip(ys, s0 + 1e-15 * max(1.0, abs(s0)), s1 - 1e-15 * max(1.0, abs(s1)))
        weights = half * GL_WEIGHTS * _kernel(x - ys, radius)
        val += float(np.dot(weights, p.value(ys)))
        der += float(np.dot(weights, p.slope(ys)))
    for xj, left, right in p.jumps:
        if lo < xj < hi:
            der += float(_kernel(x - xj, radius)) * (right - left)
    return val, der


def mollify_one_sided(p, M: float, n: int, max_refinements: int = 5) -> ProfileC1:
    """
    Smooth approximation phi_n = rho_n * p (p continued by its end values) whose slope stays
    strictly below M, for states whose upper Dini derivative is below M. Kernel radius 1/n.
    """
    if M <= 0:
        raise ProfileError("the one-sided slope bound M must be positive")
    p = _as_bv(p)
    if p.d_plus >= M:
        raise OneSidedViolation(f"upper Dini bound {p.d_plus:.6g} is not below M={M:.6g}")
    radius = 1.0 / n
    cuts = sorted(set([p.a, p.b] + [x for x, _, _ in p.jumps] + [q.b for q in p.pieces[:-1]]))
    m = int(math.ceil(8 * n * (p.b - p.a)))
    for _ in range(max_refinements + 1):
        xs = np.linspace(p.a, p.b, m + 1)
        vals = np.empty_like(xs)
        ders = np.empty_like(xs)
        for i, x in enumerate(xs):
            vals[i], ders[i] = _convolve_at(p, float(x), radius, cuts)
        phi = ProfileC1(xs, vals, ders)
        if phi.slope_range()[1] < M:
            return phi
        m *= 2
    raise OneSidedViolation(f"mollified slope does not stay below M={M:.6g} at n={n}")


def mollify_lower_dini(p, M: float, n: int) -> ProfileC1:
    """Variant for states whose lower Dini derivative stays above -M."""
    return negate(mollify_one_sided(negate(_as_bv(p)), M, n))


# --- Norms ---

def variation_report(p):
    """(total variation, negative variation, positive variation, sup norm)."""
    tv, tv_neg, tv_pos = p.variations()
    return tv, tv_neg, tv_pos, p.sup_norm


def l1_distance(p, q, a: float, b: float, n: int = 20000) -> float:
    """Midpoint-rule L1 distance on [a,b]."""
    edges = np.linspace(a, b, n + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return float(np.sum(np.abs(p.value(mids) - q.value(mids))) * (b - a) / n)


def padded_hull(p, frac: float = 0.05, floor: float = 1e-3) -> Interval:
    lo, hi = p.value_range()
    pad = max(frac * (hi - lo), floor)
    return Interval(lo - pad, hi + pad)


# --- Serialization ---

def profile_to_dict(p) -> dict:
    if isinstance(p, ExtendedProfile):
        p = p.inner
    return p.to_dict()


def profile_from_dict(data: dict):
    """Strict parser for the piece/jump JSON format; raises ProfileError with the offending path."""
    if not isinstance(data, dict) or "pieces" not in data:
        raise ProfileError("profile: expected an object with 'pieces'")
    unknown = set(data) - {"pieces", "jumps", "name"}
    if unknown:
        raise ProfileError(f"profile: unknown field(s) {sorted(unknown)}")
    pieces = []
    for i, piece in enumerate(data["pieces"]):
        path = f"profile.pieces[{i}]"
        try:
            knots = [(float(k["x"]), float(k["u"]), float(k["du"])) for k in piece["knots"]]
            x_lo, x_hi = float(piece["x_lo"]), float(piece["x_hi"])
        except (KeyError, TypeError, ValueError) as e:
            raise ProfileError(f"{path}: malformed piece ({e})")
        prof = ProfileC1.from_knots(knots)
        if abs(prof.a - x_lo) > 1e-12 or abs(prof.b - x_hi) > 1e-12:
            raise ProfileError(f"{path}: knots must span [x_lo, x_hi]")
        pieces.append(prof)
    if not pieces:
        raise ProfileError("profile.pieces: at least one piece is required")
    profile = ProfileBV(pieces) if len(pieces) > 1 else pieces[0]
    for j, jump in enumerate(data.get("jumps", [])):
        match = [t for t in getattr(profile, "jumps", ()) if abs(t[0] - float(jump["x"])) < 1e-12]
        if not match or abs(match[0][1] - float(jump["u_left"])) > 1e-9 or abs(match[0][2] - float(jump["u_right"])) > 1e-9:
            raise ProfileError(f"profile.jumps[{j}]: does not match the piece end values")
    return profile


# --- Profile store ---

def _sanitize_profile_name(profile_name: str) -> str:
    """
    Sanitizes profile name to prevent path traversal attacks.
    Removes any path separators and dangerous patterns.
    """
    if not profile_name:
        return "Default"

    sanitized = os.path.basename(profile_name)
    sanitized = re.sub(r'[<>:"/\\|?*]', '', sanitized)
    sanitized = re.sub(r'\.\.+', '', sanitized)
    sanitized = sanitized.strip('. ')

    if not sanitized:
        return "Default"
    return sanitized


def ensure_profiles_dir(directory: str = PROFILES_DIR):
    if not os.path.exists(directory):
        os.makedirs(directory)


def list_profiles(directory: str = PROFILES_DIR):
    """Returns the stored profile names (filenames without .json)."""
    ensure_profiles_dir(directory)
    return sorted(f[:-5] for f in os.listdir(directory) if f.endswith(".json"))


def load_profile(profile_name: str, directory: str = PROFILES_DIR):
    """Loads a stored profile; None (with a warning) when missing or malformed."""
    ensure_profiles_dir(directory)
    safe_name = _sanitize_profile_name(profile_name)
    path = os.path.join(directory, f"{safe_name}.json")
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r") as f:
            return profile_from_dict(json.load(f))
    except (OSError, ValueError, ProfileError) as e:
        logger.warning(f"Failed to load profile {safe_name}: {e}")
        return None


def save_profile(profile_name: str, profile, directory: str = PROFILES_DIR) -> bool:
    ensure_profiles_dir(directory)
    safe_name = _sanitize_profile_name(profile_name)
    path = os.path.join(directory, f"{safe_name}.json")
    tmp = path + ".tmp"
    try:
        with open(tmp, "w") as f:
            json.dump(profile_to_dict(profile), f, indent=4)
        os.replace(tmp, path)
        return True
    except OSError as e:
        logger.warning(f"Error saving profile: {e}")
        return False
