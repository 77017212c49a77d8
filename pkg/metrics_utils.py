import math
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import (
    BranchUndetermined,
    DomainError,
    H2Violation,
    NotControllable,
    ZeroShift,
)
from flux_utils import (
    FluxModel,
    Interval,
    OVERFLOW_GUARD,
    golden_section_max,
    hypothesis_regime,
    sup_norm_on,
    usable_bounds,
)
from profile_utils import padded_hull

# Configure logging
logger = logging.getLogger(__name__)

K_GRID_POINTS = 2048
U_GRID_POINTS = 2048
K_CHUNK = 128
DEFAULT_TOL = 1e-6
DEFAULT_EPS = 1e-3

BRANCHES = ("k_nonneg", "k_nonpos")

REGIMES = (
    "bounded_two_sided",
    "growth_two_sided",
    "bounded_one_sided",
    "growth_one_sided",
    "bounded_bv",
    "growth_bv",
)


@dataclass(frozen=True)
class Truncation:
    """Cut of the flux domain at u0, kept on the side the growth hypothesis points to."""
    u0: float
    direction: str  # k_nonneg: domain (lo, u0]; k_nonpos: domain [u0, hi)

    def domain(self, model: FluxModel) -> Interval:
        full = usable_bounds(model)
        if self.direction == "k_nonneg":
            if self.u0 > full.hi:
                raise DomainError(f"truncation point {self.u0} above the domain of {model.name}")
            return Interval(full.lo, self.u0)
        if self.u0 < full.lo:
            raise DomainError(f"truncation point {self.u0} below the domain of {model.name}")
        return Interval(self.u0, full.hi)

    def reference(self, Jp: Interval) -> Interval:
        """States visited by synthesized solutions: from the far end of Jp up to u0."""
        if self.direction == "k_nonneg":
            return Interval(Jp.lo, self.u0)
        return Interval(self.u0, Jp.hi)

    def to_dict(self):
        return {"u0": self.u0, "direction": self.direction}


@dataclass
class MetricReport:
    value: float
    k_witness: float
    direction: str
    epsilon: float
    argsup_k: Optional[float]
    tie: bool = False
    interval: Optional[Interval] = None

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)

    def to_dict(self):
        return {
            "value": _num(self.value),
            "k_witness": _num(self.k_witness),
            "direction": self.direction,
            "epsilon": self.epsilon,
            "argsup_k": _num(self.argsup_k),
            "tie": self.tie,
        }


@dataclass
class ConditionCheck:
    label: str
    lhs: float
    relation: str
    rhs: float
    holds: bool

    def to_dict(self):
        return {"label": self.label, "lhs": _num(self.lhs), "relation": self.relation,
                "rhs": _num(self.rhs), "holds": self.holds}


@dataclass
class HypothesisVerdict:
    regime: str
    holds: bool
    violated_conditions: list = field(default_factory=list)
    conditions: list = field(default_factory=list)

    def to_dict(self):
        return {
            "regime": self.regime,
            "holds": self.holds,
            "violated_conditions": [c.to_dict() for c in self.violated_conditions],
            "conditions": [c.to_dict() for c in self.conditions],
        }


def _num(x):
    """JSON-safe number: infinities become signed strings."""
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return x


# --- Chord slopes ---

def _delta(model: FluxModel, u, k):
    """Chord slope, continued by f' at k = 0. Vectorized over u for scalar k."""
    if k == 0:
        return model.eval_df(u)
    return (model.eval_f(np.asarray(u, dtype=float) + k) - model.eval_f(u)) / k


def delta_f(model: FluxModel, u: float, k: float) -> float:
    """(f(u+k) - f(u))/k."""
    if k == 0:
        raise ZeroShift("delta_f needs k != 0; use eval_df for the k -> 0 limit")
    dom = usable_bounds(model)
    for v in (u, u + k):
        if not (dom.lo <= v <= dom.hi):
            raise DomainError(f"state {v} outside the usable domain {dom.to_list()} of {model.name}")
    return float(_delta(model, u, k))


def _shift_range(domain: Interval, Jp: Interval):
    k_lo = domain.lo - Jp.lo
    k_hi = domain.hi - Jp.hi
    if k_lo > 1e-12 or k_hi < -1e-12:
        raise DomainError(f"{Jp.to_list()} is not inside {domain.to_list()}")
    return min(k_lo, 0.0), max(k_hi, 0.0)


def _branch_grid(extent: float, sign: float, n: int = K_GRID_POINTS):
    """Shifts on one branch ordered by |k|, 0 first, log-densified near 0."""
    if extent == 0:
        return np.zeros(1)
    if math.isinf(extent):
        unit = np.geomspace(1e-6, 2.0 ** 45, n)
    else:
        unit = extent * np.concatenate([np.geomspace(1e-6, 1.0, n // 2), np.linspace(0.0, 1.0, n // 2)])
    grid = np.unique(np.concatenate([[0.0], unit]))
    return sign * grid


def _inf_on_grid(model: FluxModel, us, ks):
    """min over the u-grid of |Delta f(u;k)| for every k of the k-grid."""
    out = np.empty(ks.size)
    U = us[None, :]
    f_u = model.eval_f(us)[None, :]
    df_u = np.abs(model.eval_df(us))
    for start in range(0, ks.size, K_CHUNK):
        K = ks[start:start + K_CHUNK, None]
        safe_K = np.where(K == 0, 1.0, K)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.abs((model.eval_f(U + K) - f_u) / safe_K)
        vals = np.where(K == 0, df_u[None, :], vals)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        out[start:start + K_CHUNK] = vals.min(axis=1)
    return out


def _inf_refined(model: FluxModel, Jp: Interval, k: float, us=None) -> float:
    """inf over Jp of |Delta f(u;k)|: grid minimum followed by golden refinement of the lowest dips."""
    if us is None:
        us = np.linspace(Jp.lo, Jp.hi, U_GRID_POINTS)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.abs(_delta(model, us, k))
    vals = np.where(np.isfinite(vals), vals, np.inf)
    padded = np.concatenate([[np.inf], vals, [np.inf]])
    dips = np.where((padded[1:-1] <= padded[:-2]) & (padded[1:-1] <= padded[2:]))[0]
    dips = dips[np.argsort(vals[dips], kind="stable")][:3]
    best = float(vals.min())

    def neg_abs(u):
        return -float(np.abs(_delta(model, np.asarray(u, dtype=float), k)))

    for i in dips:
        lo = us[max(i - 1, 0)]
        hi = us[min(i + 1, us.size - 1)]
        if hi <= lo:
            continue
        _, v = golden_section_max(neg_abs, float(lo), float(hi))
        best = min(best, -v)
    return best


def _best_on_branch(model, Jp, ks, us, guard=OVERFLOW_GUARD):
    """Returns (value, witness) for one branch; +inf when the branch is unbounded and grows past the guard."""
    coarse = _inf_on_grid(model, us, ks)
    if np.any(coarse > guard):
        i = int(np.argmax(coarse > guard))
        return math.inf, float(ks[i])

    order = np.argsort(-coarse, kind="stable")[:3]
    best_v, best_k = -math.inf, 0.0
    for i in order:
        lo, hi = ks[max(i - 1, 0)], ks[min(i + 1, ks.size - 1)]
        lo, hi = (lo, hi) if lo <= hi else (hi, lo)
        if hi > lo:
            k, v = golden_section_max(lambda kk: _inf_refined(model, Jp, kk, us), float(lo), float(hi))
        else:
            k, v = float(ks[i]), _inf_refined(model, Jp, float(ks[i]), us)
        if v > best_v or (v == best_v and abs(k) < abs(best_k)):
            best_v, best_k = v, float(k)
    return best_v, best_k


# --- Bracket norm ---

def bracket_norm(model: FluxModel, Jp: Interval, tol: float = DEFAULT_TOL, eps: float = DEFAULT_EPS,
                 domain: Optional[Interval] = None, branches=BRANCHES) -> MetricReport:
    """
    sup over admissible shifts k (Jp + k inside the domain) of inf over u in Jp of
    |Delta f(u;k)|, with the k = 0 limit f'(u) included on both branches.
    """
    domain = domain or usable_bounds(model)
    if not domain.contains_interval(Jp):
        raise DomainError(f"{Jp.to_list()} is not inside {domain.to_list()} for {model.name}")
    k_lo, k_hi = _shift_range(domain, Jp)
    us = np.linspace(Jp.lo, Jp.hi, U_GRID_POINTS)

    results = {}
    if "k_nonneg" in branches:
        results["k_nonneg"] = _best_on_branch(model, Jp, _branch_grid(k_hi, 1.0), us)
    if "k_nonpos" in branches:
        results["k_nonpos"] = _best_on_branch(model, Jp, _branch_grid(-k_lo, -1.0), us)

    pos = results.get("k_nonneg", (-math.inf, 0.0))
    neg = results.get("k_nonpos", (-math.inf, 0.0))
    scale = max(1.0, abs(pos[0]) if math.isfinite(pos[0]) else 1.0)
    tie = (
        math.isfinite(pos[0]) and math.isfinite(neg[0])
        and abs(pos[0] - neg[0]) <= max(tol, 1e-9 * scale)
        and abs(pos[1] - neg[1]) > tol
    )
    if pos[0] >= neg[0] - (max(tol, 1e-9 * scale) if tie else 0.0):
        direction, (value, witness) = "k_nonneg", pos
    else:
        direction, (value, witness) = "k_nonpos", neg
    if tie:
        logger.info(f"bracket norm of {model.name} on {Jp.to_list()}: both branches attain {value:.6g}, using k >= 0")

    report = MetricReport(value=float(value), k_witness=float(witness), direction=direction,
                          epsilon=eps, argsup_k=None, tie=tie, interval=Jp)
    if math.isfinite(value) and value > 0:
        report.argsup_k = argsup_k(model, Jp, eps, report=report, domain=domain)
    return report


def argsup_k(model: FluxModel, Jp: Interval, eps: float, report: Optional[MetricReport] = None,
             domain: Optional[Interval] = None) -> float:
    """
    Extremal shift of the qualifying set {k : inf_u |Delta f(u;k)| > value - eps} on the branch
    carrying the sup: its infimum for k >= 0, its supremum for k <= 0.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    domain = domain or usable_bounds(model)
    if report is None:
        report = bracket_norm(model, Jp, eps=eps, domain=domain)
    if report.is_infinite:
        raise BranchUndetermined(f"bracket norm on {Jp.to_list()} is unbounded; no extremal shift")

    k_lo, k_hi = _shift_range(domain, Jp)
    sign = 1.0 if report.direction == "k_nonneg" else -1.0
    extent = k_hi if sign > 0 else -k_lo
    us = np.linspace(Jp.lo, Jp.hi, U_GRID_POINTS)
    threshold = report.value - eps

    def qualifies(k):
        return _inf_refined(model, Jp, k, us) > threshold

    grid = _branch_grid(extent, sign)
    candidates = np.unique(np.concatenate([grid, [report.k_witness]]))
    candidates = candidates[np.argsort(sign * candidates, kind="stable")]
    coarse = _inf_on_grid(model, us, candidates)

    previous = None
    for i, k in enumerate(candidates):
        # the grid minimum never undershoots the true infimum, so a coarse miss is a real miss
        if coarse[i] > threshold and qualifies(float(k)):
            if previous is None:
                return float(k)
            outside, inside = previous, float(k)
            for _ in range(200):
                if abs(inside - outside) <= 1e-12 * max(1.0, abs(inside)):
                    break
                mid = 0.5 * (inside + outside)
                if qualifies(mid):
                    inside = mid
                else:
                    outside = mid
            return inside
        previous = float(k)
    raise BranchUndetermined(f"no shift on the {report.direction} branch reaches {threshold:.6g} on {Jp.to_list()}")


def bracket_norm_truncated(model: FluxModel, Jp: Interval, u0: float, direction: Optional[str] = None,
                           tol: float = DEFAULT_TOL, eps: float = DEFAULT_EPS) -> MetricReport:
    """Bracket norm over the domain cut at u0, restricted to shifts toward u0."""
    if direction is None:
        if u0 >= Jp.hi:
            direction = "k_nonneg"
        elif u0 <= Jp.lo:
            direction = "k_nonpos"
        else:
            raise DomainError(f"truncation point {u0} lies inside {Jp.to_list()}")
    truncation = Truncation(u0, direction)
    return bracket_norm(model, Jp, tol=tol, eps=eps, domain=truncation.domain(model), branches=(direction,))


def metric_for(model: FluxModel, Jp: Interval, truncation: Optional[Truncation] = None,
               tol: float = DEFAULT_TOL, eps: float = DEFAULT_EPS) -> MetricReport:
    if truncation is None:
        return bracket_norm(model, Jp, tol=tol, eps=eps)
    return bracket_norm_truncated(model, Jp, truncation.u0, truncation.direction, tol=tol, eps=eps)


# --- Controllability times ---

def controllability_times(model: FluxModel, J1p: Interval, J2p: Interval, a: float, b: float,
                          truncation1: Optional[Truncation] = None, truncation2: Optional[Truncation] = None):
    """(T1*, T2*, T*) with Ti* = (b - a)/[|f|] on the i-th interval."""
    times = []
    for Jp, trunc in ((J1p, truncation1), (J2p, truncation2)):
        value = metric_for(model, Jp, trunc).value
        if value <= 1e-14:
            raise NotControllable(f"bracket norm of {model.name} vanishes on {Jp.to_list()}")
        times.append(0.0 if math.isinf(value) else (b - a) / value)
    return times[0], times[1], times[0] + times[1]


def boundary_control_time(model: FluxModel, psi, a: Optional[float] = None, b: Optional[float] = None,
                          n: int = 4001) -> float:
    """
    Time needed by boundary controls to reach psi: sup (x-a)/f'(psi)+ over right-moving
    points and sup (b-x)/f'(psi)- over left-moving ones. A vanishing speed strictly inside
    (a,b) makes it +inf; at an end point it only does so when the neighbouring waves move
    towards that end, otherwise the term is 0/0 and skipped.
    """
    a = psi.a if a is None else a
    b = psi.b if b is None else b
    xs = np.linspace(a, b, n)
    speeds = model.eval_df(psi.value(xs))
    still = np.abs(speeds) <= 1e-12
    if np.any(still[1:-1]) or not _sign_changes_at_jumps(psi, xs, speeds):
        return math.inf
    if (still[0] and speeds[1] < 0) or (still[-1] and speeds[-2] > 0):
        return math.inf
    right = speeds > 1e-12
    left = speeds < -1e-12
    t_right = float(np.max((xs[right] - a) / speeds[right])) if np.any(right) else 0.0
    t_left = float(np.max((b - xs[left]) / -speeds[left])) if np.any(left) else 0.0
    return max(t_right, t_left)


def _sign_changes_at_jumps(psi, xs, speeds) -> bool:
    """True when every sign change of f'(psi) on the grid straddles a jump of the profile."""
    jump_xs = [j[0] for j in getattr(psi, "jumps", [])]
    flips = np.where(np.sign(speeds[1:]) * np.sign(speeds[:-1]) < 0)[0]
    for i in flips:
        if not any(xs[i] <= xj <= xs[i + 1] for xj in jump_xs):
            return False
    return True


# --- Shift search ---

def smallest_shift(model: FluxModel, J: Interval, threshold: float, domain: Optional[Interval] = None,
                   branches=BRANCHES) -> Optional[float]:
    """
    Smallest |k| admissible for J with inf over J of |Delta f(u;k)| strictly above threshold.
    k = 0 is returned when f' already clears the threshold. None when no shift qualifies.
    """
    domain = domain or usable_bounds(model)
    k_lo, k_hi = _shift_range(domain, J)
    us = np.linspace(J.lo, J.hi, U_GRID_POINTS)

    def qualifies(k):
        return _inf_refined(model, J, k, us) > threshold

    if qualifies(0.0):
        return 0.0

    found = []
    for branch in branches:
        sign = 1.0 if branch == "k_nonneg" else -1.0
        extent = k_hi if sign > 0 else -k_lo
        ks = _branch_grid(extent, sign)
        coarse = _inf_on_grid(model, us, ks)
        previous = 0.0
        for i, k in enumerate(ks):
            if coarse[i] > threshold and qualifies(float(k)):
                outside, inside = previous, float(k)
                for _ in range(200):
                    if abs(inside - outside) <= 1e-12 * max(1.0, abs(inside)):
                        break
                    mid = 0.5 * (inside + outside)
                    if qualifies(mid):
                        inside = mid
                    else:
                        outside = mid
                found.append(inside)
                break
            previous = float(k)
    if not found:
        return None
    # ties resolved toward k >= 0
    best = min(found, key=abs)
    nonneg = [k for k in found if k >= 0 and abs(k) <= abs(best) + 1e-9]
    return nonneg[0] if nonneg else best


# --- Hypothesis checks ---

def _check(label, lhs, relation, rhs) -> ConditionCheck:
    ops = {
        "<": lambda l, r: l < r,
        "<=": lambda l, r: l <= r,
        ">": lambda l, r: l > r,
        ">=": lambda l, r: l >= r,
        "==": lambda l, r: l == r,
    }
    return ConditionCheck(label, float(lhs), relation, float(rhs), bool(ops[relation](lhs, rhs)))


def one_sided_parts(model: FluxModel):
    """
    Which one-sided derivative bound applies to the initial and to the target state:
    for convex fluxes the decrease of the initial state and the increase of the target;
    concave fluxes swap the two.
    """
    if model.shape == "concave":
        return "d_plus", "d_minus"
    return "d_minus", "d_plus"


def curvature_reference(model: FluxModel, intervals, truncation: Optional[Truncation]) -> Interval:
    if truncation is None:
        return usable_bounds(model)
    lo = min(J.lo for J in intervals)
    hi = max(J.hi for J in intervals)
    return truncation.reference(Interval(lo, hi))


def check_hypotheses(regime: str, model: FluxModel, ubar, psi=None, T: float = math.inf, rho: float = 0.0,
                     J1p: Optional[Interval] = None, J2p: Optional[Interval] = None,
                     truncation: Optional[Truncation] = None) -> HypothesisVerdict:
    """Evaluates every inequality of the selected regime; the verdict carries the failures."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime '{regime}' (known: {', '.join(REGIMES)})")
    a, b = ubar.a, ubar.b
    length = b - a
    conditions = []

    if regime.endswith("one_sided") or regime.endswith("bv"):
        conditions.append(_check("flux is convex or concave", 1.0 if model.shape in ("convex", "concave") else 0.0, "==", 1.0))

    if regime.startswith("growth"):
        regime_found = hypothesis_regime(model)
        conditions.append(_check("speed grows faster than curvature toward an infinite end",
                                 1.0 if regime_found.startswith("growth") else 0.0, "==", 1.0))
        conditions.append(_check("T > 0", T, ">", 0.0))
        if regime == "growth_bv":
            d_u, d_psi = one_sided_parts(model)
            conditions.append(_check(f"initial {d_u}", getattr(ubar, d_u), "<", math.inf))
            if psi is not None:
                conditions.append(_check(f"target {d_psi}", getattr(psi, d_psi), "<", math.inf))
        violated = [c for c in conditions if not c.holds]
        return HypothesisVerdict(regime, not violated, violated, conditions)

    J1p = J1p or padded_hull(ubar)
    pairs = [("initial", ubar, J1p)]
    if psi is not None:
        J2p = J2p or padded_hull(psi)
        pairs.append(("target", psi, J2p))

    dom = truncation.domain(model) if truncation else usable_bounds(model)
    norms = []
    for role, prof, Jp in pairs:
        conditions.append(_check(f"{role} interval inside the flux domain (lower end)", Jp.lo, ">=", dom.lo))
        conditions.append(_check(f"{role} interval inside the flux domain (upper end)", Jp.hi, "<=", dom.hi))
        img_lo, img_hi = prof.value_range()
        conditions.append(_check(f"{role} image inside its interval (lower end)", img_lo, ">=", Jp.lo))
        conditions.append(_check(f"{role} image inside its interval (upper end)", img_hi, "<=", Jp.hi))
        try:
            norms.append(metric_for(model, Jp, truncation).value)
        except DomainError:
            norms.append(0.0)

    if any(not c.holds for c in conditions):
        violated = [c for c in conditions if not c.holds]
        return HypothesisVerdict(regime, False, violated, conditions)

    f2 = sup_norm_on(model, "d2f", curvature_reference(model, [p[2] for p in pairs], truncation), check_domain=False)
    times = [0.0 if math.isinf(n) else (length / n if n > 0 else math.inf) for n in norms]
    if psi is not None:
        conditions.append(_check("T > T*", T, ">", sum(times)))
    else:
        conditions.append(_check("T > T1*", T, ">", times[0]))

    def limit(n):
        if math.isinf(n) or f2 == 0:
            return math.inf
        return n / (length * f2)

    if regime == "bounded_two_sided":
        for (role, prof, _), n in zip(pairs, norms):
            conditions.append(_check(f"{role} sup |u'| below bracket/((b-a)|f''|)", prof.d_abs, "<", limit(n)))
    else:
        parts = one_sided_parts(model)
        for (role, prof, _), n, part in zip(pairs, norms, parts):
            conditions.append(_check(f"{role} {part} within bracket/((b-a)|f''|) - rho",
                                     getattr(prof, part), "<=" if regime == "bounded_one_sided" else "<",
                                     limit(n) - rho))
    violated = [c for c in conditions if not c.holds]
    if violated:
        logger.info(f"{regime}: {len(violated)} condition(s) fail for {model.name}")
    return HypothesisVerdict(regime, not violated, violated, conditions)


def growth_direction(model: FluxModel) -> str:
    """Shift direction of the growth hypothesis, or H2Violation when none applies."""
    regime = hypothesis_regime(model)
    if regime == "growth_upper":
        return "k_nonneg"
    if regime == "growth_lower":
        return "k_nonpos"
    raise H2Violation(f"{model.name}: |f'| does not outgrow |f''| toward an infinite end of the domain")


def report_dict(report: MetricReport, interval: Interval) -> dict:
    data = report.to_dict()
    data["interval"] = interval.to_list()
    return data
