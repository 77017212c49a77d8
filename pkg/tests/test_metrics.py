import unittest
import math
import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import metrics_utils
from flux_utils import FluxModel, Interval, builtin_flux
from metrics_utils import (
    argsup_k,
    boundary_control_time,
    bracket_norm,
    bracket_norm_truncated,
    check_hypotheses,
    controllability_times,
    delta_f,
    smallest_shift,
)
from profile_utils import ProfileBV, ProfileC1
from errors import DomainError, H2Violation, NotControllable, ZeroShift

GREENSHIELDS = builtin_flux("lwr_greenshields")
KYNCH = builtin_flux("kynch_mw")
BURGERS = builtin_flux("burgers")


def flat_flux():
    return FluxModel(
        name="flat",
        domain=Interval(0.0, 1.0),
        eval_f=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        eval_df=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        eval_d2f=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
    )


class TestChordSlope(unittest.TestCase):

    def test_values(self):
        self.assertAlmostEqual(delta_f(BURGERS, 1.0, 2.0), 2.0, places=12)
        self.assertAlmostEqual(delta_f(GREENSHIELDS, 0.75, 0.75), -0.25, places=12)
        self.assertAlmostEqual(delta_f(KYNCH, 2 / 3, 1 / 3), 2 / 9, places=12)

    def test_zero_shift(self):
        with self.assertRaises(ZeroShift):
            delta_f(BURGERS, 1.0, 0.0)

    def test_outside_domain(self):
        with self.assertRaises(DomainError):
            delta_f(GREENSHIELDS, 1.5, 1.0)


class TestBracketNorm(unittest.TestCase):

    def test_greenshields_intervals(self):
        self.assertAlmostEqual(bracket_norm(GREENSHIELDS, Interval(0.0, 0.75)).value, 0.5, delta=1e-6)
        self.assertAlmostEqual(bracket_norm(GREENSHIELDS, Interval(0.75, 1.25)).value, 0.25, delta=1e-6)
        self.assertAlmostEqual(bracket_norm(GREENSHIELDS, Interval(1.5, 2.0)).value, 1.0, delta=1e-6)
        self.assertAlmostEqual(bracket_norm(GREENSHIELDS, Interval(0.0, 0.5)).value, 1.0, delta=1e-6)

    def test_symmetric_tie_prefers_nonneg(self):
        report = bracket_norm(GREENSHIELDS, Interval(0.75, 1.25))
        self.assertTrue(report.tie)
        self.assertEqual(report.direction, "k_nonneg")

    def test_kynch(self):
        report = bracket_norm(KYNCH, Interval(2 / 3, 1.0))
        self.assertAlmostEqual(report.value, 2 / 9, delta=1e-6)
        self.assertEqual(report.direction, "k_nonpos")

    def test_bonzani(self):
        model = builtin_flux("lwr_bonzani_mussone")
        self.assertAlmostEqual(bracket_norm(model, Interval(4 / 3, 2 - 1e-6)).value, 0.298, delta=5e-3)
        self.assertAlmostEqual(bracket_norm(model, Interval(0.6, 1.0)).value, 0.361, delta=5e-3)

    def test_lower_bound_by_speed(self):
        """The k -> 0 branch is always admissible, so the norm is at least inf |f'|."""
        J = Interval(0.1, 0.4)
        value = bracket_norm(GREENSHIELDS, J).value
        self.assertGreaterEqual(value, float(np.min(np.abs(GREENSHIELDS.eval_df(np.linspace(0.1, 0.4, 101))))) - 1e-6)

    def test_outside_domain(self):
        with self.assertRaises(DomainError):
            bracket_norm(GREENSHIELDS, Interval(1.5, 2.5))


class TestArgsup(unittest.TestCase):

    def test_greenshields_eps(self):
        k = argsup_k(GREENSHIELDS, Interval(0.75, 1.25), 0.05)
        self.assertAlmostEqual(k, 0.70, places=6)

    def test_zero_is_extremal(self):
        self.assertEqual(argsup_k(GREENSHIELDS, Interval(0.0, 0.75), 0.1), 0.0)

    def test_kynch_witness(self):
        k = argsup_k(KYNCH, Interval(2 / 3, 1.0), 1e-8)
        self.assertLessEqual(k, 0.0)
        self.assertAlmostEqual(abs(k), 1 / 3, delta=1e-3)

    def test_bad_eps(self):
        with self.assertRaises(ValueError):
            argsup_k(GREENSHIELDS, Interval(0.0, 0.75), 0.0)


class TestTruncated(unittest.TestCase):

    def test_burgers(self):
        report = bracket_norm_truncated(BURGERS, Interval(0.0, 1.0), 23.0)
        self.assertAlmostEqual(report.value, 11.0, delta=1e-5)
        self.assertAlmostEqual(report.k_witness, 22.0, delta=1e-4)
        self.assertAlmostEqual(bracket_norm_truncated(BURGERS, Interval(0.0, 1.0), 3.0).value, 1.0, delta=1e-6)

    def test_ratio_tends_to_one_half(self):
        """Relative to the speed at the cut the truncated norm of Burgers approaches one half."""
        ratios = [bracket_norm_truncated(BURGERS, Interval(0.0, 1.0), u0).value / u0 for u0 in (23.0, 101.0, 1001.0)]
        self.assertTrue(all(b > a for a, b in zip(ratios, ratios[1:])))
        self.assertAlmostEqual(ratios[-1], 0.5, delta=1e-3)

    def test_cut_inside_interval(self):
        with self.assertRaises(DomainError):
            bracket_norm_truncated(BURGERS, Interval(0.0, 1.0), 0.5)


class TestTimes(unittest.TestCase):

    def test_greenshields(self):
        t1, t2, t = controllability_times(GREENSHIELDS, Interval(0.0, 0.75), Interval(0.75, 1.25), 0.0, 1.0)
        self.assertAlmostEqual(t1, 2.0, delta=1e-4)
        self.assertAlmostEqual(t2, 4.0, delta=1e-4)
        self.assertAlmostEqual(t, 6.0, delta=1e-4)
        _, _, t = controllability_times(GREENSHIELDS, Interval(0.0, 0.75), Interval(1.5, 2.0), 0.0, 1.0)
        self.assertAlmostEqual(t, 3.0, delta=1e-4)

    def test_kynch(self):
        t1, t2, t = controllability_times(KYNCH, Interval(2 / 3, 1.0), Interval(1 / 3, 2 / 3), 0.0, 1.0)
        self.assertAlmostEqual(t1, 4.5, delta=1e-4)
        self.assertAlmostEqual(t2, 4.5, delta=1e-4)
        self.assertAlmostEqual(t, 9.0, delta=1e-4)

    def test_scales_with_length(self):
        _, _, t = controllability_times(GREENSHIELDS, Interval(0.0, 0.75), Interval(0.75, 1.25), 0.0, 2.5)
        self.assertAlmostEqual(t, 15.0, delta=1e-3)

    def test_not_controllable(self):
        with self.assertRaises(NotControllable):
            controllability_times(flat_flux(), Interval(0.0, 0.5), Interval(0.5, 1.0), 0.0, 1.0)

    def test_boundary_time_critical_states(self):
        self.assertEqual(boundary_control_time(BURGERS, ProfileC1.constant(0.0, 0.0, 1.0)), math.inf)
        self.assertEqual(boundary_control_time(GREENSHIELDS, ProfileC1.constant(1.0, 0.0, 1.0)), math.inf)
        self.assertEqual(boundary_control_time(GREENSHIELDS, ProfileC1.linear(0.95, 0.1, 0.0, 1.0)), math.inf)

    def test_boundary_time_right_moving(self):
        # f' = 2 everywhere: the farthest point needs (b - a)/2
        self.assertAlmostEqual(boundary_control_time(BURGERS, ProfileC1.constant(2.0, 0.0, 1.0)), 0.5, places=12)

    def test_boundary_time_still_end_point(self):
        # f'(psi(x)) = x: (x - a)/x = 1 away from the resting left end
        self.assertAlmostEqual(boundary_control_time(BURGERS, ProfileC1.linear(0.0, 1.0, 0.0, 1.0)), 1.0, places=12)
        self.assertAlmostEqual(boundary_control_time(BURGERS, ProfileC1.linear(1e-9, 1.0, 0.0, 1.0)), 1.0, places=6)
        # waves running into a resting right end never arrive
        self.assertEqual(boundary_control_time(BURGERS, ProfileC1.linear(1.0, -1.0, 0.0, 1.0)), math.inf)

    def test_boundary_time_left_moving(self):
        self.assertAlmostEqual(boundary_control_time(GREENSHIELDS, ProfileC1.constant(1.5, 0.0, 1.0)), 1.0, places=12)


class TestShifts(unittest.TestCase):

    def test_zero_when_speed_suffices(self):
        self.assertEqual(smallest_shift(GREENSHIELDS, Interval(0.3, 0.5), 0.5), 0.0)

    def test_smallest_positive(self):
        # on [0.75, 1.25] inf |2 - 2u - k| = k - 1/2 for k in (1/2, 3/4]
        k = smallest_shift(GREENSHIELDS, Interval(0.75, 1.25), 0.1)
        self.assertAlmostEqual(k, 0.6, places=6)

    def test_none(self):
        self.assertIsNone(smallest_shift(GREENSHIELDS, Interval(0.75, 1.25), 0.3))


class TestHypotheses(unittest.TestCase):

    def test_greenshields_one_sided_holds(self):
        ubar = ProfileC1.linear(0.3, 0.2, 0.0, 1.0)
        psi = ProfileC1.linear(0.95, 0.1, 0.0, 1.0)
        verdict = check_hypotheses("bounded_one_sided", GREENSHIELDS, ubar, psi, 6.3, 0.01,
                                   Interval(0.0, 0.75), Interval(0.75, 1.25))
        self.assertTrue(verdict.holds, [c.label for c in verdict.violated_conditions])

    def test_time_too_short(self):
        ubar = ProfileC1.linear(0.3, 0.2, 0.0, 1.0)
        psi = ProfileC1.linear(0.95, 0.1, 0.0, 1.0)
        verdict = check_hypotheses("bounded_one_sided", GREENSHIELDS, ubar, psi, 5.9, 0.01,
                                   Interval(0.0, 0.75), Interval(0.75, 1.25))
        self.assertFalse(verdict.holds)
        self.assertIn("T > T*", [c.label for c in verdict.violated_conditions])

    def test_concave_swaps_roles(self):
        """For a concave flux an increasing initial state meets the bound on its rise."""
        self.assertEqual(metrics_utils.one_sided_parts(GREENSHIELDS), ("d_plus", "d_minus"))
        self.assertEqual(metrics_utils.one_sided_parts(BURGERS), ("d_minus", "d_plus"))
        steep = ProfileC1.linear(0.1, 0.5, 0.0, 1.0)
        psi = ProfileC1.linear(0.95, 0.1, 0.0, 1.0)
        verdict = check_hypotheses("bounded_one_sided", GREENSHIELDS, steep, psi, 6.3, 0.01,
                                   Interval(0.0, 0.75), Interval(0.75, 1.25))
        self.assertFalse(verdict.holds)
        self.assertTrue(any("d_plus" in c.label for c in verdict.violated_conditions))

    def test_image_outside_interval(self):
        ubar = ProfileC1.linear(0.3, 0.6, 0.0, 1.0)
        verdict = check_hypotheses("bounded_two_sided", GREENSHIELDS, ubar, None, 10.0, 0.0, Interval(0.0, 0.75))
        self.assertFalse(verdict.holds)

    def test_growth_regime(self):
        ubar = ProfileC1.linear(0.0, 1.0, 0.0, 1.0)
        self.assertTrue(check_hypotheses("growth_two_sided", BURGERS, ubar, ubar, 0.05).holds)
        self.assertFalse(check_hypotheses("growth_two_sided", GREENSHIELDS, ubar, ubar, 0.05).holds)

    def test_bv_shock_in_initial_state_rejected_for_convex(self):
        down = ProfileBV.step(0.0, 1.0, 0.5, 1.0, 0.0)
        self.assertEqual(down.d_minus, math.inf)
        verdict = check_hypotheses("growth_bv", BURGERS, down, None, 1.0)
        self.assertFalse(verdict.holds)

    def test_growth_direction(self):
        self.assertEqual(metrics_utils.growth_direction(BURGERS), "k_nonneg")
        with self.assertRaises(H2Violation):
            metrics_utils.growth_direction(GREENSHIELDS)

    def test_unknown_regime(self):
        with self.assertRaises(ValueError):
            check_hypotheses("sideways", BURGERS, ProfileC1.constant(0.0, 0.0, 1.0))

if __name__ == '__main__':
    unittest.main()
