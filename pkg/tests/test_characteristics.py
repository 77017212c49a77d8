import unittest
import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import characteristics_utils
from characteristics_utils import (
    riccati_cross_check,
    solve_classical,
    solve_composed,
    terminal_report,
    trace,
    verify_no_blowup_bound,
)
from control_utils import ControlSignal, build_null_control, compose_full_control, select_parameters, trapezoid_signal
from flux_utils import Interval, builtin_flux
from profile_utils import ProfileC1
from errors import BlowUp, WindowTooSmall

BURGERS = builtin_flux("burgers")
GREENSHIELDS = builtin_flux("lwr_greenshields")
KYNCH = builtin_flux("kynch_mw")


class TestClassicalSolve(unittest.TestCase):

    def test_expansion_fan(self):
        # increasing data under Burgers: u(t, x) = x / (1 + t)
        sol = solve_classical(BURGERS, ProfileC1.linear(0.0, 1.0, 0.0, 1.0), ControlSignal.zero(0.0, 1.0), 1.0)
        xs = np.linspace(0.0, 1.0, 41)
        np.testing.assert_allclose(sol(1.0, xs), xs / 2, atol=1e-8)
        np.testing.assert_allclose(sol(0.5, xs), xs / 1.5, atol=1e-8)
        np.testing.assert_allclose(sol.slope(1.0, np.array([0.25, 0.5, 0.75])), 0.5, atol=1e-8)
        self.assertIsNone(sol.blowup)

    def test_compression_blows_up(self):
        profile = ProfileC1.linear(1.0, -1.0, 0.0, 1.0)
        with self.assertRaises(BlowUp) as ctx:
            solve_classical(BURGERS, profile, ControlSignal.zero(0.0, 2.0), 2.0)
        self.assertAlmostEqual(ctx.exception.t, 1.0, delta=1e-6)

    def test_blowup_allowed(self):
        profile = ProfileC1.linear(1.0, -1.0, 0.0, 1.0)
        sol = solve_classical(BURGERS, profile, ControlSignal.zero(0.0, 2.0), 2.0, allow_blowup=True)
        self.assertIsNotNone(sol.blowup)
        self.assertLess(sol.T, 1.0)

    def test_source_shifts_constant_state(self):
        h = ControlSignal([(0.0, 1.0, 1.0, 0.0)])
        sol = solve_classical(BURGERS, ProfileC1.constant(0.0, 0.0, 1.0), h, 1.0)
        xs = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(sol(0.5, xs), 0.5, atol=1e-12)
        np.testing.assert_allclose(sol(1.0, xs), 1.0, atol=1e-12)

    def test_riccati_closed_form(self):
        h = trapezoid_signal(0.0, 1.0, 0.1)
        sol = solve_classical(KYNCH, ProfileC1.linear(0.3, 0.2, 0.0, 1.0), h, 1.0)
        self.assertLess(riccati_cross_check(sol, np.linspace(0.0, 1.0, 5)), 1e-7)

    def test_riccati_random_characteristics(self):
        ubar = ProfileC1.from_function(lambda x: 0.4 + 0.05 * np.sin(2 * np.pi * x),
                                       lambda x: 0.1 * np.pi * np.cos(2 * np.pi * x), 0.0, 1.0)
        sol = solve_classical(KYNCH, ubar, trapezoid_signal(0.0, 1.0, 0.1), 1.0)
        feet = np.random.default_rng(2024).uniform(0.0, 1.0, 100)
        self.assertLess(riccati_cross_check(sol, feet), 1e-7)

    def test_traces(self):
        sol = solve_classical(BURGERS, ProfileC1.linear(0.0, 1.0, 0.0, 1.0), ControlSignal.zero(0.0, 1.0), 1.0)
        times, right = trace(sol, "right", [0.0, 0.5, 1.0])
        np.testing.assert_allclose(right, [1.0, 1 / 1.5, 0.5], atol=1e-8)
        _, left = trace(sol, "left", [0.0, 1.0])
        np.testing.assert_allclose(left, 0.0, atol=1e-10)
        with self.assertRaises(ValueError):
            trace(sol, "middle")

    def test_outside_horizon(self):
        sol = solve_classical(BURGERS, ProfileC1.linear(0.0, 1.0, 0.0, 1.0), ControlSignal.zero(0.0, 1.0), 1.0)
        with self.assertRaises(WindowTooSmall):
            sol(1.5, 0.5)
        with self.assertRaises(WindowTooSmall):
            sol(0.5, 10.0)

    def test_window_too_small(self):
        with self.assertRaises(WindowTooSmall):
            solve_classical(BURGERS, ProfileC1.constant(1.0, 0.0, 1.0), ControlSignal.zero(0.0, 1.0), 1.0,
                            window=Interval(0.0, 1.0))

    def test_fan_table_shape(self):
        sol = solve_classical(BURGERS, ProfileC1.linear(0.0, 1.0, 0.0, 1.0), ControlSignal.zero(0.0, 1.0), 1.0)
        rows = characteristics_utils.fan_table(sol)
        self.assertEqual(rows.shape[1], 5)


class TestCertifiedStage(unittest.TestCase):

    def setUp(self):
        self.J2 = Interval(0.75, 1.25)

    def test_plateau_reached(self):
        psi_r = ProfileC1.linear(1.05, -0.1, 0.0, 1.0)
        cert = select_parameters(GREENSHIELDS, psi_r, self.J2, 4.12, 0.01, "one_sided")
        h = build_null_control(cert, cert.T1)
        sol = solve_classical(GREENSHIELDS, cert.extension, h, cert.T1)
        xs = np.linspace(0.0, 1.0, 101)
        np.testing.assert_allclose(sol(cert.T1, xs), cert.plateau_state, atol=1e-9)
        feet = sol.feet_landing_in(cert.T1, 0.0, 1.0)
        self.assertTrue(np.all(feet >= 1.0 + cert.eps1 - 1e-12))

    def test_no_blowup_bound(self):
        ubar = ProfileC1.linear(0.3, 0.2, 0.0, 1.0)
        cert = select_parameters(GREENSHIELDS, ubar, Interval(0.0, 0.75), 2.5)
        h = build_null_control(cert, cert.T1)
        sol = solve_classical(GREENSHIELDS, cert.extension, h, cert.T1)
        report = verify_no_blowup_bound(sol, cert)
        self.assertTrue(report["passed"])
        self.assertGreater(report["lines_checked"], 0)

    def test_composed_terminal_state(self):
        ubar = ProfileC1.linear(0.3, 0.2, 0.0, 1.0)
        psi = ProfileC1.linear(0.95, 0.1, 0.0, 1.0)
        signal, plan = compose_full_control(GREENSHIELDS, ubar, psi, 6.3, 0.01, Interval(0.0, 0.75), self.J2,
                                            "bounded_one_sided")
        composed = solve_composed(GREENSHIELDS, plan, signal)
        report = terminal_report(composed, psi)
        self.assertLess(report["reconstruction_error"], 1e-6)
        self.assertLess(report["junction_error"], 1e-9)
        self.assertLess(report["sup_error"], 1e-6)
        self.assertTrue(report["plateau_feet_ok"])
        np.testing.assert_allclose(composed(0.0, np.linspace(0, 1, 5)), ubar.value(np.linspace(0, 1, 5)), atol=1e-12)

if __name__ == '__main__':
    unittest.main()
