import unittest
import math
import os
import sys
import tempfile

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import flux_utils
from flux_utils import Interval, builtin_flux, sup_norm_on, sup_norm_with_arg, usable_bounds
from errors import DomainError, FluxTableError, UnboundedNorm, UnknownFlux


class TestBuiltinFluxes(unittest.TestCase):

    def test_pointwise_values(self):
        self.assertAlmostEqual(float(builtin_flux("lwr_greenshields").eval_df(0.75)), 0.5, places=14)
        self.assertAlmostEqual(float(builtin_flux("kynch_mw").eval_f(2 / 3)), -2 / 27, places=14)
        burgers = builtin_flux("burgers")
        for x in (-5.0, 0.0, 3.5):
            self.assertEqual(float(burgers.eval_d2f(x)), 1.0)

    def test_vectorized(self):
        model = builtin_flux("lwr_greenshields")
        us = np.linspace(0.0, 2.0, 5)
        np.testing.assert_allclose(model.eval_f(us), us * (2 - us))

    def test_unknown_flux(self):
        with self.assertRaises(UnknownFlux):
            builtin_flux("arrhenius")

    def test_bonzani_singular_end(self):
        model = builtin_flux("lwr_bonzani_mussone")
        self.assertLess(usable_bounds(model).hi, 2.0)
        self.assertEqual(float(model.eval_f(2.0)), 0.0)
        self.assertTrue(np.isfinite(model.eval_d2f(np.array([1.9999, 2.0]))).all())

    def test_derivatives_agree_with_differences(self):
        h = 1e-6
        for name, u in (("lwr_bonzani_mussone", 0.9), ("kynch_mw", 0.4), ("lwr_greenshields", 0.3)):
            model = builtin_flux(name)
            fd = (float(model.eval_f(u + h)) - float(model.eval_f(u - h))) / (2 * h)
            self.assertAlmostEqual(fd, float(model.eval_df(u)), places=6, msg=name)
            fd2 = (float(model.eval_df(u + h)) - float(model.eval_df(u - h))) / (2 * h)
            self.assertAlmostEqual(fd2, float(model.eval_d2f(u)), places=5, msg=name)


class TestSupNorms(unittest.TestCase):

    def test_kynch_curvature(self):
        value, arg = sup_norm_with_arg(builtin_flux("kynch_mw"), "d2f", Interval(0.0, 1.0))
        self.assertAlmostEqual(value, 4.0, places=9)
        self.assertAlmostEqual(arg, 0.0, places=9)

    def test_bonzani_curvature(self):
        model = builtin_flux("lwr_bonzani_mussone")
        value, arg = sup_norm_with_arg(model, "d2f", Interval(0.0, 1.9))
        self.assertAlmostEqual(value, 2.323, delta=1e-3)
        self.assertAlmostEqual(arg, (11 + math.sqrt(13)) / 9, delta=1e-4)

    def test_burgers_curvature(self):
        self.assertEqual(sup_norm_on(builtin_flux("burgers"), "d2f", Interval(-3.0, 7.0)), 1.0)

    def test_outside_domain(self):
        with self.assertRaises(DomainError):
            sup_norm_on(builtin_flux("lwr_greenshields"), "df", Interval(1.0, 2.5))

    def test_unbounded(self):
        with self.assertRaises(UnboundedNorm):
            sup_norm_on(builtin_flux("burgers"), "df", Interval(0.0, math.inf))

    def test_empty_interval(self):
        with self.assertRaises(DomainError):
            Interval(1.0, 1.0)


class TestHypothesisRegime(unittest.TestCase):

    def test_classification(self):
        self.assertEqual(flux_utils.hypothesis_regime(builtin_flux("burgers")), "growth_upper")
        self.assertEqual(flux_utils.hypothesis_regime(builtin_flux("lwr_greenshields")), "bounded")
        self.assertEqual(flux_utils.hypothesis_regime(builtin_flux("kynch_mw")), "bounded")

    def test_growth_check_finite_domain(self):
        self.assertFalse(flux_utils.growth_check(builtin_flux("lwr_greenshields"), "upper"))


class TestFluxTable(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _write(self, name, rows, header="u,f,df,d2f"):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w") as f:
            f.write(header + "\n")
            for row in rows:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        return path

    def test_greenshields_table(self):
        us = np.linspace(0.0, 2.0, 21)
        path = self._write("gs.csv", [(u, u * (2 - u), 2 - 2 * u, -2.0) for u in us])
        model = flux_utils.load_flux_table(path, "tabulated")
        self.assertEqual(model.name, "tabulated")
        self.assertEqual(model.shape, "concave")
        self.assertAlmostEqual(model.sonic_point, 1.0, places=6)
        self.assertAlmostEqual(float(model.eval_f(0.33)), 0.33 * 1.67, places=10)
        self.assertAlmostEqual(float(model.eval_df(0.75)), 0.5, places=10)

    def test_bad_header(self):
        path = self._write("bad.csv", [(0, 0, 0, 0)] * 4, header="u,flux,df,d2f")
        with self.assertRaises(FluxTableError):
            flux_utils.load_flux_table(path)

    def test_non_increasing(self):
        rows = [(0.0, 0.0, 1.0, 0.0), (1.0, 1.0, 1.0, 0.0), (1.0, 1.0, 1.0, 0.0), (2.0, 2.0, 1.0, 0.0)]
        with self.assertRaises(FluxTableError):
            flux_utils.load_flux_table(self._write("dup.csv", rows))

    def test_inconsistent_derivatives(self):
        us = np.linspace(0.0, 1.0, 11)
        with self.assertRaises(FluxTableError):
            flux_utils.load_flux_table(self._write("inc.csv", [(u, u ** 2, 0.0, 0.0) for u in us]))

    def test_missing_file(self):
        with self.assertRaises(FluxTableError):
            flux_utils.load_flux_table(os.path.join(self.tmp.name, "nope.csv"))

if __name__ == '__main__':
    unittest.main()
