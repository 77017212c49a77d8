import unittest
import io
import json
import math
import os
import sys
import tempfile
from contextlib import redirect_stderr, redirect_stdout

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import claw
import scenario_utils
import settings_utils
from scenario_utils import compare_expected, load_scenario, parse_scenario
from profile_utils import ProfileBV
from errors import ScenarioError, UnknownFlux

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = os.path.join(ROOT, "scenarios")
SETTINGS = dict(settings_utils.DEFAULTS)


def minimal(**overrides):
    data = {
        "schema": 1,
        "name": "minimal",
        "flux": "lwr_greenshields",
        "a": 0.0,
        "b": 1.0,
        "T": 6.3,
        "rho": 0.01,
        "regime": "bounded_one_sided",
        "J1": [0.0, 0.75],
        "J2": [0.75, 1.25],
        "ubar": {"type": "linear", "c0": 0.3, "c1": 0.2},
        "psi": {"type": "linear", "c0": 0.95, "c1": 0.1},
    }
    data.update(overrides)
    return data


class TestParsing(unittest.TestCase):

    def test_shipped_scenarios_parse(self):
        names = sorted(f for f in os.listdir(SCENARIOS) if f.endswith(".json"))
        self.assertGreaterEqual(len(names), 5)
        for name in names:
            scn = load_scenario(os.path.join(SCENARIOS, name), SETTINGS)
            self.assertEqual(scn.name + ".json", name)

    def test_defaults(self):
        scn = parse_scenario(minimal(), settings=SETTINGS)
        self.assertEqual(scn.strategy, "bridge")
        self.assertEqual(scn.dx, SETTINGS["dx"])
        self.assertEqual(scn.terminal_tol, SETTINGS["terminal_tol"])
        self.assertIsNone(scn.fv_dx)

    def test_step_profile(self):
        scn = parse_scenario(minimal(ubar={"type": "step", "x": 0.5, "left": 0.5, "right": 0.3}), settings=SETTINGS)
        self.assertIsInstance(scn.ubar, ProfileBV)

    def test_errors_name_the_field(self):
        cases = [
            (minimal(colour="blue"), "unknown field"),
            (minimal(schema=2), "scenario.schema"),
            (minimal(a=1.0), "a < b"),
            (minimal(T=-1.0), "scenario.T"),
            (minimal(regime="sideways"), "scenario.regime"),
            (minimal(strategy="detour"), "scenario.strategy"),
            (minimal(J1=[0.75]), "scenario.J1"),
            (minimal(ubar={"type": "spline"}), "scenario.ubar.type"),
            (minimal(ubar={"type": "linear", "c0": "x", "c1": 0.2}), "scenario.ubar.c0"),
            (minimal(ubar={"type": "step", "x": 1.5, "left": 0.0, "right": 1.0}), "scenario.ubar.x"),
            (minimal(psi={"type": "knots", "knots": [[0.0, 1.0, 0.0], [2.0, 1.0, 0.0]]}), "scenario.psi"),
            (minimal(metrics={"intervals": [[0.0, 0.75]], "pairs": [[0, 1]]}), "metrics.pairs[0]"),
            (minimal(bv={"n": [10, -1]}), "bv.n"),
            (minimal(grid={"dx": 0.0}), "scenario.grid"),
        ]
        for data, fragment in cases:
            with self.assertRaises(ScenarioError, msg=fragment) as ctx:
                parse_scenario(data, settings=SETTINGS)
            self.assertIn(fragment, str(ctx.exception))

    def test_missing_flux(self):
        data = minimal()
        del data["flux"]
        with self.assertRaises(ScenarioError):
            parse_scenario(data, settings=SETTINGS)
        with self.assertRaises(UnknownFlux):
            parse_scenario(minimal(flux="arrhenius"), settings=SETTINGS)

    def test_json_syntax_error_position(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "broken.json")
            with open(path, "w") as f:
                f.write('{\n    "schema": 1,\n    oops\n}\n')
            with self.assertRaises(ScenarioError) as ctx:
                load_scenario(path, SETTINGS)
            self.assertIn(":3:", str(ctx.exception))
            with self.assertRaises(ScenarioError):
                load_scenario(os.path.join(tmp, "absent.json"), SETTINGS)


class TestGoldenMetrics(unittest.TestCase):

    def test_expected_values(self):
        expected_dir = os.path.join(SCENARIOS, "expected")
        for name in sorted(os.listdir(expected_dir)):
            with open(os.path.join(expected_dir, name), "r") as f:
                expected = json.load(f)
            scn = load_scenario(os.path.join(SCENARIOS, name), SETTINGS)
            with tempfile.TemporaryDirectory() as tmp:
                result = scenario_utils.cmd_metrics(scn, tmp, SETTINGS)
                self.assertEqual(result["exit_code"], 0, result["error"])
                self.assertEqual(compare_expected(result["report"], expected), [], name)
                self.assertTrue(os.path.exists(os.path.join(tmp, "report.json")))

    def test_compare_reports_mismatches(self):
        report = {"intervals": [{"value": 0.5}], "flux_class": "bounded"}
        expected = {"values": {
            "intervals.0.value": {"value": 0.4, "tol": 1e-3},
            "intervals.3.value": {"value": 0.4},
            "flux_class": {"value": "bounded"},
        }}
        mismatches = compare_expected(report, expected)
        self.assertEqual([m[0] for m in mismatches], ["intervals.0.value", "intervals.3.value"])


class TestCommands(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_steer_hypothesis_failure(self):
        scn = parse_scenario(minimal(T=5.0), settings=SETTINGS)
        result = scenario_utils.cmd_steer(scn, self.tmp.name, SETTINGS)
        self.assertEqual(result["exit_code"], 2)
        self.assertFalse(result["ok"])
        self.assertIn("T > T*", result["report"]["failure"])
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "report.json")))

    def test_steer_passes(self):
        scn = parse_scenario(minimal(), settings=SETTINGS)
        result = scenario_utils.cmd_steer(scn, self.tmp.name, SETTINGS)
        self.assertEqual(result["exit_code"], 0, result["error"])
        report = result["report"]
        self.assertTrue(all(b["passed"] for b in report["bounds"]))
        self.assertLess(report["terminal"]["sup_error"], 1e-6)
        self.assertAlmostEqual(report["times"]["T_star"], 6.0, delta=1e-4)
        self.assertIn("control", result["files"])
        with open(result["files"]["control"], "r") as f:
            self.assertIn("pieces", json.load(f)["signal"])

    def test_steer_shipped_bounded_scenarios(self):
        for name in ("bonzani_mussone", "kynch_sedimentation"):
            scn = load_scenario(os.path.join(SCENARIOS, name + ".json"), SETTINGS)
            result = scenario_utils.cmd_steer(scn, os.path.join(self.tmp.name, name), SETTINGS)
            self.assertEqual(result["exit_code"], 0, f"{name}: {result['error']}")
            self.assertLess(result["report"]["terminal"]["sup_error"], 1e-6, name)
            self.assertTrue(all(b["passed"] for b in result["report"]["bounds"]), name)

    def test_critical_target_has_no_boundary_time(self):
        scn = load_scenario(os.path.join(SCENARIOS, "greenshields_critical.json"), SETTINGS)
        result = scenario_utils.cmd_steer(scn, self.tmp.name, SETTINGS)
        self.assertEqual(result["exit_code"], 0, result["error"])
        times = result["report"]["times"]
        self.assertEqual(times["T_bar"], math.inf)
        self.assertLess(times["T_star"], scn.T)

    def test_steer_burgers_short_horizon(self):
        scn = load_scenario(os.path.join(SCENARIOS, "burgers_growth.json"), SETTINGS)
        for strategy in ("null_tails", "bridge"):
            result = scenario_utils.cmd_steer(scn, os.path.join(self.tmp.name, strategy), SETTINGS, strategy=strategy)
            self.assertEqual(result["exit_code"], 0, f"{strategy}: {result['error']}")
            self.assertLess(result["report"]["terminal"]["sup_error"], 1e-6)

    def test_steer_burgers_random_states(self):
        with open(os.path.join(SCENARIOS, "burgers_growth.json"), "r") as f:
            base = json.load(f)
        rng = np.random.default_rng(11)
        for i in range(3):
            data = dict(base, name=f"burgers_random_{i}")
            for key in ("ubar", "psi"):
                # slope bound: amplitude * 2 pi * periods <= 1.0 * 2 pi * 1.5 < 10
                data[key] = {"type": "sine", "mean": float(rng.uniform(-1.0, 1.0)),
                             "amplitude": float(rng.uniform(0.1, 1.0)), "periods": float(rng.uniform(0.5, 1.5)),
                             "phase": float(rng.uniform(0.0, 2 * math.pi))}
            scn = parse_scenario(data, settings=SETTINGS)
            result = scenario_utils.cmd_steer(scn, os.path.join(self.tmp.name, data["name"]), SETTINGS)
            self.assertEqual(result["exit_code"], 0, f"{data}: {result['error']}")
            self.assertLess(result["report"]["terminal"]["sup_error"], 1e-6)

    def test_bv_pipeline_converges(self):
        scn = load_scenario(os.path.join(SCENARIOS, "greenshields_bv.json"), SETTINGS)
        result = scenario_utils.cmd_bv_pipeline(scn, out=self.tmp.name, settings=SETTINGS)
        self.assertEqual(result["exit_code"], 0, result["error"])
        rows = result["report"]["sequence"]
        self.assertEqual([r["n"] for r in rows], [25, 50, 100])
        self.assertLess(rows[-1]["mollification_l1_target"], rows[0]["mollification_l1_target"])
        names = [b["name"] for b in result["report"]["bounds"]]
        for n in (25, 50, 100):
            self.assertIn(f"n={n} terminal L1", names)
            self.assertIn(f"n={n} sup|u| + TV(u)", names)
        self.assertTrue(all(b["passed"] for b in result["report"]["bounds"]))
        self.assertIn("bv_sequence", result["files"])

    def test_trace_end_matches_target(self):
        scn = parse_scenario(minimal(), settings=SETTINGS)
        result = scenario_utils.cmd_trace(scn, self.tmp.name, SETTINGS)
        self.assertEqual(result["exit_code"], 0, result["error"])
        end = result["report"]["trace_end"]
        self.assertAlmostEqual(end["left"], end["psi_a"], delta=1e-6)
        self.assertAlmostEqual(end["right"], end["psi_b"], delta=1e-6)

    def test_bv_needs_bv_regime(self):
        scn = parse_scenario(minimal(), settings=SETTINGS)
        result = scenario_utils.cmd_bv_pipeline(scn, out=self.tmp.name, settings=SETTINGS)
        self.assertEqual(result["exit_code"], 1)
        self.assertEqual(result["files"], {})

    def test_steer_rejects_jumps(self):
        scn = parse_scenario(minimal(ubar={"type": "step", "x": 0.5, "left": 0.5, "right": 0.3}), settings=SETTINGS)
        self.assertEqual(scenario_utils.cmd_steer(scn, self.tmp.name, SETTINGS)["exit_code"], 1)


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _run(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = claw.main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_metrics_json(self):
        path = os.path.join(SCENARIOS, "kynch_sedimentation.json")
        code, out, _ = self._run("metrics", path, "--out", self.tmp.name, "--json", "--latex")
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)["command"], "metrics")
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "bounds.tex")))

    def test_missing_scenario(self):
        code, _, err = self._run("metrics", os.path.join(self.tmp.name, "absent.json"))
        self.assertEqual(code, 1)
        self.assertIn("error:", err)

    def test_hypothesis_exit_code(self):
        path = os.path.join(self.tmp.name, "short.json")
        with open(path, "w") as f:
            json.dump(minimal(T=5.0), f)
        code, out, _ = self._run("steer", path, "--out", os.path.join(self.tmp.name, "run"))
        self.assertEqual(code, 2)
        self.assertIn("FAILED", out)

    def test_bad_n_list(self):
        with self.assertRaises(SystemExit):
            with redirect_stderr(io.StringIO()):
                claw.build_parser().parse_args(["bv", "x.json", "--n", "10,-2"])

if __name__ == '__main__':
    unittest.main()
