import unittest
from pathlib import Path

import harness
from attacks import fltrust_roots
from configuration import ConfigurationError, ExperimentConfig
from fl_sim import model_dimension

TEST_DEFAULTS = Path(__file__).parent / "configuration_data" / "defaults.txt"


def small_config(**document) -> ExperimentConfig:
    config = ExperimentConfig.from_defaults(TEST_DEFAULTS).apply(document)
    config.post_validate()
    return config


class AxisTests(unittest.TestCase):

    def test_parse(self):
        self.assertEqual(harness.parse_axis("m=1,2,5"), ("m", [1, 2, 5]))
        self.assertEqual(harness.parse_axis("attack.groups=2,J/2,J"), ("attack.groups", [2, "J/2", "J"]))
        self.assertEqual(harness.parse_axis("defense.spp_fraction=0.25, none"),
                         ("defense.spp_fraction", [0.25, None]))

    def test_parse_errors(self):
        for text in ("m", "=1,2", "m="):
            with self.assertRaises(ConfigurationError):
                harness.parse_axis(text)

    def test_model_dimension_aliases(self):
        config = small_config()
        dim = model_dimension(config)
        self.assertEqual(harness.resolve_axis_value(config, "attack.groups", "J"), dim)
        self.assertEqual(harness.resolve_axis_value(config, "attack.groups", "J/2"), dim // 2)
        self.assertEqual(harness.resolve_axis_value(config, "attack.groups", 4), 4)
        self.assertEqual(harness.resolve_axis_value(config, "m", "J"), "J")


class SweepTests(unittest.TestCase):

    def test_invalid_cell_does_not_stop_the_sweep(self):
        result = harness.sweep(small_config(rounds=1, attack={"kind": "faker"}), "m", [0, 1, 3])
        self.assertFalse(result.ok)
        self.assertEqual(len(result.completed), 2)
        self.assertEqual([f.cell for f in result.failures], [2])
        self.assertEqual(result.failures[0].to_dict()['value'], 3)
        self.assertIsNone(result.reports[2])
        self.assertEqual([r.m for r in result.completed], [0, 1])

    def test_group_axis(self):
        template = small_config(rounds=1, attack={"kind": "faker", "strategy": "uniform_blocks"})
        result = harness.sweep(template, "attack.groups", [2, "J/2"])
        self.assertTrue(result.ok, str(result.failures))
        self.assertEqual(result.completed[1].config['attack']['groups'], model_dimension(template) // 2)

    def test_worker_pool_matches_serial_run(self):
        template = small_config(rounds=1, defense={"kind": "krum"}, attack={"kind": "faker"})
        serial = harness.sweep(template, "master_seed", [1, 2], workers=1)
        pooled = harness.sweep(template, "master_seed", [1, 2], workers=2)
        self.assertEqual([r.deterministic_view() for r in serial.completed],
                         [r.deterministic_view() for r in pooled.completed])


class OracleTests(unittest.TestCase):

    def test_closed_forms_pass(self):
        report = harness.oracle_check(instances=3, points=1000, seed=0)
        self.assertTrue(report.passed, str([str(r) for r in report.results]))
        self.assertEqual(len(report.results), 7)
        self.assertIsNone(report.first_failure)

    def test_wrong_solver_is_caught(self):
        report = harness.oracle_check(solver=lambda psi, lam, beta, gam: fltrust_roots(psi, lam + 1.0, beta, gam),
                                      instances=3, points=1000, seed=0)
        self.assertFalse(report.passed)
        failure = report.first_failure
        self.assertEqual(failure.name, "fltrust_closed_form_vs_grid")
        self.assertIn("fixed_scalars", failure.replay)
        self.assertFalse(report.to_dict()['passed'])

    def test_norm_budget_matches_grid(self):
        passed, detail, replay = harness._normclip_grid(3, 1000, 2)
        self.assertTrue(passed, detail)
        self.assertIsNone(replay)

    def test_spp_rejects_faker_fltrust(self):
        passed, detail, replay = harness._spp_rejection(40, 5)
        self.assertTrue(passed, detail)
        self.assertIsNone(replay)


class OverheadTests(unittest.TestCase):

    def test_screening_is_timed(self):
        comparison = harness.compare_overhead(small_config(defense={"kind": "fltrust"}), fraction=0.5, repeats=1)
        self.assertGreater(comparison.spp_seconds, 0.0)
        self.assertGreater(comparison.err_seconds, 0.0)
        self.assertGreater(comparison.ratio, 0.0)


if __name__ == '__main__':
    unittest.main()
