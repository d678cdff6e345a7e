import io
import math
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.artifact_store import ArtifactStore, read_table
from src.config import ExperimentConfig, build_params, dump_config, load_config, to_dict
from src.errors import ConfigError
from src.logger import OUTPUT_DIR_ENV


class TestConfig(unittest.TestCase):
    def setUp(self):
        self.env = patch.dict(os.environ, {OUTPUT_DIR_ENV: ""})
        self.env.start()
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.env.stop()
        self.tmp.cleanup()

    def _write(self, text: str) -> str:
        path = os.path.join(self.tmp.name, "experiment.yaml")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_defaults(self):
        print("\n[Test] Verifying an empty configuration resolves to the canonical setup...")
        print("      - Rationale: Lennard-Jones at p=0.1 with m=2 is the reference experiment.")
        config = load_config(self._write(""))
        self.assertEqual(config, ExperimentConfig())
        self.assertEqual(config.model.p, 0.1)
        self.assertEqual(config.model.m, 2)
        self.assertEqual(config.sample_beta, config.spectrum.beta)
        self.assertEqual(build_params(config).range, 2)

    def test_schema_errors_name_the_field(self):
        print("\n[Test] Verifying schema violations report the dotted field path...")
        print("      - Rationale: users must see which key of their file is wrong.")
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("model:\n  q: 1\n"))
        self.assertEqual(ctx.exception.field_path, "model.q")
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("sampler:\n  N: many\n"))
        self.assertEqual(ctx.exception.field_path, "sampler.N")
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("model:\n  p: -0.1\n"))
        self.assertIn("0 <= p", str(ctx.exception))
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("potential:\n  kind: tabulated\n"))
        self.assertEqual(ctx.exception.field_path, "potential.path")
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.tmp.name, "missing.yaml"))

    def test_precedence(self):
        print("\n[Test] Verifying file < environment < flag precedence...")
        print("      - Rationale: command-line flags must win over every other source.")
        path = self._write("model:\n  p: 0.05\n  m: 3\nsurface:\n  tol: 1e-10\noutput:\n  directory: from_file\n")
        config = load_config(path, {"model.p": 0.2, "model.m": None})
        self.assertEqual(config.model.p, 0.2)
        self.assertEqual(config.model.m, 3)
        self.assertEqual(config.surface.tol, 1e-10)
        self.assertEqual(config.output.directory, "from_file")
        with patch.dict(os.environ, {OUTPUT_DIR_ENV: "from_env"}):
            self.assertEqual(load_config(path).output.directory, "from_env")
            self.assertEqual(load_config(path, {"output.directory": "from_flag"}).output.directory, "from_flag")

    def test_dump_round_trip(self):
        print("\n[Test] Verifying a dumped configuration loads back unchanged...")
        print("      - Rationale: provenance files are replayable experiment files.")
        config = load_config(None, {"model.m": 3, "spectrum.betas": [10, 40]})
        path = os.path.join(self.tmp.name, "dumped.yaml")
        dump_config(config, path)
        self.assertEqual(load_config(path), config)
        self.assertEqual(to_dict(config)["spectrum"]["betas"], [10.0, 40.0])


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name
        self.env = patch.dict(os.environ, {OUTPUT_DIR_ENV: ""})
        self.env.start()

    def tearDown(self):
        self.env.stop()
        self.tmp.cleanup()

    def test_cli_has_main(self):
        print("\n[Test] Verifying structural integrity (main function existence)...")
        print("      - Rationale: Prevents accidental deletion of the console entry point.")
        import src.cli as cli
        self.assertTrue(hasattr(cli, 'main'), "src/cli.py is missing the 'main' function!")
        self.assertTrue(callable(cli.main), "src/cli.py 'main' is not a callable function!")

    def test_exit_codes(self):
        print("\n[Test] Verifying exit codes for assumption failures and missing files...")
        print("      - Rationale: scripts rely on 1 for numerical failures and 2 for configuration errors.")
        from src.cli import main
        self.assertEqual(main(["validate", "--p", "0.3", "--output-dir", self.out]), 1)
        table = read_table(os.path.join(self.out, "validate", "assumptions.csv"))
        failed = [r["check"] for r in table["rows"] if not r["passed"]]
        self.assertIn("pressure_below_p_star", failed)
        self.assertEqual(main(["validate", "--config", os.path.join(self.out, "nope.yaml")]), 2)
        latest = ArtifactStore(self.out).latest_run("validate")
        self.assertEqual(latest["status"], "failed")

    def test_validate_names_the_failed_assumption(self):
        print("\n[Test] Verifying a failed validate says which assumption broke...")
        print("      - Rationale: a bare check key does not tell the user that p exceeds p*.")
        from src.cli import main
        with patch("sys.stderr", new_callable=io.StringIO) as err:
            self.assertEqual(main(["validate", "--p", "0.3", "--output-dir", self.out]), 1)
        message = err.getvalue()
        self.assertIn("AssumptionError", message)
        self.assertIn("pressure 0 <= p < p* violated", message)
        self.assertIn("p=0.3", message)
        self.assertIn("pressure_below_p_star", message)

    def test_gaussian_subcommand(self):
        print("\n[Test] Verifying the gaussian subcommand writes the closed-form C for m=2...")
        print("      - Rationale: end-to-end check of config, computation, output and provenance.")
        from src.cli import main
        from src.potentials import evaluate, lennard_jones
        from src.ground_state import build_model, bulk_spacing_a
        self.assertEqual(main(["gaussian", "--m", "2", "--output-dir", self.out]), 0)
        summary = read_table(os.path.join(self.out, "gaussian", "summary.json"))
        a = bulk_spacing_a(build_model(lennard_jones(), 0.1, 2)).a
        A = float(evaluate(lennard_jones(), a, 2) + 2.0 * evaluate(lennard_jones(), 2.0 * a, 2))
        B = float(evaluate(lennard_jones(), 2.0 * a, 2))
        C = 0.5 * (A + math.sqrt(A * A - 4.0 * B * B))
        self.assertAlmostEqual(summary["rows"][0]["C"][0][0], C, places=9)
        self.assertEqual(summary["provenance"]["subcommand"], "gaussian")
        self.assertEqual(summary["provenance"]["config"]["model"]["m"], 2)
        self.assertEqual(ArtifactStore(self.out).latest_run("gaussian")["status"], "ok")


if __name__ == '__main__':
    unittest.main()
