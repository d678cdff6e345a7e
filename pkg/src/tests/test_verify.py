import sys
import unittest
from pathlib import Path
from unittest.mock import patch

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src import verify
from src.config import load_config
from src.errors import ConvergenceError


class TestVerify(unittest.TestCase):
    def setUp(self):
        self.config = load_config(None, {"verify.criteria": [2, 9], "verify.quick": True})

    def test_selected_criteria_pass(self):
        print("\n[Test] Verifying bulk periodicity and the Riccati identities through run_verify...")
        print("      - Rationale: the fast deterministic criteria must pass on the canonical setup.")
        results = verify.run_verify(self.config)
        self.assertEqual([r.number for r in results], [2, 9])
        self.assertTrue(all(r.passed for r in results), verify.format_table(results))
        table = verify.format_table(results)
        self.assertIn("PASS", table)
        self.assertEqual(results[0].row()["criterion"], 2)

    def test_surface_equality_quick(self):
        print("\n[Test] Verifying E_N - N e0 against e_surf in quick mode...")
        print("      - Rationale: the surface energy has two independent code paths.")
        result = verify.run_criterion(3, self.config, quick=True)
        self.assertTrue(result.passed, result.detail)
        self.assertGreater(result.elapsed_s, 0.0)

    def test_surface_equality_adaptive_window(self):
        print("\n[Test] Verifying E_N - N e0 against e_surf with the adaptively doubled window...")
        print("      - Rationale: full runs take e_surf from the first window that is stable under doubling.")
        result = verify.run_criterion(3, self.config, quick=False)
        self.assertTrue(result.passed, result.detail)
        self.assertLess(abs(result.metrics["excess"] - result.metrics["e_surf"]), 1e-6)

    def test_toeplitz_decay_respects_kappa_bound(self):
        print("\n[Test] Verifying the Toeplitz criterion also checks kappa_l <= alpha2 / (s z_min^(s+2) l^s)...")
        print("      - Rationale: the off-diagonal decay bound is what makes eta positive for every N.")
        result = verify.run_criterion(10, self.config, quick=True)
        self.assertTrue(result.passed, result.detail)
        self.assertGreaterEqual(result.metrics["kappa_slack"], 0.0)
        self.assertIn("kappa_slack", result.detail)

    def test_failures_are_reported_not_raised(self):
        print("\n[Test] Verifying a crashing criterion becomes a FAIL row...")
        print("      - Rationale: one broken oracle must not hide the other results.")
        def broken(config, quick):
            raise ConvergenceError("did not converge")
        broken.__name__ = "bulk_periodicity"
        with patch.dict(verify.CRITERIA, {2: broken}):
            result = verify.run_criterion(2, self.config)
        self.assertFalse(result.passed)
        self.assertIn("ConvergenceError", result.detail)
        self.assertIn("FAIL", verify.format_table([result]))


if __name__ == '__main__':
    unittest.main()
