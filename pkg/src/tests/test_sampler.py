import math
import sys
import unittest
from fractions import Fraction
from pathlib import Path
from unittest.mock import patch

import numpy as np

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.errors import SamplerError
from src.gaussian import build_gaussian_model
from src.ground_state import build_model, bulk_spacing_a
from src.potentials import lennard_jones
from src.quadrature import build_quadrature
from src.sampler import (correlation_function, kernel_chain_run, marginal_distance_histogram,
                         metropolis_run, metropolis_transition_matrix, occupation_test, pool_runs, run_chains,
                         tail_check, transition_matrix)
from src.transfer import assemble_T, marginal_density, solve_spectrum

RUN_ARGS = dict(burn_in=500, thinning=10, progress=False)


class TestExactKernel(unittest.TestCase):
    def test_detailed_balance(self):
        print("\n[Test] Verifying exact detailed balance of the Metropolis rule on a three-state toy...")
        print("      - Rationale: rational arithmetic leaves no room for rounding.")
        weights = [Fraction(1), Fraction(2), Fraction(5)]
        P = metropolis_transition_matrix(weights)
        for i in range(3):
            self.assertEqual(sum(P[i]), 1)
            for j in range(3):
                self.assertEqual(weights[i] * P[i][j], weights[j] * P[j][i])
        self.assertEqual(P[0][1], Fraction(1, 2))
        self.assertEqual(P[2][0], Fraction(1, 10))
        with self.assertRaises(ValueError):
            metropolis_transition_matrix([Fraction(1)])


class TestMetropolis(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = build_model(lennard_jones(), 0.1, 2)
        cls.bulk = bulk_spacing_a(cls.params)
        cls.beta = 20.0
        cls.sample = metropolis_run(16, cls.params, cls.beta, 2000, 7, **RUN_ARGS)

    def test_fixture_keeps_testcase_api(self):
        print("\n[Test] Verifying the class fixture leaves TestCase.run untouched...")
        print("      - Rationale: a fixture named run would replace the method unittest calls to execute each test.")
        self.assertIs(type(self).run, unittest.TestCase.run)
        self.assertTrue(hasattr(self.sample, "mean_spacing"))

    def test_reproducible(self):
        print("\n[Test] Verifying a fixed seed reproduces the run...")
        print("      - Rationale: every sampler result must be replayable from its seed.")
        again = metropolis_run(16, self.params, self.beta, 2000, 7, **RUN_ARGS)
        self.assertEqual(again.mean_spacing, self.sample.mean_spacing)
        np.testing.assert_array_equal(again.hist_density, self.sample.hist_density)
        other = metropolis_run(16, self.params, self.beta, 2000, 8, **RUN_ARGS)
        self.assertNotEqual(other.mean_spacing, self.sample.mean_spacing)
        self.assertEqual(self.sample.seed, "7")

    def test_estimates_are_sane(self):
        print("\n[Test] Verifying acceptance, histogram mass and lag-zero correlation...")
        print("      - Rationale: these hold for any correct run regardless of its length.")
        run = self.sample
        self.assertTrue(0.05 < run.acceptance < 1.0)
        self.assertEqual(run.n_samples, 200)
        mass = float(np.sum(run.hist_density * np.diff(run.hist_edges)))
        self.assertAlmostEqual(mass, 1.0, places=10)
        self.assertAlmostEqual(float(run.corr[0]), 1.0, places=10)
        self.assertAlmostEqual(run.mean_spacing, self.bulk.a, delta=0.05)
        self.assertTrue(math.isfinite(run.mean_spacing_se))
        self.assertEqual(len(run.histogram_rows()), run.hist_edges.size - 1)
        self.assertEqual(run.correlation_rows()[0]["lag"], 0)
        self.assertEqual(run.summary()["kind"], "metropolis")

    def test_argument_checks(self):
        print("\n[Test] Verifying short chains and short runs are rejected...")
        print("      - Rationale: the bulk window and the batch split need a minimum size.")
        with self.assertRaises(ValueError):
            metropolis_run(2, self.params, self.beta, 2000, 1, **RUN_ARGS)
        with self.assertRaises(ValueError):
            metropolis_run(16, self.params, self.beta, 100, 1, **RUN_ARGS)

    def test_stuck_chain_raises(self):
        print("\n[Test] Verifying a chain that never accepts raises SamplerError...")
        print("      - Rationale: a frozen chain must not be reported as a sample.")
        with patch('src.sampler._metropolis_sweep', return_value=0):
            with self.assertRaises(SamplerError):
                metropolis_run(8, self.params, self.beta, 400, 3, **RUN_ARGS)

    def test_tail_check(self):
        print("\n[Test] Verifying the tail frequencies against exp(-beta p r)...")
        print("      - Rationale: the spacing tail is bounded by the pressure term.")
        rows = tail_check(self.sample)
        np.testing.assert_allclose([r["r"] for r in rows], [0.0, 0.5, 1.0, 2.0, 4.0], atol=1e-12)
        self.assertTrue(all(r["ok"] for r in rows))
        self.assertEqual(rows[0]["bound"], 1.0)
        with self.assertRaises(ValueError):
            tail_check(self.sample, [0.3])

    def test_correlation_fit(self):
        print("\n[Test] Verifying the correlation fit returns a positive rate...")
        print("      - Rationale: either a least-squares rate or a lower bound must come out.")
        fit = correlation_function(self.sample)
        self.assertEqual(fit.lags.size, self.sample.corr.size)
        self.assertTrue(fit.significant[0])
        self.assertGreater(fit.rate, 0.0)

    def test_gaussian_marginal_distance(self):
        print("\n[Test] Verifying the histogram distance to the Gaussian marginal...")
        print("      - Rationale: an L1 distance between probability measures lies in [0, 2].")
        model = build_gaussian_model(self.params, self.bulk)
        dist = marginal_distance_histogram(self.sample, model)
        self.assertTrue(0.0 <= dist.distance <= 2.0)
        self.assertTrue(0.0 <= dist.coarse_distance <= 2.0)
        self.assertGreaterEqual(dist.binning_sensitivity, 0.0)
        params3 = build_model(lennard_jones(), 0.1, 3)
        with self.assertRaises(ValueError):
            marginal_distance_histogram(self.sample, build_gaussian_model(params3, bulk_spacing_a(params3)))

    def test_independent_chains(self):
        print("\n[Test] Verifying spawned chains differ and pool into one estimate...")
        print("      - Rationale: independent streams come from one seed sequence.")
        runs = run_chains(2, 8, self.params, self.beta, 400, 11, **RUN_ARGS)
        self.assertEqual(len(runs), 2)
        self.assertNotEqual(runs[0].mean_spacing, runs[1].mean_spacing)
        pooled = pool_runs(runs)
        self.assertEqual(pooled["chains"], 2)
        self.assertAlmostEqual(pooled["mean_spacing"], 0.5 * (runs[0].mean_spacing + runs[1].mean_spacing))
        with self.assertRaises(ValueError):
            pool_runs([])


class TestKernelChain(unittest.TestCase):
    def test_kernel_chain_visits_invariant_masses(self):
        print("\n[Test] Verifying the transfer-kernel chain samples the bulk marginal...")
        print("      - Rationale: the discrete chain is exact for the quadrature measure.")
        params = build_model(lennard_jones(), 0.1, 2)
        bulk = bulk_spacing_a(params)
        beta = 20.0
        tm = assemble_T(params, build_quadrature(params, bulk, beta), beta)
        spec = solve_spectrum(tm)
        P = transition_matrix(tm, spec)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        masses = marginal_density(tm, spec, 1).masses
        np.testing.assert_allclose(masses @ P, masses, atol=1e-10)
        run = kernel_chain_run(params, tm, spec, 20000, 5)
        self.assertEqual(int(run.occupation.sum()), 20000)
        _, p_value = occupation_test(run, masses)
        self.assertGreater(p_value, 1e-6)
        with self.assertRaises(ValueError):
            occupation_test(metropolis_run(8, params, beta, 400, 1, **RUN_ARGS), masses)


if __name__ == '__main__':
    unittest.main()
