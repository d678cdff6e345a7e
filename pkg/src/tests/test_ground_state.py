import sys
import unittest
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.errors import AssumptionError
from src.ground_state import (ModelParams, banded_to_dense, build_model, bulk_spacing_a, convergence_study_e0,
                              energy, gradient, hessian, minimize_EN)
from src.potentials import clause_iv_margin, evaluate, lennard_jones


class TestModelParams(unittest.TestCase):
    def test_build_model_rejects_high_pressure(self):
        print("\n[Test] Verifying build_model refuses p above p*...")
        print("      - Rationale: no ground-state theory exists beyond the critical pressure.")
        with self.assertRaises(AssumptionError):
            build_model(lennard_jones(), 0.3, 2)

    def test_parameter_checks(self):
        print("\n[Test] Verifying ModelParams argument checks and derived properties...")
        print("      - Rationale: m=0 or negative pressure are caller errors.")
        params = build_model(lennard_jones(), 0.1, 3)
        self.assertEqual(params.range, 3)
        self.assertEqual(params.block_dim, 2)
        self.assertEqual(params.m_cut, 3)
        infinite = build_model(lennard_jones(), 0.1, None, m_cut=40)
        self.assertEqual(infinite.range, 40)
        self.assertFalse(infinite.finite)
        with self.assertRaises(ValueError):
            ModelParams(params.potential, 0.1, 0, params.z_min, params.z_max)
        with self.assertRaises(ValueError):
            ModelParams(params.potential, -0.1, 2, params.z_min, params.z_max)


class TestBulk(unittest.TestCase):
    def setUp(self):
        self.params = build_model(lennard_jones(), 0.1, 2)
        self.bulk = bulk_spacing_a(self.params)

    def test_bulk_spacing_stationary(self):
        print("\n[Test] Verifying a solves p + v'(a) + 2 v'(2a) = 0 inside (z_min, z_max)...")
        print("      - Rationale: the bulk spacing is the minimiser of the per-particle energy.")
        a = self.bulk.a
        pot = self.params.potential
        self.assertAlmostEqual(0.1 + evaluate(pot, a, 1) + 2.0 * evaluate(pot, 2.0 * a, 1), 0.0, places=10)
        self.assertTrue(self.params.z_min < a < self.params.z_max)
        e0 = 0.1 * a + evaluate(pot, a, 0) + evaluate(pot, 2.0 * a, 0)
        self.assertAlmostEqual(self.bulk.e0, e0, places=14)
        self.assertGreater(self.bulk.a0, a)

    def test_zero_pressure_single_neighbour(self):
        print("\n[Test] Verifying a = a0 = z_max for m=1 at zero pressure...")
        print("      - Rationale: with only nearest neighbours the bond sits at the pair minimum.")
        params = build_model(lennard_jones(), 0.0, 1)
        bulk = bulk_spacing_a(params)
        self.assertAlmostEqual(bulk.a, 2.0 ** (1.0 / 6.0), places=10)
        self.assertAlmostEqual(bulk.a0, bulk.a, places=12)
        self.assertAlmostEqual(bulk.e0, -0.25, places=12)


class TestEnergy(unittest.TestCase):
    def setUp(self):
        self.params = build_model(lennard_jones(), 0.1, 2)
        self.a = bulk_spacing_a(self.params).a

    def test_uniform_chain_energy(self):
        print("\n[Test] Verifying E_N of a uniform chain by direct counting...")
        print("      - Rationale: N-1 nearest and N-2 next-nearest pairs at spacing a.")
        N = 12
        z = np.full(N - 1, self.a)
        pot = self.params.potential
        expected = 0.1 * (N - 1) * self.a + (N - 1) * evaluate(pot, self.a, 0) + (N - 2) * evaluate(pot, 2 * self.a, 0)
        self.assertAlmostEqual(energy(z, self.params), expected, places=12)
        z[3] = 0.0
        self.assertEqual(energy(z, self.params), float("inf"))

    def test_derivatives_against_differences(self):
        print("\n[Test] Verifying gradient and banded Hessian against central differences...")
        print("      - Rationale: the Newton solver relies on exact first and second derivatives.")
        rng = np.random.default_rng(7)
        z = self.a + 0.02 * rng.standard_normal(9)
        h = 1e-6
        g = gradient(z, self.params)
        H = banded_to_dense(hessian(z, self.params))
        for i in range(z.size):
            e = np.zeros(z.size)
            e[i] = h
            fd = (energy(z + e, self.params) - energy(z - e, self.params)) / (2 * h)
            self.assertAlmostEqual(g[i], fd, places=5)
            col = (gradient(z + e, self.params) - gradient(z - e, self.params)) / (2 * h)
            np.testing.assert_allclose(H[:, i], col, rtol=1e-5, atol=1e-4)
        np.testing.assert_allclose(H, H.T)

    def test_hessian_eigenvalue_bounds(self):
        print("\n[Test] Verifying eta <= spec(Hessian) <= C on the box for N=50...")
        print("      - Rationale: the row-sum bound keeps E_N uniformly convex on [z_min, z_max]^(N-1).")
        pot = self.params.potential
        z_min, z_max = self.params.z_min, self.params.z_max
        eta = clause_iv_margin(pot, z_min)
        # v'' < 0 beyond 2 z_min, where |v''(r)| <= alpha2 r^-(s+2)
        upper = evaluate(pot, z_min, 2) + 4.0 * pot.alpha2 * (2.0 * z_min) ** (-pot.s - 2.0)
        self.assertGreater(eta, 0.0)
        rng = np.random.default_rng(19)
        samples = [rng.uniform(z_min, z_max, size=49) for _ in range(10)]
        samples.append(minimize_EN(50, self.params).spacings)
        for z in samples:
            ab = hessian(z, self.params)
            self.assertTrue(np.all(ab[-1] > 0))
            self.assertTrue(np.all(ab[:-1, 1:] <= 0))
            eigs = np.linalg.eigvalsh(banded_to_dense(ab))
            self.assertGreaterEqual(eigs[0], eta - 1e-10)
            self.assertLessEqual(eigs[-1], upper + 1e-10)


class TestMinimisation(unittest.TestCase):
    def setUp(self):
        self.params = build_model(lennard_jones(), 0.1, 2)
        self.bulk = bulk_spacing_a(self.params)

    def test_minimiser_is_periodic_in_the_bulk(self):
        print("\n[Test] Verifying the E_N minimiser stays in the window and equals a in the bulk...")
        print("      - Rationale: boundary layers decay exponentially away from the ends.")
        res = minimize_EN(40, self.params, bulk=self.bulk)
        self.assertEqual(res.N, 40)
        self.assertTrue(np.all(res.spacings >= self.params.z_min))
        self.assertTrue(np.all(res.spacings <= self.params.z_max))
        self.assertLess(abs(res.spacings[19] - self.bulk.a), 1e-6)
        self.assertLess(res.grad_norm, 1e-9)
        self.assertGreaterEqual(res.energy, 39 * self.bulk.e0)

    def test_pinned_spacing(self):
        print("\n[Test] Verifying pinned coordinates stay fixed...")
        print("      - Rationale: pinned minimisation is the oracle for the value function.")
        x = self.bulk.a + 0.01
        res = minimize_EN(10, self.params, pinned={0: x}, bulk=self.bulk)
        self.assertEqual(res.spacings[0], x)
        free = minimize_EN(10, self.params, bulk=self.bulk)
        self.assertGreaterEqual(res.energy, free.energy)
        with self.assertRaises(ValueError):
            minimize_EN(10, self.params, pinned={20: x})

    def test_subadditivity(self):
        print("\n[Test] Verifying E_{N+M-1} <= E_N + E_M for (N, M) = (10, 15)...")
        print("      - Rationale: joining two chains at a shared particle only adds attractive cross pairs.")
        e10 = minimize_EN(10, self.params, bulk=self.bulk).energy
        e15 = minimize_EN(15, self.params, bulk=self.bulk).energy
        e24 = minimize_EN(24, self.params, bulk=self.bulk).energy
        self.assertLessEqual(e24, e10 + e15)
        joined = np.concatenate([minimize_EN(10, self.params, bulk=self.bulk).spacings,
                                 minimize_EN(15, self.params, bulk=self.bulk).spacings])
        self.assertLessEqual(e24, energy(joined, self.params) + 1e-12)
        self.assertLessEqual(energy(joined, self.params), e10 + e15)

    def test_convergence_study(self):
        print("\n[Test] Verifying the e0 convergence table...")
        print("      - Rationale: E_N/N tends to e0 and E_N stays above (N-1) e0.")
        rows = convergence_study_e0(self.params, [10, 20, 40], self.bulk)
        self.assertEqual([r["N"] for r in rows], [10, 20, 40])
        self.assertTrue(all(r["lower_bound_ok"] for r in rows))
        gaps = [abs(r["energy_per_particle"] - self.bulk.e0) for r in rows]
        self.assertTrue(gaps[0] > gaps[1] > gaps[2])
        with self.assertRaises(ValueError):
            convergence_study_e0(self.params, [20, 10], self.bulk)
        with self.assertRaises(ValueError):
            minimize_EN(1, self.params)


if __name__ == '__main__':
    unittest.main()
