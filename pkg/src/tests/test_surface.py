import sys
import unittest
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.errors import ConvergenceError, GridError
from src.ground_state import build_model, bulk_spacing_a, minimize_EN
from src.potentials import lennard_jones
from src.surface import (adaptive_surface, asymmetry_g, coercivity_constants, e_clamp, e_surf, h_full, h_hat,
                         h_hat_grid_scan, minimize_Esurf, rate_function_w, surface_energy,
                         surface_energy_extension, value_iteration_u)


class TestSurfaceEnergy(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = build_model(lennard_jones(), 0.1, 2)
        cls.bulk = bulk_spacing_a(cls.params)
        cls.result = minimize_Esurf(30, cls.params, cls.bulk)

    def test_surface_identity(self):
        print("\n[Test] Verifying e_surf = 2 min E_surf + e_clamp and min E_surf < 0...")
        print("      - Rationale: the bulk profile has zero surface energy and a nonzero first-order term.")
        r = self.result
        self.assertLess(r.min_Esurf, 0.0)
        self.assertAlmostEqual(r.e_surf, 2.0 * r.min_Esurf + e_clamp(self.params, self.bulk), places=14)
        self.assertAlmostEqual(surface_energy(r.profile, self.params, self.bulk), r.min_Esurf, places=12)

    def test_extension_form_agrees(self):
        print("\n[Test] Verifying the Taylor-remainder form of E_surf...")
        print("      - Rationale: both forms of the surface functional must agree on any profile.")
        r = self.result
        self.assertAlmostEqual(surface_energy_extension(r.profile, self.params, self.bulk), r.min_Esurf, places=10)
        rng = np.random.default_rng(3)
        z = self.bulk.a + 0.01 * rng.standard_normal(12)
        self.assertAlmostEqual(surface_energy_extension(z, self.params, self.bulk),
                               surface_energy(z, self.params, self.bulk), places=10)

    def test_matches_finite_chain_excess(self):
        print("\n[Test] Verifying E_N - N e0 converges to e_surf...")
        print("      - Rationale: two independent code paths for the same surface energy.")
        N = 80
        res = minimize_EN(N, self.params, bulk=self.bulk)
        self.assertAlmostEqual(res.energy - N * self.bulk.e0, self.result.e_surf, places=7)

    def test_profile_decays_to_bulk(self):
        print("\n[Test] Verifying the boundary layer decays toward a...")
        print("      - Rationale: the surface minimiser is a boundary-layer profile.")
        dev = np.abs(self.result.profile - self.bulk.a)
        self.assertLess(dev[-1], 1e-8)
        self.assertGreater(dev[0], dev[10])
        self.assertEqual(len(self.result.rows(self.bulk.a)), 30)

    def test_short_window_rejected(self):
        print("\n[Test] Verifying K below the interaction range is rejected...")
        print("      - Rationale: a truncated functional shorter than m is not defined.")
        params3 = build_model(lennard_jones(), 0.1, 3)
        with self.assertRaises(ValueError):
            minimize_Esurf(2, params3, bulk_spacing_a(params3))

    def test_coercivity(self):
        print("\n[Test] Verifying E_surf(z) >= c1 |z - a|^2 - c2 on random profiles...")
        print("      - Rationale: the coercivity constants bound the surface functional from below.")
        c1, c2 = coercivity_constants(self.params, self.bulk, self.result)
        self.assertGreater(c1, 0.0)
        rng = np.random.default_rng(11)
        for _ in range(20):
            z = rng.uniform(self.params.z_min, self.params.z_max, size=30)
            lhs = surface_energy(z, self.params, self.bulk)
            self.assertGreaterEqual(lhs, c1 * float(np.sum((z - self.bulk.a) ** 2)) - c2 - 1e-12)


class TestSurfaceWindow(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = build_model(lennard_jones(), 0.1, 2)
        cls.bulk = bulk_spacing_a(cls.params)

    def test_window_doubling_is_stable(self):
        print("\n[Test] Verifying min E_surf is unchanged when K doubles from 50 to 100...")
        print("      - Rationale: the boundary layer decays exponentially, so the window only has to cover it.")
        k50 = minimize_Esurf(50, self.params, self.bulk)
        k100 = minimize_Esurf(100, self.params, self.bulk)
        self.assertLess(abs(k50.min_Esurf - k100.min_Esurf), 1e-10)
        self.assertLess(abs(k50.e_surf - k100.e_surf), 1e-10)

    def test_adaptive_window(self):
        print("\n[Test] Verifying adaptive K stops once a doubling moves the minimum by less than tol...")
        print("      - Rationale: e_surf without an explicit K must come from a stable window.")
        result = adaptive_surface(self.params, self.bulk, K0=4)
        half = minimize_Esurf(result.tail_K // 2, self.params, self.bulk)
        self.assertLess(abs(result.min_Esurf - half.min_Esurf), 1e-10)
        self.assertAlmostEqual(e_surf(self.params, self.bulk), result.e_surf, places=12)
        self.assertAlmostEqual(e_surf(self.params, self.bulk, K=60),
                               minimize_Esurf(60, self.params, self.bulk).e_surf, places=14)
        with self.assertRaises(ConvergenceError):
            adaptive_surface(self.params, self.bulk, K0=4, tol=0.0, K_max=16)

    def test_range_cutoff_is_stable(self):
        print("\n[Test] Verifying e0 and e_surf for infinite range barely move when M_cut goes from 50 to 100...")
        print("      - Rationale: the dropped pairs beyond M_cut carry only the certified power-law tail.")
        p50 = build_model(lennard_jones(), 0.1, None, m_cut=50)
        p100 = build_model(lennard_jones(), 0.1, None, m_cut=100)
        b50, b100 = bulk_spacing_a(p50), bulk_spacing_a(p100)
        self.assertLessEqual(abs(b50.e0 - b100.e0), b50.tail_bound + 1e-14)
        self.assertLess(abs(b50.a - b100.a), 1e-6)
        s50 = e_surf(p50, b50, K=120)
        s100 = e_surf(p100, b100, K=120)
        self.assertLess(abs(s50 - s100), 1e-6)


class TestValueFunction(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = build_model(lennard_jones(), 0.1, 2)
        cls.bulk = bulk_spacing_a(cls.params)
        cls.vf = value_iteration_u(cls.params, cls.bulk, n_points=129, tol=1e-11)

    def test_normalisation_and_residual(self):
        print("\n[Test] Verifying u(a) = 0 and the fixed-point residual...")
        print("      - Rationale: u is normalised at the bulk block and must be a converged fixed point.")
        a = self.vf.a_block
        self.assertAlmostEqual(float(self.vf.u(a)), 0.0, places=12)
        self.assertLess(self.vf.residual, 1e-10)
        self.assertAlmostEqual(float(rate_function_w(a, self.vf)), 0.0, places=8)
        self.assertAlmostEqual(float(h_full(a, a, self.vf)), 0.0, places=8)

    def test_min_u_is_surface_minimum(self):
        print("\n[Test] Verifying min u matches the continuous surface minimum...")
        print("      - Rationale: u is the pinned surface infimum, so its minimum is min E_surf.")
        surf = minimize_Esurf(30, self.params, self.bulk)
        self.assertAlmostEqual(float(self.vf.u_values.min()), surf.min_Esurf, delta=5e-3)

    def test_h_hat_properties(self):
        print("\n[Test] Verifying H-hat vanishes at (a, a), is non-negative and symmetric on the grid...")
        print("      - Rationale: H-hat is the normalised two-block energy of the transfer kernel K.")
        a = self.vf.a_block
        self.assertAlmostEqual(float(h_hat(a, a, self.vf)), 0.0, places=8)
        scan = h_hat_grid_scan(self.vf, stride=4)
        self.assertGreaterEqual(scan.min_value, -1e-8)
        x = self.vf.nodes[::16, None]
        y = self.vf.nodes[3::16, None][:x.shape[0]]
        x = x[:y.shape[0]]
        np.testing.assert_allclose(h_hat(x, y, self.vf), h_hat(y[:, ::-1], x[:, ::-1], self.vf), atol=1e-10)

    def test_outside_hull(self):
        print("\n[Test] Verifying H-hat raises outside the value-function hull...")
        print("      - Rationale: extrapolating u beyond the grid is not allowed.")
        lo, hi = self.vf.hull
        with self.assertRaises(GridError):
            h_hat(np.array([hi + 0.5]), self.vf.a_block, self.vf)
        self.assertTrue(np.isfinite(h_hat(np.array([hi + 0.5]), self.vf.a_block, self.vf, clamp=True)))

    def test_u_is_pinned_surface_minimum(self):
        print("\n[Test] Verifying u(x) against min E_surf with z_1 pinned at x for five nodes...")
        print("      - Rationale: u(x) is the surface energy of the best continuation of a chain starting with x.")
        inside = self.vf.nodes[(self.vf.nodes >= self.params.z_min) & (self.vf.nodes <= self.params.z_max)]
        for x in inside[np.linspace(0, inside.size - 1, 5).astype(int)]:
            pinned = minimize_Esurf(60, self.params, self.bulk, pinned={0: float(x)})
            self.assertEqual(pinned.profile[0], x)
            self.assertAlmostEqual(float(self.vf.u(np.array([x]))), pinned.min_Esurf, delta=5e-3)


class TestValueFunctionTwoSpacings(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = build_model(lennard_jones(), 0.1, 3)
        cls.bulk = bulk_spacing_a(cls.params)
        cls.vf = value_iteration_u(cls.params, cls.bulk, n_points=33, tol=1e-10)

    def test_fixed_point_on_blocks(self):
        print("\n[Test] Verifying value iteration on two-spacing blocks for m=3...")
        print("      - Rationale: with d=2 the block reversal sigma is a real symmetry to respect.")
        self.assertEqual(self.vf.d, 2)
        self.assertEqual(self.vf.u_values.shape, (self.vf.nodes.size,) * 2)
        self.assertLess(self.vf.residual, 1e-10)
        self.assertAlmostEqual(float(self.vf.u(self.vf.a_block)), 0.0, places=12)

    def test_asymmetry_is_odd_under_reversal(self):
        print("\n[Test] Verifying g(sigma x) = -g(x) and that g does not vanish for m=3...")
        print("      - Rationale: u(x) and u(sigma x) differ because the free end breaks the reversal.")
        nodes = self.vf.nodes
        X = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 2)
        g = asymmetry_g(X, self.vf)
        np.testing.assert_allclose(asymmetry_g(X[:, ::-1], self.vf), -g, atol=1e-12)
        self.assertGreater(float(np.max(np.abs(g))), 1e-6)
        self.assertAlmostEqual(float(asymmetry_g(self.vf.a_block, self.vf)), 0.0, places=12)

    def test_h_hat_reversal_symmetry(self):
        print("\n[Test] Verifying H-hat(x, y) = H-hat(sigma y, sigma x) for m=3...")
        print("      - Rationale: the symmetrised kernel K must be invariant under reading the chain backwards.")
        rng = np.random.default_rng(23)
        nodes = self.vf.nodes
        x = nodes[rng.integers(0, nodes.size, size=(50, 2))]
        y = nodes[rng.integers(0, nodes.size, size=(50, 2))]
        np.testing.assert_allclose(h_hat(x, y, self.vf), h_hat(y[:, ::-1], x[:, ::-1], self.vf), atol=1e-10)
        self.assertAlmostEqual(float(h_hat(self.vf.a_block, self.vf.a_block, self.vf)), 0.0, places=8)


if __name__ == '__main__':
    unittest.main()
