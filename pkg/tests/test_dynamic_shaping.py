"""
Dynamic Shaping Test Suite
Tests for the scattering-force push, Doppler visibility and trajectory sampling
"""

import unittest
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from vortexshaper.atoms.cloud_model import AtomEnsemble, CloudSpec, sample_cloud
from vortexshaper.atoms.dynamic_shaping import (
    TRAJECTORY_COLUMNS, DynamicRun, TwoLevelParams, doppler_visibility, scattering_force, scattering_rate,
    simulate_dynamic, simulate_dynamic_trajectories, visibility_from_shift,
)
from vortexshaper.constants import D2_GAMMA, D2_WAVELENGTH, G_ACCEL, HBAR, I_SAT_REF, PER_MW_CM2, RB87_MASS

PARAMS = TwoLevelParams.along_z(D2_WAVELENGTH, D2_GAMMA, 0.0, I_SAT_REF, RB87_MASS)


def resting_atoms(positions):
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    return AtomEnsemble(positions, np.zeros((n, 3)), np.ones(n), np.tile([0.0, 1.0, 0.0], (n, 1)))


class TestScattering(unittest.TestCase):
    """Test rates, forces and visibility weights"""

    def test_rate_saturates(self):
        """Test the resonant rate approaches gamma/2 at high intensity"""
        rate = float(scattering_rate(PARAMS, 1e6 * I_SAT_REF, np.zeros(3)))
        self.assertAlmostEqual(rate / (D2_GAMMA / 2), 1.0, places=5)
        self.assertAlmostEqual(float(scattering_rate(PARAMS, I_SAT_REF, np.zeros(3))), D2_GAMMA / 4, places=3)

    def test_doppler_detunes(self):
        """Test motion along the beam lowers the scattering rate"""
        still = float(scattering_rate(PARAMS, I_SAT_REF, np.zeros(3)))
        moving = float(scattering_rate(PARAMS, I_SAT_REF, np.array([0.0, 0.0, 5.0])))
        self.assertLess(moving, still)

    def test_force_along_beam(self):
        """Test the radiation pressure points along the beam"""
        force = scattering_force(PARAMS, I_SAT_REF, np.zeros((2, 3)))
        self.assertEqual(force.shape, (2, 3))
        np.testing.assert_array_equal(force[:, :2], 0.0)
        self.assertTrue(np.all(force[:, 2] > 0))

    def test_doppler_visibility(self):
        """Test a 16 MHz imaging Doppler shift leaves about 3.4% visibility"""
        weight = float(visibility_from_shift(2 * np.pi * 16e6, 2 * np.pi * 6e6))
        self.assertAlmostEqual(weight, 0.034, delta=0.001)
        self.assertTrue(0.03 <= weight <= 0.04)

    def test_visibility_geometry(self):
        """Test only the velocity component along the imaging axis matters"""
        angle = np.deg2rad(35.0)
        velocities = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        weights = doppler_visibility(velocities, angle, D2_GAMMA)
        self.assertEqual(weights[0], 1.0)
        shift = 2 * np.pi / D2_WAVELENGTH * 10.0 * np.cos(angle)
        self.assertAlmostEqual(weights[1], float(visibility_from_shift(shift, D2_GAMMA)), places=15)


class TestDynamicRun(unittest.TestCase):
    """Test the illumination sequence"""

    def test_run_validation(self):
        """Test negative times, negative power and unknown axes are rejected"""
        with self.assertRaises(ValueError):
            DynamicRun(beta0=1.0, power=1e-3, tau_1=-1.0, tau_ill=1e-5, tau_2=0.0)
        with self.assertRaises(ValueError):
            DynamicRun(beta0=1.0, power=-1e-3, tau_1=0.0, tau_ill=1e-5, tau_2=0.0)
        with self.assertRaises(ValueError):
            DynamicRun(beta0=1.0, power=1e-3, tau_1=0.0, tau_ill=1e-5, tau_2=0.0, shaping_axis="z")

    def test_saturation_profile(self):
        """Test burger and vortex saturation profiles and the clamp"""
        points = np.array([[3e-4, 0.0, 0.0], [0.0, 2e-4, 0.0]])
        burger = DynamicRun(beta0=1e11, power=1e-3, tau_1=0.0, tau_ill=0.0, tau_2=0.0)
        vortex = DynamicRun(beta0=1e11, power=1e-3, tau_1=0.0, tau_ill=0.0, tau_2=0.0, shaping_axis="radial")
        clamped = DynamicRun(beta0=1e11, power=1e-3, tau_1=0.0, tau_ill=0.0, tau_2=0.0, max_saturation=1.0)
        np.testing.assert_allclose(burger.saturation(points), [0.0, 2.0])
        np.testing.assert_allclose(vortex.saturation(points), [4.5, 2.0])
        np.testing.assert_allclose(clamped.saturation(points), [0.0, 1.0])


class TestSimulation(unittest.TestCase):
    """Test the atom-by-atom integration"""

    def setUp(self):
        self.cloud = sample_cloud(CloudSpec(n_atoms=500, sigma0=(100e-6,) * 3, temperature=45e-6, seed=7))

    def test_ballistic_without_light(self):
        """Test atoms fall freely when the beam is off"""
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=0.0, tau_1=1.2e-3, tau_ill=35e-6, tau_2=565e-6)
        final = simulate_dynamic(self.cloud, run, PARAMS)
        t = run.total_time
        expected = self.cloud.positions + self.cloud.velocities * t
        expected[:, 1] -= 0.5 * G_ACCEL * t ** 2
        np.testing.assert_allclose(final.positions, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(final.velocities[:, 1], self.cloud.velocities[:, 1] - G_ACCEL * t, atol=1e-12)

    def test_low_saturation_push_is_quadratic(self):
        """Test the axial displacement grows as y^2 while the saturation stays small"""
        y0 = np.linspace(-100e-6, 100e-6, 21)
        atoms = resting_atoms(np.column_stack([np.zeros_like(y0), y0, np.zeros_like(y0)]))
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=5e-6, tau_1=0.0, tau_ill=10e-6, tau_2=0.0, gravity=0.0)
        self.assertLess(float(np.max(run.saturation(atoms.positions))), 0.02)
        final = simulate_dynamic(atoms, run, PARAMS)
        dz = final.positions[:, 2]
        r = np.corrcoef(y0 ** 2, dz)[0, 1]
        self.assertGreater(r ** 2, 0.999)
        np.testing.assert_allclose(final.positions[:, 1], y0, atol=1e-15)

    def test_saturated_push_velocity(self):
        """Test atoms at the clamp saturation reach about 15 m/s in 300 us"""
        atoms = resting_atoms([[0.0, 400e-6, 0.0], [0.0, -400e-6, 0.0], [50e-6, 450e-6, 0.0]])
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=1.45e-3, tau_1=0.0, tau_ill=300e-6, tau_2=0.0,
                         max_saturation=16.0)
        final = simulate_dynamic(atoms, run, PARAMS)
        self.assertAlmostEqual(float(np.max(final.velocities[:, 2])), 15.0, delta=3.0)
        # the cloud centre sits in the dark core
        centre = simulate_dynamic(resting_atoms([[0.0, 0.0, 0.0]]), replace(run, gravity=0.0), PARAMS)
        self.assertEqual(float(centre.velocities[0, 2]), 0.0)

    def test_push_bounded_by_saturated_rate(self):
        """Test no atom gains more axial momentum than hbar k gamma/2 per unit time allows"""
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=1.45e-3, tau_1=0.0, tau_ill=100e-6, tau_2=0.0)
        final = simulate_dynamic(self.cloud, run, PARAMS)
        kick = final.velocities - self.cloud.velocities
        bound = HBAR * 2 * np.pi / D2_WAVELENGTH / RB87_MASS * D2_GAMMA / 2 * run.tau_ill
        self.assertTrue(np.all(np.abs(kick[:, 2]) <= bound))
        self.assertGreater(float(np.max(kick[:, 2])), 0.0)
        np.testing.assert_array_equal(kick[:, 0], 0.0)
        np.testing.assert_allclose(kick[:, 1], -G_ACCEL * run.tau_ill, rtol=1e-9)

    def test_push_symmetric_in_x(self):
        """Test the vortex push does not tell +x from -x or one seed from another"""
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=0.4e-3, tau_1=0.0, tau_ill=35e-6, tau_2=0.0,
                         shaping_axis="radial")
        spec = CloudSpec(n_atoms=2000, sigma0=(100e-6,) * 3, temperature=45e-6, seed=7)
        first = simulate_dynamic(sample_cloud(spec), run, PARAMS)
        second = simulate_dynamic(sample_cloud(replace(spec, seed=8)), run, PARAMS)
        x, vz = first.positions[:, 0], first.velocities[:, 2]
        self.assertGreater(stats.ks_2samp(vz[x > 0], vz[x < 0]).pvalue, 1e-3)
        self.assertGreater(stats.ks_2samp(x, second.positions[:, 0]).pvalue, 1e-3)
        self.assertGreater(stats.ks_2samp(vz, second.velocities[:, 2]).pvalue, 1e-3)

    def test_energy_conserved_in_free_fall(self):
        """Test kinetic plus gravitational energy is conserved through all phases when the beam is off"""
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=0.0, tau_1=1.2e-3, tau_ill=35e-6, tau_2=565e-6)
        final = simulate_dynamic(self.cloud, run, PARAMS)

        def energy(ensemble):
            return 0.5 * np.sum(ensemble.velocities ** 2, axis=1) + G_ACCEL * ensemble.positions[:, 1]

        np.testing.assert_allclose(energy(final), energy(self.cloud), rtol=0, atol=1e-12)

    def test_independent_of_workers(self):
        """Test threaded integration reproduces the single-threaded result"""
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=0.4e-3, tau_1=0.0, tau_ill=20e-6, tau_2=0.0)
        cloud = sample_cloud(CloudSpec(n_atoms=9000, sigma0=(100e-6,) * 3, temperature=45e-6, seed=1))
        single = simulate_dynamic(cloud, run, PARAMS, workers=1)
        threaded = simulate_dynamic(cloud, run, PARAMS, workers=3)
        np.testing.assert_array_equal(single.positions, threaded.positions)

    def test_trajectories(self):
        """Test selected atoms are sampled on the dump grid through all three phases"""
        run = DynamicRun(beta0=2.2e4 * PER_MW_CM2, power=0.8e-3, tau_1=20e-6, tau_ill=30e-6, tau_2=20e-6)
        final, table = simulate_dynamic_trajectories(self.cloud, run, PARAMS, 10e-6, [0, 3, 5])
        self.assertEqual(list(table.columns), TRAJECTORY_COLUMNS)
        self.assertEqual(sorted(table['atom_id'].unique()), [0, 3, 5])
        times = table[table['atom_id'] == 3]['t'].to_numpy()
        np.testing.assert_allclose(times, np.arange(0, 71e-6, 10e-6), atol=1e-12)
        last = table[(table['atom_id'] == 3)].iloc[-1]
        self.assertAlmostEqual(last['z'], final.positions[3, 2], places=12)
        plain = simulate_dynamic(self.cloud, run, PARAMS)
        np.testing.assert_allclose(final.positions, plain.positions, rtol=0, atol=1e-12)

    def test_dump_interval_validation(self):
        """Test a non-positive dump interval is rejected"""
        run = DynamicRun(beta0=1.0, power=0.0, tau_1=0.0, tau_ill=1e-6, tau_2=0.0)
        with self.assertRaises(ValueError):
            simulate_dynamic_trajectories(self.cloud, run, PARAMS, 0.0, [0])


if __name__ == '__main__':
    unittest.main()
