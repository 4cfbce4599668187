"""
Imaging Analysis Test Suite
Tests for absorption-image synthesis, inversion, projection and the width and curvature fits
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from vortexshaper.analysis.imaging_analysis import (
    AbsorptionImage, ImagingConfig, average_frames, blur, extract_width, fit_detuning_series, fit_energy_series,
    fit_parabola_curvature, from_imaging_frame, invert_absorption, loglog_slope, pixel_axes,
    project_ensemble, synthesize_absorption, to_imaging_frame, width_series,
)
from vortexshaper.atoms.cloud_model import AtomEnsemble
from vortexshaper.atoms.dark_state_shaping import width_vs_detuning
from vortexshaper.constants import MHZ, PER_MW_CM2, SIGMA_RB
from vortexshaper.utils.error_handler import BadReference, FitDiverged, InsufficientData, NoSignal

GAMMA = 2 * np.pi * 6.0666e6
GAMMA1 = 2 * np.pi * 3.0333e6


def gaussian_image(cfg, sigma_x, sigma_y, peak):
    x, y = pixel_axes(cfg)
    xx, yy = np.meshgrid(x, y)
    return peak * np.exp(-0.5 * (xx / sigma_x) ** 2 - 0.5 * (yy / sigma_y) ** 2)


class TestAbsorptionImaging(unittest.TestCase):
    """Test Lambert-Beer synthesis and inversion"""

    def setUp(self):
        self.cfg = ImagingConfig(pixel=5e-6, n_px=(128, 96), dark_counts=100.0)
        # peak optical depth of about one
        self.n2d = gaussian_image(self.cfg, 80e-6, 60e-6, 1.0 / SIGMA_RB)

    def test_blur_spreads_a_point(self):
        """Test the resolution blur conserves atom number and sets the width of a point source"""
        cfg = ImagingConfig(pixel=5e-6, n_px=(64, 64), blur=10e-6)
        point = np.zeros((64, 64))
        point[32, 32] = 1.0
        blurred = blur(point, cfg)
        self.assertAlmostEqual(blurred.sum(), 1.0, places=6)
        offsets = np.arange(64) - 32
        variance_px = float(np.sum(blurred.sum(axis=0) * offsets ** 2))
        self.assertAlmostEqual(variance_px, 4.0, delta=0.01)
        self.assertIs(blur(point, ImagingConfig(pixel=5e-6, n_px=(64, 64))), point)

    def test_noiseless_inversion_is_exact(self):
        """Test inverting noiseless frames recovers the column density"""
        frames = synthesize_absorption(self.n2d, self.cfg)
        recovered = invert_absorption(frames)
        np.testing.assert_allclose(recovered, self.n2d, rtol=1e-12, atol=1e-12 * self.n2d.max())
        self.assertFalse(frames.nonpositive.any())

    def test_poisson_noise_averages_down(self):
        """Test averaging shots reduces the photon noise of the inversion"""
        one = ImagingConfig(pixel=5e-6, n_px=(128, 96), noise_model="poisson", shots=1)
        many = ImagingConfig(pixel=5e-6, n_px=(128, 96), noise_model="poisson", shots=16)
        err_one = np.nanstd(invert_absorption(synthesize_absorption(self.n2d, one, np.random.default_rng(1)))
                            - self.n2d)
        err_many = np.nanstd(invert_absorption(synthesize_absorption(self.n2d, many, np.random.default_rng(1)))
                             - self.n2d)
        self.assertLess(err_many, 0.5 * err_one)

    def test_seeded_noise_is_reproducible(self):
        """Test the same generator seed produces identical noisy frames"""
        cfg = ImagingConfig(pixel=5e-6, n_px=(32, 32), noise_model="poisson", shots=2)
        n2d = gaussian_image(cfg, 30e-6, 30e-6, 1.0 / SIGMA_RB)
        a = synthesize_absorption(n2d, cfg, np.random.default_rng(4))
        b = synthesize_absorption(n2d, cfg, np.random.default_rng(4))
        np.testing.assert_array_equal(a.g, b.g)

    def test_negative_density_rejected(self):
        """Test negative column densities cannot be imaged"""
        with self.assertRaises(ValueError):
            synthesize_absorption(-self.n2d, self.cfg)

    def test_bad_reference(self):
        """Test a reference frame at the dark level is reported"""
        frame = np.full((4, 4), 10.0)
        with self.assertRaises(BadReference):
            invert_absorption(AbsorptionImage(frame, frame.copy(), frame.copy()))

    def test_nonpositive_transmission_flagged(self):
        """Test pixels with G <= D become NaN and are flagged"""
        g = np.array([[50.0, 5.0]])
        img = AbsorptionImage(g, np.full((1, 2), 100.0), np.full((1, 2), 10.0))
        n2d = invert_absorption(img)
        self.assertTrue(np.isnan(n2d[0, 1]))
        self.assertTrue(np.isfinite(n2d[0, 0]))
        np.testing.assert_array_equal(img.nonpositive, [[False, True]])

    def test_average_frames(self):
        """Test the frame average is taken per frame type"""
        a = AbsorptionImage(np.ones((2, 2)), np.full((2, 2), 4.0), np.zeros((2, 2)))
        b = AbsorptionImage(np.full((2, 2), 3.0), np.full((2, 2), 6.0), np.zeros((2, 2)))
        mean = average_frames([a, b])
        np.testing.assert_array_equal(mean.g, 2.0)
        np.testing.assert_array_equal(mean.b, 5.0)
        with self.assertRaises(ValueError):
            average_frames([])


class TestProjection(unittest.TestCase):
    """Test the tilted camera geometry"""

    def test_frame_rotation_round_trip(self):
        """Test the camera rotation is inverted by its reverse"""
        points = np.random.default_rng(0).normal(size=(10, 3))
        back = from_imaging_frame(to_imaging_frame(points, 0.6), 0.6)
        np.testing.assert_allclose(back, points, atol=1e-15)

    def test_projection_counts_atoms(self):
        """Test projected atoms keep their visible weight and land on the right pixels"""
        cfg = ImagingConfig(pixel=10e-6, n_px=(16, 16), angle=0.0, atoms_per_sample=2.0)
        positions = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 5e-4], [20e-6, -30e-6, 0.0]])
        state_pop = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.5, 0.0]])
        ens = AtomEnsemble(positions, np.zeros((3, 3)), np.array([1.0, 0.5, 1.0]), state_pop)
        n2d = project_ensemble(ens, cfg)
        self.assertEqual(n2d.shape, (16, 16))
        self.assertAlmostEqual(n2d.sum() * cfg.pixel ** 2, 2.0 * (1.0 + 0.5 + 0.5))
        # both on-axis atoms share the central pixel along the imaging axis
        self.assertAlmostEqual(n2d[8, 8] * cfg.pixel ** 2, 2.0 * 1.5)
        self.assertAlmostEqual(n2d[5, 10] * cfg.pixel ** 2, 2.0 * 0.5)


class TestWidthFits(unittest.TestCase):
    """Test Gaussian width extraction"""

    def test_planted_width(self):
        """Test a planted 209 um cloud is measured within 0.5%"""
        cfg = ImagingConfig(pixel=5e-6, n_px=(512, 512))
        n2d = gaussian_image(cfg, 180e-6, 209e-6, 1e13)
        self.assertAlmostEqual(extract_width(n2d, cfg.pixel, "y") / 209e-6, 1.0, delta=0.005)
        self.assertAlmostEqual(extract_width(n2d, cfg.pixel, "x") / 180e-6, 1.0, delta=0.005)

    def test_no_signal(self):
        """Test an empty image yields no width"""
        with self.assertRaises(NoSignal):
            extract_width(np.zeros((64, 64)), 5e-6)
        widths = width_series([np.zeros((64, 64))], 5e-6)
        self.assertTrue(np.all(np.isnan(widths)))

    def test_width_series_shape(self):
        """Test one (sigma_x, sigma_y) row per image"""
        cfg = ImagingConfig(pixel=5e-6, n_px=(128, 128))
        images = [gaussian_image(cfg, s, s, 1e13) for s in (40e-6, 60e-6)]
        widths = width_series(images, cfg.pixel)
        self.assertEqual(widths.shape, (2, 2))
        np.testing.assert_allclose(widths[:, 1], [40e-6, 60e-6], rtol=5e-3)

    def test_parabola_curvature(self):
        """Test the curvature per power of an exact parabola is recovered"""
        y = np.linspace(-50e-6, 50e-6, 201) + 3e-6
        intensity = 0.5 * 2.5e13 * 1e-3 * (y - 3e-6) ** 2 + 0.2
        alpha0 = fit_parabola_curvature(y, intensity, window=20e-6, power=1e-3)
        self.assertAlmostEqual(alpha0 / 2.5e13, 1.0, places=8)

    def test_parabola_window_too_small(self):
        """Test fewer than five samples in the window are refused"""
        y = np.linspace(-1, 1, 11)
        with self.assertRaises(InsufficientData):
            fit_parabola_curvature(y, y ** 2, window=0.15)


class TestSeriesFits(unittest.TestCase):
    """Test the energy and detuning fits of the width law"""

    def setUp(self):
        self.rng = np.random.default_rng(2024)
        self.sigma0 = 209e-6

    def _energy_law(self, energies, beta0):
        strength = 0.5 * GAMMA1 * beta0 * energies
        return self.sigma0 / np.sqrt(1 + self.sigma0 ** 2 * strength)

    def test_energy_fit_recovers_beta0(self):
        """Test beta0 is recovered within 5% from widths with 2% noise"""
        beta0 = 7.1e3 * PER_MW_CM2
        energies = np.geomspace(0.05e-9, 2.4e-9, 12)
        sigmas = self._energy_law(energies, beta0) * (1 + 0.02 * self.rng.standard_normal(energies.size))
        result = fit_energy_series(energies, sigmas, self.sigma0, GAMMA1, 0.0, GAMMA)
        self.assertAlmostEqual(result.params[0] / beta0, 1.0, delta=0.05)
        self.assertTrue(result.converged)
        self.assertEqual(len(result.to_dict()['stderr']), 1)

    def test_energy_fit_needs_points(self):
        """Test fewer than three energies are refused"""
        with self.assertRaises(InsufficientData):
            fit_energy_series([1e-9, 2e-9], [1e-4, 9e-5], self.sigma0, GAMMA1, 0.0, GAMMA)

    def test_detuning_fit_recovers_parameters(self):
        """Test (c, delta0, beta0) are recovered from a noisy detuning scan"""
        c, delta0, beta0 = 1.36, -0.13 * MHZ, 8.6e3 * PER_MW_CM2
        deltas = np.linspace(-20, 20, 81) * MHZ
        e_ill = 1.3e-9
        clean = width_vs_detuning(deltas, self.sigma0, e_ill, beta0, GAMMA1, GAMMA, c, delta0)
        sigmas = clean * (1 + 0.02 * self.rng.standard_normal(deltas.size))
        result = fit_detuning_series(deltas, sigmas, self.sigma0, GAMMA1, GAMMA, e_ill)
        fit_c, fit_delta0, fit_beta0 = result.params
        self.assertAlmostEqual(fit_c / c, 1.0, delta=0.1)
        self.assertAlmostEqual(fit_beta0 / beta0, 1.0, delta=0.1)
        self.assertAlmostEqual(fit_delta0 / MHZ, -0.13, delta=0.05)

    def test_detuning_fit_needs_both_signs(self):
        """Test a one-sided detuning scan is refused"""
        deltas = np.linspace(1, 5, 5) * MHZ
        with self.assertRaises(FitDiverged):
            fit_detuning_series(deltas, np.full(5, 1e-4), self.sigma0, GAMMA1, GAMMA, 1e-9)

    def test_loglog_slope(self):
        """Test the asymptotic slope of the width law is -1/2"""
        energies = np.geomspace(1e-6, 1e-5, 10)
        slope = loglog_slope(energies, self._energy_law(energies, 7.1e3 * PER_MW_CM2))
        self.assertAlmostEqual(slope, -0.5, delta=1e-3)
        self.assertAlmostEqual(loglog_slope([1.0, 4.0], [2.0, 1.0]), -0.5, places=12)


if __name__ == '__main__':
    unittest.main()
