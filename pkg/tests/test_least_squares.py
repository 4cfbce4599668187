"""
Least Squares Test Suite
Tests for the Levenberg-Marquardt fitter
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from vortexshaper.analysis.least_squares import least_squares, numeric_jacobian, remaining_step
from vortexshaper.utils.error_handler import FitDiverged, SingularJacobian


def exponential(params, x):
    return params[0] * np.exp(-params[1] * x)


class TestLeastSquares(unittest.TestCase):
    """Test convergence, uncertainties and failure modes"""

    def test_exact_recovery(self):
        """Test noiseless data are fitted exactly"""
        x = np.linspace(0, 4, 40)
        y = exponential([2.5, 0.7], x)
        result = least_squares(exponential, x, y, [1.0, 1.0])
        np.testing.assert_allclose(result.params, [2.5, 0.7], rtol=1e-8)
        self.assertTrue(result.converged)
        self.assertLess(result.residual_norm, 1e-8)

    def test_cost_never_increases(self):
        """Test accepted steps only lower the cost"""
        x = np.linspace(0, 4, 40)
        y = exponential([2.5, 0.7], x) + 0.01 * np.random.default_rng(0).standard_normal(40)
        result = least_squares(exponential, x, y, [0.5, 3.0])
        self.assertTrue(np.all(np.diff(result.history) <= 0))

    def test_uncertainty_scales_with_noise(self):
        """Test parameter errors follow the scatter of the data"""
        x = np.linspace(0, 4, 200)
        rng = np.random.default_rng(1)
        noisy = exponential([2.5, 0.7], x) + 0.02 * rng.standard_normal(200)
        noisier = exponential([2.5, 0.7], x) + 0.08 * rng.standard_normal(200)
        quiet = least_squares(exponential, x, noisy, [2.0, 1.0])
        loud = least_squares(exponential, x, noisier, [2.0, 1.0])
        self.assertGreater(loud.stderr[0], 2 * quiet.stderr[0])
        self.assertLess(abs(quiet.params[1] - 0.7), 5 * quiet.stderr[1])

    def test_analytic_jacobian_matches_numeric(self):
        """Test the central-difference Jacobian against the analytic one"""
        x = np.linspace(0, 2, 5)
        params = np.array([1.5, 0.3])
        numeric = numeric_jacobian(exponential, params, x)
        analytic = np.column_stack([np.exp(-0.3 * x), -1.5 * x * np.exp(-0.3 * x)])
        np.testing.assert_allclose(numeric, analytic, rtol=1e-7, atol=1e-10)

    def test_singular_jacobian(self):
        """Test a parameter the model ignores is reported"""
        x = np.linspace(0, 1, 10)
        with self.assertRaises(SingularJacobian):
            least_squares(lambda p, x: p[0] * x, x, 2 * x, [1.0, 1.0])

    def test_non_finite_data(self):
        """Test NaN data are refused"""
        x = np.linspace(0, 1, 5)
        y = np.array([1.0, np.nan, 1.0, 1.0, 1.0])
        with self.assertRaises(FitDiverged):
            least_squares(exponential, x, y, [1.0, 1.0])

    def test_iteration_budget(self):
        """Test exhausting the iteration budget raises"""
        x = np.linspace(0, 4, 40)
        y = exponential([2.5, 0.7], x)
        with self.assertRaises(FitDiverged):
            least_squares(exponential, x, y, [0.1, 5.0], max_iter=1, ftol=0.0)

    def test_reversed_jacobian_is_not_converged(self):
        """Test a Jacobian pointing uphill stalls the fit and raises instead of reporting convergence"""
        x = np.linspace(0, 4, 20)
        y = 2.5 * np.exp(-x)
        with self.assertRaises(FitDiverged):
            least_squares(lambda p, x: p[0] * np.exp(-x), x, y, [1.0],
                          jacobian=lambda p, x: -np.exp(-x)[:, None])

    def test_stall_at_minimum_converges(self):
        """Test a fit started at the least-squares optimum stops there and reports convergence"""
        x = np.linspace(0, 4, 30)
        shape = np.exp(-x)
        y = 2.0 * shape + 0.05 * np.random.default_rng(2).standard_normal(30)
        optimum = shape @ y / (shape @ shape)
        result = least_squares(lambda p, x: p[0] * np.exp(-x), x, y, [optimum],
                               jacobian=lambda p, x: np.exp(-x)[:, None], gtol=0.0)
        self.assertTrue(result.converged)
        self.assertAlmostEqual(result.params[0], optimum, places=12)
        self.assertLess(remaining_step(shape[:, None], y - result.params[0] * shape, result.params,
                                       result.residual_norm ** 2), 1.0)

    def test_to_dict(self):
        """Test the report holds plain Python values"""
        x = np.linspace(0, 4, 40)
        result = least_squares(exponential, x, exponential([2.5, 0.7], x), [2.0, 1.0])
        report = result.to_dict()
        self.assertEqual(set(report), {'params', 'stderr', 'residual_norm', 'n_iter', 'converged'})
        self.assertIsInstance(report['params'][0], float)
        self.assertIsInstance(report['converged'], bool)


if __name__ == '__main__':
    unittest.main()
