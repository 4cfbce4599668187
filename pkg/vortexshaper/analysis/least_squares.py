"""
Least Squares
Levenberg-Marquardt fitting with a central-difference Jacobian
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from vortexshaper.utils.error_handler import FitDiverged, SingularJacobian

logger = logging.getLogger(__name__)

Model = Callable[[np.ndarray, np.ndarray], np.ndarray]

INITIAL_DAMPING = 1e-3
DAMPING_FACTOR = 10.0
MAX_DAMPING = 1e16
ILL_CONDITIONED = 1e12
# a stopped fit is stationary when the remaining Gauss-Newton step is below
# this fraction of the parameter uncertainty, or at rounding level of the parameters
STEP_PER_STDERR = 1e-2
STEP_PER_PARAM = 1e-8


@dataclass
class FitResult:
    """Outcome of a least-squares fit"""
    params: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    n_iter: int
    converged: bool
    gradient_norm: float = 0.0
    ill_conditioned: bool = False
    history: List[float] = field(default_factory=list)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.abs(np.diag(self.covariance)))

    def to_dict(self) -> Dict:
        return {
            'params': [float(p) for p in self.params],
            'stderr': [float(s) for s in self.stderr],
            'residual_norm': float(self.residual_norm),
            'n_iter': int(self.n_iter),
            'converged': bool(self.converged),
        }


def numeric_jacobian(model: Model, params: np.ndarray, x: np.ndarray,
                     rel_step: float = 1e-6) -> np.ndarray:
    """
    Central-difference Jacobian d model / d params

    Returns:
        Array of shape (n_data, n_params)
    """
    params = np.asarray(params, dtype=float)
    columns = []
    for j in range(params.size):
        h = rel_step * max(abs(params[j]), 1e-8)
        up = params.copy()
        down = params.copy()
        up[j] += h
        down[j] -= h
        columns.append((np.ravel(model(up, x)) - np.ravel(model(down, x))) / (2 * h))
    return np.column_stack(columns)


def remaining_step(J: np.ndarray, residual: np.ndarray, params: np.ndarray, cost: float) -> float:
    """
    Largest Gauss-Newton step component left at params, in units of its tolerance

    Values <= 1 mean the point is stationary. The tolerance is the larger of
    STEP_PER_STDERR times the parameter standard error and STEP_PER_PARAM
    times the parameter itself.
    """
    step = np.linalg.lstsq(J, residual, rcond=None)[0]
    dof = max(J.shape[0] - J.shape[1], 1)
    try:
        variance = np.diag(np.linalg.inv(J.T @ J)) * (cost / dof)
    except np.linalg.LinAlgError:
        return np.inf
    tolerance = np.maximum(STEP_PER_STDERR * np.sqrt(np.abs(variance)), STEP_PER_PARAM * np.abs(params))
    tolerance = np.maximum(tolerance, np.finfo(float).tiny)
    return float(np.max(np.abs(step) / tolerance))


def least_squares(model: Model, x: np.ndarray, y: np.ndarray, p0,
                  sigma: Optional[np.ndarray] = None,
                  jacobian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
                  max_iter: int = 200, ftol: float = 1e-10, gtol: float = 1e-12) -> FitResult:
    """
    Levenberg-Marquardt minimization of sum(((y - model(p, x)) / sigma)^2)

    Damping starts at 1e-3, grows x10 on a rejected step and shrinks /10 on an
    accepted one; only steps that lower the cost are accepted. Iteration stops
    when the gradient infinity-norm drops below gtol, or when the relative cost
    change drops below ftol or no downhill step is left. The last two count as
    convergence only at a stationary point (remaining_step <= 1).

    Args:
        model: f(params, x) -> predictions with the shape of y
        x: Independent variable, passed through to the model
        y: Data
        p0: Initial parameters
        sigma: Optional per-point uncertainties
        jacobian: Optional analytic Jacobian, same signature as the model
        max_iter: Iteration budget; exceeding it raises FitDiverged, as does
            stopping away from a stationary point
        ftol: Relative cost-change tolerance
        gtol: Gradient infinity-norm tolerance

    Returns:
        FitResult with covariance scaled by the reduced chi-square
    """
    y = np.ravel(np.asarray(y, dtype=float))
    if not np.all(np.isfinite(y)):
        raise FitDiverged("Data contain non-finite values")
    weight = np.ones_like(y) if sigma is None else 1.0 / np.ravel(np.asarray(sigma, dtype=float))
    params = np.array(p0, dtype=float)
    n_par = params.size

    def _residual(p):
        return (y - np.ravel(model(p, x))) * weight

    def _jac(p):
        J = jacobian(p, x) if jacobian is not None else numeric_jacobian(model, p, x)
        return np.asarray(J, dtype=float).reshape(y.size, n_par) * weight[:, None]

    residual = _residual(params)
    cost = float(residual @ residual)
    if not np.isfinite(cost):
        raise FitDiverged("Model is not finite at the initial guess")

    J = _jac(params)
    if np.linalg.matrix_rank(J) < n_par:
        raise SingularJacobian(f"Jacobian has rank {np.linalg.matrix_rank(J)} < {n_par} parameters")

    damping = INITIAL_DAMPING
    history = [cost]
    converged = False
    stopped = None
    n_iter = 0
    grad = J.T @ residual

    while n_iter < max_iter:
        n_iter += 1
        grad = J.T @ residual
        if np.max(np.abs(grad)) < gtol:
            converged = True
            break

        hessian = J.T @ J
        diag = np.diag(np.maximum(np.diag(hessian), np.finfo(float).tiny))
        accepted = False
        while damping <= MAX_DAMPING:
            try:
                step = np.linalg.solve(hessian + damping * diag, grad)
            except np.linalg.LinAlgError:
                damping *= DAMPING_FACTOR
                continue
            trial = params + step
            trial_residual = _residual(trial)
            trial_cost = float(trial_residual @ trial_residual)
            if np.isfinite(trial_cost) and trial_cost < cost:
                accepted = True
                break
            damping *= DAMPING_FACTOR

        if not accepted:
            logger.debug(f"LM found no downhill step at cost {cost:.6g} after {n_iter} iterations")
            stopped = "no downhill step"
            break

        change = (cost - trial_cost) / max(cost, np.finfo(float).tiny)
        params, residual, cost = trial, trial_residual, trial_cost
        history.append(cost)
        damping = max(damping / DAMPING_FACTOR, 1e-15)
        logger.debug(f"LM iter {n_iter}: cost={cost:.6g} damping={damping:.1e}")
        J = _jac(params)
        if change < ftol:
            stopped = "cost change below ftol"
            break

    if stopped is None and not converged:
        raise FitDiverged(f"No convergence within {max_iter} iterations (cost {cost:.6g})")

    if stopped is not None:
        # stopping on cost alone is only convergence at a stationary point
        left = remaining_step(J, residual, params, cost)
        if left > 1.0:
            raise FitDiverged(f"Fit stopped ({stopped}) away from a minimum: gradient "
                              f"{np.max(np.abs(J.T @ residual)):.3g}, Gauss-Newton step {left:.3g} x tolerance")
        converged = True

    J = _jac(params)
    hessian = J.T @ J
    dof = max(y.size - n_par, 1)
    try:
        cond = np.linalg.cond(hessian)
        covariance = np.linalg.inv(hessian) * (cost / dof)
    except np.linalg.LinAlgError:
        cond = np.inf
        covariance = np.full((n_par, n_par), np.inf)
    ill_conditioned = bool(not np.isfinite(cond) or cond > ILL_CONDITIONED)
    if ill_conditioned:
        logger.warning(f"Fit covariance is ill-conditioned (cond={cond:.2e})")

    return FitResult(
        params=params,
        covariance=covariance,
        residual_norm=float(np.sqrt(cost)),
        n_iter=n_iter,
        converged=converged,
        gradient_norm=float(np.max(np.abs(J.T @ residual))),
        ill_conditioned=ill_conditioned,
        history=history,
    )
