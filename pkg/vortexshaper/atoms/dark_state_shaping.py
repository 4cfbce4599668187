"""
Dark State Shaping
Spatially selective optical pumping into the dark ground state and the resulting cloud widths
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from vortexshaper.atoms.cloud_model import AtomEnsemble, CloudSpec, gaussian_density
from vortexshaper.utils.error_handler import IntegratorFailure

logger = logging.getLogger(__name__)

DENSITY_MODES = ("exact", "gaussian")
# samples along the imaging axis for column densities
COLUMN_SAMPLES = 257


@dataclass(frozen=True)
class ThreeLevelParams:
    """Lambda system: bright ground state, excited state and a dark ground state reached through gamma1"""
    gamma1: float
    gamma2: float
    delta: float
    i_sat: float

    def __post_init__(self):
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("Partial decay rates must be positive")
        if self.i_sat <= 0:
            raise ValueError("Saturation intensity must be positive")

    @property
    def gamma(self) -> float:
        return self.gamma1 + self.gamma2

    @property
    def detuning_factor(self) -> float:
        return 1.0 + 4 * self.delta ** 2 / self.gamma ** 2

    @property
    def i_sat_tilde(self) -> float:
        """Saturation intensity including the detuning, I_sat (1 + 4 delta^2/gamma^2)"""
        return self.i_sat * self.detuning_factor


@dataclass(frozen=True)
class DarkPulse:
    """
    Vortex illumination pulse

    alpha0 is the curvature per power of the vortex core, I = alpha0*P*rho^2/2 [1/m^4].
    """
    power: float
    tau_ill: float
    alpha0: float

    def __post_init__(self):
        if self.power < 0 or self.tau_ill < 0 or self.alpha0 < 0:
            raise ValueError("Pulse power, duration and curvature must be non-negative")

    @classmethod
    def from_beta0(cls, power: float, tau_ill: float, beta0: float, i_sat: float) -> "DarkPulse":
        """Pulse from the resonant curvature per power of the saturation parameter, beta0 = alpha0/I_sat"""
        return cls(power, tau_ill, beta0 * i_sat)

    @classmethod
    def from_energy(cls, energy: float, tau_ill: float, alpha0: float) -> "DarkPulse":
        if tau_ill <= 0:
            raise ValueError("tau_ill must be positive to convert an energy to a power")
        return cls(energy / tau_ill, tau_ill, alpha0)

    @property
    def energy(self) -> float:
        return self.power * self.tau_ill

    def beta_tilde(self, p: ThreeLevelParams) -> float:
        return self.alpha0 / p.i_sat_tilde

    def intensity(self, r) -> np.ndarray:
        """Intensity of the vortex core at points r of shape (..., 3), uniform along z"""
        r = np.asarray(r, dtype=float)
        return 0.5 * self.alpha0 * self.power * (r[..., 0] ** 2 + r[..., 1] ** 2)


def relative_population(p: ThreeLevelParams, intensity) -> np.ndarray:
    """Steady excited fraction of the bright pair, 1/2 S / (1 + S + 4 delta^2/gamma^2)"""
    s = np.asarray(intensity, dtype=float) / p.i_sat
    return 0.5 * s / (1 + s + 4 * p.delta ** 2 / p.gamma ** 2)


def gamma_eff(p: ThreeLevelParams, intensity) -> np.ndarray:
    """Pumping rate into the dark state, (gamma1/2) S~/(1 + S~)"""
    s_tilde = np.asarray(intensity, dtype=float) / p.i_sat_tilde
    return 0.5 * p.gamma1 * s_tilde / (1 + s_tilde)


def populations_analytic(p: ThreeLevelParams, intensity, t) -> np.ndarray:
    """
    Populations (rho11, rho22, rho_ee) after illumination time t, starting in the bright state

    Returns:
        Array of shape broadcast(intensity, t) + (3,)
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Illumination time must be non-negative")
    rho_tilde = relative_population(p, intensity)
    bright = np.exp(-gamma_eff(p, intensity) * t)
    rho_tilde, bright = np.broadcast_arrays(rho_tilde, bright)
    # rho11 as the complement keeps the sum at exactly one
    rho22 = (1 - rho_tilde) * bright
    rho_ee = rho_tilde * bright
    rho11 = 1 - (rho22 + rho_ee)
    return np.stack([rho11, rho22, rho_ee], axis=-1)


def full_rate_equations(p: ThreeLevelParams, intensity: float, t, closed: bool = False) -> np.ndarray:
    """
    Integrate the three-level rate equations from (0, 1, 0)

    rho_ee' = R (rho22 - rho_ee) - gamma rho_ee
    rho22'  = -R (rho22 - rho_ee) + gamma2 rho_ee
    rho11'  = gamma1 rho_ee
    with pump rate R = (gamma/2) S / (1 + 4 delta^2/gamma^2).

    Args:
        p: Transition parameters
        intensity: Constant local intensity [W/m^2]
        t: Scalar or increasing array of output times [s]
        closed: Route the gamma1 decay back into rho22 (no dark state)

    Returns:
        Array of shape t.shape + (3,)
    """
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("Times must be non-negative and increasing")
    rate = 0.5 * p.gamma * (intensity / p.i_sat) / p.detuning_factor
    to_dark = 0.0 if closed else p.gamma1
    to_bright = p.gamma - to_dark

    def rhs(_t, y):
        rho11, rho22, rho_ee = y
        pump = rate * (rho22 - rho_ee)
        return [to_dark * rho_ee, -pump + to_bright * rho_ee, pump - p.gamma * rho_ee]

    t_end = float(times[-1])
    if t_end == 0:
        out = np.tile([0.0, 1.0, 0.0], (times.size, 1))
    else:
        sol = solve_ivp(rhs, (0.0, t_end), [0.0, 1.0, 0.0], method='Radau', t_eval=times,
                        rtol=1e-10, atol=1e-13)
        if sol.status < 0:
            raise IntegratorFailure(f"Rate equations failed: {sol.message}")
        out = sol.y.T
    return out.reshape(np.shape(t) + (3,))


def shaped_density(spec: CloudSpec, pulse: DarkPulse, p: ThreeLevelParams, r,
                   mode: str = "exact") -> np.ndarray:
    """
    Relative density after the pulse for a vortex centred on the cloud

    "exact" uses the saturating pumping rate, "gaussian" the low-saturation
    exponent (gamma1/2) S~ tau_ill.
    """
    if mode not in DENSITY_MODES:
        raise ValueError(f"Unknown density mode {mode!r}, expected one of {DENSITY_MODES}")
    intensity = pulse.intensity(r)
    if mode == "exact":
        exponent = gamma_eff(p, intensity) * pulse.tau_ill
    else:
        exponent = 0.5 * p.gamma1 * intensity / p.i_sat_tilde * pulse.tau_ill
    return gaussian_density(spec, r) * np.exp(-exponent)


def sigma_s(pulse: DarkPulse, p: ThreeLevelParams) -> float:
    """Width imprinted by the pulse alone, (gamma1/2 beta~0 E_ill)^(-1/2); infinite without light"""
    strength = 0.5 * p.gamma1 * pulse.beta_tilde(p) * pulse.energy
    return float(np.inf) if strength == 0 else float(strength ** -0.5)


def shaped_width(sigma0_i, pulse: DarkPulse, p: ThreeLevelParams):
    """Effective width along x or y, 1/sigma^2 = 1/sigma_s^2 + 1/sigma0^2"""
    sigma0_i = np.asarray(sigma0_i, dtype=float)
    strength = 0.5 * p.gamma1 * pulse.beta_tilde(p) * pulse.energy
    return sigma0_i / np.sqrt(1 + sigma0_i ** 2 * strength)


def width_vs_detuning(delta, sigma0: float, e_ill: float, beta0: float, gamma1: float,
                      gamma: float, c: float, delta0: float):
    """
    Detuning model of the shaped width with scale c and offset delta0

    sigma = sigma0 / sqrt(1 + sigma0^2 (gamma1/2) beta0 E / (1 + (2c(delta-delta0)/gamma)^2))
    """
    offset = (2 * c * (np.asarray(delta, dtype=float) - delta0) / gamma) ** 2
    return sigma0 / np.sqrt(1 + sigma0 ** 2 * 0.5 * gamma1 * beta0 * e_ill / (1 + offset))


def pump_ensemble(ensemble: AtomEnsemble, pulse: DarkPulse, p: ThreeLevelParams) -> AtomEnsemble:
    """Apply the pulse atom by atom at the ensemble's current positions"""
    pops = populations_analytic(p, pulse.intensity(ensemble.positions), pulse.tau_ill)
    bright = ensemble.bright_fraction[:, None]
    state_pop = bright * pops
    state_pop[:, 0] += ensemble.state_pop[:, 0]
    logger.info(f"Pumped {ensemble.n_atoms} atoms with E_ill={pulse.energy * 1e9:.3g} nJ: "
                f"mean bright fraction {np.mean(state_pop[:, 1] + state_pop[:, 2]):.3f}")
    return ensemble.evolve(state_pop=state_pop)


def shaped_column_density(spec: CloudSpec, pulse: DarkPulse, p: ThreeLevelParams, cfg,
                          mode: str = "exact") -> np.ndarray:
    """
    Column density of the shaped cloud on the camera grid, in units of the peak density

    The relative density is integrated along the tilted imaging axis; cfg is
    an ImagingConfig.

    Returns:
        Array of shape (h, w) [m]
    """
    from vortexshaper.analysis.imaging_analysis import from_imaging_frame, pixel_axes

    xt, yt = pixel_axes(cfg)
    half_depth = 6 * max(spec.sigma0)
    zt = np.linspace(-half_depth, half_depth, COLUMN_SAMPLES)
    X, Z = np.meshgrid(xt, zt, indexing='ij')
    column = np.empty((len(yt), len(xt)))
    # one camera row at a time bounds the sample array to (w, depth, 3)
    for row, y in enumerate(yt):
        r = from_imaging_frame(np.stack([X, np.full_like(X, y), Z], axis=-1), cfg.angle)
        column[row] = trapezoid(shaped_density(spec, pulse, p, r, mode=mode), zt, axis=-1)
    return column


def width_series(sigma0: Tuple[float, float], energies, tau_ill: float, alpha0: float,
                 p: ThreeLevelParams) -> np.ndarray:
    """(E_ill, sigma_x, sigma_y) rows of the width law over a set of pulse energies"""
    rows = []
    for energy in np.asarray(energies, dtype=float):
        pulse = DarkPulse.from_energy(energy, tau_ill, alpha0)
        rows.append((energy, shaped_width(sigma0[0], pulse, p), shaped_width(sigma0[1], pulse, p)))
    return np.array(rows)
