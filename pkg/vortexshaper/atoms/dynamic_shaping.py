"""
Dynamic Shaping
Scattering-force push of a free cloud by the parabolic dark core of a burger or vortex beam
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from vortexshaper.atoms.cloud_model import AtomEnsemble
from vortexshaper.constants import D2_WAVELENGTH, G_ACCEL, HBAR
from vortexshaper.utils.error_handler import IntegratorFailure

logger = logging.getLogger(__name__)

RTOL = 1e-8
ATOL = 1e-10
CHUNK_SIZE = 4096
TRAJECTORY_COLUMNS = ['atom_id', 't', 'x', 'y', 'z', 'vx', 'vy', 'vz']


@dataclass(frozen=True)
class TwoLevelParams:
    """Closed two-level transition driven by the shaping beam"""
    gamma: float
    delta: float
    i_sat: float
    k_vec: Tuple[float, float, float]
    atom_mass: float

    def __post_init__(self):
        if self.gamma <= 0 or self.i_sat <= 0:
            raise ValueError("gamma and i_sat must be positive")

    @classmethod
    def along_z(cls, wavelength: float, gamma: float, delta: float, i_sat: float,
                atom_mass: float) -> "TwoLevelParams":
        return cls(gamma, delta, i_sat, (0.0, 0.0, 2 * np.pi / wavelength), atom_mass)

    @property
    def k(self) -> np.ndarray:
        return np.asarray(self.k_vec, dtype=float)


@dataclass(frozen=True)
class DynamicRun:
    """
    Shaping sequence for the dynamic scheme

    beta0 is the curvature per power of the saturation parameter, so the
    on-atom saturation is S = beta0*P*y^2/2 (burger, axis "y") or
    beta0*P*(x^2+y^2)/2 (vortex, axis "radial").
    """
    beta0: float
    power: float
    tau_1: float
    tau_ill: float
    tau_2: float
    shaping_axis: str = "y"
    gravity: float = G_ACCEL
    max_saturation: Optional[float] = None

    def __post_init__(self):
        if min(self.tau_1, self.tau_ill, self.tau_2) < 0:
            raise ValueError("Sequence times must be non-negative")
        if self.power < 0:
            raise ValueError("Power must be non-negative")
        if self.shaping_axis not in ("y", "radial"):
            raise ValueError(f"Unknown shaping axis {self.shaping_axis!r}")

    @property
    def total_time(self) -> float:
        return self.tau_1 + self.tau_ill + self.tau_2

    def saturation(self, positions: np.ndarray) -> np.ndarray:
        if self.shaping_axis == "y":
            rho_sq = positions[..., 1] ** 2
        else:
            rho_sq = positions[..., 0] ** 2 + positions[..., 1] ** 2
        s = 0.5 * self.beta0 * self.power * rho_sq
        if self.max_saturation is not None:
            s = np.minimum(s, self.max_saturation)
        return s


def scattering_rate(p: TwoLevelParams, intensity, velocity) -> np.ndarray:
    """
    Photon scattering rate with Doppler shift

    Gamma = (gamma/2) S / (1 + S + 4 (delta + k.v)^2 / gamma^2)
    """
    s = np.asarray(intensity, dtype=float) / p.i_sat
    return _rate_from_saturation(p, s, velocity)


def _rate_from_saturation(p: TwoLevelParams, s, velocity) -> np.ndarray:
    doppler = np.asarray(velocity, dtype=float) @ p.k
    detuning = p.delta + doppler
    return 0.5 * p.gamma * s / (1 + s + 4 * detuning ** 2 / p.gamma ** 2)


def scattering_force(p: TwoLevelParams, intensity, velocity) -> np.ndarray:
    """Mean radiation-pressure force hbar*k*Gamma [N], shape (..., 3)"""
    rate = scattering_rate(p, intensity, velocity)
    return HBAR * np.asarray(rate)[..., None] * p.k


def doppler_visibility(velocity, imaging_angle: float, gamma: float,
                       wavelength: float = D2_WAVELENGTH) -> np.ndarray:
    """
    Relative imaging scattering rate of moving atoms

    The imaging axis lies in the x-z plane at imaging_angle from z. The weight
    is 1/(1 + 4 delta_D^2/gamma^2) with delta_D = k_img * v_parallel.
    """
    axis = np.array([np.sin(imaging_angle), 0.0, np.cos(imaging_angle)])
    delta_d = 2 * np.pi / wavelength * (np.asarray(velocity, dtype=float) @ axis)
    return visibility_from_shift(delta_d, gamma)


def visibility_from_shift(delta_d, gamma: float):
    return 1.0 / (1.0 + 4 * np.asarray(delta_d, dtype=float) ** 2 / gamma ** 2)


def _ballistic(positions: np.ndarray, velocities: np.ndarray, t: float,
               gravity: float) -> Tuple[np.ndarray, np.ndarray]:
    g = np.array([0.0, gravity, 0.0])
    return positions + velocities * t - 0.5 * g * t ** 2, velocities - g * t


def _illuminate_chunk(positions: np.ndarray, velocities: np.ndarray, run: DynamicRun,
                      p: TwoLevelParams, t_eval: Optional[np.ndarray] = None):
    n = len(positions)
    g = np.array([0.0, -run.gravity, 0.0])
    recoil = HBAR * p.k / p.atom_mass

    def rhs(_t, state):
        pos = state[:3 * n].reshape(n, 3)
        vel = state[3 * n:].reshape(n, 3)
        rate = _rate_from_saturation(p, run.saturation(pos), vel)
        acc = rate[:, None] * recoil + g
        return np.concatenate([vel.ravel(), acc.ravel()])

    y0 = np.concatenate([positions.ravel(), velocities.ravel()])
    n_samples = 0
    grid = None
    if t_eval is not None:
        # dense-output samples do not alter the step sequence; the end point is always appended
        n_samples = len(t_eval)
        grid = np.append(t_eval[t_eval < run.tau_ill], run.tau_ill)
    sol = solve_ivp(rhs, (0.0, run.tau_ill), y0, method='RK45', rtol=RTOL, atol=ATOL, t_eval=grid)
    if sol.status < 0:
        raise IntegratorFailure(f"RK45 failed during illumination: {sol.message}")
    logger.debug(f"Illuminated chunk of {n} atoms in {sol.nfev} RHS evaluations")
    final = sol.y[:, -1]
    samples = sol.y[:, :n_samples] if n_samples else None
    return final[:3 * n].reshape(n, 3), final[3 * n:].reshape(n, 3), samples


def _propagate(ensemble: AtomEnsemble, run: DynamicRun, p: TwoLevelParams, workers: int,
               dump_interval: Optional[float], dump_ids: Sequence[int]):
    pos, vel = _ballistic(ensemble.positions, ensemble.velocities, run.tau_1, run.gravity)
    records: List[np.ndarray] = []
    ids = np.asarray(dump_ids, dtype=int)

    sample_times = None
    if dump_interval:
        sample_times = np.arange(0.0, run.total_time + 0.5 * dump_interval, dump_interval)
        sample_times = sample_times[sample_times <= run.total_time * (1 + 1e-12)]
        for t in sample_times[sample_times <= run.tau_1]:
            sp, sv = _ballistic(ensemble.positions[ids], ensemble.velocities[ids], t, run.gravity)
            records.append(_records(ids, t, sp, sv))

    if run.tau_ill > 0:
        t_eval = None
        if sample_times is not None:
            in_phase = sample_times[(sample_times > run.tau_1) & (sample_times <= run.tau_1 + run.tau_ill)]
            t_eval = in_phase - run.tau_1
        bounds = [(a, min(a + CHUNK_SIZE, len(pos))) for a in range(0, len(pos), CHUNK_SIZE)]

        def _work(b):
            return _illuminate_chunk(pos[b[0]:b[1]], vel[b[0]:b[1]], run, p, t_eval)

        if workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_work, bounds))
        else:
            results = [_work(b) for b in bounds]

        if t_eval is not None and len(t_eval) and len(ids):
            for (a, b), (_, _, samples) in zip(bounds, results):
                chunk_ids = ids[(ids >= a) & (ids < b)]
                n = b - a
                for j, t in enumerate(t_eval):
                    state = samples[:, j]
                    sp = state[:3 * n].reshape(n, 3)[chunk_ids - a]
                    sv = state[3 * n:].reshape(n, 3)[chunk_ids - a]
                    records.append(_records(chunk_ids, run.tau_1 + t, sp, sv))
        pos = np.concatenate([r[0] for r in results], axis=0)
        vel = np.concatenate([r[1] for r in results], axis=0)

    if sample_times is not None:
        t_start = run.tau_1 + run.tau_ill
        for t in sample_times[sample_times > t_start]:
            sp, sv = _ballistic(pos[ids], vel[ids], t - t_start, run.gravity)
            records.append(_records(ids, t, sp, sv))

    pos, vel = _ballistic(pos, vel, run.tau_2, run.gravity)
    return pos, vel, records


def _records(ids: np.ndarray, t: float, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    return np.column_stack([ids, np.full(len(ids), t), pos, vel])


def simulate_dynamic(ensemble: AtomEnsemble, run: DynamicRun, p: TwoLevelParams,
                     workers: int = 1) -> AtomEnsemble:
    """
    Integrate every atom through tau_1 (free fall), tau_ill (push) and tau_2 (free fall)

    Free-fall phases are evaluated in closed form. The illumination is
    integrated with adaptive RK45 over fixed-size atom chunks, so results do
    not depend on the number of workers.

    Args:
        ensemble: Initial atoms
        run: Sequence timings, power and beam curvature
        p: Transition parameters
        workers: Threads integrating chunks in parallel

    Returns:
        AtomEnsemble with final positions and velocities
    """
    pos, vel, _ = _propagate(ensemble, run, p, workers, None, ())
    logger.info(f"Dynamic run P={run.power * 1e3:.3g} mW, tau_ill={run.tau_ill * 1e6:.3g} us: "
                f"max vz={np.max(vel[:, 2]):.3g} m/s")
    return ensemble.evolve(positions=pos, velocities=vel)


def simulate_dynamic_trajectories(ensemble: AtomEnsemble, run: DynamicRun, p: TwoLevelParams,
                                  dump_interval: float, dump_ids: Sequence[int],
                                  workers: int = 1) -> Tuple[AtomEnsemble, pd.DataFrame]:
    """Same as simulate_dynamic, also sampling the selected atoms every dump_interval"""
    if dump_interval <= 0:
        raise ValueError("dump_interval must be positive")
    pos, vel, records = _propagate(ensemble, run, p, workers, dump_interval, dump_ids)
    table = np.concatenate(records, axis=0) if records else np.empty((0, len(TRAJECTORY_COLUMNS)))
    frame = pd.DataFrame(table, columns=TRAJECTORY_COLUMNS)
    frame['atom_id'] = frame['atom_id'].astype(int)
    frame = frame.sort_values(['atom_id', 't'], kind='stable').reset_index(drop=True)
    return ensemble.evolve(positions=pos, velocities=vel), frame
