"""
Cloud Model
Thermal atom cloud: parameters, reproducible Monte-Carlo sampling and Gaussian densities
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np
from scipy import special

from vortexshaper.constants import K_B, RB87_MASS

logger = logging.getLogger(__name__)

# raw 64-bit draws reserved per atom: 3 positions + 3 velocities, padded to two Philox blocks
DRAWS_PER_ATOM = 8
SAMPLE_CHUNK = 65536


@dataclass(frozen=True)
class CloudSpec:
    """Initial thermal cloud"""
    n_atoms: int
    sigma0: Tuple[float, float, float]
    temperature: float
    atom_mass: float = RB87_MASS
    seed: int = 0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if len(self.sigma0) != 3 or any(s <= 0 for s in self.sigma0):
            raise ValueError(f"sigma0 must be three positive widths, got {self.sigma0}")
        if self.temperature < 0:
            raise ValueError(f"Temperature must be non-negative, got {self.temperature}")
        if self.atom_mass <= 0:
            raise ValueError("Atom mass must be positive")

    @property
    def sigma_v(self) -> float:
        """Thermal velocity width sqrt(kB T / m)"""
        return float(np.sqrt(K_B * self.temperature / self.atom_mass))


@dataclass
class AtomEnsemble:
    """Monte-Carlo representation of the cloud; populations are (rho11, rho22, rho_ee)"""
    positions: np.ndarray
    velocities: np.ndarray
    weight: np.ndarray
    state_pop: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        if self.positions.shape != (n, 3) or self.velocities.shape != (n, 3):
            raise ValueError("positions and velocities must have shape (N, 3)")
        if self.weight.shape != (n,) or self.state_pop.shape != (n, 3):
            raise ValueError("weight must have shape (N,) and state_pop (N, 3)")
        if np.any(self.weight <= 0) or np.any(self.weight > 1):
            raise ValueError("Visibility weights must lie in (0, 1]")
        if np.any(np.abs(self.state_pop.sum(axis=1) - 1) > 1e-12):
            raise ValueError("Per-atom populations must sum to 1")

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def bright_fraction(self) -> np.ndarray:
        """Population still coupled to the imaging light (rho22 + rho_ee)"""
        return self.state_pop[:, 1] + self.state_pop[:, 2]

    def copy(self) -> "AtomEnsemble":
        return AtomEnsemble(self.positions.copy(), self.velocities.copy(),
                            self.weight.copy(), self.state_pop.copy())

    def evolve(self, **changes) -> "AtomEnsemble":
        return replace(self, **changes)


def _standard_normals(seed: int, start: int, stop: int) -> np.ndarray:
    """
    Six standard normals per atom for atoms [start, stop)

    Every atom owns a fixed block of the Philox counter keyed by the seed, so
    the draws of atom i do not depend on how the index range is split.
    """
    # each Philox counter step yields four 64-bit words
    bit_gen = np.random.Philox(key=seed, counter=start * DRAWS_PER_ATOM // 4)
    raw = bit_gen.random_raw((stop - start) * DRAWS_PER_ATOM).reshape(stop - start, DRAWS_PER_ATOM)
    uniform = ((raw[:, :6] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return special.ndtri(uniform)


def sample_cloud(spec: CloudSpec, workers: int = 1) -> AtomEnsemble:
    """
    Sample positions ~ N(0, diag sigma0^2) and velocities ~ N(0, sigma_v^2)

    All atoms start in the upper hyperfine state with unit visibility.

    Args:
        spec: Cloud parameters
        workers: Threads used for sampling; the result is identical for any value

    Returns:
        AtomEnsemble
    """
    n = spec.n_atoms
    bounds = [(a, min(a + SAMPLE_CHUNK, n)) for a in range(0, n, SAMPLE_CHUNK)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda b: _standard_normals(spec.seed, *b), bounds))
    else:
        blocks = [_standard_normals(spec.seed, *b) for b in bounds]
    normals = np.concatenate(blocks, axis=0)

    positions = normals[:, :3] * np.asarray(spec.sigma0, dtype=float)
    velocities = normals[:, 3:] * spec.sigma_v
    state_pop = np.zeros((n, 3))
    state_pop[:, 1] = 1.0
    logger.info(f"Sampled {n} atoms (sigma0={spec.sigma0}, T={spec.temperature:.3g} K, seed={spec.seed})")
    return AtomEnsemble(positions, velocities, np.ones(n), state_pop)


def gaussian_density(spec: CloudSpec, r) -> np.ndarray:
    """Relative density exp(-sum r_i^2 / 2 sigma_i^2), unity at the origin; r has shape (..., 3)"""
    r = np.asarray(r, dtype=float)
    sigma = np.asarray(spec.sigma0, dtype=float)
    return np.exp(-0.5 * np.sum((r / sigma) ** 2, axis=-1))


def expanded_width(sigma0: float, temperature: float, mass: float, t: float) -> float:
    """Ballistic width after free expansion for time t"""
    sigma_v_sq = K_B * temperature / mass
    return float(np.sqrt(sigma0 ** 2 + sigma_v_sq * t ** 2))


def expand_spec(spec: CloudSpec, t: float) -> CloudSpec:
    """CloudSpec of the freely expanded cloud after time t"""
    widths: Sequence[float] = tuple(expanded_width(s, spec.temperature, spec.atom_mass, t) for s in spec.sigma0)
    return replace(spec, sigma0=widths)


def free_expansion_ratio(spec: CloudSpec, tau_ill: float) -> float:
    """
    tau_ill divided by the shortest crossing time sigma0_i / sigma_v

    Values far below 1 mean expansion during the illumination is negligible.
    """
    sigma_v = spec.sigma_v
    if sigma_v == 0:
        return 0.0
    return float(tau_ill * sigma_v / min(spec.sigma0))
