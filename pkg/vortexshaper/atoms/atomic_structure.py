"""
Atomic Structure
Hyperfine transition strengths of the Rb-87 D2 line, optically pumped sublevel populations
and the saturation intensities that follow from them
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
import sympy
from scipy.linalg import null_space
from sympy.physics.wigner import wigner_3j, wigner_6j

from vortexshaper.constants import D_SQ_REF, I_SAT_REF, MW_PER_CM2
from vortexshaper.utils.error_handler import InvalidQuantumNumbers, NoSteadyState, ZeroCoupling

logger = logging.getLogger(__name__)

# D2 line of Rb-87: 5S1/2 -> 5P3/2, nuclear spin 3/2
J_GROUND = sympy.Rational(1, 2)
J_EXCITED = sympy.Rational(3, 2)
NUCLEAR_SPIN = sympy.Rational(3, 2)
GROUND_F = (1, 2)
EXCITED_F = (0, 1, 2, 3)
# total decay strength of any excited sublevel, (2J+1)/(2J'+1) in units of P_D2
TOTAL_DECAY = float((2 * J_GROUND + 1) / (2 * J_EXCITED + 1))
POLARIZATIONS = (1, 0, -1)


@dataclass(frozen=True)
class TransitionTable:
    """Relative strengths |<F m|e r_q|F' m+q>|^2 in units of P_D2"""
    F: int
    F_prime: int
    exact: Dict[Tuple[int, int], sympy.Rational]

    @property
    def strengths(self) -> Dict[Tuple[int, int], float]:
        return {key: float(value) for key, value in self.exact.items()}

    def strength(self, m: int, q: int) -> float:
        return float(self.exact.get((m, q), 0))

    def total(self, m: int) -> float:
        return sum(self.strength(m, q) for q in POLARIZATIONS)


@dataclass(frozen=True)
class PumpScheme:
    """Beam power fractions in sigma+, pi and sigma- light"""
    p_plus: float = 0.5
    p_zero: float = 0.0
    p_minus: float = 0.5

    def __post_init__(self):
        values = (self.p_plus, self.p_zero, self.p_minus)
        if any(v < 0 for v in values) or abs(sum(values) - 1) > 1e-12:
            raise ValueError(f"Polarization fractions must be non-negative and sum to 1, got {values}")

    def weight(self, q: int) -> float:
        return {1: self.p_plus, 0: self.p_zero, -1: self.p_minus}[q]

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p_plus, self.p_zero, self.p_minus)


@dataclass(frozen=True)
class SublevelPopulations:
    """Ground-state Zeeman populations P_m for m = -F..F"""
    F: int
    p: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if any(abs(m) > self.F for m in self.p):
            raise ValueError(f"Sublevel outside -F..F for F={self.F}")
        if any(v < 0 for v in self.p.values()):
            raise ValueError("Populations must be non-negative")
        if abs(sum(self.p.values()) - 1) > 1e-9:
            raise ValueError(f"Populations must sum to 1, got {sum(self.p.values())}")

    @classmethod
    def uniform(cls, F: int) -> "SublevelPopulations":
        return cls(F, {m: 1.0 / (2 * F + 1) for m in range(-F, F + 1)})

    @classmethod
    def stretched(cls, F: int, sign: int = 1) -> "SublevelPopulations":
        return cls(F, {sign * F: 1.0})

    @classmethod
    def from_array(cls, F: int, values) -> "SublevelPopulations":
        values = np.asarray(values, dtype=float)
        return cls(F, {m: float(v) for m, v in zip(range(-F, F + 1), values)})

    def as_array(self) -> np.ndarray:
        return np.array([self.p.get(m, 0.0) for m in range(-self.F, self.F + 1)])


def _validate(F: int, F_prime: int) -> None:
    if F not in GROUND_F or F_prime not in EXCITED_F:
        raise InvalidQuantumNumbers(f"No D2 hyperfine level F={F} -> F'={F_prime}")
    if abs(F - F_prime) > 1:
        raise InvalidQuantumNumbers(f"F={F} -> F'={F_prime} is dipole forbidden")


@lru_cache(maxsize=None)
def transition_strengths(F: int, F_prime: int) -> TransitionTable:
    """
    Exact coupling strengths from the Wigner 3-j and 6-j symbols

    |<F m|e r_q|F' m+q>|^2 = (2F'+1)(2J+1)(2F+1) {J J' 1; F' F I}^2 (F' 1 F; m+q -q -m)^2
    in units of the reduced D2 element, so that the cycling transition is 1/2.
    """
    _validate(F, F_prime)
    six_j = wigner_6j(J_GROUND, J_EXCITED, 1, F_prime, F, NUCLEAR_SPIN) ** 2
    prefactor = (2 * F_prime + 1) * (2 * J_GROUND + 1) * (2 * F + 1) * six_j
    exact = {}
    for m in range(-F, F + 1):
        for q in POLARIZATIONS:
            if abs(m + q) > F_prime:
                continue
            value = sympy.nsimplify(prefactor * wigner_3j(F_prime, 1, F, m + q, -q, -m) ** 2)
            if value != 0:
                exact[(m, q)] = value
    logger.debug(f"Strength table F={F} -> F'={F_prime}: {len(exact)} allowed components")
    return TransitionTable(F, F_prime, exact)


def average_dipole(table: TransitionTable, pops: SublevelPopulations, scheme: PumpScheme) -> float:
    """Population and polarization weighted dipole strength |d|^2 in units of P_D2"""
    return float(sum(pops.p.get(m, 0.0) * scheme.weight(q) * table.strength(m, q)
                     for m in range(-table.F, table.F + 1) for q in POLARIZATIONS))


def rate_matrix(F: int, F_prime: int, scheme: PumpScheme, loss: bool = False) -> np.ndarray:
    """
    Low-intensity optical pumping matrix dP/dt = M P over m = -F..F

    Excitation from m runs at P_q * strength(m, q); the excited sublevel m' decays
    to m'' with branching strength(m'', m'-m'') divided either by the decay
    strength within F (loss=False) or by the total decay strength, the rest
    leaving the manifold (loss=True). Rates are in units of the excitation
    rate per unit strength.
    """
    table = transition_strengths(F, F_prime)
    size = 2 * F + 1
    matrix = np.zeros((size, size))
    for m in range(-F, F + 1):
        for q in POLARIZATIONS:
            rate = scheme.weight(q) * table.strength(m, q)
            if rate == 0:
                continue
            matrix[m + F, m + F] -= rate
            m_exc = m + q
            branches = {m_out: table.strength(m_out, m_exc - m_out) for m_out in range(-F, F + 1)}
            norm = TOTAL_DECAY if loss else sum(branches.values())
            for m_out, strength in branches.items():
                matrix[m_out + F, m + F] += rate * strength / norm
    return matrix


def steady_state_populations(F: int, F_prime: int, scheme: PumpScheme, loss: bool = False,
                             initial: Optional[SublevelPopulations] = None) -> SublevelPopulations:
    """
    Stationary sublevel distribution under continuous pumping

    The fixed point is the null space of the rate matrix. A degenerate null
    space (several dark states) is resolved by projecting the initial
    populations onto it. With loss=True the slowest-decaying mode is returned,
    normalized to unit probability.

    Raises:
        NoSteadyState: the scheme couples no sublevel at all, or no
            stationary mode exists
    """
    matrix = rate_matrix(F, F_prime, scheme, loss=loss)
    if not np.any(matrix):
        raise NoSteadyState(f"Scheme {scheme.as_tuple()} couples no sublevel of F={F} -> F'={F_prime}")

    start = (initial or SublevelPopulations.uniform(F)).as_array()
    kernel = null_space(matrix)
    if kernel.shape[1] == 0:
        if not loss:
            raise NoSteadyState("Rate matrix has no stationary distribution")
        eigvals, eigvecs = np.linalg.eig(matrix)
        slowest = int(np.argmax(eigvals.real))
        vec = np.abs(eigvecs[:, slowest].real)
        logger.info(f"Manifold loss rate of the quasi-stationary mode: {-eigvals[slowest].real:.4g}")
    elif kernel.shape[1] == 1:
        vec = kernel[:, 0]
    else:
        logger.warning(f"Rate matrix is reducible ({kernel.shape[1]} stationary modes); "
                       f"steady state depends on the initial populations")
        left = null_space(matrix.T)
        vec = kernel @ np.linalg.solve(left.T @ kernel, left.T @ start)

    vec = np.clip(vec / np.sum(vec), 0.0, None)
    return SublevelPopulations.from_array(F, vec / np.sum(vec))


def saturation_intensity(dbar_sq: float) -> float:
    """I_sat = I_ref * |d_ref|^2 / |d|^2 [W/m^2], referenced to the cycling transition"""
    if dbar_sq <= 0:
        raise ZeroCoupling("Average dipole strength is zero; the light does not couple")
    return I_SAT_REF * D_SQ_REF / dbar_sq


def _populations(F: int, F_prime: int, scheme: PumpScheme, pops_mode: str) -> SublevelPopulations:
    if pops_mode == "uniform":
        return SublevelPopulations.uniform(F)
    if pops_mode == "stretched":
        return SublevelPopulations.stretched(F)
    if pops_mode == "steady_state":
        return steady_state_populations(F, F_prime, scheme)
    raise ValueError(f"Unknown population mode {pops_mode!r}")


def effective_isat(F: int, F_prime: int, scheme: PumpScheme, pops_mode: str = "steady_state") -> float:
    """Saturation intensity [W/m^2] of the transition for uniform, stretched or pumped populations"""
    table = transition_strengths(F, F_prime)
    pops = _populations(F, F_prime, scheme, pops_mode)
    return saturation_intensity(average_dipole(table, pops, scheme))


def saturation_interval(F: int, F_prime: int, scheme: PumpScheme) -> Tuple[float, float]:
    """
    Range of I_sat [W/m^2] over every ground-state population distribution

    average_dipole is linear in the populations, so the extremes sit on the
    pure sublevels. A dark sublevel makes the upper bound infinite.
    """
    table = transition_strengths(F, F_prime)
    dipoles = [average_dipole(table, SublevelPopulations(F, {m: 1.0}), scheme) for m in range(-F, F + 1)]
    upper = np.inf if min(dipoles) <= 0 else saturation_intensity(min(dipoles))
    return saturation_intensity(max(dipoles)), upper


def saturation_summary(F: int, F_prime: int, scheme: PumpScheme) -> Dict:
    """Strengths, pumped populations and I_sat values [mW/cm^2] of one transition"""
    table = transition_strengths(F, F_prime)
    summary = {
        'transition': f"F={F} -> F'={F_prime}",
        'scheme': list(scheme.as_tuple()),
        'strengths': {f"m={m},q={q:+d}": str(v) for (m, q), v in sorted(table.exact.items())},
        'i_sat_mW_cm2': {},
    }
    try:
        pops = steady_state_populations(F, F_prime, scheme)
        summary['steady_state'] = {str(m): round(v, 6) for m, v in sorted(pops.p.items())}
    except NoSteadyState as e:
        logger.warning(f"{summary['transition']}: {e}")
        summary['steady_state'] = None
    for mode in ("uniform", "stretched", "steady_state"):
        try:
            summary['i_sat_mW_cm2'][mode] = effective_isat(F, F_prime, scheme, mode) / MW_PER_CM2
        except (NoSteadyState, ZeroCoupling) as e:
            logger.warning(f"{summary['transition']} ({mode}): {e}")
            summary['i_sat_mW_cm2'][mode] = None
    low, high = saturation_interval(F, F_prime, scheme)
    summary['i_sat_interval_mW_cm2'] = [low / MW_PER_CM2, None if np.isinf(high) else high / MW_PER_CM2]
    return summary
