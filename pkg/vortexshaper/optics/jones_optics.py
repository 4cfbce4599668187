"""
Jones Optics
Gaussian beam field, Jones vectors, vortex retarder and polarizer transforms
"""
import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[float, complex, np.ndarray]


@dataclass(frozen=True)
class GaussianBeam:
    """Fundamental Gaussian beam with its waist at z = 0 (SI units)"""
    w0: float
    wavelength: float
    power: float = 0.0
    e0: Optional[complex] = None

    def __post_init__(self):
        if self.w0 <= 0:
            raise ValueError(f"Beam waist must be positive, got {self.w0}")
        if self.wavelength <= 0:
            raise ValueError(f"Wavelength must be positive, got {self.wavelength}")
        if self.power < 0:
            raise ValueError(f"Beam power must be non-negative, got {self.power}")
        if self.e0 is None:
            object.__setattr__(self, "e0", complex(np.sqrt(2.0 * self.power / (np.pi * self.w0 ** 2))))

    @classmethod
    def from_power(cls, w0: float, wavelength: float, power: float) -> "GaussianBeam":
        """Beam whose peak field satisfies |E0|^2 = 2P/(pi w0^2), so that the integrated intensity equals P"""
        return cls(w0=w0, wavelength=wavelength, power=power)

    def with_power(self, power: float) -> "GaussianBeam":
        return GaussianBeam.from_power(self.w0, self.wavelength, power)

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def z0(self) -> float:
        """Rayleigh length"""
        return np.pi * self.w0 ** 2 / self.wavelength

    def radius(self, z: ArrayLike) -> ArrayLike:
        return self.w0 * np.sqrt(1 + (np.asarray(z) / self.z0) ** 2)

    def inverse_curvature(self, z: ArrayLike) -> ArrayLike:
        """1/R(z), finite everywhere (zero at the waist)"""
        z = np.asarray(z, dtype=float)
        return z / (z ** 2 + self.z0 ** 2)

    def gouy(self, z: ArrayLike) -> ArrayLike:
        return np.arctan(np.asarray(z) / self.z0)


@dataclass(frozen=True)
class JonesVector:
    """Transverse field (Ex, Ey); components may be scalars or broadcastable arrays"""
    ex: ArrayLike
    ey: ArrayLike

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(np.asarray(self.ex, dtype=complex),
                                            np.asarray(self.ey, dtype=complex)), axis=-1)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "JonesVector":
        arr = np.asarray(arr, dtype=complex)
        return cls(arr[..., 0], arr[..., 1])

    def norm(self) -> ArrayLike:
        return np.sqrt(np.abs(self.ex) ** 2 + np.abs(self.ey) ** 2)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ex)) and np.all(np.isfinite(self.ey)))


@dataclass(frozen=True)
class VortexRetarder:
    """Half-wave plate whose fast axis winds as m*phi/2"""
    m: int
    z_plate: float = 0.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"Retarder order must be an integer >= 1, got {self.m}")


X_POLARIZED = JonesVector(1.0 + 0j, 0.0 + 0j)


def gaussian_field(beam: GaussianBeam, rho: ArrayLike, z: ArrayLike) -> ArrayLike:
    """
    Scalar Gaussian field at radius rho and axial position z

    The wavefront term k*rho^2/(2R) is evaluated as k*rho^2*z/(2(z^2+z0^2)),
    which stays finite at the waist.

    Args:
        beam: Beam parameters
        rho: Radial coordinate [m]
        z: Axial position relative to the waist [m]

    Returns:
        Complex field amplitude
    """
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    w = beam.radius(z)
    phase = beam.k * z + beam.k * rho ** 2 * beam.inverse_curvature(z) / 2 - beam.gouy(z)
    return beam.e0 * (beam.w0 / w) * np.exp(-rho ** 2 / w ** 2) * np.exp(1j * phase)


def retarder_jones(theta: ArrayLike) -> np.ndarray:
    """
    Jones matrix of a half-wave plate with fast axis at angle theta

    Returns:
        Array of shape (..., 2, 2): [[cos 2t, sin 2t], [sin 2t, -cos 2t]]
    """
    theta = np.asarray(theta, dtype=float)
    c = np.cos(2 * theta)
    s = np.sin(2 * theta)
    row0 = np.stack([c, s], axis=-1)
    row1 = np.stack([s, -c], axis=-1)
    return np.stack([row0, row1], axis=-2).astype(complex)


def _apply_matrix(matrix: np.ndarray, vin: JonesVector) -> JonesVector:
    out = np.einsum('...ij,...j->...i', matrix, vin.as_array())
    return JonesVector.from_array(out)


def apply_retarder(vr: VortexRetarder, phi: ArrayLike, vin: JonesVector) -> JonesVector:
    """
    Field immediately behind the vortex retarder at azimuth phi

    For x-polarized input the output is (cos m*phi, sin m*phi).
    """
    theta = vr.m * np.asarray(phi, dtype=float) / 2
    return _apply_matrix(retarder_jones(theta), vin)


def polarizer_jones(axis: ArrayLike) -> np.ndarray:
    """Projector onto the transmission axis (cos a, sin a)"""
    axis = np.asarray(axis, dtype=float)
    c = np.cos(axis)
    s = np.sin(axis)
    row0 = np.stack([c * c, c * s], axis=-1)
    row1 = np.stack([c * s, s * s], axis=-1)
    return np.stack([row0, row1], axis=-2).astype(complex)


def apply_polarizer(axis: ArrayLike, vin: JonesVector) -> JonesVector:
    """Linear polarizer with transmission axis at angle `axis` from x"""
    return _apply_matrix(polarizer_jones(axis), vin)
