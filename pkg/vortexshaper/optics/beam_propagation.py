"""
Beam Propagation
Vortex and burger beam fields by FFT Fresnel propagation and by the analytic
Collins-Bessel solution, plus the parabolic-core curvature of the dark center
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from vortexshaper.analysis.least_squares import least_squares
from vortexshaper.optics.jones_optics import (
    GaussianBeam, JonesVector, VortexRetarder, X_POLARIZED,
    apply_polarizer, apply_retarder, gaussian_field,
)
from vortexshaper.utils.error_handler import (
    GridTooNarrow, NonPositiveDistance, UnsupportedOrder, UpstreamPlane,
)

logger = logging.getLogger(__name__)

EDGE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PropagationMatrix:
    """Paraxial ray-transfer (ABCD) matrix"""
    A: float
    B: float
    C: float
    D: float

    @classmethod
    def free_space(cls, distance: float) -> "PropagationMatrix":
        return cls(1.0, float(distance), 0.0, 1.0)

    @property
    def determinant(self) -> float:
        return self.A * self.D - self.B * self.C

    def __matmul__(self, other: "PropagationMatrix") -> "PropagationMatrix":
        # self acts after other
        return PropagationMatrix(
            self.A * other.A + self.B * other.C,
            self.A * other.B + self.B * other.D,
            self.C * other.A + self.D * other.C,
            self.C * other.B + self.D * other.D,
        )


@dataclass(frozen=True)
class VortexBeamModel:
    """Gaussian beam sent through an m-th order vortex retarder, optionally followed by a polarizer"""
    beam: GaussianBeam
    retarder: VortexRetarder
    polarizer_axis: Optional[float] = None

    @property
    def z_plate(self) -> float:
        return self.retarder.z_plate

    @property
    def m(self) -> int:
        return self.retarder.m

    def with_power(self, power: float) -> "VortexBeamModel":
        return replace(self, beam=self.beam.with_power(power))


@dataclass
class FieldGrid:
    """Two-component transverse field sampled on a centered nx-by-ny grid at plane z"""
    ex: np.ndarray
    ey: np.ndarray
    dx: float
    dy: float
    z: float
    wavelength: float

    def __post_init__(self):
        self.ex = np.asarray(self.ex, dtype=complex)
        self.ey = np.asarray(self.ey, dtype=complex)
        if self.ex.shape != self.ey.shape or self.ex.ndim != 2:
            raise ValueError("Field components must be 2D arrays of equal shape")
        ny, nx = self.ex.shape
        if nx < 16 or ny < 16 or nx % 2 or ny % 2:
            raise ValueError(f"Grid sizes must be even and >= 16, got {nx}x{ny}")

    @property
    def nx(self) -> int:
        return self.ex.shape[1]

    @property
    def ny(self) -> int:
        return self.ex.shape[0]

    @property
    def data(self) -> np.ndarray:
        return np.stack([self.ex, self.ey], axis=-1)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """1D x and y axes; index n/2 sits exactly on the optical axis"""
        x = (np.arange(self.nx) - self.nx // 2) * self.dx
        y = (np.arange(self.ny) - self.ny // 2) * self.dy
        return x, y

    def intensity(self) -> np.ndarray:
        return np.abs(self.ex) ** 2 + np.abs(self.ey) ** 2

    def power(self) -> float:
        return float(np.sum(self.intensity()) * self.dx * self.dy)


def _grid_axes(n: int, span: float) -> Tuple[np.ndarray, float]:
    dx = 2 * span / n
    return (np.arange(n) - n // 2) * dx, dx


def gaussian_grid(beam: GaussianBeam, n: int, span: float, z: float = 0.0,
                  polarization: JonesVector = X_POLARIZED) -> FieldGrid:
    """Sample a Gaussian beam on an n x n grid covering [-span, span)"""
    x, dx = _grid_axes(n, span)
    xx, yy = np.meshgrid(x, x)
    field = gaussian_field(beam, np.hypot(xx, yy), z)
    return FieldGrid(field * polarization.ex, field * polarization.ey, dx, dx, z, beam.wavelength)


def vortex_input_grid(model: VortexBeamModel, n: int, span: float) -> FieldGrid:
    """
    Field directly behind the retarder, sampled on an n x n grid

    The on-axis pixel is a polarization singularity and is set to zero.
    """
    x, dx = _grid_axes(n, span)
    xx, yy = np.meshgrid(x, x)
    rho = np.hypot(xx, yy)
    phi = np.arctan2(yy, xx)
    scalar = gaussian_field(model.beam, rho, model.z_plate)
    vout = apply_retarder(model.retarder, phi, X_POLARIZED)
    ex = scalar * vout.ex
    ey = scalar * vout.ey
    ex[rho == 0] = 0
    ey[rho == 0] = 0
    return FieldGrid(ex, ey, dx, dx, model.z_plate, model.beam.wavelength)


def _check_edges(grid: FieldGrid) -> None:
    magnitude = np.sqrt(grid.intensity())
    peak = magnitude.max()
    if peak == 0:
        return
    border = np.concatenate([magnitude[0, :], magnitude[-1, :], magnitude[:, 0], magnitude[:, -1]])
    edge = border.max()
    if edge >= EDGE_TOLERANCE * peak:
        raise GridTooNarrow(
            f"Edge field is {edge / peak:.2e} of peak (limit {EDGE_TOLERANCE:.0e}); widen the grid"
        )


def fresnel_transfer_function(ny: int, nx: int, dx: float, dy: float, wavelength: float,
                              dz: float, bandlimit: bool = True) -> np.ndarray:
    """
    Fresnel transfer function on an FFT frequency grid

    With bandlimit, spatial frequencies whose walk-off over dz exceeds half
    the window are zeroed, so they cannot wrap around the periodic window.
    """
    fx = sfft.fftfreq(nx, dx)
    fy = sfft.fftfreq(ny, dy)
    fxx, fyy = np.meshgrid(fx, fy)
    k = 2 * np.pi / wavelength
    h = np.exp(1j * k * dz) * np.exp(-1j * np.pi * wavelength * dz * (fxx ** 2 + fyy ** 2))
    if bandlimit:
        fx_max = 1 / (wavelength * np.sqrt((2 * dz / (nx * dx)) ** 2 + 1))
        fy_max = 1 / (wavelength * np.sqrt((2 * dz / (ny * dy)) ** 2 + 1))
        h = h * ((np.abs(fxx) <= fx_max) & (np.abs(fyy) <= fy_max))
    return h


def propagate_fresnel(grid: FieldGrid, dz: float, workers: int = 1,
                      bandlimit: bool = True) -> FieldGrid:
    """
    Propagate both Jones components by dz with the Fresnel transfer function

    The field is zero-padded to twice its linear size before transforming
    and cropped back afterwards.

    Args:
        grid: Input plane
        dz: Propagation distance [m], must be positive
        workers: FFT worker threads (1 is the bit-deterministic reference mode)
        bandlimit: Suppress frequencies that would wrap around the padded window

    Returns:
        FieldGrid at plane grid.z + dz
    """
    if dz <= 0:
        raise NonPositiveDistance(f"Propagation distance must be positive, got {dz}")
    _check_edges(grid)

    ny, nx = grid.ny, grid.nx
    if not np.any(grid.ex) and not np.any(grid.ey):
        return FieldGrid(np.zeros_like(grid.ex), np.zeros_like(grid.ey),
                         grid.dx, grid.dy, grid.z + dz, grid.wavelength)

    pad_y, pad_x = ny // 2, nx // 2
    h = fresnel_transfer_function(2 * ny, 2 * nx, grid.dx, grid.dy, grid.wavelength, dz, bandlimit)

    def _propagate(component: np.ndarray) -> np.ndarray:
        padded = np.pad(component, ((pad_y, pad_y), (pad_x, pad_x)))
        spectrum = sfft.fft2(sfft.ifftshift(padded), workers=workers)
        out = sfft.fftshift(sfft.ifft2(spectrum * h, workers=workers))
        return out[pad_y:pad_y + ny, pad_x:pad_x + nx]

    out = FieldGrid(_propagate(grid.ex), _propagate(grid.ey), grid.dx, grid.dy,
                    grid.z + dz, grid.wavelength)
    logger.debug(f"Fresnel step dz={dz:.4g} m: power {grid.power():.6g} -> {out.power():.6g}")
    return out


def _collins_terms(model: VortexBeamModel, system: PropagationMatrix):
    beam = model.beam
    zp = model.z_plate
    k = beam.k
    w_p = beam.radius(zp)
    eps = 1 / w_p ** 2 - 1j * k * beam.inverse_curvature(zp) / 2 - 1j * k * system.A / (2 * system.B)
    amplitude = beam.e0 * beam.w0 / w_p
    return k, eps, amplitude, beam.gouy(zp)


def vortex_field_analytic(model: VortexBeamModel, rho, phi, z: float,
                          system: Optional[PropagationMatrix] = None) -> JonesVector:
    """
    Analytic field of the vortex beam at (rho, phi, z)

    Evaluates the Collins integral of the retarder output in closed form. The
    modified Bessel functions enter as exp(-eta)*I_nu(eta) through the scaled
    scipy variant, which covers every order m.

    Args:
        model: Beam, retarder and optional polarizer
        rho: Radial coordinate(s) [m]
        phi: Azimuth(s) [rad]
        z: Observation plane [m]
        system: ABCD matrix from the retarder to z (free space by default)

    Returns:
        Jones field, with the polarizer applied when the model has one
    """
    zp = model.z_plate
    if z < zp:
        raise UpstreamPlane(f"Observation plane z={z} lies upstream of the retarder at {zp}")

    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    rho, phi = np.broadcast_arrays(rho, phi)

    if z == zp:
        scalar = gaussian_field(model.beam, rho, zp)
        vout = apply_retarder(model.retarder, phi, X_POLARIZED)
        field = JonesVector(scalar * vout.ex, scalar * vout.ey)
        return _maybe_polarize(model, field)

    if system is None:
        system = PropagationMatrix.free_space(z - zp)
    if system.B == 0:
        raise UnsupportedOrder(f"Closed-form Collins evaluation needs B != 0, got {system}")

    m = abs(model.m)
    k, eps, amplitude, gouy_p = _collins_terms(model, system)
    lam = model.beam.wavelength
    beta = k * rho / system.B
    eta = beta ** 2 / (8 * eps)

    # exp(-eta) I_nu(eta) = ive(nu, eta) * exp(-i Im eta), valid since Re(eta) >= 0
    phase_fix = np.exp(-1j * eta.imag)
    bessel = (special.ive((m - 1) / 2, eta) - special.ive((m + 1) / 2, eta)) * phase_fix
    radial = np.sqrt(np.pi) * beta / (8 * eps ** 1.5) * bessel

    prefactor = (-1j / (lam * system.B)) * amplitude * 2 * np.pi * (-1j) ** m
    outer = np.exp(1j * (k * z - gouy_p)) * np.exp(1j * k * system.D * rho ** 2 / (2 * system.B))
    scalar = prefactor * outer * radial
    scalar = np.where(rho == 0, 0.0 + 0j, scalar)

    field = JonesVector(scalar * np.cos(m * phi), scalar * np.sin(m * phi))
    return _maybe_polarize(model, field)


def vortex_field_quadrature(model: VortexBeamModel, rho: float, phi: float, z: float,
                            limit: int = 400) -> JonesVector:
    """
    Collins integral evaluated by radial quadrature with the Bessel J_m kernel

    Independent of the closed form; used as a numerical oracle.
    """
    zp = model.z_plate
    if z <= zp:
        raise UpstreamPlane(f"Quadrature needs z > z_plate, got z={z}, z_plate={zp}")
    m = abs(model.m)
    beam = model.beam
    L = z - zp
    k, eps, amplitude, gouy_p = _collins_terms(model, PropagationMatrix.free_space(L))
    beta = k * rho / L
    upper = 8 * beam.radius(zp)

    def _integrand(r, part):
        value = np.exp(-eps * r ** 2) * special.jv(m, beta * r) * r
        return value.real if part == 0 else value.imag

    # the integral scales as w^2, far below quad's default absolute tolerance
    re, _ = integrate.quad(_integrand, 0, upper, args=(0,), limit=limit, epsabs=0, epsrel=1e-9)
    im, _ = integrate.quad(_integrand, 0, upper, args=(1,), limit=limit, epsabs=0, epsrel=1e-9)
    prefactor = (-1j / (beam.wavelength * L)) * amplitude * 2 * np.pi * (-1j) ** m
    scalar = prefactor * np.exp(1j * (k * z - gouy_p)) * np.exp(1j * k * rho ** 2 / (2 * L)) * (re + 1j * im)
    field = JonesVector(scalar * np.cos(m * phi), scalar * np.sin(m * phi))
    return _maybe_polarize(model, field)


def _maybe_polarize(model: VortexBeamModel, field: JonesVector) -> JonesVector:
    if model.polarizer_axis is None:
        return field
    return apply_polarizer(model.polarizer_axis, field)


def vortex_field_grid(model: VortexBeamModel, n: int, span: float, z: float) -> FieldGrid:
    """Analytic field sampled on the same centered grid layout as the FFT path"""
    x, dx = _grid_axes(n, span)
    xx, yy = np.meshgrid(x, x)
    field = vortex_field_analytic(model, np.hypot(xx, yy), np.arctan2(yy, xx), z)
    return FieldGrid(np.asarray(field.ex), np.asarray(field.ey), dx, dx, z, model.beam.wavelength)


def intensity(field: JonesVector):
    """|Ex|^2 + |Ey|^2"""
    return np.abs(field.ex) ** 2 + np.abs(field.ey) ** 2


def _require_order_one(model: VortexBeamModel, z: float) -> None:
    if model.m != 1:
        raise UnsupportedOrder(f"Parabolic-core curvature is defined for m=1 only, got m={model.m}")
    if z <= model.z_plate:
        raise UpstreamPlane(f"Curvature needs z > z_plate, got z={z}, z_plate={model.z_plate}")


def curvature_analytic(model: VortexBeamModel, z: float) -> float:
    """
    Radial intensity curvature alpha [W/m^4] of the m=1 dark core at plane z

    Args:
        model: Vortex beam model (m must be 1)
        z: Observation plane, downstream of the retarder

    Returns:
        alpha such that I ~ alpha*rho^2/2 near the axis
    """
    _require_order_one(model, z)
    return model.beam.power * _curvature_per_power(model, z)


def _curvature_per_power(model: VortexBeamModel, z: float) -> float:
    beam = model.beam
    zp = model.z_plate
    L = z - zp
    z0 = beam.z0
    w_p = beam.radius(zp)
    ratio = (beam.w0 / w_p) ** 2
    bracket = (1 + (zp / z0) * (L / z0) * ratio) ** 2 + ((L / z0) * ratio) ** 2
    return np.pi / (beam.wavelength * L * w_p ** 2) * bracket ** -1.5


def curvature_simple(model: VortexBeamModel, z: float) -> float:
    """Curvature for a retarder close to the waist: pi P/(lambda L w0^2) [1+(z^2-z'^2)/z0^2]^(-3/2)"""
    _require_order_one(model, z)
    beam = model.beam
    zp = model.z_plate
    L = z - zp
    return np.pi * beam.power / (beam.wavelength * L * beam.w0 ** 2) * (1 + (z ** 2 - zp ** 2) / beam.z0 ** 2) ** -1.5


def parabolic_core(model: VortexBeamModel, z: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """
    Parabolic approximation of the intensity around the dark center

    Returns alpha*rho^2/2 for the vortex and alpha*u^2/2 with u the coordinate
    along the polarizer axis for the burger beam.
    """
    alpha = curvature_analytic(model, z)
    axis = model.polarizer_axis

    def core(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if axis is None:
            return 0.5 * alpha * (x ** 2 + y ** 2)
        u = x * np.cos(axis) + y * np.sin(axis)
        return 0.5 * alpha * u ** 2

    return core


def critical_radius(model: VortexBeamModel, z: float, i_c: float) -> float:
    """
    Critical distance sqrt(i_c/alpha) beyond which atoms interact with the beam

    This is the scaling radius of the cloud-shaping picture, not the root of
    the parabolic core: the core alpha*rho^2/2 is i_c/2 there.
    """
    return float(np.sqrt(i_c / curvature_analytic(model, z)))


def peak_intensity(model: VortexBeamModel, z: float, n_samples: int = 4096) -> float:
    """Maximum of the analytic intensity along a radial cut through the bright lobe"""
    rho = np.linspace(0, 4 * model.beam.radius(z), n_samples)
    phi = model.polarizer_axis if model.polarizer_axis is not None else 0.0
    return float(np.max(intensity(vortex_field_analytic(model, rho, phi, z))))


def curvature_numeric(grid: FieldGrid, window: float, axis: Optional[float] = None) -> float:
    """
    Curvature alpha fitted to the central pixels of a sampled intensity

    Fits offset + alpha*r^2/2 to all pixels with r <= window, where r is the
    distance from the axis (or the coordinate along `axis` for a burger beam).
    """
    x, y = grid.coordinates()
    xx, yy = np.meshgrid(x, y)
    if axis is None:
        r_sq = xx ** 2 + yy ** 2
        mask = r_sq <= window ** 2
    else:
        u = xx * np.cos(axis) + yy * np.sin(axis)
        v = -xx * np.sin(axis) + yy * np.cos(axis)
        r_sq = u ** 2
        mask = (np.abs(u) <= window) & (np.abs(v) <= grid.dx / 2)
    samples = grid.intensity()[mask]
    r_sq = r_sq[mask]
    scale = max(samples.max(), np.finfo(float).tiny)

    def model_fn(params, r2):
        return params[0] + 0.5 * params[1] * r2 / window ** 2

    guess = np.array([0.0, 2 * samples.max() / scale])
    result = least_squares(model_fn, r_sq, samples / scale, guess)
    return float(result.params[1] * scale / window ** 2)
