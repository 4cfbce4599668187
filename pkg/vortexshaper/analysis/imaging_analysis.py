"""
Imaging Analysis
Synthetic absorption imaging along the tilted camera axis, Lambert-Beer inversion,
and the fits that turn images and width series into beam and atom parameters
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import gaussian_filter

from vortexshaper.analysis.least_squares import FitResult, least_squares
from vortexshaper.atoms.cloud_model import AtomEnsemble
from vortexshaper.constants import MHZ, PER_MW_CM2, SIGMA_RB
from vortexshaper.utils.error_handler import BadReference, FitDiverged, InsufficientData, NoSignal

logger = logging.getLogger(__name__)

NOISE_MODELS = ("none", "poisson")
SIGNAL_TO_NOISE = 5.0
MIN_WINDOW_SAMPLES = 5


@dataclass(frozen=True)
class ImagingConfig:
    """
    Camera geometry and absorption-imaging parameters

    angle is measured between the shaping axis z and the imaging axis; the
    frame is n_px = (width, height) pixels of size pixel, centred on the
    origin. counts is the mean bright-frame photon count per pixel.
    """
    angle: float = np.deg2rad(35.0)
    pixel: float = 5e-6
    n_px: Tuple[int, int] = (512, 512)
    sigma_rb: float = SIGMA_RB
    noise_model: str = "none"
    noise_seed: Optional[int] = None
    counts: float = 1e4
    dark_counts: float = 0.0
    shots: int = 1
    blur: float = 0.0
    atoms_per_sample: float = 1.0

    def __post_init__(self):
        if self.pixel <= 0 or self.sigma_rb <= 0:
            raise ValueError("Pixel size and cross-section must be positive")
        if len(self.n_px) != 2 or min(self.n_px) < 1:
            raise ValueError(f"Frame must be two positive pixel counts, got {self.n_px}")
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"Unknown noise model {self.noise_model!r}")
        if self.shots < 1:
            raise ValueError("At least one shot is required")
        if self.blur < 0:
            raise ValueError("Blur width must be non-negative")


@dataclass
class AbsorptionImage:
    """Transmission frame g, bright reference b and dark frame d (counts)"""
    g: np.ndarray
    b: np.ndarray
    d: np.ndarray
    sigma_rb: float = SIGMA_RB
    nonpositive: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n2d(self) -> np.ndarray:
        return invert_absorption(self)


def pixel_axes(cfg: ImagingConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates (x~, y~); pixel n//2 is centred on the origin"""
    w, h = cfg.n_px
    return (np.arange(w) - w // 2) * cfg.pixel, (np.arange(h) - h // 2) * cfg.pixel


def _pixel_edges(n: int, pixel: float) -> np.ndarray:
    return (np.arange(n + 1) - n // 2 - 0.5) * pixel


def to_imaging_frame(points, angle: float) -> np.ndarray:
    """Rotate (x, y, z) about y into the camera frame (x~, y~, z~)"""
    points = np.asarray(points, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    return np.stack([x * c - z * s, y, x * s + z * c], axis=-1)


def from_imaging_frame(points, angle: float) -> np.ndarray:
    return to_imaging_frame(points, -angle)


def project_ensemble(ens: AtomEnsemble, cfg: ImagingConfig) -> np.ndarray:
    """
    Column density [1/m^2] of the visible atoms on the camera grid

    Each atom counts with its Doppler visibility times its bright fraction.

    Returns:
        Array of shape (height, width); rows run along y~
    """
    tilted = to_imaging_frame(ens.positions, cfg.angle)
    w, h = cfg.n_px
    weights = ens.weight * ens.bright_fraction * cfg.atoms_per_sample
    counts, _, _ = np.histogram2d(tilted[:, 1], tilted[:, 0],
                                  bins=(_pixel_edges(h, cfg.pixel), _pixel_edges(w, cfg.pixel)),
                                  weights=weights)
    outside = 1 - counts.sum() / max(weights.sum(), np.finfo(float).tiny)
    if outside > 1e-3:
        logger.warning(f"{outside:.1%} of the visible atoms fall outside the camera frame")
    return counts / cfg.pixel ** 2


def blur(n2d: np.ndarray, cfg: ImagingConfig) -> np.ndarray:
    """Gaussian blur of width cfg.blur, a stand-in for the finite imaging resolution"""
    if cfg.blur == 0:
        return n2d
    return gaussian_filter(n2d, sigma=cfg.blur / cfg.pixel, mode='constant')


def synthesize_absorption(n2d: np.ndarray, cfg: ImagingConfig,
                          rng: Optional[np.random.Generator] = None) -> AbsorptionImage:
    """
    Lambert-Beer frames for a column density, G - D = (B - D) exp(-sigma n2d)

    With the poisson noise model every shot draws photon noise on G and B and
    the frames are averaged over cfg.shots.
    """
    n2d = np.asarray(n2d, dtype=float)
    if np.any(n2d < 0):
        raise ValueError("Column density must be non-negative")
    dark = np.full(n2d.shape, cfg.dark_counts)
    bright = np.full(n2d.shape, cfg.dark_counts + cfg.counts)
    transmitted = dark + cfg.counts * np.exp(-cfg.sigma_rb * n2d)
    if cfg.noise_model == "none":
        return AbsorptionImage(transmitted, bright, dark, cfg.sigma_rb)

    rng = rng or np.random.default_rng(cfg.noise_seed)
    shots = [AbsorptionImage(rng.poisson(transmitted).astype(float), rng.poisson(bright).astype(float),
                             dark.copy(), cfg.sigma_rb)
             for _ in range(cfg.shots)]
    return average_frames(shots)


def average_frames(images: Sequence[AbsorptionImage]) -> AbsorptionImage:
    """Frame-stack mean of repeated shots"""
    if not images:
        raise ValueError("No frames to average")
    return AbsorptionImage(np.mean([im.g for im in images], axis=0),
                           np.mean([im.b for im in images], axis=0),
                           np.mean([im.d for im in images], axis=0),
                           images[0].sigma_rb)


def invert_absorption(img: AbsorptionImage) -> np.ndarray:
    """
    n2d = -ln((G - D)/(B - D)) / sigma_Rb

    Pixels with G - D <= 0 are set to NaN and flagged in img.nonpositive.

    Raises:
        BadReference: B - D <= 0 in any pixel
    """
    reference = img.b - img.d
    if np.any(reference <= 0):
        raise BadReference(f"Reference frame not above dark level in {int(np.sum(reference <= 0))} pixels")
    signal = img.g - img.d
    mask = signal <= 0
    img.nonpositive = mask
    if np.any(mask):
        logger.warning(f"Non-positive transmission in {int(mask.sum())} pixels; flagged and set to NaN")
    with np.errstate(divide='ignore', invalid='ignore'):
        n2d = -np.log(signal / reference) / img.sigma_rb
    n2d[mask] = np.nan
    return n2d


def _gaussian_profile(params: np.ndarray, u: np.ndarray) -> np.ndarray:
    offset, amplitude, centre, width = params
    return offset + amplitude * np.exp(-0.5 * ((u - centre) / width) ** 2)


def fit_profile(n2d: np.ndarray, pixel: float, axis: str = "y") -> FitResult:
    """
    Gaussian fit of the column density integrated across the other image axis

    Params of the result are (offset, amplitude, centre [m], width [m]).

    Raises:
        NoSignal: peak not above 5x the background rms
    """
    profile = np.nansum(n2d, axis=1 if axis == "y" else 0) * pixel
    n = profile.size
    u = np.arange(n) - n // 2.0
    edge = max(n // 10, 2)
    background = np.concatenate([profile[:edge], profile[-edge:]])
    base = float(np.median(background))
    peak = float(np.max(profile)) - base
    if peak <= 0 or peak <= SIGNAL_TO_NOISE * float(np.std(background)):
        raise NoSignal(f"Peak {peak:.3g} not above {SIGNAL_TO_NOISE:g}x background rms")

    scale = peak
    data = (profile - base) / scale
    positive = np.clip(data, 0, None)
    centre = float(np.sum(u * positive) / np.sum(positive))
    width = float(np.sqrt(max(np.sum((u - centre) ** 2 * positive) / np.sum(positive), 0.25)))
    result = least_squares(_gaussian_profile, u, data, [0.0, 1.0, centre, width])
    result.params = np.array([base + scale * result.params[0], scale * result.params[1],
                              pixel * result.params[2], pixel * abs(result.params[3])])
    factors = np.array([scale, scale, pixel, pixel])
    result.covariance = result.covariance * np.outer(factors, factors)
    return result


def extract_width(n2d: np.ndarray, pixel: float, axis: str = "y") -> float:
    """Cloud width sigma along y~ (or x~) from a Gaussian fit [m]"""
    result = fit_profile(n2d, pixel, axis)
    logger.debug(f"Width along {axis}: {result.params[3] * 1e6:.3f} um after {result.n_iter} iterations")
    return float(result.params[3])


def _parabola(params: np.ndarray, u: np.ndarray) -> np.ndarray:
    return params[0] + params[1] * u + params[2] * u ** 2


def _parabola_jacobian(params: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones_like(u), u, u ** 2])


def fit_parabola_curvature(y, intensity, window: float, power: float = 1.0) -> float:
    """
    Curvature per power alpha0 from I = alpha0 P y^2 / 2 fitted within +-window of the minimum

    Raises:
        InsufficientData: fewer than five samples in the window
    """
    y = np.asarray(y, dtype=float)
    intensity = np.asarray(intensity, dtype=float)
    y_min = y[np.argmin(intensity)]
    inside = np.abs(y - y_min) <= window
    if np.count_nonzero(inside) < MIN_WINDOW_SAMPLES:
        raise InsufficientData(f"Only {np.count_nonzero(inside)} samples within the fit window")
    u = (y[inside] - y_min) / window
    data = intensity[inside]
    scale = max(float(np.max(np.abs(data))), np.finfo(float).tiny)
    result = least_squares(_parabola, u, data / scale, [0.0, 0.0, 1.0], jacobian=_parabola_jacobian)
    curvature = 2 * result.params[2] * scale / window ** 2
    return float(curvature / power)


def _rescaled(result: FitResult, factors: np.ndarray) -> FitResult:
    result.params = result.params * factors
    result.covariance = result.covariance * np.outer(factors, factors)
    return result


def _log_width(sigma0: float, strength):
    return np.log10(sigma0) - 0.5 * np.log10(1 + sigma0 ** 2 * strength)


def fit_energy_series(energies, sigmas, sigma0: float, gamma1: float, delta: float,
                      gamma: float) -> FitResult:
    """
    Fit beta0 [1/(W m^2)] of the width law to (E_ill, sigma_y) pairs on log10(sigma)

    Raises:
        InsufficientData: fewer than three points
    """
    energies = np.asarray(energies, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if energies.size < 3:
        raise InsufficientData("Energy fit needs at least three points")
    detuning = 1 + 4 * delta ** 2 / gamma ** 2

    def model(params, e):
        return _log_width(sigma0, 0.5 * gamma1 * params[0] * PER_MW_CM2 / detuning * e)

    estimates = (1 / sigmas ** 2 - 1 / sigma0 ** 2) * detuning / (0.5 * gamma1 * energies)
    guess = float(np.median(estimates[estimates > 0])) if np.any(estimates > 0) else PER_MW_CM2
    result = least_squares(model, energies, np.log10(sigmas), [guess / PER_MW_CM2])
    logger.info(f"Energy fit: beta0 = {result.params[0]:.4g} mW^-1 cm^-2")
    return _rescaled(result, np.array([PER_MW_CM2]))


def fit_detuning_series(deltas, sigmas, sigma0: float, gamma1: float, gamma: float,
                        e_ill: float) -> FitResult:
    """
    Fit (c, delta0 [rad/s], beta0 [1/(W m^2)]) of the detuning model to (delta, sigma_y) pairs

    Raises:
        InsufficientData: fewer than five points
        FitDiverged: all detunings share one sign, leaving c and delta0 degenerate
    """
    deltas = np.asarray(deltas, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if deltas.size < 5:
        raise InsufficientData("Detuning fit needs at least five points")
    if not (np.any(deltas > 0) and np.any(deltas < 0)):
        raise FitDiverged("Detuning data must span both signs of the detuning")

    def model(params, d):
        c, d0, beta0 = params
        offset = (2 * c * (d - d0 * MHZ) / gamma) ** 2
        return _log_width(sigma0, 0.5 * gamma1 * beta0 * PER_MW_CM2 * e_ill / (1 + offset))

    # 1/sigma^2 - 1/sigma0^2 is a Lorentzian in delta with HWHM gamma/(2c)
    order = np.argsort(deltas)
    excess = np.clip(1 / sigmas[order] ** 2 - 1 / sigma0 ** 2, 0, None)
    height = float(np.max(excess))
    if height <= 0:
        raise FitDiverged("No narrowing visible in the detuning series")
    d0 = float(np.sum(deltas[order] * excess) / np.sum(excess))
    hwhm = float(trapezoid(excess, deltas[order])) / (np.pi * height)
    p0 = [gamma / (2 * hwhm), d0 / MHZ, height / (0.5 * gamma1 * e_ill) / PER_MW_CM2]
    result = least_squares(model, deltas, np.log10(sigmas), p0)
    logger.info(f"Detuning fit: c = {result.params[0]:.3f}, delta0 = 2pi x {result.params[1]:.3f} MHz, "
                f"beta0 = {result.params[2]:.4g} mW^-1 cm^-2")
    return _rescaled(result, np.array([1.0, MHZ, PER_MW_CM2]))


def loglog_slope(energies, sigmas) -> float:
    """Least-squares slope of log(sigma) against log(E)"""
    energies = np.asarray(energies, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if energies.size < 2:
        raise InsufficientData("Slope needs at least two points")
    slope, _ = np.polyfit(np.log(energies), np.log(sigmas), 1)
    return float(slope)


def width_series(images: List[np.ndarray], pixel: float) -> np.ndarray:
    """sigma_x, sigma_y of each image; NaN where no signal is found"""
    widths = []
    for n2d in images:
        row = []
        for axis in ("x", "y"):
            try:
                row.append(extract_width(n2d, pixel, axis))
            except (NoSignal, FitDiverged) as e:
                logger.warning(f"Width along {axis} unavailable: {e}")
                row.append(np.nan)
        widths.append(row)
    return np.array(widths)
