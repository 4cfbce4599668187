"""
Experiment Runner
Runs a configured sweep through the beam, dynamic or dark-state sequence and
writes images, widths, fits and the run manifest
"""
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from vortexshaper.analysis.imaging_analysis import (
    blur, fit_detuning_series, fit_energy_series, fit_parabola_curvature, invert_absorption,
    loglog_slope, project_ensemble, synthesize_absorption, width_series,
)
from vortexshaper.atoms.cloud_model import AtomEnsemble, CloudSpec, expand_spec, sample_cloud
from vortexshaper.atoms.dark_state_shaping import (
    DarkPulse, ThreeLevelParams, pump_ensemble, shaped_column_density, shaped_width, width_vs_detuning,
)
from vortexshaper.atoms.dynamic_shaping import (
    DynamicRun, TwoLevelParams, doppler_visibility, simulate_dynamic, simulate_dynamic_trajectories,
)
from vortexshaper.config import ExperimentConfig
from vortexshaper.constants import PER_MW_CM2
from vortexshaper.experiments.figures import SWEEP_COLUMNS, build_figure
from vortexshaper.optics.beam_propagation import (
    curvature_analytic, intensity, peak_intensity, propagate_fresnel, vortex_field_analytic,
    vortex_field_grid, vortex_input_grid,
)
from vortexshaper.optics.jones_optics import JonesVector, apply_polarizer
from vortexshaper.utils.batch_processor import BatchProcessor, SweepItem
from vortexshaper.utils.export_manager import ExportManager
from vortexshaper.utils.performance_logger import PerformanceLogger

logger = logging.getLogger(__name__)

LINESCAN_SAMPLES = 1201
PARABOLA_SAMPLES = 201
PARABOLA_WINDOW = 0.03  # of the local beam radius
# fitted-curve energies for the asymptotic slope, in units of the crossover energy
ASYMPTOTE_RANGE = (100.0, 1000.0)
# column names of state_pop in the ensemble snapshot
SNAPSHOT_POPULATIONS = ('p11', 'p22', 'pee')
CENTRAL_SLAB = 25e-6  # half-width in y of the slab counted by central_fraction


@dataclass
class RunResult:
    """Outcome of one configured run"""
    name: str
    scheme: str
    output_dir: Path
    summary: pd.DataFrame
    fit: Optional[Dict] = None
    artifacts: List[Path] = field(default_factory=list)


def peak_density(spec: CloudSpec) -> float:
    """Peak number density N / ((2 pi)^(3/2) sigma_x sigma_y sigma_z) [1/m^3]"""
    return spec.n_atoms / ((2 * np.pi) ** 1.5 * float(np.prod(spec.sigma0)))


def central_fraction(ensemble: AtomEnsemble, half_width: float = CENTRAL_SLAB) -> float:
    """Visible bright population inside the slab |y| < half_width, per sampled atom"""
    inside = np.abs(ensemble.positions[:, 1]) < half_width
    return float(np.sum((ensemble.weight * ensemble.bright_fraction)[inside]) / ensemble.n_atoms)


def _drift(ensemble: AtomEnsemble, t: float) -> AtomEnsemble:
    if t == 0:
        return ensemble
    return ensemble.evolve(positions=ensemble.positions + ensemble.velocities * t)


class ExperimentRunner:
    """
    Executes the sweep points of an ExperimentConfig, `threads` at a time

    Images and linescans are collected per point and written in sweep order
    once every point has finished.
    """

    def __init__(self, config: ExperimentConfig, threads: int = 1):
        """
        Initialize runner

        Args:
            config: Validated experiment
            threads: Sweep points run at once, and worker threads for sampling, integration
                and FFTs within a point (1 is bit-deterministic)
        """
        self.config = config
        self.threads = max(1, int(threads))
        self.exporter = ExportManager(config.output.directory, config.output.formats)
        self.perf_logger = PerformanceLogger(Path(config.output.log_dir))
        self._ensemble: Optional[AtomEnsemble] = None
        self._cloud_lock = threading.Lock()
        self._point_images: Dict[int, np.ndarray] = {}
        self._point_scans: Dict[int, pd.DataFrame] = {}
        self._image_scale: Optional[float] = None
        self.images: List[np.ndarray] = []
        self.linescans: List[pd.DataFrame] = []

    # ------------------------------------------------------------------ sweep

    def run(self) -> RunResult:
        """
        Run the sweep and write all artifacts

        Raises:
            NumericalError: the first failing sweep point's error; later points are cancelled
        """
        cfg = self.config
        processor = BatchProcessor(self._run_point, workers=self.threads)
        processor.add_points(cfg.sweep.parameter, list(cfg.sweep.values))
        processor.on_item_started = self._on_started
        processor.on_item_completed = self._on_completed
        processor.on_item_failed = lambda item, error: processor.cancel()

        logger.info(f"Running '{cfg.name}' ({cfg.sequence.scheme} scheme) -> {self.exporter.output_dir}")
        self.perf_logger.start_session(cfg.name, self.threads)
        try:
            processor.run()
        finally:
            self.perf_logger.end_session()

        failure = processor.first_failure()
        if failure is not None:
            raise failure.exception

        for index in sorted(self._point_images):
            self._write_image(index, self._point_images[index])
        self.linescans = [self._point_scans[index] for index in sorted(self._point_scans)]

        summary = pd.DataFrame([item.result for item in processor.queue])
        self.exporter.write_table("summary.csv", summary)

        fit = self._fit(summary) if cfg.fit.enabled else None
        if fit is not None:
            self.exporter.write_json("fit_report.json", fit['report'])
            self.exporter.write_table("fit_curve.csv", fit['curve'])

        if self.exporter.enabled("html"):
            self.exporter.write_html("figure.html", build_figure(cfg, summary, self.images, self.linescans,
                                                                 fit['curve'] if fit else None))

        report = processor.get_summary_report()
        self.exporter.write_manifest(cfg.resolved(), cfg.seed, extra={
            'name': cfg.name,
            'scheme': cfg.sequence.scheme,
            'sweep': {'parameter': cfg.sweep.parameter, 'values': list(cfg.sweep.values)},
            'threads': self.threads,
            'points': report['completed'],
            'fit': fit['report'] if fit else None,
        })
        logger.info(f"Run '{cfg.name}' finished: {report['completed']}/{report['total_points']} points")
        return RunResult(cfg.name, cfg.sequence.scheme, self.exporter.output_dir, summary,
                         fit['report'] if fit else None, list(self.exporter.written))

    def _on_started(self, item: SweepItem):
        logger.info(f"Sweep point {item.label}")
        self.perf_logger.start_point(item.index)

    def _on_completed(self, item: SweepItem):
        elapsed = self.perf_logger.end_point(item.index)
        logger.debug(f"Sweep point {item.label} done in {elapsed:.2f}s")

    def _run_point(self, item: SweepItem) -> Dict:
        scheme = self.config.sequence.scheme
        if scheme == "beam":
            row, image = self._beam_point(item)
        elif scheme == "dynamic":
            row, image = self._dynamic_point(item)
        else:
            row, image = self._dark_point(item)
        self._point_images[item.index] = image
        return {'index': item.index, SWEEP_COLUMNS[item.parameter]: item.value, **row}

    def _write_image(self, index: int, image: np.ndarray):
        mode = self.config.normalization
        if mode == "first":
            if self._image_scale is None:
                self._image_scale = float(np.nanmax(image)) or 1.0
            scale = self._image_scale
        elif mode == "each":
            scale = float(np.nanmax(image)) or 1.0
        else:
            scale = 1.0
        self.images.append(image)
        self.exporter.write_image_csv(f"image_{index:03d}.csv", image / scale)
        self.exporter.write_pgm(f"image_{index:03d}.pgm", image, full_scale=None if mode == "none" else scale)

    def _noise_rng(self, index: int) -> np.random.Generator:
        cfg = self.config
        seed = cfg.imaging.noise_seed if cfg.imaging.noise_seed is not None else cfg.seed
        return np.random.default_rng([seed, index])

    def _image(self, n2d: np.ndarray, index: int) -> np.ndarray:
        """Blur, synthesize absorption frames and invert them back to a measured column density"""
        cfg = self.config.imaging
        frames = synthesize_absorption(np.clip(blur(n2d, cfg), 0, None), cfg, self._noise_rng(index))
        return invert_absorption(frames)

    def _widths(self, measured: np.ndarray) -> Dict:
        sigma_x, sigma_y = width_series([measured], self.config.imaging.pixel)[0]
        return {'sigma_x_m': sigma_x, 'sigma_y_m': sigma_y}

    # ------------------------------------------------------------------- beam

    def _beam_point(self, item: SweepItem):
        settings = self.config.beam
        z = settings.z
        power = settings.power
        if item.parameter == "z_over_z0":
            z = settings.z_plate + item.value * settings.z0
        else:
            power = item.value
        model = settings.model(power)
        radius = float(model.beam.radius(z))
        span = settings.span_factor * radius
        grid = vortex_field_grid(model, settings.grid_points, span, z)
        image = grid.intensity()
        if model.polarizer_axis is not None:
            # the unpolarized vortex map accompanies every burger map
            vortex = vortex_field_grid(settings.model(power, polarized=False), settings.grid_points, span, z)
            vortex_image = vortex.intensity()
            self.exporter.write_image_csv(f"vortex_{item.index:03d}.csv",
                                          vortex_image / (float(np.max(vortex_image)) or 1.0))

        axis = settings.polarizer if settings.polarizer is not None else 0.0
        u = np.linspace(-3 * radius, 3 * radius, LINESCAN_SAMPLES)
        scan = intensity(vortex_field_analytic(model, np.abs(u), np.where(u < 0, axis + np.pi, axis), z))

        row = {'z_m': z, 'z_over_z0': (z - settings.z_plate) / settings.z0, 'power_W': power,
               'peak_intensity_W_m2': float(np.max(image)),
               'alpha_analytic_W_m4': np.nan, 'alpha_fit_W_m4': np.nan, 'alpha_rel_err': np.nan}
        parabola = np.full_like(u, np.nan)
        if model.m == 1 and z > settings.z_plate and power > 0:
            alpha = curvature_analytic(model, z)
            parabola = 0.5 * alpha * u ** 2
            window = PARABOLA_WINDOW * radius
            uf = np.linspace(-window, window, PARABOLA_SAMPLES)
            fitted = intensity(vortex_field_analytic(model, np.abs(uf), np.where(uf < 0, axis + np.pi, axis), z))
            alpha_fit = fit_parabola_curvature(uf, fitted, window, power) * power
            row.update(alpha_analytic_W_m4=alpha, alpha_fit_W_m4=alpha_fit,
                       alpha_rel_err=abs(alpha_fit - alpha) / alpha)

        if settings.fft_check and z > settings.z_plate:
            row['fft_rel_l2'] = self._fft_check(model, span, z, image)

        scan_table = pd.DataFrame({'u_m': u, 'intensity_W_m2': scan, 'parabola_W_m2': parabola})
        self._point_scans[item.index] = scan_table
        self.exporter.write_table(f"linescan_{item.index:03d}.csv", scan_table)
        logger.info(f"Beam at z={z:.4g} m: alpha={row['alpha_analytic_W_m4']:.4g} W/m^4")
        return row, image

    def _fft_check(self, model, span: float, z: float, analytic: np.ndarray) -> float:
        """Relative L2 distance between the analytic intensity and the Fresnel-propagated one"""
        settings = self.config.beam
        source = vortex_input_grid(model, settings.grid_points, span)
        grid = propagate_fresnel(source, z - model.z_plate, workers=self.threads)
        field = JonesVector(grid.ex, grid.ey)
        if model.polarizer_axis is not None:
            field = apply_polarizer(model.polarizer_axis, field)
        numeric = intensity(field)
        rel = float(np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic))
        logger.info(f"FFT check at z={z:.4g} m: relative L2 {rel:.3e}")
        return rel

    # ---------------------------------------------------------------- dynamic

    def _cloud(self) -> AtomEnsemble:
        with self._cloud_lock:
            if self._ensemble is None:
                self._ensemble = sample_cloud(self.config.cloud, workers=self.threads)
        return self._ensemble

    def _beta0(self) -> float:
        seq = self.config.sequence
        if seq.beta0 is not None:
            return seq.beta0
        return seq.alpha0 / self.config.atom.i_sat

    def _alpha0(self) -> float:
        seq = self.config.sequence
        if seq.alpha0 is not None:
            return seq.alpha0
        return seq.beta0 * self.config.atom.i_sat

    def _max_saturation(self, power: float) -> Optional[float]:
        seq = self.config.sequence
        if seq.max_saturation is not None:
            return seq.max_saturation
        if self.config.beam is None:
            return None
        model = self.config.beam.model(power)
        return peak_intensity(model, self.config.beam.z) / self.config.atom.i_sat

    def _dynamic_point(self, item: SweepItem):
        cfg = self.config
        seq = cfg.sequence
        times = {'power': seq.power, 'tau_ill': seq.tau_ill, 'tau_2': seq.tau_2}
        times[item.parameter] = item.value
        run = DynamicRun(beta0=self._beta0(), power=times['power'], tau_1=seq.tau_1, tau_ill=times['tau_ill'],
                         tau_2=times['tau_2'], shaping_axis=seq.shaping_axis,
                         max_saturation=self._max_saturation(times['power']))
        params = TwoLevelParams.along_z(cfg.atom.wavelength, cfg.atom.gamma, seq.detuning, cfg.atom.i_sat,
                                        cfg.atom.mass)
        ensemble = self._cloud()

        if cfg.output.trajectory_interval:
            ids = np.arange(min(cfg.output.trajectory_atoms, ensemble.n_atoms))
            final, trajectories = simulate_dynamic_trajectories(ensemble, run, params,
                                                                cfg.output.trajectory_interval, ids,
                                                                workers=self.threads)
            self.exporter.write_table(f"trajectory_{item.index:03d}.csv", trajectories)
        else:
            final = simulate_dynamic(ensemble, run, params, workers=self.threads)

        visibility = doppler_visibility(final.velocities, cfg.imaging.angle, cfg.atom.gamma, cfg.atom.wavelength)
        visible = final.evolve(weight=np.clip(final.weight * visibility, np.finfo(float).tiny, 1.0))
        if cfg.output.snapshot:
            self._write_snapshot(item.index, visible)

        n2d = project_ensemble(visible, cfg.imaging)
        measured = self._image(n2d, item.index)
        row = {
            'power_W': run.power, 'tau_ill_s': run.tau_ill, 'tau_2_s': run.tau_2,
            'max_saturation': run.max_saturation if run.max_saturation is not None else np.nan,
            'max_vz_m_s': float(np.max(final.velocities[:, 2])),
            'visible_fraction': float(np.sum(n2d) * cfg.imaging.pixel ** 2
                                      / (ensemble.n_atoms * cfg.imaging.atoms_per_sample)),
            'central_fraction': central_fraction(visible),
            **self._widths(measured),
        }
        return row, measured

    def _write_snapshot(self, index: int, ensemble: AtomEnsemble):
        table = pd.DataFrame({
            'atom_id': np.arange(ensemble.n_atoms),
            **{k: ensemble.positions[:, i] for i, k in enumerate(('x', 'y', 'z'))},
            **{k: ensemble.velocities[:, i] for i, k in enumerate(('vx', 'vy', 'vz'))},
            'weight': ensemble.weight,
            **{k: ensemble.state_pop[:, i] for i, k in enumerate(SNAPSHOT_POPULATIONS)},
        })
        self.exporter.write_table(f"snapshot_{index:03d}.csv", table)

    # ------------------------------------------------------------------- dark

    def _three_level(self, detuning: float) -> ThreeLevelParams:
        atom = self.config.atom
        return ThreeLevelParams(gamma1=atom.gamma1, gamma2=atom.gamma - atom.gamma1, delta=detuning,
                                i_sat=atom.i_sat)

    def _dark_pulse(self, parameter: str, value: float) -> DarkPulse:
        seq = self.config.sequence
        alpha0 = self._alpha0()
        if parameter == "energy":
            return DarkPulse.from_energy(value, seq.tau_ill, alpha0)
        if parameter == "tau_ill":
            return DarkPulse(seq.power, value, alpha0)
        if parameter == "power":
            return DarkPulse(value, seq.tau_ill, alpha0)
        return DarkPulse(seq.power, seq.tau_ill, alpha0)

    def _dark_point(self, item: SweepItem):
        cfg = self.config
        seq = cfg.sequence
        pulse = self._dark_pulse(item.parameter, item.value)
        params = self._three_level(item.value if item.parameter == "detuning" else seq.detuning)
        spec = expand_spec(cfg.cloud, seq.tau_1)

        if seq.method == "analytic":
            if seq.tau_2 > 0:
                logger.warning("Analytic dark-state images are taken at the end of the pulse; tau_2 is ignored")
            n2d = peak_density(spec) * shaped_column_density(spec, pulse, params, cfg.imaging, seq.density_mode)
            n2d = n2d * cfg.imaging.atoms_per_sample
        else:
            pumped = pump_ensemble(_drift(self._cloud(), seq.tau_1), pulse, params)
            pumped = _drift(pumped, pulse.tau_ill + seq.tau_2)
            if cfg.output.snapshot:
                self._write_snapshot(item.index, pumped)
            n2d = project_ensemble(pumped, cfg.imaging)

        measured = self._image(n2d, item.index)
        row = {
            'power_W': pulse.power, 'tau_ill_s': pulse.tau_ill, 'energy_J': pulse.energy,
            'detuning_rad_s': params.delta,
            'sigma_y_model_m': float(shaped_width(spec.sigma0[1], pulse, params)),
            **self._widths(measured),
        }
        return row, measured

    # ------------------------------------------------------------------- fits

    def _fit_sigma0(self) -> float:
        if self.config.fit.sigma0 is not None:
            return self.config.fit.sigma0
        return expand_spec(self.config.cloud, self.config.sequence.tau_1).sigma0[1]

    def _fit(self, summary: pd.DataFrame) -> Optional[Dict]:
        """Fit the width law to the measured sigma_y of a dark-state sweep"""
        cfg = self.config
        if cfg.sequence.scheme != "dark":
            logger.warning(f"No fit model for the {cfg.sequence.scheme} scheme; fit section ignored")
            return None
        valid = summary.dropna(subset=['sigma_y_m'])
        sigma0 = self._fit_sigma0()
        atom = cfg.atom

        if cfg.sweep.parameter == "detuning":
            e_ill = cfg.sequence.power * cfg.sequence.tau_ill
            result = fit_detuning_series(valid['detuning_rad_s'], valid['sigma_y_m'], sigma0, atom.gamma1,
                                         atom.gamma, e_ill)
            c, delta0, beta0 = result.params
            grid = np.linspace(valid['detuning_rad_s'].min(), valid['detuning_rad_s'].max(), 401)
            curve = pd.DataFrame({'detuning_rad_s': grid,
                                  'sigma_y_m': width_vs_detuning(grid, sigma0, e_ill, beta0, atom.gamma1,
                                                                 atom.gamma, c, delta0)})
            report = {'model': 'detuning', 'sigma0_m': sigma0, 'c': c, 'delta0_rad_s': delta0,
                      'beta0_per_W_m2': beta0, 'beta0_per_mW_cm2': beta0 / PER_MW_CM2, **result.to_dict()}
            return {'report': report, 'curve': curve}

        valid = valid[valid['energy_J'] > 0]
        energies = valid['energy_J'].to_numpy()
        sigmas = valid['sigma_y_m'].to_numpy()
        delta = cfg.sequence.detuning
        result = fit_energy_series(energies, sigmas, sigma0, atom.gamma1, delta, atom.gamma)
        beta0 = float(result.params[0])
        strength = 0.5 * atom.gamma1 * beta0 / (1 + 4 * delta ** 2 / atom.gamma ** 2)

        def law(e):
            return sigma0 / np.sqrt(1 + sigma0 ** 2 * strength * e)

        grid = np.geomspace(energies.min(), energies.max(), 401)
        crossover = 1 / (sigma0 ** 2 * strength)
        asymptote = np.geomspace(ASYMPTOTE_RANGE[0] * crossover, ASYMPTOTE_RANGE[1] * crossover, 64)
        report = {
            'model': 'energy', 'sigma0_m': sigma0, 'beta0_per_W_m2': beta0,
            'beta0_per_mW_cm2': beta0 / PER_MW_CM2,
            'crossover_energy_J': crossover,
            'loglog_slope_fit': loglog_slope(asymptote, law(asymptote)),
            **result.to_dict(),
        }
        high = energies >= np.median(energies)
        if np.count_nonzero(high) >= 2:
            report['loglog_slope_data'] = loglog_slope(energies[high], sigmas[high])
        logger.info(f"Width-law fit: beta0 = {report['beta0_per_mW_cm2']:.4g} mW^-1 cm^-2, "
                    f"asymptotic slope {report['loglog_slope_fit']:.3f}")
        return {'report': report, 'curve': pd.DataFrame({'energy_J': grid, 'sigma_y_m': law(grid)})}


def run_experiment(config: ExperimentConfig, threads: int = 1) -> RunResult:
    """Run one configured experiment"""
    return ExperimentRunner(config, threads).run()
