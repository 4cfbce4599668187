"""
Utilities Test Suite
Tests for error mapping, sweep batching, artifact export and performance logging
"""

import unittest
import tempfile
import shutil
import json
import sys
import threading
from pathlib import Path

import numpy as np
import pandas as pd

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from vortexshaper.utils.batch_processor import BatchProcessor, ProcessingStatus
from vortexshaper.utils.error_handler import (
    ConfigError, ErrorHandler, FitDiverged, GridTooNarrow, NoSignal, NoSteadyState, UnknownFigure,
)
from vortexshaper.utils.export_manager import ExportManager, config_hash, read_pgm
from vortexshaper.utils.performance_logger import CSV_FIELDS, PerformanceLogger


class TestErrorHandler(unittest.TestCase):
    """Test exception classification"""

    def test_exit_codes(self):
        """Test the process exit code of each failure class"""
        self.assertEqual(ErrorHandler.exit_code(None), 0)
        self.assertEqual(ErrorHandler.exit_code(ConfigError("bad")), 2)
        self.assertEqual(ErrorHandler.exit_code(FitDiverged("diverged")), 3)
        self.assertEqual(ErrorHandler.exit_code(GridTooNarrow("narrow")), 3)
        self.assertEqual(ErrorHandler.exit_code(UnknownFigure("fig9")), 4)
        self.assertEqual(ErrorHandler.exit_code(RuntimeError("boom")), 3)

    def test_detect_error_type(self):
        """Test exceptions map to their message entries"""
        self.assertEqual(ErrorHandler.detect_error_type(ConfigError("x")), "config_error")
        self.assertEqual(ErrorHandler.detect_error_type(FitDiverged("x")), "fit_failed")
        self.assertEqual(ErrorHandler.detect_error_type(NoSignal("x")), "no_signal")
        self.assertEqual(ErrorHandler.detect_error_type(NoSteadyState("x")), "atomic_structure")
        self.assertEqual(ErrorHandler.detect_error_type(KeyError("x")), "general_error")

    def test_format_error_message(self):
        """Test the formatted message carries title, details and numbered suggestions"""
        message = ErrorHandler.format_error_message("config_error", "missing beam")
        self.assertTrue(message.startswith("Configuration Error:"))
        self.assertIn("missing beam", message)
        self.assertIn("1. ", message)
        self.assertEqual(ErrorHandler.get_suggestions("nonexistent"), ErrorHandler.get_suggestions("general_error"))

    def test_report_is_a_copy(self):
        """Test editing a report leaves the message table untouched"""
        report = ErrorHandler.report("no_signal", "peak 0.1 rms")
        report.suggestions.clear()
        self.assertEqual(report.technical, "Peak signal below 5x background rms: peak 0.1 rms")
        self.assertEqual(len(ErrorHandler.get_suggestions("no_signal")), 3)

    def test_config_error_location(self):
        """Test the field and line are appended to the message"""
        error = ConfigError("Value must be positive", field="beam.w0", line=7)
        self.assertEqual(str(error), "Value must be positive [field: beam.w0] [line: 7]")
        self.assertEqual(str(ConfigError("plain")), "plain")


class TestBatchProcessor(unittest.TestCase):
    """Test the sweep queue"""

    def test_points_run_in_order(self):
        """Test every point runs once, in sweep order"""
        seen = []

        def run_point(item):
            seen.append(item.value)
            return {'value': item.value * 2}

        processor = BatchProcessor(run_point)
        processor.add_points("power", [1.0, 2.0, 3.0])
        completed = processor.run()
        self.assertEqual(seen, [1.0, 2.0, 3.0])
        self.assertEqual([item.result['value'] for item in completed], [2.0, 4.0, 6.0])
        self.assertEqual(processor.get_queue_status()['completed'], 3)
        self.assertIsNone(processor.first_failure())

    def test_points_run_in_parallel(self):
        """Test several workers compute points at the same time and keep the sweep order"""
        gate = threading.Barrier(3, timeout=10)

        def run_point(item):
            gate.wait()
            return {'value': item.value}

        processor = BatchProcessor(run_point, workers=3)
        processor.add_points("power", [0.1, 0.2, 0.3])
        completed = processor.run()
        self.assertEqual([item.result['value'] for item in completed], [0.1, 0.2, 0.3])
        self.assertIsNone(processor.first_failure())

    def test_failure_is_recorded(self):
        """Test a failing point keeps its exception and the rest still run"""
        def run_point(item):
            if item.index == 1:
                raise FitDiverged("no convergence")
            return {}

        processor = BatchProcessor(run_point)
        processor.add_points("energy", [0.1, 0.2, 0.3])
        failures = []
        processor.on_item_failed = lambda item, error: failures.append(error)
        completed = processor.run()
        self.assertEqual(len(completed), 2)
        failed = processor.first_failure()
        self.assertEqual(failed.index, 1)
        self.assertIsInstance(failed.exception, FitDiverged)
        self.assertEqual(failures, ["no convergence"])
        report = processor.get_summary_report()
        self.assertEqual(report['failed'], 1)
        self.assertAlmostEqual(report['success_rate'], 200 / 3)

    def test_cancel(self):
        """Test cancelling skips the remaining points"""
        processor = BatchProcessor(lambda item: processor.cancel() or {})
        processor.add_points("tau_ill", [1.0, 2.0, 3.0])
        processor.run()
        statuses = [item.status for item in processor.queue]
        self.assertEqual(statuses, [ProcessingStatus.COMPLETED, ProcessingStatus.CANCELLED,
                                    ProcessingStatus.CANCELLED])

    def test_label(self):
        """Test the point label names parameter, index and value"""
        processor = BatchProcessor(lambda item: {})
        item = processor.add_points("power", [0.0004])[0]
        self.assertEqual(item.label, "power[0]=0.0004")


class TestExportManager(unittest.TestCase):
    """Test artifact writing"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_write_table(self):
        """Test tables are written as CSV"""
        exporter = ExportManager(str(self.temp_dir), formats=("csv",))
        path = exporter.write_table("summary.csv", [{'a': 1.0, 'b': 2.5}, {'a': 3.0, 'b': 4.5}])
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ['a', 'b'])
        self.assertEqual(frame['b'].tolist(), [2.5, 4.5])

    def test_disabled_format(self):
        """Test disabled formats write nothing"""
        exporter = ExportManager(str(self.temp_dir), formats=("csv",))
        self.assertIsNone(exporter.write_json("fit_report.json", {'a': 1}))
        self.assertIsNone(exporter.write_pgm("image.pgm", np.ones((2, 2))))
        self.assertFalse((self.temp_dir / "fit_report.json").exists())

    def test_unknown_format(self):
        """Test unknown formats are refused"""
        with self.assertRaises(ValueError):
            ExportManager(str(self.temp_dir), formats=("csv", "tiff"))

    def test_pgm(self):
        """Test PGM images scale to 16 bits and read back"""
        exporter = ExportManager(str(self.temp_dir), formats=("pgm",))
        image = np.array([[0.0, 0.5, 1.0], [np.nan, 0.25, 0.75]])
        path = exporter.write_pgm("image.pgm", image)
        data = read_pgm(path)
        self.assertEqual(data.shape, (2, 3))
        self.assertEqual(int(data[0, 2]), 65535)
        self.assertEqual(int(data[1, 0]), 0)
        self.assertEqual(int(data[0, 1]), 32768)

    def test_image_csv(self):
        """Test images are written as headerless grids"""
        exporter = ExportManager(str(self.temp_dir), formats=("csv",))
        path = exporter.write_image_csv("image.csv", np.arange(6.0).reshape(2, 3))
        grid = np.loadtxt(path, delimiter=',')
        np.testing.assert_array_equal(grid, np.arange(6.0).reshape(2, 3))

    def test_manifest(self):
        """Test the manifest lists artifacts, seed and the configuration hash"""
        exporter = ExportManager(str(self.temp_dir), formats=("csv", "json"))
        exporter.write_table("summary.csv", [{'a': 1}])
        exporter.write_json("fit_report.json", {'beta0': np.float64(1.5)})
        config = {'name': 'x', 'sweep': {'values': [1, 2]}}
        path = exporter.write_manifest(config, seed=11)
        manifest = json.loads(path.read_text())
        self.assertEqual(manifest['seed'], 11)
        self.assertEqual(manifest['artifacts'], ['fit_report.json', 'summary.csv'])
        self.assertEqual(manifest['config_sha256'], config_hash(config))
        self.assertIn('numpy', manifest['versions'])
        self.assertEqual(json.loads((self.temp_dir / "fit_report.json").read_text())['beta0'], 1.5)

    def test_config_hash_is_canonical(self):
        """Test the hash ignores key order"""
        self.assertEqual(config_hash({'a': 1, 'b': 2}), config_hash({'b': 2, 'a': 1}))
        self.assertNotEqual(config_hash({'a': 1}), config_hash({'a': 2}))

    def test_no_temporary_files_left(self):
        """Test atomic writes leave only the target behind"""
        exporter = ExportManager(str(self.temp_dir), formats=("csv",))
        exporter.write_table("summary.csv", [{'a': 1}])
        self.assertEqual(sorted(p.name for p in self.temp_dir.iterdir()), ['summary.csv'])


class TestPerformanceLogger(unittest.TestCase):
    """Test performance logging"""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_session_row(self):
        """Test a session appends one row with its point count"""
        perf = PerformanceLogger(self.temp_dir)
        perf.start_session("sweep", threads=2)
        for _ in range(3):
            perf.start_point()
            self.assertGreaterEqual(perf.end_point(), 0.0)
        perf.end_session()
        rows = perf.get_recent_stats()
        self.assertEqual(len(rows), 1)
        self.assertEqual(list(rows[0]), CSV_FIELDS)
        self.assertEqual(rows[0]['points'], '3')
        self.assertEqual(rows[0]['threads'], '2')

    def test_overlapping_points(self):
        """Test points timed under distinct keys can overlap"""
        perf = PerformanceLogger(self.temp_dir)
        perf.start_session("parallel", threads=2)
        perf.start_point(0)
        perf.start_point(1)
        self.assertGreaterEqual(perf.end_point(0), 0.0)
        self.assertGreaterEqual(perf.end_point(1), 0.0)
        self.assertEqual(perf.end_point(1), 0.0)
        perf.end_session()
        self.assertEqual(perf.get_recent_stats()[-1]['points'], '2')

    def test_empty_session(self):
        """Test a session without points writes no row"""
        perf = PerformanceLogger(self.temp_dir)
        perf.start_session("empty")
        perf.end_session()
        self.assertEqual(perf.get_recent_stats(), [])
        self.assertEqual(perf.end_point(), 0.0)


if __name__ == '__main__':
    unittest.main()
