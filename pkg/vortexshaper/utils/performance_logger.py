"""
Performance Logger - Appends wall time and resource usage of each run to a CSV log
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Hashable, List, Optional

import psutil

logger = logging.getLogger(__name__)

LOG_NAME = "performance_log.csv"

CSV_FIELDS = [
    'timestamp',
    'run_name',
    'points',
    'total_time',
    'avg_point_time',
    'max_point_time',
    'min_point_time',
    'cpu_usage',
    'memory_usage_mb',
    'threads',
]


@dataclass
class RunSession:
    run_name: str
    threads: int
    started: float = field(default_factory=time.perf_counter)
    point_times: List[float] = field(default_factory=list)

    def row(self, cpu_usage: float, memory_mb: float) -> List:
        times = self.point_times
        return [
            datetime.now().isoformat(),
            self.run_name,
            len(times),
            f"{time.perf_counter() - self.started:.3f}",
            f"{sum(times) / len(times):.3f}",
            f"{max(times):.3f}",
            f"{min(times):.3f}",
            f"{cpu_usage:.1f}",
            f"{memory_mb:.1f}",
            self.threads,
        ]


class PerformanceLogger:
    """
    One CSV row per finished run: sweep point timings, CPU load and resident memory
    The log lives in its own directory, apart from the run artifacts
    """

    def __init__(self, log_dir: Path = Path("./logs")):
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.csv_path = self.log_dir / LOG_NAME
        if not self.csv_path.exists():
            self._append(CSV_FIELDS)
        self.current_session: Optional[RunSession] = None
        self._point_starts: Dict[Hashable, float] = {}

    def _append(self, row: List):
        with open(self.csv_path, 'a', newline='') as f:
            csv.writer(f).writerow(row)

    def start_session(self, run_name: str, threads: int = 1):
        self.current_session = RunSession(run_name, threads)
        logger.debug(f"Timing run '{run_name}' on {threads} thread(s)")

    def start_point(self, key: Hashable = None):
        """Start timing a sweep point; overlapping points need distinct keys"""
        self._point_starts[key] = time.perf_counter()

    def end_point(self, key: Hashable = None) -> float:
        """Close the sweep point started under key and return its wall time [s]"""
        started = self._point_starts.pop(key, None)
        if started is None:
            return 0.0
        elapsed = time.perf_counter() - started
        if self.current_session is not None:
            self.current_session.point_times.append(elapsed)
        return elapsed

    def end_session(self):
        """Append the session row; sessions without a finished point leave no row"""
        session, self.current_session = self.current_session, None
        if session is None:
            return
        if not session.point_times:
            logger.warning(f"Run '{session.run_name}' finished no sweep point; nothing logged")
            return

        cpu_usage = psutil.cpu_percent(interval=0.1)
        memory_mb = psutil.Process().memory_info().rss / 2 ** 20
        row = session.row(cpu_usage, memory_mb)
        self._append(row)
        logger.info(f"Run '{session.run_name}': {row[2]} points in {row[3]} s, "
                    f"CPU {cpu_usage:.1f}%, RSS {memory_mb:.0f} MB")

    def get_recent_stats(self, limit: int = 10) -> List[Dict]:
        """Last `limit` rows of the log as string-valued dicts"""
        try:
            with open(self.csv_path, newline='') as f:
                rows = list(csv.DictReader(f))
        except OSError as e:
            logger.error(f"Cannot read {self.csv_path}: {e}")
            return []
        return rows[-limit:]
