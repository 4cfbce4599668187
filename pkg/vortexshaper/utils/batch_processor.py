"""
Batch Processor - Runs the points of a parameter sweep as a queue
"""

import asyncio
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional

logger = logging.getLogger(__name__)


class ProcessingStatus(Enum):
    PENDING = "pending"
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass
class SweepItem:
    """Single point of a sweep"""
    index: int
    parameter: str
    value: float
    status: ProcessingStatus = ProcessingStatus.PENDING
    result: Optional[Dict] = None
    error: Optional[str] = None
    exception: Optional[BaseException] = None

    @property
    def label(self) -> str:
        return f"{self.parameter}[{self.index}]={self.value:.6g}"


class BatchProcessor:
    """
    Processes sweep points on a pool of worker threads, starting them in sweep order
    Points not started before a cancel() are marked CANCELLED; a failed point does not stop the queue
    """

    def __init__(self, run_point: Callable[[SweepItem], Dict], workers: int = 1):
        """
        Args:
            run_point: Computes one sweep point and returns its result record
            workers: Points computed at the same time; results keep the sweep order
        """
        self.run_point = run_point
        self.workers = max(1, int(workers))
        self.queue: List[SweepItem] = []
        self.current_item: Optional[SweepItem] = None
        self.processing = False
        self.cancelled = False

        # Callbacks
        self.on_item_started: Optional[Callable[[SweepItem], None]] = None
        self.on_item_completed: Optional[Callable[[SweepItem], None]] = None
        self.on_item_failed: Optional[Callable[[SweepItem, str], None]] = None
        self.on_batch_completed: Optional[Callable[[List[SweepItem]], None]] = None

    def add_points(self, parameter: str, values: List[float]) -> List[SweepItem]:
        """Queue one item per sweep value"""
        start = len(self.queue)
        items = [SweepItem(start + i, parameter, float(v)) for i, v in enumerate(values)]
        self.queue.extend(items)
        logger.info(f"Queued {len(items)} sweep points over {parameter}")
        return items

    async def _process_item(self, loop, executor, item: SweepItem):
        self.current_item = item
        item.status = ProcessingStatus.PROCESSING
        if self.on_item_started:
            self.on_item_started(item)
        try:
            item.result = await loop.run_in_executor(executor, self.run_point, item)
        except Exception as e:
            item.status, item.error, item.exception = ProcessingStatus.FAILED, str(e), e
            logger.error(f"Sweep point {item.label} failed: {e}")
            if self.on_item_failed:
                self.on_item_failed(item, item.error)
            return
        item.status = ProcessingStatus.COMPLETED
        if self.on_item_completed:
            self.on_item_completed(item)

    async def _claim_slot(self, loop, executor, slots: asyncio.Semaphore, item: SweepItem):
        async with slots:
            if self.cancelled:
                item.status = ProcessingStatus.CANCELLED
                return
            await self._process_item(loop, executor, item)

    async def process_all(self) -> List[SweepItem]:
        """
        Process every pending point, at most `workers` at a time

        Returns:
            The completed SweepItems, including ones completed by an earlier call
        """
        if self.processing:
            logger.warning(f"Sweep already running ({self.current_item.label if self.current_item else 'idle'})")
            return []

        self.processing = True
        self.cancelled = False
        loop = asyncio.get_running_loop()
        try:
            slots = asyncio.Semaphore(self.workers)
            pending = self.items_with(ProcessingStatus.PENDING)
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                await asyncio.gather(*(self._claim_slot(loop, executor, slots, item) for item in pending))
        finally:
            self.processing = False
            self.current_item = None
        done = self.items_with(ProcessingStatus.COMPLETED)
        if self.on_batch_completed:
            self.on_batch_completed(done)
        return done

    def run(self) -> List[SweepItem]:
        """Synchronous wrapper around process_all"""
        return asyncio.run(self.process_all())

    def cancel(self):
        """Cancel the remaining points"""
        self.cancelled = True
        logger.info("Sweep cancelled; remaining points will be skipped")

    def items_with(self, status: ProcessingStatus) -> List[SweepItem]:
        return [item for item in self.queue if item.status == status]

    def first_failure(self) -> Optional[SweepItem]:
        failed = self.items_with(ProcessingStatus.FAILED)
        return failed[0] if failed else None

    def get_queue_status(self) -> Dict:
        counts = Counter(item.status for item in self.queue)
        status = {'total': len(self.queue)}
        status.update({s.value: counts[s] for s in ProcessingStatus})
        status['current_item'] = self.current_item.label if self.current_item else None
        return status

    def get_summary_report(self) -> Dict:
        """Point counts, success percentage and the error of every failed point"""
        total = len(self.queue)
        n_done = len(self.items_with(ProcessingStatus.COMPLETED))
        failed = self.items_with(ProcessingStatus.FAILED)
        return {
            'total_points': total,
            'completed': n_done,
            'failed': len(failed),
            'success_rate': 100.0 * n_done / total if total else 0,
            'failed_items': [{'point': item.label, 'error': item.error} for item in failed],
        }
