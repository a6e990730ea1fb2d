"""
Run Monitor
Tracks grid points and folds of an experiment run
Thread-safe counters plus the last failure, for end-of-run summaries
"""

import logging
import threading
import time
from collections import deque
from datetime import datetime
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class RunMonitor:
    """Monitors the units of work of one command"""

    def __init__(self, max_events: int = 1000):
        """
        Initialize Run Monitor

        Args:
            max_events: Maximum number of events to keep in history
        """
        self.events = deque(maxlen=max_events)
        self.started_at = time.time()
        self.points_started = 0
        self.points_completed = 0
        self.points_failed = 0
        self.folds_completed = 0
        self.folds_failed = 0
        self.last_failure: Optional[Dict] = None
        self.lock = threading.Lock()

    def _record(self, kind: str, label: str, error: Optional[str] = None):
        event = {
            'timestamp': time.time(),
            'datetime': datetime.now().isoformat(),
            'kind': kind,
            'label': label,
            'error': error,
        }
        self.events.append(event)
        if error:
            self.last_failure = event

    def point_started(self, label: str):
        with self.lock:
            self.points_started += 1
            self._record('point_started', label)

    def point_finished(self, label: str, error: Optional[str] = None):
        """Mark a grid point done; a non-empty error marks it failed"""
        with self.lock:
            if error:
                self.points_failed += 1
            else:
                self.points_completed += 1
            self._record('point_failed' if error else 'point_completed', label, error)

    def fold_finished(self, label: str, error: Optional[str] = None):
        with self.lock:
            if error:
                self.folds_failed += 1
            else:
                self.folds_completed += 1
            self._record('fold_failed' if error else 'fold_completed', label, error)

    def recent_events(self, limit: int = 10) -> List[Dict]:
        """Newest events first"""
        with self.lock:
            return list(reversed(self.events))[:limit]

    def get_status(self) -> Dict:
        """
        Get current run status

        Returns:
            Status dictionary
        """
        with self.lock:
            return {
                'elapsed_seconds': time.time() - self.started_at,
                'points_started': self.points_started,
                'points_completed': self.points_completed,
                'points_failed': self.points_failed,
                'points_running': self.points_started - self.points_completed - self.points_failed,
                'folds_completed': self.folds_completed,
                'folds_failed': self.folds_failed,
                'last_failure': self.last_failure,
            }

    def log_summary(self):
        status = self.get_status()
        logger.info(f"Grid points: {status['points_completed']} completed, {status['points_failed']} failed; "
                    f"folds: {status['folds_completed']} completed, {status['folds_failed']} failed "
                    f"({status['elapsed_seconds']:.1f}s)")
        if status['last_failure']:
            logger.warning(f"⚠️ Last failure: {status['last_failure']['label']}: "
                           f"{status['last_failure']['error']}")
