"""
Performance Monitor Module
Memory and timing reports for program assembly, solves and batch runs.
"""

import os
import threading
import time
from functools import wraps
from pathlib import Path
from typing import Callable, Dict, Optional

import psutil
from loguru import logger

_sink_lock = threading.Lock()
_sinks: Dict[str, int] = {}


def configure_sink(log_dir: str = "logs", level: Optional[str] = None) -> int:
    """Add the rotating ``performance.log`` sink once per directory."""
    path = str(Path(log_dir) / "performance.log")
    with _sink_lock:
        if path not in _sinks:
            level = level or os.getenv('OPF_LOG_LEVEL', 'INFO')
            _sinks[path] = logger.add(path, rotation="10 MB", level=level.upper(), enqueue=True)
        return _sinks[path]


class PerformanceMonitor:
    """Resident memory checks with a warning threshold."""

    def __init__(self, max_memory_mb: Optional[int] = None):
        self.max_memory_mb = max_memory_mb or int(os.getenv('OPF_MAX_MEMORY_MB', '4096'))
        self.process = psutil.Process()

    def memory_usage(self) -> Dict[str, float]:
        try:
            memory_info = self.process.memory_info()
            usage = {
                'rss_mb': memory_info.rss / 1024 / 1024,
                'vms_mb': memory_info.vms / 1024 / 1024,
                'percent': self.process.memory_percent(),
                'available_mb': psutil.virtual_memory().available / 1024 / 1024
            }
        except psutil.Error as e:
            logger.error(f"Memory monitoring error: {e}")
            return {}

        if usage['rss_mb'] > self.max_memory_mb * 0.8:
            logger.warning(f"High memory usage: {usage['rss_mb']:.1f}MB of {self.max_memory_mb}MB budget")
        return usage


monitor = PerformanceMonitor()


def performance_monitor(func: Callable) -> Callable:
    """Log wall time and resident-memory change of each call."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        start_rss = monitor.memory_usage().get('rss_mb', 0.0)
        try:
            return func(*args, **kwargs)
        finally:
            duration = time.perf_counter() - start_time
            delta = monitor.memory_usage().get('rss_mb', 0.0) - start_rss
            logger.info(f"{func.__name__} took {duration:.3f}s, memory delta {delta:+.1f}MB")
    return wrapper
