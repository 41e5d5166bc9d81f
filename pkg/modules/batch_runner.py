"""
Batch Runner Module
Fans independent solves out over a thread pool and reassembles results in input order.
"""

import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Generic, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd
from loguru import logger

from .conic_solver import SolverSettings
from .netmodel import AdmittanceSet, Network
from .opf import OperatingPoint
from .relax import DEFAULT_MAX_PSD_DIM, ConeKind
from .report_exporter import SWEEP_COLUMNS
from .sequential import sweep_point

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class TaskResult(Generic[T, R]):
    index: int
    item: T
    value: Optional[R] = None
    error: Optional[str] = None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BatchProgress:
    total: int
    done: int = 0
    failed: int = 0
    started_at: float = field(default_factory=time.time)

    @property
    def elapsed(self) -> float:
        return time.time() - self.started_at


class BatchRunner:
    """Thread-pool fan-out; one task per item, results returned in input order."""

    def __init__(self, max_workers: int = 4):
        if max_workers < 1:
            raise ValueError(f"max_workers must be at least 1, got {max_workers}")
        self.max_workers = max_workers
        self.progress_lock = threading.Lock()

    def map(self, fn: Callable[[T], R], items: Sequence[T],
            on_result: Optional[Callable[[TaskResult], None]] = None) -> List[TaskResult]:
        """Run ``fn`` on every item; an exception in one task is recorded in its result."""
        items = list(items)
        progress = BatchProgress(total=len(items))
        results: List[Optional[TaskResult]] = [None] * len(items)

        def task(index: int, item: T) -> TaskResult:
            start = time.perf_counter()
            try:
                return TaskResult(index, item, value=fn(item), seconds=time.perf_counter() - start)
            except Exception as e:
                logger.error(f"Task {index} ({item!r}) failed: {e}")
                return TaskResult(index, item, error=f"{type(e).__name__}: {e}",
                                  seconds=time.perf_counter() - start)

        with ThreadPoolExecutor(max_workers=min(self.max_workers, max(1, len(items)))) as executor:
            futures = [executor.submit(task, i, item) for i, item in enumerate(items)]
            for future in as_completed(futures):
                result = future.result()
                results[result.index] = result
                with self.progress_lock:
                    progress.done += 1
                    progress.failed += 0 if result.ok else 1
                logger.info(f"Batch progress {progress.done}/{progress.total} "
                            f"({progress.failed} failed, {progress.elapsed:.1f}s)")
                if on_result:
                    on_result(result)
        return results


def default_mu_grid(low_exp: int = 0, high_exp: int = 5, per_decade: int = 4) -> np.ndarray:
    """Log-spaced mu values from 10**low_exp to 10**high_exp inclusive."""
    if high_exp < low_exp or per_decade < 1:
        raise ValueError("need high_exp >= low_exp and per_decade >= 1")
    return np.logspace(low_exp, high_exp, (high_exp - low_exp) * per_decade + 1)


def sweep_mu(net: Network, adm: AdmittanceSet, kinds: Sequence[ConeKind], grid: Sequence[float],
             alpha: float = 5.0, eta: float = 0.0, x0: Optional[OperatingPoint] = None,
             settings: Optional[SolverSettings] = None, dense: bool = False,
             max_psd_dim: int = DEFAULT_MAX_PSD_DIM, best_known: Optional[float] = None,
             workers: int = 4, on_row: Optional[Callable[[dict], Any]] = None) -> pd.DataFrame:
    """
    One penalized solve per (cone, mu); rows ordered by cone then by grid position.

    ``mu = 0`` keeps the lifted voltage variables with a zero penalty weight, which
    measures the rank gap of the plain relaxation.
    """
    grid = [float(mu) for mu in grid]
    if any(not mu >= 0 for mu in grid):
        raise ValueError("grid values must be nonnegative")
    tasks = [(ConeKind(kind), mu) for kind in kinds for mu in grid]
    logger.info(f"Sweeping {len(grid)} mu value(s) over {len(kinds)} cone(s) on {net.name} "
                f"with {workers} worker(s)")

    def one(task):
        kind, mu = task
        return sweep_point(net, adm, kind, mu, alpha=alpha, eta=eta, x0=x0, settings=settings,
                           dense=dense, max_psd_dim=max_psd_dim, best_known=best_known)

    def report(result: TaskResult):
        if on_row and result.ok:
            on_row(result.value)

    results = BatchRunner(workers).map(one, tasks, on_result=report)
    rows = []
    for result in results:
        if result.ok:
            rows.append(result.value)
        else:
            kind, mu = result.item
            rows.append({"mu": mu, "cone": kind.value, "status": "error", "error": result.error,
                         "seconds": round(result.seconds, 4)})
    frame = pd.DataFrame(rows)
    columns = SWEEP_COLUMNS + [c for c in frame.columns if c not in SWEEP_COLUMNS]
    return frame.reindex(columns=columns)
