"""
Run Logging Module
==================

Structured logging for command-line runs: an application log, a JSON-lines
audit trail and a per-session solver tracker.

Features:
- Named application logger with file and console handlers
- Audit events for parsing, assembly, solves, rounds, sweep points and errors
- Solver time and iteration totals per cone kind
"""

import json
import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
LOGGER_NAME = "opf"


class SolveTracker:
    """Accumulates solver wall time and iterations per cone kind."""

    def __init__(self):
        self.solves = []
        self.total_seconds = 0.0
        self.total_iterations = 0
        self.seconds_by_kind: Dict[str, float] = {}

    def add_solve(self, kind: str, seconds: float, iterations: int, status: str):
        self.solves.append({
            'kind': kind,
            'seconds': seconds,
            'iterations': iterations,
            'status': status,
            'timestamp': datetime.now().isoformat()
        })
        self.total_seconds += seconds
        self.total_iterations += iterations
        self.seconds_by_kind[kind] = self.seconds_by_kind.get(kind, 0.0) + seconds

    def get_seconds_by_kind(self) -> Dict[str, float]:
        return self.seconds_by_kind.copy()


class AuditLogger:
    """One JSON object per line in ``audit.jsonl``."""

    def __init__(self, log_dir: Path):
        self.audit_file = log_dir / "audit.jsonl"

    def log_event(self, event_type: str, metadata: Dict[str, Any]):
        audit_entry = {
            'event_type': event_type,
            'timestamp': datetime.now().isoformat(),
            **metadata
        }
        try:
            with open(self.audit_file, 'a', encoding='utf-8') as f:
                f.write(json.dumps(audit_entry, default=str) + '\n')
        except OSError as e:
            logging.getLogger(LOGGER_NAME).error(f"Failed to write audit log: {e}")


class RunLogging:
    """Application logger, audit trail and solve tracker for one process."""

    def __init__(self, log_dir: str = "logs", level: str = "INFO", verbose: bool = False):
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        # the library modules log under their own names; route them here too
        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(logging.DEBUG)
        self.library_logger = logging.getLogger("modules")
        self.library_logger.setLevel(getattr(logging, level.upper(), logging.INFO))

        if not self.logger.handlers:
            file_handler = logging.FileHandler(self.log_dir / "app.log", encoding="utf-8")
            file_handler.setLevel(getattr(logging, level.upper(), logging.INFO))
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.INFO if verbose else logging.WARNING)
            console_handler.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
            for handler in (file_handler, console_handler):
                self.logger.addHandler(handler)
                self.library_logger.addHandler(handler)

        self.session_id = self._generate_session_id()
        self.solve_tracker = SolveTracker()
        self.audit_logger = AuditLogger(self.log_dir)
        self._started = time.time()

    def _generate_session_id(self) -> str:
        return f"session_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{id(self)}"

    def _event(self, event_type: str, **fields) -> Dict[str, Any]:
        metadata = {'session_id': self.session_id, **fields}
        self.audit_logger.log_event(event_type, metadata)
        return metadata

    def log_case_parsed(self, case: str, summary: Dict[str, Any], seconds: float):
        self.logger.info(f"CASE_PARSED: {case} ({summary.get('buses')} buses, "
                         f"{summary.get('branches')} branches, {summary.get('generators')} generators) "
                         f"in {seconds:.3f}s")
        self._event('case_parsed', case=case, summary=summary, seconds=seconds)

    def log_program_assembled(self, name: str, size: Dict[str, int], seconds: float,
                              memory_mb: Optional[float] = None):
        self.logger.info(f"PROGRAM_ASSEMBLED: {name} ({size.get('variables')} vars, "
                         f"{size.get('equalities')} rows) in {seconds:.3f}s")
        self._event('program_assembled', program=name, size=size, seconds=seconds, memory_mb=memory_mb)

    def log_solve(self, case: str, kind: str, status: str, objective: float, iterations: int, seconds: float):
        self.solve_tracker.add_solve(kind, seconds, iterations, status)
        self.logger.info(f"SOLVE_{status.upper()}: {case}/{kind} objective={objective:.6f} "
                         f"({iterations} iterations, {seconds:.3f}s)")
        self._event('solve_finished', case=case, kind=kind, status=status, objective=objective,
                    iterations=iterations, seconds=seconds)

    def log_round(self, case: str, kind: str, record: Dict[str, Any], iterations: int = 0):
        self.solve_tracker.add_solve(kind, float(record.get('seconds', 0.0)), iterations, str(record.get('status')))
        self.logger.info(f"ROUND {record.get('k')}: {case}/{kind} cost={record.get('cost')} "
                         f"rank_gap={record.get('rank_gap')} status={record.get('status')}")
        self._event('round_finished', case=case, kind=kind, **record)

    def log_sweep_point(self, case: str, row: Dict[str, Any]):
        self.logger.info(f"SWEEP_POINT: {case} mu={row.get('mu')} rank_gap={row.get('rank_gap')} "
                         f"status={row.get('status')}")
        self._event('sweep_point', case=case, **row)

    def log_iteration(self, line: str):
        self.logger.info(line)

    def log_error(self, error_type: str, error_message: str, context: Optional[Dict[str, Any]] = None):
        self.logger.error(f"ERROR_{error_type}: {error_message}")
        if context:
            self.logger.error(f"ERROR_CONTEXT: {json.dumps(context, indent=2, default=str)}")
        self._event('error', error_type=error_type, error_message=error_message, context=context or {})

    def get_session_summary(self) -> Dict[str, Any]:
        return {
            'session_id': self.session_id,
            'solves': len(self.solve_tracker.solves),
            'solver_seconds': round(self.solve_tracker.total_seconds, 4),
            'solver_iterations': self.solve_tracker.total_iterations,
            'seconds_by_kind': self.solve_tracker.get_seconds_by_kind(),
            'elapsed': round(time.time() - self._started, 4),
        }
