"""
Command Line Module
===================

Front end for parsing cases, solving relaxations, running the sequential
penalized method, sweeping the penalty weight and checking operating points.

Features:
- Six commands: parse, relax, sequential, sweep-mu, check-point, report
- CliConfig validated with pydantic before any work starts
- CSV, aligned text or JSON output; files or stdout
- Exit codes 0 success, 2 parse/validation error, 3 solver failure, 4 no feasible round
- Audit trail of every run and failure through RunLogging
"""

import argparse
import json
import logging
import math
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, Field, ValidationError, root_validator, validator

from . import __version__
from .analysis import feasibility_distance_upper, licq_report
from .batch_runner import BatchRunner, default_mu_grid, sweep_mu
from .case_format import write_canonical
from .config import AppSettings, load_settings
from .conic_solver import SolverSettings
from .netmodel import CaseFormatError, Network, NetworkValidationError, build_admittances, load_case
from .opf import OperatingPoint, is_feasible, objective, residuals
from .performance_monitor import configure_sink, monitor, performance_monitor
from .relax import ConeKind, RecoveryError, assemble, penalty_matrix
from .report_exporter import (
    BOUND_COLUMNS,
    SEQUENTIAL_COLUMNS,
    ReportExporter,
    bound_row,
    check_gap_columns,
    sequential_row,
)
from .run_logging import RunLogging
from .schemas import ExportFormat, ReferenceEntry, load_reference_values, lookup_reference
from .sequential import BoundResult, StoppingKind, StoppingRule, lower_bound, run

logger = logging.getLogger(__name__)

BUNDLED_CASE_DIR = Path(__file__).parent / "data" / "cases"

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4

ALL_CONES = "all"


class Command(str, Enum):
    PARSE = "parse"
    RELAX = "relax"
    SEQUENTIAL = "sequential"
    SWEEP_MU = "sweep-mu"
    CHECK_POINT = "check-point"
    REPORT = "report"


class SolverFailure(RuntimeError):
    """A solve did not produce a usable result."""


class CliConfig(BaseModel):
    """Validated command-line options; ``None`` means "use the environment or case default"."""
    command: Command
    case: Optional[str] = Field(None, description="Case file or bundled case name")
    cases: List[str] = Field(default_factory=list, description="Case files for the report command")
    cone: Optional[str] = Field(None, description="sdp, socp, parabolic or all")
    mu: Optional[float] = Field(None, gt=0, description="Penalty weight")
    alpha: Optional[float] = Field(None, ge=0, description="Identity weight in the penalty matrix")
    eta: Optional[float] = Field(None, ge=0, lt=1, description="Real/reactive trade-off in the penalty matrix")
    rounds: int = Field(20, gt=0, description="Round budget")
    stopping: StoppingKind = Field(StoppingKind.PLATEAU, description="Stopping rule")
    plateau_tol: float = Field(1e-4, gt=0, lt=1, description="Plateau tolerance")
    escalate_mu: bool = False
    require_feasible: bool = False
    output: Optional[Path] = None
    summary: Optional[Path] = None
    fmt: ExportFormat = ExportFormat.CSV
    reference: Optional[Path] = None
    mu_grid: Optional[List[float]] = None
    threads: Optional[int] = Field(None, ge=1)
    dense: bool = False
    assemble_only: bool = False
    max_psd_dim: Optional[int] = Field(None, ge=2)
    max_iterations: Optional[int] = Field(None, gt=0)
    point: Optional[Path] = None
    witness: Optional[Path] = None
    start: Optional[Path] = None
    delta: float = Field(0.0, ge=0)
    with_penalty: bool = False
    sequential: bool = False
    verbose: bool = False
    log_dir: Optional[Path] = None

    @validator("cone")
    def known_cone(cls, v):
        if v is None:
            return v
        v = v.lower()
        if v != ALL_CONES:
            ConeKind(v)
        return v

    @validator("mu_grid")
    def nonnegative_grid(cls, v):
        if v is not None and (not v or any(not mu >= 0 for mu in v)):
            raise ValueError("mu grid needs one or more nonnegative values")
        return v

    @root_validator(skip_on_failure=True)
    def command_requirements(cls, values):
        command, cone = values.get("command"), values.get("cone")
        if command != Command.REPORT and not values.get("case"):
            raise ValueError(f"{command.value} needs --case")
        if command == Command.REPORT and not values.get("cases"):
            raise ValueError("report needs at least one case")
        if command in (Command.RELAX, Command.SEQUENTIAL, Command.SWEEP_MU) and cone is None:
            raise ValueError(f"{command.value} needs --cone")
        if command == Command.SEQUENTIAL and cone == ALL_CONES:
            raise ValueError("sequential runs one cone at a time")
        if command == Command.CHECK_POINT:
            if not values.get("point"):
                raise ValueError("check-point needs --point")
            if values.get("with_penalty") and not values.get("delta") > 0:
                raise ValueError("--with-penalty needs --delta > 0")
        return values

    def cone_kinds(self) -> List[ConeKind]:
        if self.cone in (None, ALL_CONES):
            return list(ConeKind)
        return [ConeKind(self.cone)]


class CliContext:
    """Settings, reference values, logging and output shared by one invocation."""

    def __init__(self, config: CliConfig, settings: AppSettings, run_log: RunLogging):
        self.config = config
        self.settings = settings
        self.run_log = run_log
        self.exporter = ReportExporter()
        self.reference_path = config.reference or settings.reference_file
        self.references = load_reference_values(self.reference_path)

    @property
    def threads(self) -> int:
        return self.config.threads or self.settings.threads

    @property
    def max_psd_dim(self) -> int:
        return self.config.max_psd_dim or self.settings.max_psd_dim

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(max_iterations=self.config.max_iterations or self.settings.max_iterations)

    def solver_callback(self):
        if not self.config.verbose:
            return None
        return lambda record: self.run_log.log_iteration(record.to_line())

    def reference_for(self, net: Network) -> Optional[ReferenceEntry]:
        return lookup_reference(self.references, net.name)

    def emit(self, text: str, path: Optional[Path] = None) -> None:
        if self.exporter.write(text, path) is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")


def resolve_case(name: str) -> Path:
    """A path on disk, or the name of a bundled case (``case9``, ``toy2bus.m``)."""
    path = Path(name)
    if path.exists():
        return path
    bundled = BUNDLED_CASE_DIR / (path.name if path.suffix else f"{path.name}.m")
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"case {name!r} is neither a file nor a bundled case")


def open_case(ctx: CliContext, name: str) -> Network:
    path = resolve_case(name)
    start = time.perf_counter()
    net = load_case(path)
    ctx.run_log.log_case_parsed(net.name, net.summary(), time.perf_counter() - start)
    return net


def _read_point(net: Network, path: Path) -> OperatingPoint:
    point = OperatingPoint.from_text(net, Path(path).read_text(encoding="utf-8"))
    point.check_dimensions(net)
    return point


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_parse(ctx: CliContext) -> int:
    """Print the case summary; ``--output`` also writes the canonical JSON form."""
    net = open_case(ctx, ctx.config.case)
    if ctx.config.output is not None:
        ctx.exporter.write(write_canonical(net), ctx.config.output)
    ctx.emit(json.dumps(net.summary(), indent=2))
    return EXIT_OK


@performance_monitor
def _assemble_only(ctx: CliContext, net: Network, kinds: Sequence[ConeKind]) -> List[Dict[str, object]]:
    adm = build_admittances(net)
    rows = []
    for kind in kinds:
        start = time.perf_counter()
        prog = assemble(net, adm, kind, dense=ctx.config.dense, max_psd_dim=ctx.max_psd_dim)
        seconds = time.perf_counter() - start
        memory = monitor.memory_usage().get("rss_mb")
        size = prog.size_report()
        ctx.run_log.log_program_assembled(prog.name, size, seconds, memory)
        rows.append({"case": net.name, "cone": kind.value, **size, "seconds": round(seconds, 3),
                     "rss_mb": None if memory is None else round(memory, 1)})
    return rows


def solve_bounds(ctx: CliContext, net: Network, kinds: Sequence[ConeKind]) -> Dict[ConeKind, BoundResult]:
    adm = build_admittances(net)
    results = {}
    for kind in kinds:
        result = lower_bound(net, adm, kind, settings=ctx.solver_settings(), dense=ctx.config.dense,
                             max_psd_dim=ctx.max_psd_dim, callback=ctx.solver_callback())
        ctx.run_log.log_solve(net.name, kind.value, result.status.value, result.bound, result.iterations,
                              result.seconds)
        results[kind] = result
    bounds = [results[k].bound for k in ConeKind if k in results and results[k].ok]
    if any(a < b - 1e-6 * (1 + abs(b)) for a, b in zip(bounds, bounds[1:])):
        logger.warning(f"Bounds on {net.name} are out of cone order: {bounds}")
    return results


def cmd_relax(ctx: CliContext) -> int:
    """Lower bound and wall time per cone; ``--assemble-only`` reports program sizes instead."""
    config = ctx.config
    net = open_case(ctx, config.case)
    kinds = config.cone_kinds()
    if config.assemble_only:
        frame = ctx.exporter.to_frame(_assemble_only(ctx, net, kinds))
        ctx.emit(ctx.exporter.export(frame, config.fmt), config.output)
        return EXIT_OK

    results = solve_bounds(ctx, net, kinds)
    if config.cone == ALL_CONES:
        frame = ctx.exporter.to_frame([bound_row(net.name, results)], BOUND_COLUMNS)
    else:
        frame = ctx.exporter.to_frame([r.as_row() for r in results.values()])
    ctx.emit(ctx.exporter.export(frame, config.fmt, metadata={"case": net.name}), config.output)

    failed = [r for r in results.values() if not r.ok]
    if failed:
        raise SolverFailure(", ".join(f"{r.kind.value}: {r.status.value}" for r in failed))
    return EXIT_OK


def _sequential_parameters(ctx: CliContext, net: Network, kind: ConeKind):
    config = ctx.config
    defaults = ctx.reference_for(net)
    defaults = defaults.defaults_for(kind) if defaults is not None else None
    mu = config.mu if config.mu is not None else (defaults.mu if defaults else None)
    if mu is None:
        raise ValueError(f"no mu given and no default for {net.name}/{kind.value}; pass --mu")
    alpha = config.alpha if config.alpha is not None else (defaults.alpha if defaults else 1.0)
    eta = config.eta if config.eta is not None else (defaults.eta if defaults else 0.0)
    return mu, alpha, eta


def cmd_sequential(ctx: CliContext) -> int:
    """Per-round CSV to ``--output`` and the summary row to ``--summary`` (stdout by default)."""
    config = ctx.config
    net = open_case(ctx, config.case)
    adm = build_admittances(net)
    kind = ConeKind(config.cone)
    mu, alpha, eta = _sequential_parameters(ctx, net, kind)
    entry = ctx.reference_for(net)
    x0 = _read_point(net, config.start) if config.start else None
    stopping = StoppingRule(kind=config.stopping, max_rounds=config.rounds, plateau_tol=config.plateau_tol,
                            escalate_mu=config.escalate_mu)

    report = run(net, adm, kind, mu, alpha=alpha, eta=eta, x0=x0, stopping=stopping,
                 settings=ctx.solver_settings(), dense=config.dense, max_psd_dim=ctx.max_psd_dim,
                 best_known=entry.best_known if entry else None, sdp_bound=entry.sdp_bound if entry else None,
                 on_round=lambda r: ctx.run_log.log_round(net.name, kind.value, r.as_row(), r.iterations))

    ctx.emit(report.to_csv(), config.output)
    frame = ctx.exporter.to_frame([sequential_row(report)], SEQUENTIAL_COLUMNS)
    for problem in check_gap_columns(frame):
        logger.warning(f"Gap column mismatch: {problem}")
    ctx.emit(ctx.exporter.export(frame, config.fmt, metadata=report.summary()), config.summary)

    last = report.rounds[-1] if report.rounds else None
    if last is None or (math.isnan(last.cost) and not report.feasible):
        raise SolverFailure(f"sequential run ended with status {report.status.value}")
    if config.require_feasible and not report.feasible:
        ctx.run_log.log_error("INFEASIBLE", f"no feasible round within {len(report.rounds)} round(s)",
                              {"case": net.name, "cone": kind.value, "mu": mu})
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep_mu(ctx: CliContext) -> int:
    """One penalized solve per grid value and cone, written as CSV rows in grid order."""
    config = ctx.config
    net = open_case(ctx, config.case)
    adm = build_admittances(net)
    entry = ctx.reference_for(net)
    grid = config.mu_grid if config.mu_grid is not None else list(default_mu_grid())
    frame = sweep_mu(
        net, adm, config.cone_kinds(), grid,
        alpha=config.alpha if config.alpha is not None else 5.0,
        eta=config.eta if config.eta is not None else 0.0,
        x0=_read_point(net, config.start) if config.start else None,
        settings=ctx.solver_settings(), dense=config.dense, max_psd_dim=ctx.max_psd_dim,
        best_known=entry.best_known if entry else None, workers=ctx.threads,
        on_row=lambda row: ctx.run_log.log_sweep_point(net.name, row),
    )
    ctx.emit(ctx.exporter.export(frame, config.fmt, metadata={"case": net.name}), config.output)
    return EXIT_OK


def cmd_check_point(ctx: CliContext) -> int:
    """Residuals, cost and the LICQ report of a stored operating point."""
    config = ctx.config
    net = open_case(ctx, config.case)
    adm = build_admittances(net)
    x = _read_point(net, config.point)
    res = residuals(net, adm, x)
    M = None
    if config.with_penalty:
        M = penalty_matrix(net, adm, config.alpha if config.alpha is not None else 1.0,
                           config.eta if config.eta is not None else 0.0).dense()
    report = licq_report(net, adm, x, delta=config.delta, M=M)
    out = {
        "case": net.name,
        "objective": objective(net, x.p),
        "feasible": is_feasible(net, adm, x),
        "max_violation": res.max_violation,
        "residuals": res.as_dict(),
        "licq": report.to_dict(),
    }
    if config.witness:
        out["distance_upper"] = feasibility_distance_upper(net, adm, x, _read_point(net, config.witness), M=M)
    ctx.emit(json.dumps(out, indent=2, default=str), config.output)
    return EXIT_OK


def _report_case(ctx: CliContext, name: str) -> Dict[str, object]:
    net = open_case(ctx, name)
    results = solve_bounds(ctx, net, list(ConeKind))
    out: Dict[str, object] = {"bounds": bound_row(net.name, results), "sequential": []}
    if not ctx.config.sequential:
        return out
    entry = ctx.reference_for(net)
    adm = build_admittances(net)
    stopping = StoppingRule(kind=ctx.config.stopping, max_rounds=ctx.config.rounds,
                            plateau_tol=ctx.config.plateau_tol)
    for kind in ConeKind:
        defaults = entry.defaults_for(kind) if entry else None
        if defaults is None:
            logger.warning(f"No sequential defaults for {net.name}/{kind.value}; skipped")
            continue
        report = run(net, adm, kind, defaults.mu, alpha=defaults.alpha, eta=defaults.eta, stopping=stopping,
                     settings=ctx.solver_settings(), dense=ctx.config.dense, max_psd_dim=ctx.max_psd_dim,
                     best_known=entry.best_known, sdp_bound=entry.sdp_bound)
        out["sequential"].append(sequential_row(report))
    return out


def cmd_report(ctx: CliContext) -> int:
    """Bound rows for several cases in input order; ``--sequential`` adds summary rows."""
    config = ctx.config
    results = BatchRunner(ctx.threads).map(lambda name: _report_case(ctx, name), config.cases)
    bound_rows, sequential_rows, failures = [], [], []
    for result in results:
        if not result.ok:
            failures.append(f"{result.item}: {result.error}")
            ctx.run_log.log_error("REPORT_CASE", result.error, {"case": result.item})
            bound_rows.append({"case": Path(result.item).stem})
            continue
        bound_rows.append(result.value["bounds"])
        sequential_rows.extend(result.value["sequential"])

    frame = ctx.exporter.to_frame(bound_rows, BOUND_COLUMNS)
    ctx.emit(ctx.exporter.export(frame, config.fmt), config.output)
    if config.sequential:
        seq_frame = ctx.exporter.to_frame(sequential_rows, SEQUENTIAL_COLUMNS)
        for problem in check_gap_columns(seq_frame):
            logger.warning(f"Gap column mismatch: {problem}")
        ctx.emit(ctx.exporter.export(seq_frame, config.fmt), config.summary)

    bounds_missing = bool(frame[[k.value for k in ConeKind]].isna().to_numpy().any())
    if failures or bounds_missing:
        raise SolverFailure("; ".join(failures) or "one or more bounds did not solve")
    return EXIT_OK


COMMANDS = {
    Command.PARSE: cmd_parse,
    Command.RELAX: cmd_relax,
    Command.SEQUENTIAL: cmd_sequential,
    Command.SWEEP_MU: cmd_sweep_mu,
    Command.CHECK_POINT: cmd_check_point,
    Command.REPORT: cmd_report,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opf-relax", description="Penalized convex relaxations for AC OPF")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", type=Path, help="Write the main result here instead of stdout")
    common.add_argument("--format", dest="fmt", choices=[f.value for f in ExportFormat], default="csv")
    common.add_argument("--reference", type=Path, help="Reference-values file (c_b, c_s per case)")
    common.add_argument("--log-dir", type=Path)
    common.add_argument("--verbose", "-v", action="store_true", help="Solver iteration log and INFO console output")

    solving = argparse.ArgumentParser(add_help=False)
    solving.add_argument("--dense", action="store_true", help="Single PSD block for SDP when it fits")
    solving.add_argument("--max-psd-dim", type=int)
    solving.add_argument("--max-iter", dest="max_iterations", type=int)
    solving.add_argument("--threads", type=int)

    penalty = argparse.ArgumentParser(add_help=False)
    penalty.add_argument("--mu", type=float)
    penalty.add_argument("--alpha", type=float)
    penalty.add_argument("--eta", type=float)

    cones = [k.value for k in ConeKind]

    p = sub.add_parser("parse", parents=[common], help="Parse a case and print its summary")
    p.add_argument("--case", required=True)

    p = sub.add_parser("relax", parents=[common, solving], help="Unpenalized lower bounds")
    p.add_argument("--case", required=True)
    p.add_argument("--cone", required=True, choices=cones + [ALL_CONES])
    p.add_argument("--assemble-only", action="store_true", help="Report program sizes without solving")

    p = sub.add_parser("sequential", parents=[common, solving, penalty], help="Sequential penalized relaxation")
    p.add_argument("--case", required=True)
    p.add_argument("--cone", required=True, choices=cones)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--stopping", choices=[s.value for s in StoppingKind], default=StoppingKind.PLATEAU.value)
    p.add_argument("--plateau-tol", type=float, default=1e-4)
    p.add_argument("--escalate-mu", action="store_true")
    p.add_argument("--require-feasible", action="store_true")
    p.add_argument("--start", type=Path, help="Initial operating point (flat start by default)")
    p.add_argument("--summary", type=Path, help="Write the summary row here instead of stdout")

    p = sub.add_parser("sweep-mu", parents=[common, solving, penalty], help="Penalty-weight sweep")
    p.add_argument("--case", required=True)
    p.add_argument("--cone", required=True, choices=cones + [ALL_CONES])
    p.add_argument("--mu-grid", type=_float_list, help="Comma-separated mu values")
    p.add_argument("--start", type=Path)

    p = sub.add_parser("check-point", parents=[common, penalty], help="Residuals and LICQ at a point")
    p.add_argument("--case", required=True)
    p.add_argument("--point", type=Path, required=True)
    p.add_argument("--witness", type=Path, help="Feasible point for the distance upper bound")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--with-penalty", action="store_true", help="Check lambda_max(M) against the bound")

    p = sub.add_parser("report", parents=[common, solving], help="Bound and sequential tables over cases")
    p.add_argument("cases", nargs="+")
    p.add_argument("--sequential", action="store_true")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--stopping", choices=[s.value for s in StoppingKind], default=StoppingKind.PLATEAU.value)
    p.add_argument("--plateau-tol", type=float, default=1e-4)
    p.add_argument("--summary", type=Path)
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> CliConfig:
    args = build_parser().parse_args(argv)
    values = {k: v for k, v in vars(args).items() if v is not None}
    return CliConfig(**values)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_config(argv)
    except ValidationError as e:
        sys.stderr.write(f"invalid arguments: {e}\n")
        return EXIT_PARSE
    except SystemExit as e:
        return EXIT_PARSE if e.code else EXIT_OK

    settings = load_settings()
    log_dir = config.log_dir or settings.log_dir
    run_log = RunLogging(str(log_dir), level=settings.log_level, verbose=config.verbose)
    configure_sink(str(log_dir), settings.log_level)
    context = {"command": config.command.value, "case": config.case or config.cases}

    try:
        ctx = CliContext(config, settings, run_log)
        code = COMMANDS[config.command](ctx)
    except (CaseFormatError, NetworkValidationError, FileNotFoundError, ValueError) as e:
        run_log.log_error(type(e).__name__, str(e), context)
        sys.stderr.write(f"error: {e}\n")
        return EXIT_PARSE
    except (SolverFailure, RecoveryError) as e:
        run_log.log_error(type(e).__name__, str(e), context)
        sys.stderr.write(f"solver failure: {e}\n")
        return EXIT_SOLVER

    logger.info(f"Session summary: {run_log.get_session_summary()}")
    return code


if __name__ == "__main__":
    sys.exit(main())
