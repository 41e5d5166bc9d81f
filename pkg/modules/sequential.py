"""
Sequential Module
=================

Sequential penalized convex relaxation: assemble the penalized program around
the current point, solve, recover, move the point, repeat.

Features:
- Round loop with plateau, budget and first-feasible stopping rules
- Feasibility flag combining the rank-gap test and constraint residuals
- Optional mu escalation when a round from a feasible point stays inexact
- Run metrics k_f, c_f, k_p, c_p and the gaps against reference costs
- Per-round CSV and the summary row used by the sequential results table
- Unpenalized lower-bound solves and single mu-sweep points
"""

import io
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .conic_solver import ConicSolution, SolverSettings, SolveStatus, solve
from .netmodel import AdmittanceSet, Network
from .opf import OperatingPoint, flat_start, is_feasible, objective, residuals
from .relax import (
    DEFAULT_MAX_PSD_DIM,
    ConeKind,
    LiftedPoint,
    PenaltySpec,
    RecoveryError,
    assemble,
    extract_lifted,
    penalty_matrix,
    penalty_value,
)

logger = logging.getLogger(__name__)

__all__ = [
    "RecoveryError", "StoppingKind", "StoppingRule", "RoundRecord", "RunReport", "BoundResult",
    "run", "recover", "rank_gap", "lower_bound", "sweep_point", "lifted_cost",
]

ROUND_COLUMNS = ["k", "cost", "penalty", "rank_gap", "max_violation", "status", "seconds"]
SUMMARY_COLUMNS = ["mu", "alpha", "k_f", "GFB%", "GFS%", "k_p", "GPB%", "GPS%"]


class StoppingKind(str, Enum):
    PLATEAU = "plateau"
    BUDGET = "budget"
    FIRST_FEASIBLE = "first-feasible"


class StoppingRule(BaseModel):
    """When the round loop ends; ``max_rounds`` caps every rule."""
    kind: StoppingKind = Field(StoppingKind.PLATEAU, description="Stopping criterion")
    max_rounds: int = Field(20, gt=0, description="Round budget")
    plateau_tol: float = Field(1e-4, gt=0, lt=1, description="Relative cost improvement that counts as a plateau")
    rank_gap_tol: float = Field(1e-7, gt=0, description="tr(W - vv*) below which a round is exact")
    feasibility_tol: float = Field(1e-6, gt=0, description="Residual tolerance of the recovered point")
    escalate_mu: bool = Field(False, description="Multiply mu when a round from a feasible point stays inexact")
    escalation_factor: float = Field(10.0, gt=1, description="mu multiplier per escalation")
    max_escalations: int = Field(3, ge=0, description="Escalation cap")


@dataclass(frozen=True)
class RoundRecord:
    k: int
    cost: float
    penalty: float
    rank_gap: float
    max_violation: float
    feasible: bool
    exact: bool
    status: SolveStatus
    seconds: float
    mu: float
    iterations: int = 0
    escalated: bool = False

    def as_row(self) -> Dict[str, object]:
        return {
            "k": self.k, "cost": self.cost, "penalty": self.penalty, "rank_gap": self.rank_gap,
            "max_violation": self.max_violation, "status": self.status.value, "seconds": round(self.seconds, 4),
        }


def _gap_percent(cost: Optional[float], reference: Optional[float]) -> Optional[float]:
    if cost is None or reference is None or cost == 0:
        return None
    return 100.0 * (cost - reference) / cost


@dataclass
class RunReport:
    """
    Outcome of a sequential run.

    ``k_f`` requires both an exact round and a residual-feasible point;
    ``k_f_rank`` uses the rank-gap test alone, which is what published tables report.
    """
    case: str
    kind: ConeKind
    mu: float
    alpha: float
    eta: float
    rounds: List[RoundRecord] = field(default_factory=list)
    point: Optional[OperatingPoint] = None
    best_known: Optional[float] = None
    sdp_bound: Optional[float] = None
    plateau_tol: float = 1e-4
    status: SolveStatus = SolveStatus.OPTIMAL
    warnings: List[str] = field(default_factory=list)

    @property
    def k_f(self) -> Optional[int]:
        return next((r.k for r in self.rounds if r.feasible), None)

    @property
    def k_f_rank(self) -> Optional[int]:
        return next((r.k for r in self.rounds if r.exact), None)

    @property
    def c_f(self) -> Optional[float]:
        k = self.k_f
        return None if k is None else self.rounds[k - 1].cost

    @property
    def k_p(self) -> Optional[int]:
        """First round from k_f on whose successor improves the cost by at most ``plateau_tol``."""
        k_f = self.k_f
        if k_f is None:
            return None
        solved = [r for r in self.rounds if r.k >= k_f and math.isfinite(r.cost)]
        for current, following in zip(solved, solved[1:]):
            if (current.cost - following.cost) <= self.plateau_tol * abs(current.cost):
                return current.k
        return solved[-1].k

    @property
    def c_p(self) -> Optional[float]:
        k = self.k_p
        return None if k is None else self.rounds[k - 1].cost

    @property
    def gfb(self) -> Optional[float]:
        return _gap_percent(self.c_f, self.best_known)

    @property
    def gfs(self) -> Optional[float]:
        return _gap_percent(self.c_f, self.sdp_bound)

    @property
    def gpb(self) -> Optional[float]:
        return _gap_percent(self.c_p, self.best_known)

    @property
    def gps(self) -> Optional[float]:
        return _gap_percent(self.c_p, self.sdp_bound)

    @property
    def feasible(self) -> bool:
        return self.k_f is not None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.as_row() for r in self.rounds], columns=ROUND_COLUMNS)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.10g")
        return buffer.getvalue()

    def summary_row(self) -> Dict[str, object]:
        """mu, alpha, k_f, GFB%, GFS%, k_p, GPB%, GPS%; gaps are None without references."""
        values = [self.mu, self.alpha, self.k_f, self.gfb, self.gfs, self.k_p, self.gpb, self.gps]
        return dict(zip(SUMMARY_COLUMNS, values))

    def summary(self) -> Dict[str, object]:
        out = {"case": self.case, "cone": self.kind.value, "eta": self.eta, "rounds": len(self.rounds),
               "status": self.status.value, "c_f": self.c_f, "c_p": self.c_p, "k_f_rank": self.k_f_rank}
        out.update(self.summary_row())
        return out


def recover(lp: LiftedPoint) -> OperatingPoint:
    """Operating point read from a penalized solution; display rotation is left to the caller."""
    return lp.x


def rank_gap(lp: LiftedPoint) -> float:
    return lp.rank_gap()


def lifted_cost(net: Network, lp: LiftedPoint) -> float:
    """h_L(o, p) = c0'1 + c1'p + c2'o in native units; o defaults to p^2 where the program has none."""
    o = np.where(np.isnan(lp.o), lp.p ** 2, lp.o)
    base = net.base_mva
    return float(net.c0.sum() + (net.c1 * base) @ lp.p + (net.c2 * base ** 2) @ o)


def _failed_round(k: int, mu: float, sol: ConicSolution, seconds: float) -> RoundRecord:
    return RoundRecord(
        k=k, cost=math.nan, penalty=math.nan, rank_gap=math.nan, max_violation=math.nan,
        feasible=False, exact=False, status=sol.status, seconds=seconds, mu=mu, iterations=sol.iterations,
    )


def run(net: Network, adm: AdmittanceSet, kind: ConeKind, mu: float, alpha: float = 1.0, eta: float = 0.0,
        x0: Optional[OperatingPoint] = None, stopping: Optional[StoppingRule] = None,
        settings: Optional[SolverSettings] = None, dense: bool = False,
        max_psd_dim: int = DEFAULT_MAX_PSD_DIM, best_known: Optional[float] = None,
        sdp_bound: Optional[float] = None,
        on_round: Optional[Callable[[RoundRecord], None]] = None) -> RunReport:
    """
    Run the sequential penalized relaxation from ``x0`` (flat start by default).

    A round whose solver result is not usable ends the run; the report keeps
    that round with its status.
    """
    kind = ConeKind(kind)
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    stopping = stopping or StoppingRule()
    x = x0 if x0 is not None else flat_start(net, adm)
    M = penalty_matrix(net, adm, alpha, eta)
    report = RunReport(case=net.name, kind=kind, mu=mu, alpha=alpha, eta=eta, best_known=best_known,
                       sdp_bound=sdp_bound, plateau_tol=stopping.plateau_tol)
    escalations = 0
    current_mu = mu
    logger.info(f"Sequential run on {net.name}: cone={kind.value} mu={mu:g} alpha={alpha:g} eta={eta:g} "
                f"rule={stopping.kind.value} budget={stopping.max_rounds}")

    for k in range(1, stopping.max_rounds + 1):
        spec = PenaltySpec(mu=current_mu, M=M, x0=x)
        start = time.perf_counter()
        prog = assemble(net, adm, kind, spec=spec, dense=dense, max_psd_dim=max_psd_dim)
        if k == 1:
            report.warnings.extend(prog.warnings)
        sol = solve(prog, settings)
        seconds = time.perf_counter() - start

        if not sol.usable():
            record = _failed_round(k, current_mu, sol, seconds)
            report.rounds.append(record)
            report.status = sol.status
            logger.warning(f"Round {k} on {net.name} ended with solver status {sol.status.value}; stopping")
            if on_round:
                on_round(record)
            break

        lp = extract_lifted(prog, sol.x)
        x_new = recover(lp)
        gap = rank_gap(lp)
        violation = residuals(net, adm, x_new).max_violation
        exact = gap < stopping.rank_gap_tol
        if gap < -1e-9:
            logger.warning(f"Round {k}: negative rank gap {gap:.3e} beyond solver tolerance")

        escalated = False
        if not exact and is_feasible(net, adm, x, stopping.feasibility_tol):
            msg = (f"round {k} started from a feasible point but returned rank gap {gap:.3e}; "
                   f"mu={current_mu:g} is not large enough")
            logger.warning(msg)
            report.warnings.append(msg)
            if stopping.escalate_mu and escalations < stopping.max_escalations:
                current_mu *= stopping.escalation_factor
                escalations += 1
                escalated = True
                logger.warning(f"Escalating mu to {current_mu:g} ({escalations}/{stopping.max_escalations})")

        record = RoundRecord(
            k=k,
            cost=objective(net, x_new.p),
            penalty=spec.mu * penalty_value(spec, lp),
            rank_gap=gap,
            max_violation=violation,
            feasible=exact and violation < stopping.feasibility_tol,
            exact=exact,
            status=sol.status,
            seconds=seconds,
            mu=spec.mu,
            iterations=sol.iterations,
            escalated=escalated,
        )
        report.rounds.append(record)
        report.status = sol.status
        # an escalated round re-solves from the same feasible start
        if not escalated:
            x = x_new
        report.point = x
        logger.info(f"Round {k}: cost={record.cost:.4f} rank_gap={gap:.3e} violation={violation:.3e} "
                    f"feasible={record.feasible} ({seconds:.2f}s)")
        if on_round:
            on_round(record)

        if stopping.kind == StoppingKind.FIRST_FEASIBLE and record.feasible:
            break
        if stopping.kind == StoppingKind.PLATEAU and len(report.rounds) >= 2:
            previous = report.rounds[-2]
            if previous.feasible and (previous.cost - record.cost) <= stopping.plateau_tol * abs(previous.cost):
                break

    if not report.feasible:
        logger.warning(f"No feasible round on {net.name} within {len(report.rounds)} round(s)")
    return report


@dataclass(frozen=True)
class BoundResult:
    """Unpenalized relaxation value; ``bound`` is NaN when the solve is not usable."""
    case: str
    kind: ConeKind
    bound: float
    status: SolveStatus
    seconds: float
    iterations: int
    size: Dict[str, int]

    @property
    def ok(self) -> bool:
        return math.isfinite(self.bound)

    def as_row(self) -> Dict[str, object]:
        return {"case": self.case, "cone": self.kind.value, "bound": self.bound, "status": self.status.value,
                "seconds": round(self.seconds, 4), "iterations": self.iterations}


def lower_bound(net: Network, adm: AdmittanceSet, kind: ConeKind, settings: Optional[SolverSettings] = None,
                dense: bool = False, max_psd_dim: int = DEFAULT_MAX_PSD_DIM,
                callback: Optional[Callable] = None) -> BoundResult:
    """Solve the relaxation without penalty and report its optimal value."""
    kind = ConeKind(kind)
    start = time.perf_counter()
    prog = assemble(net, adm, kind, dense=dense, max_psd_dim=max_psd_dim)
    sol = solve(prog, settings, callback=callback)
    seconds = time.perf_counter() - start
    bound = sol.primal_objective if sol.usable() else math.nan
    logger.info(f"Lower bound {net.name}/{kind.value}: {bound:.4f} ({sol.status.value}, {seconds:.2f}s)")
    return BoundResult(case=net.name, kind=kind, bound=bound, status=sol.status, seconds=seconds,
                       iterations=sol.iterations, size=prog.size_report())


def sweep_point(net: Network, adm: AdmittanceSet, kind: ConeKind, mu: float, alpha: float = 5.0,
                eta: float = 0.0, x0: Optional[OperatingPoint] = None,
                settings: Optional[SolverSettings] = None, dense: bool = False,
                max_psd_dim: int = DEFAULT_MAX_PSD_DIM, best_known: Optional[float] = None) -> Dict[str, object]:
    """
    One penalized solve at ``mu`` from ``x0`` (flat start by default).

    Failures are reported in the row, never raised, so a sweep can continue.
    """
    kind = ConeKind(kind)
    x0 = x0 if x0 is not None else flat_start(net, adm)
    row: Dict[str, object] = {"mu": mu, "cone": kind.value, "rank_gap": math.nan, "lifted_cost": math.nan,
                              "cost": math.nan, "max_violation": math.nan, "gap_percent": math.nan}
    start = time.perf_counter()
    try:
        spec = PenaltySpec(mu=mu, M=penalty_matrix(net, adm, alpha, eta), x0=x0)
        prog = assemble(net, adm, kind, spec=spec, dense=dense, max_psd_dim=max_psd_dim)
        sol = solve(prog, settings)
    except (ValueError, RecoveryError) as e:
        logger.error(f"Sweep point mu={mu:g} on {net.name} failed: {e}")
        row.update(status="error", seconds=time.perf_counter() - start, error=str(e))
        return row

    row.update(status=sol.status.value, seconds=round(time.perf_counter() - start, 4))
    if not sol.usable():
        return row
    lp = extract_lifted(prog, sol.x)
    x = recover(lp)
    cost = objective(net, x.p)
    gap_percent = _gap_percent(cost, best_known)
    row.update(
        rank_gap=rank_gap(lp),
        lifted_cost=lifted_cost(net, lp),
        cost=cost,
        max_violation=residuals(net, adm, x).max_violation,
        gap_percent=math.nan if gap_percent is None else gap_percent,
    )
    return row
