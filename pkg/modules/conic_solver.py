"""
Conic Solver Module
===================

Primal-dual interior-point method for standard-form cone programs built by
``conic_program.ProgramBuilder``.

Features:
- Homogeneous self-dual embedding: certifies optimality or infeasibility
- Nesterov-Todd scaling for orthant, second-order, rotated and PSD blocks
- Mehrotra predictor-corrector steps
- Regularized quasi-definite KKT solves with iterative refinement and retries
- Optional per-iteration log stream through a callback
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, validator

from .cones import Cone, make_cone
from .conic_program import BlockKind, ConicProgram
from .kkt_solver import LINEAR_SOLVERS, KktFactorizationError, QuasiDefiniteKkt, hessian_matrix

logger = logging.getLogger(__name__)


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal-infeasible"
    DUAL_INFEASIBLE = "dual-infeasible"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL_FAILURE = "numerical-failure"


class SolverSettings(BaseModel):
    """Interior-point parameters."""
    max_iterations: int = Field(200, gt=0, description="Iteration cap")
    feasibility_tol: float = Field(1e-8, gt=0, lt=1, description="Relative primal/dual residual tolerance")
    gap_tol: float = Field(1e-8, gt=0, lt=1, description="Relative complementarity gap tolerance")
    step_fraction: float = Field(0.99, gt=0, le=1, description="Fraction of the step to the cone boundary")
    regularization: float = Field(1e-9, gt=0, lt=1, description="Static KKT regularization floor")
    refinement_steps: int = Field(3, ge=0, description="Iterative refinement passes per KKT solve")
    factorization_retries: int = Field(3, ge=0, description="Regularization increases before numerical failure")
    stall_iterations: int = Field(25, gt=0, description="Iterations without progress before giving up early")
    linear_solver: str = Field("superlu", description="KKT factorization backend")

    @validator("linear_solver")
    def known_backend(cls, v):
        if v not in LINEAR_SOLVERS:
            raise ValueError(f"unknown linear solver '{v}', choose from {sorted(LINEAR_SOLVERS)}")
        return v


@dataclass(frozen=True)
class IterationRecord:
    k: int
    pcost: float
    dcost: float
    gap: float
    pres: float
    dres: float
    hsde: float
    step: float

    def to_line(self) -> str:
        return (
            f"ITER k={self.k} pcost={self.pcost:.8e} dcost={self.dcost:.8e} gap={self.gap:.3e} "
            f"pres={self.pres:.3e} dres={self.dres:.3e} hsde={self.hsde:.3e} step={self.step:.4f}"
        )


@dataclass(frozen=True, eq=False)
class ConicSolution:
    """
    Solver result in the program's original scaling.

    ``primal_residual``, ``dual_residual`` and ``gap`` are the relative
    termination measures; ``kkt_residuals`` gives absolute ones.
    """
    status: SolveStatus
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    seconds: float
    certificate: Optional[np.ndarray] = None
    certificate_residual: Optional[float] = None
    history: Tuple[IterationRecord, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == SolveStatus.OPTIMAL

    def usable(self, tol: float = 1e-6) -> bool:
        """Optimal, or stopped early with every relative measure below ``tol``."""
        if self.status == SolveStatus.OPTIMAL:
            return True
        return self.status == SolveStatus.ITERATION_LIMIT and max(self.primal_residual, self.dual_residual, self.gap) <= tol

    def values(self, prog: ConicProgram, family: str) -> np.ndarray:
        return self.x[prog.var_map[family]]

    def summary(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.primal_objective,
            "iterations": self.iterations,
            "seconds": round(self.seconds, 4),
            "pres": self.primal_residual,
            "dres": self.dual_residual,
            "gap": self.gap,
        }


def kkt_residuals(prog: ConicProgram, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> Tuple[float, float, float]:
    """
    Absolute residuals ||Ax - b||, ||c - A'y - z|| and |c'x - b'y|.

    Free entries of ``z`` are ignored.
    """
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    z = z.copy()
    for block in prog.blocks:
        if block.kind == BlockKind.FREE:
            z[block.indices] = 0.0
    r_primal = float(np.linalg.norm(prog.A @ x - prog.b))
    r_dual = float(np.linalg.norm(prog.c - prog.A.T @ y - z))
    gap = float(abs(prog.c @ x - prog.b @ y))
    return r_primal, r_dual, gap


class _Embedding:
    """Scaled data, cone bookkeeping and vector helpers of one solve."""

    def __init__(self, prog: ConicProgram):
        A = prog.A.tocsr()
        row_norm = np.asarray(abs(A).max(axis=1).todense()).ravel() if A.shape[0] else np.zeros(0)
        self.row_scale = np.where(row_norm > 0, 1.0 / np.where(row_norm > 0, row_norm, 1.0), 1.0)
        A = (A.multiply(self.row_scale[:, None])).tocsr() if A.shape[0] else A
        b = prog.b * self.row_scale
        self.b_scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
        self.c_scale = max(1.0, float(np.max(np.abs(prog.c), initial=0.0)))
        self.A = A
        self.b = b / self.b_scale
        self.c = prog.c / self.c_scale
        self.n = prog.n_vars
        self.blocks = [blk for blk in prog.blocks if blk.kind != BlockKind.FREE]
        self.cones: List[Cone] = [make_cone(blk) for blk in self.blocks]
        self.slices = [blk.indices for blk in self.blocks]
        self.degree = sum(cone.degree for cone in self.cones)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        for sl, cone in zip(self.slices, self.cones):
            e[sl] = cone.identity()
        return e

    def max_step(self, x: np.ndarray, dx: np.ndarray, z: np.ndarray, dz: np.ndarray) -> float:
        alpha = np.inf
        for sl, cone in zip(self.slices, self.cones):
            alpha = min(alpha, cone.max_step(x[sl], dx[sl]), cone.max_step(z[sl], dz[sl]))
        return alpha


def _ratio_step(value: float, delta: float) -> float:
    return -value / delta if delta < 0 else np.inf


def solve(prog: ConicProgram, settings: Optional[SolverSettings] = None,
          callback: Optional[Callable[[IterationRecord], None]] = None) -> ConicSolution:
    """
    Solve ``min c'x + offset  s.t. Ax = b, x in K``.

    Args:
        prog: standard-form program
        settings: interior-point parameters (defaults when omitted)
        callback: receives one IterationRecord per iteration

    Returns:
        ConicSolution; failures are reported through ``status``, never raised
    """
    settings = settings or SolverSettings()
    start = time.perf_counter()
    emb = _Embedding(prog)
    A, b, c = emb.A, emb.b, emb.c
    n = emb.n
    kkt = QuasiDefiniteKkt(A, settings.regularization, settings.refinement_steps, settings.linear_solver)

    x = emb.identity()
    z = emb.identity()
    y = np.zeros(A.shape[0])
    tau, kappa = 1.0, 1.0
    b_norm = max(1.0, float(np.linalg.norm(b)))
    c_norm = max(1.0, float(np.linalg.norm(c)))

    history: List[IterationRecord] = []
    best = None
    status = SolveStatus.ITERATION_LIMIT
    certificate, certificate_residual = None, None
    step = 0.0
    stalled = 0
    k = 0

    for k in range(settings.max_iterations + 1):
        Ax = A @ x
        ATy = A.T @ y
        r_p = b * tau - Ax
        r_d = c * tau - ATy - z
        r_g = kappa + c @ x - b @ y
        pcost, dcost = c @ x / tau, b @ y / tau
        pres = np.linalg.norm(r_p) / (tau * b_norm)
        dres = np.linalg.norm(r_d) / (tau * c_norm)
        comp = (x @ z) / tau ** 2
        rel_gap = comp / (1.0 + abs(pcost))
        hsde = float(np.sqrt(r_p @ r_p + r_d @ r_d + r_g ** 2))
        record = IterationRecord(
            k=k,
            pcost=pcost * emb.c_scale * emb.b_scale + prog.offset,
            dcost=dcost * emb.c_scale * emb.b_scale + prog.offset,
            gap=rel_gap, pres=pres, dres=dres, hsde=hsde, step=step,
        )
        history.append(record)
        if callback is not None:
            callback(record)

        merit = max(pres, dres, rel_gap)
        if best is None or merit < 0.999 * best[0]:
            stalled = 0
        else:
            stalled += 1
        if best is None or merit < best[0]:
            best = (merit, x.copy(), y.copy(), z.copy(), tau, pres, dres, rel_gap)

        if pres <= settings.feasibility_tol and dres <= settings.feasibility_tol and rel_gap <= settings.gap_tol:
            status = SolveStatus.OPTIMAL
            break
        by, cx = b @ y, c @ x
        if tau < kappa and by > 0:
            residual = np.linalg.norm(ATy + z) / by
            if residual <= settings.feasibility_tol:
                status = SolveStatus.PRIMAL_INFEASIBLE
                certificate = emb.row_scale * y / by
                certificate_residual = float(residual)
                break
        if tau < kappa and cx < 0:
            residual = np.linalg.norm(Ax) / -cx
            if residual <= settings.feasibility_tol:
                status = SolveStatus.DUAL_INFEASIBLE
                certificate = x / -cx
                certificate_residual = float(residual)
                break
        if k == settings.max_iterations:
            break
        if stalled >= settings.stall_iterations:
            logger.info(f"No progress for {stalled} iterations, stopping with best merit {best[0]:.2e}")
            break

        try:
            scalings = [cone.scaling(x[sl], z[sl]) for sl, cone in zip(emb.slices, emb.cones)]
            hess = [s.hessian() for s in scalings]
            H = hessian_matrix(n, emb.slices, hess)
            kkt.factor_with_retries(H, settings.factorization_retries)
            x1, u1 = kkt.solve(-c, b)
        except (np.linalg.LinAlgError, KktFactorizationError, ValueError) as e:
            logger.warning(f"Solver breakdown at iteration {k}: {e}")
            status = SolveStatus.NUMERICAL_FAILURE
            break

        mu = (x @ z + tau * kappa) / (emb.degree + 1)

        def newton(ds: List[np.ndarray], eta: float, r_tk: float):
            winv_ds = np.zeros(n)
            for sl, s, d in zip(emb.slices, scalings, ds):
                winv_ds[sl] = s.w_inv(d)
            x2, u2 = kkt.solve(-eta * r_d + winv_ds, eta * r_p)
            denom = kappa / tau - b @ u1 - c @ x1
            dtau = (eta * r_g + r_tk / tau + b @ u2 + c @ x2) / denom
            dx = x2 + dtau * x1
            dy = -(u2 + dtau * u1)
            dz = np.zeros(n)
            for sl, h in zip(emb.slices, hess):
                hdx = h * dx[sl] if h.ndim == 1 else h @ dx[sl]
                dz[sl] = winv_ds[sl] - hdx
            dkappa = (r_tk - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        def step_length(dx, dz, dtau, dkappa) -> float:
            return min(emb.max_step(x, dx, z, dz), _ratio_step(tau, dtau), _ratio_step(kappa, dkappa))

        try:
            lam = [s.lam for s in scalings]
            aff = newton([-l for l in lam], 1.0, -tau * kappa)
            alpha_aff = min(1.0, step_length(aff[0], aff[2], aff[3], aff[4]))
            sigma = (1.0 - alpha_aff) ** 3

            ds = []
            for sl, cone, s, l in zip(emb.slices, emb.cones, scalings, lam):
                cross = cone.product(s.w_inv_t(aff[0][sl]), s.w(aff[2][sl]))
                r_c = -cone.product(l, l) + sigma * mu * cone.algebra_identity() - cross
                ds.append(cone.divide(l, r_c))
            r_tk = -tau * kappa + sigma * mu - aff[3] * aff[4]
            dx, dy, dz, dtau, dkappa = newton(ds, 1.0 - sigma, r_tk)
            step = min(1.0, settings.step_fraction * step_length(dx, dz, dtau, dkappa))
        except (np.linalg.LinAlgError, KktFactorizationError, ValueError) as e:
            logger.warning(f"Solver breakdown at iteration {k}: {e}")
            status = SolveStatus.NUMERICAL_FAILURE
            break
        if not np.isfinite(step) or step <= 0:
            status = SolveStatus.NUMERICAL_FAILURE
            break

        x = x + step * dx
        y = y + step * dy
        z = z + step * dz
        tau = tau + step * dtau
        kappa = kappa + step * dkappa

    if status in (SolveStatus.ITERATION_LIMIT, SolveStatus.NUMERICAL_FAILURE) and best is not None:
        _, x, y, z, tau, pres, dres, rel_gap = best

    scale = emb.b_scale / tau
    x_out = x * scale
    y_out = emb.row_scale * y * (emb.c_scale / tau)
    z_out = z * (emb.c_scale / tau)
    seconds = time.perf_counter() - start
    solution = ConicSolution(
        status=status,
        x=x_out,
        y=y_out,
        z=z_out,
        primal_objective=float(prog.c @ x_out + prog.offset),
        dual_objective=float(prog.b @ y_out + prog.offset),
        primal_residual=float(pres),
        dual_residual=float(dres),
        gap=float(rel_gap),
        iterations=k,
        seconds=seconds,
        certificate=certificate,
        certificate_residual=certificate_residual,
        history=tuple(history),
    )
    logger.info(
        f"Solved {prog.name}: {status.value} in {k} iterations ({seconds:.2f}s), objective {solution.primal_objective:.6f}"
    )
    return solution
