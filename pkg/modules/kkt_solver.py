"""Direct solvers for the regularized quasi-definite KKT system of the interior-point method."""

import logging
from typing import Literal, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class KktFactorizationError(RuntimeError):
    """The regularized KKT matrix could not be factorized."""


class LinearSolver(Protocol):
    """Factorize once per iteration, solve several right-hand sides."""

    def update(self, kkt: sp.spmatrix) -> None:
        ...

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        ...

    def format(self) -> str:
        ...


class SuperLuSolver:
    """scipy SuperLU with partial pivoting; robust on the indefinite saddle-point form."""

    def __init__(self):
        self.factorization = None

    def update(self, kkt: sp.spmatrix) -> None:
        try:
            self.factorization = spla.splu(kkt.tocsc(), permc_spec="COLAMD")
        except RuntimeError as e:
            raise KktFactorizationError(str(e)) from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.factorization.solve(rhs)

    def format(self) -> Literal["csc"]:
        return "csc"


class ScipySolver:
    """Wrapper around scipy.sparse.linalg.factorized."""

    def __init__(self):
        self.factorization = None

    def update(self, kkt: sp.spmatrix) -> None:
        try:
            self.factorization = spla.factorized(kkt.tocsc())
        except RuntimeError as e:
            raise KktFactorizationError(str(e)) from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.factorization(rhs)

    def format(self) -> Literal["csc"]:
        return "csc"


LINEAR_SOLVERS = {"superlu": SuperLuSolver, "scipy": ScipySolver}


def hessian_matrix(n_vars: int, slices: Sequence[slice], blocks: Sequence[np.ndarray]) -> sp.csc_matrix:
    """
    Assemble the block-diagonal scaling matrix H over all variables.

    ``blocks`` holds a 1-D diagonal (orthant) or a dense square matrix per cone
    slice; free variables get zero rows.
    """
    rows, cols, vals = [], [], []
    for sl, blk in zip(slices, blocks):
        idx = np.arange(sl.start, sl.stop)
        if blk.ndim == 1:
            rows.append(idx)
            cols.append(idx)
            vals.append(blk)
        else:
            r, c = np.meshgrid(idx, idx, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(blk.ravel())
    if not rows:
        return sp.csc_matrix((n_vars, n_vars))
    return sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_vars, n_vars)
    )


class QuasiDefiniteKkt:
    """
    K = [[H + delta I, A'], [A, -delta I]] factorized once, solved with
    iterative refinement against the unregularized matrix.
    """

    def __init__(self, A: sp.csr_matrix, regularization: float = 1e-9, refinement_steps: int = 3,
                 solver: str = "superlu"):
        self.A = A.tocsc()
        self.n, self.m = A.shape[1], A.shape[0]
        self.regularization = regularization
        self.refinement_steps = refinement_steps
        self.solver_name = solver
        self._solver: LinearSolver = LINEAR_SOLVERS[solver]()
        self._K0 = None

    def factor(self, H: sp.spmatrix, delta: float) -> None:
        if self.m == 0:
            K0 = sp.csc_matrix(H)
        else:
            K0 = sp.bmat([[H, self.A.T], [self.A, None]], format="csc")
        reg = sp.diags(np.concatenate([np.full(self.n, delta), np.full(self.m, -delta)]))
        K = (K0 + reg).tocsc()
        self._solver.update(K)
        self._K0 = K0

    def factor_with_retries(self, H: sp.spmatrix, retries: int = 3) -> float:
        """Factorize, raising delta by 100x on breakdown; returns the delta used."""
        delta = self.regularization
        for attempt in range(retries + 1):
            try:
                self.factor(H, delta)
                return delta
            except KktFactorizationError as e:
                logger.debug(f"KKT factorization failed at delta={delta:.1e} (attempt {attempt + 1}): {e}")
                delta *= 100.0
        raise KktFactorizationError(f"KKT factorization failed after {retries} regularization increases")

    def solve(self, rhs_x: np.ndarray, rhs_y: np.ndarray) -> tuple:
        rhs = np.concatenate([rhs_x, rhs_y])
        sol = self._solver.solve(rhs)
        norm = 1.0 + np.linalg.norm(rhs)
        for _ in range(self.refinement_steps):
            res = rhs - self._K0 @ sol
            if np.linalg.norm(res) <= 1e-14 * norm:
                break
            sol = sol + self._solver.solve(res)
        if not np.all(np.isfinite(sol)):
            raise KktFactorizationError("non-finite KKT solution")
        return sol[:self.n], sol[self.n:]
