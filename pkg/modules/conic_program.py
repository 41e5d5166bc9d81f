"""
Conic Program Module
====================

Standard-form cone program  min c'x + offset  s.t.  Ax = b,  x in K1 x ... x Kr,
with named variable families so relaxation variables can be read back.

Features:
- Cone blocks: free, nonnegative, second-order, rotated second-order, psd(n)
- PSD blocks stored as scaled lower-triangular vectors (svec) of real symmetric matrices
- ProgramBuilder assembling sparse equality rows from affine expressions
- Structured text dump (objective, triplet equalities, block list)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


class BlockKind(str, Enum):
    FREE = "free"
    NONNEG = "nonnegative"
    SOC = "second-order"
    RSOC = "rotated-second-order"
    PSD = "psd"


@dataclass(frozen=True)
class ConeBlock:
    """Contiguous variable range [start, start + size); ``order`` is n for psd(n)."""
    kind: BlockKind
    start: int
    size: int
    order: int = 0

    @property
    def stop(self) -> int:
        return self.start + self.size

    @property
    def indices(self) -> slice:
        return slice(self.start, self.stop)


def svec_size(n: int) -> int:
    return n * (n + 1) // 2


def svec_order(size: int) -> int:
    n = int(round((np.sqrt(8 * size + 1) - 1) / 2))
    if svec_size(n) != size:
        raise ValueError(f"{size} is not a triangular number")
    return n


def svec_index(n: int, i: int, j: int) -> int:
    """Position of entry (i, j), i >= j, in the column-major lower-triangular svec of an n x n matrix."""
    if i < j:
        i, j = j, i
    return j * n - j * (j - 1) // 2 + (i - j)


def svec(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, SQRT2)
    return mat[rows, cols] * scale


def smat(vec: np.ndarray) -> np.ndarray:
    n = svec_order(vec.size)
    rows, cols = np.tril_indices(n)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
    mat = np.zeros((n, n))
    mat[rows, cols] = vec * scale
    mat[cols, rows] = vec * scale
    return mat


@dataclass(frozen=True)
class Affine:
    """Real affine expression sum(coef * x[idx]) + const over the program variables."""
    idx: Tuple[int, ...] = ()
    coef: Tuple[float, ...] = ()
    const: float = 0.0

    @staticmethod
    def var(index: int, coef: float = 1.0) -> "Affine":
        return Affine((int(index),), (float(coef),), 0.0)

    @staticmethod
    def constant(value: float) -> "Affine":
        return Affine((), (), float(value))

    def __add__(self, other: "Affine") -> "Affine":
        return Affine(self.idx + other.idx, self.coef + other.coef, self.const + other.const)

    def __sub__(self, other: "Affine") -> "Affine":
        return self + other.scaled(-1.0)

    def __neg__(self) -> "Affine":
        return self.scaled(-1.0)

    def scaled(self, factor: float) -> "Affine":
        return Affine(self.idx, tuple(c * factor for c in self.coef), self.const * factor)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """
    Immutable standard-form program.

    ``var_map`` maps family names to index arrays and covers every variable
    exactly once; ``row_map`` names equality row ranges so duals can be reassembled.
    """
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: Tuple[ConeBlock, ...]
    var_map: Dict[str, np.ndarray]
    row_map: Dict[str, slice]
    offset: float = 0.0
    name: str = "program"
    meta: Dict[str, object] = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def validate(self) -> None:
        cursor = 0
        for block in self.blocks:
            if block.start != cursor or block.size <= 0:
                raise ValueError(f"block {block} breaks the partition at {cursor}")
            if block.kind == BlockKind.PSD and svec_size(block.order) != block.size:
                raise ValueError(f"psd block of order {block.order} must have size {svec_size(block.order)}")
            if block.kind == BlockKind.SOC and block.size < 2:
                raise ValueError("second-order block needs at least 2 entries")
            if block.kind == BlockKind.RSOC and block.size < 3:
                raise ValueError("rotated second-order block needs at least 3 entries")
            cursor = block.stop
        if cursor != self.n_vars:
            raise ValueError(f"blocks cover {cursor} of {self.n_vars} variables")
        if self.A.shape != (self.n_rows, self.n_vars):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.n_rows, self.n_vars)}")
        covered = np.concatenate(list(self.var_map.values())) if self.var_map else np.zeros(0, int)
        if covered.size != np.unique(covered).size:
            raise ValueError("var_map assigns an index to more than one family")

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    def size_report(self) -> Dict[str, int]:
        report = {"variables": self.n_vars, "equalities": self.n_rows, "nonzeros": int(self.A.nnz)}
        for kind in BlockKind:
            chosen = [b for b in self.blocks if b.kind == kind]
            report[f"{kind.value}_blocks"] = len(chosen)
            report[f"{kind.value}_vars"] = sum(b.size for b in chosen)
        report["largest_psd_order"] = max((b.order for b in self.blocks if b.kind == BlockKind.PSD), default=0)
        return report

    def to_text(self) -> str:
        """Structured dump for debugging and cross-solver comparison."""
        lines = [f"# program {self.name}", f"variables {self.n_vars}", f"equalities {self.n_rows}",
                 f"offset {self.offset!r}", "objective"]
        for j in np.flatnonzero(self.c):
            lines.append(f"{j} {self.c[j]!r}")
        lines.append("equalities")
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for i, j, val in zip(coo.row[order], coo.col[order], coo.data[order]):
            lines.append(f"{i} {j} {val!r}")
        lines.append("rhs")
        for i in np.flatnonzero(self.b):
            lines.append(f"{i} {self.b[i]!r}")
        lines.append("blocks")
        for block in self.blocks:
            order = f" {block.order}" if block.kind == BlockKind.PSD else ""
            lines.append(f"{block.kind.value} {block.start} {block.size}{order}")
        lines.append("families")
        for name, idx in self.var_map.items():
            lines.append(f"{name} {idx.size}")
        return "\n".join(lines) + "\n"


class ProgramBuilder:
    """Accumulates variables, cone blocks and equality rows; ``build`` freezes them."""

    def __init__(self, name: str = "program"):
        self.name = name
        self._blocks: List[ConeBlock] = []
        self._families: Dict[str, List[np.ndarray]] = {}
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._vals: List[np.ndarray] = []
        self._rhs: List[float] = []
        self._row_map: Dict[str, slice] = {}
        self._cost: Dict[int, float] = {}
        self.offset = 0.0
        self.n_vars = 0

    # variables
    def _allocate(self, family: str, kind: BlockKind, size: int, order: int = 0) -> np.ndarray:
        idx = np.arange(self.n_vars, self.n_vars + size)
        last = self._blocks[-1] if self._blocks else None
        if last is not None and kind in (BlockKind.FREE, BlockKind.NONNEG) and last.kind == kind:
            self._blocks[-1] = ConeBlock(kind, last.start, last.size + size)
        else:
            self._blocks.append(ConeBlock(kind, self.n_vars, size, order))
        self._families.setdefault(family, []).append(idx)
        self.n_vars += size
        return idx

    def _empty(self, family: str) -> np.ndarray:
        idx = np.zeros(0, dtype=int)
        self._families.setdefault(family, []).append(idx)
        return idx

    def free(self, family: str, size: int) -> np.ndarray:
        return self._allocate(family, BlockKind.FREE, size) if size > 0 else self._empty(family)

    def nonneg(self, family: str, size: int) -> np.ndarray:
        return self._allocate(family, BlockKind.NONNEG, size) if size > 0 else self._empty(family)

    # rows
    def add_row(self, expr: Affine, rhs: float = 0.0) -> int:
        """Impose expr == rhs."""
        row = len(self._rhs)
        if expr.idx:
            self._rows.append(np.full(len(expr.idx), row))
            self._cols.append(np.asarray(expr.idx, dtype=int))
            self._vals.append(np.asarray(expr.coef, dtype=float))
        self._rhs.append(rhs - expr.const)
        return row

    def name_rows(self, label: str, start: int) -> None:
        self._row_map[label] = slice(start, len(self._rhs))

    @property
    def n_rows(self) -> int:
        return len(self._rhs)

    def link(self, family: str, kind: BlockKind, exprs: Sequence[Affine], order: int = 0) -> np.ndarray:
        """Create one cone block whose entries equal ``exprs``."""
        idx = self._allocate(family, kind, len(exprs), order)
        for k, expr in zip(idx, exprs):
            self.add_row(Affine.var(k) - expr)
        return idx

    def bound(self, family: str, expr: Affine, lower: Optional[float], upper: Optional[float]) -> None:
        """lower <= expr <= upper with nonnegative slacks; equal bounds become one equality."""
        if lower is not None and upper is not None and lower == upper:
            self.add_row(expr, lower)
            return
        if lower is not None and np.isfinite(lower):
            s = self.nonneg(family, 1)[0]
            self.add_row(expr - Affine.var(s), lower)
        if upper is not None and np.isfinite(upper):
            s = self.nonneg(family, 1)[0]
            self.add_row(expr + Affine.var(s), upper)

    def psd(self, family: str, entries: Dict[Tuple[int, int], Affine], order: int) -> np.ndarray:
        """
        psd(order) block of a real symmetric matrix given by its lower-triangular entries.

        Missing entries are zero.
        """
        exprs = []
        for j in range(order):
            for i in range(j, order):
                expr = entries.get((i, j), Affine())
                exprs.append(expr if i == j else expr.scaled(SQRT2))
        return self.link(family, BlockKind.PSD, exprs, order)

    # objective
    def add_cost(self, index: int, value: float) -> None:
        self._cost[int(index)] = self._cost.get(int(index), 0.0) + float(value)

    def add_costs(self, indices: Iterable[int], values: Iterable[float]) -> None:
        for i, v in zip(indices, values):
            self.add_cost(i, v)

    def build(self, meta: Optional[Dict[str, object]] = None, warnings: Sequence[str] = ()) -> ConicProgram:
        c = np.zeros(self.n_vars)
        for i, v in self._cost.items():
            c[i] += v
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._rhs), self.n_vars))
        A.sum_duplicates()
        A.eliminate_zeros()
        var_map = {k: np.concatenate(v) for k, v in self._families.items()}
        prog = ConicProgram(
            c=c,
            A=A,
            b=np.asarray(self._rhs, dtype=float),
            blocks=tuple(self._blocks),
            var_map=var_map,
            row_map=dict(self._row_map),
            offset=self.offset,
            name=self.name,
            meta=dict(meta or {}),
            warnings=tuple(warnings),
        )
        prog.validate()
        logger.debug(f"Built program {self.name}: {prog.size_report()}")
        return prog
