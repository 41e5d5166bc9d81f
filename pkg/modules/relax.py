"""
Relaxation Module
=================

Lifting of the OPF problem to (W, o, r, f_from, f_to), the three cones imposed
on W - vv*, the penalty matrix and penalty function, and assembly of the
(penalized) relaxation as a standard-form conic program.

Features:
- Exact lift of an operating point and cone membership tests (PSD, 2x2 minors, parabolic)
- Dual-cone interior certificates for the penalty matrix
- Penalty matrix from the series power matrices with the inductive/capacitive sign rule
- Penalty function evaluated on lifted points
- Program assembly for SDP (dense or chordal bags), SOCP and parabolic relaxations
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from .chordal import ChordalDecomposition, decompose, single_bag
from .conic_program import Affine, BlockKind, ConicProgram, ProgramBuilder
from .netmodel import AdmittanceSet, Network
from .opf import OperatingPoint

logger = logging.getLogger(__name__)

DEFAULT_MAX_PSD_DIM = 64
REALNESS_TOL = 1e-9


class RecoveryError(RuntimeError):
    """An operating point was requested from a relaxation without voltage variables."""


class ConeKind(str, Enum):
    SDP = "sdp"
    SOCP = "socp"
    PARABOLIC = "parabolic"


# ---------------------------------------------------------------------------
# Lifted points
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LiftedPoint:
    """
    Relaxation variables joined with the operating-point variables.

    W is stored on its pattern: the diagonal plus ``pairs`` (i < j). Entries of
    ``o`` or ``f_from``/``f_to`` that a program does not carry are NaN; ``v`` is
    None for relaxations solved without voltage variables.
    """
    w_diag: np.ndarray
    pairs: np.ndarray
    w_off: np.ndarray
    o: np.ndarray
    r: np.ndarray
    f_from: np.ndarray
    f_to: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray
    v: Optional[np.ndarray] = None

    @property
    def n_bus(self) -> int:
        return self.w_diag.size

    @property
    def has_voltages(self) -> bool:
        return self.v is not None

    @property
    def x(self) -> OperatingPoint:
        if self.v is None:
            raise RecoveryError(
                "relaxation carries no voltage variables; it only yields a lower bound "
                "(assemble with a PenaltySpec to recover an operating point)"
            )
        return OperatingPoint(self.v, self.p, self.q, self.s_from, self.s_to)

    def dense_w(self) -> np.ndarray:
        """W as a dense Hermitian matrix, zero off the pattern."""
        W = np.diag(self.w_diag.astype(complex))
        if self.pairs.size:
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            W[i, j] = self.w_off
            W[j, i] = np.conj(self.w_off)
        return W

    def gap_matrix(self) -> np.ndarray:
        """W - vv* on the pattern (zero elsewhere)."""
        H = self.dense_w()
        if self.v is None:
            return H
        outer = np.outer(self.v, np.conj(self.v))
        mask = np.eye(self.n_bus, dtype=bool)
        if self.pairs.size:
            mask[self.pairs[:, 0], self.pairs[:, 1]] = True
            mask[self.pairs[:, 1], self.pairs[:, 0]] = True
        return H - np.where(mask, outer, 0.0)

    def rank_gap(self) -> float:
        """tr{W - vv*}."""
        v = np.zeros(self.n_bus) if self.v is None else self.v
        return float(np.sum(self.w_diag - np.abs(v) ** 2))


def lift(net: Network, x: OperatingPoint, pairs: Optional[np.ndarray] = None) -> LiftedPoint:
    """Exact lift W = vv*, o = p^2, r = q^2, f = |s|^2 on the pattern ``pairs`` (edges by default)."""
    x.check_dimensions(net)
    pairs = net.edges if pairs is None else np.asarray(pairs, dtype=int).reshape(-1, 2)
    v = x.v
    w_off = v[pairs[:, 0]] * np.conj(v[pairs[:, 1]]) if pairs.size else np.zeros(0, complex)
    return LiftedPoint(
        w_diag=np.abs(v) ** 2,
        pairs=pairs,
        w_off=w_off,
        o=x.p ** 2,
        r=x.q ** 2,
        f_from=np.abs(x.s_from) ** 2,
        f_to=np.abs(x.s_to) ** 2,
        p=x.p.copy(),
        q=x.q.copy(),
        s_from=x.s_from.copy(),
        s_to=x.s_to.copy(),
        v=v.copy(),
    )


# ---------------------------------------------------------------------------
# Cone membership
# ---------------------------------------------------------------------------

def _all_pairs(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.column_stack([i, j])


def cone_margin(H: np.ndarray, kind: ConeKind, pairs: Optional[np.ndarray] = None,
                bags: Optional[Sequence[Sequence[int]]] = None) -> float:
    """
    Worst slack of the defining inequalities of C_kind at H (>= 0 means member).

    ``pairs`` restricts the 2x2 tests to a pattern (all pairs by default);
    ``bags`` switches the PSD test to principal submatrices.
    """
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    diag = H.diagonal().real
    if kind == ConeKind.SDP:
        if bags:
            return float(min(eigh(H[np.ix_(bag, bag)], eigvals_only=True)[0] for bag in bags))
        return float(eigh(H, eigvals_only=True)[0]) if n else 0.0

    pairs = _all_pairs(n) if pairs is None else np.asarray(pairs, dtype=int).reshape(-1, 2)
    worst = float(diag.min()) if n else 0.0
    if pairs.size == 0:
        return worst
    i, j = pairs[:, 0], pairs[:, 1]
    hij = H[i, j]
    if kind == ConeKind.SOCP:
        minors = diag[i] * diag[j] - np.abs(hij) ** 2
        return min(worst, float(minors.min()))
    total = diag[i] + diag[j]
    parabolic = np.minimum(total - 2 * np.abs(hij.real), total - 2 * np.abs(hij.imag))
    return min(worst, float(parabolic.min()))


def cone_membership(H: np.ndarray, kind: ConeKind, margin: float = 0.0, pairs: Optional[np.ndarray] = None,
                    bags: Optional[Sequence[Sequence[int]]] = None) -> bool:
    return cone_margin(H, kind, pairs=pairs, bags=bags) >= -margin


# ---------------------------------------------------------------------------
# Penalty matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    """
    M = sum over edges of [e_i, e_j] B_e [e_i, e_j]', with B_e = M_ij + alpha I.

    ``blocks`` are ordered (i, j) with i < j; ``zeta`` records the sign chosen
    for every line and ``line_blocks`` the per-line contribution before alpha.
    """
    n: int
    edges: np.ndarray
    blocks: np.ndarray
    zeta: np.ndarray
    line_blocks: np.ndarray
    alpha: float
    eta: float

    def dense(self) -> np.ndarray:
        M = np.zeros((self.n, self.n), dtype=complex)
        if self.edges.size:
            i, j = self.edges[:, 0], self.edges[:, 1]
            np.add.at(M, (i, i), self.blocks[:, 0, 0])
            np.add.at(M, (i, j), self.blocks[:, 0, 1])
            np.add.at(M, (j, i), self.blocks[:, 1, 0])
            np.add.at(M, (j, j), self.blocks[:, 1, 1])
        return M

    def diagonal(self) -> np.ndarray:
        return self.dense().diagonal().real.copy()

    def off_diagonal(self) -> np.ndarray:
        """M_ij for every edge (i < j)."""
        return self.blocks[:, 0, 1].copy()

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.dense() @ v

    @classmethod
    def scaled_identity(cls, net: Network, scale: float = 1.0) -> "PenaltyMatrix":
        """Blocks that sum to scale * I (each bus split equally among its edges)."""
        edges = net.edges
        deg = np.bincount(edges.ravel(), minlength=net.n_bus).astype(float) if edges.size else np.zeros(net.n_bus)
        blocks = np.zeros((len(edges), 2, 2), dtype=complex)
        if edges.size:
            blocks[:, 0, 0] = scale / deg[edges[:, 0]]
            blocks[:, 1, 1] = scale / deg[edges[:, 1]]
        return cls(n=net.n_bus, edges=edges, blocks=blocks, zeta=np.ones(net.n_branch),
                   line_blocks=np.zeros((net.n_branch, 2, 2), dtype=complex), alpha=0.0, eta=0.0)


def penalty_matrix(net: Network, adm: AdmittanceSet, alpha: float, eta: float) -> PenaltyMatrix:
    """
    Penalty matrix from the line power matrices.

    Per line: zeta (Yq_from + Yq_to) + eta/(1 - eta) (Yp_from + Yp_to), with
    zeta = +1 for inductive series susceptance (b <= 0) and -1 otherwise;
    parallel lines accumulate on their bus pair, then alpha I is added per pair.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")

    zeta = np.where(net.y_series.imag <= 0, 1.0, -1.0)
    weight = eta / (1.0 - eta)
    line_blocks = zeta[:, None, None] * (adm.Yq_from + adm.Yq_to) + weight * (adm.Yp_from + adm.Yp_to)
    flipped = net.from_bus > net.to_bus
    line_blocks[flipped] = line_blocks[flipped][:, ::-1, ::-1]

    edges = net.edges
    blocks = np.zeros((len(edges), 2, 2), dtype=complex)
    np.add.at(blocks, net.line_edge, line_blocks)
    blocks = blocks + alpha * np.eye(2)

    capacitive = int(np.sum(zeta < 0))
    if capacitive:
        logger.info(f"Penalty matrix for {net.name}: {capacitive} capacitive line(s) use zeta = -1")
    return PenaltyMatrix(
        n=net.n_bus, edges=edges, blocks=blocks, zeta=zeta, line_blocks=line_blocks, alpha=alpha, eta=eta
    )


@dataclass(frozen=True)
class DualConeVerdict:
    """``member``: M in D_k; ``interior``: some epsilon > 0 keeps M - epsilon I in D_k."""
    kind: ConeKind
    member: bool
    interior: bool
    epsilon: float

    @property
    def label(self) -> str:
        return {ConeKind.SDP: "D1", ConeKind.SOCP: "D2", ConeKind.PARABOLIC: "D3"}[self.kind]


def dual_cone_membership(M: PenaltyMatrix, kind: ConeKind, tol: float = 1e-9) -> DualConeVerdict:
    """
    Membership of M in the dual cone D_k and a certified interior margin.

    D1 uses the smallest eigenvalue of M; D2 splits epsilon I equally among the
    edges at each bus and takes the worst generalized eigenvalue of the edge
    blocks; D3 uses the diagonal-dominance slack with |Re| + |Im| off-diagonals.
    """
    dense = M.dense()
    if kind == ConeKind.SDP:
        eps = float(eigh(dense, eigvals_only=True)[0]) if M.n else np.inf
        member = eps >= -tol
    elif kind == ConeKind.SOCP:
        edges = M.edges
        deg = np.bincount(edges.ravel(), minlength=M.n) if edges.size else np.zeros(M.n, dtype=int)
        block_min = [float(eigh(b, eigvals_only=True)[0]) for b in M.blocks]
        member = all(b >= -tol for b in block_min)
        if np.any(deg == 0):
            eps = 0.0
        else:
            split = []
            for (i, j), block in zip(edges, M.blocks):
                scale = np.sqrt(np.array([deg[i], deg[j]], dtype=float))
                split.append(float(eigh(scale[:, None] * block * scale[None, :], eigvals_only=True)[0]))
            eps = min(split) if split else np.inf
    else:
        off = dense - np.diag(dense.diagonal())
        row = np.sum(np.abs(off.real) + np.abs(off.imag), axis=1)
        slack = dense.diagonal().real - row
        eps = float(slack.min()) if M.n else np.inf
        member = eps >= -tol
    interior = bool(member and eps > tol)
    return DualConeVerdict(kind=kind, member=bool(member), interior=interior, epsilon=float(eps))


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """mu * kappa_{M, x0} added to the lifted objective."""
    mu: float
    M: PenaltyMatrix
    x0: OperatingPoint

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")

    @property
    def alpha(self) -> float:
        return self.M.alpha

    @property
    def eta(self) -> float:
        return self.M.eta

    def with_point(self, x0: OperatingPoint) -> "PenaltySpec":
        return PenaltySpec(mu=self.mu, M=self.M, x0=x0)

    def with_mu(self, mu: float) -> "PenaltySpec":
        return PenaltySpec(mu=mu, M=self.M, x0=self.x0)


def penalty_value(spec: PenaltySpec, lp: LiftedPoint) -> float:
    """kappa_{M, x0} at a lifted point (without the mu factor)."""
    if lp.v is None:
        raise RecoveryError("penalty needs a lifted point with voltages")
    x0, M = spec.x0, spec.M
    total = float(np.sum(lp.o) - 2 * x0.p @ lp.p + x0.p @ x0.p)
    total += float(np.sum(lp.r) - 2 * x0.q @ lp.q + x0.q @ x0.q)
    for f, s, s0 in ((lp.f_from, lp.s_from, x0.s_from), (lp.f_to, lp.s_to, x0.s_to)):
        total += float(np.sum(f) - 2 * np.real(np.vdot(s0, s)) + np.vdot(s0, s0).real)

    lookup = {(int(i), int(j)): e for e, (i, j) in enumerate(lp.pairs)}
    try:
        where = np.array([lookup[(int(i), int(j))] for i, j in M.edges], dtype=int)
    except KeyError as e:
        raise ValueError(f"penalty edge {e} is outside the lifted pattern") from e
    diag = np.zeros(M.n, dtype=complex)
    if M.edges.size:
        np.add.at(diag, M.edges[:, 0], M.blocks[:, 0, 0])
        np.add.at(diag, M.edges[:, 1], M.blocks[:, 1, 1])
        w = lp.w_off[where]
        trace = np.sum(lp.w_diag * diag) + np.sum(w * M.blocks[:, 1, 0] + np.conj(w) * M.blocks[:, 0, 1])
    else:
        trace = np.sum(lp.w_diag * diag)
    if abs(trace.imag) > REALNESS_TOL * (1.0 + abs(trace.real)):
        raise ValueError(f"tr(WM) has imaginary part {trace.imag:.3e}; M is not Hermitian")

    Mv0 = M.apply(x0.v)
    total += float(trace.real - 2 * np.real(np.vdot(Mv0, lp.v)) + np.vdot(x0.v, Mv0).real)
    return total


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

class _Assembler:
    """Allocates the model variables and writes every row of the relaxation."""

    def __init__(self, net: Network, adm: AdmittanceSet, kind: ConeKind, penalized: bool,
                 pairs: np.ndarray, name: str):
        self.net, self.adm, self.kind, self.penalized = net, adm, kind, penalized
        self.pairs = pairs
        self.pair_index = {(int(i), int(j)): e for e, (i, j) in enumerate(pairs)}
        n, g, m = net.n_bus, net.n_gen, net.n_branch
        b = self.builder = ProgramBuilder(name=name)

        self.v_re = b.free("v_re", n if penalized else 0)
        self.v_im = b.free("v_im", n if penalized else 0)
        self.w_diag = b.free("w_diag", n)
        self.w_re = b.free("w_re", len(pairs))
        self.w_im = b.free("w_im", len(pairs))
        self.p = b.free("p", g)
        self.q = b.free("q", g)
        self.o_gens = np.arange(g) if penalized else np.flatnonzero(net.c2 > 0)
        self.o = b.free("o", len(self.o_gens))
        self.r = b.free("r", g if penalized else 0)
        self.sf_re = b.free("sf_re", m)
        self.sf_im = b.free("sf_im", m)
        self.st_re = b.free("st_re", m)
        self.st_im = b.free("st_im", m)
        self.f_lines = np.arange(m) if penalized else np.flatnonzero(net.flow_limited)
        self.ff = b.free("ff", len(self.f_lines))
        self.ft = b.free("ft", len(self.f_lines))

    # complex entries as (Re, Im) affine pairs
    def w(self, i: int, j: int) -> Tuple[Affine, Affine]:
        if i == j:
            return Affine.var(self.w_diag[i]), Affine()
        if i < j:
            e = self.pair_index[(i, j)]
            return Affine.var(self.w_re[e]), Affine.var(self.w_im[e])
        e = self.pair_index[(j, i)]
        return Affine.var(self.w_re[e]), Affine.var(self.w_im[e], -1.0)

    def v(self, i: int) -> Tuple[Affine, Affine]:
        return Affine.var(self.v_re[i]), Affine.var(self.v_im[i])

    def w_times_conj(self, i: int, j: int, y: complex) -> Tuple[Affine, Affine]:
        """Re and Im of W_ij * conj(y)."""
        a, b = self.w(i, j)
        g, s = y.real, y.imag
        return a.scaled(g) + b.scaled(s), b.scaled(g) - a.scaled(s)

    # equality groups
    def balance(self) -> None:
        net, b = self.net, self.builder
        Y = self.adm.Y.tocsr()
        gens_at = [[] for _ in range(net.n_bus)]
        for gidx, bus in enumerate(net.gen_bus):
            gens_at[bus].append(gidx)
        re_rows, im_rows = [], []
        for k in range(net.n_bus):
            re, im = Affine(), Affine()
            for ptr in range(Y.indptr[k], Y.indptr[k + 1]):
                tr, ti = self.w_times_conj(k, int(Y.indices[ptr]), complex(Y.data[ptr]))
                re, im = re + tr, im + ti
            for gidx in gens_at[k]:
                re = re - Affine.var(self.p[gidx])
                im = im - Affine.var(self.q[gidx])
            re_rows.append(re)
            im_rows.append(im)
        start = b.n_rows
        for k, expr in enumerate(re_rows):
            b.add_row(expr, -net.demand[k].real)
        for k, expr in enumerate(im_rows):
            b.add_row(expr, -net.demand[k].imag)
        b.name_rows("balance", start)

    def flow_definitions(self) -> None:
        net, adm, b = self.net, self.adm, self.builder
        for side, (Yb, s_re, s_im) in (("from", (adm.Y_from.tocsr(), self.sf_re, self.sf_im)),
                                       ("to", (adm.Y_to.tocsr(), self.st_re, self.st_im))):
            start = b.n_rows
            terminals = net.from_bus if side == "from" else net.to_bus
            for l in range(net.n_branch):
                k = int(terminals[l])
                re, im = Affine(), Affine()
                for ptr in range(Yb.indptr[l], Yb.indptr[l + 1]):
                    tr, ti = self.w_times_conj(k, int(Yb.indices[ptr]), complex(Yb.data[ptr]))
                    re, im = re + tr, im + ti
                b.add_row(Affine.var(s_re[l]) - re)
                b.add_row(Affine.var(s_im[l]) - im)
            b.name_rows(f"flow_{side}", start)

    def bounds(self) -> None:
        net, b = self.net, self.builder
        start = b.n_rows
        for k in range(net.n_bus):
            b.bound("bound_slack", Affine.var(self.w_diag[k]), net.vmin[k] ** 2, net.vmax[k] ** 2)
        for gidx in range(net.n_gen):
            b.bound("bound_slack", Affine.var(self.p[gidx]), net.pmin[gidx], net.pmax[gidx])
            b.bound("bound_slack", Affine.var(self.q[gidx]), net.qmin[gidx], net.qmax[gidx])
        for pos, l in enumerate(self.f_lines):
            if net.flow_limited[l]:
                cap = net.fmax[l] ** 2
                b.bound("bound_slack", Affine.var(self.ff[pos]), None, cap)
                b.bound("bound_slack", Affine.var(self.ft[pos]), None, cap)
        b.name_rows("bounds", start)

    def lifting_cones(self) -> None:
        """|s|^2 <= f, p^2 <= o and q^2 <= r as rotated cones."""
        b = self.builder
        half = Affine.constant(0.5)
        start = b.n_rows
        for pos, l in enumerate(self.f_lines):
            b.link("cone_flow", BlockKind.RSOC,
                   [Affine.var(self.ff[pos]), half, Affine.var(self.sf_re[l]), Affine.var(self.sf_im[l])])
            b.link("cone_flow", BlockKind.RSOC,
                   [Affine.var(self.ft[pos]), half, Affine.var(self.st_re[l]), Affine.var(self.st_im[l])])
        for pos, gidx in enumerate(self.o_gens):
            b.link("cone_cost", BlockKind.RSOC, [Affine.var(self.o[pos]), half, Affine.var(self.p[gidx])])
        for gidx in range(len(self.r)):
            b.link("cone_reactive", BlockKind.RSOC, [Affine.var(self.r[gidx]), half, Affine.var(self.q[gidx])])
        b.name_rows("lifting_cones", start)

    # W - vv* in C_k
    def parabolic(self) -> None:
        b = self.builder
        half = Affine.constant(0.5)
        start = b.n_rows
        for i, j in self.pairs:
            i, j = int(i), int(j)
            wii, _ = self.w(i, i)
            wjj, _ = self.w(j, j)
            wre, wim = self.w(i, j)
            total = wii + wjj
            forms = [total - wre.scaled(2), total + wre.scaled(2), total - wim.scaled(2), total + wim.scaled(2)]
            if not self.penalized:
                b.link("cone_parabolic", BlockKind.NONNEG, forms)
                continue
            vi_re, vi_im = self.v(i)
            vj_re, vj_im = self.v(j)
            b.link("cone_parabolic", BlockKind.RSOC, [forms[0], half, vi_re - vj_re, vi_im - vj_im])
            b.link("cone_parabolic", BlockKind.RSOC, [forms[1], half, vi_re + vj_re, vi_im + vj_im])
            b.link("cone_parabolic", BlockKind.RSOC, [forms[2], half, vi_re + vj_im, vi_im - vj_re])
            b.link("cone_parabolic", BlockKind.RSOC, [forms[3], half, vi_re - vj_im, vi_im + vj_re])
        if self.penalized:
            for k in range(self.net.n_bus):
                wkk, _ = self.w(k, k)
                vk_re, vk_im = self.v(k)
                b.link("cone_parabolic", BlockKind.RSOC, [wkk, half, vk_re, vk_im])
        b.name_rows("relaxation_cone", start)

    def hermitian_psd(self, family: str, lower: Dict[Tuple[int, int], Tuple[Affine, Affine]], order: int) -> None:
        """Hermitian H (given by its lower triangle) as the real block [[Re, -Im], [Im, Re]] in psd(2 order)."""
        entries: Dict[Tuple[int, int], Affine] = {}
        for (a, c), (re, im) in lower.items():
            entries[(a, c)] = re
            entries[(a + order, c + order)] = re
            if a != c:
                entries[(a + order, c)] = im
                entries[(c + order, a)] = -im
        self.builder.psd(family, entries, 2 * order)

    def socp(self) -> None:
        b = self.builder
        start = b.n_rows
        for i, j in self.pairs:
            i, j = int(i), int(j)
            wii, _ = self.w(i, i)
            wjj, _ = self.w(j, j)
            wre, wim = self.w(i, j)
            if not self.penalized:
                b.link("cone_socp", BlockKind.RSOC, [wii, wjj.scaled(0.5), wre, wim])
                continue
            vi_re, vi_im = self.v(i)
            vj_re, vj_im = self.v(j)
            lower = {
                (0, 0): (wii, Affine()),
                (1, 1): (wjj, Affine()),
                (2, 2): (Affine.constant(1.0), Affine()),
                (1, 0): (wre, -wim),
                (2, 0): (vi_re, -vi_im),
                (2, 1): (vj_re, -vj_im),
            }
            self.hermitian_psd("cone_socp", lower, 3)
        b.name_rows("relaxation_cone", start)

    def sdp(self, bags: Sequence[Sequence[int]]) -> None:
        b = self.builder
        start = b.n_rows
        for bag in bags:
            bag = sorted(int(k) for k in bag)
            size = len(bag)
            lower: Dict[Tuple[int, int], Tuple[Affine, Affine]] = {}
            for a, ka in enumerate(bag):
                for c in range(a + 1):
                    lower[(a, c)] = self.w(ka, bag[c])
            if self.penalized:
                for c, kc in enumerate(bag):
                    re, im = self.v(kc)
                    lower[(size, c)] = (re, -im)
                lower[(size, size)] = (Affine.constant(1.0), Affine())
                size += 1
            self.hermitian_psd("cone_sdp", lower, size)
        b.name_rows("relaxation_cone", start)

    # objective
    def objective(self, spec: Optional[PenaltySpec]) -> None:
        net, b = self.net, self.builder
        base = net.base_mva
        b.offset = float(net.c0.sum())
        b.add_costs(self.p, net.c1 * base)
        b.add_costs(self.o, net.c2[self.o_gens] * base ** 2)
        if spec is None or spec.mu == 0:
            return
        mu, x0, M = spec.mu, spec.x0, spec.M
        b.add_costs(self.o, np.full(len(self.o), mu))
        b.add_costs(self.p, -2 * mu * x0.p)
        b.add_costs(self.r, np.full(len(self.r), mu))
        b.add_costs(self.q, -2 * mu * x0.q)
        for f_idx, re_idx, im_idx, s0 in ((self.ff, self.sf_re, self.sf_im, x0.s_from),
                                          (self.ft, self.st_re, self.st_im, x0.s_to)):
            b.add_costs(f_idx, np.full(len(f_idx), mu))
            b.add_costs(re_idx, -2 * mu * s0.real)
            b.add_costs(im_idx, -2 * mu * s0.imag)
        b.add_costs(self.w_diag, mu * M.diagonal())
        for (i, j), mij in zip(M.edges, M.off_diagonal()):
            e = self.pair_index[(int(i), int(j))]
            b.add_cost(self.w_re[e], 2 * mu * mij.real)
            b.add_cost(self.w_im[e], 2 * mu * mij.imag)
        Mv0 = M.apply(x0.v)
        b.add_costs(self.v_re, -2 * mu * Mv0.real)
        b.add_costs(self.v_im, -2 * mu * Mv0.imag)
        b.offset += mu * float(
            x0.p @ x0.p + x0.q @ x0.q + np.vdot(x0.s_from, x0.s_from).real
            + np.vdot(x0.s_to, x0.s_to).real + np.vdot(x0.v, Mv0).real
        )


def _sdp_bags(net: Network, penalized: bool, dense: bool, max_psd_dim: int,
              warnings: List[str]) -> ChordalDecomposition:
    extra = 1 if penalized else 0
    if dense:
        if 2 * (net.n_bus + extra) <= max_psd_dim:
            return single_bag(range(net.n_bus))
        msg = (f"dense SDP block of order {2 * (net.n_bus + extra)} exceeds the psd cap {max_psd_dim}; "
               f"using chordal bags")
        logger.warning(msg)
        warnings.append(msg)
    decomposition = decompose(net.graph)
    largest = 2 * (decomposition.max_bag + extra)
    if largest > max_psd_dim:
        raise ValueError(
            f"largest chordal bag needs a psd block of order {largest}, above the cap {max_psd_dim}"
        )
    return decomposition


def assemble(net: Network, adm: AdmittanceSet, kind: ConeKind, spec: Optional[PenaltySpec] = None,
             dense: bool = False, max_psd_dim: int = DEFAULT_MAX_PSD_DIM) -> ConicProgram:
    """
    Build the relaxation of the OPF problem with cone ``kind`` as a conic program.

    Args:
        net, adm: network and its admittances
        kind: cone imposed on W - vv*
        spec: penalty; None gives the plain lower-bound relaxation without voltages
        dense: SDP only, one full PSD block when it fits under ``max_psd_dim``
        max_psd_dim: cap on PSD block order after the real embedding

    Returns:
        ConicProgram whose objective is the lifted cost plus mu * kappa
    """
    kind = ConeKind(kind)
    penalized = spec is not None
    warnings: List[str] = []

    bags: Tuple[Tuple[int, ...], ...] = ()
    if kind == ConeKind.SDP:
        decomposition = _sdp_bags(net, penalized, dense, max_psd_dim, warnings)
        bags = decomposition.bags
        pairs = np.array(decomposition.pairs(), dtype=int).reshape(-1, 2)
    else:
        pairs = net.edges.copy()

    verdict = None
    if penalized:
        spec.x0.check_dimensions(net)
        verdict = dual_cone_membership(spec.M, kind)
        if not verdict.interior:
            msg = (f"penalty matrix is not in the interior of {verdict.label} (epsilon={verdict.epsilon:.3e}); "
                   f"recovery guarantees do not apply")
            logger.warning(msg)
            warnings.append(msg)

    name = f"{net.name}-{kind.value}" + ("-penalized" if penalized else "")
    asm = _Assembler(net, adm, kind, penalized, pairs, name)
    asm.balance()
    asm.flow_definitions()
    asm.bounds()
    asm.lifting_cones()
    if kind == ConeKind.PARABOLIC:
        asm.parabolic()
    elif kind == ConeKind.SOCP:
        asm.socp()
    else:
        asm.sdp(bags)
    asm.objective(spec)

    meta = {
        "case": net.name,
        "kind": kind.value,
        "penalized": penalized,
        "pairs": pairs,
        "bags": bags,
        "o_gens": asm.o_gens,
        "f_lines": asm.f_lines,
        "n_bus": net.n_bus,
        "n_gen": net.n_gen,
        "n_branch": net.n_branch,
    }
    if penalized:
        meta.update(mu=spec.mu, alpha=spec.alpha, eta=spec.eta, dual_epsilon=verdict.epsilon)
    prog = asm.builder.build(meta=meta, warnings=warnings)
    logger.info(f"Assembled {name}: {prog.size_report()}")
    return prog


# ---------------------------------------------------------------------------
# Reading and writing program vectors
# ---------------------------------------------------------------------------

def extract_lifted(prog: ConicProgram, x: np.ndarray) -> LiftedPoint:
    """Read the lifted variables of a program vector (solver primal)."""
    vm, meta = prog.var_map, prog.meta
    g, m = meta["n_gen"], meta["n_branch"]

    def get(family: str) -> np.ndarray:
        return np.asarray(x)[vm[family]]

    o = np.full(g, np.nan)
    o[meta["o_gens"]] = get("o")
    r = get("r") if vm["r"].size else np.full(g, np.nan)
    f_from = np.full(m, np.nan)
    f_to = np.full(m, np.nan)
    f_from[meta["f_lines"]] = get("ff")
    f_to[meta["f_lines"]] = get("ft")
    v = get("v_re") + 1j * get("v_im") if meta["penalized"] else None
    return LiftedPoint(
        w_diag=get("w_diag"),
        pairs=meta["pairs"],
        w_off=get("w_re") + 1j * get("w_im"),
        o=o,
        r=r,
        f_from=f_from,
        f_to=f_to,
        p=get("p"),
        q=get("q"),
        s_from=get("sf_re") + 1j * get("sf_im"),
        s_to=get("st_re") + 1j * get("st_im"),
        v=v,
    )


def program_point(prog: ConicProgram, lp: LiftedPoint) -> np.ndarray:
    """
    Program vector of a lifted point: model variables copied, slack variables
    solved from their defining rows.
    """
    meta, vm = prog.meta, prog.var_map
    pattern = {(int(i), int(j)): e for e, (i, j) in enumerate(lp.pairs)}
    try:
        where = np.array([pattern[(int(i), int(j))] for i, j in meta["pairs"]], dtype=int)
    except KeyError as e:
        raise ValueError(f"lifted point lacks W entry {e} required by the program") from e
    w_off = lp.w_off[where] if where.size else np.zeros(0, complex)

    values = {
        "w_diag": lp.w_diag, "w_re": w_off.real, "w_im": w_off.imag,
        "p": lp.p, "q": lp.q, "o": lp.o[meta["o_gens"]],
        "sf_re": lp.s_from.real, "sf_im": lp.s_from.imag, "st_re": lp.s_to.real, "st_im": lp.s_to.imag,
        "ff": lp.f_from[meta["f_lines"]], "ft": lp.f_to[meta["f_lines"]],
    }
    if meta["penalized"]:
        if lp.v is None:
            raise RecoveryError("penalized program needs a lifted point with voltages")
        values.update(v_re=lp.v.real, v_im=lp.v.imag, r=lp.r)

    x = np.zeros(prog.n_vars)
    known = np.zeros(prog.n_vars, dtype=bool)
    for family, vals in values.items():
        idx = vm[family]
        x[idx] = vals
        known[idx] = True
    A = prog.A.tocsc()
    unknown = np.flatnonzero(~known)
    if unknown.size:
        resid = prog.b - A[:, known] @ x[known]
        slack_cols = A[:, unknown]
        counts = np.diff(slack_cols.indptr)
        if np.any(counts != 1):
            raise ValueError("slack variables must appear in exactly one row")
        x[unknown] = resid[slack_cols.indices] / slack_cols.data
    return x

