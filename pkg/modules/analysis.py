"""
Analysis Module
===============

Constraint-qualification and sensitivity tools for OPF operating points.

Features:
- Real Jacobians of the equality constraints (flow-based balance and flow definitions)
  and of the voltage, generation and flow-limit inequalities
- Active sets with exact activation (delta = 0) or a delta-widened margin
- Smallest singular value of the stacked active Jacobian and the LICQ verdict
- Network sensitivity measure and the penalty-matrix bound check
- Upper bound on the weighted feasibility distance from a feasible witness
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigvalsh, svdvals

from .netmodel import AdmittanceSet, Network
from .opf import DEFAULT_FEASIBILITY_TOL, OperatingPoint, residuals
from .relax import PenaltyMatrix

logger = logging.getLogger(__name__)

RANK_TOL = 1e-8
SIZE_READING = "|N| read as bus count, |L| read as line count"

MatrixLike = Union[PenaltyMatrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class JacobianBundle:
    """
    Real Jacobians over the columns [Re v, Im v, p, q, Re s_from, Im s_from, Re s_to, Im s_to].

    ``J_eq`` rows: Re/Im balance, Re/Im from-flow definitions, Re/Im to-flow definitions.
    """
    J_eq: sp.csr_matrix
    J1: sp.csr_matrix
    J2: sp.csr_matrix
    J3: sp.csr_matrix
    J4_from: sp.csr_matrix
    J4_to: sp.csr_matrix

    @property
    def n_cols(self) -> int:
        return self.J_eq.shape[1]


@dataclass(frozen=True)
class ActiveSets:
    B1_lo: np.ndarray
    B1_hi: np.ndarray
    B2_lo: np.ndarray
    B2_hi: np.ndarray
    B3_lo: np.ndarray
    B3_hi: np.ndarray
    B4_from: np.ndarray
    B4_to: np.ndarray
    delta: float

    def counts(self) -> Dict[str, int]:
        return {name: int(getattr(self, name).size)
                for name in ("B1_lo", "B1_hi", "B2_lo", "B2_hi", "B3_lo", "B3_hi", "B4_from", "B4_to")}

    @property
    def total(self) -> int:
        return sum(self.counts().values())


@dataclass(frozen=True)
class SensitivityReport:
    P: float
    sigma: float
    sigma_max: float
    licq: bool
    rows: int
    cols: int
    delta: float
    active: Dict[str, int] = field(default_factory=dict)
    mu_bound_ok: Optional[bool] = None
    bound: Optional[float] = None
    lambda_max_M: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def equality_map(net: Network, adm: AdmittanceSet, x: OperatingPoint) -> np.ndarray:
    """
    Stacked real residuals of the equality constraints in flow-based form:
    d + conj(y_sh)|v|^2 + C_from' s_from + C_to' s_to - C'(p + iq), then the two flow definitions.
    """
    v = x.v
    balance = (net.demand + np.conj(net.shunt) * np.abs(v) ** 2
               + adm.C_from.T @ x.s_from + adm.C_to.T @ x.s_to - adm.C.T @ x.generation)
    flow_from = (adm.C_from @ v) * np.conj(adm.Y_from @ v) - x.s_from
    flow_to = (adm.C_to @ v) * np.conj(adm.Y_to @ v) - x.s_to
    return np.concatenate([balance.real, balance.imag, flow_from.real, flow_from.imag,
                           flow_to.real, flow_to.imag])


def _u_matrices(C: sp.csr_matrix, Y: sp.csr_matrix, v: np.ndarray):
    left = sp.diags(np.conj(C @ v)) @ Y
    right = sp.diags(Y @ v) @ C
    return 0.5 * (left + right), (left - right) / 2j


def jacobians(net: Network, adm: AdmittanceSet, x: OperatingPoint) -> JacobianBundle:
    x.check_dimensions(net)
    n, g, m = net.n_bus, net.n_gen, net.n_branch
    v = x.v

    def Z(r: int, c: int) -> sp.csr_matrix:
        return sp.csr_matrix((r, c))

    I_m = sp.identity(m, format="csr")

    g_sh, b_sh = net.shunt.real, net.shunt.imag
    Ct = adm.C.T.tocsr()
    Cf, Ctt = adm.C_from.T.tocsr(), adm.C_to.T.tocsr()
    balance_re = sp.hstack([sp.diags(2 * g_sh * v.real), sp.diags(2 * g_sh * v.imag),
                            -Ct, Z(n, g), Cf, Z(n, m), Ctt, Z(n, m)])
    balance_im = sp.hstack([sp.diags(-2 * b_sh * v.real), sp.diags(-2 * b_sh * v.imag),
                            Z(n, g), -Ct, Z(n, m), Cf, Z(n, m), Ctt])

    blocks = [balance_re, balance_im]
    for side, (C, Y) in enumerate(((adm.C_from, adm.Y_from), (adm.C_to, adm.Y_to))):
        U1, U2 = _u_matrices(C, Y, v)
        pad_before = [Z(m, m)] * (2 * side)
        pad_after = [Z(m, m)] * (2 * (1 - side))
        real_row = sp.hstack([(2 * U1).real, (-2 * U2).real, Z(m, 2 * g)]
                             + pad_before + [-I_m, Z(m, m)] + pad_after)
        imag_row = sp.hstack([(2j * U1).real, (-2j * U2).real, Z(m, 2 * g)]
                             + pad_before + [Z(m, m), -I_m] + pad_after)
        blocks.extend([real_row, imag_row])
    J_eq = sp.vstack(blocks).tocsr()

    J1 = sp.hstack([sp.diags(2 * v.real), sp.diags(2 * v.imag), Z(n, 2 * g + 4 * m)]).tocsr()
    J2 = sp.hstack([Z(g, 2 * n), sp.identity(g), Z(g, g + 4 * m)]).tocsr()
    J3 = sp.hstack([Z(g, 2 * n + g), sp.identity(g), Z(g, 4 * m)]).tocsr()
    sf, st = x.s_from, x.s_to
    J4_from = sp.hstack([Z(m, 2 * n + 2 * g), sp.diags(2 * sf.real), sp.diags(2 * sf.imag),
                         Z(m, 2 * m)]).tocsr()
    J4_to = sp.hstack([Z(m, 2 * n + 2 * g + 2 * m), sp.diags(2 * st.real), sp.diags(2 * st.imag)]).tocsr()
    return JacobianBundle(J_eq=J_eq, J1=J1, J2=J2, J3=J3, J4_from=J4_from, J4_to=J4_to)


# ---------------------------------------------------------------------------
# Active sets and LICQ
# ---------------------------------------------------------------------------

def active_sets(net: Network, x: OperatingPoint, delta: float = 0.0, activity_tol: float = 0.0) -> ActiveSets:
    """
    Constraints within ``delta`` of activity; delta = 0 gives exact activation.

    ``activity_tol`` widens every test by an absolute slack for solver-accurate points.
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    d = delta
    vm = np.abs(x.v)
    lim = net.flow_limited
    fmax2 = np.where(lim, net.fmax, 0.0) ** 2

    def where(mask: np.ndarray) -> np.ndarray:
        return np.flatnonzero(mask >= -activity_tol)

    def flows(s: np.ndarray) -> np.ndarray:
        mag = np.abs(s)
        test = mag ** 2 - fmax2 + d ** 2 + 2 * d * mag
        return np.flatnonzero(lim & (test >= -activity_tol))

    return ActiveSets(
        B1_lo=where(-vm ** 2 + net.vmin ** 2 + d ** 2 + 2 * d * vm),
        B1_hi=where(vm ** 2 - net.vmax ** 2 + d ** 2 + 2 * d * vm),
        B2_lo=where(-x.p + net.pmin + d),
        B2_hi=where(x.p - net.pmax + d),
        B3_lo=where(-x.q + net.qmin + d),
        B3_hi=where(x.q - net.qmax + d),
        B4_from=flows(x.s_from),
        B4_to=flows(x.s_to),
        delta=delta,
    )


def active_jacobian(bundle: JacobianBundle, sets: ActiveSets) -> sp.csr_matrix:
    """
    J_eq stacked with the rows of the active inequalities.

    A lower and an upper bound on the same quantity each contribute a row, so
    equal limits that are both active leave the stack rank deficient.
    """
    rows = [bundle.J_eq,
            bundle.J1[sets.B1_lo], bundle.J1[sets.B1_hi],
            bundle.J2[sets.B2_lo], bundle.J2[sets.B2_hi],
            bundle.J3[sets.B3_lo], bundle.J3[sets.B3_hi],
            bundle.J4_from[sets.B4_from],
            bundle.J4_to[sets.B4_to]]
    return sp.vstack(rows).tocsr()


def _dense_penalty(M: MatrixLike) -> np.ndarray:
    return M.dense() if isinstance(M, PenaltyMatrix) else np.asarray(M, dtype=complex)


def sensitivity_measure(net: Network, adm: AdmittanceSet) -> float:
    """
    Network sensitivity constant: 2|V| + 2|E| + ||y_sh||_2 + charging terms
    + sqrt2 times the entrywise 1-norms of the four power matrices of every line.
    """
    b = np.abs(net.b_charging)
    charging = float(np.sum(b / (2 * net.tap ** 2) + b / 2))
    mats = sum(np.abs(arr).sum() for arr in (adm.Yp_from, adm.Yq_from, adm.Yp_to, adm.Yq_to))
    return float(2 * net.n_bus + 2 * net.n_branch + np.linalg.norm(net.shunt) + charging + np.sqrt(2) * mats)


def licq_report(net: Network, adm: AdmittanceSet, x: OperatingPoint, delta: float = 0.0,
                M: Optional[MatrixLike] = None, activity_tol: float = 0.0) -> SensitivityReport:
    """
    Rank test of the stacked active Jacobian and, with ``M``, the check
    lambda_max(M) <= sigma / (4 delta P).
    """
    if M is not None and not delta > 0:
        raise ValueError("the penalty-matrix bound check needs delta > 0")
    sets = active_sets(net, x, delta, activity_tol)
    J = active_jacobian(jacobians(net, adm, x), sets)
    rows, cols = J.shape
    values = svdvals(J.toarray()) if rows and cols else np.zeros(0)
    sigma_max = float(values.max(initial=0.0))
    # a tall matrix always has dependent rows
    sigma = float(values.min()) if rows <= cols and values.size else 0.0
    licq = bool(sigma > RANK_TOL * sigma_max) if sigma_max > 0 else False
    P = sensitivity_measure(net, adm)

    report = dict(P=P, sigma=sigma, sigma_max=sigma_max, licq=licq, rows=rows, cols=cols, delta=delta,
                  active=sets.counts(), notes=[SIZE_READING])
    if M is not None:
        lam = float(eigvalsh(_dense_penalty(M))[-1])
        bound = sigma / (4 * delta * P)
        report.update(mu_bound_ok=bool(lam <= bound), bound=bound, lambda_max_M=lam)
    logger.info(f"LICQ on {net.name}: sigma={sigma:.3e} licq={licq} rows={rows} cols={cols} delta={delta:g}")
    return SensitivityReport(**report)


def feasibility_distance_upper(net: Network, adm: AdmittanceSet, x0: OperatingPoint, x_feas: OperatingPoint,
                               M: Optional[MatrixLike] = None, tol: float = DEFAULT_FEASIBILITY_TOL) -> float:
    """
    Weighted distance from ``x0`` to the feasible witness ``x_feas``.

    The true feasibility distance minimizes over every feasible point, so this
    is an upper bound. ``M`` defaults to the identity.
    """
    violation = residuals(net, adm, x_feas).max_violation
    if violation > tol:
        raise ValueError(f"witness is not feasible: max violation {violation:.3e} > {tol:.1e}")
    dv = x_feas.v - x0.v
    weighted = float(np.vdot(dv, _dense_penalty(M) @ dv).real) if M is not None else float(np.vdot(dv, dv).real)
    if weighted < -1e-12:
        raise ValueError("M is not positive semidefinite on v - v0")
    total = (max(weighted, 0.0)
             + float(np.sum(np.abs(x_feas.generation - x0.generation) ** 2))
             + float(np.sum(np.abs(x_feas.s_from - x0.s_from) ** 2))
             + float(np.sum(np.abs(x_feas.s_to - x0.s_to) ** 2)))
    return float(np.sqrt(total))
