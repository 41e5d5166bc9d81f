"""
OPF Module
==========

Candidate operating points of the AC optimal power flow problem, the generation
cost objective and the residuals of every constraint.

Features:
- OperatingPoint container with display rotation and JSON serialization
- Objective in native cost units
- Signed residuals of balance, flow-definition, voltage, generation and flow limits
- Feasibility test and flat start
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .netmodel import AdmittanceSet, Network, branch_flow, bus_injections

logger = logging.getLogger(__name__)

DEFAULT_FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    """x = (v, p + iq, s_from, s_to), all per-unit."""
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=complex))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "s_from", np.asarray(self.s_from, dtype=complex))
        object.__setattr__(self, "s_to", np.asarray(self.s_to, dtype=complex))
        for name in ("v", "p", "q", "s_from", "s_to"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"operating point has non-finite entries in {name}")

    def check_dimensions(self, net: Network) -> None:
        expected = {"v": net.n_bus, "p": net.n_gen, "q": net.n_gen, "s_from": net.n_branch, "s_to": net.n_branch}
        for name, size in expected.items():
            if getattr(self, name).shape != (size,):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected ({size},)")

    @property
    def generation(self) -> np.ndarray:
        return self.p + 1j * self.q

    def rotated(self, angle: float) -> "OperatingPoint":
        """Rotate every voltage by ``angle`` radians; flows are unchanged."""
        return OperatingPoint(self.v * np.exp(1j * angle), self.p, self.q, self.s_from, self.s_to)

    def for_display(self, net: Network) -> "OperatingPoint":
        """Rotate so that the first generator bus sits at angle 0."""
        if net.n_gen == 0 or self.v.size == 0:
            return self
        ref = self.v[net.gen_bus[0]]
        if abs(ref) == 0:
            return self
        return self.rotated(-np.angle(ref))

    def stacked(self) -> np.ndarray:
        """Real vector [Re v, Im v, p, q, Re s_from, Im s_from, Re s_to, Im s_to]."""
        return np.concatenate([
            self.v.real, self.v.imag, self.p, self.q,
            self.s_from.real, self.s_from.imag, self.s_to.real, self.s_to.imag,
        ])

    @classmethod
    def from_stacked(cls, net: Network, vec: np.ndarray) -> "OperatingPoint":
        n, g, m = net.n_bus, net.n_gen, net.n_branch
        cuts = np.cumsum([n, n, g, g, m, m, m])
        vr, vi, p, q, sfr, sfi, str_, sti = np.split(np.asarray(vec, dtype=float), cuts)
        return cls(vr + 1j * vi, p, q, sfr + 1j * sfi, str_ + 1j * sti)

    def to_dict(self, net: Network, rotate: bool = True) -> Dict[str, Any]:
        x = self.for_display(net) if rotate else self
        base = net.base_mva
        return {
            "case": net.name,
            "buses": [
                {"bus_id": int(bid), "vm": float(abs(vk)), "va_deg": float(np.degrees(np.angle(vk)))}
                for bid, vk in zip(net.bus_ids, x.v)
            ],
            "generators": [
                {
                    "gen_id": gen.gen_id,
                    "bus_id": int(net.bus_ids[gen.bus]),
                    "pg_mw": float(x.p[g] * base),
                    "qg_mvar": float(x.q[g] * base),
                }
                for g, gen in enumerate(net.generators)
            ],
            "lines": [
                {
                    "line_id": br.line_id,
                    "pf_mw": float(x.s_from[l].real * base),
                    "qf_mvar": float(x.s_from[l].imag * base),
                    "pt_mw": float(x.s_to[l].real * base),
                    "qt_mvar": float(x.s_to[l].imag * base),
                }
                for l, br in enumerate(net.branches)
            ],
        }

    def to_text(self, net: Network, rotate: bool = True) -> str:
        return json.dumps(self.to_dict(net, rotate=rotate), indent=2)

    @classmethod
    def from_text(cls, net: Network, text: str) -> "OperatingPoint":
        data = json.loads(text)
        base = net.base_mva
        by_bus = {item["bus_id"]: item for item in data["buses"]}
        by_gen = {item["gen_id"]: item for item in data["generators"]}
        by_line = {item["line_id"]: item for item in data["lines"]}
        try:
            v = np.array([
                by_bus[int(bid)]["vm"] * np.exp(1j * np.radians(by_bus[int(bid)]["va_deg"]))
                for bid in net.bus_ids
            ])
            p = np.array([by_gen[g.gen_id]["pg_mw"] / base for g in net.generators])
            q = np.array([by_gen[g.gen_id]["qg_mvar"] / base for g in net.generators])
            s_from = np.array([
                complex(by_line[br.line_id]["pf_mw"], by_line[br.line_id]["qf_mvar"]) / base for br in net.branches
            ])
            s_to = np.array([
                complex(by_line[br.line_id]["pt_mw"], by_line[br.line_id]["qt_mvar"]) / base for br in net.branches
            ])
        except KeyError as e:
            raise ValueError(f"operating point text lacks entry {e} for case {net.name}") from e
        return cls(v, p, q, s_from, s_to)


@dataclass(frozen=True, eq=False)
class ConstraintResiduals:
    """Residuals of the OPF constraints; bound entries are signed (<= 0 satisfied)."""
    balance: np.ndarray
    flow_def_from: np.ndarray
    flow_def_to: np.ndarray
    vmag_lo: np.ndarray
    vmag_hi: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    flow_from: np.ndarray
    flow_to: np.ndarray
    max_violation: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "max_violation", self._compute_max())

    def _compute_max(self) -> float:
        worst = 0.0
        for arr in (self.balance, self.flow_def_from, self.flow_def_to):
            if arr.size:
                worst = max(worst, float(np.max(np.abs(arr))))
        for arr in (self.vmag_lo, self.vmag_hi, self.p_lo, self.p_hi, self.q_lo, self.q_hi,
                    self.flow_from, self.flow_to):
            if arr.size:
                worst = max(worst, float(np.max(arr)))
        return worst

    def as_dict(self) -> Dict[str, float]:
        """Per-group worst violation."""
        groups = {
            "balance": np.abs(self.balance),
            "flow_def_from": np.abs(self.flow_def_from),
            "flow_def_to": np.abs(self.flow_def_to),
            "vmag_lo": self.vmag_lo, "vmag_hi": self.vmag_hi,
            "p_lo": self.p_lo, "p_hi": self.p_hi, "q_lo": self.q_lo, "q_hi": self.q_hi,
            "flow_from": self.flow_from, "flow_to": self.flow_to,
        }
        out = {k: (max(0.0, float(np.max(v))) if v.size else 0.0) for k, v in groups.items()}
        out["max_violation"] = self.max_violation
        return out


def objective(net: Network, p: np.ndarray) -> float:
    """Generation cost c0'1 + c1'p + p'[c2]p in native units (p in per-unit)."""
    p = np.asarray(p, dtype=float)
    base = net.base_mva
    return float(net.c0.sum() + (net.c1 * base) @ p + (net.c2 * base ** 2) @ (p * p))


def residuals(net: Network, adm: AdmittanceSet, x: OperatingPoint) -> ConstraintResiduals:
    x.check_dimensions(net)
    v = x.v
    balance = net.demand + bus_injections(net, adm, v) - adm.C.T @ x.generation
    s_from, s_to = branch_flow(net, adm, v)
    vm = np.abs(v)

    flow_from = np.full(net.n_branch, -np.inf)
    flow_to = np.full(net.n_branch, -np.inf)
    lim = net.flow_limited
    flow_from[lim] = np.abs(x.s_from[lim]) ** 2 - net.fmax[lim] ** 2
    flow_to[lim] = np.abs(x.s_to[lim]) ** 2 - net.fmax[lim] ** 2

    return ConstraintResiduals(
        balance=balance,
        flow_def_from=s_from - x.s_from,
        flow_def_to=s_to - x.s_to,
        vmag_lo=net.vmin - vm,
        vmag_hi=vm - net.vmax,
        p_lo=net.pmin - x.p,
        p_hi=x.p - net.pmax,
        q_lo=net.qmin - x.q,
        q_hi=x.q - net.qmax,
        flow_from=flow_from,
        flow_to=flow_to,
    )


def is_feasible(net: Network, adm: AdmittanceSet, x: OperatingPoint, tol: float = DEFAULT_FEASIBILITY_TOL) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    return residuals(net, adm, x).max_violation <= tol


def flat_start(net: Network, adm: AdmittanceSet) -> OperatingPoint:
    """v = 1, p = pmin, q = 0 and the flows they induce."""
    v = np.ones(net.n_bus, dtype=complex)
    s_from, s_to = branch_flow(net, adm, v)
    return OperatingPoint(v=v, p=net.pmin.copy(), q=np.zeros(net.n_gen), s_from=s_from, s_to=s_to)


def point_from_voltages(net: Network, adm: AdmittanceSet, v: np.ndarray,
                        p: Optional[np.ndarray] = None, q: Optional[np.ndarray] = None) -> OperatingPoint:
    """
    Complete an operating point from a voltage profile.

    Flows follow from v; when p or q is omitted, the bus injection mismatch is
    assigned to the generators of each bus in equal shares.
    """
    v = np.asarray(v, dtype=complex)
    s_from, s_to = branch_flow(net, adm, v)
    need = net.demand + bus_injections(net, adm, v)
    counts = np.asarray(adm.C.sum(axis=0)).ravel()
    share = np.where(counts[net.gen_bus] > 0, 1.0 / np.maximum(counts[net.gen_bus], 1), 0.0)
    gen_share = need[net.gen_bus] * share
    return OperatingPoint(
        v=v,
        p=gen_share.real if p is None else p,
        q=gen_share.imag if q is None else q,
        s_from=s_from,
        s_to=s_to,
    )
