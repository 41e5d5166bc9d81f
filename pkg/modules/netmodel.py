"""
Network Model Module
====================

Immutable power-network description, MATPOWER case parsing and the admittance
matrices of the branch pi-model.

Features:
- MATPOWER case grammar subset (baseMVA, bus, gen, branch, gencost)
- Per-unit conversion on the system base, dense bus re-indexing
- Nodal / branch admittance matrices and incidence matrices
- Per-branch 2x2 Hermitian power matrices for the series element
- Branch flows, with the series / charging split
"""

import logging
import re
from pathlib import Path
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12


class CaseFormatError(ValueError):
    """Malformed case data, reported with the table name and 1-based row index."""

    def __init__(self, message: str, table: str = "", row: int = 0):
        self.table = table
        self.row = row
        where = f"{table} row {row}: " if table else ""
        super().__init__(f"{where}{message}")


class NetworkValidationError(ValueError):
    """Network invariant violated."""


@dataclass(frozen=True)
class Bus:
    bus_id: int
    demand: complex
    shunt: complex
    vmin: float
    vmax: float


@dataclass(frozen=True)
class Branch:
    """Pi-model line between dense bus indices; fmax None means unlimited."""
    line_id: int
    from_bus: int
    to_bus: int
    y_series: complex
    b_charging: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    fmax: Optional[float] = None


@dataclass(frozen=True)
class Generator:
    gen_id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0


@dataclass(frozen=True)
class Network:
    """
    Power network in per-unit on ``base_mva``.

    Buses are indexed densely 0..n-1; ``Bus.bus_id`` keeps the external number.
    Cost coefficients stay in native units ($/h, $/MWh, $/MW^2h).
    """
    name: str
    base_mva: float
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = len(self.buses)
        if self.base_mva <= 0:
            raise NetworkValidationError(f"base_mva must be positive, got {self.base_mva}")
        for k, bus in enumerate(self.buses):
            if bus.vmin > bus.vmax:
                raise NetworkValidationError(f"bus {bus.bus_id}: vmin {bus.vmin} > vmax {bus.vmax}")
            if bus.vmin < 0:
                raise NetworkValidationError(f"bus {bus.bus_id}: negative vmin")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise NetworkValidationError(f"line {br.line_id}: endpoint outside 0..{n - 1}")
            if br.from_bus == br.to_bus:
                raise NetworkValidationError(f"line {br.line_id}: self-loop at bus index {br.from_bus}")
            if br.tap <= 0:
                raise NetworkValidationError(f"line {br.line_id}: tap must be positive")
            if br.fmax is not None and br.fmax <= 0:
                raise NetworkValidationError(f"line {br.line_id}: fmax must be positive or None")
            if not np.isfinite(br.y_series):
                raise NetworkValidationError(f"line {br.line_id}: singular series admittance")
        for gen in self.generators:
            if not 0 <= gen.bus < n:
                raise NetworkValidationError(f"generator {gen.gen_id}: unknown bus index {gen.bus}")
            if gen.pmin > gen.pmax or gen.qmin > gen.qmax:
                raise NetworkValidationError(f"generator {gen.gen_id}: inverted bounds")
            if gen.c2 < 0:
                raise NetworkValidationError(f"generator {gen.gen_id}: c2 must be nonnegative")

    # sizes
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    # bus data
    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.bus_id for b in self.buses], dtype=int)

    @cached_property
    def bus_index(self) -> Dict[int, int]:
        return {b.bus_id: k for k, b in enumerate(self.buses)}

    @cached_property
    def demand(self) -> np.ndarray:
        return np.array([b.demand for b in self.buses], dtype=complex)

    @cached_property
    def shunt(self) -> np.ndarray:
        return np.array([b.shunt for b in self.buses], dtype=complex)

    @cached_property
    def vmin(self) -> np.ndarray:
        return np.array([b.vmin for b in self.buses], dtype=float)

    @cached_property
    def vmax(self) -> np.ndarray:
        return np.array([b.vmax for b in self.buses], dtype=float)

    # generator data
    def _gen_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(g, attr) for g in self.generators], dtype=float)

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=int)

    @cached_property
    def pmin(self) -> np.ndarray:
        return self._gen_array("pmin")

    @cached_property
    def pmax(self) -> np.ndarray:
        return self._gen_array("pmax")

    @cached_property
    def qmin(self) -> np.ndarray:
        return self._gen_array("qmin")

    @cached_property
    def qmax(self) -> np.ndarray:
        return self._gen_array("qmax")

    @cached_property
    def c0(self) -> np.ndarray:
        return self._gen_array("c0")

    @cached_property
    def c1(self) -> np.ndarray:
        return self._gen_array("c1")

    @cached_property
    def c2(self) -> np.ndarray:
        return self._gen_array("c2")

    # branch data
    @cached_property
    def from_bus(self) -> np.ndarray:
        return np.array([br.from_bus for br in self.branches], dtype=int)

    @cached_property
    def to_bus(self) -> np.ndarray:
        return np.array([br.to_bus for br in self.branches], dtype=int)

    @cached_property
    def y_series(self) -> np.ndarray:
        return np.array([br.y_series for br in self.branches], dtype=complex)

    @cached_property
    def b_charging(self) -> np.ndarray:
        return np.array([br.b_charging for br in self.branches], dtype=float)

    @cached_property
    def tap(self) -> np.ndarray:
        return np.array([br.tap for br in self.branches], dtype=float)

    @cached_property
    def shift(self) -> np.ndarray:
        return np.array([br.shift for br in self.branches], dtype=float)

    @cached_property
    def flow_limited(self) -> np.ndarray:
        return np.array([br.fmax is not None for br in self.branches], dtype=bool)

    @cached_property
    def fmax(self) -> np.ndarray:
        """Thermal limits; NaN marks an unlimited line and must be masked with ``flow_limited``."""
        return np.array([np.nan if br.fmax is None else br.fmax for br in self.branches], dtype=float)

    # graph structure
    @cached_property
    def edges(self) -> np.ndarray:
        """Unique bus pairs (i < j) carrying at least one line, sorted."""
        if not self.branches:
            return np.zeros((0, 2), dtype=int)
        pairs = np.sort(np.column_stack([self.from_bus, self.to_bus]), axis=1)
        return np.unique(pairs, axis=0)

    @cached_property
    def line_edge(self) -> np.ndarray:
        """Edge index of every line; parallel lines share one edge."""
        lookup = {(int(i), int(j)): e for e, (i, j) in enumerate(self.edges)}
        return np.array(
            [lookup[(min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))] for br in self.branches],
            dtype=int,
        )

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_bus))
        g.add_edges_from((int(i), int(j)) for i, j in self.edges)
        return g

    def summary(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": self.n_bus,
            "branches": self.n_branch,
            "generators": self.n_gen,
            "edges": len(self.edges),
            "limited_lines": int(self.flow_limited.sum()),
        }


@dataclass(frozen=True)
class AdmittanceSet:
    """
    Nodal and branch admittances of a network.

    ``Yp_from`` etc. have shape (n_branch, 2, 2) and act on v_l = (v_f, v_t).
    """
    Y: sp.csr_matrix
    Y_from: sp.csr_matrix
    Y_to: sp.csr_matrix
    C: sp.csr_matrix
    C_from: sp.csr_matrix
    C_to: sp.csr_matrix
    Yp_from: np.ndarray
    Yq_from: np.ndarray
    Yp_to: np.ndarray
    Yq_to: np.ndarray


class FlowSplit(NamedTuple):
    """Branch flows split into the series-element powers and the charging injections."""
    series_from: np.ndarray
    series_to: np.ndarray
    charging_from: np.ndarray
    charging_to: np.ndarray

    @property
    def total_from(self) -> np.ndarray:
        return self.series_from + 1j * self.charging_from

    @property
    def total_to(self) -> np.ndarray:
        return self.series_to + 1j * self.charging_to


# ---------------------------------------------------------------------------
# MATPOWER parsing
# ---------------------------------------------------------------------------

_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")
_TABLE_RE = re.compile(r"mpc\.(bus|gen|branch|gencost)\s*=\s*\[(.*?)\]\s*;?", re.DOTALL)
_NAME_RE = re.compile(r"function\s+mpc\s*=\s*([A-Za-z0-9_]+)")

_MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_table(name: str, body: str) -> List[List[float]]:
    rows = []
    chunks = [c for piece in body.split(";") for c in piece.split("\n")]
    for chunk in chunks:
        fields = chunk.replace(",", " ").split()
        if not fields:
            continue
        row_no = len(rows) + 1
        try:
            values = [float(f) for f in fields]
        except ValueError as e:
            raise CaseFormatError(f"non-numeric entry ({e})", name, row_no) from e
        if len(values) < _MIN_COLUMNS[name]:
            raise CaseFormatError(
                f"expected at least {_MIN_COLUMNS[name]} columns, found {len(values)}", name, row_no
            )
        rows.append(values)
    return rows


def _cost_coefficients(row: List[float], row_no: int) -> Tuple[float, float, float]:
    model = int(row[0])
    if model != 2:
        raise CaseFormatError(f"gencost model {model} unsupported (only polynomial model 2)", "gencost", row_no)
    ncost = int(row[3])
    coeffs = row[4:4 + ncost]
    if len(coeffs) < ncost:
        raise CaseFormatError(f"declares {ncost} coefficients, found {len(coeffs)}", "gencost", row_no)
    if ncost > 3:
        leading, coeffs = coeffs[:ncost - 3], coeffs[ncost - 3:]
        if any(c != 0.0 for c in leading):
            raise CaseFormatError("polynomial costs above degree 2 are not supported", "gencost", row_no)
    padded = [0.0] * (3 - len(coeffs)) + list(coeffs)
    c2, c1, c0 = padded
    return c0, c1, c2


def parse_matpower(text: str, name: Optional[str] = None) -> Network:
    """
    Parse MATPOWER case text into a per-unit Network.

    Args:
        text: contents of a ``.m`` case file
        name: case name; defaults to the ``function mpc = <name>`` header

    Returns:
        Network with out-of-service branches and generators removed
    """
    clean = _strip_comments(text)
    base_match = _BASE_RE.search(clean)
    if base_match is None:
        raise CaseFormatError("missing 'mpc.baseMVA = <num>;' assignment")
    base = float(base_match.group(1))
    if base <= 0:
        raise CaseFormatError(f"baseMVA must be positive, got {base}")

    tables: Dict[str, List[List[float]]] = {}
    for match in _TABLE_RE.finditer(clean):
        tables[match.group(1)] = _parse_table(match.group(1), match.group(2))
    for required in ("bus", "gen", "branch", "gencost"):
        if required not in tables:
            raise CaseFormatError(f"missing mpc.{required} table")

    if name is None:
        header = _NAME_RE.search(text)
        name = header.group(1) if header else "case"

    buses: List[Bus] = []
    index: Dict[int, int] = {}
    for row_no, row in enumerate(tables["bus"], start=1):
        bus_id = int(row[0])
        if bus_id in index:
            raise CaseFormatError(f"duplicate bus id {bus_id}", "bus", row_no)
        vmax, vmin = row[11], row[12]
        if vmin > vmax:
            raise CaseFormatError(f"Vmin {vmin} exceeds Vmax {vmax}", "bus", row_no)
        index[bus_id] = len(buses)
        buses.append(Bus(
            bus_id=bus_id,
            demand=complex(row[2], row[3]) / base,
            shunt=complex(row[4], row[5]) / base,
            vmin=vmin,
            vmax=vmax,
        ))

    gencost = tables["gencost"]
    if len(gencost) < len(tables["gen"]):
        raise CaseFormatError(
            f"{len(tables['gen'])} generators but only {len(gencost)} cost rows", "gencost", len(gencost)
        )
    generators: List[Generator] = []
    for row_no, row in enumerate(tables["gen"], start=1):
        bus_id = int(row[0])
        if bus_id not in index:
            raise CaseFormatError(f"unknown bus {bus_id}", "gen", row_no)
        c0, c1, c2 = _cost_coefficients(gencost[row_no - 1], row_no)
        if row[7] <= 0:
            continue
        qmax, qmin, pmax, pmin = row[3], row[4], row[8], row[9]
        if pmin > pmax or qmin > qmax:
            raise CaseFormatError("inverted generation bounds", "gen", row_no)
        if c2 < 0:
            raise CaseFormatError("negative quadratic cost (non-convex)", "gencost", row_no)
        generators.append(Generator(
            gen_id=row_no,
            bus=index[bus_id],
            pmin=pmin / base,
            pmax=pmax / base,
            qmin=qmin / base,
            qmax=qmax / base,
            c0=c0,
            c1=c1,
            c2=c2,
        ))

    branches: List[Branch] = []
    for row_no, row in enumerate(tables["branch"], start=1):
        fbus, tbus = int(row[0]), int(row[1])
        for end in (fbus, tbus):
            if end not in index:
                raise CaseFormatError(f"unknown bus {end}", "branch", row_no)
        if fbus == tbus:
            raise CaseFormatError(f"self-loop at bus {fbus}", "branch", row_no)
        if row[10] <= 0:
            continue
        r, x = row[2], row[3]
        if x == 0.0 and r <= 0.0:
            raise CaseFormatError(f"singular series impedance r={r}, x={x}", "branch", row_no)
        ratio = row[8] if row[8] != 0.0 else 1.0
        if ratio < 0:
            raise CaseFormatError(f"negative tap ratio {ratio}", "branch", row_no)
        rate_a = row[5]
        branches.append(Branch(
            line_id=row_no,
            from_bus=index[fbus],
            to_bus=index[tbus],
            y_series=1.0 / complex(r, x),
            b_charging=row[4],
            tap=ratio,
            shift=np.deg2rad(row[9]),
            fmax=rate_a / base if rate_a > 0 else None,
        ))

    net = Network(
        name=name,
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
    )
    logger.info(f"Parsed case {name}: {net.n_bus} buses, {net.n_branch} branches, {net.n_gen} generators")
    return net


def load_case(path) -> Network:
    """Read a case file, dispatching on the extension (``.m`` or canonical ``.json``)."""
    from .case_format import read_canonical

    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return read_canonical(text)
    return parse_matpower(text, name=path.stem)


# ---------------------------------------------------------------------------
# Admittances
# ---------------------------------------------------------------------------

def _branch_terms(net: Network) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Yff, Yft, Ytf, Ytt of every line (pi-model with tap tau*e^{i*theta} at the from side)."""
    ys = net.y_series
    charging = 0.5j * net.b_charging
    tap = net.tap * np.exp(1j * net.shift)
    yff = (ys + charging) / net.tap ** 2
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    ytt = ys + charging
    return yff, yft, ytf, ytt


def _power_matrices(net: Network) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    y = net.y_series
    g, b = y.real, y.imag
    tau = net.tap
    rot = np.exp(1j * net.shift)
    m = net.n_branch

    yp_from = np.zeros((m, 2, 2), dtype=complex)
    yp_from[:, 0, 0] = g / tau ** 2
    yp_from[:, 0, 1] = -rot * y / (2 * tau)
    yp_from[:, 1, 0] = -np.conj(y) / (2 * tau * rot)

    yq_from = np.zeros((m, 2, 2), dtype=complex)
    yq_from[:, 0, 0] = -b / tau ** 2
    yq_from[:, 0, 1] = rot * y / (2j * tau)
    yq_from[:, 1, 0] = -np.conj(y) / (2j * tau * rot)

    yp_to = np.zeros((m, 2, 2), dtype=complex)
    yp_to[:, 0, 1] = -rot * np.conj(y) / (2 * tau)
    yp_to[:, 1, 0] = -y / (2 * tau * rot)
    yp_to[:, 1, 1] = g

    yq_to = np.zeros((m, 2, 2), dtype=complex)
    yq_to[:, 0, 1] = -rot * np.conj(y) / (2j * tau)
    yq_to[:, 1, 0] = y / (2j * tau * rot)
    yq_to[:, 1, 1] = -b
    return yp_from, yq_from, yp_to, yq_to


def _incidence(rows: int, cols: int, targets: Sequence[int]) -> sp.csr_matrix:
    return sp.csr_matrix(
        (np.ones(rows), (np.arange(rows), np.asarray(targets, dtype=int))), shape=(rows, cols)
    )


def build_admittances(net: Network) -> AdmittanceSet:
    """Build Y, Y_from, Y_to, the incidence matrices and the per-branch power matrices."""
    n, m = net.n_bus, net.n_branch
    yff, yft, ytf, ytt = _branch_terms(net)
    lines = np.arange(m)
    f, t = net.from_bus, net.to_bus

    Y_from = sp.csr_matrix(
        (np.concatenate([yff, yft]), (np.concatenate([lines, lines]), np.concatenate([f, t]))),
        shape=(m, n),
    )
    Y_to = sp.csr_matrix(
        (np.concatenate([ytf, ytt]), (np.concatenate([lines, lines]), np.concatenate([f, t]))),
        shape=(m, n),
    )
    C_from = _incidence(m, n, f)
    C_to = _incidence(m, n, t)
    C = _incidence(net.n_gen, n, net.gen_bus)
    Y = (C_from.T @ Y_from + C_to.T @ Y_to + sp.diags(net.shunt)).tocsr()

    yp_from, yq_from, yp_to, yq_to = _power_matrices(net)
    for label, mats in (("Yp_from", yp_from), ("Yq_from", yq_from), ("Yp_to", yp_to), ("Yq_to", yq_to)):
        skew = np.abs(mats - np.conj(np.transpose(mats, (0, 2, 1)))).max(initial=0.0)
        if skew > HERMITIAN_TOL * max(1.0, np.abs(mats).max(initial=0.0)):
            logger.warning(f"{label} deviates from Hermitian by {skew:.3e}")

    logger.debug(f"Admittances built for {net.name}: nnz(Y)={Y.nnz}")
    return AdmittanceSet(
        Y=Y, Y_from=Y_from, Y_to=Y_to, C=C, C_from=C_from, C_to=C_to,
        Yp_from=yp_from, Yq_from=yq_from, Yp_to=yp_to, Yq_to=yq_to,
    )


def branch_flow(net: Network, adm: AdmittanceSet, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Complex power entering every line at its from and to terminals."""
    v = np.asarray(v, dtype=complex)
    s_from = (adm.C_from @ v) * np.conj(adm.Y_from @ v)
    s_to = (adm.C_to @ v) * np.conj(adm.Y_to @ v)
    return s_from, s_to


def branch_flow_split(net: Network, adm: AdmittanceSet, v: np.ndarray) -> FlowSplit:
    """
    Flows expressed through the 2x2 series power matrices plus the charging terms.

    The charging injection of a line appears in the reactive flow with a negative
    sign (the capacitor supplies reactive power to the bus).
    """
    v = np.asarray(v, dtype=complex)
    vl = np.column_stack([v[net.from_bus], v[net.to_bus]]) if net.n_branch else np.zeros((0, 2), complex)

    def quad(mats: np.ndarray) -> np.ndarray:
        return np.einsum("li,lij,lj->l", np.conj(vl), mats, vl).real

    series_from = quad(adm.Yp_from) + 1j * quad(adm.Yq_from)
    series_to = quad(adm.Yp_to) + 1j * quad(adm.Yq_to)
    half = net.b_charging / 2
    charging_from = -half / net.tap ** 2 * np.abs(v[net.from_bus]) ** 2
    charging_to = -half * np.abs(v[net.to_bus]) ** 2
    return FlowSplit(series_from, series_to, charging_from, charging_to)


def bus_injections(net: Network, adm: AdmittanceSet, v: np.ndarray) -> np.ndarray:
    """diag{v v* Y*}: complex power injected into the network at every bus."""
    v = np.asarray(v, dtype=complex)
    return v * np.conj(adm.Y @ v)
