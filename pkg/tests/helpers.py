"""Test helpers: bundled-case loading, small networks and independent numerical oracles."""

import itertools
import os
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence, Tuple

import numpy as np
import pytest
from scipy.optimize import fsolve, minimize

from modules.netmodel import (
    AdmittanceSet,
    Branch,
    Bus,
    Generator,
    Network,
    branch_flow,
    build_admittances,
    bus_injections,
    load_case,
)
from modules.opf import OperatingPoint, objective, residuals

CASE_DIR = Path(__file__).resolve().parents[1] / "modules" / "data" / "cases"


class Case(NamedTuple):
    net: Network
    adm: AdmittanceSet


@lru_cache(maxsize=None)
def bundled(name: str) -> Case:
    net = load_case(CASE_DIR / f"{name}.m")
    return Case(net, build_admittances(net))


def external_case(name: str) -> Case:
    """A large case from OPF_CASE_DIR; skips the calling test when the file is absent."""
    folder = os.getenv("OPF_CASE_DIR")
    path = Path(folder) / f"{name}.m" if folder else None
    if path is None or not path.exists():
        pytest.skip(f"{name}.m not found under OPF_CASE_DIR")
    net = load_case(path)
    return Case(net, build_admittances(net))


def two_bus_network(y_series: complex = 1 - 2j, b_charging: float = 0.0, tap: float = 1.0, shift: float = 0.0,
                    demand: complex = 0j, costs=(0.0, 0.0, 0.0), fmax=None, base_mva: float = 100.0) -> Network:
    c0, c1, c2 = costs
    return Network(
        name="two-bus",
        base_mva=base_mva,
        buses=(Bus(1, 0j, 0j, 0.9, 1.1), Bus(2, demand, 0j, 0.9, 1.1)),
        branches=(Branch(1, 0, 1, y_series, b_charging, tap, shift, fmax),),
        generators=(Generator(1, 0, 0.0, 2.0, -1.0, 1.0, c0, c1, c2),),
    )


def random_voltages(rng: np.random.Generator, n: int, spread: float = 0.1) -> np.ndarray:
    return (1.0 + spread * rng.standard_normal(n)) * np.exp(1j * spread * rng.standard_normal(n))


def random_point(rng: np.random.Generator, net: Network, spread: float = 0.1) -> OperatingPoint:
    """Arbitrary (generally infeasible) point with every entry random."""
    g, m = net.n_gen, net.n_branch
    return OperatingPoint(
        v=random_voltages(rng, net.n_bus, spread),
        p=rng.uniform(0.0, 1.0, g),
        q=rng.uniform(-0.5, 0.5, g),
        s_from=rng.standard_normal(m) + 1j * rng.standard_normal(m),
        s_to=rng.standard_normal(m) + 1j * rng.standard_normal(m),
    )


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def power_flow_point(net: Network, adm: AdmittanceSet, vm_set: Sequence[float],
                     p_set: Sequence[float]) -> OperatingPoint:
    """
    Polar power-flow solve: generator buses hold ``vm_set``, generators other than
    the first hold ``p_set`` (per-unit), the first generator's bus is the slack.
    """
    n = net.n_bus
    slack = int(net.gen_bus[0])
    gen_buses = set(int(k) for k in net.gen_bus)
    angle_idx = np.array([k for k in range(n) if k != slack], dtype=int)
    mag_idx = np.array([k for k in range(n) if k not in gen_buses], dtype=int)
    vm = np.ones(n)
    vm[net.gen_bus] = vm_set
    p_set = np.asarray(p_set, dtype=float)
    fixed = adm.C.T @ p_set

    def voltages(z: np.ndarray) -> np.ndarray:
        va = np.zeros(n)
        va[angle_idx] = z[:angle_idx.size]
        mag = vm.copy()
        mag[mag_idx] = z[angle_idx.size:]
        return mag * np.exp(1j * va)

    def mismatch(z: np.ndarray) -> np.ndarray:
        need = net.demand + bus_injections(net, adm, voltages(z))
        return np.concatenate([(need.real - fixed)[angle_idx], need.imag[mag_idx]])

    z0 = np.concatenate([np.zeros(angle_idx.size), np.ones(mag_idx.size)])
    z, _, ier, msg = fsolve(mismatch, z0, xtol=1e-13, full_output=True)
    assert ier == 1, msg

    v = voltages(z)
    need = net.demand + bus_injections(net, adm, v)
    p = p_set.copy()
    others = [g for g in range(net.n_gen) if g != 0 and net.gen_bus[g] == slack]
    p[0] = need[slack].real - p_set[others].sum()
    counts = np.bincount(net.gen_bus, minlength=n)
    q = need.imag[net.gen_bus] / counts[net.gen_bus]
    s_from, s_to = branch_flow(net, adm, v)
    return OperatingPoint(v=v, p=p, q=q, s_from=s_from, s_to=s_to)


def case9_solved_point(net: Network, adm: AdmittanceSet) -> OperatingPoint:
    """The case9 power-flow solution at the case file's generator set points."""
    return power_flow_point(net, adm, [1.04, 1.025, 1.025], [0.723, 1.63, 0.85])


def grid_search_optimum(net: Network, adm: AdmittanceSet, levels: int = 5) -> Tuple[float, OperatingPoint]:
    """
    Global OPF optimum of a small network: local SLSQP solves started from every
    point of a grid over voltage magnitudes and generator dispatch fractions.
    """
    n, g = net.n_bus, net.n_gen
    ref = int(net.gen_bus[0])
    lim = np.flatnonzero(net.flow_limited)

    def unpack(z):
        vm, va, p, q = np.split(z, [n, 2 * n, 2 * n + g])
        return vm * np.exp(1j * va), p, q

    def balance(z):
        v, p, q = unpack(z)
        mis = net.demand + bus_injections(net, adm, v) - adm.C.T @ (p + 1j * q)
        return np.concatenate([mis.real, mis.imag])

    def flow_margin(z):
        v, _, _ = unpack(z)
        s_from, s_to = branch_flow(net, adm, v)
        cap = net.fmax[lim] ** 2
        return np.concatenate([cap - np.abs(s_from[lim]) ** 2, cap - np.abs(s_to[lim]) ** 2])

    bounds = (list(zip(net.vmin, net.vmax))
              + [(0.0, 0.0) if k == ref else (-1.0, 1.0) for k in range(n)]
              + list(zip(net.pmin, net.pmax)) + list(zip(net.qmin, net.qmax)))
    constraints = [{"type": "eq", "fun": balance}]
    if lim.size:
        constraints.append({"type": "ineq", "fun": flow_margin})

    best_cost, best_point = np.inf, None
    magnitudes = np.linspace(0.0, 1.0, levels)
    fractions = np.linspace(0.1, 0.9, 3)
    for level, split in itertools.product(magnitudes, itertools.product(fractions, repeat=g)):
        vm0 = net.vmin + level * (net.vmax - net.vmin)
        p0 = net.pmin + np.asarray(split) * (net.pmax - net.pmin)
        z0 = np.concatenate([vm0, np.zeros(n), p0, np.zeros(g)])
        result = minimize(lambda z: objective(net, z[2 * n:2 * n + g]), z0, method="SLSQP",
                          bounds=bounds, constraints=constraints, options={"ftol": 1e-12, "maxiter": 500})
        v, p, q = unpack(result.x)
        s_from, s_to = branch_flow(net, adm, v)
        point = OperatingPoint(v, p, q, s_from, s_to)
        if residuals(net, adm, point).max_violation > 1e-6:
            continue
        cost = objective(net, p)
        if cost < best_cost:
            best_cost, best_point = cost, point
    assert best_point is not None, "no feasible start converged"
    return best_cost, best_point
