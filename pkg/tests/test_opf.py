import json

import numpy as np
import pytest

from helpers import case9_solved_point, random_point, two_bus_network
from modules.netmodel import Bus, Network, build_admittances
from modules.opf import (
    OperatingPoint,
    flat_start,
    is_feasible,
    objective,
    point_from_voltages,
    residuals,
)


def test_objective_in_native_units():
    net = two_bus_network(costs=(2.0, 3.0, 4.0), base_mva=1.0)
    assert objective(net, np.array([1.5])) == pytest.approx(2 + 3 * 1.5 + 4 * 2.25)


def test_objective_case9_dispatch(case9):
    cost = objective(case9.net, np.array([0.8980, 1.3432, 0.9419]))
    assert cost == pytest.approx(5296.69, rel=5e-3)


def test_objective_is_convex(case9, rng):
    net = case9.net
    a, b = rng.uniform(0.1, 2.5, (2, net.n_gen))
    mid = objective(net, (a + b) / 2)
    assert mid <= (objective(net, a) + objective(net, b)) / 2 + 1e-9


def test_power_flow_solution_is_feasible(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    assert is_feasible(net, adm, x)
    assert residuals(net, adm, x).max_violation < 1e-6


def test_scaled_voltage_breaks_upper_bound(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    v = x.v.copy()
    v[4] *= 1.5
    res = residuals(net, adm, point_from_voltages(net, adm, v, x.p, x.q))
    assert res.vmag_hi[4] > 0
    assert res.as_dict()["vmag_hi"] > 0
    assert not is_feasible(net, adm, point_from_voltages(net, adm, v, x.p, x.q))


def test_zero_network_has_no_residual():
    net = Network("empty-ish", 100.0, (Bus(1, 0j, 0j, 0.0, 1.1),), (), ())
    adm = build_admittances(net)
    x = OperatingPoint(np.zeros(1), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
    res = residuals(net, adm, x)
    assert res.max_violation == 0.0


def test_unlimited_lines_never_bind(toy2):
    net, adm = toy2
    res = residuals(net, adm, flat_start(net, adm))
    assert np.all(np.isneginf(res.flow_from))
    assert res.as_dict()["flow_from"] == 0.0


def test_feasibility_is_monotone_in_tol(case14, rng):
    net, adm = case14
    x = random_point(rng, net)
    worst = residuals(net, adm, x).max_violation
    assert not is_feasible(net, adm, x, tol=worst / 2)
    assert is_feasible(net, adm, x, tol=worst)
    assert is_feasible(net, adm, x, tol=worst * 2)
    with pytest.raises(ValueError):
        is_feasible(net, adm, x, tol=0.0)


def test_flat_start(case14):
    net, adm = case14
    x = flat_start(net, adm)
    assert np.all(x.v == 1)
    assert np.array_equal(x.p, net.pmin)
    assert np.all(x.q == 0)
    res = residuals(net, adm, x)
    assert np.allclose(res.flow_def_from, 0) and np.allclose(res.flow_def_to, 0)


def test_point_from_voltages_balances_generator_buses(case9):
    net, adm = case9
    x = point_from_voltages(net, adm, np.exp(0.05j * np.arange(net.n_bus)))
    res = residuals(net, adm, x)
    assert np.allclose(res.balance[net.gen_bus], 0)


def test_non_finite_entries_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        OperatingPoint([np.nan], [0.0], [0.0], [], [])


def test_dimension_mismatch(case9):
    net, adm = case9
    with pytest.raises(ValueError, match="shape"):
        residuals(net, adm, OperatingPoint(np.ones(3), np.zeros(3), np.zeros(3), np.zeros(9), np.zeros(9)))


def test_text_is_rotation_invariant(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    a = OperatingPoint.from_text(net, x.rotated(0.7).to_text(net))
    b = OperatingPoint.from_text(net, x.to_text(net))
    assert np.allclose(a.v, b.v)
    assert np.angle(a.v[net.gen_bus[0]]) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(a.s_from, x.s_from)
    assert is_feasible(net, adm, a)


def test_text_with_missing_entry(case9):
    net, adm = case9
    x = flat_start(net, adm)
    data = x.to_dict(net)
    data["generators"].pop()
    with pytest.raises(ValueError, match="lacks entry"):
        OperatingPoint.from_text(net, json.dumps(data))


def test_stacked_layout(case9, rng):
    net = case9.net
    x = random_point(rng, net)
    vec = x.stacked()
    assert vec.size == 2 * net.n_bus + 2 * net.n_gen + 4 * net.n_branch
    y = OperatingPoint.from_stacked(net, vec)
    assert np.allclose(y.v, x.v) and np.allclose(y.s_to, x.s_to)
