import json

import numpy as np
import pytest

from helpers import case9_solved_point, power_flow_point, random_point, two_bus_network
from modules.analysis import (
    active_jacobian,
    active_sets,
    equality_map,
    feasibility_distance_upper,
    jacobians,
    licq_report,
    sensitivity_measure,
)
from modules.netmodel import Bus, Generator, Network, build_admittances
from modules.opf import OperatingPoint


def columns(x):
    return np.concatenate([x.v.real, x.v.imag, x.p, x.q, x.s_from.real, x.s_from.imag,
                           x.s_to.real, x.s_to.imag])


def point_from_columns(net, z):
    n, g, m = net.n_bus, net.n_gen, net.n_branch
    parts = np.split(z, np.cumsum([n, n, g, g, m, m, m]))
    return OperatingPoint(parts[0] + 1j * parts[1], parts[2], parts[3],
                          parts[4] + 1j * parts[5], parts[6] + 1j * parts[7])


def numeric_jacobian(fun, z, step=1e-6):
    cols = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = step
        cols.append((fun(z + e) - fun(z - e)) / (2 * step))
    return np.column_stack(cols)


def loaded_two_bus():
    net = two_bus_network(demand=0.2 + 0.1j, costs=(0.0, 1.0, 0.0))
    adm = build_admittances(net)
    return net, adm, power_flow_point(net, adm, [1.0], [0.0])


def with_generator_bounds(net, pmax, qmax):
    gen = net.generators[0]
    capped = Generator(gen.gen_id, gen.bus, gen.pmin, pmax, gen.qmin, qmax, gen.c0, gen.c1, gen.c2)
    return Network(name="capped", base_mva=net.base_mva, buses=net.buses, branches=net.branches,
                   generators=(capped,))


# Jacobians

@pytest.mark.parametrize("fixture", ["case9", "toy3"])
def test_equality_jacobian_matches_finite_differences(request, fixture, rng):
    net, adm = request.getfixturevalue(fixture)
    x = random_point(rng, net)
    bundle = jacobians(net, adm, x)
    numeric = numeric_jacobian(lambda z: equality_map(net, adm, point_from_columns(net, z)), columns(x))
    assert bundle.J_eq.shape == numeric.shape
    assert np.abs(bundle.J_eq.toarray() - numeric).max() < 1e-5
    assert bundle.n_cols == 2 * net.n_bus + 2 * net.n_gen + 4 * net.n_branch


def test_inequality_jacobians_match_finite_differences(case9, rng):
    net, adm = case9
    x = random_point(rng, net)
    bundle = jacobians(net, adm, x)
    z = columns(x)

    def squares(z):
        point = point_from_columns(net, z)
        return np.concatenate([np.abs(point.v) ** 2, point.p, point.q,
                               np.abs(point.s_from) ** 2, np.abs(point.s_to) ** 2])

    stacked = np.vstack([J.toarray() for J in (bundle.J1, bundle.J2, bundle.J3, bundle.J4_from, bundle.J4_to)])
    assert np.abs(stacked - numeric_jacobian(squares, z)).max() < 1e-5


def test_equality_map_vanishes_at_power_flow_solution(case9):
    net, adm = case9
    assert np.abs(equality_map(net, adm, case9_solved_point(net, adm))).max() < 1e-8


# active sets

def test_exact_activation_at_case9_solution(case9):
    net, adm = case9
    sets = active_sets(net, case9_solved_point(net, adm))
    assert sets.total == 0
    assert sets.delta == 0.0


def test_widened_margin_picks_up_near_active_bounds(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    sets = active_sets(net, x, delta=0.07)
    # generator bus 1 sits at 1.04 against vmax 1.1
    assert 0 in sets.B1_hi
    assert 1 not in sets.B1_hi
    assert sets.B1_lo.size == 0


def test_active_sets_grow_with_delta(case9, rng):
    net, _ = case9
    x = random_point(rng, net, spread=0.05)
    previous = active_sets(net, x, 0.0)
    for delta in (0.01, 0.1, 0.5):
        current = active_sets(net, x, delta)
        for name, count in previous.counts().items():
            assert set(getattr(previous, name)) <= set(getattr(current, name))
            assert current.counts()[name] >= count
        previous = current


def test_flow_limits_only_on_limited_lines(toy3):
    net = toy3.net
    big = OperatingPoint(np.ones(net.n_bus), np.zeros(net.n_gen), np.zeros(net.n_gen),
                         np.full(net.n_branch, 100.0 + 0j), np.full(net.n_branch, 100.0 + 0j))
    sets = active_sets(net, big)
    limited = np.flatnonzero(net.flow_limited)
    assert np.array_equal(sets.B4_from, limited)
    assert np.array_equal(sets.B4_to, limited)


def test_negative_delta_rejected(case9):
    net, adm = case9
    with pytest.raises(ValueError, match="delta"):
        active_sets(net, case9_solved_point(net, adm), delta=-0.1)


def test_active_jacobian_keeps_lower_and_upper_rows(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    bundle = jacobians(net, adm, x)
    sets = active_sets(net, x, delta=0.07)
    J = active_jacobian(bundle, sets)
    expected = bundle.J_eq.shape[0] + sum(sets.counts().values())
    assert J.shape == (expected, bundle.n_cols)


def test_equal_voltage_limits_break_licq():
    net, adm, x = loaded_two_bus()
    vm = float(abs(x.v[0]))
    buses = (Bus(1, 0j, 0j, vm, vm),) + net.buses[1:]
    fixed = Network(name="fixed-voltage", base_mva=net.base_mva, buses=buses, branches=net.branches,
                    generators=net.generators)
    fixed_adm = build_admittances(fixed)
    sets = active_sets(fixed, x)
    assert 0 in sets.B1_lo and 0 in sets.B1_hi
    J = active_jacobian(jacobians(fixed, fixed_adm, x), sets)
    assert J.shape[0] == 8 + 2
    assert not licq_report(fixed, fixed_adm, x).licq


# LICQ

def test_licq_holds_with_no_active_bounds():
    net, adm, x = loaded_two_bus()
    report = licq_report(net, adm, x)
    assert report.licq
    assert report.sigma > 0
    assert (report.rows, report.cols) == (8, 12)
    assert report.mu_bound_ok is None


def test_licq_fails_when_the_only_generator_is_pinned():
    # with p and q both fixed the balance rows see only voltages, where the free
    # reference angle removes one rank
    net, adm, x = loaded_two_bus()
    pinned = with_generator_bounds(net, float(x.p[0]), float(x.q[0]))
    report = licq_report(pinned, build_admittances(pinned), x)
    assert report.active["B2_hi"] == 1 and report.active["B3_hi"] == 1
    assert not report.licq
    assert report.sigma < 1e-8 * report.sigma_max


def test_licq_at_case9_solution(case9):
    net, adm = case9
    report = licq_report(net, adm, case9_solved_point(net, adm))
    assert report.licq
    payload = json.loads(report.to_text())
    assert payload["licq"] is True
    assert payload["notes"]


def test_sigma_is_rotation_invariant(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    first = licq_report(net, adm, x, delta=0.07)
    second = licq_report(net, adm, x.rotated(0.7), delta=0.07)
    assert second.sigma == pytest.approx(first.sigma, rel=1e-8)
    assert second.active == first.active


def test_penalty_bound_check():
    net, adm, x = loaded_two_bus()
    small = licq_report(net, adm, x, delta=0.01, M=1e-9 * np.eye(net.n_bus))
    assert small.mu_bound_ok
    assert small.lambda_max_M == pytest.approx(1e-9)
    assert small.bound == pytest.approx(small.sigma / (4 * 0.01 * small.P))
    large = licq_report(net, adm, x, delta=0.01, M=1e6 * np.eye(net.n_bus))
    assert not large.mu_bound_ok


def test_penalty_bound_needs_positive_delta():
    net, adm, x = loaded_two_bus()
    with pytest.raises(ValueError, match="delta > 0"):
        licq_report(net, adm, x, M=np.eye(net.n_bus))


# sensitivity measure

def test_sensitivity_measure_without_lines():
    buses = tuple(Bus(k + 1, 0j, 0.3 + 0.4j if k == 0 else 0j, 0.9, 1.1) for k in range(3))
    net = Network(name="islands", base_mva=100.0, buses=buses, branches=(), generators=())
    assert sensitivity_measure(net, build_admittances(net)) == pytest.approx(2 * 3 + 0.5)


def test_sensitivity_measure_counts_line_terms():
    net = two_bus_network(y_series=1 - 1j, b_charging=0.2)
    adm = build_admittances(net)
    P = sensitivity_measure(net, adm)
    matrices = sum(np.abs(a).sum() for a in (adm.Yp_from, adm.Yq_from, adm.Yp_to, adm.Yq_to))
    assert P == pytest.approx(2 * 2 + 2 * 1 + 0.1 + 0.1 + np.sqrt(2) * matrices)


# feasibility distance

def test_distance_to_itself_is_zero(case9):
    net, adm = case9
    x = case9_solved_point(net, adm)
    assert feasibility_distance_upper(net, adm, x, x) == pytest.approx(0.0, abs=1e-12)


def test_distance_with_identity_weight(case9, rng):
    net, adm = case9
    x_feas = case9_solved_point(net, adm)
    x0 = random_point(rng, net)
    plain = feasibility_distance_upper(net, adm, x0, x_feas)
    weighted = feasibility_distance_upper(net, adm, x0, x_feas, M=np.eye(net.n_bus))
    assert weighted == pytest.approx(plain)
    direct = np.linalg.norm(np.concatenate([x_feas.v - x0.v, x_feas.generation - x0.generation,
                                            x_feas.s_from - x0.s_from, x_feas.s_to - x0.s_to]))
    assert plain == pytest.approx(direct)


def test_distance_rejects_infeasible_witness_and_indefinite_weight(case9, rng):
    net, adm = case9
    x_feas = case9_solved_point(net, adm)
    with pytest.raises(ValueError, match="not feasible"):
        feasibility_distance_upper(net, adm, x_feas, random_point(rng, net))
    x0 = x_feas.rotated(0.5)
    with pytest.raises(ValueError, match="positive semidefinite"):
        feasibility_distance_upper(net, adm, x0, x_feas, M=-np.eye(net.n_bus))
