import numpy as np
import pytest

from modules.cones import (
    NonnegativeCone,
    PsdCone,
    RotatedSecondOrderCone,
    SecondOrderCone,
    make_cone,
    rotate,
)
from modules.conic_program import BlockKind, ConeBlock, smat, svec


def interior(cone, rng):
    if isinstance(cone, NonnegativeCone):
        return rng.uniform(0.5, 2.0, cone.size)
    if isinstance(cone, PsdCone):
        a = rng.standard_normal((cone.order, cone.order))
        return svec(a @ a.T + np.eye(cone.order))
    tail = rng.standard_normal(cone.size - 1)
    point = np.concatenate([[np.linalg.norm(tail) + 0.5], tail])
    return rotate(point) if isinstance(cone, RotatedSecondOrderCone) else point


CONES = [NonnegativeCone(4), SecondOrderCone(4), RotatedSecondOrderCone(4), PsdCone(3)]
IDS = ["orthant", "soc", "rsoc", "psd"]


@pytest.mark.parametrize("cone", CONES, ids=IDS)
def test_nt_scaling_identities(cone, rng):
    x, z = interior(cone, rng), interior(cone, rng)
    scaling = cone.scaling(x, z)
    assert np.allclose(scaling.w(z), scaling.lam)
    assert np.allclose(scaling.w_inv_t(x), scaling.lam)
    v = rng.standard_normal(cone.size)
    assert np.allclose(scaling.w_inv(scaling.w(v)), v)


@pytest.mark.parametrize("cone", CONES, ids=IDS)
def test_hessian_matches_operator(cone, rng):
    scaling = cone.scaling(interior(cone, rng), interior(cone, rng))
    cols = [scaling.w_inv(scaling.w_inv_t(e)) for e in np.eye(cone.size)]
    H = np.column_stack(cols)
    block = scaling.hessian()
    dense = np.diag(block) if block.ndim == 1 else block
    assert np.allclose(dense, H)
    assert np.allclose(dense, dense.T)


@pytest.mark.parametrize("cone", CONES, ids=IDS)
def test_divide_inverts_product(cone, rng):
    scaling = cone.scaling(interior(cone, rng), interior(cone, rng))
    r = rng.standard_normal(cone.size)
    w = cone.divide(scaling.lam, r)
    assert np.allclose(cone.product(scaling.lam, w), r)


@pytest.mark.parametrize("cone", CONES, ids=IDS)
def test_max_step_reaches_boundary(cone, rng):
    x = interior(cone, rng)
    d = -3.0 * interior(cone, rng)
    alpha = cone.max_step(x, d)
    assert np.isfinite(alpha) and alpha > 0
    assert cone.margin(x + 0.999 * alpha * d) > 0
    assert cone.margin(x + alpha * d) == pytest.approx(0.0, abs=1e-8)
    assert cone.margin(x + 1.001 * alpha * d) < 0


@pytest.mark.parametrize("cone", CONES, ids=IDS)
def test_inward_direction_has_no_step_limit(cone, rng):
    assert cone.max_step(interior(cone, rng), interior(cone, rng)) == np.inf


@pytest.mark.parametrize("cone", CONES, ids=IDS)
def test_identity_is_interior(cone):
    assert cone.margin(cone.identity()) > 0
    assert np.allclose(cone.product(cone.algebra_identity(), np.arange(cone.size, dtype=float)),
                       np.arange(cone.size))


def test_psd_lambda_is_diagonal(rng):
    cone = PsdCone(3)
    scaling = cone.scaling(interior(cone, rng), interior(cone, rng))
    lam = smat(scaling.lam)
    assert np.allclose(lam, np.diag(np.diag(lam)))
    assert np.all(np.diag(lam) > 0)


def test_scaling_rejects_boundary_points():
    with pytest.raises(np.linalg.LinAlgError):
        NonnegativeCone(2).scaling(np.array([1.0, 0.0]), np.ones(2))
    with pytest.raises(np.linalg.LinAlgError):
        SecondOrderCone(3).scaling(np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))


def test_make_cone():
    assert isinstance(make_cone(ConeBlock(BlockKind.RSOC, 0, 3)), RotatedSecondOrderCone)
    assert make_cone(ConeBlock(BlockKind.PSD, 0, 6, 3)).degree == 3
    assert make_cone(ConeBlock(BlockKind.SOC, 0, 5)).degree == 1
    with pytest.raises(ValueError):
        make_cone(ConeBlock(BlockKind.FREE, 0, 2))
