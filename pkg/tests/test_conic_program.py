import numpy as np
import pytest
import scipy.sparse as sp

from modules.conic_program import (
    Affine,
    BlockKind,
    ConeBlock,
    ConicProgram,
    ProgramBuilder,
    smat,
    svec,
    svec_index,
    svec_order,
)


def test_svec_is_an_isometry(rng):
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))
    a, b = a + a.T, b + b.T
    assert np.allclose(smat(svec(a)), a)
    assert svec(a) @ svec(b) == pytest.approx(np.trace(a @ b))


def test_svec_layout():
    mat = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    r2 = np.sqrt(2)
    assert np.allclose(svec(mat), [1, 2 * r2, 3 * r2, 4, 5 * r2, 6])
    assert svec_index(3, 0, 0) == 0
    assert svec_index(3, 2, 0) == 2
    assert svec_index(3, 1, 1) == 3
    assert svec_index(3, 1, 2) == svec_index(3, 2, 1) == 4
    assert svec_order(6) == 3
    with pytest.raises(ValueError):
        svec_order(7)


def test_affine_rows_apply_coefficients_and_constant():
    builder = ProgramBuilder()
    y = builder.free("y", 3)
    expr = Affine.var(y[0], 2.0) + Affine.var(y[2]) - Affine.constant(1.5)
    for row in (expr, -expr, expr.scaled(2.0), Affine.var(y[1]) + Affine.var(y[1])):
        builder.add_row(row)
    prog = builder.build()
    x = np.array([1.0, 2.0, 3.0])
    # add_row imposes expr == 0, so A x - b is the expression value
    assert np.allclose(prog.A @ x - prog.b, [3.5, -3.5, 7.0, 4.0])


def test_builder_merges_adjacent_linear_blocks():
    builder = ProgramBuilder("merge")
    a = builder.free("a", 2)
    b = builder.free("b", 3)
    c = builder.nonneg("c", 1)
    builder.psd("w", {(0, 0): Affine.var(a[0]), (1, 0): Affine.var(a[1]), (1, 1): Affine.var(b[0])}, 2)
    d = builder.nonneg("d", 2)
    prog = builder.build()
    kinds = [(blk.kind, blk.size) for blk in prog.blocks]
    assert kinds == [(BlockKind.FREE, 5), (BlockKind.NONNEG, 1), (BlockKind.PSD, 3), (BlockKind.NONNEG, 2)]
    assert prog.var_map["d"].tolist() == d.tolist()
    assert prog.var_map["c"].tolist() == c.tolist()
    assert prog.n_rows == 3


def test_psd_link_rows_hold_at_consistent_point():
    builder = ProgramBuilder()
    a = builder.free("a", 3)
    w = builder.psd("w", {(0, 0): Affine.var(a[0]), (1, 0): Affine.var(a[1]), (1, 1): Affine.var(a[2])}, 2)
    prog = builder.build()
    x = np.zeros(prog.n_vars)
    x[a] = [2.0, 0.5, 1.0]
    x[w] = svec(np.array([[2.0, 0.5], [0.5, 1.0]]))
    assert np.allclose(prog.A @ x, prog.b)


def test_bound_rows():
    builder = ProgramBuilder()
    y = builder.free("y", 1)[0]
    builder.bound("fixed", Affine.var(y), 1.0, 1.0)
    assert builder.n_rows == 1 and builder.n_vars == 1
    builder.bound("box", Affine.var(y), 0.0, 2.0)
    builder.bound("upper", Affine.var(y), None, 3.0)
    builder.bound("lower", Affine.var(y), -np.inf, 3.0)
    prog = builder.build()
    assert prog.n_rows == 5
    assert prog.var_map["box"].size == 2 and prog.var_map["upper"].size == 1
    assert prog.var_map["lower"].size == 1


def test_costs_accumulate_and_offset():
    builder = ProgramBuilder()
    x = builder.nonneg("x", 2)
    builder.add_costs(x, [1.0, 2.0])
    builder.add_cost(x[0], 0.5)
    builder.offset = 10.0
    prog = builder.build()
    assert prog.objective_value(np.array([1.0, 1.0])) == pytest.approx(13.5)


def _program(blocks, n_vars, rows=1, var_map=None):
    return ConicProgram(
        c=np.zeros(n_vars),
        A=sp.csr_matrix((rows, n_vars)),
        b=np.zeros(rows),
        blocks=tuple(blocks),
        var_map=var_map or {},
        row_map={},
    )


@pytest.mark.parametrize("blocks, n_vars, message", [
    ([ConeBlock(BlockKind.FREE, 0, 2), ConeBlock(BlockKind.NONNEG, 3, 1)], 4, "partition"),
    ([ConeBlock(BlockKind.PSD, 0, 4, 2)], 4, "psd block"),
    ([ConeBlock(BlockKind.SOC, 0, 1)], 1, "second-order"),
    ([ConeBlock(BlockKind.RSOC, 0, 2)], 2, "rotated"),
    ([ConeBlock(BlockKind.FREE, 0, 2)], 3, "cover"),
])
def test_validate_rejects_bad_partitions(blocks, n_vars, message):
    with pytest.raises(ValueError, match=message):
        _program(blocks, n_vars).validate()


def test_validate_shape_and_var_map():
    prog = ConicProgram(np.zeros(2), sp.csr_matrix((2, 2)), np.zeros(1), (ConeBlock(BlockKind.FREE, 0, 2),), {}, {})
    with pytest.raises(ValueError, match="shape"):
        prog.validate()
    prog = _program([ConeBlock(BlockKind.FREE, 0, 2)], 2,
                    var_map={"a": np.array([0, 1]), "b": np.array([1])})
    with pytest.raises(ValueError, match="more than one family"):
        prog.validate()


def test_size_report_and_text():
    builder = ProgramBuilder("dump")
    a = builder.free("a", 1)
    builder.psd("w", {(0, 0): Affine.var(a[0])}, 2)
    builder.add_cost(a[0], 1.0)
    prog = builder.build()
    report = prog.size_report()
    assert report["psd_blocks"] == 1
    assert report["largest_psd_order"] == 2
    assert report["variables"] == 4
    text = prog.to_text()
    for section in ("objective", "equalities", "rhs", "blocks", "families"):
        assert f"\n{section}\n" in text
    assert "psd 1 3 2" in text
