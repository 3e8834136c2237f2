import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from fujitalab.grid import Field, WeightSpec, build_grid
from fujitalab.semigroup import (ProbeConfig, SolverFailure, apply_semigroup, assemble_operator,
                                 chapman_kolmogorov_defect, delta_field, fundamental_column,
                                 gaussian_kernel, kernel_probe)


def test_heat_operator_is_second_difference():
    g = build_grid(1, 1, 7)
    A = assemble_operator(g, WeightSpec("A", 0.0)).matrix.toarray()
    h2 = g.h ** 2
    for i in range(1, 6):
        assert A[i, i] == pytest.approx(-2 / h2)
        assert A[i, i - 1] == pytest.approx(1 / h2) and A[i, i + 1] == pytest.approx(1 / h2)
    assert A[0, 0] == pytest.approx(-1 / h2)  # Neumann closure


def test_degenerate_faces_next_to_origin():
    g = build_grid(1, 1, 7)
    op = assemble_operator(g, WeightSpec("A", 0.5))
    faces = op.face_coefficients[0]
    mid = len(faces) // 2
    assert faces[mid - 1] == pytest.approx((g.h / 2) ** 0.5)
    assert faces[mid] == pytest.approx((g.h / 2) ** 0.5)
    A = op.matrix.toarray()
    np.testing.assert_allclose(A, A.T, atol=0)


@pytest.mark.parametrize("dim,case,alpha", [(1, "A", 0.0), (1, "A", 0.7), (1, "B", 0.3),
                                            (2, "A", 0.5), (2, "B", 0.5), (2, "A", 0.0)])
def test_operator_structure(dim, case, alpha):
    g = build_grid(dim, 2, 9)
    op = assemble_operator(g, WeightSpec(case, alpha))
    A = op.matrix.toarray()
    np.testing.assert_allclose(A, A.T, rtol=0, atol=1e-14 * np.abs(A).max())
    np.testing.assert_allclose(op.apply(np.ones(g.size)), 0, atol=1e-12 * np.abs(A).max())
    assert all(np.all(f > 0) for f in op.face_coefficients)
    off = A - np.diag(np.diag(A))
    assert off.min() >= 0


def test_t_zero_is_identity(heat_op):
    phi = np.random.default_rng(0).random(heat_op.grid.size)
    out = apply_semigroup(heat_op, phi, 0.0)
    np.testing.assert_array_equal(out.values, phi)
    with pytest.raises(ValueError):
        apply_semigroup(heat_op, phi, -1.0)
    with pytest.raises(ValueError):
        apply_semigroup(heat_op, phi, 1.0, steps=0)


@pytest.mark.parametrize("which", ["heat_op", "degenerate_op"])
def test_mass_and_positivity(which, request):
    op = request.getfixturevalue(which)
    rng = np.random.default_rng(1)
    phi = Field(op.grid, rng.random(op.grid.size) * (rng.random(op.grid.size) > 0.7))
    out = apply_semigroup(op, phi, 0.5, steps=50)
    assert abs(out.mass() - phi.mass()) <= 1e-10 * phi.mass()
    assert out.values.min() >= -1e-12


def test_fundamental_column_contract(degenerate_op):
    col = fundamental_column(degenerate_op, 123, 0.2, 40)
    assert abs(col.mass() - 1) <= 1e-10
    assert col.values.min() >= -1e-12
    with pytest.raises(ValueError):
        fundamental_column(degenerate_op, 1, 0.0, 10)


def test_implicit_euler_matches_matrix_exponential_limit():
    # independent oracle: expm of the same generator
    g = build_grid(1, 3, 31)
    op = assemble_operator(g, WeightSpec("B", 0.4))
    phi = np.exp(-g.radius ** 2)
    exact = expm(0.3 * op.matrix.toarray()) @ phi
    e1 = np.abs(apply_semigroup(op, phi, 0.3, 100).values - exact).max()
    e2 = np.abs(apply_semigroup(op, phi, 0.3, 200).values - exact).max()
    assert e1 < 1e-3
    assert e1 / e2 == pytest.approx(2.0, abs=0.1)


def test_gaussian_oracle_desk_grid(heat_op):
    g = heat_op.grid
    x = g.cell_centers[:, 0]
    for t in (0.1, 0.3, 1.0):
        col = fundamental_column(heat_op, g.center_index, t, 400).values
        exact = gaussian_kernel(x, 0.0, t)
        err = np.sum(np.abs(col - exact)) / np.sum(np.abs(exact))
        assert err < 0.02


def test_chapman_kolmogorov_decreases_under_refinement():
    errs = []
    for cells, steps in ((201, 50), (401, 100), (801, 200)):
        op = assemble_operator(build_grid(1, 10, cells), WeightSpec("A", 0.0))
        errs.append(chapman_kolmogorov_defect(op, 0.1, 0.2, steps))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


@given(st.integers(0, 2 ** 31), st.floats(0.01, 2.0))
@settings(max_examples=20, deadline=None)
def test_jensen(seed, t):
    op = assemble_operator(build_grid(1, 5, 101), WeightSpec("A", 0.5))
    phi = np.random.default_rng(seed).random(op.grid.size)
    s = apply_semigroup(op, phi, t, 10).values
    assert np.all(s ** 2 <= apply_semigroup(op, phi ** 2, t, 10).values + 1e-10)
    assert np.all(np.sqrt(s) >= apply_semigroup(op, np.sqrt(phi), t, 10).values - 1e-10)


@pytest.mark.parametrize("case", ["A", "B"])
def test_2d_mass_positivity(ops_2d, case):
    op = ops_2d[case]
    d = delta_field(op.grid)
    out = apply_semigroup(op, d, 0.5, 20)
    assert abs(out.mass() - 1) < 1e-10
    assert out.values.min() >= -1e-12
    # symmetric about both axes for a centered source
    vals = out.values.reshape(op.grid.shape)
    np.testing.assert_allclose(vals, vals[::-1, :], atol=1e-12)
    np.testing.assert_allclose(vals, vals[:, ::-1], atol=1e-12)


def test_case_a_2d_degenerate_line_is_slower(ops_2d):
    # diffusion across x1 = 0 is suppressed, along it is not
    out = apply_semigroup(ops_2d["A"], delta_field(ops_2d["A"].grid), 1.0, 20).values
    vals = out.reshape(ops_2d["A"].grid.shape)
    c = ops_2d["A"].grid.cells_per_axis // 2
    assert vals[c + 3, c] < vals[c, c + 3]


def test_solver_failure_on_nonfinite(heat_op):
    rhs = np.zeros(heat_op.grid.size)
    rhs[5] = np.nan
    with pytest.raises(SolverFailure):
        heat_op.implicit_step(rhs, 0.1)


def test_multi_column_step(ops_2d):
    op = ops_2d["B"]
    rng = np.random.default_rng(3)
    cols = rng.random((op.grid.size, 3))
    both = op.implicit_step(cols, 0.05)
    for j in range(3):
        np.testing.assert_allclose(both[:, j], op.implicit_step(cols[:, j], 0.05), rtol=1e-13)


@pytest.mark.parametrize("alpha,expected", [(0.0, -0.5), (0.5, -1 / 1.5)])
def test_kernel_probe_smoothing(alpha, expected):
    op = assemble_operator(build_grid(1, 10, 801), WeightSpec("A", alpha))
    rep = kernel_probe(op, ProbeConfig(steps=200))
    assert rep.smoothing_exponent_fit == pytest.approx(expected, rel=0.1)
    assert rep.predicted_exponent == pytest.approx(expected)
    assert rep.mass_defect < 1e-10
    assert rep.k5_constant > 0 and rep.local_mass_min > 0
    assert rep.lower_bound_constant > 0
    assert rep.lower_bound_spread <= 2.0
    assert not rep.inconclusive
    assert [k for k, _ in rep.rows()][0] == "mass_defect"


def test_kernel_probe_flags_box_overflow():
    op = assemble_operator(build_grid(1, 1, 101), WeightSpec("A", 0.0))
    rep = kernel_probe(op, ProbeConfig(times=(0.5, 1.0, 4.0), steps=20))
    assert rep.inconclusive and "box" in rep.reason
