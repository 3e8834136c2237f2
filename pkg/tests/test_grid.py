import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fujitalab.grid import Field, NormKind, WeightSpec, build_grid, norm, weight_at


def weak_oracle(vals, vol, zeta):
    a = np.abs(vals)
    best = 0.0
    for level in np.unique(a[a > 0]):
        best = max(best, level * (vol * np.count_nonzero(a >= level)) ** (1 / zeta))
    return best


def test_grid_1d_example():
    g = build_grid(1, 10, 5)
    assert g.h == 4
    np.testing.assert_array_equal(g.cell_centers[:, 0], [-8, -4, 0, 4, 8])
    assert g.cell_volume * g.size == pytest.approx(20)


def test_grid_2d_example():
    g = build_grid(2, 1, 3)
    assert g.size == 9
    np.testing.assert_allclose(g.cell_centers[g.center_index], [0, 0], atol=1e-15)
    assert g.cell_volume * g.size == pytest.approx(4)
    assert g.index_of([0.0, 0.0]) == g.center_index


@pytest.mark.parametrize("args", [(1, 10, 4), (1, 10, 1), (3, 1, 5), (1, 0, 5), (2, -1, 3)])
def test_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(*args)


@pytest.mark.parametrize("case,alpha,point,expected", [
    ("A", 0.5, [4.0, 7.0], 2.0),
    ("A", 0.5, [4.0], 2.0),
    ("B", 0.5, [3.0, 4.0], 5 ** 0.5),
    ("A", 0.0, [0.0, 0.0], 1.0),
    ("B", 0.0, [0.0, 3.0], 1.0),
    ("B", 0.3, [0.0, 0.0], 0.0),
    ("A", 0.3, [0.0, 5.0], 0.0),
])
def test_weight_at(case, alpha, point, expected):
    assert weight_at(WeightSpec(case, alpha), point) == pytest.approx(expected, rel=1e-15)


def test_weight_vectorized():
    pts = np.array([[1.0, 2.0], [4.0, 0.0]])
    np.testing.assert_allclose(weight_at(WeightSpec("A", 0.5), pts), [1.0, 2.0])


def test_indicator_weak_norm():
    g = build_grid(1, 10, 21)
    vals = np.zeros(g.size)
    vals[3:10] = 1.0
    m = 7 * g.cell_volume
    for zeta in (1.5, 2.0, 7.0):
        assert norm(Field(g, vals), zeta, NormKind.WEAK) == pytest.approx(m ** (1 / zeta), rel=1e-14)


def test_constant_sup():
    g = build_grid(2, 1, 5)
    f = Field(g, np.full(g.size, 3.25))
    assert norm(f, math.inf) == 3.25
    assert norm(f, math.inf, "WeakLorentz") == 3.25


def test_strong_norm_hand_value():
    vals = np.array([1.0, -2.0, 2.0])
    assert norm(vals, 2, cell_volume=0.5) == pytest.approx(math.sqrt(0.5 * 9))


@pytest.mark.parametrize("zeta,kind", [(1.0, "WeakLorentz"), (0.5, "WeakLorentz"), (0.9, "Strong")])
def test_norm_index_rejected(zeta, kind):
    with pytest.raises(ValueError):
        norm(np.ones(3), zeta, kind, cell_volume=1.0)


def test_bare_array_needs_volume():
    with pytest.raises(ValueError):
        norm(np.ones(3), 2.0)


fields = arrays(np.float64, st.integers(1, 60),
                elements=st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False))


@given(fields, st.floats(1.05, 20), st.floats(0.01, 10))
@settings(max_examples=200, deadline=None)
def test_weak_matches_bruteforce(vals, zeta, vol):
    got = norm(vals, zeta, NormKind.WEAK, cell_volume=vol)
    assert got == pytest.approx(weak_oracle(vals, vol, zeta), rel=1e-12, abs=1e-300)


@given(fields, st.floats(1.05, 20), st.floats(0.01, 10))
@settings(max_examples=200, deadline=None)
def test_weak_below_strong(vals, zeta, vol):
    w = norm(vals, zeta, NormKind.WEAK, cell_volume=vol)
    s = norm(vals, zeta, NormKind.STRONG, cell_volume=vol)
    assert w <= s * (1 + 1e-12)


@given(fields, st.floats(1.05, 20), st.floats(-50, 50))
@settings(max_examples=200, deadline=None)
def test_homogeneity(vals, zeta, c):
    for kind in NormKind:
        base = norm(vals, zeta, kind, cell_volume=0.3)
        assert norm(c * vals, zeta, kind, cell_volume=0.3) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)


@given(fields, st.floats(1.05, 10), st.floats(1.05, 10), st.floats(0.0, 1.0))
@settings(max_examples=100, deadline=None)
def test_interpolation_inequality(vals, a, b, theta):
    r0, r1 = sorted((a, b))
    if r1 - r0 < 1e-6:
        return
    r2 = 1 / (theta / r0 + (1 - theta) / r1)
    lhs = norm(vals, r2, NormKind.WEAK, cell_volume=0.7)
    rhs = norm(vals, r0, NormKind.WEAK, cell_volume=0.7) ** theta \
        * norm(vals, r1, NormKind.WEAK, cell_volume=0.7) ** (1 - theta)
    assert lhs <= rhs * (1 + 1e-9) + 1e-300


def test_interpolation_on_random_triples():
    rng = np.random.default_rng(7)
    g = build_grid(1, 5, 101)
    f = Field(g, np.exp(-g.radius ** 2) + 0.1 * rng.random(g.size))
    for _ in range(100):
        r0, r1 = np.sort(rng.uniform(1.01, 12, 2))
        theta = rng.random()
        r2 = 1 / (theta / r0 + (1 - theta) / r1)
        lhs = norm(f, r2, "WeakLorentz")
        rhs = norm(f, r0, "WeakLorentz") ** theta * norm(f, r1, "WeakLorentz") ** (1 - theta)
        assert lhs <= rhs * (1 + 1e-9)


def test_field_basics(tmp_path):
    g = build_grid(2, 1, 3)
    f = Field(g, np.arange(9.0))
    assert f.mass() == pytest.approx(36 * g.cell_volume)
    assert (2 * f).sup() == 16
    c = f.copy()
    c.values[0] = 100
    assert f.values[0] == 0
    lines = f.to_csv().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 10
    with pytest.raises(ValueError):
        Field(g, np.zeros(4))
