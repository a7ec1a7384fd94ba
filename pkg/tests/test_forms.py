import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cartanlab.algebra import bracket, make_algebra
from cartanlab.errors import ArgumentError, DegreeError
from cartanlab.forms import (
    SCALAR,
    DifferentialForm,
    GridSpec,
    TestFormBank,
    codifferential,
    exterior_derivative,
    hodge_star,
    l2_norm,
    leibniz_residual,
    load_binary,
    lp_norm,
    pairing,
    random_band_limited,
    save_binary,
    to_csv,
    wedge_bracket,
)

SO3 = make_algebra("so:3")
TWO_PI = 2 * np.pi


def rand_form(grid, k, alg, rng):
    return DifferentialForm(grid, k, alg, rng.standard_normal(grid.sizes + (math.comb(grid.n, k), alg.dim)))


def test_d_constant_is_zero():
    g = GridSpec.cube(2, 8)
    f = DifferentialForm.constant(g, 0, SO3, [[1.0, 2.0, 3.0]])
    assert np.all(exterior_derivative(f).data == 0)


def test_d_sine_against_closed_form():
    g = GridSpec.cube(2, 64)
    x, _ = g.coords()
    f = DifferentialForm.from_components(g, 0, SCALAR, {(): np.sin(TWO_PI * x)})
    df = exterior_derivative(f)
    err = np.abs(df.component((0,))[..., 0] - TWO_PI * np.cos(TWO_PI * x)).max()
    # Taylor remainder of a one-sided difference: h/2 max|f''| = 2π² h
    assert err <= 2 * np.pi ** 2 * g.h[0]
    assert np.all(df.component((1,)) == 0)


def test_codifferential_sign_and_accuracy():
    g = GridSpec.cube(2, 64)
    x, _ = g.coords()
    a = DifferentialForm.from_components(g, 1, SCALAR, {(0,): np.sin(TWO_PI * x)})
    err = np.abs(codifferential(a).data[..., 0, 0] + TWO_PI * np.cos(TWO_PI * x)).max()
    assert err <= 2 * np.pi ** 2 * g.h[0]


def test_codifferential_errors():
    g = GridSpec.cube(2, 8)
    with pytest.raises(DegreeError):
        codifferential(DifferentialForm.zeros(g, 0))
    c = DifferentialForm.constant(g, 0, SCALAR, [[3.0]])
    assert np.all(codifferential(exterior_derivative(c)).data == 0)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_dd_zero_and_adjoint(n, rng):
    g = GridSpec.cube(n, 6)
    for k in range(n):
        a = rand_form(g, k, SO3, rng)
        if k + 2 <= n:
            assert np.abs(exterior_derivative(exterior_derivative(a)).data).max() < 1e-10
        b = rand_form(g, k + 1, SO3, rng)
        lhs = pairing(exterior_derivative(a), b)
        rhs = pairing(a, codifferential(b))
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_star_examples():
    g = GridSpec.cube(2, 4)
    one = DifferentialForm.constant(g, 0, SCALAR, [[1.0]])
    assert np.all(hodge_star(one).data == 1.0)
    dx1 = DifferentialForm.constant(g, 1, SCALAR, [[1.0], [0.0]])
    dx2 = DifferentialForm.constant(g, 1, SCALAR, [[0.0], [1.0]])
    assert np.array_equal(hodge_star(dx1).data, dx2.data)
    assert np.array_equal(hodge_star(dx2).data, -dx1.data)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_star_involution(n, rng):
    g = GridSpec.cube(n, 4)
    for k in range(n + 1):
        a = rand_form(g, k, SO3, rng)
        assert np.allclose(hodge_star(hodge_star(a)).data, (-1) ** (k * (n - k)) * a.data, atol=0)


def test_star_gives_inner_product(rng):
    # α ∧ *β = <α, β> vol for scalar forms on T³
    g = GridSpec.cube(3, 4)
    from cartanlab.forms import graded_wedge
    triv = np.array([[0, 0, 0, 1.0]])
    for k in range(4):
        a, b = rand_form(g, k, SCALAR, rng), rand_form(g, k, SCALAR, rng)
        w = graded_wedge(a.data, hodge_star(b).data, 3, k, 3 - k, triv, 1)
        assert np.allclose(w[..., 0, 0], np.sum(a.data * b.data, axis=(-2, -1)))


def test_wedge_abelian_vanishes(rng):
    g = GridSpec.cube(3, 4)
    ab = make_algebra("abelian:1")
    assert not np.any(wedge_bracket(rand_form(g, 1, ab, rng), rand_form(g, 2, ab, rng)).data)


def test_wedge_constant_connection():
    g = GridSpec.cube(2, 4)
    e = np.eye(3)
    A = DifferentialForm.constant(g, 1, SO3, np.stack([e[0], e[1]]))
    half = 0.5 * wedge_bracket(A, A)
    # shuffle formula: [A∧A](∂1,∂2) = 2 [A1, A2]
    assert np.allclose(half.data[..., 0, :], bracket(SO3, e[0], e[1]))
    assert abs(np.abs(half.data[0, 0, 0]).max() - SO3.scale) < 1e-15


@pytest.mark.parametrize("p,q", [(1, 1), (1, 2), (0, 2), (0, 0)])
def test_graded_antisymmetry(p, q, rng):
    g = GridSpec.cube(3, 4)
    a, b = rand_form(g, p, SO3, rng), rand_form(g, q, SO3, rng)
    s = wedge_bracket(a, b) + (-1) ** (p * q) * wedge_bracket(b, a)
    assert np.abs(s.data).max() < 1e-13


def test_wedge_degree_errors(rng):
    g = GridSpec.cube(2, 4)
    with pytest.raises(DegreeError):
        wedge_bracket(rand_form(g, 2, SO3, rng), rand_form(g, 1, SO3, rng))
    with pytest.raises(ArgumentError):
        wedge_bracket(rand_form(g, 1, SO3, rng), rand_form(g, 1, make_algebra("so:4"), rng))


def test_pairings_and_norms():
    g = GridSpec.cube(2, 16)
    dx1 = DifferentialForm.constant(g, 1, SCALAR, [[1.0], [0.0]])
    assert pairing(dx1, DifferentialForm.zeros(g, 1)) == 0.0
    assert abs(pairing(dx1, dx1) - 1.0) < 1e-14
    for p in (1, 2, 3.5, np.inf):
        assert abs(lp_norm(dx1, p) - 1.0) < 1e-14
        assert lp_norm(DifferentialForm.zeros(g, 1), p) == 0.0
    with pytest.raises(ArgumentError):
        lp_norm(dx1, 0.5)


@pytest.mark.parametrize("N", [4, 5, 7, 16])
def test_sine_square_quadrature_exact(N):
    # brute-force oracle: sum_j sin²(2πj/N) = N/2 for N >= 3
    g = GridSpec((N, N))
    x, _ = g.coords()
    a = DifferentialForm.from_components(g, 1, SCALAR, {(0,): np.sin(TWO_PI * x)})
    brute = sum(math.sin(2 * math.pi * j / N) ** 2 for j in range(N)) / N
    assert abs(brute - 0.5) < 1e-14
    assert abs(pairing(a, a) - 0.5) < 1e-14


def test_leibniz_rate():
    rng = np.random.default_rng(3)
    a_bl = random_band_limited(3, 1, SO3, rng, kmax=1)
    b_bl = random_band_limited(3, 1, SO3, rng, kmax=1)
    hs, res = [], []
    for N in (16, 32, 64):
        g = GridSpec.cube(3, N)
        hs.append(1.0 / N)
        res.append(leibniz_residual(a_bl.evaluate(g), b_bl.evaluate(g)))
    order = np.polyfit(np.log(hs), np.log(res), 1)[0]
    assert order >= 0.9


def test_band_limited_exact_on_any_grid():
    rng = np.random.default_rng(4)
    f = random_band_limited(2, 1, SO3, rng, kmax=2)
    # unit L² on the normalisation grid and on any finer grid (trig quadrature is exact)
    for N in (12, 20, 33):
        assert abs(l2_norm(f.evaluate(GridSpec.cube(2, N))) - 1.0) < 1e-12


def test_bank_is_deterministic():
    b1 = TestFormBank.build(2, 2, SO3, 8, seed=99)
    b2 = TestFormBank.build(2, 2, SO3, 8, seed=99)
    g = GridSpec.cube(2, 8)
    assert len(b1) == 8 and b1.ids == [f"phi{i}" for i in range(8)]
    for p, q in zip(b1.on(g), b2.on(g)):
        assert np.array_equal(p.data, q.data)
    b3 = TestFormBank.build(2, 2, SO3, 8, seed=100)
    assert not np.array_equal(b1.on(g)[0].data, b3.on(g)[0].data)


def test_binary_roundtrip_and_layout(tmp_path, rng):
    g = GridSpec((4, 5, 6))
    a = rand_form(g, 2, SO3, rng)
    path = tmp_path / "a.bin"
    save_binary(a, path)
    raw = path.read_bytes()
    assert struct.unpack_from("<6q", raw, 0) == (3, 4, 5, 6, 2, 3)
    assert len(raw) == 6 * 8 + a.data.size * 8
    # point-major payload: first values are the (C(3,2), 3) block of point (0,0,0)
    first = np.frombuffer(raw, "<f8", count=9, offset=48)
    assert np.array_equal(first, a.data[0, 0, 0].ravel())
    b = load_binary(path, SO3)
    assert np.array_equal(a.data, b.data) and b.degree == 2
    with pytest.raises(ArgumentError):
        load_binary(path, make_algebra("so:4"))


def test_csv_export(tmp_path):
    g = GridSpec.cube(2, 4)
    a = DifferentialForm.constant(g, 1, SCALAR, [[1.5], [-2.0]])
    to_csv(a, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 1 + 16
    assert lines[1].split(",")[-2:] == ["1.5", "-2.0"]


def test_form_arithmetic_checks(rng):
    g = GridSpec.cube(2, 4)
    a = rand_form(g, 1, SO3, rng)
    with pytest.raises(ArgumentError):
        a + rand_form(g, 2, SO3, rng)
    with pytest.raises(DegreeError):
        DifferentialForm.zeros(g, 3)
    with pytest.raises(ArgumentError):
        DifferentialForm(g, 1, SO3, np.zeros((4, 4, 2, 2)))
    assert np.array_equal((2 * a - a).data, a.data)


@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2 ** 32 - 1))
def test_graded_antisymmetry_property(p, q, seed):
    if p + q > 3:
        return
    g = GridSpec.cube(3, 4)
    r = np.random.default_rng(seed)
    a, b = rand_form(g, p, SO3, r), rand_form(g, q, SO3, r)
    s = wedge_bracket(a, b) + (-1) ** (p * q) * wedge_bracket(b, a)
    assert np.abs(s.data).max() <= 1e-12 * (1 + np.abs(a.data).max() * np.abs(b.data).max())


@given(st.integers(0, 2), st.integers(0, 2 ** 32 - 1))
def test_leibniz_exact_for_constants(p, seed):
    # constant forms: every derivative term vanishes identically
    g = GridSpec.cube(3, 4)
    r = np.random.default_rng(seed)
    a = DifferentialForm.constant(g, p, SO3, r.standard_normal((math.comb(3, p), 3)))
    b = DifferentialForm.constant(g, 0, SO3, r.standard_normal((1, 3)))
    assert leibniz_residual(a, b) == 0.0
