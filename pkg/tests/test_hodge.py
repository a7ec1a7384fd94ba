import math

import numpy as np
import pytest

from cartanlab.algebra import make_algebra
from cartanlab.errors import ArgumentError, DegreeError, SolverError
from cartanlab.forms import SCALAR, DifferentialForm, GridSpec, codifferential, exterior_derivative, l2_norm, pairing
from cartanlab.hodge import (
    HodgeSolveConfig,
    apply_operator,
    discrete_symbol,
    hodge_decompose,
    laplacian,
    neg_sobolev_norm,
    orthogonality_defects,
    solve,
    solve_laplace,
    spectral_inverse,
)

TWO_PI = 2 * np.pi
SO3 = make_algebra("so:3")


def sine0(N, m=1):
    g = GridSpec.cube(2, N)
    x, _ = g.coords()
    return DifferentialForm.from_components(g, 0, SCALAR, {(): np.sin(TWO_PI * m * x)})


def rand_form(g, k, alg, rng):
    return DifferentialForm(g, k, alg, rng.standard_normal(g.sizes + (math.comb(g.n, k), alg.dim)))


def test_laplacian_constant_zero():
    g = GridSpec.cube(3, 6)
    c = DifferentialForm.constant(g, 1, SO3, np.ones((3, 3)))
    assert np.abs(laplacian(c).data).max() == 0.0


def test_laplacian_symbol():
    f = sine0(32)
    h = 1 / 32
    lam = (2 / h) ** 2 * np.sin(np.pi * h) ** 2      # hand oracle
    assert abs(lam - discrete_symbol(1, h)) < 1e-9
    assert np.allclose(laplacian(f).data, lam * f.data, atol=1e-9)
    assert abs(lam - TWO_PI ** 2) / TWO_PI ** 2 < 0.01


@pytest.mark.parametrize("n", [2, 3])
def test_stencil_matches_d_delta(n, rng):
    g = GridSpec.cube(n, 6)
    for k in range(n + 1):
        a = rand_form(g, k, SO3, rng)
        assert np.allclose(laplacian(a).data, apply_operator(a).data, atol=1e-9)


def test_laplacian_commutes_with_d(rng):
    g = GridSpec.cube(3, 8)
    for k in range(3):
        a = rand_form(g, k, SO3, rng)
        lhs = laplacian(exterior_derivative(a))
        rhs = exterior_derivative(laplacian(a))
        assert l2_norm(lhs - rhs) <= 1e-12 * l2_norm(lhs)


def test_solve_laplace_zero_and_eigenfunction():
    g = GridSpec.cube(2, 32)
    assert np.all(solve_laplace(DifferentialForm.zeros(g, 0)).data == 0)
    f = sine0(32)
    u = solve_laplace(f, HodgeSolveConfig(rel_tol=1e-12))
    assert np.allclose(u.data, f.data / discrete_symbol(1, 1 / 32), atol=1e-12)


def test_solve_contract(rng):
    g = GridSpec.cube(2, 16)
    rho = rand_form(g, 1, SO3, rng)
    cfg = HodgeSolveConfig(rel_tol=1e-9)
    res = solve(rho, cfg)
    mean = rho.data.mean(axis=(0, 1), keepdims=True)
    proj = rho.data - mean
    r = laplacian(res.solution).data - proj
    assert np.linalg.norm(r) <= cfg.rel_tol * np.linalg.norm(proj) * 1.01
    assert res.iterations > 0 and res.history[0] > res.history[-1]


def test_solver_error_and_config_validation(rng):
    g = GridSpec.cube(2, 32)
    with pytest.raises(SolverError) as exc:
        solve(rand_form(g, 1, SO3, rng), HodgeSolveConfig(rel_tol=1e-12, max_iter=3))
    assert exc.value.iterations == 3 and exc.value.residual > 1e-12
    for bad in ({"rel_tol": 0}, {"max_iter": 0}, {"shift": -1}):
        with pytest.raises(ArgumentError):
            HodgeSolveConfig(**bad)


def test_history_dump(tmp_path):
    res = solve(sine0(16), HodgeSolveConfig(shift=1.0))
    res.dump_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual" and len(lines) == len(res.history) + 1


def test_decompose_exact_input():
    f = sine0(64)
    df = exterior_derivative(f)
    dec = hodge_decompose(df, HodgeSolveConfig(rel_tol=1e-12))
    assert np.allclose(dec.psi.data, f.data - f.data.mean(), atol=1e-9)
    assert l2_norm(dec.rho) < 1e-9 and l2_norm(dec.harmonic) < 1e-12


def test_decompose_constant_and_coexact():
    g = GridSpec.cube(2, 32)
    c = DifferentialForm.constant(g, 1, SCALAR, [[2.5], [0.0]])
    dec = hodge_decompose(c)
    assert l2_norm(dec.psi) == 0 and l2_norm(dec.rho) == 0
    assert np.allclose(dec.harmonic.data, c.data)
    # coexact: δ of a 2-form
    x, y = g.coords()
    w = DifferentialForm.from_components(g, 2, SCALAR, {(0, 1): np.sin(TWO_PI * x) * np.cos(TWO_PI * y)})
    beta = codifferential(w)
    dec = hodge_decompose(beta, HodgeSolveConfig(rel_tol=1e-12))
    assert l2_norm(dec.exact) < 1e-9 * l2_norm(beta)
    assert l2_norm(dec.rho - beta) < 1e-9 * l2_norm(beta)


def test_decompose_random(rng):
    g = GridSpec.cube(2, 32)
    a = rand_form(g, 1, SO3, rng)
    cfg = HodgeSolveConfig(rel_tol=1e-10)
    dec = hodge_decompose(a, cfg)
    assert dec.reconstruction_residual <= 10 * cfg.rel_tol * l2_norm(a)
    assert max(orthogonality_defects(dec).values()) <= 1e-8
    with pytest.raises(DegreeError):
        hodge_decompose(DifferentialForm.zeros(g, 0))


def test_neg_sobolev():
    g = GridSpec.cube(2, 32)
    assert neg_sobolev_norm(DifferentialForm.zeros(g, 1)) == 0.0
    c = DifferentialForm.constant(g, 1, SCALAR, [[-3.0], [0.0]])
    assert abs(neg_sobolev_norm(c) - 3.0) < 1e-10
    x, _ = g.coords()
    for m in (1, 2, 4):
        a = DifferentialForm.from_components(g, 1, SCALAR, {(1,): np.sin(TWO_PI * m * x)})
        expect = l2_norm(a) / math.sqrt(1 + discrete_symbol(m, 1 / 32))
        assert abs(neg_sobolev_norm(a, HodgeSolveConfig(rel_tol=1e-12)) - expect) < 1e-9


def test_spectral_inverse_matches_cg(rng):
    g = GridSpec((8, 12))
    a = rand_form(g, 1, SO3, rng)
    x = spectral_inverse(a, 1.0)
    assert np.allclose(apply_operator(x, 1.0).data, a.data, atol=1e-10)
    y = solve(a, HodgeSolveConfig(rel_tol=1e-12, shift=1.0)).solution
    assert np.allclose(x.data, y.data, atol=1e-9)
    z = spectral_inverse(a, 0.0)
    assert np.allclose(apply_operator(z).data, a.data - a.data.mean(axis=(0, 1), keepdims=True), atol=1e-10)
    assert abs(pairing(z, DifferentialForm.constant(g, 1, SO3, np.ones((2, 3))))) < 1e-10
