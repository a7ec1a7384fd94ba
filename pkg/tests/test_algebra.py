import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cartanlab.algebra import (
    ad_invariance_residual,
    bracket,
    inner,
    invariant_pairing,
    jacobi_residual,
    make_algebra,
    norm,
    parse_label,
    so_basis,
    to_matrix,
)
from cartanlab.errors import ArgumentError, ConfigurationError

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_abelian_zero_constants():
    a = make_algebra("abelian:1")
    assert a.dim == 1 and not np.any(a.structure_constants) and a.is_abelian


def test_so3_hand_commutators():
    # standard antisymmetric generators, commutators written out by hand
    L1 = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], float)
    L2 = np.array([[0, 0, 1], [0, 0, 0], [-1, 0, 0]], float)
    L3 = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], float)
    assert np.allclose(L1 @ L2 - L2 @ L1, L3)
    so3 = make_algebra("so:3")
    assert so3.dim == 3 and so3.scale == 1.0
    e = np.eye(3)
    # the library basis realises the same relations up to a relabelling/sign:
    # its brackets close with unit structure constants, each [e_i, e_j] = ± e_k
    for i in range(3):
        for j in range(3):
            v = bracket(so3, e[i], e[j])
            if i == j:
                assert np.all(v == 0)
            else:
                k = 3 - i - j
                assert abs(abs(v[k]) - 1.0) < 1e-15 and np.count_nonzero(v) == 1
    # cyclic orientation matches: [e1,e2]=s e3, [e2,e3]=s e1, [e3,e1]=s e2 with one sign s
    s = bracket(so3, e[0], e[1])[2]
    assert bracket(so3, e[1], e[2])[0] == s and bracket(so3, e[2], e[0])[1] == s


def test_so3_matrix_commutator_oracle():
    so3 = make_algebra("so:3")
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.standard_normal((2, 3))
        X, Y = to_matrix(so3, x), to_matrix(so3, y)
        assert np.allclose(X @ Y - Y @ X, to_matrix(so3, bracket(so3, x, y)), atol=1e-13)


def test_so11_abelian():
    a = make_algebra("so:1,1")
    assert a.dim == 1 and not np.any(a.structure_constants)


def test_bracket_examples():
    so3 = make_algebra("so:3")
    e = np.eye(3)
    assert np.all(bracket(so3, e[0], e[0]) == 0)
    assert np.allclose(np.abs(bracket(so3, e[0], e[1])), so3.scale * np.abs(e[2]))
    ab = make_algebra("abelian:4")
    rng = np.random.default_rng(1)
    assert np.all(bracket(ab, rng.standard_normal(4), rng.standard_normal(4)) == 0)


def test_inner_examples():
    so3 = make_algebra("so:3")
    e = np.eye(3)
    assert inner(so3, e[0], e[0]) == 1.0
    lhs = inner(so3, bracket(so3, e[0], e[1]), e[2]) - inner(so3, e[0], bracket(so3, e[1], e[2]))
    assert abs(lhs) < 1e-15
    assert inner(make_algebra("abelian:2"), [1, 2], [3, 4]) == 11.0


def test_labels():
    assert parse_label("so(3)") == ("so", (3, 0))
    assert parse_label("so:2,1") == ("so", (2, 1))
    assert parse_label("abelian(4)") == ("abelian", (4,))
    for bad in ("su:2", "so:1", "abelian:0", ""):
        with pytest.raises(ConfigurationError):
            make_algebra(bad)


def test_shape_mismatch():
    with pytest.raises(ArgumentError):
        bracket(make_algebra("so:3"), np.ones(2), np.ones(3))


def test_so_pq_basis_preserves_form():
    for p, q in ((3, 0), (2, 1), (2, 2), (4, 0)):
        ipq = np.diag([1.0] * p + [-1.0] * q)
        for B in so_basis(p, q):
            assert np.allclose(B.T @ ipq, -ipq @ B)


@pytest.mark.parametrize("label", ["so:3", "so:4", "so:2,1", "so:3,1", "so:5"])
def test_submultiplicative_and_identities(label):
    alg = make_algebra(label)
    rng = np.random.default_rng(7)
    x, y, z = rng.standard_normal((3, 500, alg.dim))
    assert np.all(norm(alg, bracket(alg, x, y)) <= norm(alg, x) * norm(alg, y) * (1 + 1e-12))
    for i in range(50):
        assert jacobi_residual(alg, x[i], y[i], z[i]) <= 1e-14
        assert ad_invariance_residual(alg, x[i], y[i], z[i]) <= 1e-14


def test_invariant_form_indefinite_for_noncompact():
    alg = make_algebra("so:2,1")
    eig = np.linalg.eigvalsh(alg.invariant_form)
    assert eig.min() < 0 < eig.max()
    x = np.array([1.0, 0, 0])
    assert invariant_pairing(alg, x, x) == alg.invariant_form[0, 0]


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
def test_antisymmetry_property(x, y):
    so3 = make_algebra("so:3")
    assert np.allclose(bracket(so3, x, y), -bracket(so3, y, x), atol=1e-12)


@given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite), arrays(float, 6, elements=finite))
def test_jacobi_property_so4(x, y, z):
    alg = make_algebra("so:4")
    s = (bracket(alg, x, bracket(alg, y, z)) + bracket(alg, y, bracket(alg, z, x))
         + bracket(alg, z, bracket(alg, x, y)))
    assert np.all(np.abs(s) <= 1e-12 * (1 + np.linalg.norm(x) * np.linalg.norm(y) * np.linalg.norm(z)))
