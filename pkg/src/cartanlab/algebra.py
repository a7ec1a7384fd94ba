"""Finite-dimensional matrix Lie algebras.

Elements are coefficient vectors in a fixed basis; the last axis of any array
passed to :func:`bracket` or :func:`inner` is the algebra axis, leading axes
broadcast. Structure constants are stored already rescaled so that
``|[X, Y]| <= |X| |Y|`` in the testing Gram metric.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ArgumentError, ConfigurationError


@dataclass(frozen=True, eq=False)
class LieAlgebraDescriptor:
    """Immutable description of a Lie algebra.

    ``structure_constants[k, i, j]`` is the k-th coordinate of ``[e_i, e_j]``
    after rescaling by ``scale``. ``gram`` is the positive-definite metric used
    for norms; ``invariant_form`` is the ad-invariant pairing (equal to
    ``gram`` for compact algebras, indefinite for ``so(p,q)`` with ``q > 0``).
    """

    label: str
    dim: int
    structure_constants: np.ndarray
    gram: np.ndarray
    scale: float
    invariant_form: np.ndarray
    signature: tuple = (0, 0)
    basis_matrices: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.structure_constants)

    def __eq__(self, other):
        if not isinstance(other, LieAlgebraDescriptor):
            return NotImplemented
        return self.label == other.label and self.dim == other.dim

    def __hash__(self):
        return hash((self.label, self.dim))


_ABELIAN = re.compile(r"^abelian\s*[:(]\s*(\d+)\s*\)?$")
_SO = re.compile(r"^so\s*[:(]\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)?$")


def parse_label(label: str) -> tuple[str, tuple[int, ...]]:
    """Parse ``abelian:d``, ``so:m``, ``so:p,q`` (parenthesised forms accepted)."""
    text = str(label).strip().lower()
    m = _ABELIAN.match(text)
    if m:
        d = int(m.group(1))
        if d < 1:
            raise ConfigurationError(f"abelian algebra needs d >= 1, got {label!r}")
        return "abelian", (d,)
    m = _SO.match(text)
    if m:
        p = int(m.group(1))
        q = int(m.group(2)) if m.group(2) is not None else 0
        if p + q < 2:
            raise ConfigurationError(f"so(p,q) needs p+q >= 2, got {label!r}")
        return "so", (p, q)
    raise ConfigurationError(f"unknown algebra label {label!r}")


def so_basis(p: int, q: int = 0) -> np.ndarray:
    """Basis of so(p,q) as (d, m, m) matrices, lexicographic in (a, b), a < b.

    The (a, b) generator is ``I_pq @ S_ab`` with ``S_ab`` the rotation taking
    e_a towards e_b (entry (b, a) = +1, (a, b) = -1). Every element satisfies
    ``X^T I_pq = -I_pq X``.
    """
    m = p + q
    ipq = np.diag([1.0] * p + [-1.0] * q)
    mats = []
    for a, b in combinations(range(m), 2):
        s = np.zeros((m, m))
        s[b, a] = 1.0
        s[a, b] = -1.0
        mats.append(ipq @ s)
    return np.array(mats)


def _so_coordinates(mat: np.ndarray, p: int, q: int) -> np.ndarray:
    m = p + q
    ipq = np.diag([1.0] * p + [-1.0] * q)
    s = ipq @ mat
    return np.array([s[b, a] for a, b in combinations(range(m), 2)])


def _matrix_structure_constants(basis: np.ndarray, p: int, q: int) -> np.ndarray:
    d = len(basis)
    c = np.zeros((d, d, d))
    for i in range(d):
        for j in range(d):
            comm = basis[i] @ basis[j] - basis[j] @ basis[i]
            c[:, i, j] = _so_coordinates(comm, p, q)
    return c


def bracket_operator_norm(c: np.ndarray, gram: np.ndarray, seed: int = 0, starts: int = 8) -> float:
    """Estimate ``sup |[X, Y]| / (|X| |Y|)`` by alternating maximisation.

    Works in a gram-orthonormal basis. Starts from every basis vector plus a few
    seeded random directions; returns the best value found.
    """
    d = c.shape[0]
    if not np.any(c):
        return 0.0
    chol = np.linalg.cholesky(gram)
    inv = np.linalg.inv(chol.T)
    # c'[k,i,j] in orthonormal coordinates X' = L^T X
    cc = np.einsum("ak,kij,ib,jc->abc", chol.T, c, inv, inv)
    rng = np.random.default_rng(seed)
    x0s = list(np.eye(d)) + list(rng.standard_normal((starts, d)))
    best = 0.0
    for x in x0s:
        x = x / np.linalg.norm(x)
        val = 0.0
        for _ in range(200):
            ad = np.einsum("kij,i->kj", cc, x)
            u, s, vt = np.linalg.svd(ad)
            y, z = vt[0], u[:, 0]
            v = np.einsum("k,kij,j->i", z, cc, y)
            nv = np.linalg.norm(v)
            if nv == 0:
                break
            x = v / nv
            new = float(s[0])
            if abs(new - val) <= 1e-14 * max(1.0, new):
                val = max(val, new)
                break
            val = max(val, new)
        ad = np.einsum("kij,i->kj", cc, x)
        best = max(best, val, float(np.linalg.norm(ad, 2)))
    return best


def make_algebra(label: str) -> LieAlgebraDescriptor:
    """Build the descriptor for ``label``.

    The scale is ``1 / max(basis-pair ratio, bracket operator norm)`` clamped
    to at most 1, so that submultiplicativity holds for all elements and not
    only for basis pairs.
    """
    kind, args = parse_label(label)
    if kind == "abelian":
        (d,) = args
        c = np.zeros((d, d, d))
        gram = np.eye(d)
        return LieAlgebraDescriptor(
            label=f"abelian:{d}", dim=d, structure_constants=c, gram=gram,
            scale=1.0, invariant_form=gram.copy(), signature=(d, 0),
        )

    p, q = args
    basis = so_basis(p, q)
    d = len(basis)
    raw = _matrix_structure_constants(basis, p, q)
    gram = np.eye(d)
    norms = np.sqrt(np.diag(gram))
    pair = 0.0
    for i in range(d):
        for j in range(d):
            v = raw[:, i, j]
            pair = max(pair, float(np.sqrt(v @ gram @ v)) / (norms[i] * norms[j]))
    op = bracket_operator_norm(raw, gram)
    worst = max(pair, op)
    # estimator noise must not perturb exact unit scales (so(3), so(p,q) small)
    scale = 1.0 if worst <= 1.0 + 1e-12 else 1.0 / worst
    # ad-invariant trace form -tr(XY)/2, diagonal +-1 in this basis
    inv_form = np.array([[-0.5 * np.trace(bi @ bj) for bj in basis] for bi in basis])
    name = f"so:{p}" if q == 0 else f"so:{p},{q}"
    return LieAlgebraDescriptor(
        label=name, dim=d, structure_constants=scale * raw, gram=gram,
        scale=scale, invariant_form=inv_form, signature=(p, q),
        basis_matrices=basis,
    )


def _check(alg: LieAlgebraDescriptor, *xs):
    for x in xs:
        if np.shape(x)[-1:] != (alg.dim,):
            raise ArgumentError(
                f"algebra element has trailing size {np.shape(x)[-1:]}, expected ({alg.dim},)"
            )


def bracket(alg: LieAlgebraDescriptor, x, y) -> np.ndarray:
    """Lie bracket ``[x, y]_k = c[k, i, j] x_i y_j`` with broadcasting."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(alg, x, y)
    return np.einsum("kij,...i,...j->...k", alg.structure_constants, x, y)


def inner(alg: LieAlgebraDescriptor, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(alg, x, y)
    return np.einsum("...i,ij,...j->...", x, alg.gram, y)


def norm(alg: LieAlgebraDescriptor, x) -> np.ndarray:
    return np.sqrt(np.maximum(inner(alg, x, x), 0.0))


def invariant_pairing(alg: LieAlgebraDescriptor, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(alg, x, y)
    return np.einsum("...i,ij,...j->...", x, alg.invariant_form, y)


def to_matrix(alg: LieAlgebraDescriptor, x) -> np.ndarray:
    """Matrix of ``x`` in the defining representation, bracket-compatible.

    Because structure constants are rescaled, the returned matrix is
    ``scale * sum_i x_i B_i`` so that matrix commutators reproduce
    :func:`bracket`.
    """
    if alg.basis_matrices is None:
        raise ArgumentError(f"{alg.label} has no matrix representation")
    x = np.asarray(x, dtype=float)
    _check(alg, x)
    return alg.scale * np.einsum("...i,iab->...ab", x, alg.basis_matrices)


def jacobi_residual(alg: LieAlgebraDescriptor, x, y, z) -> float:
    """``|[x,[y,z]] + [y,[z,x]] + [z,[x,y]]|`` relative to ``|x||y||z|``."""
    s = (bracket(alg, x, bracket(alg, y, z))
         + bracket(alg, y, bracket(alg, z, x))
         + bracket(alg, z, bracket(alg, x, y)))
    den = float(norm(alg, x) * norm(alg, y) * norm(alg, z))
    return float(norm(alg, s)) / den if den > 0 else float(norm(alg, s))


def ad_invariance_residual(alg: LieAlgebraDescriptor, x, y, z) -> float:
    """``|<[x,y],z> - <x,[y,z]>|`` in the invariant form, relative."""
    lhs = invariant_pairing(alg, bracket(alg, x, y), z)
    rhs = invariant_pairing(alg, x, bracket(alg, y, z))
    den = float(norm(alg, x) * norm(alg, y) * norm(alg, z))
    diff = abs(float(lhs - rhs))
    return diff / den if den > 0 else diff
