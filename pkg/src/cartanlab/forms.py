"""Lie-algebra-valued differential forms on flat periodic lattices.

Components are collocated at grid points, one per strictly increasing
multi-index ``I`` (lexicographic order). The exterior derivative uses forward
differences, the codifferential is its exact adjoint for the pairing
``sum_x sum_I <a_I, b_I> * cell_volume``, so ``d∘d = 0`` and discrete
integration by parts hold to rounding, while the pointwise wedge obeys the
Leibniz rule only to O(h).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, product
from math import comb

import numpy as np

from . import kernels
from .algebra import LieAlgebraDescriptor, make_algebra
from .errors import ArgumentError, DegreeError

SCALAR = make_algebra("abelian:1")


@dataclass(frozen=True)
class GridSpec:
    """Periodic lattice with ``sizes[i]`` cells of width ``lengths[i]/sizes[i]``."""

    sizes: tuple
    lengths: tuple | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not 1 <= len(sizes) <= 4:
            raise ArgumentError(f"base dimension must be 1..4, got {len(sizes)}")
        if any(s < 4 for s in sizes):
            raise ArgumentError(f"every axis needs at least 4 cells, got {sizes}")
        lengths = (1.0,) * len(sizes) if self.lengths is None else tuple(float(v) for v in self.lengths)
        if len(lengths) != len(sizes) or any(v <= 0 for v in lengths):
            raise ArgumentError(f"bad periods {lengths} for sizes {sizes}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def cube(cls, n: int, N: int, length: float = 1.0) -> "GridSpec":
        return cls((N,) * n, (length,) * n)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def h(self) -> tuple:
        return tuple(L / N for L, N in zip(self.lengths, self.sizes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays ``x_i`` broadcast to the full grid shape."""
        axes = [np.arange(N) * h for N, h in zip(self.sizes, self.h)]
        return list(np.meshgrid(*axes, indexing="ij"))


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple:
    return tuple(combinations(range(n), k))


@lru_cache(maxsize=None)
def _index_of(n: int, k: int) -> dict:
    return {I: i for i, I in enumerate(multi_indices(n, k))}


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def shuffle_table(n: int, p: int, q: int) -> np.ndarray:
    """Rows ``(J, I, K, sign)``: ``dx^I ∧ dx^K = sign dx^J`` for disjoint I, K."""
    rows = []
    out_index = _index_of(n, p + q)
    for a, I in enumerate(multi_indices(n, p)):
        for b, K in enumerate(multi_indices(n, q)):
            if set(I) & set(K):
                continue
            J = tuple(sorted(I + K))
            rows.append((out_index[J], a, b, _perm_sign(I + K)))
    return np.array(rows, dtype=float).reshape(-1, 4)


@lru_cache(maxsize=None)
def _d_table(n: int, k: int) -> tuple:
    """Rows ``(J, axis, I, sign)`` with ``(d a)_J = sum sign * D_axis a_I``."""
    rows = []
    src = _index_of(n, k)
    for jdx, J in enumerate(multi_indices(n, k + 1)):
        for r, axis in enumerate(J):
            I = J[:r] + J[r + 1:]
            rows.append((jdx, axis, src[I], (-1) ** r))
    return tuple(rows)


@lru_cache(maxsize=None)
def star_table(n: int, k: int) -> tuple:
    """Rows ``(I, I^c, sign)`` with ``*(dx^I) = sign dx^{I^c}``."""
    comp = _index_of(n, n - k)
    rows = []
    for i, I in enumerate(multi_indices(n, k)):
        Ic = tuple(a for a in range(n) if a not in I)
        rows.append((i, comp[Ic], _perm_sign(I + Ic)))
    return tuple(rows)


def bracket_triplets(alg: LieAlgebraDescriptor) -> np.ndarray:
    c = alg.structure_constants
    k, i, j = np.nonzero(c)
    return np.column_stack([k, i, j, c[k, i, j]]).astype(float).reshape(-1, 4)


class DifferentialForm:
    """g-valued k-form; ``data`` has shape ``(*grid.sizes, C(n, k), alg.dim)``."""

    __slots__ = ("grid", "degree", "algebra", "data")

    def __init__(self, grid: GridSpec, degree: int, algebra: LieAlgebraDescriptor, data):
        if not 0 <= degree <= grid.n:
            raise DegreeError(f"degree {degree} outside 0..{grid.n}")
        data = np.asarray(data, dtype=float)
        shape = grid.sizes + (comb(grid.n, degree), algebra.dim)
        if data.shape != shape:
            raise ArgumentError(f"form data has shape {data.shape}, expected {shape}")
        self.grid = grid
        self.degree = degree
        self.algebra = algebra
        self.data = data

    @classmethod
    def zeros(cls, grid, degree, algebra=SCALAR):
        return cls(grid, degree, algebra, np.zeros(grid.sizes + (comb(grid.n, degree), algebra.dim)))

    @classmethod
    def constant(cls, grid, degree, algebra, values):
        """Constant form; ``values`` has shape ``(C(n,k), d)``."""
        values = np.asarray(values, dtype=float).reshape(comb(grid.n, degree), algebra.dim)
        return cls(grid, degree, algebra, np.broadcast_to(values, grid.sizes + values.shape).copy())

    @classmethod
    def from_components(cls, grid, degree, algebra, comps: dict):
        """Build from ``{multi_index: array}``; arrays are ``(*sizes,)`` or ``(*sizes, d)``."""
        out = cls.zeros(grid, degree, algebra)
        index = _index_of(grid.n, degree)
        for I, val in comps.items():
            I = tuple(I)
            if I not in index:
                raise ArgumentError(f"{I} is not an increasing multi-index of length {degree}")
            val = np.asarray(val, dtype=float)
            if val.shape == grid.sizes:
                val = val[..., None] * np.ones(algebra.dim)
            out.data[..., index[I], :] = val
        return out

    @property
    def ncomp(self) -> int:
        return self.data.shape[-2]

    def component(self, I) -> np.ndarray:
        return self.data[..., _index_of(self.grid.n, self.degree)[tuple(I)], :]

    def copy(self):
        return DifferentialForm(self.grid, self.degree, self.algebra, self.data.copy())

    def like(self, data):
        return DifferentialForm(self.grid, self.degree, self.algebra, data)

    def _compatible(self, other):
        if not isinstance(other, DifferentialForm):
            raise ArgumentError("operand is not a DifferentialForm")
        if other.grid != self.grid or other.degree != self.degree or other.algebra != self.algebra:
            raise ArgumentError(
                f"form mismatch: ({self.grid.sizes}, k={self.degree}, {self.algebra.label}) vs "
                f"({other.grid.sizes}, k={other.degree}, {other.algebra.label})"
            )

    def __add__(self, other):
        self._compatible(other)
        return self.like(self.data + other.data)

    def __sub__(self, other):
        self._compatible(other)
        return self.like(self.data - other.data)

    def __neg__(self):
        return self.like(-self.data)

    def __mul__(self, c):
        return self.like(self.data * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self.like(self.data / float(c))

    def __repr__(self):
        return (f"DifferentialForm(n={self.grid.n}, sizes={self.grid.sizes}, "
                f"k={self.degree}, algebra={self.algebra.label})")


def _forward(f, axis, h):
    return (np.roll(f, -1, axis=axis) - f) / h


def _backward(f, axis, h):
    return (f - np.roll(f, 1, axis=axis)) / h


def exterior_derivative(alpha: DifferentialForm) -> DifferentialForm:
    g, k = alpha.grid, alpha.degree
    if k >= g.n:
        raise DegreeError(f"d of a {k}-form on a {g.n}-dimensional grid")
    out = DifferentialForm.zeros(g, k + 1, alpha.algebra)
    h = g.h
    for J, axis, I, s in _d_table(g.n, k):
        diff = _forward(alpha.data[..., I, :], axis, h[axis])
        if s > 0:
            out.data[..., J, :] += diff
        else:
            out.data[..., J, :] -= diff
    return out


def codifferential(beta: DifferentialForm) -> DifferentialForm:
    """Exact adjoint of :func:`exterior_derivative` (backward differences)."""
    g, k = beta.grid, beta.degree
    if k == 0:
        raise DegreeError("codifferential of a 0-form")
    out = DifferentialForm.zeros(g, k - 1, beta.algebra)
    h = g.h
    for J, axis, I, s in _d_table(g.n, k - 1):
        # adjoint of the forward difference is minus the backward difference
        diff = _backward(beta.data[..., J, :], axis, h[axis])
        if s > 0:
            out.data[..., I, :] -= diff
        else:
            out.data[..., I, :] += diff
    return out


def hodge_star(alpha: DifferentialForm) -> DifferentialForm:
    g, k = alpha.grid, alpha.degree
    out = DifferentialForm.zeros(g, g.n - k, alpha.algebra)
    for i, ic, s in star_table(g.n, k):
        out.data[..., ic, :] = s * alpha.data[..., i, :]
    return out


def graded_wedge(a: np.ndarray, b: np.ndarray, n: int, p: int, q: int,
                 triplets: np.ndarray, out_dim: int) -> np.ndarray:
    """Pointwise wedge of raw component arrays with a bilinear value product.

    ``a`` is ``(*grid, C(n,p), da)``, ``b`` is ``(*grid, C(n,q), db)``; the value
    product is ``out_k = sum v * a_i * b_j`` over ``triplets`` rows ``(k,i,j,v)``.
    """
    if p + q > n:
        raise DegreeError(f"wedge of degrees {p}+{q} exceeds dimension {n}")
    grid_shape = a.shape[:-2]
    P = int(np.prod(grid_shape))
    table = shuffle_table(n, p, q)
    out = kernels.wedge_apply(
        a.reshape(P, a.shape[-2], a.shape[-1]), b.reshape(P, b.shape[-2], b.shape[-1]),
        table, triplets, comb(n, p + q), out_dim,
    )
    return out.reshape(grid_shape + (comb(n, p + q), out_dim))


def wedge_bracket(alpha: DifferentialForm, beta: DifferentialForm) -> DifferentialForm:
    """``[alpha ∧ beta]``: shuffle-sum wedge with values combined by the bracket."""
    if alpha.grid != beta.grid:
        raise ArgumentError("wedge_bracket operands live on different grids")
    if alpha.algebra != beta.algebra:
        raise ArgumentError("wedge_bracket operands take values in different algebras")
    p, q = alpha.degree, beta.degree
    n = alpha.grid.n
    if p + q > n:
        raise DegreeError(f"wedge of degrees {p}+{q} exceeds dimension {n}")
    alg = alpha.algebra
    data = graded_wedge(alpha.data, beta.data, n, p, q, bracket_triplets(alg), alg.dim)
    return DifferentialForm(alpha.grid, p + q, alg, data)


def pointwise_inner(alpha: DifferentialForm, beta: DifferentialForm) -> np.ndarray:
    alpha._compatible(beta)
    return np.einsum("...ci,ij,...cj->...", alpha.data, alpha.algebra.gram, beta.data)


def magnitude(alpha: DifferentialForm) -> np.ndarray:
    return np.sqrt(np.maximum(pointwise_inner(alpha, alpha), 0.0))


def pairing(alpha: DifferentialForm, phi: DifferentialForm) -> float:
    """Discrete integral ``sum_x <alpha, phi>(x) * cell_volume``."""
    return float(np.sum(pointwise_inner(alpha, phi)) * alpha.grid.cell_volume)


def l2_norm(alpha: DifferentialForm) -> float:
    return float(np.sqrt(max(pairing(alpha, alpha), 0.0)))


def lp_norm(alpha: DifferentialForm, p: float) -> float:
    p = float(p)
    if p < 1:
        raise ArgumentError(f"L^p norm needs p >= 1, got {p}")
    mag = magnitude(alpha)
    if np.isinf(p):
        return float(mag.max())
    return float((np.sum(mag ** p) * alpha.grid.cell_volume) ** (1.0 / p))


def leibniz_residual(alpha: DifferentialForm, beta: DifferentialForm) -> float:
    """``|| d[a∧b] - [da∧b] - (-1)^p [a∧db] ||_2`` (graded sign by the degree of a).

    Both derivative terms need ``p+q+1 <= n``.
    """
    p = alpha.degree
    lhs = exterior_derivative(wedge_bracket(alpha, beta))
    rhs = wedge_bracket(exterior_derivative(alpha), beta)
    other = wedge_bracket(alpha, exterior_derivative(beta))
    res = lhs - rhs - other * ((-1) ** p)
    return l2_norm(res)


# --------------------------------------------------------------------------
# band-limited test forms
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BandLimitedForm:
    """Trigonometric polynomial form with modes ``|k_i| <= kmax``.

    ``cos_coef`` / ``sin_coef`` have shape ``(n_modes, C(n,k), d)``; the field is
    ``sum_m cos_coef[m] cos(2π k_m·x/L) + sin_coef[m] sin(2π k_m·x/L)``.
    It evaluates exactly on any grid, which is how a common bank is restricted
    to each grid of an experiment.
    """

    n: int
    degree: int
    algebra: LieAlgebraDescriptor
    modes: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray
    label: str = ""

    def evaluate(self, grid: GridSpec) -> DifferentialForm:
        if grid.n != self.n:
            raise ArgumentError(f"band-limited form is {self.n}-dimensional, grid is {grid.n}")
        x = grid.coords()
        data = np.zeros(grid.sizes + (comb(self.n, self.degree), self.algebra.dim))
        for m, kv in enumerate(self.modes):
            phase = sum(2 * np.pi * kv[i] * x[i] / grid.lengths[i] for i in range(self.n))
            c, s = np.cos(phase), np.sin(phase)
            data += c[..., None, None] * self.cos_coef[m] + s[..., None, None] * self.sin_coef[m]
        return DifferentialForm(grid, self.degree, self.algebra, data)

    def scaled(self, factor: float) -> "BandLimitedForm":
        return BandLimitedForm(self.n, self.degree, self.algebra, self.modes,
                               self.cos_coef * factor, self.sin_coef * factor, self.label)


def band_modes(n: int, kmax: int) -> np.ndarray:
    return np.array(list(product(range(-kmax, kmax + 1), repeat=n)), dtype=int)


def random_band_limited(n, degree, algebra, rng, kmax=2, label="", normalize=True):
    modes = band_modes(n, kmax)
    shape = (len(modes), comb(n, degree), algebra.dim)
    # decaying spectrum keeps the fields smooth at every admissible kmax
    weight = 1.0 / (1.0 + np.abs(modes).sum(axis=1))[:, None, None]
    form = BandLimitedForm(
        n, degree, algebra, modes,
        rng.standard_normal(shape) * weight, rng.standard_normal(shape) * weight, label,
    )
    if normalize:
        ref = GridSpec.cube(n, 4 * kmax + 4)
        form = form.scaled(1.0 / l2_norm(form.evaluate(ref)))
    return form


@dataclass(frozen=True, eq=False)
class TestFormBank:
    """Fixed-seed bank of unit-L² band-limited test forms of one degree."""

    __test__ = False

    degree: int
    algebra: LieAlgebraDescriptor
    members: tuple
    seed: int

    @classmethod
    def build(cls, n: int, degree: int, algebra: LieAlgebraDescriptor, size: int = 8,
              seed: int = 20240531, kmax: int = 2) -> "TestFormBank":
        if size < 1:
            raise ArgumentError("bank needs at least one member")
        rng = np.random.default_rng([seed, n, degree, algebra.dim])
        members = tuple(
            random_band_limited(n, degree, algebra, rng, kmax=kmax, label=f"phi{i}")
            for i in range(size)
        )
        return cls(degree, algebra, members, seed)

    def __len__(self):
        return len(self.members)

    @property
    def ids(self) -> list:
        return [m.label for m in self.members]

    def on(self, grid: GridSpec) -> list:
        return [m.evaluate(grid) for m in self.members]


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def save_binary(alpha: DifferentialForm, path) -> None:
    """Little-endian layout: int64 header ``n, sizes..., k, d`` then float64 payload.

    The payload is the row-major ``(*sizes, C(n,k), d)`` array (point-major).
    Periods are not stored; loading assumes unit periods unless given.
    """
    g = alpha.grid
    header = struct.pack("<" + "q" * (g.n + 3), g.n, *g.sizes, alpha.degree, alpha.algebra.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(alpha.data, dtype="<f8").tobytes())


def load_binary(path, algebra: LieAlgebraDescriptor | None = None, lengths=None) -> DifferentialForm:
    with open(path, "rb") as fh:
        raw = fh.read()
    (n,) = struct.unpack_from("<q", raw, 0)
    vals = struct.unpack_from("<" + "q" * (n + 2), raw, 8)
    sizes, k, d = vals[:n], vals[n], vals[n + 1]
    offset = 8 * (n + 3)
    if algebra is None:
        algebra = make_algebra(f"abelian:{d}")
    if algebra.dim != d:
        raise ArgumentError(f"file stores {d}-dimensional values, algebra {algebra.label} has {algebra.dim}")
    grid = GridSpec(tuple(sizes), lengths)
    data = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(grid.sizes + (comb(n, k), d))
    return DifferentialForm(grid, k, algebra, data.astype(float))


def to_csv(alpha: DifferentialForm, path) -> None:
    """Small-grid CSV: index columns, then one column per (multi-index, basis) pair."""
    g = alpha.grid
    names = [f"x{i}_index" for i in range(g.n)]
    for I in multi_indices(g.n, alpha.degree):
        tag = "".join(str(i + 1) for i in I) or "0"
        names += [f"c{tag}_e{a + 1}" for a in range(alpha.algebra.dim)]
    flat = alpha.data.reshape(g.npoints, -1)
    idx = np.indices(g.sizes).reshape(g.n, -1).T
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row_idx, row in zip(idx, flat):
            fh.write(",".join([str(int(v)) for v in row_idx] + [repr(float(v)) for v in row]) + "\n")
