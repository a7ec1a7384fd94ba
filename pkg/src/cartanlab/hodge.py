"""Hodge Laplacian, conjugate-gradient inverse, Hodge decomposition, H^{-1} norms."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ArgumentError, DegreeError, SolverError
from .forms import DifferentialForm, codifferential, exterior_derivative, l2_norm, pairing


@dataclass(frozen=True)
class HodgeSolveConfig:
    """CG settings; ``max_iter=None`` means ten times the number of unknowns."""

    rel_tol: float = 1e-10
    max_iter: int | None = None
    shift: float = 0.0

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ArgumentError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ArgumentError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.shift < 0:
            raise ArgumentError(f"shift must be >= 0, got {self.shift}")


@dataclass
class SolveResult:
    solution: DifferentialForm
    iterations: int
    residual: float
    history: list = field(default_factory=list)

    def dump_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.history):
                w.writerow([i, repr(float(r))])


@dataclass
class HodgeDecomposition:
    psi: DifferentialForm
    rho: DifferentialForm
    harmonic: DifferentialForm
    reconstruction_residual: float
    exact: DifferentialForm | None = None


def laplacian(alpha: DifferentialForm) -> DifferentialForm:
    """``dδ + δd`` built from the forms operators."""
    k, n = alpha.degree, alpha.grid.n
    out = DifferentialForm.zeros(alpha.grid, k, alpha.algebra)
    if k > 0:
        out = out + exterior_derivative(codifferential(alpha))
    if k < n:
        out = out + codifferential(exterior_derivative(alpha))
    return out


def apply_operator(alpha: DifferentialForm, shift: float = 0.0) -> DifferentialForm:
    """``shift*I + Δ`` via the componentwise stencil (same operator as :func:`laplacian`)."""
    g = alpha.grid
    flat = alpha.data.reshape(g.sizes + (-1,))
    out = kernels.laplacian_apply(flat, g.h, shift)
    return alpha.like(out.reshape(alpha.data.shape))


def harmonic_part(alpha: DifferentialForm) -> DifferentialForm:
    """Componentwise mean: the projector onto the kernel of Δ on a torus."""
    axes = tuple(range(alpha.grid.n))
    mean = alpha.data.mean(axis=axes, keepdims=True)
    return alpha.like(np.broadcast_to(mean, alpha.data.shape).copy())


def _cg(rhs: np.ndarray, apply, rel_tol, max_iter, project=None):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    bnorm = float(np.sqrt(np.sum(rhs * rhs)))
    history = [bnorm]
    if bnorm == 0.0:
        return x, 0, 0.0, history
    p = r.copy()
    rr = float(np.sum(r * r))
    target = rel_tol * bnorm
    for it in range(1, max_iter + 1):
        ap = apply(p)
        pap = float(np.sum(p * ap))
        if pap <= 0:
            break
        a = rr / pap
        x += a * p
        r -= a * ap
        if project is not None:
            r = project(r)
        rr_new = float(np.sum(r * r))
        history.append(np.sqrt(rr_new))
        if np.sqrt(rr_new) <= target:
            return x, it, np.sqrt(rr_new) / bnorm, history
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = float(np.sqrt(np.sum((rhs - apply(x)) ** 2))) / bnorm
    if res <= rel_tol:
        return x, len(history) - 1, res, history
    raise SolverError(
        f"CG did not reach rel_tol={rel_tol:g} in {max_iter} iterations (residual {res:.3e})",
        residual=res, iterations=max_iter,
    )


def solve(rhs: DifferentialForm, cfg: HodgeSolveConfig | None = None) -> SolveResult:
    """Solve ``(shift I + Δ) x = rhs``; for ``shift == 0`` the harmonic part is removed."""
    cfg = cfg or HodgeSolveConfig()
    g = rhs.grid
    axes = tuple(range(g.n))
    shape = rhs.data.shape
    max_iter = cfg.max_iter or 10 * rhs.data.size

    def apply(v):
        return kernels.laplacian_apply(v.reshape(g.sizes + (-1,)), g.h, cfg.shift).reshape(shape)

    if cfg.shift == 0.0:
        def project(v):
            return v - v.mean(axis=axes, keepdims=True)
        b = project(rhs.data)
    else:
        project = None
        b = rhs.data.copy()
    x, it, res, hist = _cg(b, apply, cfg.rel_tol, max_iter, project)
    if cfg.shift == 0.0:
        x = x - x.mean(axis=axes, keepdims=True)
    return SolveResult(rhs.like(x), it, res, hist)


def solve_laplace(rhs: DifferentialForm, cfg: HodgeSolveConfig | None = None) -> DifferentialForm:
    """Mean-free ``x`` with ``Δx = rhs - harmonic_part(rhs)``."""
    cfg = cfg or HodgeSolveConfig()
    if cfg.shift != 0.0:
        cfg = HodgeSolveConfig(cfg.rel_tol, cfg.max_iter, 0.0)
    return solve(rhs, cfg).solution


def hodge_decompose(alpha: DifferentialForm, cfg: HodgeSolveConfig | None = None) -> HodgeDecomposition:
    """``alpha = dψ + ρ + h`` with ψ = δΔ⁻¹α', ρ = δdΔ⁻¹α', h the harmonic part."""
    k, n = alpha.degree, alpha.grid.n
    if not 1 <= k <= n:
        raise DegreeError(f"hodge_decompose needs 1 <= k <= n, got k={k}, n={n}")
    harm = harmonic_part(alpha)
    u = solve_laplace(alpha - harm, cfg)
    psi = codifferential(u)
    exact = exterior_derivative(psi)
    if k < n:
        rho = codifferential(exterior_derivative(u))
    else:
        rho = DifferentialForm.zeros(alpha.grid, k, alpha.algebra)
    res = l2_norm(alpha - exact - rho - harm)
    return HodgeDecomposition(psi, rho, harm, res, exact)


def orthogonality_defects(dec: HodgeDecomposition) -> dict:
    """Normalised pairwise inner products of the three parts (0 when orthogonal)."""
    parts = {"exact": dec.exact, "coexact": dec.rho, "harmonic": dec.harmonic}
    out = {}
    names = list(parts)
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = parts[names[i]], parts[names[j]]
            den = l2_norm(a) * l2_norm(b)
            out[f"{names[i]}-{names[j]}"] = abs(pairing(a, b)) / den if den > 0 else 0.0
    return out


def neg_sobolev_norm(alpha: DifferentialForm, cfg: HodgeSolveConfig | None = None) -> float:
    """Discrete H^{-1} surrogate ``<α, (I+Δ)^{-1} α>^{1/2}``."""
    cfg = cfg or HodgeSolveConfig()
    cfg = HodgeSolveConfig(cfg.rel_tol, cfg.max_iter, 1.0)
    if not np.any(alpha.data):
        return 0.0
    x = solve(alpha, cfg).solution
    return float(np.sqrt(max(pairing(alpha, x), 0.0)))


def discrete_symbol(m: int, h: float) -> float:
    """Eigenvalue of the 1-D forward/backward Laplacian on ``sin(2π m x)``."""
    return (2.0 / h) ** 2 * np.sin(np.pi * m * h) ** 2


def spectral_inverse(alpha: DifferentialForm, shift: float = 1.0) -> DifferentialForm:
    """Exact ``(shift I + Δ)^{-1}`` by FFT diagonalisation of the stencil.

    Used as the preconditioner of the Yang-Mills flow; the CG path above stays
    the reference solver. With ``shift == 0`` the harmonic part is dropped.
    """
    g = alpha.grid
    axes = tuple(range(g.n))
    symbol = np.full(g.sizes, float(shift))
    for j, (N, h) in enumerate(zip(g.sizes, g.h)):
        k = np.arange(N)
        s = (2.0 / h) ** 2 * np.sin(np.pi * k / N) ** 2
        shape = [1] * g.n
        shape[j] = N
        symbol = symbol + s.reshape(shape)
    if shift == 0.0:
        symbol[(0,) * g.n] = np.inf
    spec = np.fft.fftn(alpha.data, axes=axes)
    spec /= symbol[(...,) + (None, None)]
    return alpha.like(np.real(np.fft.ifftn(spec, axes=axes)))
