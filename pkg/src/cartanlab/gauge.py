"""Connections in a fixed trivialisation: curvature, covariant (co)derivatives,
Yang-Mills energy and residuals, Bianchi and anti-self-duality defects, and a
gradient-descent relaxer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DegreeError, FlowError
from .forms import (
    DifferentialForm,
    codifferential,
    exterior_derivative,
    hodge_star,
    l2_norm,
    lp_norm,
    pairing,
    save_binary,
    load_binary,
    wedge_bracket,
)
from .algebra import make_algebra
from .hodge import apply_operator, spectral_inverse


@dataclass
class ConnectionField:
    """g-valued 1-form ``A`` with ``∇_A = d + A``."""

    a: DifferentialForm

    def __post_init__(self):
        if self.a.degree != 1:
            raise DegreeError(f"a connection is a 1-form, got degree {self.a.degree}")

    @property
    def grid(self):
        return self.a.grid

    @property
    def algebra(self):
        return self.a.algebra

    def save(self, path) -> None:
        save_binary(self.a, path)
        with open(f"{path}.meta", "w") as fh:
            fh.write(f"algebra: {self.algebra.label}\n")

    @classmethod
    def load(cls, path, lengths=None) -> "ConnectionField":
        with open(f"{path}.meta") as fh:
            label = fh.readline().split(":", 1)[1].strip()
        return cls(load_binary(path, make_algebra(label), lengths))


@dataclass
class FlowTrace:
    steps: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False

    def record(self, step, energy, residual, step_size):
        self.steps.append(step)
        self.energies.append(energy)
        self.residuals.append(residual)
        self.step_sizes.append(step_size)

    def rows(self):
        return list(zip(self.steps, self.energies, self.residuals, self.step_sizes))


def _form(A):
    return A.a if isinstance(A, ConnectionField) else A


def curvature(A) -> DifferentialForm:
    """``Ω = dA + ½[A∧A]``."""
    a = _form(A)
    if a.grid.n < 2:
        raise DegreeError("curvature needs base dimension >= 2")
    omega = exterior_derivative(a)
    if not a.algebra.is_abelian:
        omega = omega + 0.5 * wedge_bracket(a, a)
    return omega


def covariant_derivative(A, w: DifferentialForm) -> DifferentialForm:
    a = _form(A)
    if w.degree >= w.grid.n:
        raise DegreeError(f"D_A of a {w.degree}-form on a {w.grid.n}-grid")
    out = exterior_derivative(w)
    if not a.algebra.is_abelian:
        out = out + wedge_bracket(a, w)
    return out


def covariant_coderivative(A, w: DifferentialForm) -> DifferentialForm:
    """``D*_A w = δw - (-1)^{(n-k)(k-1)} *[A ∧ *w]``.

    With the collocated discretisation this is the exact adjoint of
    :func:`covariant_derivative`: δ is the matrix adjoint of d and the bracket
    term is pointwise.
    """
    a = _form(A)
    k, n = w.degree, w.grid.n
    if k == 0:
        raise DegreeError("D*_A of a 0-form")
    out = codifferential(w)
    if not a.algebra.is_abelian:
        sign = (-1) ** ((n - k) * (k - 1))
        out = out - sign * hodge_star(wedge_bracket(a, hodge_star(w)))
    return out


def ym_energy(A) -> float:
    return l2_norm(curvature(A)) ** 2


def ym_residual_strong(A) -> DifferentialForm:
    return covariant_coderivative(A, curvature(A))


def w12_norm(phi: DifferentialForm) -> float:
    """``(||φ||² + ||∇φ||²)^{1/2}`` with ``||∇φ||² = <φ, Δφ>`` on the torus."""
    return float(np.sqrt(max(pairing(phi, apply_operator(phi, 1.0)), 0.0)))


def ym_weak_pairings(A, bank_forms) -> np.ndarray:
    """Signed ``∫<Ω_A, D_A φ> / ||φ||_{W^{1,2}}`` for each test 1-form."""
    omega = curvature(A)
    out = []
    for phi in bank_forms:
        out.append(pairing(omega, covariant_derivative(A, phi)) / w12_norm(phi))
    return np.array(out)


def ym_residual_weak(A, bank_forms) -> float:
    vals = ym_weak_pairings(A, bank_forms)
    return float(np.max(np.abs(vals))) if len(vals) else 0.0


def bianchi_residual(A) -> float:
    """``||D_A Ω_A||_{L¹}``; zero by degree on two-dimensional grids."""
    a = _form(A)
    if a.grid.n < 3:
        return 0.0
    return lp_norm(covariant_derivative(a, curvature(a)), 1)


def asd_defect(A) -> float:
    """``||*Ω + Ω||_{L²}`` on four-dimensional grids (ASD means ``*Ω = -Ω``)."""
    a = _form(A)
    if a.grid.n != 4:
        raise DegreeError(f"anti-self-duality needs n = 4, got {a.grid.n}")
    omega = curvature(a)
    return l2_norm(hodge_star(omega) + omega)


def sd_defect(A) -> float:
    """Opposite orientation: ``||*Ω - Ω||_{L²}``."""
    a = _form(A)
    if a.grid.n != 4:
        raise DegreeError(f"self-duality needs n = 4, got {a.grid.n}")
    omega = curvature(a)
    return l2_norm(hodge_star(omega) - omega)


def _quartic_step(a: DifferentialForm, direction: DifferentialForm, fallback: float) -> float:
    """Exact minimiser of ``t -> E(a - t direction)``.

    The curvature is quadratic along a line,
    ``Ω(a - t v) = Ω_a - t D_a v + t² ½[v∧v]``, so the energy is a quartic
    polynomial in ``t`` whose coefficients are six pairings.
    """
    o = curvature(a)
    p = covariant_derivative(a, direction)
    if a.algebra.is_abelian:
        pp = pairing(p, p)
        return pairing(o, p) / pp if pp > 0 else fallback
    q = 0.5 * wedge_bracket(direction, direction)
    oo, op, oq = pairing(o, o), pairing(o, p), pairing(o, q)
    pp, pq, qq = pairing(p, p), pairing(p, q), pairing(q, q)
    # E(t) = oo - 2 op t + (pp + 2 oq) t² - 2 pq t³ + qq t⁴
    coeffs = np.array([qq, -2 * pq, pp + 2 * oq, -2 * op, oo])
    roots = np.roots(np.polyder(coeffs))
    cands = [r.real for r in roots if abs(r.imag) <= 1e-9 * max(1.0, abs(r)) and r.real > 0]
    if not cands:
        return fallback
    return min(cands, key=lambda t: np.polyval(coeffs, t))


def ym_relax(A0, steps: int, grad_tol: float = 1e-8, initial_step: float | None = None,
             armijo: float = 1e-4, max_halvings: int = 60, metric: str = "h1",
             method: str = "cg"):
    """Descent on the Yang-Mills energy with backtracking line search.

    ``g = D*_A Ω_A`` is half the L² gradient of the discrete energy. With
    ``metric="l2"`` the gradient is used as is; ``metric="h1"`` (default)
    preconditions it by ``(I+Δ)^{-1}``, the gradient for the H¹ inner
    product, so admissible steps do not shrink with the grid spacing.
    ``method="gd"`` is steepest descent; ``method="cg"`` adds a
    Polak-Ribière+ momentum term (restarting whenever it fails to descend),
    which is what makes the quartic valleys of commuting constant connections
    tractable. The step is the exact minimiser of the quartic energy along
    the search line, halved until the Armijo condition holds (``initial_step``,
    0.1 for l2 and 1.0 for h1, is the fallback when the quartic has no positive
    critical point); every accepted step lowers the energy. Stops when ``||g||_2 <= grad_tol``.
    Returns ``(ConnectionField, FlowTrace)``.
    """
    if steps < 1:
        raise ArgumentError(f"steps must be >= 1, got {steps}")
    if metric not in ("l2", "h1"):
        raise ArgumentError(f"metric must be 'l2' or 'h1', got {metric!r}")
    if method not in ("gd", "cg"):
        raise ArgumentError(f"method must be 'gd' or 'cg', got {method!r}")
    if initial_step is None:
        initial_step = 0.1 if metric == "l2" else 1.0
    a = _form(A0).copy()
    trace = FlowTrace()
    energy = ym_energy(a)
    grad = ym_residual_strong(a)
    gnorm = l2_norm(grad)
    trace.record(0, energy, gnorm, 0.0)
    prev_pre = prev_grad = direction = None
    for step in range(1, steps + 1):
        if gnorm <= grad_tol:
            trace.converged = True
            break
        pre = grad if metric == "l2" else spectral_inverse(grad, 1.0)
        if method == "cg" and direction is not None:
            beta = max(0.0, pairing(grad - prev_grad, pre) / pairing(prev_grad, prev_pre))
            direction = pre + beta * direction
            if pairing(grad, direction) <= 0.0:
                direction = pre
        else:
            direction = pre
        slope = 2.0 * pairing(grad, direction)
        t = _quartic_step(a, direction, initial_step)
        for _ in range(max_halvings + 1):
            trial = a - t * direction
            e_trial = ym_energy(trial)
            if e_trial <= energy - armijo * t * slope:
                break
            t *= 0.5
        else:
            raise FlowError(f"line search failed after {max_halvings} halvings at step {step}", trace)
        a = trial
        energy = e_trial
        prev_pre, prev_grad = pre, grad
        grad = ym_residual_strong(a)
        gnorm = l2_norm(grad)
        trace.record(step, energy, gnorm, t)
    else:
        trace.converged = gnorm <= grad_tol
    return ConnectionField(a), trace
