"""Compensated-compactness experiment harness.

Weak convergence is operationalised as convergence of pairings against a fixed
bank of band-limited test forms: every member of an ε-indexed family lives on
its own grid (``N(ε) >= c/ε`` points per axis) and the bank is evaluated
exactly on each grid. Limits are fitted in ε by a linear Richardson fit over
the last four schedule points.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algebra import make_algebra
from .errors import ArgumentError, ConfigurationError
from .forms import (
    DifferentialForm,
    GridSpec,
    TestFormBank,
    codifferential,
    exterior_derivative,
    l2_norm,
    lp_norm,
    magnitude,
    pairing,
    random_band_limited,
    wedge_bracket,
)
from .gauge import curvature, ym_relax, ym_residual_weak, ym_weak_pairings
from .hodge import neg_sobolev_norm

CONVERGES = "CONVERGES"
FAILS = "FAILS"
PASS = "PASS"


# --------------------------------------------------------------------------
# schedules and families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonSchedule:
    """Geometric schedule ``ε_k = eps0 * ratio**k`` with grid policy ``N(ε)``.

    ``N(ε) = max(min_points, ceil(c/ε))`` rounded up to an even integer.
    An explicit ``values`` tuple overrides the geometric rule.
    """

    eps0: float = 0.25
    ratio: float = 0.5
    terms: int = 6
    c: float = 16.0
    min_points: int = 8
    values: tuple | None = None

    def __post_init__(self):
        if self.c < 8:
            raise ConfigurationError(f"grid policy needs c >= 8 points per period, got {self.c}")
        eps = self.epsilons
        if len(eps) < 1:
            raise ConfigurationError("empty ε schedule")
        if any(e <= 0 for e in eps):
            raise ConfigurationError("ε values must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("ε schedule must be strictly decreasing")

    @property
    def epsilons(self) -> tuple:
        if self.values is not None:
            return tuple(float(v) for v in self.values)
        if not 0 < self.ratio < 1:
            raise ConfigurationError(f"ratio must lie in (0, 1), got {self.ratio}")
        return tuple(self.eps0 * self.ratio ** k for k in range(self.terms))

    def grid_size(self, eps: float) -> int:
        N = max(self.min_points, math.ceil(self.c / eps - 1e-9))
        return N + (N % 2)

    def grid(self, eps: float, n: int) -> GridSpec:
        return GridSpec.cube(n, self.grid_size(eps))


def _check_resolved(grid: GridSpec, axis: int, eps: float):
    periods = grid.lengths[axis] / eps
    if abs(periods - round(periods)) > 1e-9:
        raise ConfigurationError(f"ε={eps:g} does not divide the period {grid.lengths[axis]:g}")
    if grid.sizes[axis] * eps / grid.lengths[axis] < 8 - 1e-9:
        raise ConfigurationError(
            f"ε={eps:g} unresolved on {grid.sizes[axis]} points (needs >= 8 per period)"
        )


def gen_oscillatory(base: DifferentialForm, amplitude: DifferentialForm, axis: int,
                    eps: float) -> DifferentialForm:
    """``base + sin(2π x_axis / ε) * amplitude``; weak limit ``base``."""
    base._compatible(amplitude)
    g = base.grid
    if not 0 <= axis < g.n:
        raise ArgumentError(f"axis {axis} outside 0..{g.n - 1}")
    _check_resolved(g, axis, eps)
    wave = np.sin(2 * np.pi * g.coords()[axis] / eps)
    return base.like(base.data + wave[..., None, None] * amplitude.data)


def bump(r: np.ndarray) -> np.ndarray:
    """Smooth compactly supported ``exp(1 - 1/(1 - r²))`` on ``r < 1``, peak 1."""
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def gen_concentration(grid: GridSpec, degree: int, algebra, coefficient, eps: float, p: float,
                      radius: float = 0.25, center=None) -> DifferentialForm:
    """``ε^{-n/p} bump(|x - x0| / (radius ε)) * coefficient``.

    The L^p norm is independent of ε; the mass concentrates at ``x0``
    (default: the grid point nearest the cell centre). Distances use the
    periodic minimum image.
    """
    n = grid.n
    if p < 1:
        raise ArgumentError(f"integrability p must be >= 1, got {p}")
    if min(grid.sizes[i] * radius * eps / grid.lengths[i] for i in range(n)) < 2:
        raise ConfigurationError(f"ε={eps:g} unresolved: bump radius spans fewer than 2 cells")
    if center is None:
        center = [grid.h[i] * (grid.sizes[i] // 2) for i in range(n)]
    x = grid.coords()
    r2 = np.zeros(grid.sizes)
    for i in range(n):
        L = grid.lengths[i]
        dx = (x[i] - center[i] + 0.5 * L) % L - 0.5 * L
        r2 += dx * dx
    prof = eps ** (-n / p) * bump(np.sqrt(r2) / (radius * eps))
    coef = np.asarray(coefficient, dtype=float).reshape(math.comb(n, degree), algebra.dim)
    return DifferentialForm(grid, degree, algebra, prof[..., None, None] * coef)


def _components(spec: dict, n: int, degree: int, dim: int) -> np.ndarray:
    """``{"12": [..d..]}`` (1-based multi-index strings) to a ``(C(n,k), d)`` array."""
    from .forms import multi_indices
    index = {I: i for i, I in enumerate(multi_indices(n, degree))}
    out = np.zeros((len(index), dim))
    for key, val in spec.items():
        I = tuple(int(ch) - 1 for ch in str(key)) if degree else ()
        if I not in index:
            raise ConfigurationError(f"{key!r} is not a {degree}-form multi-index in dimension {n}")
        val = np.asarray(val, dtype=float)
        if val.shape != (dim,):
            raise ConfigurationError(f"component {key!r} needs {dim} values, got {val.shape}")
        out[index[I]] = val
    return out


@dataclass(frozen=True)
class SequenceFamily:
    """Generator id plus parameters, evaluated along an ε schedule.

    Generators:

    ``oscillatory``
        ``base + Σ_t sin(2π x_{axis_t}/ε) amplitude_t``; ``base`` is zero or a
        seeded band-limited form (``{"seed", "kmax", "scale"}``); weak limit
        ``base``.
    ``concentration``
        :func:`gen_concentration`; weak limit zero.
    ``constant``
        ``base`` for every ε.
    """

    generator: str
    n: int
    degree: int
    algebra: str
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in ("oscillatory", "concentration", "constant"):
            raise ConfigurationError(f"unknown generator {self.generator!r}")
        make_algebra(self.algebra)

    @property
    def alg(self):
        return make_algebra(self.algebra)

    @property
    def epsilons(self) -> tuple:
        return self.schedule.epsilons

    def grid(self, eps: float) -> GridSpec:
        return self.schedule.grid(eps, self.n)

    def base(self, grid: GridSpec) -> DifferentialForm:
        spec = self.params.get("base")
        alg = self.alg
        if not spec:
            return DifferentialForm.zeros(grid, self.degree, alg)
        if "components" in spec:
            vals = _components(spec["components"], self.n, self.degree, alg.dim)
            return DifferentialForm.constant(grid, self.degree, alg, vals)
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        form = random_band_limited(self.n, self.degree, alg, rng, kmax=int(spec.get("kmax", 2)))
        return form.scaled(float(spec.get("scale", 1.0))).evaluate(grid)

    def member(self, eps: float, grid: GridSpec | None = None) -> DifferentialForm:
        grid = grid or self.grid(eps)
        alg = self.alg
        if self.generator == "constant":
            return self.base(grid)
        if self.generator == "concentration":
            coef = _components(self.params["coefficient"], self.n, self.degree, alg.dim)
            return gen_concentration(grid, self.degree, alg, coef, eps,
                                     float(self.params.get("p", 2.0)),
                                     float(self.params.get("radius", 0.25)),
                                     self.params.get("center"))
        out = self.base(grid)
        for term in self.params.get("terms", []):
            amp = DifferentialForm.constant(
                grid, self.degree, alg,
                _components(term["amplitude"], self.n, self.degree, alg.dim),
            )
            out = gen_oscillatory(out, amp, int(term["axis"]), eps)
        return out

    def limit(self, grid: GridSpec) -> DifferentialForm:
        if self.generator == "concentration":
            return DifferentialForm.zeros(grid, self.degree, self.alg)
        return self.base(grid)


# --------------------------------------------------------------------------
# fitting and reports
# --------------------------------------------------------------------------

def richardson_fit(eps, values, points: int = 4):
    """Least-squares ``v ≈ L + c ε`` over the last ``points`` entries.

    ``values`` is ``(E,)`` or ``(E, B)``. Returns ``(L, residual)`` with the
    residual the RMS misfit of the linear model.
    """
    eps = np.asarray(eps, dtype=float)
    vals = np.asarray(values, dtype=float)
    m = min(points, len(eps))
    e, v = eps[-m:], vals[-m:]
    if m == 1:
        return v[0], np.zeros_like(v[0]) if v.ndim > 1 else 0.0
    X = np.stack([np.ones(m), e], axis=1)
    coef, *_ = np.linalg.lstsq(X, v.reshape(m, -1), rcond=None)
    resid = v.reshape(m, -1) - X @ coef
    rms = np.sqrt(np.mean(resid ** 2, axis=0))
    lim = coef[0]
    if v.ndim == 1:
        return float(lim[0]), float(rms[0])
    return lim, rms


def growth_exponent(x, y) -> float:
    """Slope of ``log y`` against ``log x`` (0 when y is flat or vanishes)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.all(y <= 0) or len(x) < 2:
        return 0.0
    y = np.maximum(y, 1e-300)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class LimitReport:
    """ε-indexed pairings, surrogate norms, fitted limit, target and verdict.

    ``pairings`` is ``(E, B)`` over epsilons x bank members; ``gap`` is
    ``|fitted_limit - target|`` per bank member.
    """

    experiment: str
    epsilons: list
    test_form_ids: list
    pairings: np.ndarray
    surrogate_norms: list
    lp_bounds: list
    fitted_limit: np.ndarray
    target: np.ndarray
    scale: float
    tolerance: float
    fit_residual: float
    verdict: str
    hypotheses: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def gap(self) -> np.ndarray:
        return np.abs(np.asarray(self.fitted_limit) - np.asarray(self.target))

    @property
    def max_gap(self) -> float:
        return float(np.max(self.gap)) if len(self.gap) else 0.0

    def rows(self):
        for i, e in enumerate(self.epsilons):
            for j, tid in enumerate(self.test_form_ids):
                yield (e, tid, float(self.pairings[i, j]), self.surrogate_norms[i], self.lp_bounds[i])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "test_form_id", "pairing", "surrogate_norm", "lp_bound"])
        for e, tid, p, s, b in self.rows():
            w.writerow([repr(float(e)), tid, repr(float(p)), repr(float(s)), repr(float(b))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "fitted_limit": [float(v) for v in np.ravel(self.fitted_limit)],
            "target": [float(v) for v in np.ravel(self.target)],
            "gap": [float(v) for v in np.ravel(self.gap)],
            "max_gap": self.max_gap,
            "scale": float(self.scale),
            "tolerance": float(self.tolerance),
            "fit_residual": float(self.fit_residual),
            "verdict": self.verdict,
            "hypotheses": _plain(self.hypotheses),
            "extra": _plain(self.extra),
            "test_forms": "fixed band-limited bank (finite surrogate for all smooth test forms)",
        }

    def write(self, out_dir, stem: str, meta: dict | None = None):
        """Write ``<stem>.csv`` and ``<stem>.json``; returns the two paths."""
        import os
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{stem}.csv")
        json_path = os.path.join(out_dir, f"{stem}.json")
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.csv_text())
        doc = self.summary()
        if meta:
            doc.update(meta)
        with open(json_path, "w") as fh:
            fh.write(dumps(doc))
        return csv_path, json_path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(doc: dict) -> str:
    """Canonical JSON text (sorted keys, fixed indent, trailing newline)."""
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=True) + "\n"


def pmap(fn, items, threads: int = 1) -> list:
    """Ordered map over independent jobs on a bounded thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ExperimentSettings:
    """Shared experiment knobs.

    ``tol_fraction`` is the verdict tolerance as a fraction of the pairing
    scale; ``fit_points`` the Richardson window; ``threads`` the worker count.
    """

    tol_fraction: float = 0.05
    fit_points: int = 4
    threads: int = 1
    p: float = 2.0
    bounded_exponent: float = 0.1
    decay_exponent: float = 0.5
    abs_floor: float = 1e-10


def _hypotheses(eps, lp_bounds, surrogates, cfg: ExperimentSettings) -> dict:
    inv = 1.0 / np.asarray(eps)
    lp_growth = growth_exponent(inv, lp_bounds)
    sur = np.asarray(surrogates, dtype=float)
    floor = cfg.abs_floor * max(1.0, float(np.max(lp_bounds)) if len(lp_bounds) else 1.0)
    if np.all(sur <= floor):
        decay, decaying = float("inf"), True
    else:
        decay = -growth_exponent(inv, sur)
        decaying = decay >= cfg.decay_exponent
    return {
        "lp_growth_exponent": lp_growth,
        "lp_bounded": bool(lp_growth <= cfg.bounded_exponent),
        "surrogate_decay_exponent": decay,
        "surrogate_decaying": bool(decaying),
        "satisfied": bool(lp_growth <= cfg.bounded_exponent and decaying),
    }


def _verdict(gap, scale, cfg: ExperimentSettings):
    tol = cfg.tol_fraction * scale
    return (CONVERGES if float(np.max(gap, initial=0.0)) <= max(tol, cfg.abs_floor) else FAILS), tol


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def _bank_for(bank: TestFormBank, grid):
    return bank.on(grid)


def div_curl_experiment(famA: SequenceFamily, famB: SequenceFamily, bank: TestFormBank,
                        cfg: ExperimentSettings | None = None) -> LimitReport:
    """Pairings of ``[A_ε ∧ B_ε]`` against the bank versus ``[A ∧ B]``.

    The confinement surrogate is ``max(|dA_ε - dA|_{H^-1}, |dB_ε - dB|_{H^-1})``
    and the integrability bound ``max(|A_ε|_{L^p}, |B_ε|_{L^p'})``. The
    pairing scale is ``max_ε |[A_ε∧B_ε]|_{L²}``, the Cauchy-Schwarz bound on
    every pairing against a unit test form.
    """
    cfg = cfg or ExperimentSettings()
    if famA.n != famB.n or famA.algebra != famB.algebra:
        raise ArgumentError("div-curl families must share base dimension and algebra")
    if famA.epsilons != famB.epsilons:
        raise ArgumentError("div-curl families must share the ε schedule")
    if famA.degree + famB.degree > famA.n:
        raise ArgumentError(f"degrees {famA.degree}+{famB.degree} exceed dimension {famA.n}")
    if bank.degree != famA.degree + famB.degree or bank.algebra != famA.alg:
        raise ArgumentError("bank degree/algebra does not match [A∧B]")
    eps_list = famA.epsilons
    p = cfg.p
    q = p / (p - 1.0) if p > 1 else float("inf")

    def job(eps):
        grid = famA.grid(eps)
        a, b = famA.member(eps, grid), famB.member(eps, grid)
        la, lb = famA.limit(grid), famB.limit(grid)
        prod = wedge_bracket(a, b)
        phis = _bank_for(bank, grid)
        vals = [pairing(prod, phi) for phi in phis]
        sur = 0.0
        for f, lim in ((a, la), (b, lb)):
            if f.degree < grid.n:
                sur = max(sur, neg_sobolev_norm(exterior_derivative(f) - exterior_derivative(lim)))
        bound = max(lp_norm(a, p), lp_norm(b, q))
        return vals, sur, bound, l2_norm(prod)

    results = pmap(job, eps_list, cfg.threads)
    pair = np.array([r[0] for r in results])
    sur = [r[1] for r in results]
    bounds = [r[2] for r in results]
    scale = max(r[3] for r in results)
    fitted, rms = richardson_fit(eps_list, pair, cfg.fit_points)
    fine = famA.grid(eps_list[-1])
    tgt_form = wedge_bracket(famA.limit(fine), famB.limit(fine))
    target = np.array([pairing(tgt_form, phi) for phi in _bank_for(bank, fine)])
    gap = np.abs(fitted - target)
    verdict, tol = _verdict(gap, scale, cfg)
    return LimitReport(
        "divcurl", list(eps_list), bank.ids, pair, sur, bounds, np.asarray(fitted), target,
        scale, tol, float(np.max(rms, initial=0.0)), verdict,
        _hypotheses(eps_list, bounds, sur, cfg),
    )


def curvature_functional(a: DifferentialForm, phi: DifferentialForm) -> float:
    """``∫<A, δφ> + ½<[A∧A], φ>``, the distributional pairing of the curvature."""
    val = pairing(a, codifferential(phi))
    if not a.algebra.is_abelian:
        val += 0.5 * pairing(wedge_bracket(a, a), phi)
    return val


def curvature_weak_limit_experiment(fam: SequenceFamily, bank: TestFormBank,
                                    cfg: ExperimentSettings | None = None) -> LimitReport:
    """Weak continuity of curvature along ``fam`` (degree-1 family, 2-form bank).

    Surrogate: ``|A_ε - A|_{H^-1}`` (weak convergence witness); bound:
    ``|Ω_ε|_{L¹}`` (the measure bound). Scale: ``max_ε (|A_ε|_{L²} + ½|[A_ε∧A_ε]|_{L²})``
    up to the test-form derivative norm, taken as the largest |pairing| bound.
    """
    cfg = cfg or ExperimentSettings()
    if fam.degree != 1:
        raise ArgumentError("curvature experiment needs a 1-form family")
    if bank.degree != 2 or bank.algebra != fam.alg:
        raise ArgumentError("curvature experiment needs a 2-form bank in the family algebra")
    eps_list = fam.epsilons

    def job(eps):
        grid = fam.grid(eps)
        a = fam.member(eps, grid)
        lim = fam.limit(grid)
        phis = _bank_for(bank, grid)
        vals = [curvature_functional(a, phi) for phi in phis]
        dphi = max(l2_norm(codifferential(phi)) for phi in phis)
        sq = l2_norm(wedge_bracket(a, a)) if not a.algebra.is_abelian else 0.0
        scale = l2_norm(a) * dphi + 0.5 * sq
        return vals, neg_sobolev_norm(a - lim), lp_norm(curvature(a), 1), scale

    results = pmap(job, eps_list, cfg.threads)
    pair = np.array([r[0] for r in results])
    sur = [r[1] for r in results]
    bounds = [r[2] for r in results]
    scale = max(r[3] for r in results)
    fitted, rms = richardson_fit(eps_list, pair, cfg.fit_points)
    fine = fam.grid(eps_list[-1])
    lim = fam.limit(fine)
    target = np.array([curvature_functional(lim, phi) for phi in _bank_for(bank, fine)])
    gap = np.abs(fitted - target)
    verdict, tol = _verdict(gap, scale, cfg)
    hyp = _hypotheses(eps_list, bounds, sur, cfg)
    return LimitReport(
        "curvature-limit", list(eps_list), bank.ids, pair, sur, bounds, np.asarray(fitted),
        target, scale, tol, float(np.max(rms, initial=0.0)), verdict, hyp,
    )


def lowpass(a: DifferentialForm, cutoff: int) -> DifferentialForm:
    """Keep Fourier modes with ``|k_i| <= cutoff`` on every axis."""
    g = a.grid
    axes = tuple(range(g.n))
    spec = np.fft.fftn(a.data, axes=axes)
    mask = np.ones(g.sizes, dtype=bool)
    for i, N in enumerate(g.sizes):
        k = np.abs(np.fft.fftfreq(N, 1.0 / N))
        shape = [1] * g.n
        shape[i] = N
        mask = mask & (k <= cutoff).reshape(shape)
    return a.like(np.real(np.fft.ifftn(spec * mask[(...,) + (None, None)], axes=axes)))


@dataclass(frozen=True)
class RelaxedFamily:
    """Relaxed seed plus resolved closed oscillations, re-relaxed per ε.

    ``seed`` is ``{"seed", "kmax", "scale"}`` for a band-limited initial 1-form;
    ``terms`` are oscillation terms as in :class:`SequenceFamily`.
    """

    n: int
    algebra: str
    schedule: EpsilonSchedule
    seed: dict
    terms: tuple
    seed_steps: int = 5000
    member_steps: int = 2000
    grad_tol: float = 1e-8

    @property
    def epsilons(self):
        return self.schedule.epsilons

    def relaxed_seed(self, grid: GridSpec):
        alg = make_algebra(self.algebra)
        rng = np.random.default_rng(int(self.seed.get("seed", 0)))
        form = random_band_limited(self.n, 1, alg, rng, kmax=int(self.seed.get("kmax", 2)))
        a0 = form.scaled(float(self.seed.get("scale", 0.1))).evaluate(grid)
        conn, trace = ym_relax(a0, self.seed_steps, self.grad_tol)
        return conn.a, trace

    def member(self, eps: float, seed_form: DifferentialForm):
        fam = SequenceFamily("oscillatory", self.n, 1, self.algebra, self.schedule,
                             {"terms": list(self.terms)})
        a = seed_form + fam.member(eps, seed_form.grid)
        conn, trace = ym_relax(a, self.member_steps, self.grad_tol)
        return conn.a, trace


def ym_weak_continuity_experiment(fam: RelaxedFamily, bank: TestFormBank,
                                  cfg: ExperimentSettings | None = None,
                                  tol_abs: float = 1e-4) -> LimitReport:
    """Weak YM residual of the limit of relaxed connections.

    The limit candidate at each ε is the Fourier low-pass of ``A_ε`` below half
    the oscillation frequency; its signed weak-YM pairings are fitted in ε and
    the limit residual is the largest fitted pairing. PASS iff it is at most
    ``max(2 * max member residual, tol_abs)``.
    """
    cfg = cfg or ExperimentSettings()
    if bank.degree != 1:
        raise ArgumentError("weak YM experiment needs a 1-form bank")
    eps_list = fam.epsilons
    seeds = {}
    for eps in eps_list:
        g = fam.schedule.grid(eps, fam.n)
        if g.sizes not in seeds:
            seeds[g.sizes] = fam.relaxed_seed(g)

    def job(eps):
        g = fam.schedule.grid(eps, fam.n)
        seed_form, _ = seeds[g.sizes]
        a, trace = fam.member(eps, seed_form)
        phis = _bank_for(bank, g)
        member_res = ym_residual_weak(a, phis)
        lim = lowpass(a, max(1, int(math.floor(0.5 / eps + 1e-9))))
        vals = ym_weak_pairings(lim, phis)
        return vals, member_res, l2_norm(curvature(a)), len(trace.steps) - 1, trace.converged

    results = pmap(job, eps_list, cfg.threads)
    pair = np.array([r[0] for r in results])
    member_res = [r[1] for r in results]
    bounds = [r[2] for r in results]
    fitted, rms = richardson_fit(eps_list, pair, cfg.fit_points)
    limit_res = float(np.max(np.abs(fitted), initial=0.0))
    threshold = max(2.0 * max(member_res), tol_abs)
    verdict = PASS if limit_res <= threshold else FAILS
    inv = 1.0 / np.asarray(eps_list)
    hyp = {
        "curvature_l2_growth_exponent": growth_exponent(inv, bounds),
        "curvature_l2_bounded": bool(growth_exponent(inv, bounds) <= cfg.bounded_exponent
                                     or max(bounds) <= 1e-6),
        "members_converged": bool(all(r[4] for r in results)),
    }
    hyp["satisfied"] = bool(hyp["curvature_l2_bounded"])
    report = LimitReport(
        "ym-weak", list(eps_list), bank.ids, pair, member_res, bounds, np.asarray(fitted),
        np.zeros(len(bank)), threshold, threshold, float(np.max(rms, initial=0.0)), verdict, hyp,
        extra={
            "limit_residual": limit_res,
            "max_member_residual": max(member_res),
            "member_steps": [r[3] for r in results],
            "seed_steps": {"x".join(map(str, k)): len(v[1].steps) - 1 for k, v in seeds.items()},
        },
    )
    return report


# --------------------------------------------------------------------------
# equi-integrability
# --------------------------------------------------------------------------

def equi_integrability_modulus(form, p: float, fractions, cell_volume: float | None = None) -> np.ndarray:
    """``ρ(s) = max_{|S| <= s|M|} Σ_S |form|^p * cellvol`` for each ``s``.

    ``form`` is a :class:`DifferentialForm` or a per-point density array of
    ``|form|`` values (then ``cell_volume`` is required). The maximiser is the
    top-mass set, so ρ is a prefix sum of the sorted densities.
    """
    if p < 1:
        raise ArgumentError(f"p must be >= 1, got {p}")
    if isinstance(form, DifferentialForm):
        mag = magnitude(form)
        cell_volume = form.grid.cell_volume
    else:
        mag = np.abs(np.asarray(form, dtype=float))
        if cell_volume is None:
            raise ArgumentError("cell_volume is required for raw density arrays")
    dens = np.sort((mag ** p).ravel())[::-1]
    prefix = np.concatenate([[0.0], np.cumsum(dens)]) * cell_volume
    P = dens.size
    out = []
    for s in np.atleast_1d(fractions):
        if not 0 < s <= 1:
            raise ArgumentError(f"fractions must lie in (0, 1], got {s}")
        m = int(math.floor(s * P + 1e-9))
        out.append(prefix[m])
    return np.array(out)


def modulus_spread(curves) -> np.ndarray:
    """Relative spread ``(max - min) / max`` across members, per fraction."""
    c = np.asarray(curves, dtype=float)
    top = c.max(axis=0)
    return np.where(top > 0, (top - c.min(axis=0)) / np.where(top > 0, top, 1.0), 0.0)
