"""Experiment runners keyed by id; each returns an :class:`Outcome`.

Runners take an already schema-validated config dict and never touch the
filesystem except through the returned outcome, so reports are assembled
single-threaded from ordered results and are byte-stable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg_mod
from .algebra import make_algebra
from .cclab import (
    CONVERGES,
    FAILS,
    PASS,
    EpsilonSchedule,
    ExperimentSettings,
    RelaxedFamily,
    SequenceFamily,
    curvature_weak_limit_experiment,
    div_curl_experiment,
    equi_integrability_modulus,
    growth_exponent,
    modulus_spread,
    pmap,
    ym_weak_continuity_experiment,
)
from .errors import ConfigurationError
from .forms import (
    DifferentialForm,
    GridSpec,
    TestFormBank,
    codifferential,
    exterior_derivative,
    hodge_star,
    l2_norm,
    leibniz_residual,
    pairing,
    random_band_limited,
    wedge_bracket,
)
from .gauge import (
    bianchi_residual,
    covariant_coderivative,
    covariant_derivative,
    ym_relax,
    ym_residual_weak,
)
from .hodge import apply_operator
from .immersion import (
    ImmersionFamily,
    analyze,
    isometry_defect,
    make_immersion,
    mean_curvature_mass,
    immersion_sequence_experiment,
)

DEFAULT_SEED = 20240531


@dataclass
class Outcome:
    """Verdict, main CSV text, JSON summary, extra tables and form snapshots."""

    verdict: str
    csv_text: str
    summary: dict
    tables: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if self.verdict in (PASS, CONVERGES) else 2


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def fitted_order(hs, values, exact_floor: float = 1e-12) -> float:
    """Slope of ``log value`` against ``log h``; ``inf`` when every value is below ``exact_floor``."""
    vals = np.asarray(values, dtype=float)
    if np.all(np.abs(vals) <= exact_floor):
        return float("inf")
    return float(np.polyfit(np.log(hs), np.log(np.maximum(np.abs(vals), 1e-300)), 1)[0])


def _settings(cfg: dict, threads: int) -> ExperimentSettings:
    tol = cfg.get("tolerances", {})
    return ExperimentSettings(
        tol_fraction=float(tol.get("tol_fraction", 0.05)),
        fit_points=int(tol.get("fit_points", 4)),
        threads=threads,
        p=float(cfg.get("params", {}).get("p", 2.0)),
    )


def _schedule(cfg: dict) -> EpsilonSchedule:
    s = cfg.get("schedule", {})
    vals = s.get("values")
    return EpsilonSchedule(
        float(s.get("eps0", 0.25)), float(s.get("ratio", 0.5)), int(s.get("terms", 6)),
        float(s.get("c", 16.0)), int(s.get("min_points", 8)),
        tuple(vals) if vals is not None else None,
    )


def _bank(cfg: dict, n: int, degree: int, alg, seed: int) -> TestFormBank:
    b = cfg.get("bank", {})
    return TestFormBank.build(n, degree, alg, int(b.get("size", 8)), seed, int(b.get("kmax", 2)))


def _family(spec: dict, cfg: dict, schedule) -> SequenceFamily:
    params = {k: v for k, v in spec.items() if k not in ("generator", "degree")}
    return SequenceFamily(spec.get("generator", "oscillatory"), int(cfg.get("n", 2)),
                          int(spec.get("degree", 1)), cfg.get("algebra", "so:3"), schedule, params)


def _report_outcome(report, meta_extra=None) -> Outcome:
    summary = report.summary()
    if meta_extra:
        summary.update(meta_extra)
    return Outcome(report.verdict, report.csv_text(), summary)


# --------------------------------------------------------------------------
# identities
# --------------------------------------------------------------------------

def identity_suite(n: int, N: int, cases: int, alg, rng) -> dict:
    """Max relative residual of each exact discrete identity over random cases."""
    grid = GridSpec.cube(n, N)
    h = grid.h[0]
    out = {k: 0.0 for k in ("d_squared", "adjoint", "graded_antisymmetry", "jacobi",
                            "ad_invariance", "laplacian_commutes_d", "star_involution")}

    def rand(k):
        return DifferentialForm(grid, k, alg, rng.standard_normal(grid.sizes + (math.comb(n, k), alg.dim)))

    for _ in range(cases):
        k = int(rng.integers(0, n - 1))
        a = rand(k)
        dd = exterior_derivative(exterior_derivative(a))
        out["d_squared"] = max(out["d_squared"], l2_norm(dd) / (n * (2.0 / h) ** 2 * l2_norm(a)))

        k = int(rng.integers(0, n))
        a, b = rand(k), rand(k + 1)
        da, db = exterior_derivative(a), codifferential(b)
        lhs, rhs = pairing(da, b), pairing(a, db)
        den = l2_norm(da) * l2_norm(b) + l2_norm(a) * l2_norm(db)
        out["adjoint"] = max(out["adjoint"], abs(lhs - rhs) / den)

        p = int(rng.integers(0, n + 1))
        q = int(rng.integers(0, n - p + 1))
        a, b = rand(p), rand(q)
        diff = wedge_bracket(a, b) - ((-1) ** (p * q + 1)) * wedge_bracket(b, a)
        scale = math.sqrt(float(np.sum(np.sum(a.data ** 2, axis=(-2, -1)) * np.sum(b.data ** 2, axis=(-2, -1))))
                          * grid.cell_volume)
        out["graded_antisymmetry"] = max(out["graded_antisymmetry"], l2_norm(diff) / scale)

        x, y, z = rng.standard_normal((3, alg.dim))
        out["jacobi"] = max(out["jacobi"], alg_mod.jacobi_residual(alg, x, y, z))
        out["ad_invariance"] = max(out["ad_invariance"], alg_mod.ad_invariance_residual(alg, x, y, z))

        k = int(rng.integers(0, n))
        a = rand(k)
        lhs = apply_operator(exterior_derivative(a))
        rhs = exterior_derivative(apply_operator(a))
        out["laplacian_commutes_d"] = max(out["laplacian_commutes_d"],
                                          l2_norm(lhs - rhs) / (l2_norm(lhs) + l2_norm(rhs)))

        k = int(rng.integers(0, n + 1))
        a = rand(k)
        ss = hodge_star(hodge_star(a)) - ((-1) ** (k * (n - k))) * a
        out["star_involution"] = max(out["star_involution"], l2_norm(ss) / l2_norm(a))
    return out


def run_identities(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg.get("params", {})
    n, N = int(cfg.get("n", 3)), int(p.get("N", 16))
    cases = int(p.get("cases", 1000))
    tol = float(p.get("tolerance", 1e-12))
    alg = make_algebra(cfg.get("algebra", "so:3"))
    res = identity_suite(n, N, cases, alg, np.random.default_rng([seed, n, N]))
    rows = [(name, cases, val, tol, "PASS" if val <= tol else "FAIL") for name, val in res.items()]
    verdict = PASS if all(v <= tol for v in res.values()) else FAILS
    summary = {"experiment": "identities", "residuals": res, "tolerance": tol, "cases": cases,
               "grid": [n, N], "algebra": alg.label, "verdict": verdict}
    return Outcome(verdict, _csv(["identity", "cases", "max_relative_residual", "tolerance", "status"], rows),
                   summary)


# --------------------------------------------------------------------------
# refinement rates
# --------------------------------------------------------------------------

IMMERSION_QUANTITIES = ("structure", "cartan_lemma", "gauss", "codazzi", "ricci", "koszul")


def _immersion_row(spec, N):
    an = analyze(make_immersion(spec, GridSpec.cube(2, N)))
    gcr = an.gcr()
    return {"structure": an.structure_residual(), "cartan_lemma": an.cartan_lemma(),
            "gauss": gcr.gauss, "codazzi": gcr.codazzi, "ricci": gcr.ricci,
            "koszul": an.koszul_defect()}


def _gauge_rows(name, sizes, alg, seed):
    rng_seed = [seed, 3]
    out = []
    for N in sizes:
        g = GridSpec.cube(3, N)
        rng = np.random.default_rng(rng_seed)
        a = random_band_limited(3, 1, alg, rng, kmax=1).evaluate(g)
        b = random_band_limited(3, 1, alg, rng, kmax=1).evaluate(g)
        if name == "bianchi":
            out.append({"bianchi": bianchi_residual(a)})
        elif name == "leibniz":
            out.append({"leibniz": leibniz_residual(a, b)})
        else:
            c2 = random_band_limited(3, 2, alg, rng, kmax=1).evaluate(g)
            lhs = pairing(covariant_derivative(a, b), c2)
            rhs = pairing(b, covariant_coderivative(a, c2))
            out.append({"adjointness": abs(lhs - rhs)})
    return out


def run_refinement(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg.get("params", {})
    tol = cfg.get("tolerances", {})
    rate_min = float(tol.get("rate_min", 0.9))
    floor = float(tol.get("exact_floor", 1e-12))
    alg = make_algebra(cfg.get("algebra", "so:3"))
    jobs = []
    for fx in p.get("fixtures", []):
        name = fx.get("name", fx.get("generator"))
        sizes = [int(s) for s in fx.get("sizes", p.get("sizes", [16, 32, 64]))]
        jobs.append((name, fx, sizes))

    def job(item):
        name, fx, sizes = item
        kind = fx.get("generator")
        if kind in ("bianchi", "leibniz", "adjointness"):
            rows = _gauge_rows(kind, sizes, alg, seed)
            hs = [1.0 / N for N in sizes]
        else:
            rows = [_immersion_row(fx, N) for N in sizes]
            hs = [1.0 / N for N in sizes]
        return name, sizes, hs, rows

    results = pmap(job, jobs, threads)
    csv_rows, rates, ok = [], {}, True
    for name, sizes, hs, rows in results:
        for q in rows[0]:
            vals = [r[q] for r in rows]
            for N, h, v in zip(sizes, hs, vals):
                csv_rows.append((name, q, N, h, v))
            order = fitted_order(hs, vals, floor)
            passed = order >= rate_min
            rates[f"{name}:{q}"] = {"order": order, "exact": math.isinf(order), "passed": passed}
            ok = ok and passed
    verdict = PASS if ok else FAILS
    summary = {"experiment": "refinement", "rates": rates, "rate_min": rate_min,
               "exact_floor": floor, "verdict": verdict}
    return Outcome(verdict, _csv(["fixture", "quantity", "N", "h", "residual"], csv_rows), summary)


# --------------------------------------------------------------------------
# compensated compactness
# --------------------------------------------------------------------------

def run_divcurl(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg["params"]
    sch = _schedule(cfg)
    famA, famB = _family(p["familyA"], cfg, sch), _family(p["familyB"], cfg, sch)
    bank = _bank(cfg, famA.n, famA.degree + famB.degree, famA.alg, seed)
    rep = div_curl_experiment(famA, famB, bank, _settings(cfg, threads))
    return _report_outcome(rep)


def run_curvature_limit(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg["params"]
    fam = _family(p["family"], cfg, _schedule(cfg))
    bank = _bank(cfg, fam.n, 2, fam.alg, seed)
    rep = curvature_weak_limit_experiment(fam, bank, _settings(cfg, threads))
    return _report_outcome(rep)


def run_ym_relax(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg.get("params", {})
    n, N = int(cfg.get("n", 2)), int(p.get("N", 32))
    alg = make_algebra(cfg.get("algebra", "so:3"))
    s = p.get("seed", {})
    grid = GridSpec.cube(n, N)
    rng = np.random.default_rng(int(s.get("seed", 0)))
    a0 = random_band_limited(n, 1, alg, rng, kmax=int(s.get("kmax", 2)))
    a0 = a0.scaled(float(s.get("scale", 0.1))).evaluate(grid)
    conn, trace = ym_relax(a0, int(p.get("steps", 2000)), float(p.get("grad_tol", 1e-8)),
                           metric=p.get("metric", "h1"), method=p.get("method", "cg"))
    bank = _bank(cfg, n, 1, alg, seed)
    weak = ym_residual_weak(conn, bank.on(grid))
    monotone = all(b <= a for a, b in zip(trace.energies, trace.energies[1:]))
    verdict = PASS if (trace.converged and monotone) else FAILS
    summary = {"experiment": "ym-relax", "converged": trace.converged, "steps": len(trace.steps) - 1,
               "initial_energy": trace.energies[0], "final_energy": trace.energies[-1],
               "final_strong_residual": trace.residuals[-1], "weak_residual": weak,
               "energy_monotone": monotone, "verdict": verdict}
    text = _csv(["step", "energy", "residual_norm", "step_size"], trace.rows())
    return Outcome(verdict, text, summary, snapshots={"connection": conn})


def run_ym_weak(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg.get("params", {})
    n = int(cfg.get("n", 2))
    alg = make_algebra(cfg.get("algebra", "so:3"))
    fam = RelaxedFamily(n, alg.label, _schedule(cfg), p.get("seed", {}), tuple(p.get("terms", [])),
                        int(p.get("seed_steps", 5000)), int(p.get("member_steps", 2000)),
                        float(p.get("grad_tol", 1e-8)))
    bank = _bank(cfg, n, 1, alg, seed)
    rep = ym_weak_continuity_experiment(fam, bank, _settings(cfg, threads), float(p.get("tol_abs", 1e-4)))
    return _report_outcome(rep)


def run_immersion_seq(cfg: dict, seed: int, threads: int) -> Outcome:
    p = cfg["params"]
    fam = ImmersionFamily(p["family"], _schedule(cfg))
    bank = _bank(cfg, 2, 2, make_algebra("abelian:1"), seed)
    rep = immersion_sequence_experiment(fam, float(p.get("p", 2.0)), bank, _settings(cfg, threads),
                                        p.get("fractions"))
    return _report_outcome(rep)


def run_corrugation(cfg: dict, seed: int, threads: int) -> Outcome:
    """Mean-curvature mass of ``δ a sin(2πx/δ)`` graphs and isometry defects of a bounded family."""
    p = cfg.get("params", {})
    sch = _schedule(cfg)
    a = float(p.get("a", 0.1))
    rate_min = float(cfg.get("tolerances", {}).get("rate_min", 0.9))
    deltas = sch.epsilons
    flat = np.eye(2)

    def job(delta):
        g = sch.grid(delta, 2)
        out = {}
        for tag, power in (("corrugation", float(p.get("mass_power", 1.0))),
                           ("bounded", float(p.get("bounded_power", 2.0)))):
            u = make_immersion({"generator": "corrugation", "a": a, "power": power}, g, delta)
            an = analyze(u)
            linf, l2 = isometry_defect(u, flat)
            out[tag] = {"mass": mean_curvature_mass(u, an.frame), "defect_linf": linf, "defect_l2": l2}
        return out

    res = pmap(job, deltas, threads)
    inv = 1.0 / np.asarray(deltas)
    mass_exp = growth_exponent(inv, [r["corrugation"]["mass"] for r in res])
    defect_rate = -growth_exponent(inv, [r["bounded"]["defect_l2"] for r in res])
    bounded_mass_exp = growth_exponent(inv, [r["bounded"]["mass"] for r in res])
    verdict = PASS if (mass_exp >= rate_min and defect_rate >= rate_min) else FAILS
    rows = []
    for d, r in zip(deltas, res):
        for tag in ("corrugation", "bounded"):
            for q, v in r[tag].items():
                rows.append((d, tag, q, v))
    summary = {
        "experiment": "corrugation", "a": a, "deltas": list(deltas),
        "mass_growth_exponent": mass_exp, "bounded_defect_rate": defect_rate,
        "bounded_mass_growth_exponent": bounded_mass_exp,
        "corrugation_defect_l2": [r["corrugation"]["defect_l2"] for r in res],
        "rate_min": rate_min, "verdict": verdict,
    }
    return Outcome(verdict, _csv(["delta", "family", "quantity", "value"], rows), summary)


def run_equi_int(cfg: dict, seed: int, threads: int) -> Outcome:
    """Equi-integrability moduli of an oscillatory and a concentrating family."""
    p = cfg.get("params", {})
    sch = _schedule(cfg)
    pw = float(p.get("p", 2.0))
    fracs = [float(f) for f in p.get("fractions", [0.001, 0.01, 0.1, 0.5, 1.0])]
    eps_list = sch.epsilons
    n = int(cfg.get("n", 2))
    s_star = min(eps_list) ** n
    fracs = sorted(set(fracs + [s_star]))
    osc = _family(p["oscillatory"], cfg, sch)
    conc = _family(p["concentration"], cfg, sch)

    def job(eps):
        return (equi_integrability_modulus(osc.member(eps), pw, fracs),
                equi_integrability_modulus(conc.member(eps), pw, fracs))

    res = pmap(job, eps_list, threads)
    oc = np.array([r[0] for r in res])
    cc = np.array([r[1] for r in res])
    osc_spread = float(np.max(modulus_spread(oc)))
    conc_spread = float(modulus_spread(cc)[fracs.index(s_star)])
    # concentration: mass captured at s = ε^n relative to the member's total mass
    captured = [float(np.interp(e ** n, fracs, c) / c[-1]) for e, c in zip(eps_list, cc)]
    ok = (osc_spread <= float(p.get("uniform_tol", 0.05))
          and conc_spread >= float(p.get("separation_min", 0.5)))
    verdict = PASS if ok else FAILS
    rows = []
    for e, o, c in zip(eps_list, oc, cc):
        for f, vo, vc in zip(fracs, o, c):
            rows.append((e, f, vo, vc))
    summary = {"experiment": "equi-int", "fractions": fracs, "oscillatory_max_spread": osc_spread,
               "concentration_spread_at_scale": conc_spread, "concentration_scale": s_star,
               "concentration_captured_at_eps_n": captured, "p": pw, "verdict": verdict}
    return Outcome(verdict, _csv(["epsilon", "fraction", "oscillatory_rho", "concentration_rho"], rows),
                   summary)


RUNNERS = {
    "identities": run_identities,
    "refinement": run_refinement,
    "divcurl": run_divcurl,
    "curvature-limit": run_curvature_limit,
    "ym-relax": run_ym_relax,
    "ym-weak": run_ym_weak,
    "immersion-seq": run_immersion_seq,
    "corrugation": run_corrugation,
    "equi-int": run_equi_int,
}


def run_experiment(cfg: dict, seed: int | None = None, threads: int = 1) -> Outcome:
    exp = cfg.get("experiment")
    if exp not in RUNNERS:
        raise ConfigurationError(f"unknown experiment {exp!r}")
    if seed is None:
        seed = int(cfg.get("seed", DEFAULT_SEED))
    return RUNNERS[exp](cfg, seed, max(1, int(threads)))
