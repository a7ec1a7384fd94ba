import json

import numpy as np
import pytest

from cartanlab.algebra import make_algebra
from cartanlab.cclab import (
    CONVERGES,
    FAILS,
    EpsilonSchedule,
    ExperimentSettings,
    SequenceFamily,
    bump,
    curvature_functional,
    curvature_weak_limit_experiment,
    div_curl_experiment,
    equi_integrability_modulus,
    gen_concentration,
    gen_oscillatory,
    growth_exponent,
    lowpass,
    modulus_spread,
    pmap,
    richardson_fit,
)
from cartanlab.errors import ArgumentError, ConfigurationError
from cartanlab.forms import (
    SCALAR,
    DifferentialForm,
    GridSpec,
    TestFormBank,
    l2_norm,
    lp_norm,
    pairing,
    random_band_limited,
)
from cartanlab.gauge import curvature

SO3 = make_algebra("so:3")
SMALL = EpsilonSchedule(0.25, 0.5, 3, 16)


def osc(axis, comp, vec):
    return {"axis": axis, "amplitude": {comp: vec}}


def test_schedule_policy():
    s = EpsilonSchedule(0.25, 0.5, 4, 16)
    assert s.epsilons == (0.25, 0.125, 0.0625, 0.03125)
    assert [s.grid_size(e) for e in s.epsilons] == [64, 128, 256, 512]
    assert EpsilonSchedule(values=(1 / 3,), c=9).grid_size(1 / 3) == 28
    for bad in ({"c": 4}, {"ratio": 1.5}, {"values": (0.1, 0.2)}, {"values": ()}):
        with pytest.raises(ConfigurationError):
            EpsilonSchedule(**bad)


def test_oscillatory_amplitude_zero_and_norm():
    g = GridSpec.cube(2, 64)
    rng = np.random.default_rng(0)
    base = random_band_limited(2, 1, SO3, rng).evaluate(g)
    zero = DifferentialForm.zeros(g, 1, SO3)
    assert np.array_equal(gen_oscillatory(base, zero, 0, 0.125).data, base.data)
    amp = DifferentialForm.constant(g, 1, SO3, [[1, 0, 0], [0, 0, 0]])
    for eps in (0.5, 0.25, 0.125):
        f = gen_oscillatory(zero, amp, 0, eps)
        assert abs(l2_norm(f) - np.sqrt(0.5)) < 1e-13
    with pytest.raises(ConfigurationError):
        gen_oscillatory(zero, amp, 0, 0.3)      # does not divide the period
    with pytest.raises(ConfigurationError):
        gen_oscillatory(zero, amp, 0, 1 / 16)   # 4 points per period
    with pytest.raises(ArgumentError):
        gen_oscillatory(zero, amp, 2, 0.25)


def test_oscillatory_pairing_converges_to_base():
    rng = np.random.default_rng(1)
    phi_bl = random_band_limited(2, 1, SO3, rng, kmax=2)
    base_bl = random_band_limited(2, 1, SO3, rng, kmax=2)
    for eps in (0.25, 0.125):
        g = GridSpec.cube(2, int(16 / eps))
        base, phi = base_bl.evaluate(g), phi_bl.evaluate(g)
        amp = DifferentialForm.constant(g, 1, SO3, [[1, 2, 3], [0, 1, 0]])
        f = gen_oscillatory(base, amp, 1, eps)
        # band-limited φ with kmax=2 < 1/ε is orthogonal to the oscillation exactly
        assert abs(pairing(f, phi) - pairing(base, phi)) < 1e-12


def test_bump_and_concentration_scaling():
    assert bump(np.array([0.0]))[0] == 1.0 and bump(np.array([1.0, 2.0])).max() == 0.0
    p = 2.0
    norms, norms_q = [], []
    epss = (0.5, 0.25, 0.125, 0.0625)
    for eps in epss:
        g = GridSpec.cube(2, int(32 / eps))
        f = gen_concentration(g, 1, SO3, [[1, 0, 0], [0, 0, 0]], eps, p)
        norms.append(lp_norm(f, p))
        norms_q.append(lp_norm(f, 1.0))
    assert max(norms) / min(norms) - 1 <= 0.02
    # q = 1 < p = 2: decays like ε^{n(1/q - 1/p)} = ε^1
    assert abs(growth_exponent(epss, norms_q) - 2 * (1 - 1 / p)) < 0.02
    with pytest.raises(ConfigurationError):
        gen_concentration(GridSpec.cube(2, 16), 1, SO3, np.zeros((2, 3)), 0.125, p)
    one = gen_concentration(GridSpec.cube(2, 64), 0, SCALAR, [[1.0]], 1.0, 2.0, radius=0.25)
    r = np.hypot(*(c - 0.5 for c in GridSpec.cube(2, 64).coords()))
    assert np.allclose(one.data[..., 0, 0], bump(r / 0.25))


def test_richardson_and_growth():
    eps = np.array([0.5, 0.25, 0.125, 0.0625])
    L, rms = richardson_fit(eps, 3.0 + 2.0 * eps)
    assert abs(L - 3.0) < 1e-12 and rms < 1e-12
    Lv, _ = richardson_fit(eps, np.stack([1 + eps, -2 + 0 * eps], axis=1))
    assert np.allclose(Lv, [1, -2])
    assert abs(growth_exponent([1, 2, 4], [3, 6, 12]) - 1) < 1e-12
    assert growth_exponent([1, 2], [0, 0]) == 0.0


def test_abelian_divcurl_trivial():
    fa = SequenceFamily("oscillatory", 2, 1, "abelian:2", SMALL, {"terms": [osc(0, "1", [1, 0])]})
    fb = SequenceFamily("oscillatory", 2, 1, "abelian:2", SMALL, {"terms": [osc(0, "2", [0, 1])]})
    rep = div_curl_experiment(fa, fb, TestFormBank.build(2, 2, make_algebra("abelian:2"), 4))
    assert rep.verdict == CONVERGES and not np.any(rep.pairings)


def test_constant_family_zero_gap():
    f = SequenceFamily("constant", 2, 1, "so:3", SMALL, {"base": {"seed": 3}})
    rep = div_curl_experiment(f, f, TestFormBank.build(2, 2, SO3, 4))
    assert rep.max_gap <= 1e-12 * rep.scale + 1e-15 and rep.verdict == CONVERGES


def test_divcurl_witness_and_counterexample():
    bank = TestFormBank.build(2, 2, SO3, 8)
    fa = SequenceFamily("oscillatory", 2, 1, "so:3", SMALL, {"terms": [osc(0, "1", [1, 0, 0])]})
    fb = SequenceFamily("oscillatory", 2, 1, "so:3", SMALL, {"terms": [osc(1, "2", [0, 1, 0])]})
    fc = SequenceFamily("oscillatory", 2, 1, "so:3", SMALL, {"terms": [osc(0, "2", [0, 1, 0])]})
    ok = div_curl_experiment(fa, fb, bank)
    assert ok.verdict == CONVERGES and ok.max_gap <= 0.05 * ok.scale
    bad = div_curl_experiment(fa, fc, bank)
    assert bad.verdict == FAILS and not bad.hypotheses["surrogate_decaying"]
    # sin² ⇀ ½: the limit pairing is ½ ∫ <[e1,e2], φ_12>
    g = GridSpec.cube(2, 64)
    from cartanlab.algebra import bracket
    e12 = bracket(SO3, np.eye(3)[0], np.eye(3)[1])
    oracle = [0.5 * float(np.sum(phi.data[..., 0, :] @ e12) * g.cell_volume) for phi in bank.on(g)]
    assert np.allclose(bad.fitted_limit, oracle, rtol=0, atol=0.05 * np.abs(oracle).max())


def test_curvature_limit_and_functional():
    rng = np.random.default_rng(3)
    g = GridSpec.cube(2, 32)
    a = random_band_limited(2, 1, SO3, rng).scaled(0.5).evaluate(g)
    phi = random_band_limited(2, 2, SO3, rng).evaluate(g)
    assert abs(curvature_functional(a, phi) - pairing(curvature(a), phi)) < 1e-12
    fam = SequenceFamily("oscillatory", 2, 1, "so:3", SMALL,
                         {"base": {"seed": 3, "scale": 0.5},
                          "terms": [osc(0, "1", [1, 0, 0]), osc(1, "2", [0, 1, 0])]})
    rep = curvature_weak_limit_experiment(fam, TestFormBank.build(2, 2, SO3, 8))
    assert rep.verdict == CONVERGES and rep.hypotheses["lp_bounded"]
    l1 = np.array(rep.lp_bounds)
    assert l1.max() / l1.min() < 1.05


def test_report_csv_and_json(tmp_path):
    fam = SequenceFamily("oscillatory", 2, 1, "so:3", SMALL, {"terms": [osc(0, "1", [1, 0, 0])]})
    rep = div_curl_experiment(fam, fam, TestFormBank.build(2, 2, SO3, 2))
    text = rep.csv_text()
    assert text.splitlines()[0] == "epsilon,test_form_id,pairing,surrogate_norm,lp_bound"
    assert len(text.splitlines()) == 1 + 3 * 2
    c, j = rep.write(tmp_path, "r", {"extra_key": 1})
    doc = json.loads(open(j).read())
    for key in ("fitted_limit", "target", "gap", "verdict", "extra_key"):
        assert key in doc


def test_lowpass():
    g = GridSpec.cube(2, 32)
    x, y = g.coords()
    a = DifferentialForm.from_components(g, 1, SCALAR, {(0,): np.sin(2 * np.pi * x) + np.sin(2 * np.pi * 8 * y)})
    lp = lowpass(a, 4)
    assert np.allclose(lp.data[..., 0, 0], np.sin(2 * np.pi * x), atol=1e-12)


def test_equi_integrability_oracles():
    g = GridSpec.cube(2, 32)
    ones = DifferentialForm.constant(g, 0, SCALAR, [[1.0]])
    fr = [1 / 1024, 0.1, 0.5, 1.0]
    rho = equi_integrability_modulus(ones, 2, fr)
    assert np.allclose(rho, [np.floor(s * 1024 + 1e-9) / 1024 for s in fr])
    spike = np.zeros(g.sizes)
    spike[3, 4] = 5.0
    rho = equi_integrability_modulus(spike, 1, fr, g.cell_volume)
    assert np.allclose(rho, 5.0 * g.cell_volume)
    with pytest.raises(ArgumentError):
        equi_integrability_modulus(spike, 1, fr)
    with pytest.raises(ArgumentError):
        equi_integrability_modulus(ones, 2, [0.0])
    assert np.allclose(modulus_spread([[1, 2], [0.5, 2]]), [0.5, 0.0])


def test_equi_integrability_families_separate():
    sch = EpsilonSchedule(0.25, 0.5, 4, 16)
    fr = [0.001, 0.01, 0.1, 0.5, 1.0]
    osc_f = SequenceFamily("oscillatory", 2, 1, "abelian:1", sch, {"terms": [osc(0, "1", [1.0])]})
    con_f = SequenceFamily("concentration", 2, 1, "abelian:1", sch, {"coefficient": {"1": [1.0]}, "p": 2})
    oc = [equi_integrability_modulus(osc_f.member(e), 2, fr) for e in sch.epsilons]
    assert modulus_spread(oc).max() <= 0.05
    s_star = min(sch.epsilons) ** 2
    cc = [equi_integrability_modulus(con_f.member(e), 2, [s_star, 1.0]) for e in sch.epsilons]
    assert modulus_spread(np.array(cc))[0] >= 0.5
    for e in sch.epsilons:
        c = equi_integrability_modulus(con_f.member(e), 2, [e ** 2, 1.0])
        assert c[0] >= 0.98 * c[1]


def test_pmap_order_and_threads():
    assert pmap(lambda v: v * v, range(10), 4) == [v * v for v in range(10)]
    assert pmap(lambda v: v, [], 3) == []


def test_family_errors():
    with pytest.raises(ConfigurationError):
        SequenceFamily("spiral", 2, 1, "so:3")
    with pytest.raises(ConfigurationError):
        SequenceFamily("oscillatory", 2, 1, "so:3", SMALL, {"terms": [osc(0, "3", [1, 0, 0])]}).member(0.25)
    with pytest.raises(ConfigurationError):
        SequenceFamily("oscillatory", 2, 1, "so:3", SMALL, {"terms": [osc(0, "1", [1, 0])]}).member(0.25)
    s = ExperimentSettings()
    assert s.tol_fraction == 0.05 and s.fit_points == 4
