"""Heun integration, ensembles and statistical checks against closed-form laws."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest
import sympy as sp
from scipy import stats as sstats

from sdskit import catalog
from sdskit.geometry import SDS, Chart, Coordinate, VectorField
from sdskit.reduction import QuotientMap
from sdskit.sim import (
    InsufficientSamples,
    NonStationary,
    NotHamiltonian,
    RngConfig,
    TruncatedEnsemble,
    UnboundFunction,
    bias_order,
    check_hamiltonian,
    default_seed,
    empirical_generator,
    ensemble_stats,
    fokker_planck_density,
    histogram_mode,
    integrate,
    ks_compare,
    ks_critical,
    martingale_test,
    scheme_expectation,
    simulate,
    stationary_density_1d,
    symplectic_convergence,
    tensor_preservation,
    unwrapped_angle,
)
from sdskit.sim import io as simio

LINE = Chart.euclidean(1)
(LX,) = LINE.symbols


def line_sds(drift, *noise) -> SDS:
    return SDS(LINE, VectorField(LINE, (drift,)), tuple(VectorField(LINE, (c,)) for c in noise))


def reduced_oscillator(c=1) -> SDS:
    """Radius of the damped oscillator with f = c: (1/(2r) - c r) d/dr + d/dr o dB."""
    R = catalog.radial_chart()
    (r,) = R.symbols
    return SDS(R, VectorField(R, (1 / (2 * r) - c * r,)), (VectorField(R, (1,)),))


# --- integrate -----------------------------------------------------------------


def test_constant_field_is_exact():
    tr = integrate(line_sds(1), [0.0], 1e-3, 1.0)
    assert len(tr) == 1001 and tr.states.shape == (1001, 1)
    assert abs(tr.states[-1, 0] - 1.0) < 1e-12
    assert np.allclose(tr.states[:, 0], tr.times, atol=1e-12)


def test_brownian_variance_at_one():
    ens = simulate(catalog.brownian(1), [0.0], 1e-3, 1.0, 10_000, RngConfig(1))
    x = ens.at(1.0)[:, 0]
    var = x.var(ddof=1)
    se = np.std((x - x.mean()) ** 2, ddof=1) / math.sqrt(x.size)
    assert abs(var - 1.0) <= 3 * se
    assert abs(x.mean()) <= 3 / math.sqrt(x.size)


def test_rotation_returns_after_one_period():
    X = SDS(catalog.plane(), catalog.rotation_field())
    tr = integrate(X, {"x": 1.0, "y": 0.0}, 1e-4, 2 * math.pi)
    assert len(tr) == int(2 * math.pi / 1e-4) + 2  # shorter last step lands exactly on T
    assert tr.times[-1] == pytest.approx(2 * math.pi, abs=1e-12)
    assert np.linalg.norm(tr.states[-1] - [1.0, 0.0]) < 1e-4


def test_heun_matches_stratonovich_not_ito():
    # x o dB with x0 = 1 has E x_t = exp(t/2) (Stratonovich); Ito would give 1
    ens = simulate(line_sds(0, LX), [1.0], 1e-3, 1.0, 20_000, RngConfig(3))
    x = ens.at(1.0)[:, 0]
    assert abs(x.mean() - math.exp(0.5)) <= 3 * x.std(ddof=1) / math.sqrt(x.size) + 2e-3


def test_nonpositive_step_rejected():
    with pytest.raises(ValueError):
        integrate(line_sds(1), [0.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        simulate(line_sds(1), [0.0], -1e-3, 1.0, 10)


def test_truncation_at_domain_exit():
    R = catalog.radial_chart()
    X = SDS(R, VectorField(R, (-1,)))
    tr = integrate(X, [0.5], 1e-2, 1.0)
    assert tr.truncated
    assert tr.exit_index == 50 or tr.exit_index == 51
    assert np.all(np.isnan(tr.states[tr.exit_index :]))
    assert np.all(tr.states[: tr.exit_index, 0] > 0)
    ens = simulate(X, [0.5], 1e-2, 1.0, 4)
    assert ens.truncated.all() and np.all(np.isnan(ens.at(1.0)))
    assert ensemble_stats(simulate(X, [2.0], 1e-2, 1.0, 4)).truncated == 0


def test_periodic_coordinates_wrap():
    C = Chart("S", (Coordinate("theta", period=1),))
    X = SDS(C, VectorField(C, (1,)))
    tr = integrate(X, [0.25], 1e-2, 2.5)
    assert tr.states[-1, 0] == pytest.approx(0.75, abs=1e-9)
    assert tr.unwrapped[-1, 0] == pytest.approx(2.75, abs=1e-9)
    ens = simulate(X, [0.25], 1e-2, 2.5, 3)
    assert ens.at(2.5)[0, 0] == pytest.approx(2.75, abs=1e-9)
    assert ens.wrapped()[0, -1, 0] == pytest.approx(0.75, abs=1e-9)


def test_unbound_function_reported():
    with pytest.raises(UnboundFunction):
        simulate(catalog.damped_oscillator(), [1.0, 0.0], 1e-2, 0.1, 2)


# --- determinism -------------------------------------------------------------------


def test_same_seed_bit_identical():
    X = catalog.damped_oscillator(1)
    a = simulate(X, [1.0, 0.0], 1e-2, 1.0, 50, RngConfig(7), sample_times=[0.5, 1.0])
    b = simulate(X, [1.0, 0.0], 1e-2, 1.0, 50, RngConfig(7), sample_times=[0.5, 1.0])
    assert np.array_equal(a.states, b.states)
    assert ensemble_stats(a).to_dict() == ensemble_stats(b).to_dict()
    c = simulate(X, [1.0, 0.0], 1e-2, 1.0, 50, RngConfig(8), sample_times=[0.5, 1.0])
    assert not np.array_equal(a.states, c.states)


def test_independent_of_batching_and_order():
    X = catalog.damped_oscillator(1)
    full = simulate(X, [1.0, 0.0], 1e-2, 1.0, 40, RngConfig(5))
    small = simulate(X, [1.0, 0.0], 1e-2, 1.0, 40, RngConfig(5), batch=7)
    assert np.array_equal(full.states, small.states)
    # the second half on its own reproduces paths 20..39
    tail = simulate(X, [1.0, 0.0], 1e-2, 1.0, 20, RngConfig(5), first_stream=20)
    assert np.array_equal(full.states[20:], tail.states)
    # a single path integrated alone is path i of the ensemble
    tr = integrate(X, [1.0, 0.0], 1e-2, 1.0, RngConfig(5), stream=13)
    assert np.array_equal(tr.unwrapped[-1], full.states[13, -1])


def test_refined_increments_share_the_brownian_path():
    B = catalog.brownian(1)
    coarse = simulate(B, [0.0], 4e-3, 1.0, 16, RngConfig(2), refine=4)
    fine = simulate(B, [0.0], 1e-3, 1.0, 16, RngConfig(2))
    assert np.allclose(coarse.at(1.0), fine.at(1.0), atol=1e-12)
    assert np.allclose(coarse.brownian, fine.brownian, atol=1e-12)


def test_seed_environment(monkeypatch):
    monkeypatch.setenv("SDS_SEED", "42")
    assert default_seed() == 42
    monkeypatch.setenv("SDS_SEED", "")
    assert default_seed(3) == 3
    monkeypatch.setenv("SDS_SEED", "x")
    with pytest.raises(ValueError):
        default_seed()
    with pytest.raises(ValueError):
        RngConfig(-1)


def test_ensemble_stats_invariants():
    ens = simulate(catalog.brownian(2), [0.0, 0.0], 1e-2, 1.0, 400, RngConfig(0))
    st = ensemble_stats(ens, bins=20)
    for name, obs in st.observables.items():
        edges, counts = st.histograms[name]
        assert counts.sum() == st.n - st.truncated == 400
        v = st.samples[name]
        assert obs.stderr == pytest.approx(v.std(ddof=1) / math.sqrt(v.size))


# --- empirical generator -------------------------------------------------------------


def test_generator_brownian2():
    B = catalog.brownian(2)
    x, y = B.chart.symbols
    for k, pt in enumerate([{"x": 0.3, "y": -0.2}, {"x": -1.5, "y": 2.0}]):
        est = empirical_generator(B, x**2 + y**2, pt, 1e-3, 2000, RngConfig(k))
        assert est.symbolic == 2.0
        assert est.passed, est.to_dict()


def test_generator_bessel3():
    X = catalog.bessel(3)
    (r,) = X.chart.symbols
    est = empirical_generator(X, r, {"r": 1.0}, 1e-3, 2000, RngConfig(0), bias_constant=1.0)
    assert est.symbolic == pytest.approx(1.0)
    assert est.passed, est.to_dict()


def test_generator_constant_is_zero():
    est = empirical_generator(catalog.bessel(3), sp.Integer(3), {"r": 1.0}, 1e-3, 200, RngConfig(0))
    assert est.estimate == 0.0 and est.symbolic == 0.0


def test_generator_preconditions():
    B = catalog.brownian(1)
    with pytest.raises(InsufficientSamples):
        empirical_generator(B, LX**2, {"x": 0.0}, 1e-3, 99)
    with pytest.raises(ValueError):
        empirical_generator(B, LX**2, {"x": 0.0}, 0.0, 200)
    R = catalog.radial_chart()
    X = SDS(R, VectorField(R, (-100,)))
    with pytest.raises(TruncatedEnsemble):
        empirical_generator(X, R.symbols[0], {"r": 0.05}, 1e-3, 200)


def test_bias_order_is_one():
    B = catalog.brownian(1)
    (x,) = B.chart.symbols
    # Heun bias of (E f(x_t) - f(x))/t for f = x^4 is exactly 3t
    ts = [4e-3, 2e-3, 1e-3]
    bias, order = bias_order(B, x**4, {"x": 0.5}, ts)
    assert np.allclose(bias, 3 * np.array(ts), rtol=1e-9)
    assert all(a / b >= 1.8 for a, b in zip(bias[:-1], bias[1:]))
    assert order == pytest.approx(1.0, abs=0.05)
    # for f = x^2 the one-step estimator has no bias at all
    assert scheme_expectation(B, x**2, {"x": 0.5}, 1e-3) == pytest.approx(1.0, abs=1e-10)


# --- stationary densities -------------------------------------------------------------


def test_fp_oracle_ou():
    X = line_sds(-LX, 1)
    fp = fokker_planck_density(X, -math.inf, math.inf)
    for v in (-1.2, 0.0, 0.4, 2.0):
        assert fp(v) == pytest.approx(sstats.norm.pdf(v, scale=math.sqrt(0.5)), rel=1e-6)
    assert 0.999 <= fp.mass() <= 1.001


def test_fp_oracle_reduced_oscillator():
    for c in (1, 2):
        fp = fokker_planck_density(reduced_oscillator(c), 0.0, 6.0)
        for r in (0.2, 0.7, 1.5):
            assert fp(r) == pytest.approx(2 * c * r * math.exp(-c * r * r), rel=1e-6)
        assert 0.999 <= fp.mass() <= 1.001
        assert fp.mean() == pytest.approx(math.sqrt(math.pi / (4 * c)), rel=1e-6)


def test_fp_oracle_rejects_bad_input():
    with pytest.raises(ValueError):
        fokker_planck_density(catalog.brownian(2), 0.0, 1.0)
    with pytest.raises(ValueError):
        fokker_planck_density(line_sds(-LX, LX), -1.0, 1.0)


def test_ou_empirical_density():
    X = line_sds(-LX, 1)
    rep = stationary_density_1d(X, -3.0, 3.0, [0.0], bins=30, burn_in=3.0, T=13.0, n=4000, dt=1e-2, sample_every=0.5, rng=RngConfig(0))
    assert rep.sup_distance < 0.03
    assert abs(rep.mean) < 3 * rep.mean_stderr + 1e-3
    assert np.max(np.abs(rep.z_scores)) < 5


def test_nonstationary_detected():
    # pure Brownian motion from 0 spreads out: |x| grows between the halves
    X = line_sds(0, 1)
    R = Chart.euclidean(1)
    phi = QuotientMap(LINE, R, (LX**2,))
    with pytest.raises(NonStationary):
        stationary_density_1d(X, 0.0, 50.0, [0.0], burn_in=1.0, T=20.0, n=2000, dt=2e-2, rng=RngConfig(0), lift=(X, phi))


def test_histogram_mode_of_known_peak():
    rng = np.random.default_rng(0)
    v = rng.normal(0.7, 0.2, 200_000)
    assert histogram_mode(v, np.linspace(0, 1.5, 61)) == pytest.approx(0.7, abs=0.02)


# --- martingale ---------------------------------------------------------------------


def test_pure_rotation_gives_zero():
    P = catalog.polar_chart()
    X = SDS(P, VectorField.basis(P, "theta"))
    ens = simulate(X, {"theta": 0.0, "r": 1.0}, 1e-2, 10.0, 40, sample_times=np.arange(0, 10.0 + 1e-9, 0.1))
    rep = martingale_test(ens.times, ens.coordinate("theta"))
    assert rep.z_scores == [0.0] * 10 and rep.passed
    assert rep.frequency == pytest.approx(1.0, abs=1e-12)


def test_damped_oscillator_angle_is_martingale():
    X = catalog.damped_oscillator(1)
    times = np.arange(0, 20.0 + 1e-9, 1e-2)
    ens = simulate(X, [1.0, 0.0], 1e-2, 20.0, 1000, RngConfig(4), sample_times=times)
    rep = martingale_test(ens.times, unwrapped_angle(ens.states))
    assert rep.passed, rep.z_scores
    assert abs(rep.frequency - 1.0) < 3 * rep.frequency_stderr + 0.01


def test_biased_control_fails():
    X = catalog.damped_oscillator(1)
    biased = SDS(X.chart, X.drift + sp.Rational(1, 10) * catalog.rotation_field(X.chart), X.noise)
    times = np.arange(0, 50.0 + 1e-9, 1e-2)
    ens = simulate(biased, [1.0, 0.0], 1e-2, 50.0, 2000, RngConfig(0), sample_times=times)
    rep = martingale_test(ens.times, unwrapped_angle(ens.states))
    assert not rep.passed
    assert max(rep.z_scores) > 3
    assert rep.frequency == pytest.approx(1.1, abs=0.03)


def test_martingale_needs_samples():
    t = np.linspace(0, 1, 11)
    with pytest.raises(InsufficientSamples):
        martingale_test(t, np.tile(t, (29, 1)))
    with pytest.raises(InsufficientSamples):
        martingale_test(t[:5], np.tile(t[:5], (40, 1)))


# --- Kolmogorov-Smirnov ---------------------------------------------------------------


def test_ks_identical_samples():
    v = simulate(catalog.bessel(3), [1.0], 1e-2, 1.0, 500, RngConfig(1)).at(1.0)[:, 0]
    rep = ks_compare(v, v.copy())
    assert rep.statistic == 0.0 and rep.passed


def test_ks_critical_value():
    assert ks_critical(10_000, 10_000) == pytest.approx(1.628 * math.sqrt(2e-4))
    with pytest.raises(InsufficientSamples):
        ks_compare([], [1.0])


def test_ks_bessel3_vs_bessel4_fails():
    a = simulate(catalog.bessel(3), [1.0], 2e-3, 1.0, 4000, RngConfig(0)).at(1.0)[:, 0]
    b = simulate(catalog.bessel(4), [1.0], 2e-3, 1.0, 4000, RngConfig(0).derive(1)).at(1.0)[:, 0]
    assert not ks_compare(a, b).passed


def test_ks_radius_of_brownian_matches_chi_law():
    # |W_3(1)| from 0 follows the chi law with 3 degrees of freedom
    r = np.linalg.norm(simulate(catalog.brownian(3), [0.0, 0.0, 0.0], 1e-2, 1.0, 4000, RngConfig(6)).at(1.0), axis=1)
    ref = sstats.chi(3).rvs(size=4000, random_state=np.random.default_rng(0))
    assert ks_compare(r, ref).passed


# --- tensor preservation ----------------------------------------------------------------


def test_deterministic_harmonic_preserves_omega():
    X, omega = catalog.harmonic_hamiltonian_sds(1)
    rep = tensor_preservation(SDS(X.chart, X.drift), omega, [1.0, 0.0], 1e-4, 10.0, record_every=100)
    assert rep.max_deviation < 1e-8


def test_stochastic_convergence_order():
    X, omega = catalog.harmonic_hamiltonian_sds(1)
    x1, _ = X.chart.symbols
    # Hamiltonian noise field of g = x1^2/2
    noisy = SDS(X.chart, X.drift, (VectorField(X.chart, (0, -x1)),))
    rep = symplectic_convergence(noisy, omega, [1.0, 0.0], 1.0, RngConfig(0), paths=32)
    assert rep.passed and rep.order >= 0.9
    assert all(a > b for a, b in zip(rep.deviations[:-1], rep.deviations[1:]))


def test_damping_is_not_hamiltonian():
    X = catalog.damped_oscillator(1)
    with pytest.raises(NotHamiltonian) as exc:
        tensor_preservation(X, sp.Matrix([[0, 1], [-1, 0]]), [1.0, 0.0], 1e-2, 1.0)
    assert exc.value.field == "X0" and not exc.value.verdict.is_zero
    check_hamiltonian(catalog.harmonic_hamiltonian_sds(1)[0], sp.Matrix([[0, 1], [-1, 0]]))


def test_omega_validation():
    X, _ = catalog.harmonic_hamiltonian_sds(1)
    with pytest.raises(ValueError):
        tensor_preservation(X, sp.Matrix([[0, 1], [1, 0]]), [1.0, 0.0], 1e-2, 0.1)
    with pytest.raises(ValueError):
        tensor_preservation(X, sp.zeros(2, 2), [1.0, 0.0], 1e-2, 0.1)


# --- output formats ---------------------------------------------------------------------


def test_json_and_csv_outputs():
    block = {"schema": simio.SCHEMA, "value": np.float64(0.5), "arr": np.arange(3), "nested": {"z": np.int64(2)}}
    text = simio.to_json(block)
    assert json.loads(text) == {"schema": "sdskit.sim/1", "value": 0.5, "arr": [0, 1, 2], "nested": {"z": 2}}
    assert simio.to_json({"bad": math.inf}).count('"inf"') == 1
    assert text == simio.to_json(dict(block))
    rows = simio.time_rows(np.array([0.0, 0.5]), {"x": np.array([1.0, 2.0])})
    csv = simio.to_csv(rows)
    assert csv.splitlines()[0] == "t,x"
    assert len(csv.splitlines()) == 3
