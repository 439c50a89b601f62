import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siapm import unitary as U
from siapm.crystal import TrapContext
from siapm.experiments import (
    CLIFFORD_GATES, DatasetError, NoiseModel, RBDataset, RBRow, RBSequence, RBStep,
    ThermalMode, build_library, compile_one_ion, compile_two_ion, draw_codes, gen_sequence,
    ideal_outcome, ideal_step_unitary, run_ramsey, run_rb, simulate_rb_codes, simulate_sequence,
)
from siapm.fit import FitProblem, least_squares
from siapm.motion import sample_fock
from siapm.rbmodel import chi_exact, clifford_step_factor, laguerre_table

CTX = TrapContext(2 * math.pi * 2.05e6)


def _state_after(seq):
    psi = np.array([1.0, 0.0], dtype=complex)
    for step in seq.steps:
        psi = ideal_step_unitary(step) @ psi
    return psi


# -- sequence generation


def test_gen_sequence_is_deterministic():
    a, b = gen_sequence(40, 123), gen_sequence(40, 123)
    assert a == b
    assert gen_sequence(40, 124) != a
    assert len(a) == 40


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_predicted_outcome_is_ideal(length, seed):
    seq = gen_sequence(length, seed)
    assert ideal_outcome(seq) == seq.predicted_outcome
    psi = _state_after(seq)
    assert abs(psi[seq.predicted_outcome]) ** 2 == pytest.approx(1.0, abs=1e-12)


def test_average_clifford_pulse_count():
    _, cliff, _ = draw_codes(np.random.default_rng(5), 1000, 100)
    counts = np.vectorize(lambda c: len(CLIFFORD_GATES[c]))(cliff)
    assert counts.size == 10**5
    assert abs(counts.mean() - 1.5) < 0.01


def test_pauli_and_clifford_uniform():
    pauli, cliff, _ = draw_codes(np.random.default_rng(6), 2000, 50)
    freq_p = np.bincount(pauli[:, :-1].ravel(), minlength=4) / pauli[:, :-1].size
    freq_c = np.bincount(cliff[:, :-1].ravel(), minlength=6) / cliff[:, :-1].size
    assert np.max(np.abs(freq_p - 0.25)) < 0.01
    assert np.max(np.abs(freq_c - 1 / 6)) < 0.01


def test_step_validation():
    with pytest.raises(ValueError):
        RBStep("W", 0)
    with pytest.raises(ValueError):
        RBStep("X", 6)
    with pytest.raises(ValueError):
        gen_sequence(0, 1)
    assert RBStep("Y", 5).clifford_label == "XYX"


# -- compilation


def test_compiled_counts_per_step():
    n = 10**4
    a, b = gen_sequence(n, 1), gen_sequence(n, 2)
    gs = compile_two_ion(a, b)
    assert abs(gs.n_pulses / n - 8) < 0.1
    assert abs(gs.n_modulations / n - 8) < 0.1


def test_identity_steps_compile_to_nothing():
    seq = RBSequence((RBStep("I", 0),) * 3, 0)
    gs = compile_two_ion(seq, seq)
    assert gs.n_pulses == 0 and gs.n_modulations == 0


def test_z_only_compiles_to_frame_shifts():
    seq = RBSequence((RBStep("Z", 0),), 0)
    gs = compile_two_ion(seq, RBSequence((RBStep("I", 0),), 0))
    assert [type(e).__name__ for e in gs] == ["FrameShift"]


def test_length_mismatch():
    with pytest.raises(U.ShapeError):
        compile_two_ion(gen_sequence(3, 0), gen_sequence(4, 0))


@pytest.mark.parametrize("ctx", [None, CTX])
def test_compiled_unitaries_match_ideal(ctx):
    a, b = gen_sequence(25, 10), gen_sequence(25, 11)
    ua, ub = U.apply_sequence(compile_two_ion(a, b, ctx))
    ideal = []
    for seq in (a, b):
        u = U.I2.copy()
        for step in seq.steps:
            u = ideal_step_unitary(step) @ u
        ideal.append(u)
    assert U.unitary_distance(ua, ideal[0]) < 1e-10
    assert U.unitary_distance(ub, ideal[1]) < 1e-10


def test_compile_one_ion_uses_single_pulses():
    seq = RBSequence((RBStep("X", 3),), 0)
    gs = compile_one_ion(seq)
    assert [round(p.theta, 12) for p in gs] == [round(math.pi, 12), round(math.pi / 2, 12), round(math.pi / 2, 12)]
    assert gs.n_modulations == 0


# -- noise model and single-sequence simulation


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(spam_error=0.6)
    with pytest.raises(ValueError):
        NoiseModel(dephasing_per_us=-1.0)
    with pytest.raises(ValueError):
        NoiseModel(fock_granularity="shot")
    with pytest.raises(ValueError):
        ThermalMode((0.05,), n0=-1.0)


def _pi_pulse():
    return U.GateSequence(1, [U.GlobalPulse(math.pi, 0.0, (1.0,), 1)])


def test_noiseless_sequence_succeeds():
    gs = compile_two_ion(gen_sequence(20, 3), gen_sequence(20, 4), CTX)
    res = simulate_sequence(gs, NoiseModel.ideal(), 50, 0)
    assert np.all(res.success_exact == 1.0)
    assert np.all(res.success_empirical == 1.0)


def test_fixed_fock_pi_pulse():
    noise = NoiseModel(modes=(ThermalMode((0.1,), fixed_fock=1),), d_state_decay_rate=0.0)
    res = simulate_sequence(_pi_pulse(), noise, 10, 0)
    assert res.success_exact[0] == pytest.approx(0.5 * (1 + math.cos(0.01 * math.pi)), abs=1e-14)


def test_thermal_pi_pulse_matches_chi():
    noise = NoiseModel(modes=(ThermalMode((0.048,), n0=4.0),), d_state_decay_rate=0.0)
    shots = 10**5
    res = simulate_sequence(_pi_pulse(), noise, shots, 7)
    p = 1 - res.p_bright[:, 0]
    oracle = 0.5 * (1 + chi_exact(math.pi, 4.0, 0.048))
    assert abs(p.mean() - oracle) < 3 * p.std() / math.sqrt(shots)


def test_clifford_factor_against_reduced_angle_average():
    # average over the six Cliffords of the shrink of the ideal final state
    rng = np.random.default_rng(8)
    nbar, eta, n_samples = 4.0, 0.048, 10**5
    fock = sample_fock(nbar, rng, n_samples)
    lag = laguerre_table(int(fock.max()), eta * eta)[fock]
    total = 0.0
    for gates in CLIFFORD_GATES:
        ideal = np.array([1.0, 0.0], dtype=complex)
        actual = np.tile(ideal, (n_samples, 1))
        for g in gates:
            phi = 0.0 if g == 4 else math.pi / 2
            ideal = U.rotation_matrix(math.pi / 2, phi) @ ideal
            th = 0.5 * (math.pi / 2) * lag
            c, s = np.cos(th), np.sin(th)
            e = np.exp(-1j * phi)
            a, b = actual[:, 0].copy(), actual[:, 1].copy()
            actual[:, 0] = c * a - 1j * e * s * b
            actual[:, 1] = -1j * np.conj(e) * s * a + c * b
        fid = np.abs(actual @ np.conj(ideal)) ** 2
        total += np.mean(2 * fid - 1)
    assert abs(total / 6 - clifford_step_factor(nbar, eta)) < 1e-3


def test_readout_errors():
    noise = NoiseModel(spam_error=0.01, d_state_decay_rate=0.0)
    res = simulate_sequence(_pi_pulse(), noise, 10, 0)
    assert res.success_exact[0] == pytest.approx(0.99)
    dark = NoiseModel(dark_spam_error=0.02, d_state_decay_rate=0.0)
    assert simulate_sequence(_pi_pulse(), dark, 10, 0).success_exact[0] == pytest.approx(0.98)
    decay = NoiseModel(d_state_decay_rate=1e4)
    expected = math.exp(-1e4 * 10e-6)
    assert simulate_sequence(_pi_pulse(), decay, 10, 0).success_exact[0] == pytest.approx(expected)


def test_simulate_sequence_errors():
    with pytest.raises(ValueError):
        simulate_sequence(_pi_pulse(), NoiseModel(), 0, 0)
    with pytest.raises(ValueError):
        simulate_sequence(_pi_pulse(), NoiseModel(step_error=0.01), 10, 0)


def test_overrotation_and_dephasing_reduce_success():
    gs = compile_one_ion(gen_sequence(30, 2))
    base = simulate_sequence(gs, NoiseModel.ideal(), 2000, 1).success_exact[0]
    over = simulate_sequence(gs, NoiseModel(overrotation_sigma=0.1, d_state_decay_rate=0), 2000, 1)
    deph = simulate_sequence(gs, NoiseModel(dephasing_per_us=1e-3, d_state_decay_rate=0), 2000, 1)
    assert base == 1.0
    assert over.success_exact[0] < 0.999
    assert deph.success_exact[0] < 0.999


def test_exact_and_empirical_agree_within_five_sigma():
    noise = NoiseModel(modes=(ThermalMode((0.1,), n0=3.0),), spam_error=0.01, d_state_decay_rate=1.2)
    gs = compile_two_ion(gen_sequence(10, 5), gen_sequence(10, 6), CTX)
    shots = 20_000
    res = simulate_sequence(gs, noise, shots, 9)
    p = res.bright_exact
    sigma = np.sqrt(p * (1 - p) / shots)
    assert np.all(np.abs(res.bright_empirical - p) < 5 * sigma + 1e-12)


# -- RB kernels and datasets


def _codes(seed, n_seq, length, n_tgt):
    rng = np.random.default_rng(seed)
    codes = [draw_codes(rng, n_seq, length) for _ in range(n_tgt)]
    return (np.stack([c[0] for c in codes], axis=2), np.stack([c[1] for c in codes], axis=2),
            np.stack([c[2] for c in codes], axis=1))


def _as_sequence(pauli, cliff, outcome):
    return RBSequence(tuple(RBStep("IXYZ"[p], int(c)) for p, c in zip(pauli, cliff)), int(outcome))


def test_rb_kernel_matches_generic_simulation():
    noise = NoiseModel(modes=(ThermalMode((0.06, 0.04), fixed_fock=2),), spam_error=0.003,
                       d_state_decay_rate=50.0)
    pauli, cliff, outcome = _codes(3, 4, 12, 2)
    lib = build_library(2, CTX, (1.0, 1.0), noise.pi2_duration, noise.modulation_duration)
    fast = simulate_rb_codes(pauli, cliff, outcome, lib, noise, 3, np.random.default_rng(0))
    for s in range(4):
        a = _as_sequence(pauli[s, :, 0], cliff[s, :, 0], outcome[s, 0])
        b = _as_sequence(pauli[s, :, 1], cliff[s, :, 1], outcome[s, 1])
        slow = simulate_sequence(compile_two_ion(a, b, CTX), noise, 3, 0)
        assert np.allclose(fast.p_success[s, 0], slow.success_exact, atol=1e-12)


def test_interleaving_independence_fixed_fock():
    one = NoiseModel(modes=(ThermalMode((0.07,), fixed_fock=3),), d_state_decay_rate=0.0)
    two = NoiseModel(modes=(ThermalMode((0.07, 0.0), fixed_fock=3),), d_state_decay_rate=0.0)
    pauli, cliff, outcome = _codes(4, 6, 15, 2)
    r1 = simulate_rb_codes(pauli[:, :, :1], cliff[:, :, :1], outcome[:, :1], build_library(1),
                           one, 2, np.random.default_rng(0))
    r2 = simulate_rb_codes(pauli, cliff, outcome, build_library(2, CTX), two, 2,
                           np.random.default_rng(0))
    assert np.allclose(r1.p_success[:, :, 0], r2.p_success[:, :, 0], atol=1e-12)
    assert np.allclose(r2.p_success[:, :, 1], 1.0, atol=1e-12)


def test_interleaving_independence_thermal():
    one = NoiseModel(modes=(ThermalMode((0.05,), 0.01, 1.0),), d_state_decay_rate=0.0)
    two = NoiseModel(modes=(ThermalMode((0.05, 0.0), 0.01, 1.0),), d_state_decay_rate=0.0)
    d1 = run_rb([40], 400, 20, "one-ion", one, rng_seed=1)
    d2 = run_rb([40], 400, 20, "two-ion", two, rng_seed=2)
    f1, f2 = d1.rows_for(1)[0], d2.rows_for(1)[0]
    assert abs(f1.mean_fidelity - f2.mean_fidelity) < 5 * math.hypot(f1.sem, f2.sem)
    assert d2.rows_for(2)[0].mean_fidelity == 1.0


def test_noiseless_rb():
    ds = run_rb([1, 5, 20], 10, 30, "two-ion", NoiseModel.ideal(), rng_seed=0, ctx=CTX)
    total = 10 * 30
    floor = math.sqrt((total + 1) / (total + 2) * (1 / (total + 2)) / total)
    for r in ds.rows:
        assert r.mean_fidelity == 1.0
        assert r.sem == pytest.approx(floor, rel=1e-12)
        assert ds.exact[r.length, r.ion] == pytest.approx(1.0, abs=1e-12)


def test_run_rb_deterministic():
    noise = NoiseModel(modes=(ThermalMode((0.05,), 0.01, 0.5),), spam_error=0.01)
    a = run_rb([1, 10], 5, 20, "two-ion", noise, rng_seed=42)
    b = run_rb([1, 10], 5, 20, "two-ion", noise, rng_seed=42)
    assert a.to_csv() == b.to_csv()
    assert a.exact == b.exact
    assert run_rb([1, 10], 5, 20, "two-ion", noise, rng_seed=43).to_csv() != a.to_csv()


def test_step_error_surrogate_gives_pure_exponential():
    eps = 0.01
    lengths = np.array([1, 5, 10, 20, 40, 60, 80])
    ds = run_rb(lengths, 200, 50, "one-ion", NoiseModel(step_error=eps, d_state_decay_rate=0.0),
                rng_seed=3)
    rows = ds.rows_for(1)
    f = np.array([r.mean_fidelity for r in rows])
    s = np.array([r.sem for r in rows])
    res = least_squares(FitProblem(lambda q: 0.5 + 0.5 * (1 - 2 * q[0]) * (1 - 2 * q[1]) ** lengths,
                                   f, s, [0.01, 0.005], [0, 0], [0.5, 0.5]))
    assert abs(res.params[1] - eps) < 2 * res.stderr[1]
    assert res.params[0] < 2 * res.stderr[0] + 1e-3


def test_per_pulse_granularity_runs_and_differs():
    kw = dict(modes=(ThermalMode((0.05,), 1.0, 0.0),), d_state_decay_rate=0.0)
    a = run_rb([30], 50, 10, "one-ion", NoiseModel(**kw), rng_seed=0)
    b = run_rb([30], 50, 10, "one-ion", NoiseModel(fock_granularity="pulse", **kw), rng_seed=0)
    assert a.exact[30, 1] != b.exact[30, 1]
    assert 0.5 < b.exact[30, 1] < 1.0


def test_run_rb_argument_errors():
    with pytest.raises(ValueError):
        run_rb([], 1, 1)
    with pytest.raises(ValueError):
        run_rb([1], 1, 1, "three-ion")
    with pytest.raises(ValueError):
        run_rb([1], 0, 1)


def test_dataset_csv_round_trip():
    ds = RBDataset([RBRow(1, 1, 0.99, 0.002, 20, 100), RBRow(10, 2, 0.912345678901234, 0.01, 20, 100)])
    text = ds.to_csv()
    assert text.splitlines()[0] == "length,ion,mean_fidelity,sem,n_sequences,n_shots"
    back = RBDataset.from_csv(text)
    assert back.to_csv() == text
    assert back.ions == [1, 2]


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("length,ion,fidelity\n", "line 1"),
    ("length,ion,mean_fidelity,sem,n_sequences,n_shots\n1,1,0.9,0.01,20\n", "line 2"),
    ("length,ion,mean_fidelity,sem,n_sequences,n_shots\n1,1,0.9,0.01,20,100\n2,1,1.7,0.01,20,100\n", "line 3"),
    ("length,ion,mean_fidelity,sem,n_sequences,n_shots\n1,1,abc,0.01,20,100\n", "line 2"),
])
def test_dataset_csv_errors(text, match):
    with pytest.raises(DatasetError, match=match):
        RBDataset.from_csv(text)


# -- Ramsey


@pytest.mark.parametrize("target", [0, 1])
@pytest.mark.parametrize("ctx", [None, CTX])
def test_noiseless_ramsey(target, ctx):
    phases = np.linspace(0, 2 * math.pi, 9)
    exact, emp = run_ramsey(target, phases, shots=50, ctx=ctx)
    assert np.allclose(exact[:, target], 0.5 * (1 + np.cos(phases)), atol=1e-12)
    assert np.allclose(exact[:, 1 - target], 1.0, atol=1e-12)
    assert np.all(emp[:, 1 - target] == 1.0)


def test_ramsey_with_readout_errors():
    phases = np.linspace(0, 2 * math.pi, 9)
    sym, _ = run_ramsey(0, phases, NoiseModel(spam_error=0.01, d_state_decay_rate=0.0))
    assert np.ptp(sym[:, 0]) == pytest.approx(1 - 2 * 0.01, abs=1e-12)
    dark, _ = run_ramsey(0, phases, NoiseModel(dark_spam_error=6.7e-3, d_state_decay_rate=0.0))
    assert np.ptp(dark[:, 0]) == pytest.approx(1 - 6.7e-3, abs=1e-12)
    assert np.allclose(dark[:, 1], 1.0)
