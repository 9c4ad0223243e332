import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from afc_memsim.tomo import (
    CLASSICAL_BOUND,
    NoiseModel,
    NonPureTargetError,
    TomographyDataset,
    ZeroMatrixError,
    apply_chi,
    average_fidelity,
    bootstrap_fidelity,
    cell_probabilities,
    channel_from_jones,
    chi_to_choi,
    choi_to_chi,
    depolarizing_chi,
    expected_dataset,
    identity_chi,
    linear_inversion_chi,
    log_likelihood,
    mle_chi,
    process_fidelity,
    read_chi_csv,
    simulate_counts,
    tp_defect,
    unitary_chi,
    write_chi_csv,
)
from afc_memsim.polar import pure_identity_fidelity

NO_DARK = NoiseModel(dark_prob_per_gate=0.0)


def _cptp_checks(chi):
    assert np.min(np.linalg.eigvalsh(chi_to_choi(chi))) > -1e-10
    assert tp_defect(chi) < 1e-8


# --- channel construction ---

def test_identity_jones_gives_identity_chi():
    chi = channel_from_jones(np.eye(2), NO_DARK)
    assert np.allclose(chi, identity_chi(), atol=1e-15)


def test_dark_only_is_fully_depolarizing():
    noise = NoiseModel(memory_efficiency=0.0, dark_prob_per_gate=1e-5)
    assert np.allclose(channel_from_jones(np.eye(2), noise), np.eye(4) / 4)


def test_signal_probability_arithmetic():
    assert NoiseModel().signal_prob == pytest.approx(-np.expm1(-0.8 * 0.069 * 0.4 * 0.6), rel=1e-15)
    assert NoiseModel().signal_prob == pytest.approx(0.01316, abs=1e-5)


def test_zero_jones_matrix():
    with pytest.raises(ZeroMatrixError):
        channel_from_jones(np.zeros((2, 2)), NO_DARK)


def test_choi_round_trip_and_action():
    u = unitary_group.rvs(2, random_state=1)
    chi = unitary_chi(u)
    assert np.allclose(choi_to_chi(chi_to_choi(chi)), chi, atol=1e-14)
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    assert np.allclose(apply_chi(chi, rho), u @ rho @ u.conj().T, atol=1e-14)


# --- simulated counts ---

def test_identity_h_input_clicks_only_plus():
    data = simulate_counts(identity_chi(), NO_DARK, 100_000, seed=0)
    assert data.clicks[0, 0, 1] == 0 and data.clicks[0, 0, 0] > 0


def test_depolarizing_splits_evenly():
    data = simulate_counts(depolarizing_chi(), NO_DARK, 1_000_000, seed=1)
    n = data.clicks
    tot = n.sum(axis=2)
    z = (n[..., 0] - tot / 2) / np.sqrt(tot / 4)
    assert np.max(np.abs(z)) < 4.5


def test_counts_are_seeded():
    a = simulate_counts(identity_chi(), NoiseModel(), 10_000, seed=4)
    b = simulate_counts(identity_chi(), NoiseModel(), 10_000, seed=4)
    assert np.array_equal(a.clicks, b.clicks)


def test_port_probabilities_complete():
    chi = unitary_chi(unitary_group.rvs(2, random_state=3))
    assert np.allclose(cell_probabilities(chi).sum(axis=2), 1.0, atol=1e-14)


def test_trial_count_from_timing():
    assert 1600 * 40 * 100 == 6_400_000


# --- linear inversion ---

def test_linear_inversion_identity():
    chi = linear_inversion_chi(expected_dataset(identity_chi()))
    assert np.max(np.abs(chi - identity_chi())) < 1e-10


def test_linear_inversion_random_unitaries():
    rng = np.random.default_rng(0)
    for _ in range(100):
        chi = unitary_chi(unitary_group.rvs(2, random_state=rng))
        est = linear_inversion_chi(expected_dataset(chi))
        assert np.linalg.norm(est - chi) < 1e-9


@pytest.mark.parametrize("trials", [10_000, 1_000_000])
def test_linear_inversion_finite_counts(trials):
    data = simulate_counts(identity_chi(), NoiseModel(), trials, seed=2)
    chi = linear_inversion_chi(data)
    assert np.allclose(chi, chi.conj().T)
    assert abs(np.trace(chi).real - 1) <= 1 / np.sqrt(trials)


def test_linear_inversion_needs_trials():
    data = expected_dataset(identity_chi())
    with pytest.raises(ValueError):
        linear_inversion_chi(TomographyDataset(np.zeros((6, 3, 2)), data.clicks))


def test_pure_jones_fidelity_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        fid = process_fidelity(channel_from_jones(m, NO_DARK))
        assert fid == pytest.approx(pure_identity_fidelity(m), abs=1e-10)


def test_pure_jones_fidelity_through_tomography():
    # lossy but non-diattenuating maps keep the post-selected channel linear
    for seed in range(20):
        m = 0.3 * unitary_group.rvs(2, random_state=seed)
        chi = channel_from_jones(m, NO_DARK)
        piped = process_fidelity(linear_inversion_chi(expected_dataset(chi)))
        assert piped == pytest.approx(pure_identity_fidelity(m), abs=1e-10)


# --- maximum likelihood ---

def test_mle_consistency_at_large_trials():
    truth = channel_from_jones(np.diag([1.0, np.exp(0.2j)]), NoiseModel())
    data = simulate_counts(truth, NO_DARK, 100_000_000, seed=8)
    fit = mle_chi(data)
    _cptp_checks(fit.chi)
    assert np.linalg.norm(fit.chi - truth) < 1e-3


def test_mle_matches_physical_linear_inversion():
    truth = 0.7 * unitary_chi(unitary_group.rvs(2, random_state=2)) + 0.3 * depolarizing_chi()
    data = expected_dataset(truth, 1_000_000)
    lin = linear_inversion_chi(data)
    assert np.min(np.linalg.eigvalsh(chi_to_choi(lin))) > 0
    fit = mle_chi(data, tol=1e-12)
    ll_lin, ll_mle = log_likelihood(lin, data), log_likelihood(fit.chi, data)
    assert ll_mle >= ll_lin - 1e-6 * abs(ll_lin)
    assert abs(ll_mle - ll_lin) <= 1e-6 * abs(ll_lin)


def test_mle_all_zero_clicks():
    data = TomographyDataset(np.full((6, 3, 2), 1000), np.zeros((6, 3, 2), dtype=np.int64))
    fit = mle_chi(data)
    _cptp_checks(fit.chi)
    assert process_fidelity(fit.chi, depolarizing_chi(0.0)) == pytest.approx(0.25, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([20, 500, 100_000]))
def test_mle_fuzz_is_cptp_and_monotone(seed, trials):
    rng = np.random.default_rng(seed)
    clicks = rng.integers(0, trials + 1, size=(6, 3, 2))
    fit = mle_chi(TomographyDataset(np.full((6, 3, 2), trials), clicks), max_iter=400)
    _cptp_checks(fit.chi)
    ll = np.array(fit.log_likelihoods)
    assert np.all(np.diff(ll) >= 0)


# --- fidelities ---

def test_process_fidelity_identity():
    assert process_fidelity(identity_chi(), identity_chi()) == pytest.approx(1.0)


@pytest.mark.parametrize("lam", [0.0, 0.01, 0.3, 1.0])
def test_depolarizing_fidelity(lam):
    assert process_fidelity(depolarizing_chi(lam)) == pytest.approx(1 - 3 * lam / 4, abs=1e-15)


def test_non_pure_target():
    with pytest.raises(NonPureTargetError):
        process_fidelity(identity_chi(), depolarizing_chi(0.5))


def test_average_fidelity_values():
    assert average_fidelity(1.0) == 1.0
    assert average_fidelity(0.5) == CLASSICAL_BOUND
    assert average_fidelity(0.998) == pytest.approx(0.998667, abs=5e-7)
    with pytest.raises(ValueError):
        average_fidelity(1.5)


# --- bootstrap ---

def test_bootstrap_noise_free_spread_is_tiny():
    data = simulate_counts(identity_chi(), NO_DARK, 10_000_000, seed=0)
    mean, std = bootstrap_fidelity(data, 100, seed=1)
    assert mean == pytest.approx(1.0, abs=1e-5)
    assert std < 1e-4


def test_bootstrap_scaling_with_trials():
    truth = depolarizing_chi(0.2)
    stds = []
    for trials in (2_000, 200_000):
        data = expected_dataset(truth, trials)
        data = TomographyDataset(data.trials.astype(np.int64), np.rint(data.clicks).astype(np.int64))
        stds.append(bootstrap_fidelity(data, 100, seed=7)[1])
    assert stds[0] / stds[1] == pytest.approx(10.0, rel=0.3)


def test_bootstrap_independent_of_threads():
    data = simulate_counts(depolarizing_chi(0.1), NO_DARK, 5_000, seed=2)
    assert bootstrap_fidelity(data, 100, seed=3, threads=1) == bootstrap_fidelity(data, 100, seed=3, threads=4)


def test_bootstrap_needs_enough_resamples():
    with pytest.raises(ValueError):
        bootstrap_fidelity(expected_dataset(identity_chi(), 10), 50)


# --- serialization ---

def test_dataset_csv_round_trip(tmp_path):
    data = simulate_counts(identity_chi(), NoiseModel(), 12_345, seed=6)
    path = tmp_path / "counts.csv"
    data.to_csv(path)
    back = TomographyDataset.from_csv(path)
    assert np.array_equal(back.trials, data.trials) and np.array_equal(back.clicks, data.clicks)
    assert path.read_text().splitlines()[0] == "input,setting,port,trials,clicks"


def test_expected_dataset_csv_round_trip(tmp_path):
    data = expected_dataset(unitary_chi(unitary_group.rvs(2, random_state=9)), 1000.0)
    data.to_csv(tmp_path / "e.csv")
    back = TomographyDataset.from_csv(tmp_path / "e.csv")
    assert np.array_equal(back.clicks, data.clicks)


def test_chi_csv_round_trip(tmp_path):
    chi = channel_from_jones(unitary_group.rvs(2, random_state=4), NoiseModel())
    write_chi_csv(chi, tmp_path / "chi.csv")
    assert np.array_equal(read_chi_csv(tmp_path / "chi.csv"), chi)
