"""Compose comb, polarization and tomography models into the memory experiments.

Seeds: counts for tomography use ``seed``; bootstrap resample ``r`` uses
``seed + BOOTSTRAP_OFFSET + r``; the atom oracle uses ``seed``. Everything
else is deterministic.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import brentq

from . import __version__
from .comb import (
    CombSpec,
    EchoReport,
    PulseWaveform,
    SpectralGrid,
    analytic_efficiency,
    extract_echoes,
    gaussian_pulse,
    pulse_spectrum,
    transfer_function,
)
from .config import AUTO, ExperimentConfig
from .ensemble import oracle_vs_transfer
from .polar import (
    DeviceChain,
    MemoryElement,
    birefringent_phase,
    echo_channel_matrix,
    pure_identity_fidelity,
    transmitted_channel_matrix,
)
from .tomo import (
    CLASSICAL_BOUND,
    NoiseModel,
    TomographyDataset,
    average_fidelity,
    bootstrap_fidelity,
    channel_from_jones,
    expected_dataset,
    identity_chi,
    linear_inversion_chi,
    mle_chi,
    process_fidelity,
    simulate_counts,
)

log = logging.getLogger(__name__)

BOOTSTRAP_OFFSET = 1_000_000


class FinesseError(ValueError):
    """Requested storage time needs teeth narrower than the fixed tooth width allows."""


@dataclass
class RunReport:
    experiment: str
    config_hash: str
    seed: int
    results: dict
    version: str = __version__
    tables: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "results": self.results,
            "version": self.version,
        }


@dataclass
class Device:
    grid: SpectralGrid
    pulse: PulseWaveform
    crystal_specs: tuple[CombSpec, CombSpec]
    chain: DeviceChain
    phases: tuple[float, float]


def crystal_specs(cfg: ExperimentConfig, comb: CombSpec | None = None) -> tuple[CombSpec, CombSpec]:
    comb = cfg.comb_spec() if comb is None else comb
    ch = cfg.chain
    return comb.scaled(ch.crystal1_depth_scale), comb.scaled(ch.crystal2_depth_scale)


def build_device(cfg: ExperimentConfig, comb: CombSpec | None = None, phase_plate_deg: float | None = None) -> Device:
    """Memory elements and optical chain for the configured sample.

    ``phase_plate_deg`` overrides the config; an ``auto`` plate is nulled.
    """
    grid = cfg.spectral_grid()
    pulse = gaussian_pulse(grid, cfg.pulse.fwhm_ns)
    specs = crystal_specs(cfg, comb)
    ch = cfg.chain
    phases = (
        birefringent_phase(ch.crystal1_length_mm, ch.birefringence, ch.wavelength_nm),
        birefringent_phase(ch.crystal2_length_mm, ch.birefringence, ch.wavelength_nm),
    )
    elements = [
        MemoryElement.from_comb(s, grid, pulse, ch.v_depth_ratio, phase_h_rad=ph)
        for s, ph in zip(specs, phases)
    ]
    theta = ch.phase_plate_deg if phase_plate_deg is None else phase_plate_deg
    chain = DeviceChain(elements[0], elements[1], ch.hwp3_deg, 0.0, ch.hwp4_deg)
    if theta == AUTO:
        theta = null_phase(chain)
    return Device(grid, pulse, specs, chain.with_phase_plate(float(theta)), phases)


def null_phase(chain: DeviceChain) -> float:
    """Phase-plate setting (deg) that brings the echo map closest to a multiple of identity.

    The plate only rephases V, so ``Tr M(theta) = p + q exp(i theta)`` while
    ``Tr M^dag M`` is fixed; the fidelity peaks at ``theta = arg(p / q)``.
    """
    t0 = np.trace(echo_channel_matrix(chain.with_phase_plate(0.0)))
    t180 = np.trace(echo_channel_matrix(chain.with_phase_plate(180.0)))
    p, q = 0.5 * (t0 + t180), 0.5 * (t0 - t180)
    if abs(q) == 0 or abs(p) == 0:
        return 0.0
    theta = float(np.rad2deg(np.angle(p / q)))
    return 0.0 if abs(theta) < 1e-9 else theta


def auto_null_phase_plate(cfg: ExperimentConfig) -> float:
    return null_phase(build_device(cfg, phase_plate_deg=0.0).chain)


def device_output(cfg: ExperimentConfig, device: Device) -> tuple[PulseWaveform, float]:
    """Intensity leaving the sample for an H+V input, as a waveform, and the input energy.

    Each polarization passes one crystal on the H transition and the other on
    the V transition; the full spectral response of both is used. Unitary
    optics after the sample do not change the total intensity.
    """
    grid, pulse = device.grid, device.pulse
    (s1, s2), ratio = device.crystal_specs, cfg.chain.v_depth_ratio
    h_path = transfer_function(s1, grid) * transfer_function(s2.scaled(ratio), grid)
    v_path = transfer_function(s1.scaled(ratio), grid) * transfer_function(s2, grid)
    spec = pulse_spectrum(pulse) / np.sqrt(2.0)
    out_h = np.fft.ifft(np.fft.ifftshift(spec * h_path.amplitude))
    out_v = np.fft.ifft(np.fft.ifftshift(spec * v_path.amplitude))
    intensity = np.abs(out_h) ** 2 + np.abs(out_v) ** 2
    return PulseWaveform(pulse.t0_ns, pulse.dt_ns, np.sqrt(intensity).astype(complex)), pulse.energy


def device_echoes(cfg: ExperimentConfig, comb: CombSpec | None = None, device: Device | None = None) -> EchoReport:
    if device is None:
        device = build_device(cfg, comb, phase_plate_deg=0.0)
    out, e_in = device_output(cfg, device)
    spec = device.crystal_specs[0] if cfg.chain.crystal1_depth_scale > 0 else device.crystal_specs[1]
    return extract_echoes(out, spec.tooth_spacing_mhz, cfg.echo.n_echoes, cfg.noise.gate_ns, input_energy=e_in)


def _binned_counts(cfg: ExperimentConfig, out: PulseWaveform, e_in: float, stop_ns: float):
    t = out.times_ns
    inten = out.intensity / e_in
    if cfg.echo.jitter_ns > 0:
        inten = gaussian_filter1d(inten, cfg.echo.jitter_ns / out.dt_ns, mode="wrap")
    cum = np.concatenate([[0.0], np.cumsum(inten) * out.dt_ns])
    edges_t = np.concatenate([t, [t[-1] + out.dt_ns]])
    bins = np.arange(-100.0, stop_ns + cfg.echo.bin_ns, cfg.echo.bin_ns)
    photons = np.diff(np.interp(bins, edges_t, cum))
    n = cfg.noise
    pulses = cfg.timing.trials_per_second * cfg.timing.integration_s
    counts = pulses * (n.mean_photon_number * n.detection_efficiency * n.path_transmission * photons
                       + n.dark_prob_per_gate * cfg.echo.bin_ns / n.gate_ns)
    return 0.5 * (bins[1:] + bins[:-1]), counts


def timing_summary(cfg: ExperimentConfig) -> dict:
    t = cfg.timing
    return {
        "cycle_duration_ms": t.cycle_duration_ms,
        "cycle_period_ms": 1e3 / t.cycle_rate_hz,
        "trials_per_second": t.trials_per_second,
        "integration_s": t.integration_s,
        "pulses_integrated": t.trials_per_second * t.integration_s,
    }


def run_echo_trace(cfg: ExperimentConfig) -> RunReport:
    """Detected intensity of an H+V weak pulse: transmitted pulse plus echoes."""
    device = build_device(cfg, phase_plate_deg=0.0)
    out, e_in = device_output(cfg, device)
    comb = cfg.comb_spec()
    report = extract_echoes(out, comb.tooth_spacing_mhz, cfg.echo.n_echoes, cfg.noise.gate_ns, input_energy=e_in)
    stop = (cfg.echo.n_echoes + 0.5) * comb.storage_time_ns
    times, counts = _binned_counts(cfg, out, e_in, stop)
    results = {
        "storage_time_ns": comb.storage_time_ns,
        "finesse": comb.finesse,
        "eta1": report.efficiency(1),
        "echo_report": report.as_dict(),
        "timing": timing_summary(cfg),
    }
    table = {"time_ns": times.tolist(), "counts_per_bin": counts.tolist()}
    return RunReport("echo", cfg.hash(), cfg.seed, results, tables={"echo_trace": table})


def memory_efficiency(cfg: ExperimentConfig, device: Device | None = None) -> float:
    if cfg.noise.memory_efficiency != AUTO:
        return float(cfg.noise.memory_efficiency)
    return device_echoes(cfg, device=device).efficiency(1)


def expected_fidelity(chi_pure: np.ndarray, noise: NoiseModel) -> float:
    """Process fidelity of exact (infinite-statistics) click rates, dark counts included."""
    data = expected_dataset(chi_pure, noise=noise)
    return process_fidelity(linear_inversion_chi(data))


def _matrix(m: np.ndarray) -> dict:
    return {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}


def run_qpt(cfg: ExperimentConfig, threads: int | None = None) -> RunReport:
    """Simulated process tomography of the echo channel.

    Counts come from the noiseless post-selected echo channel with dark
    clicks added per port; both estimators and the bootstrap run on them.
    """
    device = build_device(cfg)
    m_echo = echo_channel_matrix(device.chain)
    eta = memory_efficiency(cfg, device)
    noise = cfg.noise_model(eta)
    chi_pure = channel_from_jones(m_echo, NoiseModel(noise.mean_photon_number, eta, noise.detection_efficiency,
                                                     noise.path_transmission, 0.0, noise.gate_ns))
    tm = cfg.tomography
    data = simulate_counts(chi_pure, noise, tm.trials_per_setting, cfg.seed)
    chi_lin = linear_inversion_chi(data)
    fit = mle_chi(data, tm.mle_tol, tm.mle_max_iter)
    if not fit.converged:
        log.warning("MLE stopped after %d iterations without converging", fit.iterations)
    f_mle = process_fidelity(fit.chi)
    f_lin = process_fidelity(chi_lin)
    bs_mean, bs_std = bootstrap_fidelity(
        data, tm.bootstrap_resamples, cfg.seed + BOOTSTRAP_OFFSET, threads=threads, tol=tm.mle_tol, max_iter=tm.mle_max_iter
    )
    f_avg = average_fidelity(min(max(f_mle, 0.0), 1.0))
    results = {
        "storage_time_ns": cfg.comb_spec().storage_time_ns,
        "phase_plate_deg": device.chain.phase_plate_deg,
        "eta_mem": eta,
        "signal_prob": noise.signal_prob,
        "dark_prob_per_gate": noise.dark_prob_per_gate,
        "noise_fraction": noise.noise_fraction,
        "trials_per_setting": tm.trials_per_setting,
        "echo_matrix": _matrix(m_echo),
        "transmitted_matrix": _matrix(transmitted_channel_matrix(device.chain)),
        "pure_channel_f_p": pure_identity_fidelity(m_echo),
        "model_f_p": process_fidelity(channel_from_jones(m_echo, noise)),
        "expected_f_p": expected_fidelity(chi_pure, noise),
        "chi_real": np.real(fit.chi).tolist(),
        "chi_imag": np.imag(fit.chi).tolist(),
        "chi_linear_real": np.real(chi_lin).tolist(),
        "chi_linear_imag": np.imag(chi_lin).tolist(),
        "f_p": f_mle,
        "f_p_linear": f_lin,
        "f_p_std": bs_std,
        "f_p_bootstrap_mean": bs_mean,
        "f_avg": f_avg,
        "f_avg_linear": average_fidelity(min(max(f_lin, 0.0), 1.0)),
        "classical_bound": CLASSICAL_BOUND,
        "bound_margin": f_avg - CLASSICAL_BOUND,
        "max_abs_imag": float(np.max(np.abs(np.imag(fit.chi)))),
        "mle_converged": fit.converged,
        "mle_iterations": fit.iterations,
        "timing": timing_summary(cfg),
    }
    rep = RunReport("qpt", cfg.hash(), cfg.seed, results)
    rep.tables["chi_mle"] = fit.chi
    rep.tables["chi_linear"] = chi_lin
    rep.artifacts["dataset"] = data
    return rep


def comb_for_storage_time(cfg: ExperimentConfig, storage_time_ns: float) -> CombSpec:
    """Comb with spacing ``1/tau`` at the configured (minimal) tooth width."""
    if storage_time_ns <= 0:
        raise ValueError("storage time must be > 0")
    c = cfg.comb_spec()
    spacing = 1e3 / storage_time_ns
    if c.tooth_fwhm_mhz >= spacing:
        raise FinesseError(
            f"storage time {storage_time_ns:g} ns needs finesse {spacing / c.tooth_fwhm_mhz:.3g} < 1 "
            f"at tooth width {c.tooth_fwhm_mhz:g} MHz"
        )
    bandwidth = max(c.bandwidth_mhz, 2 * spacing)
    return CombSpec(spacing, c.tooth_fwhm_mhz, c.peak_optical_depth, c.background_depth, bandwidth, c.tooth_shape)


def _gate_for(cfg: ExperimentConfig, comb: CombSpec) -> ExperimentConfig:
    if cfg.noise.gate_ns < comb.storage_time_ns:
        return cfg
    return cfg.replace(noise={"gate_ns": 0.5 * comb.storage_time_ns})


def run_efficiency_curve(cfg: ExperimentConfig, storage_times_ns=None) -> RunReport:
    """First-echo efficiency versus storage time at fixed tooth width."""
    times = cfg.efficiency.storage_times_ns if storage_times_ns is None else list(storage_times_ns)
    rows = []
    for tau in times:
        comb = comb_for_storage_time(cfg, tau)
        sub = _gate_for(cfg, comb)
        eta = device_echoes(sub, comb).efficiency(1)
        try:
            analytic = analytic_efficiency(comb)
        except ValueError:
            analytic = float("nan")
        rows.append({"storage_time_ns": float(tau), "finesse": comb.finesse, "efficiency": eta, "analytic": analytic})
    results = {"tooth_fwhm_mhz": cfg.comb.tooth_fwhm_mhz, "curve": rows}
    table = {
        "storage_time_ns": [r["storage_time_ns"] for r in rows],
        "efficiency": [r["efficiency"] for r in rows],
    }
    return RunReport("efficiency", cfg.hash(), cfg.seed, results, tables={"efficiency_curve": table})


def run_oracle(cfg: ExperimentConfig) -> RunReport:
    comb = cfg.comb_spec()
    cmp = oracle_vs_transfer(comb, cfg.oracle.n_atoms, cfg.seed, cfg.spectral_grid(), cfg.pulse.fwhm_ns)
    return RunReport("oracle", cfg.hash(), cfg.seed, cmp.as_dict())


def run_null_phase(cfg: ExperimentConfig) -> RunReport:
    before = build_device(cfg, phase_plate_deg=0.0)
    theta = null_phase(before.chain)
    after = before.chain.with_phase_plate(theta)
    results = {
        "phase_plate_deg": theta,
        "crystal_phase_offset_deg": float(np.rad2deg(before.phases[0] - before.phases[1])),
        "f_p_before": pure_identity_fidelity(echo_channel_matrix(before.chain)),
        "f_p_after": pure_identity_fidelity(echo_channel_matrix(after)),
    }
    return RunReport("null-phase", cfg.hash(), cfg.seed, results)


@dataclass(frozen=True)
class Calibration:
    peak_optical_depth: float
    finesse: float
    tooth_fwhm_mhz: float
    dark_prob_per_gate: float
    eta_short: float
    eta_long: float
    f_p_short: float
    f_p_long: float


def calibrate(
    cfg: ExperimentConfig,
    eta_target: float = 0.069,
    f_p_short: float = 0.998,
    f_p_long: float = 0.984,
    short_ns: float = 200.0,
    long_ns: float = 500.0,
    finesse_bracket: tuple[float, float] = (2.6, 8.0),
) -> Calibration:
    """Fit peak depth, finesse and dark rate to the efficiency and fidelity anchors.

    For a trial finesse, the depth is solved on the low-depth branch so that
    the device echo efficiency at ``short_ns`` equals ``eta_target``; the dark
    rate then follows from the short-time fidelity. The finesse is adjusted
    until the long-time fidelity, at the same tooth width and dark rate,
    matches ``f_p_long``. Fidelities use exact click rates of an ideal
    identity echo channel.
    """
    spacing = 1e3 / short_ns
    n = cfg.noise
    ident = identity_chi()

    def noise(eta, dark):
        return NoiseModel(n.mean_photon_number, eta, n.detection_efficiency, n.path_transmission, dark, n.gate_ns)

    def eta_at(depth, finesse, tau):
        base = cfg.replace(comb={"tooth_spacing_mhz": spacing, "tooth_fwhm_mhz": spacing / finesse,
                                 "peak_optical_depth": depth})
        comb = comb_for_storage_time(base, tau)
        return device_echoes(_gate_for(base, comb), comb).efficiency(1)

    def depth_for(finesse):
        # efficiency rises with depth up to mean depth ~2; stay below the maximum
        hi = 2.0 * finesse / 1.0645
        return brentq(lambda d: eta_at(d, finesse, short_ns) - eta_target, 1e-3, hi, xtol=1e-10)

    def dark_for(eta):
        return brentq(lambda dk: expected_fidelity(ident, noise(eta, dk)) - f_p_short, 0.0, 1e-2, xtol=1e-14)

    def long_fidelity(finesse):
        d = depth_for(finesse)
        dark = dark_for(eta_target)
        eta_l = eta_at(d, finesse, long_ns)
        return expected_fidelity(ident, noise(eta_l, dark))

    finesse = brentq(lambda f: long_fidelity(f) - f_p_long, *finesse_bracket, xtol=1e-8)
    depth = depth_for(finesse)
    dark = dark_for(eta_target)
    eta_l = eta_at(depth, finesse, long_ns)
    return Calibration(
        peak_optical_depth=depth,
        finesse=finesse,
        tooth_fwhm_mhz=spacing / finesse,
        dark_prob_per_gate=dark,
        eta_short=eta_at(depth, finesse, short_ns),
        eta_long=eta_l,
        f_p_short=expected_fidelity(ident, noise(eta_target, dark)),
        f_p_long=expected_fidelity(ident, noise(eta_l, dark)),
    )


EXPERIMENTS = {
    "echo": run_echo_trace,
    "qpt": run_qpt,
    "efficiency": run_efficiency_curve,
    "oracle": run_oracle,
    "null-phase": run_null_phase,
}


def tomography_dataset(report: RunReport) -> TomographyDataset:
    return report.artifacts["dataset"]
