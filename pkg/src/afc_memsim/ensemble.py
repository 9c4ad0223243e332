"""Discrete-atom model of the collective excitation created by the comb.

Each atom ``j`` keeps a phase ``exp(-2 pi i delta_j t)`` after absorption; the
forward field is proportional to the weighted sum of these phasors. Spatial
phase factors cancel under forward phase matching and are not simulated.
This is a thin-medium model: it checks timing and rephasing, not absolute
efficiency.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .comb import (
    CombSpec,
    SpectralGrid,
    ToothShape,
    build_absorption_profile,
    comb_absorption,
    gaussian_pulse,
    propagate_pulse,
    rephasing_factor,
    transfer_function,
)

_CHUNK = 8192


class EmptyCombError(ValueError):
    pass


@dataclass(frozen=True)
class AtomEnsemble:
    detunings_mhz: np.ndarray
    weights: np.ndarray
    dephase_sigma_rad: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be >= 0")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if self.dephase_sigma_rad < 0:
            raise ValueError("dephase_sigma_rad must be >= 0")

    @property
    def n_atoms(self) -> int:
        return self.detunings_mhz.size

    def with_dephasing(self, sigma_rad: float) -> "AtomEnsemble":
        return AtomEnsemble(self.detunings_mhz, self.weights, sigma_rad)


@dataclass(frozen=True)
class EmissionTrace:
    times_ns: np.ndarray
    intensity: np.ndarray
    stderr: np.ndarray | None = None

    def peak(self) -> tuple[float, float]:
        k = int(np.argmax(self.intensity))
        return float(self.times_ns[k]), float(self.intensity[k])


def _density_support(spec: CombSpec) -> tuple[float, float, float]:
    centers = spec.tooth_centers_mhz()
    tail = 30.0 if spec.tooth_shape is ToothShape.LORENTZIAN else 2.0
    lo = centers[0] - tail * spec.tooth_fwhm_mhz
    hi = centers[-1] + tail * spec.tooth_fwhm_mhz
    return lo, hi, spec.tooth_fwhm_mhz / 200.0


def sample_atoms(spec: CombSpec, n_atoms: int, seed: int, dephase_sigma_rad: float = 0.0) -> AtomEnsemble:
    """Draw atom detunings with density proportional to ``alpha - d0`` (clipped at 0).

    Sampling is inverse-CDF on a fine internal grid with uniform jitter inside
    each cell, so the result is deterministic for a given seed.
    """
    if spec.peak_optical_depth == 0:
        raise EmptyCombError("comb has zero peak optical depth: no atoms to sample")
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    lo, hi, step = _density_support(spec)
    edges = np.arange(lo, hi + step, step)
    mids = 0.5 * (edges[1:] + edges[:-1])
    # background is unstructured absorption, not comb atoms
    dens = np.clip(comb_absorption(replace(spec, background_depth=0.0), mids), 0.0, None)
    cdf = np.concatenate([[0.0], np.cumsum(dens)])
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    u = rng.random(n_atoms)
    k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, mids.size - 1)
    frac = (u - cdf[k]) / np.maximum(cdf[k + 1] - cdf[k], 1e-300)
    detunings = edges[k] + np.clip(frac, 0.0, 1.0) * step
    weights = np.full(n_atoms, 1.0 / n_atoms)
    return AtomEnsemble(detunings, weights, dephase_sigma_rad)


def collective_amplitude(e: AtomEnsemble, times_ns, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Collective amplitude ``A(t)`` and its Monte Carlo standard error on ``|A|^2``.

    Atom phases ``theta_j ~ N(0, sigma^2)`` are drawn once per call from
    ``seed``. The sum runs over fixed atom chunks in index order, so results
    do not depend on chunking or threading.
    """
    t = np.atleast_1d(np.asarray(times_ns, dtype=float))
    rng = np.random.default_rng(seed)
    theta = rng.normal(0.0, e.dephase_sigma_rad, e.n_atoms) if e.dephase_sigma_rad > 0 else np.zeros(e.n_atoms)
    amp = np.zeros(t.size, dtype=complex)
    # second moments of the weighted phasors, for the delta-method error
    srr = np.zeros(t.size)
    sii = np.zeros(t.size)
    sri = np.zeros(t.size)
    for start in range(0, e.n_atoms, _CHUNK):
        sl = slice(start, start + _CHUNK)
        ph = np.exp(1j * (theta[sl, None] - 2e-3 * np.pi * np.outer(e.detunings_mhz[sl], t)))
        w = e.weights[sl, None]
        amp += np.sum(w * ph, axis=0)
        srr += np.sum(w * ph.real**2, axis=0)
        sii += np.sum(w * ph.imag**2, axis=0)
        sri += np.sum(w * ph.real * ph.imag, axis=0)
    # effective sample size for the weights
    n_eff = 1.0 / np.sum(e.weights**2)
    vrr = (srr - amp.real**2) / n_eff
    vii = (sii - amp.imag**2) / n_eff
    vri = (sri - amp.real * amp.imag) / n_eff
    var_i = 4 * (amp.real**2 * vrr + amp.imag**2 * vii + 2 * amp.real * amp.imag * vri)
    return amp, np.sqrt(np.clip(var_i, 0.0, None))


def collective_intensity(e: AtomEnsemble, times_ns, seed: int = 0) -> EmissionTrace:
    t = np.atleast_1d(np.asarray(times_ns, dtype=float))
    amp, err = collective_amplitude(e, t, seed)
    return EmissionTrace(t, np.abs(amp) ** 2, err)


@dataclass(frozen=True)
class OracleComparison:
    storage_time_ns: float
    time_step_ns: float
    oracle_peak_time_ns: float
    transfer_peak_time_ns: float
    oracle_peak_intensity: float
    oracle_stderr: float
    expected_rephasing: float
    transfer_rephasing: float

    @property
    def oracle_time_error_ns(self) -> float:
        return abs(self.oracle_peak_time_ns - self.storage_time_ns)

    @property
    def peak_time_difference_ns(self) -> float:
        return abs(self.oracle_peak_time_ns - self.transfer_peak_time_ns)

    @property
    def rephasing_ratio(self) -> float:
        return self.oracle_peak_intensity / self.transfer_rephasing

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(
            oracle_time_error_ns=self.oracle_time_error_ns,
            peak_time_difference_ns=self.peak_time_difference_ns,
            rephasing_ratio=self.rephasing_ratio,
        )
        return d


def transfer_rephasing(spec: CombSpec, grid: SpectralGrid) -> float:
    """First-harmonic to mean ratio ``|a1/a0|^2`` of the sampled comb absorption."""
    alpha = build_absorption_profile(spec, grid) - spec.background_depth
    nu = grid.freqs_mhz
    a0 = np.sum(alpha)
    a1 = np.sum(alpha * np.exp(-2j * np.pi * nu / spec.tooth_spacing_mhz))
    return float(abs(a1 / a0) ** 2)


def oracle_vs_transfer(
    spec: CombSpec,
    n_atoms: int = 100_000,
    seed: int = 0,
    grid: SpectralGrid | None = None,
    pulse_fwhm_ns: float = 25.0,
) -> OracleComparison:
    """Run the atom oracle and the FFT engine on the same comb and compare."""
    if grid is None:
        grid = SpectralGrid.for_comb(spec)
    tau = spec.storage_time_ns
    pulse = gaussian_pulse(grid, pulse_fwhm_ns)
    out = propagate_pulse(pulse, transfer_function(spec, grid))
    t = out.times_ns
    gate = min(50.0, 0.5 * tau)
    sel = np.abs(t - tau) < gate / 2
    k = int(np.argmax(out.intensity[sel]))
    transfer_peak = float(t[sel][k])
    # oracle on the engine's own time samples near tau
    near = t[np.abs(t - tau) <= 10 * grid.dt_ns]
    ens = sample_atoms(spec, n_atoms, seed)
    trace = collective_intensity(ens, near, seed)
    j = int(np.argmax(trace.intensity))
    expected = rephasing_factor(spec.finesse) if spec.tooth_shape is ToothShape.GAUSSIAN else float("nan")
    return OracleComparison(
        storage_time_ns=tau,
        time_step_ns=grid.dt_ns,
        oracle_peak_time_ns=float(near[j]),
        transfer_peak_time_ns=transfer_peak,
        oracle_peak_intensity=float(trace.intensity[j]),
        oracle_stderr=float(trace.stderr[j]),
        expected_rephasing=expected,
        transfer_rephasing=transfer_rephasing(spec, grid),
    )

