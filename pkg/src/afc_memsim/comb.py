"""Atomic frequency comb spectra, causal transfer functions and echo extraction.

Frequencies are ordinary frequencies in MHz, times in ns. A comb with tooth
spacing ``Delta`` rephases after ``1/Delta`` (5 MHz -> 200 ns).

Fourier convention follows numpy: a field ``E(t) = sum_nu E(nu) exp(+2 pi i nu t)``
and a medium multiplies ``E(nu)`` by ``t(nu) = exp(-alpha/2 + i phi)``. A causal
response is one whose impulse response vanishes for negative lags.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

# FWHM -> exp(-4 ln2 x^2 / fwhm^2)
_FOUR_LN2 = 4.0 * np.log(2.0)


class GridTooCoarseError(ValueError):
    """Spectral grid cannot resolve the comb teeth."""


class SpectralLeakageError(ValueError):
    """Pulse spectrum reaches the edge of the simulation grid."""


class OverlappingGatesError(ValueError):
    pass


class UnsupportedShapeError(ValueError):
    pass


class ToothShape(str, Enum):
    GAUSSIAN = "gaussian"
    LORENTZIAN = "lorentzian"
    SQUARE = "square"


@dataclass(frozen=True)
class CombSpec:
    """Parametric AFC absorption spectrum.

    Optical depths are intensity exponents: a flat medium of depth ``d``
    transmits ``exp(-d)`` of the energy.
    """

    tooth_spacing_mhz: float
    tooth_fwhm_mhz: float
    peak_optical_depth: float
    background_depth: float = 0.0
    bandwidth_mhz: float = 100.0
    tooth_shape: ToothShape = ToothShape.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "tooth_shape", ToothShape(self.tooth_shape))
        if not self.tooth_spacing_mhz > 0:
            raise ValueError("tooth_spacing_mhz must be > 0")
        if not 0 < self.tooth_fwhm_mhz < self.tooth_spacing_mhz:
            raise ValueError("tooth_fwhm_mhz must lie in (0, tooth_spacing_mhz): finesse > 1")
        if self.peak_optical_depth < 0 or self.background_depth < 0:
            raise ValueError("optical depths must be >= 0")
        if self.bandwidth_mhz < 2 * self.tooth_spacing_mhz:
            raise ValueError("bandwidth_mhz must be >= 2 * tooth_spacing_mhz")

    @property
    def finesse(self) -> float:
        return self.tooth_spacing_mhz / self.tooth_fwhm_mhz

    @property
    def storage_time_ns(self) -> float:
        return 1e3 / self.tooth_spacing_mhz

    @property
    def n_teeth(self) -> int:
        return max(1, int(round(self.bandwidth_mhz / self.tooth_spacing_mhz)))

    def tooth_centers_mhz(self) -> np.ndarray:
        n = self.n_teeth
        return (np.arange(n) - (n - 1) / 2.0) * self.tooth_spacing_mhz

    def scaled(self, factor: float) -> "CombSpec":
        """Same comb with both optical depths multiplied by ``factor``."""
        return replace(
            self,
            peak_optical_depth=self.peak_optical_depth * factor,
            background_depth=self.background_depth * factor,
        )


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform frequency grid shared by the FFT propagator.

    ``freqs_mhz`` is ascending and centred on zero; the matching time grid has
    step ``1000/span_mhz`` ns and covers ``1000/resolution_mhz`` ns.
    """

    n_points: int
    span_mhz: float

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ValueError("n_points must be a power of two")
        if not self.span_mhz > 0:
            raise ValueError("span_mhz must be > 0")

    @property
    def resolution_mhz(self) -> float:
        return self.span_mhz / self.n_points

    @property
    def dt_ns(self) -> float:
        return 1e3 / self.span_mhz

    @property
    def window_ns(self) -> float:
        return self.n_points * self.dt_ns

    @property
    def freqs_mhz(self) -> np.ndarray:
        return np.fft.fftshift(np.fft.fftfreq(self.n_points, d=1.0 / self.span_mhz))

    def check_resolves(self, spec: CombSpec) -> None:
        if self.resolution_mhz > spec.tooth_fwhm_mhz / 10.0:
            raise GridTooCoarseError(
                f"grid resolution {self.resolution_mhz:.4g} MHz exceeds tooth_fwhm/10 "
                f"= {spec.tooth_fwhm_mhz / 10:.4g} MHz"
            )
        if self.span_mhz < 4.0 * spec.bandwidth_mhz:
            raise GridTooCoarseError(
                f"grid span {self.span_mhz:.4g} MHz is below 4 x comb bandwidth"
            )

    @classmethod
    def for_comb(cls, spec: CombSpec, oversample: float = 1.0) -> "SpectralGrid":
        """Smallest power-of-two grid satisfying the resolution and span rules."""
        span = 4.0 * spec.bandwidth_mhz
        res = spec.tooth_fwhm_mhz / (10.0 * oversample)
        n = 1 << int(np.ceil(np.log2(span / res)))
        return cls(n_points=n, span_mhz=span)


@dataclass(frozen=True)
class TransferFunction:
    grid: SpectralGrid
    amplitude: np.ndarray  # complex, ascending frequency order
    alpha: np.ndarray | None = field(default=None, repr=False)
    phase: np.ndarray | None = field(default=None, repr=False)

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        if other.grid != self.grid:
            raise ValueError("transfer functions live on different grids")
        return TransferFunction(self.grid, self.amplitude * other.amplitude)

    def with_phase(self, radians: float) -> "TransferFunction":
        """Multiply by a frequency-independent phase factor."""
        return TransferFunction(self.grid, self.amplitude * np.exp(1j * radians), self.alpha, self.phase)


@dataclass(frozen=True)
class PulseWaveform:
    t0_ns: float
    dt_ns: float
    envelope: np.ndarray

    @property
    def times_ns(self) -> np.ndarray:
        return self.t0_ns + self.dt_ns * np.arange(self.envelope.size)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.envelope) ** 2

    @property
    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.dt_ns)

    def window_energy(self, start_ns: float, stop_ns: float) -> float:
        t = self.times_ns
        sel = (t >= start_ns) & (t < stop_ns)
        return float(np.sum(self.intensity[sel]) * self.dt_ns)


@dataclass(frozen=True)
class Echo:
    order: int
    center_time_ns: float
    efficiency: float


@dataclass(frozen=True)
class EchoReport:
    transmitted_fraction: float
    echoes: tuple[Echo, ...]

    def efficiency(self, order: int) -> float:
        for e in self.echoes:
            if e.order == order:
                return e.efficiency
        raise KeyError(order)

    def as_dict(self) -> dict:
        return {
            "transmitted_fraction": self.transmitted_fraction,
            "echoes": [
                {"order": e.order, "center_time_ns": e.center_time_ns, "efficiency": e.efficiency}
                for e in self.echoes
            ],
        }


def _tooth(x: np.ndarray, fwhm: float, shape: ToothShape) -> np.ndarray:
    if shape is ToothShape.GAUSSIAN:
        return np.exp(-_FOUR_LN2 * (x / fwhm) ** 2)
    if shape is ToothShape.LORENTZIAN:
        return 1.0 / (1.0 + (2.0 * x / fwhm) ** 2)
    return (np.abs(x) <= fwhm / 2.0).astype(float)


def comb_absorption(spec: CombSpec, freqs_mhz: np.ndarray) -> np.ndarray:
    """Evaluate the comb absorption at arbitrary frequencies (no grid checks)."""
    freqs_mhz = np.asarray(freqs_mhz, dtype=float)
    alpha = np.full(freqs_mhz.shape, float(spec.background_depth))
    if spec.peak_optical_depth == 0:
        return alpha
    for c in spec.tooth_centers_mhz():
        alpha += spec.peak_optical_depth * _tooth(freqs_mhz - c, spec.tooth_fwhm_mhz, spec.tooth_shape)
    return alpha


def build_absorption_profile(spec: CombSpec, grid: SpectralGrid) -> np.ndarray:
    """Absorption exponent alpha(nu) of the comb sampled on ``grid``.

    Teeth sit on a lattice of spacing ``Delta`` symmetric about zero and fill
    ``bandwidth_mhz``; outside the band only ``background_depth`` remains.
    """
    grid.check_resolves(spec)
    return comb_absorption(spec, grid.freqs_mhz)


def _causal_response(alpha: np.ndarray) -> np.ndarray:
    # alpha in ascending order -> complex L with Re L = alpha and a causal
    # impulse response (negative lags zeroed, positive lags doubled).
    n = alpha.size
    a = np.fft.ifft(np.fft.ifftshift(alpha))
    weights = np.zeros(n)
    weights[0] = 1.0
    weights[1 : n // 2] = 2.0
    weights[n // 2] = 1.0
    return np.fft.fftshift(np.fft.fft(a * weights))


def dispersion_phase(alpha: np.ndarray, grid: SpectralGrid | None = None) -> np.ndarray:
    """Kramers-Kronig phase partner of an absorption profile.

    Returns ``phi`` such that ``exp(-alpha/2 + i phi)`` is the transfer
    function of a causal medium. The edge value of ``alpha`` is removed first
    (a constant has no dispersion), so ``phi`` is defined up to that constant.
    ``grid`` is accepted for symmetry with the other builders; the transform
    only needs uniform sampling.
    """
    alpha = np.asarray(alpha, dtype=float)
    if grid is not None and alpha.size != grid.n_points:
        raise ValueError("alpha does not match grid size")
    baseline = 0.5 * (alpha[0] + alpha[-1])
    resp = _causal_response(alpha - baseline)
    return -0.5 * resp.imag


def transfer_function(spec: CombSpec, grid: SpectralGrid, dispersion: bool = True) -> TransferFunction:
    alpha = build_absorption_profile(spec, grid)
    phi = dispersion_phase(alpha, grid) if dispersion else np.zeros_like(alpha)
    return TransferFunction(grid, np.exp(-0.5 * alpha + 1j * phi), alpha, phi)


def gaussian_pulse(
    grid: SpectralGrid, fwhm_ns: float = 25.0, center_ns: float = 0.0, t0_ns: float | None = None
) -> PulseWaveform:
    """Unit-energy Gaussian envelope whose intensity FWHM is ``fwhm_ns``.

    By default the time axis starts ``n/8`` samples before zero so that
    ``t = 0`` is a grid point and several echo periods fit after the pulse.
    """
    dt = grid.dt_ns
    if t0_ns is None:
        t0_ns = -(grid.n_points // 8) * dt
    t = t0_ns + dt * np.arange(grid.n_points)
    sigma = fwhm_ns / (2.0 * np.sqrt(np.log(2.0)))  # intensity exp(-t^2/sigma^2)
    env = np.exp(-0.5 * ((t - center_ns) / sigma) ** 2).astype(complex)
    env /= np.sqrt(np.sum(np.abs(env) ** 2) * dt)
    return PulseWaveform(t0_ns, dt, env)


def pulse_spectrum(pulse: PulseWaveform) -> np.ndarray:
    """Complex spectrum in ascending frequency order (grid of the pulse)."""
    return np.fft.fftshift(np.fft.fft(pulse.envelope))


def _check_pulse(pulse: PulseWaveform, tf: TransferFunction, edge_fraction: float = 0.05) -> np.ndarray:
    grid = tf.grid
    if pulse.envelope.size != grid.n_points or not np.isclose(pulse.dt_ns, grid.dt_ns):
        raise ValueError("pulse sampling does not match the transfer-function grid")
    spec = pulse_spectrum(pulse)
    power = np.abs(spec) ** 2
    total = power.sum()
    if total == 0:
        return spec
    nu = grid.freqs_mhz
    edge = np.abs(nu) > (0.5 - edge_fraction) * grid.span_mhz
    if power[edge].sum() > 1e-6 * total:
        raise SpectralLeakageError("pulse spectrum extends to the edge of the grid span")
    return spec


def propagate_pulse(pulse: PulseWaveform, tf: TransferFunction) -> PulseWaveform:
    """Pass a pulse through a linear medium: inverse FFT of spectrum x t(nu)."""
    spec = _check_pulse(pulse, tf)
    out = np.fft.ifft(np.fft.ifftshift(spec * tf.amplitude))
    return PulseWaveform(pulse.t0_ns, pulse.dt_ns, out)


def spectral_average(pulse: PulseWaveform, tf: TransferFunction, delay_ns: float = 0.0) -> complex:
    """Overlap of the output with the input delayed by ``delay_ns``, per unit input energy.

    Equivalent to averaging ``t(nu) exp(2 pi i nu delay)`` over the pulse
    power spectrum. With ``delay_ns = 0`` this is the direct transmission
    amplitude, with ``delay_ns = 1/Delta`` the first-echo recall amplitude.
    """
    spec = _check_pulse(pulse, tf)
    power = np.abs(spec) ** 2
    phase = np.exp(2j * np.pi * tf.grid.freqs_mhz * delay_ns * 1e-3)
    return complex(np.sum(power * tf.amplitude * phase) / np.sum(power))


def extract_echoes(
    out: PulseWaveform,
    tooth_spacing_mhz: float,
    n_max: int = 2,
    gate_ns: float = 50.0,
    *,
    input_energy: float,
) -> EchoReport:
    """Gate the output around ``n/Delta`` and measure echo energies.

    The transmitted window covers half a period either side of ``t = 0`` so
    that an undisturbed pulse counts fully; echo gates are ``gate_ns`` wide.
    """
    period = 1e3 / tooth_spacing_mhz
    if gate_ns >= period:
        raise OverlappingGatesError(f"gate {gate_ns} ns is not shorter than the period {period:.4g} ns")
    if input_energy <= 0:
        raise ValueError("input_energy must be > 0")
    transmitted = out.window_energy(-period / 2, period / 2) / input_energy
    t = out.times_ns
    inten = out.intensity
    echoes = []
    for n in range(1, n_max + 1):
        c = n * period
        sel = (t >= c - gate_ns / 2) & (t < c + gate_ns / 2)
        energy = float(np.sum(inten[sel]) * out.dt_ns)
        centroid = float(np.sum(t[sel] * inten[sel]) / np.sum(inten[sel])) if energy > 0 else c
        echoes.append(Echo(n, centroid, energy / input_energy))
    return EchoReport(transmitted, tuple(echoes))


def analytic_efficiency(spec: CombSpec) -> float:
    """Forward-recall first-echo efficiency for Gaussian teeth.

    ``(d/F)^2 exp(-d/F) exp(-7/F^2) exp(-d0)``, the usual closed-form estimate.
    """
    if spec.tooth_shape is not ToothShape.GAUSSIAN:
        raise UnsupportedShapeError(f"analytic efficiency needs gaussian teeth, got {spec.tooth_shape.value}")
    F = spec.finesse
    if F < 2:
        raise ValueError(f"analytic efficiency requires finesse >= 2 (got {F:.3g})")
    dt = spec.peak_optical_depth / F
    return float(dt**2 * np.exp(-dt) * np.exp(-7.0 / F**2) * np.exp(-spec.background_depth))


def rephasing_factor(finesse: float) -> float:
    """Intensity rephasing factor of Gaussian teeth at t = 1/Delta.

    Exact form ``exp(-pi^2 / (2 ln2 F^2))``; the constant 7.12 is usually
    rounded to 7.
    """
    return float(np.exp(-np.pi**2 / (2 * np.log(2.0)) / finesse**2))


@dataclass(frozen=True)
class SampledProfile:
    """Absorption produced by a pumping sequence, sampled on ``freqs_mhz``."""

    freqs_mhz: np.ndarray
    alpha: np.ndarray
    alpha0: float
    floor: float

    def periodicity_mhz(self, band_mhz: float) -> float:
        """Dominant spectral period of the profile inside ``|nu| < band/2``."""
        sel = np.abs(self.freqs_mhz) < band_mhz / 2
        a = self.alpha[sel] - self.alpha[sel].mean()
        df = self.freqs_mhz[1] - self.freqs_mhz[0]
        n = 1 << int(np.ceil(np.log2(a.size * 16)))
        spec = np.abs(np.fft.rfft(a, n))
        q = np.fft.rfftfreq(n, d=df)
        k = int(np.argmax(spec[1:])) + 1
        return float(1.0 / q[k])

    def bandwidth_mhz(self, threshold: float = 0.5) -> float:
        """Width of the region where the profile has been bleached appreciably."""
        drop = (self.alpha0 - self.alpha) / max(self.alpha0 - self.floor, 1e-300)
        hit = np.nonzero(drop > threshold)[0]
        if hit.size == 0:
            return 0.0
        return float(self.freqs_mhz[hit[-1]] - self.freqs_mhz[hit[0]])


def prep_sequence_to_comb(
    sweep_mhz: float,
    sweep_us: float,
    repeats: int,
    step_amplitudes,
    alpha0: float,
    *,
    kappa: float = 1.0,
    floor: float = 0.0,
    pump_linewidth_mhz: float = 0.5,
    freqs_mhz: np.ndarray | None = None,
) -> SampledProfile:
    """Phenomenological spectral hole burning by a stepped frequency sweep.

    Step ``k`` of ``len(step_amplitudes)`` sits at the centre of its slice of
    the sweep for ``sweep_us/n`` microseconds. Its pump power (amplitude
    squared) times dwell is spread over a Gaussian of ``pump_linewidth_mhz``
    FWHM, standing in for power broadening. The absorption bleaches as

        alpha = (alpha0 - floor) * exp(-kappa * repeats * P(nu)) + floor

    so an unpumped frequency keeps ``alpha0``. ``kappa`` is a fit constant.
    """
    amps = np.asarray(step_amplitudes, dtype=float)
    if np.any(amps < 0):
        raise ValueError("step_amplitudes must be >= 0")
    if freqs_mhz is None:
        freqs_mhz = np.linspace(-sweep_mhz, sweep_mhz, 8001)
    freqs_mhz = np.asarray(freqs_mhz, dtype=float)
    n = amps.size
    step = sweep_mhz / n
    centers = -sweep_mhz / 2 + (np.arange(n) + 0.5) * step
    dwell = sweep_us / n
    sigma = pump_linewidth_mhz / (2 * np.sqrt(2 * np.log(2)))
    density = np.zeros_like(freqs_mhz)
    active = np.nonzero(amps)[0]
    for k in active:
        density += amps[k] ** 2 * dwell * np.exp(-0.5 * ((freqs_mhz - centers[k]) / sigma) ** 2)
    density /= sigma * np.sqrt(2 * np.pi)
    alpha = (alpha0 - floor) * np.exp(-kappa * repeats * density) + floor
    if active.size == 0:
        alpha = np.full_like(freqs_mhz, float(alpha0))
    return SampledProfile(freqs_mhz, alpha, float(alpha0), float(floor))
