"""Jones calculus for the two-crystal polarization memory and its analysis optics.

Lab basis: H = (1, 0) parallel to the crystal c-axis, V = (0, 1). Wave-plate
convention: ``R(-theta) diag(1, exp(i Gamma)) R(theta)``, so a half-wave
plate at 0 deg maps (a, b) -> (a, -b) and at 45 deg swaps H and V.

Memory elements carry two 2x2 maps: the direct pass (t ~ 0) and the first
echo (t ~ 1/Delta). Chaining elements keeps terms up to first echo order:
``(A B)_echo = A_pass B_echo + A_echo B_pass``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comb import CombSpec, PulseWaveform, SpectralGrid, spectral_average, transfer_function

SQ2 = np.sqrt(2.0)

STATES = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / SQ2,
    "A": np.array([1, -1], dtype=complex) / SQ2,
    "R": np.array([1, 1j], dtype=complex) / SQ2,
    "L": np.array([1, -1j], dtype=complex) / SQ2,
}

# (qwp_deg, hwp_deg) for the analysis stage; '+' port = H after the plates
ANALYSIS_SETTINGS = {
    "Z": (0.0, 0.0),
    "X": (45.0, 22.5),
    "Y": (45.0, 0.0),
}


def jones_vector(label: str) -> np.ndarray:
    return STATES[label].copy()


def rotation(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s], [-s, c]], dtype=complex)


def retarder(retardance_rad: float, angle_deg: float = 0.0) -> np.ndarray:
    core = np.diag([1.0, np.exp(1j * retardance_rad)])
    return rotation(-angle_deg) @ core @ rotation(angle_deg)


def waveplate(kind: str, angle_deg: float) -> np.ndarray:
    """Half- or quarter-wave plate with its fast axis at ``angle_deg``."""
    if kind == "half":
        return retarder(np.pi, angle_deg)
    if kind == "quarter":
        return retarder(np.pi / 2, angle_deg)
    raise ValueError(f"unknown waveplate kind {kind!r}")


def phase_plate(theta_deg: float) -> np.ndarray:
    """Variable retarder with axes along H/V adding ``theta`` to V."""
    return np.diag([1.0, np.exp(1j * np.deg2rad(theta_deg))])


@dataclass(frozen=True)
class MemoryElement:
    """One crystal: direct and first-echo amplitudes for H and V light."""

    pass_h: complex
    pass_v: complex
    echo_h: complex
    echo_v: complex

    def __post_init__(self):
        for name in ("pass_h", "pass_v", "echo_h", "echo_v"):
            if abs(getattr(self, name)) > 1 + 1e-12:
                raise ValueError(f"|{name}| exceeds 1")

    @property
    def pass_matrix(self) -> np.ndarray:
        return np.diag([self.pass_h, self.pass_v])

    @property
    def echo_matrix(self) -> np.ndarray:
        return np.diag([self.echo_h, self.echo_v])

    @classmethod
    def from_comb(
        cls,
        spec: CombSpec,
        grid: SpectralGrid,
        pulse: PulseWaveform,
        v_depth_ratio: float = 0.05,
        phase_h_rad: float = 0.0,
        phase_v_rad: float = 0.0,
    ) -> "MemoryElement":
        """Spectrally averaged amplitudes of a crystal whose comb sits on the H transition.

        V light sees the same comb scaled by ``v_depth_ratio``. Static phases
        model the crystal's birefringence.
        """
        tau = spec.storage_time_ns
        tf_h = transfer_function(spec, grid)
        tf_v = transfer_function(spec.scaled(v_depth_ratio), grid)
        ph, pv = np.exp(1j * phase_h_rad), np.exp(1j * phase_v_rad)
        return cls(
            pass_h=spectral_average(pulse, tf_h) * ph,
            pass_v=spectral_average(pulse, tf_v) * pv,
            echo_h=spectral_average(pulse, tf_h, tau) * ph,
            echo_v=spectral_average(pulse, tf_v, tau) * pv,
        )

    @classmethod
    def flat(cls, depth_h: float, depth_v: float) -> "MemoryElement":
        """Unstructured absorber: attenuation only, no echo."""
        return cls(np.exp(-depth_h / 2), np.exp(-depth_v / 2), 0.0, 0.0)


def birefringent_phase(length_mm: float, birefringence: float, wavelength_nm: float) -> float:
    """Extra phase of extraordinary (H) over ordinary (V) light, in radians."""
    return 2 * np.pi * birefringence * length_mm * 1e6 / wavelength_nm


@dataclass(frozen=True)
class DeviceChain:
    """Crystal1, HWP3, Crystal2, phase plate, HWP4 in propagation order.

    Collection optics only attenuate and are folded into the noise model's
    path transmission. The analysis QWP2/HWP5/Wollaston stage is applied per
    measurement by :func:`analyze_port`.
    """

    crystal1: MemoryElement
    crystal2: MemoryElement
    hwp3_deg: float = 45.0
    phase_plate_deg: float = 0.0
    hwp4_deg: float = 45.0

    def elements(self) -> list[tuple[np.ndarray, np.ndarray]]:
        zero = np.zeros((2, 2), dtype=complex)
        return [
            (self.crystal1.pass_matrix, self.crystal1.echo_matrix),
            (waveplate("half", self.hwp3_deg), zero),
            (self.crystal2.pass_matrix, self.crystal2.echo_matrix),
            (phase_plate(self.phase_plate_deg), zero),
            (waveplate("half", self.hwp4_deg), zero),
        ]

    def with_phase_plate(self, theta_deg: float) -> "DeviceChain":
        return DeviceChain(self.crystal1, self.crystal2, self.hwp3_deg, theta_deg, self.hwp4_deg)


def _compose(chain: DeviceChain) -> tuple[np.ndarray, np.ndarray]:
    pass_total = np.eye(2, dtype=complex)
    echo_total = np.zeros((2, 2), dtype=complex)
    for p, e in chain.elements():
        echo_total = p @ echo_total + e @ pass_total
        pass_total = p @ pass_total
    return pass_total, echo_total


def echo_channel_matrix(chain: DeviceChain) -> np.ndarray:
    """Jones map of the light leaving in the first-echo time gate."""
    return _compose(chain)[1]


def transmitted_channel_matrix(chain: DeviceChain) -> np.ndarray:
    """Jones map of the light transmitted without storage (t ~ 0)."""
    return _compose(chain)[0]


def pure_identity_fidelity(m: np.ndarray) -> float:
    """Process fidelity to the identity of the single-Kraus channel ``m``."""
    m = np.asarray(m)
    return float(abs(np.trace(m)) ** 2 / (2 * np.real(np.trace(m.conj().T @ m))))


def analysis_unitary(qwp_deg: float, hwp_deg: float) -> np.ndarray:
    return waveplate("half", hwp_deg) @ waveplate("quarter", qwp_deg)


def analyze_port(state, qwp_deg: float, hwp_deg: float, port: str) -> float:
    """Probability of a click behind the Wollaston port ``'+'`` (H) or ``'-'`` (V)."""
    out = analysis_unitary(qwp_deg, hwp_deg) @ np.asarray(state, dtype=complex)
    if port == "+":
        return float(abs(out[0]) ** 2)
    if port == "-":
        return float(abs(out[1]) ** 2)
    raise ValueError(f"port must be '+' or '-', got {port!r}")


def analysis_projector(setting: str, port: str) -> np.ndarray:
    """Projector realised by one analysis setting and Wollaston port."""
    u = analysis_unitary(*ANALYSIS_SETTINGS[setting])
    e = np.array([1, 0] if port == "+" else [0, 1], dtype=complex)
    psi = u.conj().T @ e
    return np.outer(psi, psi.conj())
