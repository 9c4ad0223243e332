import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afc_memsim.config import load
from afc_memsim.polar import (
    ANALYSIS_SETTINGS,
    STATES,
    DeviceChain,
    MemoryElement,
    analysis_projector,
    analyze_port,
    birefringent_phase,
    echo_channel_matrix,
    pure_identity_fidelity,
    transmitted_channel_matrix,
    waveplate,
)
from afc_memsim.runner import build_device, null_phase


def _element(echo=0.3, pass_h=0.5, pass_v=0.95, phase=0.0):
    ph = np.exp(1j * phase)
    return MemoryElement(pass_h * ph, pass_v, echo * ph, 0.01)


def test_half_wave_at_45_swaps():
    assert np.allclose(waveplate("half", 45) @ [1, 0], [0, 1])


def test_half_wave_at_0_flips_v():
    a, b = 0.3 + 0.1j, -0.7j
    assert np.allclose(waveplate("half", 0) @ [a, b], [a, -b])


def test_quarter_wave_at_45_gives_circular():
    out = waveplate("quarter", 45) @ [1, 0]
    assert np.allclose(np.abs(out), 1 / np.sqrt(2))
    assert abs(abs(np.angle(out[1] / out[0])) - np.pi / 2) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["half", "quarter"]), st.floats(-360, 360))
def test_waveplates_unitary(kind, angle):
    w = waveplate(kind, angle)
    assert np.max(np.abs(w.conj().T @ w - np.eye(2))) < 1e-12


def test_unknown_waveplate():
    with pytest.raises(ValueError):
        waveplate("full", 0)


def test_balanced_chain_is_identity():
    e = _element()
    m = echo_channel_matrix(DeviceChain(e, e))
    assert np.max(np.abs(m / m[0, 0] - np.eye(2))) < 1e-12
    assert abs(np.angle(m[0, 0] / m[1, 1])) < 1e-12


def test_diattenuation_from_weaker_second_crystal():
    e1 = MemoryElement(0.5, 0.95, 0.3, 0.0)
    e2 = MemoryElement(0.5, 0.95, 0.27, 0.0)
    m = echo_channel_matrix(DeviceChain(e1, e2))
    assert abs(m[0, 1]) < 1e-15 and abs(m[1, 0]) < 1e-15
    assert abs(m[0, 0] / m[1, 1]) == pytest.approx(1 / 0.9, rel=1e-12)
    closed = abs(m[0, 0] + m[1, 1]) ** 2 / (2 * (abs(m[0, 0]) ** 2 + abs(m[1, 1]) ** 2))
    assert pure_identity_fidelity(m) == pytest.approx(closed, rel=1e-14)


def test_length_mismatch_nulled_by_phase_plate():
    p1 = birefringent_phase(1.40, 0.21, 879.705)
    p2 = birefringent_phase(1.41, 0.21, 879.705)
    chain = DeviceChain(_element(phase=p1), _element(phase=p2))
    theta = null_phase(chain)
    expect = (-np.rad2deg(p1 - p2) + 180) % 360 - 180
    assert theta == pytest.approx(expect, abs=1e-6)
    m = echo_channel_matrix(chain.with_phase_plate(theta))
    assert np.max(np.abs(m / m[0, 0] - np.eye(2))) < 1e-8
    assert pure_identity_fidelity(m) >= pure_identity_fidelity(echo_channel_matrix(chain))


def test_identical_crystals_need_no_plate():
    e = _element()
    assert null_phase(DeviceChain(e, e)) == 0.0


def test_transmitted_limits():
    opaque = MemoryElement.flat(80.0, 80.0)
    assert np.max(np.abs(transmitted_channel_matrix(DeviceChain(opaque, opaque)))) < 1e-15
    clear = MemoryElement.flat(0.0, 0.0)
    m = transmitted_channel_matrix(DeviceChain(clear, clear))
    assert np.max(np.abs(m / m[0, 0] - np.eye(2))) < 1e-12


def test_transmitted_matrix_recomposes_flat_depths():
    d, d0, dv = 1.2, 0.1, 0.06
    e = MemoryElement.flat(d + d0, dv)
    m = transmitted_channel_matrix(DeviceChain(e, e))
    expect = np.exp(-(d + d0) / 2) * np.exp(-dv / 2)
    assert np.allclose(np.abs(m), expect * np.eye(2), atol=1e-15)


def test_calibrated_transmitted_matrix_recomposes_elements():
    dev = build_device(load("paper_200ns"))
    c1, c2 = dev.chain.crystal1, dev.chain.crystal2
    m = np.abs(transmitted_channel_matrix(dev.chain))
    assert sorted(np.diag(m)) == pytest.approx(sorted([abs(c1.pass_h * c2.pass_v), abs(c1.pass_v * c2.pass_h)]))
    assert m[0, 1] < 1e-15 and m[1, 0] < 1e-15


def test_echo_amplitudes_respect_depth_ratio():
    dev = build_device(load("paper_200ns"))
    c = dev.chain.crystal1
    assert abs(c.echo_v) < 0.1 * abs(c.echo_h)
    assert max(abs(c.pass_h), abs(c.pass_v), abs(c.echo_h), abs(c.echo_v)) <= 1


def test_memory_element_rejects_gain():
    with pytest.raises(ValueError):
        MemoryElement(1.1, 0.5, 0.1, 0.0)


@pytest.mark.parametrize(
    "state,setting,expect",
    [("H", "Z", (1.0, 0.0)), ("D", "X", (1.0, 0.0)), ("D", "Z", (0.5, 0.5)), ("R", "Y", (1.0, 0.0)), ("L", "Y", (0.0, 1.0))],
)
def test_analysis_examples(state, setting, expect):
    q, h = ANALYSIS_SETTINGS[setting]
    got = (analyze_port(STATES[state], q, h, "+"), analyze_port(STATES[state], q, h, "-"))
    assert got == pytest.approx(expect, abs=1e-12)


amp = st.floats(-1, 1)


@settings(max_examples=100, deadline=None)
@given(amp, amp, amp, amp, st.floats(0, 180), st.floats(0, 180))
def test_port_probabilities_sum_to_norm(a, b, c, d, q, h):
    psi = np.array([a + 1j * b, c + 1j * d]) / 2
    total = analyze_port(psi, q, h, "+") + analyze_port(psi, q, h, "-")
    assert total == pytest.approx(np.vdot(psi, psi).real, abs=1e-12)


def test_analysis_bases_mutually_unbiased():
    vecs = {}
    for s in ANALYSIS_SETTINGS:
        for port in "+-":
            w, v = np.linalg.eigh(analysis_projector(s, port))
            vecs[s, port] = v[:, -1]
        assert abs(np.vdot(vecs[s, "+"], vecs[s, "-"])) < 1e-12
    for (s1, s2) in itertools.combinations(ANALYSIS_SETTINGS, 2):
        for p1, p2 in itertools.product("+-", repeat=2):
            assert abs(np.vdot(vecs[s1, p1], vecs[s2, p2])) ** 2 == pytest.approx(0.5, abs=1e-12)
