import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal as sps

from fmnd.channel import ChannelSpec
from fmnd.conventional import (EmphasisParams, broadcast_chain_reference, deemphasis,
                               fm_demodulate_conventional, preemphasis)
from fmnd.dsp import AudioSignal, BasebandSignal, FmParams, fm_modulate_baseband
from helpers import bandlimited, snr_db

FM = FmParams()
EMPH = EmphasisParams()
MID = slice(2000, -2000)


def test_emphasis_params():
    assert math.isclose(EMPH.pole, math.exp(-1 / (75e-6 * 48_000)))
    assert abs(EMPH.corner_hz - 2122.0) < 1.0
    with pytest.raises(ValueError):
        EmphasisParams(time_constant_s=1e-5, sample_rate_hz=48_000)


def test_dc_gain_is_unity():
    x = AudioSignal(np.full(3000, 0.3), 48_000)
    np.testing.assert_allclose(preemphasis(x, EMPH).samples[1000:], 0.3, rtol=1e-12)
    np.testing.assert_allclose(deemphasis(x, EMPH).samples[1000:], 0.3, rtol=1e-9)


@given(arrays(np.float64, st.integers(12, 500), elements=st.floats(-1, 1)))
def test_emphasis_filters_are_inverse(x):
    audio = AudioSignal(x, 48_000)
    back = deemphasis(preemphasis(audio, EMPH), EMPH).samples
    assert np.max(np.abs(back[10:] - x[10:])) < 1e-10


def test_deemphasis_impulse_response():
    imp = np.zeros(50)
    imp[0] = 1.0
    y = deemphasis(AudioSignal(imp, 48_000), EMPH).samples
    np.testing.assert_allclose(y[1:] / y[:-1], EMPH.pole, rtol=1e-12)


def test_preemphasis_response():
    x = AudioSignal(np.random.default_rng(0).standard_normal(480_000), 48_000)
    f, pxx = sps.welch(x.samples, 48_000, nperseg=4096)
    _, pyy = sps.welch(preemphasis(x, EMPH).samples, 48_000, nperseg=4096)
    gain = 10 * np.log10(pyy / pxx)
    a = EMPH.pole
    for hz in (100, 1000, 2122, 4000, 8000, 12000):
        k = np.argmin(np.abs(f - hz))
        w = 2 * np.pi * f[k] / 48_000
        expected = 20 * np.log10(abs(1 - a * np.exp(-1j * w)) / (1 - a))
        assert abs(gain[k] - expected) < 0.1
    k = lambda hz: np.argmin(np.abs(f - hz))  # noqa: E731
    # about 3 dB at the corner, then rising toward +6 dB per octave
    assert abs(gain[k(2122)] - 3.0) < 0.1
    assert gain[k(8000)] - gain[k(4000)] > 4.5


def test_streaming_matches_whole():
    x = AudioSignal(np.random.default_rng(1).standard_normal(1000), 48_000)
    whole = preemphasis(x, EMPH).samples
    a, zf = preemphasis(AudioSignal(x.samples[:400], 48_000), EMPH, zi=np.zeros(1))
    b, _ = preemphasis(AudioSignal(x.samples[400:], 48_000), EMPH, zi=zf)
    np.testing.assert_allclose(np.concatenate([a.samples, b.samples]), whole, rtol=1e-12)


def test_demod_round_trip_and_zero():
    x = bandlimited(24_000, seed=4)
    y = fm_demodulate_conventional(fm_modulate_baseband(x, FM), FM)
    assert y.sample_rate_hz == 48_000 and len(y) == len(x)
    assert snr_db(x.samples[MID], y.samples[MID]) >= 40.0
    zero = fm_demodulate_conventional(BasebandSignal(np.ones(1000), np.zeros(1000), 240_000), FM)
    assert np.max(np.abs(zero.samples)) < 1e-9
    with pytest.raises(ValueError):
        fm_demodulate_conventional(BasebandSignal(np.ones(10), np.zeros(10), 48_000), FM)


@given(st.floats(0.01, 100.0))
def test_amplitude_invariance(scale):
    bb = fm_modulate_baseband(bandlimited(600, seed=5), FM)
    ref = fm_demodulate_conventional(bb, FM).samples
    scaled = BasebandSignal(scale * bb.i, scale * bb.q, bb.sample_rate_hz)
    np.testing.assert_allclose(fm_demodulate_conventional(scaled, FM).samples, ref,
                               rtol=0, atol=1e-12)


def test_sine_gain():
    t = np.arange(9600) / 48_000
    x = AudioSignal(0.5 * np.sin(2 * np.pi * 1000 * t), 48_000)
    y = fm_demodulate_conventional(fm_modulate_baseband(x, FM), FM).samples[MID]
    assert abs(np.max(np.abs(y)) / 0.5 - 1) < 0.01


def test_broadcast_chain(speech):
    clean = broadcast_chain_reference(speech, FM, ChannelSpec(), EMPH)
    assert snr_db(speech.samples[MID], clean.samples[MID]) >= 35.0
    noisy = broadcast_chain_reference(speech, FM, ChannelSpec(amplitude_snr_db=0.0, seed=1), EMPH)
    again = broadcast_chain_reference(speech, FM, ChannelSpec(amplitude_snr_db=0.0, seed=1), EMPH)
    assert np.array_equal(noisy.samples, again.samples)
    assert snr_db(speech.samples[MID], noisy.samples[MID]) < snr_db(speech.samples[MID],
                                                                     clean.samples[MID])
