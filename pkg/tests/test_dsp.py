import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fmnd.dsp import (AudioSignal, BasebandSignal, FmParams, fm_modulate_baseband,
                      instantaneous_frequency, integrate_phase, read_fmbb, resample, write_fmbb)
from fmnd.conventional import fm_demodulate_conventional
from helpers import bandlimited, snr_db

FM = FmParams()
MID = slice(2000, -2000)

messages = arrays(np.float64, st.integers(1, 400),
                  elements=st.floats(-1.0, 1.0, allow_nan=False))
# magnitudes far from the subnormal range, where power-of-two scaling is exact
normal_messages = arrays(np.float64, st.integers(1, 400), elements=st.one_of(
    st.just(0.0), st.floats(1e-290, 1.0), st.floats(-1.0, -1e-290)))


def test_types_reject_bad_values():
    with pytest.raises(ValueError):
        AudioSignal([0.0, np.nan], 48_000)
    with pytest.raises(ValueError):
        AudioSignal([0.0], 0)
    with pytest.raises(ValueError):
        BasebandSignal([0.0, 1.0], [0.0], 240_000)
    with pytest.raises(ValueError):
        FmParams(baseband_rate_hz=250_000)
    with pytest.raises(ValueError):
        FmParams(freq_deviation_hz=130_000)
    assert FM.samples_per_audio_sample == 5


def test_resample_preserves_dc():
    y = resample(AudioSignal(np.full(1600, 0.5), 16_000), 48_000)
    assert y.sample_rate_hz == 48_000
    np.testing.assert_allclose(y.samples[600:-600], 0.5, atol=1e-6)


def test_resample_up_by_five_gives_five_n():
    x = AudioSignal(np.random.default_rng(0).standard_normal(1234), 48_000)
    assert len(resample(x, 240_000)) == 5 * 1234


def test_resample_sine_amplitude():
    t16 = np.arange(16_000) / 16_000
    y = resample(AudioSignal(np.sin(2 * np.pi * 1000 * t16), 16_000), 48_000)
    t48 = np.arange(len(y)) / 48_000
    ref = np.sin(2 * np.pi * 1000 * t48)
    mid = slice(4800, -4800)
    assert np.max(np.abs(y.samples[mid] - ref[mid])) < 1e-3


@given(st.sampled_from([8000, 16000, 22050, 44100, 240000]), st.integers(0, 2000))
def test_resample_duration(rate, n):
    x = AudioSignal(np.zeros(n), 48_000)
    y = resample(x, rate)
    assert abs(len(y) / rate - n / 48_000) <= 1.0 / rate


def test_resample_empty():
    assert len(resample(AudioSignal(np.zeros(0), 16_000), 48_000)) == 0


def test_resampler_round_trip():
    x = bandlimited(48_000, cutoff=15_000.0, seed=1)
    y = resample(resample(x, 240_000), 48_000)
    assert snr_db(x.samples[MID], y.samples[MID]) >= 50.0


def test_integrate_phase_examples():
    zero = integrate_phase(AudioSignal(np.zeros(10), 240_000), FM)
    assert np.all(zero == 0.0)
    ones = integrate_phase(AudioSignal(np.ones(8), 240_000), FM)
    np.testing.assert_allclose(ones, 2 * np.pi * 0.3125 * np.arange(1, 9), rtol=1e-14)
    alt = integrate_phase(AudioSignal(np.tile([1.0, -1.0], 5), 240_000), FM)
    np.testing.assert_allclose(alt[0::2], 2 * np.pi * 75_000 / 240_000)
    np.testing.assert_allclose(alt[1::2], 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        integrate_phase(AudioSignal(np.zeros(4), 48_000), FM)


@given(normal_messages, st.integers(-8, 8))
def test_integrate_phase_is_linear(x, k):
    # power-of-two scaling is exact in binary floating point
    a = 2.0**k
    base = integrate_phase(AudioSignal(x, 240_000), FM)
    assert np.array_equal(integrate_phase(AudioSignal(a * x, 240_000), FM), a * base)


@given(messages, st.floats(-3.0, 3.0))
def test_integrate_phase_scaling(x, a):
    base = integrate_phase(AudioSignal(x, 240_000), FM)
    scaled = integrate_phase(AudioSignal(a * x, 240_000), FM)
    np.testing.assert_allclose(scaled, a * base, rtol=1e-12, atol=1e-12)


def test_modulate_zero_message():
    bb = fm_modulate_baseband(AudioSignal(np.zeros(100), 48_000), FmParams(carrier_amplitude=2.0))
    assert np.all(bb.i == 2.0) and np.all(bb.q == 0.0)
    assert len(bb) == 500


@given(messages, st.floats(0.1, 10.0))
def test_envelope_invariance(x, amp):
    bb = fm_modulate_baseband(AudioSignal(x, 48_000), FmParams(carrier_amplitude=amp))
    assert np.all(np.abs(bb.i**2 + bb.q**2 - amp**2) < 1e-9 * amp**2)


def test_constant_message_tone():
    c = 0.4
    bb = fm_modulate_baseband(AudioSignal(np.full(4800, c), 48_000), FM)
    z = bb.z[2000:-2000]
    spec = np.abs(np.fft.fft(z))
    freqs = np.fft.fftfreq(z.size, 1 / 240_000)
    peak = freqs[np.argmax(spec)]
    assert abs(peak - c * 75_000) <= 240_000 / z.size


def test_instantaneous_frequency_examples():
    zero = instantaneous_frequency(BasebandSignal(np.ones(50), np.zeros(50), 240_000))
    assert np.all(zero == 0.0)
    c = -0.3
    bb = fm_modulate_baseband(AudioSignal(np.full(2000, c), 48_000), FM)
    f = instantaneous_frequency(bb)
    assert f[0] == 0.0 and f.size == len(bb)
    np.testing.assert_allclose(f[2000:-2000], c * 75_000, rtol=1e-6)
    i = bb.i.copy()
    q = bb.q.copy()
    i[500], q[500] = -i[500], -q[500]
    g = instantaneous_frequency(BasebandSignal(i, q, 240_000))
    assert np.all(np.isfinite(g)) and np.max(np.abs(g)) <= 120_000
    dead = instantaneous_frequency(BasebandSignal(np.zeros(4), np.zeros(4), 240_000))
    assert np.all(dead == 0.0)


@pytest.mark.parametrize("cutoff", [5_000.0, 15_000.0, 20_000.0])
def test_demodulation_identity(cutoff):
    x = bandlimited(24_000, cutoff=cutoff, seed=3)
    y = fm_demodulate_conventional(fm_modulate_baseband(x, FM), FM)
    assert snr_db(x.samples[MID], y.samples[MID]) >= 40.0


def test_fmbb_round_trip(tmp_path):
    bb = fm_modulate_baseband(bandlimited(480, seed=2), FM)
    path = tmp_path / "x.fmbb"
    write_fmbb(bb, path)
    raw = path.read_bytes()
    assert raw[:4] == b"FMBB" and len(raw) == 16 + 8 * len(bb)
    back = read_fmbb(path)
    assert back.sample_rate_hz == 240_000
    np.testing.assert_allclose(back.i, bb.i, atol=1e-7)
    np.testing.assert_allclose(back.q, bb.q, atol=1e-7)


def test_fmbb_rejects_garbage(tmp_path):
    path = tmp_path / "bad.fmbb"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        read_fmbb(path)
    assert math.isclose(FM.freq_deviation_hz / FM.baseband_rate_hz, 0.3125)
