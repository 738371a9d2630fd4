"""Conventional broadcast receiver: discriminator plus 75 us emphasis pair."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from fmnd.channel import ChannelSpec, add_amplitude_noise, add_message_noise
from fmnd.dsp import (
    AudioSignal,
    BasebandSignal,
    FmParams,
    _resample_array,
    fm_modulate_baseband,
    instantaneous_frequency,
)


@dataclass(frozen=True)
class EmphasisParams:
    time_constant_s: float = 75e-6
    sample_rate_hz: int = 48_000

    def __post_init__(self):
        if self.time_constant_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("time constant and sample rate must be positive")
        if self.time_constant_s * self.sample_rate_hz <= 1:
            raise ValueError(
                f"time constant {self.time_constant_s} s is not resolvable at "
                f"{self.sample_rate_hz} Hz (tau * fs must exceed 1)"
            )

    @property
    def pole(self) -> float:
        """Coefficient ``a = exp(-1 / (tau * fs))``."""
        return math.exp(-1.0 / (self.time_constant_s * self.sample_rate_hz))

    @property
    def corner_hz(self) -> float:
        return 1.0 / (2.0 * math.pi * self.time_constant_s)


def _check_rate(audio: AudioSignal, params: EmphasisParams) -> None:
    if audio.sample_rate_hz != params.sample_rate_hz:
        raise ValueError(
            f"audio rate {audio.sample_rate_hz} Hz does not match emphasis rate "
            f"{params.sample_rate_hz} Hz"
        )


def preemphasis_coefficients(params: EmphasisParams):
    a = params.pole
    return np.array([1.0, -a]) / (1.0 - a), np.array([1.0])


def deemphasis_coefficients(params: EmphasisParams):
    a = params.pole
    return np.array([1.0 - a]), np.array([1.0, -a])


def preemphasis(audio: AudioSignal, params: EmphasisParams, zi=None):
    """High-boost ``(x[n] - a x[n-1]) / (1 - a)``, unity gain at DC.

    With ``zi`` given (a length-1 state array) the filter runs in streaming
    mode and returns ``(audio, zf)``.
    """
    _check_rate(audio, params)
    b, a = preemphasis_coefficients(params)
    if zi is None:
        return AudioSignal(sps.lfilter(b, a, audio.samples), audio.sample_rate_hz)
    y, zf = sps.lfilter(b, a, audio.samples, zi=np.asarray(zi, dtype=float))
    return AudioSignal(y, audio.sample_rate_hz), zf


def deemphasis(audio: AudioSignal, params: EmphasisParams, zi=None):
    """One-pole low-pass ``y[n] = (1 - a) x[n] + a y[n-1]``; inverse of :func:`preemphasis`."""
    _check_rate(audio, params)
    b, a = deemphasis_coefficients(params)
    if zi is None:
        return AudioSignal(sps.lfilter(b, a, audio.samples), audio.sample_rate_hz)
    y, zf = sps.lfilter(b, a, audio.samples, zi=np.asarray(zi, dtype=float))
    return AudioSignal(y, audio.sample_rate_hz), zf


def fm_demodulate_conventional(bb: BasebandSignal, params: FmParams) -> AudioSignal:
    """Discriminate, scale by the deviation, and decimate to the audio rate.

    Decimation reuses the zero-phase polyphase resampler, so the output is
    time-aligned with the transmitted message.
    """
    if bb.sample_rate_hz != params.baseband_rate_hz:
        raise ValueError(
            f"baseband rate {bb.sample_rate_hz} Hz does not match "
            f"{params.baseband_rate_hz} Hz"
        )
    x = instantaneous_frequency(bb) / params.freq_deviation_hz
    y = _resample_array(x, params.baseband_rate_hz, params.audio_rate_hz)
    return AudioSignal(y, params.audio_rate_hz)


def broadcast_chain_reference(
    audio: AudioSignal,
    fm: FmParams,
    ch: ChannelSpec,
    emph: EmphasisParams,
) -> AudioSignal:
    """Message noise, pre-emphasis, modulation, channel, discriminator, de-emphasis."""
    msg = add_message_noise(audio, ch.message_snr_db, ch.message_seed)
    tx = preemphasis(msg, emph)
    bb = fm_modulate_baseband(tx, fm)
    rx = add_amplitude_noise(bb, ch.amplitude_snr_db, ch.amplitude_seed)
    return deemphasis(fm_demodulate_conventional(rx, fm), emph)
