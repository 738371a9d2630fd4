"""Complex-baseband FM modulation, discrimination and rate conversion.

All processing happens at baseband; the carrier frequency is carried on
:class:`FmParams` for bookkeeping only.

The baseband file format (``.fmbb``) is a 16-byte little-endian header
(magic ``b"FMBB"``, version u32, sample rate u32, reserved u32) followed by
interleaved float32 I/Q pairs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

TAPS_PER_PHASE = 64
KAISER_BETA = 7.0
CUTOFF_FRACTION = 0.45

FMBB_MAGIC = b"FMBB"
FMBB_VERSION = 1
_FMBB_HEADER = struct.Struct("<4sIII")


def _frozen(x, dtype=np.float64) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AudioSignal:
    """Mono real-valued samples at ``sample_rate_hz``."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples))
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class BasebandSignal:
    """Complex baseband as separate in-phase and quadrature sequences."""

    i: np.ndarray
    q: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        object.__setattr__(self, "i", _frozen(self.i))
        object.__setattr__(self, "q", _frozen(self.q))
        if self.i.shape != self.q.shape:
            raise ValueError(f"I and Q lengths differ: {self.i.size} != {self.q.size}")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        if not (np.all(np.isfinite(self.i)) and np.all(np.isfinite(self.q))):
            raise ValueError("baseband samples must be finite")

    @classmethod
    def from_complex(cls, z, sample_rate_hz: int) -> "BasebandSignal":
        z = np.asarray(z)
        return cls(z.real, z.imag, sample_rate_hz)

    @property
    def z(self) -> np.ndarray:
        return self.i + 1j * self.q

    def __len__(self):
        return self.i.size


@dataclass(frozen=True)
class FmParams:
    """Broadcast FM constants. Defaults follow the US standard."""

    carrier_amplitude: float = 1.0
    freq_deviation_hz: float = 75_000.0
    baseband_rate_hz: int = 240_000
    audio_rate_hz: int = 48_000
    carrier_freq_hz: float = 100.1e6  # documentation only

    def __post_init__(self):
        if self.carrier_amplitude <= 0:
            raise ValueError("carrier_amplitude must be positive")
        if self.freq_deviation_hz <= 0:
            raise ValueError("freq_deviation_hz must be positive")
        if self.audio_rate_hz <= 0 or self.baseband_rate_hz <= 0:
            raise ValueError("rates must be positive")
        if self.baseband_rate_hz % self.audio_rate_hz:
            raise ValueError(
                f"baseband rate {self.baseband_rate_hz} is not an integer multiple "
                f"of audio rate {self.audio_rate_hz}"
            )
        if self.freq_deviation_hz >= self.baseband_rate_hz / 2:
            raise ValueError("freq_deviation_hz must be below half the baseband rate")

    @property
    def samples_per_audio_sample(self) -> int:
        return self.baseband_rate_hz // self.audio_rate_hz


@lru_cache(maxsize=32)
def resampling_filter(up: int, down: int, rate_in: int, rate_out: int) -> np.ndarray:
    """Kaiser-windowed sinc prototype for a rational ``up/down`` converter.

    The prototype runs at ``rate_in * up`` with ``TAPS_PER_PHASE`` taps per
    polyphase branch; each branch has unity DC gain.
    """
    ntaps = TAPS_PER_PHASE * max(up, down) + 1
    cutoff = CUTOFF_FRACTION * min(rate_in, rate_out)
    h = sps.firwin(ntaps, cutoff, window=("kaiser", KAISER_BETA), fs=rate_in * up)
    # equalize the branches so every output phase passes DC exactly
    for p in range(up):
        h[p::up] *= 1.0 / (up * h[p::up].sum())
    h.setflags(write=False)
    return h


def _resample_array(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    ratio = Fraction(rate_out, rate_in)
    up, down = ratio.numerator, ratio.denominator
    if up == down == 1 or x.size == 0:
        return np.array(x, dtype=np.float64, copy=True)
    h = resampling_filter(up, down, rate_in, rate_out)
    return sps.resample_poly(x, up, down, window=np.array(h))


def resample(audio: AudioSignal, target_rate_hz: int) -> AudioSignal:
    """Band-limited rational resampling with zero-phase alignment.

    Output sample ``k`` sits at time ``k / target_rate_hz``, so the filter
    delay is compensated and input and output line up in time.
    """
    if int(target_rate_hz) <= 0:
        raise ValueError(f"target_rate_hz must be positive, got {target_rate_hz}")
    y = _resample_array(audio.samples, audio.sample_rate_hz, int(target_rate_hz))
    return AudioSignal(y, int(target_rate_hz))


def integrate_phase(audio: AudioSignal, params: FmParams) -> np.ndarray:
    """Accumulated modulation phase ``2*pi*f_dev/fs * cumsum(x)`` (unwrapped)."""
    if audio.sample_rate_hz != params.baseband_rate_hz:
        raise ValueError(
            f"message must be at the baseband rate {params.baseband_rate_hz} Hz, "
            f"got {audio.sample_rate_hz} Hz"
        )
    step = 2.0 * np.pi * params.freq_deviation_hz / params.baseband_rate_hz
    return step * np.cumsum(audio.samples)


def fm_modulate_baseband(audio: AudioSignal, params: FmParams) -> BasebandSignal:
    """Modulate an audio-rate message into I/Q at the baseband rate."""
    if audio.sample_rate_hz != params.audio_rate_hz:
        raise ValueError(
            f"message must be at the audio rate {params.audio_rate_hz} Hz, "
            f"got {audio.sample_rate_hz} Hz"
        )
    upsampled = resample(audio, params.baseband_rate_hz)
    phase = np.mod(integrate_phase(upsampled, params), 2.0 * np.pi)
    a = params.carrier_amplitude
    return BasebandSignal(a * np.cos(phase), a * np.sin(phase), params.baseband_rate_hz)


def instantaneous_frequency(bb: BasebandSignal) -> np.ndarray:
    """Per-sample frequency in Hz from consecutive-sample conjugate products.

    ``f[0]`` is 0. ``np.angle`` maps a zero product to 0, so dropouts stay finite.
    """
    if len(bb) == 0:
        raise ValueError("baseband signal is empty")
    z = bb.z
    f = np.zeros(z.size)
    f[1:] = np.angle(z[1:] * np.conj(z[:-1])) * (bb.sample_rate_hz / (2.0 * np.pi))
    return f


def write_fmbb(bb: BasebandSignal, path) -> None:
    iq = np.empty(2 * len(bb), dtype="<f4")
    iq[0::2] = bb.i
    iq[1::2] = bb.q
    with open(path, "wb") as fh:
        fh.write(_FMBB_HEADER.pack(FMBB_MAGIC, FMBB_VERSION, bb.sample_rate_hz, 0))
        fh.write(iq.tobytes())


def read_fmbb(path) -> BasebandSignal:
    raw = Path(path).read_bytes()
    if len(raw) < _FMBB_HEADER.size:
        raise ValueError(f"{path}: truncated FMBB header")
    magic, version, rate, _ = _FMBB_HEADER.unpack_from(raw)
    if magic != FMBB_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {FMBB_MAGIC!r}")
    if version != FMBB_VERSION:
        raise ValueError(f"{path}: unsupported FMBB version {version}")
    body = raw[_FMBB_HEADER.size:]
    if len(body) % 8:
        raise ValueError(f"{path}: payload is not a whole number of I/Q pairs")
    iq = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return BasebandSignal(iq[0::2], iq[1::2], rate)
