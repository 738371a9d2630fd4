"""AWGN impairments: amplitude noise on the baseband, phase noise on the message.

Both injectors calibrate against the *measured* power of their input.
Gaussian samples come from numpy's PCG64 bit generator (seeded through
``SeedSequence``) passed through the Box-Muller transform, so a given
``(input, snr_db, seed)`` triple maps to the same output everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fmnd.dsp import AudioSignal, BasebandSignal

NO_NOISE = math.inf


def is_no_noise(snr_db: float) -> bool:
    return snr_db is None or (math.isinf(snr_db) and snr_db > 0)


def _check_snr(snr_db: float) -> None:
    if is_no_noise(snr_db):
        return
    if not math.isfinite(snr_db):
        raise ValueError(f"SNR must be finite or +inf (no noise), got {snr_db}")


@dataclass(frozen=True)
class ChannelSpec:
    """Noise configuration; ``inf`` disables a noise source."""

    amplitude_snr_db: float = NO_NOISE
    message_snr_db: float = NO_NOISE
    seed: int = 0

    def __post_init__(self):
        _check_snr(self.amplitude_snr_db)
        _check_snr(self.message_snr_db)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")

    @property
    def message_seed(self) -> int:
        return derive_seed(self.seed, 1)

    @property
    def amplitude_seed(self) -> int:
        return derive_seed(self.seed, 2)


def derive_seed(seed: int, *tags: int) -> int:
    """Independent child seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed), *map(int, tags)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def gaussian_pairs(n_pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n_pairs`` independent standard normal pairs via Box-Muller."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    u1 = 1.0 - rng.random(n_pairs)  # (0, 1]
    u2 = rng.random(n_pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return r * np.cos(theta), r * np.sin(theta)


def standard_normal(n: int, seed: int) -> np.ndarray:
    a, b = gaussian_pairs((n + 1) // 2, seed)
    out = np.empty(2 * a.size)
    out[0::2] = a
    out[1::2] = b
    return out[:n]


def noise_variance(signal_power: float, snr_db: float) -> float:
    return signal_power / 10.0 ** (snr_db / 10.0)


def add_amplitude_noise(bb: BasebandSignal, snr_db: float, seed: int) -> BasebandSignal:
    """Add complex white Gaussian noise at ``snr_db`` below the measured I/Q power.

    The noise power is split evenly between I and Q.
    """
    if len(bb) == 0:
        raise ValueError("cannot add noise to an empty baseband signal")
    _check_snr(snr_db)
    if is_no_noise(snr_db):
        return bb
    power = float(np.mean(bb.i**2 + bb.q**2))
    if power == 0.0:
        raise ValueError("SNR is undefined for a zero-power signal")
    sigma = math.sqrt(noise_variance(power, snr_db) / 2.0)
    ni, nq = gaussian_pairs(len(bb), seed)
    return BasebandSignal(bb.i + sigma * ni, bb.q + sigma * nq, bb.sample_rate_hz)


def add_message_noise(audio: AudioSignal, snr_db: float, seed: int) -> AudioSignal:
    """Add real white Gaussian noise at ``snr_db`` below the measured message power."""
    if len(audio) == 0:
        raise ValueError("cannot add noise to an empty message")
    _check_snr(snr_db)
    if is_no_noise(snr_db):
        return audio
    power = float(np.mean(audio.samples**2))
    if power == 0.0:
        raise ValueError("SNR is undefined for a zero-power signal")
    sigma = math.sqrt(noise_variance(power, snr_db))
    noise = sigma * standard_normal(len(audio), seed)
    return AudioSignal(audio.samples + noise, audio.sample_rate_hz)
