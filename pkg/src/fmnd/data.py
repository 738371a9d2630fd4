"""Audio I/O, synthetic speech, and windowed training datasets."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from fmnd.channel import ChannelSpec, add_amplitude_noise, add_message_noise
from fmnd.dsp import AudioSignal, BasebandSignal, FmParams, fm_modulate_baseband
from fmnd.neural.params import NetworkConfig, TrainerConfig

SYNTH_RATE_HZ = 48_000


# --------------------------------------------------------------------------- WAV


def load_wav(path) -> AudioSignal:
    """Read 16-bit PCM mono WAV, scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise ValueError(f"{path}: compressed WAV ({wf.getcomptype()}) is not supported")
            if wf.getsampwidth() != 2:
                raise ValueError(
                    f"{path}: {8 * wf.getsampwidth()}-bit samples; only 16-bit PCM is supported"
                )
            if wf.getnchannels() != 1:
                raise ValueError(f"{path}: {wf.getnchannels()} channels; expected mono")
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: malformed WAV header ({exc})") from exc
    pcm = np.frombuffer(frames, dtype="<i2")
    return AudioSignal(pcm / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def save_wav(audio: AudioSignal, path) -> None:
    """Write 16-bit PCM mono WAV, saturating outside [-1, 1)."""
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate_hz)
        wf.writeframes(to_pcm16(audio.samples).tobytes())


# ------------------------------------------------------------------ synthetic speech


@dataclass(frozen=True)
class SpeechSynthSpec:
    duration_s: float = 2.0
    pitch_range_hz: tuple = (90.0, 160.0)
    formant_count: int = 3
    syllable_rate_hz: float = 4.0
    pause_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.pitch_range_hz
        if not 80.0 <= lo < hi <= 300.0:
            raise ValueError(f"pitch range must satisfy 80 <= low < high <= 300, got {lo}, {hi}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not 1 <= self.formant_count <= 5:
            raise ValueError("formant_count must lie in 1..5")
        if self.syllable_rate_hz <= 0:
            raise ValueError("syllable_rate_hz must be positive")
        if not 0.0 <= self.pause_fraction < 1.0:
            raise ValueError("pause_fraction must lie in [0, 1)")


# (low, high) centre-frequency ranges and bandwidths of successive formants
_FORMANTS = [
    ((300.0, 850.0), 80.0),
    ((850.0, 2300.0), 110.0),
    ((2000.0, 3200.0), 160.0),
    ((3200.0, 4000.0), 220.0),
    ((4000.0, 5000.0), 280.0),
]
_HARMONIC_CEILING_HZ = 7000.0
_BLOCK_S = 0.005


def _smooth_track(knot_times, knot_values, n, fs):
    t = np.arange(n) / fs
    return np.interp(t, knot_times, knot_values)


def _syllable_plan(spec: SpeechSynthSpec, rng):
    """Syllable boundaries, voicing flags and per-syllable targets."""
    bounds = [0.0]
    while bounds[-1] < spec.duration_s:
        bounds.append(bounds[-1] + rng.uniform(0.6, 1.4) / spec.syllable_rate_hz)
    bounds = np.array(bounds)
    n_syl = bounds.size - 1
    voiced = rng.random(n_syl) >= spec.pause_fraction
    return bounds, voiced


def synth_speech(spec: SpeechSynthSpec) -> AudioSignal:
    """Speech-like signal at 48 kHz covering pitch, formant and syllable timescales.

    A band-limited glottal source (harmonics falling 6 dB/octave, capped at
    7 kHz) with drifting pitch is shaped by a cascade of slowly moving
    two-pole resonators and gated by a syllable envelope with pauses. Some
    syllables start with a short fricative noise burst. Peak amplitude is 0.5.
    """
    fs = SYNTH_RATE_HZ
    n = int(round(spec.duration_s * fs))
    rng = np.random.default_rng(spec.seed)
    bounds, voiced = _syllable_plan(spec, rng)
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    t = np.arange(n) / fs

    lo, hi = spec.pitch_range_hz
    pitch_knots = rng.uniform(lo, hi, mids.size)
    f0 = _smooth_track(mids, pitch_knots, n, fs)
    f0 *= 1.0 + 0.01 * np.sin(2 * np.pi * 5.5 * t + rng.uniform(0, 2 * np.pi))
    f0 = np.clip(f0, lo, hi)
    phase = 2 * np.pi * np.cumsum(f0) / fs

    source = np.zeros(n)
    for k in range(1, int(_HARMONIC_CEILING_HZ // lo) + 1):
        active = k * f0 < _HARMONIC_CEILING_HZ
        if not active.any():
            break
        source += np.where(active, np.sin(k * phase) / k, 0.0)

    # per-syllable envelope with raised-cosine edges
    env = np.zeros(n)
    fric = np.zeros(n)
    for s in range(mids.size):
        if not voiced[s]:
            continue
        a, b = int(bounds[s] * fs), min(int(bounds[s + 1] * fs), n)
        if b - a < 16:
            continue
        w = np.hanning(b - a) ** 0.5
        env[a:b] = np.maximum(env[a:b], w * rng.uniform(0.5, 1.0))
        if rng.random() < 0.4:
            m = min(int(rng.uniform(0.03, 0.08) * fs), b - a)
            fric[a:a + m] = np.hanning(m) * rng.uniform(0.05, 0.15)
    sentence = 0.75 + 0.25 * np.sin(2 * np.pi * 0.5 * t + rng.uniform(0, 2 * np.pi))
    env *= sentence

    voiced_sig = source
    block = int(_BLOCK_S * fs)
    for (f_lo, f_hi), bw in _FORMANTS[:spec.formant_count]:
        track = _smooth_track(mids, rng.uniform(f_lo, f_hi, mids.size), n, fs)
        r = math.exp(-math.pi * bw / fs)
        y = np.empty(n)
        zi = np.zeros(2)
        for start in range(0, n, block):
            fc = track[start]
            a = [1.0, -2 * r * math.cos(2 * math.pi * fc / fs), r * r]
            g = sum(a)  # unity DC gain
            y[start:start + block], zi = sps.lfilter([g], a, voiced_sig[start:start + block], zi=zi)
        voiced_sig = y

    noise = rng.standard_normal(n)
    b_hp, a_hp = sps.butter(4, [2500.0, 6500.0], btype="bandpass", fs=fs)
    noise = sps.lfilter(b_hp, a_hp, noise)

    x = env * voiced_sig
    peak_v = np.max(np.abs(x))
    if peak_v > 0:
        x /= peak_v
    x += fric * noise / (np.std(noise) + 1e-12)
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.5 / peak
    return AudioSignal(x, fs)


def synth_corpus(n_utterances: int, duration_s: float, seed: int, **spec_kw) -> list:
    """Independent utterances with seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n_utterances, dtype=np.uint32)
    return [synth_speech(SpeechSynthSpec(duration_s=duration_s, seed=int(s), **spec_kw))
            for s in seeds]


def train_test_split(utterances, fraction: float, seed: int = 0):
    """Split whole utterances; ``round(fraction * n)`` go to training."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(utterances)
    if n < 2:
        raise ValueError("need at least two utterances to split")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = [utterances[i] for i in sorted(order[:n_train])]
    test = [utterances[i] for i in sorted(order[n_train:])]
    return train, test


# ------------------------------------------------------------------------- datasets


def group_baseband(bb: BasebandSignal, samples_per_audio: int) -> np.ndarray:
    """Rows ``[I_0..I_{L-1}, Q_0..Q_{L-1}]``, one per audio sample; zero-padded."""
    L = samples_per_audio
    n = -(-len(bb) // L)
    i = np.zeros(n * L)
    q = np.zeros(n * L)
    i[:len(bb)] = bb.i
    q[:len(bb)] = bb.q
    return np.concatenate([i.reshape(n, L), q.reshape(n, L)], axis=1)


def transmit(audio: AudioSignal, fm: FmParams, ch: ChannelSpec) -> BasebandSignal:
    """Message noise, modulation and amplitude noise (no emphasis)."""
    msg = add_message_noise(audio, ch.message_snr_db, ch.message_seed)
    bb = fm_modulate_baseband(msg, fm)
    return add_amplitude_noise(bb, ch.amplitude_snr_db, ch.amplitude_seed)


@dataclass
class WindowedDataset:
    """``B`` contiguous streams cut into consecutive TBPTT windows.

    ``inputs[s]`` has ``n_windows * tbptt + lookahead`` rows: the final
    ``lookahead`` rows are future context for the last window and come from
    the data that follows the stream. Target ``t`` of a stream belongs to
    input row ``t``; the network can emit it once row ``t + lookahead`` has
    arrived, so the real-time latency is ``lookahead`` samples.
    """

    inputs: np.ndarray  # (B, n_windows * tbptt + lookahead, 10)
    targets: np.ndarray  # (B, n_windows * tbptt)
    tbptt: int
    lookahead: int
    stream_offsets: np.ndarray = field(default=None)  # start row of each stream

    @property
    def n_streams(self) -> int:
        return self.targets.shape[0]

    @property
    def n_windows(self) -> int:
        return self.targets.shape[1] // self.tbptt

    @property
    def latency_samples(self) -> int:
        return self.lookahead

    def window(self, k: int):
        """Time-major ``(T + lookahead, B, 10)`` inputs and ``(T, B)`` targets."""
        if not 0 <= k < self.n_windows:
            raise IndexError(f"window {k} out of range [0, {self.n_windows})")
        T = self.tbptt
        x = self.inputs[:, k * T:(k + 1) * T + self.lookahead]
        y = self.targets[:, k * T:(k + 1) * T]
        return np.ascontiguousarray(x.transpose(1, 0, 2)), np.ascontiguousarray(y.T)

    def __iter__(self):
        for k in range(self.n_windows):
            yield self.window(k)


def windowed_from_rows(rows: np.ndarray, targets: np.ndarray, n_streams: int,
                       tbptt: int, lookahead: int) -> WindowedDataset:
    n = targets.size
    stream_len = (n - lookahead) // n_streams // tbptt * tbptt
    if stream_len < tbptt:
        minimum = n_streams * tbptt + lookahead
        raise ValueError(
            f"audio too short: {n} samples, need at least {minimum} "
            f"({n_streams} streams x {tbptt} steps + {lookahead} lookahead)"
        )
    offsets = np.arange(n_streams) * stream_len
    inputs = np.stack([rows[o:o + stream_len + lookahead] for o in offsets])
    tgt = np.stack([targets[o:o + stream_len] for o in offsets])
    return WindowedDataset(inputs, tgt, tbptt, lookahead, offsets)


def make_dataset(audio, fm: FmParams, ch, cfg: NetworkConfig,
                 trainer: TrainerConfig) -> WindowedDataset:
    """Aligned (baseband, clean audio) pairs cut into ``trainer.batch_size`` streams.

    ``audio`` may be one signal or a list of utterances; ``ch`` may be one
    :class:`ChannelSpec` or one per utterance (noise augmentation).
    Utterances are transmitted separately and concatenated.
    """
    utts = [audio] if isinstance(audio, AudioSignal) else list(audio)
    chans = [ch] * len(utts) if isinstance(ch, ChannelSpec) else list(ch)
    if len(chans) != len(utts):
        raise ValueError("need one channel spec per utterance")
    L = fm.samples_per_audio_sample
    if cfg.input_size != 2 * L:
        raise ValueError(f"network input size {cfg.input_size} != 2 x {L} samples per audio sample")
    rows, targets = [], []
    for utt, c in zip(utts, chans):
        if utt.sample_rate_hz != fm.audio_rate_hz:
            raise ValueError(f"utterance at {utt.sample_rate_hz} Hz; expected {fm.audio_rate_hz} Hz")
        rows.append(group_baseband(transmit(utt, fm, c), L))
        targets.append(utt.samples)
    rows = np.concatenate(rows)
    targets = np.concatenate(targets)
    return windowed_from_rows(rows, targets, trainer.batch_size, trainer.tbptt_steps,
                              cfg.lookahead_samples)


def augmentation_channels(n: int, snr_range_db, seed: int) -> list:
    """Per-utterance amplitude-noise specs with SNR uniform in ``snr_range_db``."""
    rng = np.random.default_rng(seed)
    lo, hi = snr_range_db
    return [ChannelSpec(amplitude_snr_db=float(rng.uniform(lo, hi)), seed=int(s))
            for s in rng.integers(0, 2**63, n)]


def write_manifest(path, **entries) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
