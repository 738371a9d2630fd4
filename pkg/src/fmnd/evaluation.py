"""Reconstruction metrics, alignment, spectrograms and SNR sweeps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from fmnd.channel import ChannelSpec, derive_seed
from fmnd.conventional import EmphasisParams, broadcast_chain_reference
from fmnd.dsp import AudioSignal, FmParams

NO_ERROR = math.inf
MAX_LAG = 2000
MIN_CORRELATION = 0.1
SEG_CLAMP_DB = (-10.0, 35.0)
SILENCE_DB = 40.0
STFT_SIZE = 1024
STFT_HOP = 256

SWEEP_COLUMNS = ["amp_snr_db", "msg_snr_db", "demod", "output_snr_db", "segmental_snr_db",
                 "mse", "seed", "status"]
DEFAULT_AMP_GRID = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 30.0)


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, AudioSignal) else x, dtype=float)


@dataclass(frozen=True)
class Aligned:
    reference: np.ndarray
    estimate: np.ndarray  # delay-compensated and gain-scaled
    delay: int
    gain: float
    correlation: float


def align(reference, estimate, max_lag: int = MAX_LAG) -> Aligned:
    """Delay-compensate and least-squares scale ``estimate`` against ``reference``.

    A positive delay means the estimate lags the reference.
    """
    ref, est = _samples(reference), _samples(estimate)
    n = min(ref.size, est.size)
    if n == 0:
        raise ValueError("cannot align empty signals")
    ref, est = ref[:n], est[:n]
    max_lag = min(max_lag, n - 1)
    xc = sps.correlate(est, ref, mode="full", method="fft")
    lags = np.arange(-(n - 1), n)
    sel = np.abs(lags) <= max_lag
    # normalize by the overlap so long lags are not penalized
    overlap = n - np.abs(lags[sel])
    score = xc[sel] / overlap
    d = int(lags[sel][np.argmax(score)])
    if d >= 0:
        r, e = ref[:n - d], est[d:]
    else:
        r, e = ref[-d:], est[:n + d]
    denom = math.sqrt(float(np.dot(r, r)) * float(np.dot(e, e)))
    rho = float(np.dot(r, e)) / denom if denom > 0 else 0.0
    if rho < MIN_CORRELATION:
        raise ValueError(f"signals look unrelated: correlation peak {rho:.3f} < {MIN_CORRELATION}")
    gain = float(np.dot(r, e) / np.dot(e, e))
    return Aligned(r, gain * e, d, gain, rho)


def mse(reference, estimate) -> float:
    r, e = _samples(reference), _samples(estimate)
    if r.size == 0:
        raise ValueError("empty signal")
    if r.size != e.size:
        raise ValueError(f"length mismatch {r.size} != {e.size}")
    return float(np.mean((r - e) ** 2))


def output_snr(reference, estimate) -> float:
    """``10 log10(P_ref / P_err)`` in dB; ``inf`` when the error is exactly zero."""
    r, e = _samples(reference), _samples(estimate)
    if r.size == 0:
        raise ValueError("empty signal")
    if r.size != e.size:
        raise ValueError(f"length mismatch {r.size} != {e.size}")
    p_err = float(np.mean((r - e) ** 2))
    if p_err == 0.0:
        return NO_ERROR
    return 10.0 * math.log10(float(np.mean(r * r)) / p_err)


def _frames(x, size, hop):
    n = (x.size - size) // hop + 1
    if n <= 0:
        return np.zeros((0, size))
    idx = np.arange(size)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def segmental_snr(reference, estimate, sample_rate_hz: int = 48_000,
                  frame_s: float = 0.030, hop_s: float = 0.015) -> float:
    """Mean per-frame SNR, clamped to [-10, 35] dB, over non-silent frames.

    Frames whose reference energy is more than 40 dB below the loudest frame
    are skipped.
    """
    r, e = _samples(reference), _samples(estimate)
    size, hop = int(round(frame_s * sample_rate_hz)), int(round(hop_s * sample_rate_hz))
    fr, fe = _frames(r, size, hop), _frames(r - e, size, hop)
    if fr.shape[0] == 0:
        raise ValueError("signal shorter than one frame")
    sig = np.sum(fr * fr, axis=1)
    err = np.sum(fe * fe, axis=1)
    peak = sig.max()
    active = sig > peak * 10.0 ** (-SILENCE_DB / 10.0)
    if peak == 0.0 or not active.any():
        raise ValueError("all frames are silent")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(sig[active] / err[active])
    return float(np.mean(np.clip(snr, *SEG_CLAMP_DB)))


def spectrogram_db(audio, size: int = STFT_SIZE, hop: int = STFT_HOP) -> np.ndarray:
    """Magnitude STFT in dB, rows = frequency bins, columns = frames."""
    x = _samples(audio)
    if x.size < size:
        raise ValueError(f"need at least {size} samples, got {x.size}")
    win = sps.get_window("hann", size, fftbins=True)
    spec = np.abs(np.fft.rfft(_frames(x, size, hop) * win, axis=1)).T
    return 20.0 * np.log10(spec + 1e-12)


def log_spectral_distance(reference, estimate, size: int = STFT_SIZE,
                          hop: int = STFT_HOP) -> float:
    """RMS dB difference of power spectra, averaged over non-silent frames."""
    r, e = _samples(reference), _samples(estimate)
    win = sps.get_window("hann", size, fftbins=True)
    pr = np.abs(np.fft.rfft(_frames(r, size, hop) * win, axis=1)) ** 2
    pe = np.abs(np.fft.rfft(_frames(e, size, hop) * win, axis=1)) ** 2
    if pr.shape[0] == 0:
        raise ValueError(f"need at least {size} samples")
    floor = 1e-10 * max(pr.max(), 1e-300)
    energy = pr.sum(axis=1)
    active = energy > energy.max() * 10.0 ** (-SILENCE_DB / 10.0)
    if not active.any():
        raise ValueError("all frames are silent")
    d = 10.0 * np.log10(pr[active] + floor) - 10.0 * np.log10(pe[active] + floor)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=1))))


def spectrogram_export(audio, path) -> np.ndarray:
    spec = spectrogram_db(audio)
    np.savetxt(path, spec, delimiter=",", fmt="%.4f")
    return spec


@dataclass
class EvalReport:
    mse: float
    output_snr_db: float
    segmental_snr_db: float
    log_spectral_distance_db: float
    aligned_delay_samples: int
    metadata: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"mse={self.mse!r}",
            f"output_snr_db={self.output_snr_db!r}",
            f"segmental_snr_db={self.segmental_snr_db!r}",
            f"log_spectral_distance_db={self.log_spectral_distance_db!r}",
            f"aligned_delay_samples={self.aligned_delay_samples}",
        ]
        lines += [f"{k}={v}" for k, v in sorted(self.metadata.items())]
        return "\n".join(lines) + "\n"


def evaluate(reference: AudioSignal, estimate: AudioSignal, edge: int = 0,
             metadata: dict | None = None) -> EvalReport:
    """Align, then compute every metric. ``edge`` samples are dropped at both ends."""
    ref, est = _samples(reference), _samples(estimate)
    if edge:
        ref, est = ref[edge:-edge], est[edge:-edge]
    a = align(ref, est)
    fs = reference.sample_rate_hz if isinstance(reference, AudioSignal) else 48_000
    return EvalReport(
        mse=mse(a.reference, a.estimate),
        output_snr_db=output_snr(a.reference, a.estimate),
        segmental_snr_db=segmental_snr(a.reference, a.estimate, fs),
        log_spectral_distance_db=log_spectral_distance(a.reference, a.estimate),
        aligned_delay_samples=a.delay,
        metadata=dict(metadata or {}),
    )


def evaluate_corpus(references, estimates, edge: int = 0,
                    metadata: dict | None = None) -> EvalReport:
    """Pool aligned utterances and score them as one signal."""
    refs, ests, delays = [], [], []
    for ref, est in zip(references, estimates):
        r, e = _samples(ref), _samples(est)
        if edge:
            r, e = r[edge:-edge], e[edge:-edge]
        a = align(r, e)
        refs.append(a.reference)
        ests.append(a.estimate)
        delays.append(a.delay)
    r, e = np.concatenate(refs), np.concatenate(ests)
    return EvalReport(
        mse=mse(r, e),
        output_snr_db=output_snr(r, e),
        segmental_snr_db=segmental_snr(r, e),
        log_spectral_distance_db=log_spectral_distance(r, e),
        aligned_delay_samples=int(np.median(delays)),
        metadata=dict(metadata or {}),
    )


def conventional_receiver(fm: FmParams, emph: EmphasisParams):
    """Sweep demodulator running the full broadcast chain."""

    def run(audio: AudioSignal, ch: ChannelSpec) -> AudioSignal:
        return broadcast_chain_reference(audio, fm, ch, emph)

    return run


def neural_receiver(net, fm: FmParams, streams: int = 16):
    """Sweep demodulator feeding the raw (un-emphasized) baseband to a network."""
    from fmnd.data import transmit
    from fmnd.neural.train import demodulate_neural

    def run(audio: AudioSignal, ch: ChannelSpec) -> AudioSignal:
        return demodulate_neural(transmit(audio, fm, ch), net, fm, streams=streams)

    return run


def _fmt_snr(x: float) -> str:
    return "inf" if math.isinf(x) and x > 0 else repr(float(x))


def snr_sweep(corpus, demodulators: dict, amp_grid=DEFAULT_AMP_GRID,
              msg_grid=(math.inf, 0.0), seeds=(0,), out_csv=None, edge: int = 2000):
    """Score each demodulator at every (amplitude SNR, message SNR, seed) cell.

    ``demodulators`` maps a name to ``fn(audio, channel_spec) -> audio``.
    Returns the rows as dicts; a failing cell is kept with ``status`` set to
    the error and blank metrics.
    """
    rows = []
    for msg_snr in msg_grid:
        for amp_snr in amp_grid:
            for seed in seeds:
                for name, fn in demodulators.items():
                    row = {"amp_snr_db": _fmt_snr(amp_snr), "msg_snr_db": _fmt_snr(msg_snr),
                           "demod": name, "seed": seed}
                    try:
                        ests = []
                        for u, audio in enumerate(corpus):
                            ch = ChannelSpec(amp_snr, msg_snr, derive_seed(seed, u))
                            ests.append(fn(audio, ch))
                        rep = evaluate_corpus(corpus, ests, edge=edge)
                        row.update(output_snr_db=rep.output_snr_db,
                                   segmental_snr_db=rep.segmental_snr_db, mse=rep.mse,
                                   status="ok")
                    except (ValueError, FloatingPointError) as exc:
                        row.update(output_snr_db="", segmental_snr_db="", mse="",
                                   status=f"failed: {exc}")
                    rows.append(row)
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            fh.write(sweep_csv(rows))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
