"""RMSProp, truncated-BPTT training with state carryover, and streamed inference."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from fmnd.dsp import AudioSignal, BasebandSignal, FmParams
from fmnd.neural.lstm import forward_backward, network_forward
from fmnd.neural.params import NetworkParams, TrainerConfig

log = logging.getLogger(__name__)


@dataclass
class RmsPropState:
    v: NetworkParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "RmsPropState":
        return cls(params.zeros_like())


def rmsprop_step(params: NetworkParams, grads: NetworkParams, state: RmsPropState,
                 cfg: TrainerConfig):
    """In-place RMSProp update; returns ``(params, state)``.

    ``v <- rho v + (1 - rho) g^2``; ``theta <- theta - lr g / (sqrt(v) + eps)``.
    """
    rho, lr, eps = cfg.rmsprop_decay, cfg.learning_rate, cfg.rmsprop_epsilon
    scale = 1.0
    if cfg.max_grad_norm > 0:
        norm = math.sqrt(sum(float(np.sum(g * g)) for _, g in grads.arrays()))
        if norm > cfg.max_grad_norm:
            scale = cfg.max_grad_norm / norm
    for (name, p), (_, g), (_, v) in zip(params.arrays(), grads.arrays(), state.v.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        if scale != 1.0:
            g = g * scale
        v *= rho
        v += (1.0 - rho) * g * g
        p -= lr * g / (np.sqrt(v) + eps)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite parameter {name} after update")
    state.step += 1
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    wall_seconds: float | None = None


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    @property
    def initial_val_mse(self) -> float:
        return self.records[0].val_mse

    @property
    def final_val_mse(self) -> float:
        return self.records[-1].val_mse

    def write_csv(self, path, include_wall_time: bool = False) -> None:
        """Columns ``epoch, train_mse, val_mse, wall_seconds``.

        Row 0 describes the initialization. ``wall_seconds`` is blank unless
        ``include_wall_time``, which keeps the file byte-reproducible.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "val_mse", "wall_seconds"])
            for r in self.records:
                wall = f"{r.wall_seconds:.3f}" if include_wall_time and r.wall_seconds is not None else ""
                w.writerow([r.epoch, _fmt(r.train_mse), _fmt(r.val_mse), wall])

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        def num(text):
            return float(text) if text else math.nan

        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), num(r["train_mse"]), num(r["val_mse"]),
                                float(r["wall_seconds"]) if r["wall_seconds"] else None)
                    for r in rows])


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def evaluate_mse(net: NetworkParams, dataset) -> float:
    """Infer-mode MSE over every window, carrying forward states."""
    carry = None
    total, count = 0.0, 0
    for x, y in dataset:
        out, carry = network_forward(net, x, carry, "infer", n_out=y.shape[0])
        total += float(np.sum((out - y) ** 2))
        count += y.size
    return total / count


def train(dataset, net: NetworkParams, cfg: TrainerConfig, val_dataset=None,
          progress=None):
    """Train in place; returns ``(net, TrainingLog)``.

    Each epoch walks the windows in order. The forward-direction state left
    by window ``k`` seeds window ``k + 1`` of the same stream; the state is
    reset at the start of every epoch. Dropout masks come from a generator
    seeded by ``cfg.seed``, so runs are repeatable.
    """
    if dataset.n_windows == 0:
        raise ValueError("dataset has no windows")
    if dataset.lookahead != net.config.lookahead_samples:
        raise ValueError(
            f"dataset lookahead {dataset.lookahead} != network lookahead "
            f"{net.config.lookahead_samples}"
        )
    rng = np.random.default_rng(cfg.seed)
    state = RmsPropState.zeros_like(net)
    history = TrainingLog()
    start = time.perf_counter()
    val = evaluate_mse(net, val_dataset) if val_dataset is not None else float("nan")
    history.records.append(EpochRecord(0, float("nan"), val, 0.0))
    for epoch in range(1, cfg.epochs + 1):
        carry = None
        losses = []
        for k, (x, y) in enumerate(dataset):
            grads, loss, carry, _ = forward_backward(net, x, y, carry, "train",
                                                     n_out=y.shape[0], rng=rng)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, window {k}")
            rmsprop_step(net, grads, state, cfg)
            losses.append(loss)
        val = evaluate_mse(net, val_dataset) if val_dataset is not None else float("nan")
        rec = EpochRecord(epoch, float(np.mean(losses)), val, time.perf_counter() - start)
        history.records.append(rec)
        log.info("epoch %d train_mse %.6g val_mse %.6g (%.0f s)", epoch, rec.train_mse,
                 rec.val_mse, rec.wall_seconds)
        if progress is not None:
            progress(rec)
    return net, history


def demodulate_neural(bb: BasebandSignal, net: NetworkParams, fm: FmParams | None = None,
                      *, tbptt: int = 100, streams: int = 1,
                      warmup: int | None = None) -> AudioSignal:
    """Recover audio from baseband with a trained network.

    The baseband is zero-padded to a whole number of audio samples and
    grouped into rows ``[I_0..I_4, Q_0..Q_4]``. Rows are processed in
    windows of ``tbptt`` with forward state carried across windows and
    ``lookahead_samples`` future rows for the backward direction; the output
    is aligned with the input rows (the latency is absorbed here).

    With ``streams > 1`` the signal is cut into that many chunks processed
    side by side. Each chunk first runs ``warmup`` rows (default ``tbptt``)
    of the preceding audio to settle its forward state, so results differ
    slightly from single-stream processing near chunk starts.
    """
    from fmnd.data import group_baseband

    fm = fm or FmParams()
    cfg = net.config
    L = fm.samples_per_audio_sample
    if cfg.input_size != 2 * L:
        raise ValueError(f"network expects {cfg.input_size} inputs per row, baseband gives {2 * L}")
    if bb.sample_rate_hz != fm.baseband_rate_hz:
        raise ValueError(f"baseband rate {bb.sample_rate_hz} Hz != {fm.baseband_rate_hz} Hz")
    rows = group_baseband(bb, L)
    n = rows.shape[0]
    if not cfg.stateful:
        tbptt = cfg.context_steps * max(1, tbptt // cfg.context_steps)
    la = cfg.lookahead_samples
    streams = max(1, min(streams, -(-n // tbptt)))
    if warmup is None:
        warmup = tbptt if streams > 1 else 0
    warmup = -(-warmup // tbptt) * tbptt if streams > 1 else 0
    chunk = -(-n // streams)
    chunk = -(-chunk // tbptt) * tbptt
    total = warmup + streams * chunk + la
    padded = np.zeros((total, rows.shape[1]))
    padded[warmup:warmup + n] = rows
    span = warmup + chunk
    X = np.stack([padded[s * chunk:s * chunk + span + la] for s in range(streams)], axis=1)
    valid_end = warmup + n  # first padding row; lookahead must stop here
    out = np.empty((span, streams))
    carry = None
    for k in range(0, span, tbptt):
        x = X[k:k + tbptt + la]
        n_out = tbptt
        if streams == 1 and cfg.stateful and valid_end < k + tbptt + la:
            # stop at the true end so the backward pass never starts in padding
            x = X[k:valid_end]
            n_out = min(tbptt, valid_end - k)
        y, carry = network_forward(net, x, carry, "infer", n_out=n_out)
        out[k:k + n_out] = y
        out[k + n_out:k + tbptt] = 0.0
    audio = out[warmup:].T.reshape(-1)[:n]
    return AudioSignal(audio, fm.audio_rate_hz)
