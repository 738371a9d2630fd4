"""Desk-scale training experiments shared by the scripts and the acceptance tests."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from fmnd.channel import ChannelSpec
from fmnd.conventional import EmphasisParams
from fmnd.data import (augmentation_channels, make_dataset, read_manifest, synth_corpus,
                       train_test_split, write_manifest)
from fmnd.dsp import FmParams
from fmnd.evaluation import EvalReport, evaluate_corpus, neural_receiver
from fmnd.neural.params import (NetworkConfig, NetworkParams, TrainerConfig, load_checkpoint,
                                save_checkpoint)
from fmnd.neural.train import TrainingLog, train

log = logging.getLogger(__name__)

EVAL_EDGE = 2000  # samples dropped at both ends of each scored utterance


@dataclass(frozen=True)
class DeskRun:
    """A scaled-down training run on synthetic speech."""

    epochs: int = 30
    streams: int = 64
    n_utterances: int = 10
    utterance_s: float = 6.0
    train_fraction: float = 0.8
    hidden_size: int = 64
    num_layers: int = 2
    lookahead: int = 100
    tbptt: int = 100
    learning_rate: float = 1e-3
    dropout_rate: float = 0.2
    aug_snr_db: tuple | None = None  # amplitude SNR range for noise augmentation
    memoryless: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.aug_snr_db is not None:
            object.__setattr__(self, "aug_snr_db", tuple(float(v) for v in self.aug_snr_db))

    def network_config(self) -> NetworkConfig:
        if self.memoryless:
            return NetworkConfig(self.num_layers, self.hidden_size, self.dropout_rate,
                                 lookahead_samples=0, context_steps=1)
        return NetworkConfig(self.num_layers, self.hidden_size, self.dropout_rate,
                             lookahead_samples=self.lookahead)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(batch_size=self.streams, tbptt_steps=self.tbptt,
                             learning_rate=self.learning_rate, epochs=self.epochs,
                             seed=self.seed)

    def corpus(self):
        utts = synth_corpus(self.n_utterances, self.utterance_s, self.seed)
        return train_test_split(utts, self.train_fraction, self.seed)

    def channels(self, n: int, salt: int):
        if self.aug_snr_db is None:
            return ChannelSpec(seed=self.seed)
        return augmentation_channels(n, self.aug_snr_db, self.seed * 1000 + salt)


@dataclass
class DeskResult:
    run: DeskRun
    net: NetworkParams
    log: TrainingLog
    clean_report: EvalReport
    train_seconds: float
    paths: dict = field(default_factory=dict)

    @property
    def val_mse_reduction(self) -> float:
        return 1.0 - self.log.final_val_mse / self.log.initial_val_mse

    def summary(self) -> dict:
        return {
            "initial_val_mse": self.log.initial_val_mse,
            "final_val_mse": self.log.final_val_mse,
            "val_mse_reduction": self.val_mse_reduction,
            "heldout_clean_output_snr_db": self.clean_report.output_snr_db,
            "heldout_clean_segmental_snr_db": self.clean_report.segmental_snr_db,
            "train_seconds": round(self.train_seconds, 1),
        }


def heldout_report(net: NetworkParams, test, channel: ChannelSpec, fm: FmParams | None = None,
                   streams: int = 16) -> EvalReport:
    fm = fm or FmParams()
    demod = neural_receiver(net, fm, streams=streams)
    return evaluate_corpus(test, [demod(u, channel) for u in test], edge=EVAL_EDGE)


def run_desk_training(run: DeskRun, out_dir=None) -> DeskResult:
    """Synthesize, train, score on held-out clean baseband, and save artifacts."""
    fm = FmParams()
    train_utts, test_utts = run.corpus()
    cfg, tcfg = run.network_config(), run.trainer_config()
    train_ds = make_dataset(train_utts, fm, run.channels(len(train_utts), 1), cfg, tcfg)
    # validation uses the held-out utterances with fewer streams
    val_trainer = TrainerConfig(batch_size=max(1, run.streams // 4), tbptt_steps=run.tbptt)
    val_ds = make_dataset(test_utts, fm, run.channels(len(test_utts), 2), cfg, val_trainer)
    net = NetworkParams.initialize(cfg, run.seed)
    log.info("training %d windows x %d streams for %d epochs", train_ds.n_windows,
             train_ds.n_streams, run.epochs)
    start = time.perf_counter()
    net, history = train(train_ds, net, tcfg, val_dataset=val_ds)
    seconds = time.perf_counter() - start
    report = heldout_report(net, test_utts, ChannelSpec(seed=run.seed), fm)
    result = DeskResult(run, net, history, report, seconds)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.paths = {"model": out / "model.fmnn", "log": out / "training_log.csv",
                        "report": out / "heldout_clean.txt", "manifest": out / "run.txt"}
        save_checkpoint(net, result.paths["model"])
        history.write_csv(result.paths["log"])
        result.paths["report"].write_text(report.to_text())
        write_manifest(result.paths["manifest"], **{k: v for k, v in asdict(run).items()},
                       train_seconds=f"{seconds:.1f}")
    return result


def load_desk_model(out_dir) -> NetworkParams:
    return load_checkpoint(Path(out_dir) / "model.fmnn")


def _manifest_fields(run: DeskRun) -> dict:
    return {k: str(v) for k, v in asdict(run).items()}


def cached_desk_training(run: DeskRun, out_dir) -> DeskResult:
    """Reuse a finished run in ``out_dir`` when its manifest matches, else train.

    A reused result keeps the stored log and training time; the held-out
    report is recomputed from the checkpoint.
    """
    out = Path(out_dir)
    manifest = out / "run.txt"
    if manifest.exists() and (out / "model.fmnn").exists():
        stored = read_manifest(manifest)
        seconds = float(stored.pop("train_seconds", "nan"))
        if stored == _manifest_fields(run):
            log.info("reusing %s", out)
            net = load_desk_model(out)
            history = TrainingLog.read_csv(out / "training_log.csv")
            report = heldout_report(net, run.corpus()[1], ChannelSpec(seed=run.seed))
            return DeskResult(run, net, history, report, seconds,
                              {"model": out / "model.fmnn", "manifest": manifest})
    return run_desk_training(run, out)
