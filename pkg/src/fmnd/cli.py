"""Command-line entry point: ``fmnd <subcommand> [options]``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from fmnd.config import RunConfig, load_config, override

log = logging.getLogger("fmnd")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _require_file(path, what):
    if not path:
        raise UsageError(f"missing {what}")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _out_path(args, cfg: RunConfig, what="--out"):
    out = args.out or cfg.paths.output
    if not out:
        raise UsageError(f"no output path: pass {what} or set [paths] output")
    return Path(out)


def _input_wavs(spec: str):
    from fmnd.data import load_wav

    paths = [p.strip() for p in spec.split(",") if p.strip()]
    return [load_wav(_require_file(p, "input WAV")) for p in paths]


def _at_audio_rate(audio, fm):
    from fmnd.dsp import resample

    return audio if audio.sample_rate_hz == fm.audio_rate_hz else resample(audio, fm.audio_rate_hz)


def _corpus(cfg: RunConfig):
    """(train, test) utterances from ``[paths] input`` or a synthetic corpus."""
    from fmnd.data import synth_corpus, train_test_split

    d = cfg.data
    if cfg.paths.input:
        utts = [_at_audio_rate(u, cfg.fm) for u in _input_wavs(cfg.paths.input)]
        if len(utts) == 1:
            return utts, []
    else:
        utts = synth_corpus(d.n_utterances, d.utterance_s, d.corpus_seed)
    return train_test_split(utts, d.train_fraction, d.corpus_seed)


# ------------------------------------------------------------ subcommands


def cmd_synth(args, cfg: RunConfig):
    from fmnd.data import SpeechSynthSpec, save_wav, synth_speech

    try:
        spec = SpeechSynthSpec(duration_s=args.duration, pitch_range_hz=(args.pitch_min, args.pitch_max),
                               formant_count=args.formants, syllable_rate_hz=args.syllable_rate,
                               pause_fraction=args.pause_fraction,
                               seed=args.seed if args.seed is not None else 0)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_path(args, cfg)
    audio = synth_speech(spec)
    save_wav(audio, out)
    log.info("wrote %s (%d samples)", out, len(audio))


def cmd_modulate(args, cfg: RunConfig):
    from fmnd.channel import add_amplitude_noise, add_message_noise
    from fmnd.conventional import preemphasis
    from fmnd.data import load_wav
    from fmnd.dsp import fm_modulate_baseband, write_fmbb

    src = _require_file(args.input or cfg.paths.input, "input WAV")
    out = _out_path(args, cfg)
    audio = _at_audio_rate(load_wav(src), cfg.fm)
    ch = cfg.channel
    msg = add_message_noise(audio, ch.message_snr_db, ch.message_seed)
    if args.emphasis:
        if cfg.emphasis.sample_rate_hz != cfg.fm.audio_rate_hz:
            raise UsageError("emphasis sample rate must equal the audio rate")
        msg = preemphasis(msg, cfg.emphasis)
    bb = add_amplitude_noise(fm_modulate_baseband(msg, cfg.fm), ch.amplitude_snr_db,
                             ch.amplitude_seed)
    write_fmbb(bb, out)
    log.info("wrote %s (%d complex samples)", out, len(bb))


def cmd_demod(args, cfg: RunConfig):
    from fmnd.conventional import deemphasis, fm_demodulate_conventional
    from fmnd.data import save_wav
    from fmnd.dsp import read_fmbb

    engine = args.engine
    model = args.model or cfg.paths.model
    if engine == "nn" and not model:
        raise UsageError("--engine nn needs --model (or [paths] model)")
    if engine == "nn" and args.emphasis:
        raise UsageError("--emphasis applies to the conventional engine only")
    src = _require_file(args.input or cfg.paths.input, "input FMBB")
    out = _out_path(args, cfg)
    if engine == "nn":
        from fmnd.neural.params import load_checkpoint
        from fmnd.neural.train import demodulate_neural

        net = load_checkpoint(_require_file(model, "model checkpoint"))
    bb = read_fmbb(src)
    if bb.sample_rate_hz != cfg.fm.baseband_rate_hz:
        raise UsageError(f"FMBB rate {bb.sample_rate_hz} Hz does not match config "
                         f"{cfg.fm.baseband_rate_hz} Hz")
    if engine == "conv":
        audio = fm_demodulate_conventional(bb, cfg.fm)
        if args.emphasis:
            audio = deemphasis(audio, cfg.emphasis)
    else:
        audio = demodulate_neural(bb, net, cfg.fm, tbptt=cfg.trainer.tbptt_steps,
                                  streams=args.streams)
    save_wav(audio, out)
    log.info("wrote %s (%d samples at %d Hz)", out, len(audio), audio.sample_rate_hz)


def cmd_train(args, cfg: RunConfig):
    from fmnd.channel import ChannelSpec
    from fmnd.data import augmentation_channels, make_dataset
    from fmnd.neural.params import NetworkParams, TrainerConfig, save_checkpoint
    from fmnd.neural.train import train

    out = _out_path(args, cfg)
    train_utts, val_utts = _corpus(cfg)
    d, tcfg = cfg.data, cfg.trainer

    def channels(utts, salt):
        if d.augmented:
            return augmentation_channels(len(utts), (d.aug_snr_low_db, d.aug_snr_high_db),
                                         cfg.channel.seed * 1000 + salt)
        return [ChannelSpec(cfg.channel.amplitude_snr_db, cfg.channel.message_snr_db,
                            cfg.channel.seed + salt) for _ in utts]

    try:
        ds = make_dataset(train_utts, cfg.fm, channels(train_utts, 1), cfg.network, tcfg)
        val = None
        if val_utts:
            vt = TrainerConfig(batch_size=max(1, tcfg.batch_size // 4), tbptt_steps=tcfg.tbptt_steps)
            val = make_dataset(val_utts, cfg.fm, channels(val_utts, 2), cfg.network, vt)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    net = NetworkParams.initialize(cfg.network, tcfg.seed)
    net, history = train(ds, net, tcfg, val_dataset=val)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out / "model.fmnn")
    history.write_csv(out / "training_log.csv")
    log.info("wrote %s", out / "model.fmnn")


def cmd_eval(args, cfg: RunConfig):
    from fmnd.data import load_wav
    from fmnd.evaluation import evaluate, spectrogram_export

    ref = load_wav(_require_file(args.reference, "reference WAV"))
    est = load_wav(_require_file(args.estimate, "estimate WAV"))
    if ref.sample_rate_hz != est.sample_rate_hz:
        raise UsageError("reference and estimate sample rates differ")
    out = _out_path(args, cfg)
    report = evaluate(ref, est, edge=args.edge,
                      metadata={"reference": args.reference, "estimate": args.estimate})
    out.write_text(report.to_text())
    if args.spectrogram:
        spectrogram_export(est, args.spectrogram)
    sys.stdout.write(report.to_text())


def cmd_sweep(args, cfg: RunConfig):
    from fmnd.evaluation import conventional_receiver, neural_receiver, snr_sweep

    out = _out_path(args, cfg)
    model = args.model or cfg.paths.model
    demods = {"conventional": conventional_receiver(cfg.fm, cfg.emphasis)}
    if model:
        from fmnd.neural.params import load_checkpoint

        net = load_checkpoint(_require_file(model, "model checkpoint"))
        demods["neural"] = neural_receiver(net, cfg.fm, streams=cfg.sweep.streams)
    train_utts, test_utts = _corpus(cfg)
    corpus = test_utts or train_utts
    rows = snr_sweep(corpus, demods, cfg.sweep.amp_snr_db, cfg.sweep.msg_snr_db,
                     cfg.sweep.seeds, out_csv=out)
    failed = [r for r in rows if r["status"] != "ok"]
    log.info("wrote %s (%d rows, %d failed)", out, len(rows), len(failed))


def cmd_gradcheck(args, cfg: RunConfig):
    from fmnd.neural.gradcheck import gradient_check, random_problem

    net, window, targets, carry, masks = random_problem(args.seed if args.seed is not None else 0)
    names = [k for k, _ in net.blocks()]
    if args.corrupt and args.corrupt not in names:
        raise UsageError(f"unknown block {args.corrupt!r}; choose from {', '.join(names)}")
    report = gradient_check(net, window, targets, carry, masks, n_out=targets.shape[0],
                            corrupt=args.corrupt)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if not report.passed:
        raise RuntimeError(f"gradient check failed for {', '.join(report.failed)}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--amp-snr-db", type=float, help="amplitude (channel) SNR; inf = none")
    common.add_argument("--msg-snr-db", type=float, help="message (phase) SNR; inf = none")
    common.add_argument("--seed", type=int, help="noise / synthesis / training seed")
    common.add_argument("--threads", type=int, help="cap BLAS threads (env FMND_THREADS)")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="fmnd", description="FM demodulation with a recurrent network")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize speech-like audio to WAV")
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--pitch-min", type=float, default=90.0)
    p.add_argument("--pitch-max", type=float, default=160.0)
    p.add_argument("--formants", type=int, default=3)
    p.add_argument("--syllable-rate", type=float, default=4.0)
    p.add_argument("--pause-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("modulate", parents=[common], help="WAV -> noisy FM baseband (FMBB)")
    p.add_argument("input", nargs="?")
    p.add_argument("--emphasis", action="store_true", help="pre-emphasize before modulation")
    p.set_defaults(func=cmd_modulate)

    for name, engine in (("demod", None), ("demod-conv", "conv")):
        p = sub.add_parser(name, parents=[common], help="FMBB -> WAV")
        p.add_argument("input", nargs="?")
        if engine is None:
            p.add_argument("--engine", choices=("conv", "nn"), default="conv")
        else:
            p.set_defaults(engine=engine)
        p.add_argument("--model", help="network checkpoint for --engine nn")
        p.add_argument("--streams", type=int, default=1, help="parallel chunks for the nn engine")
        p.add_argument("--emphasis", action="store_true", help="de-emphasize the conv output")
        p.set_defaults(func=cmd_demod)

    p = sub.add_parser("train", parents=[common], help="train a network; --out is a directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score an estimate against a reference")
    p.add_argument("reference")
    p.add_argument("estimate")
    p.add_argument("--edge", type=int, default=0, help="samples dropped at both ends")
    p.add_argument("--spectrogram", help="also write the estimate's spectrogram CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="SNR sweep to CSV")
    p.add_argument("--model", help="include the neural demodulator")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--corrupt", help="perturb the analytic gradient of this block")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = override(cfg, "channel", amplitude_snr_db=args.amp_snr_db,
                   message_snr_db=args.msg_snr_db, seed=args.seed)
    if args.command == "train":
        cfg = override(cfg, "trainer", seed=args.seed)
    return cfg


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FMND_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FMND_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.config is not None and not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = resolve_config(args)
        threads = _threads(args)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be positive")
    except (UsageError, ValueError) as exc:
        print(f"fmnd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    try:
        if threads is None:
            args.func(args, cfg)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                args.func(args, cfg)
    except UsageError as exc:
        print(f"fmnd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, FloatingPointError, OSError, ArithmeticError) as exc:
        print(f"fmnd {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
