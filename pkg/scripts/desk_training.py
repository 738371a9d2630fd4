"""Desk-scale training run: synthetic speech, stacked BiLSTM, held-out evaluation.

Example::

    python scripts/desk_training.py --out runs/clean --epochs 30
    python scripts/desk_training.py --out runs/noisy --aug-snr 0 10
    python scripts/desk_training.py --out runs/memoryless --aug-snr 0 10 --memoryless
"""

import argparse
import json
import logging
from pathlib import Path

from fmnd.experiments import DeskRun, run_desk_training


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--streams", type=int, default=64)
    ap.add_argument("--utterances", type=int, default=10)
    ap.add_argument("--utterance-seconds", type=float, default=6.0)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--aug-snr", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    ap.add_argument("--memoryless", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run = DeskRun(
        epochs=args.epochs, streams=args.streams, n_utterances=args.utterances,
        utterance_s=args.utterance_seconds, hidden_size=args.hidden, num_layers=args.layers,
        learning_rate=args.lr, aug_snr_db=tuple(args.aug_snr) if args.aug_snr else None,
        memoryless=args.memoryless, seed=args.seed,
    )
    result = run_desk_training(run, args.out)
    print(json.dumps(result.summary(), indent=2))


if __name__ == "__main__":
    main()
