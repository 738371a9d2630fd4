"""SNR sweep of the conventional receiver against trained desk models.

Scores every model directory given on the command line on the held-out
utterances of the desk corpus, over the amplitude and message SNR grids.

Example::

    python scripts/noise_sweep.py runs/noisy runs/memoryless --out runs/sweep.csv
"""

import argparse
import logging
import math
from pathlib import Path

from fmnd.conventional import EmphasisParams
from fmnd.dsp import FmParams
from fmnd.evaluation import DEFAULT_AMP_GRID, conventional_receiver, neural_receiver, snr_sweep
from fmnd.experiments import DeskRun, load_desk_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("models", type=Path, nargs="*", help="desk run directories")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--amp-snr", type=float, nargs="+", default=list(DEFAULT_AMP_GRID))
    ap.add_argument("--msg-snr", type=float, nargs="+", default=[math.inf, 0.0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--streams", type=int, default=16)
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    fm = FmParams()
    test = DeskRun().corpus()[1]
    demods = {"conventional": conventional_receiver(fm, EmphasisParams())}
    for path in args.models:
        demods[path.name] = neural_receiver(load_desk_model(path), fm, streams=args.streams)
    rows = snr_sweep(test, demods, args.amp_snr, args.msg_snr, range(args.seeds),
                     out_csv=args.out)
    for r in rows:
        print(r["msg_snr_db"], r["amp_snr_db"], r["seed"], r["demod"], r["output_snr_db"],
              r["segmental_snr_db"])


if __name__ == "__main__":
    main()
