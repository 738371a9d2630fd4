import numpy as np
from scipy import signal as sps

from fmnd.dsp import AudioSignal


def bandlimited(n, fs=48_000, cutoff=15_000.0, peak=0.5, seed=0):
    """Gaussian noise low-passed to ``cutoff`` and scaled to ``peak``."""
    rng = np.random.default_rng(seed)
    h = sps.firwin(511, cutoff, fs=fs)
    x = sps.lfilter(h, 1.0, rng.standard_normal(n + 511))[511:]
    return AudioSignal(peak * x / np.max(np.abs(x)), fs)


def snr_db(ref, est):
    ref, est = np.asarray(ref), np.asarray(est)
    return 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


TINY_CONFIG = """\
[network]
hidden_size = 4
lookahead_samples = 5

[trainer]
batch_size = 4
tbptt_steps = 50
epochs = {epochs}
seed = 3

[data]
n_utterances = 2
utterance_s = 0.3

[sweep]
amp_snr_db = 0 20
msg_snr_db = inf
seeds = 0 1
streams = 2
"""


def run_cli(*argv):
    from fmnd.cli import main

    return main([str(a) for a in argv])


ACCEPTANCE_LINES = []


def record(criterion, passed, detail):
    """Log one acceptance line, print it, and return ``passed``."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
