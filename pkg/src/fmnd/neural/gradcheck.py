"""Central finite-difference check of the analytic LSTM gradients, per parameter block."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fmnd.neural.lstm import CellState, forward_backward, make_dropout_masks, network_forward
from fmnd.neural.params import NetworkConfig, NetworkParams

DEFAULT_TOLERANCE = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``, or 0 when both vanish."""
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return 0.0 if den == 0.0 else num / den


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)  # block name -> relative error
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def worst(self) -> tuple:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def failed(self) -> list:
        return [k for k, v in self.errors.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_text(self) -> str:
        lines = [f"{k}={v:.3e} {'ok' if v < self.tolerance else 'FAIL'}"
                 for k, v in self.errors.items()]
        lines.append(f"tolerance={self.tolerance:g}")
        lines.append(f"result={'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"


def gradient_check(net: NetworkParams, window, targets, carry=None, masks=None, *,
                   n_out=None, step: float = 1e-5, tolerance: float = DEFAULT_TOLERANCE,
                   corrupt: str | None = None) -> GradCheckReport:
    """Compare analytic and central-difference gradients of the window MSE.

    Dropout masks, if given, are held fixed so the loss is deterministic.
    ``corrupt`` names a block whose analytic gradient is deliberately
    perturbed; the check must then report that block.
    """
    mode = "train" if masks is not None else "infer"
    grads, _, _, _ = forward_backward(net, window, targets, carry, mode, n_out=n_out,
                                      masks=masks)
    names = [k for k, _ in net.blocks()]
    if corrupt is not None and corrupt not in names:
        raise KeyError(f"unknown parameter block {corrupt!r}")
    targets = np.asarray(targets, dtype=float)
    report = GradCheckReport(tolerance=tolerance)
    for (name, p), (_, g) in zip(net.blocks(), grads.blocks()):
        analytic = g.copy()
        if name == corrupt:
            analytic.flat[0] += 1e-3 * (1.0 + abs(analytic.flat[0]))
        numeric = np.zeros_like(p)
        for j in range(p.size):
            orig = p.flat[j]
            losses = []
            for s in (1.0, -1.0):
                p.flat[j] = orig + s * step
                y, _ = network_forward(net, window, carry, mode, n_out=n_out, masks=masks)
                losses.append(float(np.mean((y - targets) ** 2)))
            p.flat[j] = orig
            numeric.flat[j] = (losses[0] - losses[1]) / (2.0 * step)
        report.errors[name] = relative_error(analytic, numeric)
    return report


def random_problem(seed: int = 0, *, num_layers: int = 2, hidden_size: int = 3,
                   input_size: int = 4, lookahead: int = 2, steps: int = 4, batch: int = 2,
                   dropout: float = 0.3):
    """A small random network, window, targets, carry and fixed dropout masks."""
    cfg = NetworkConfig(num_layers=num_layers, hidden_size=hidden_size, dropout_rate=dropout,
                        lookahead_samples=lookahead, input_size=input_size)
    rng = np.random.default_rng(seed)
    net = NetworkParams.random(cfg, seed, 0.5)
    T = steps + lookahead
    window = rng.standard_normal((T, batch, input_size))
    targets = rng.standard_normal((steps, batch))
    carry = [CellState(0.5 * rng.standard_normal((batch, hidden_size)),
                       rng.standard_normal((batch, hidden_size))) for _ in range(num_layers)]
    masks = make_dropout_masks(net, T, batch, rng)
    return net, window, targets, carry, masks
