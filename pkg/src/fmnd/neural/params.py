"""Network configuration, parameter containers and the FMNN checkpoint format.

Gates are stacked in the order ``i, f, c, o`` along the first axis of the
input weights ``W_x`` (4H x D), recurrent weights ``W_h`` (4H x H) and bias
``b`` (4H). Peepholes ``w_ci``, ``w_cf``, ``w_co`` are per-unit vectors.

Checkpoint layout (little-endian)::

    magic  b"FMNN"
    u32    version (1)
    u32    num_layers, hidden_size, input_size, lookahead_samples, context_steps
    f64    dropout_rate
    f64[]  parameter blocks in :meth:`NetworkParams.arrays` order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

GATES = ("i", "f", "c", "o")

FMNN_MAGIC = b"FMNN"
FMNN_VERSION = 1
_FMNN_HEADER = struct.Struct("<4sIIIIIId")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of the stacked bidirectional demodulator.

    ``context_steps=0`` means unbounded memory: forward states are carried
    between windows. A positive value resets all state every
    ``context_steps`` steps (``1`` is the memoryless ablation) and needs
    ``lookahead_samples == 0``.
    """

    num_layers: int = 2
    hidden_size: int = 64
    dropout_rate: float = 0.2
    lookahead_samples: int = 100
    input_size: int = 10
    context_steps: int = 0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_size < 1 or self.input_size < 1:
            raise ValueError("num_layers, hidden_size and input_size must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.lookahead_samples < 0 or self.context_steps < 0:
            raise ValueError("lookahead_samples and context_steps must be non-negative")
        if self.context_steps and self.lookahead_samples:
            raise ValueError("a bounded context_steps network cannot use lookahead")

    @property
    def stateful(self) -> bool:
        return self.context_steps == 0


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 512
    tbptt_steps: int = 100
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    epochs: int = 1
    seed: int = 0
    max_grad_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.batch_size < 1 or self.tbptt_steps < 1:
            raise ValueError("batch_size and tbptt_steps must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.rmsprop_epsilon <= 0:
            raise ValueError("rmsprop_epsilon must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.max_grad_norm < 0:
            raise ValueError("max_grad_norm must be non-negative")


@dataclass
class LstmLayerParams:
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray

    def __post_init__(self):
        four_h, d = self.W_x.shape
        h = four_h // 4
        if four_h != 4 * h or self.W_h.shape != (four_h, h) or self.b.shape != (four_h,):
            raise ValueError(
                f"inconsistent LSTM shapes: W_x {self.W_x.shape}, W_h {self.W_h.shape}, "
                f"b {self.b.shape}"
            )
        for name in ("w_ci", "w_cf", "w_co"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"peephole {name} must have shape ({h},)")

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_x.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmLayerParams":
        h = hidden_size
        return cls(
            np.zeros((4 * h, input_size)), np.zeros((4 * h, h)), np.zeros(4 * h),
            np.zeros(h), np.zeros(h), np.zeros(h),
        )

    def arrays(self):
        return [
            ("W_x", self.W_x), ("W_h", self.W_h), ("b", self.b),
            ("w_ci", self.w_ci), ("w_cf", self.w_cf), ("w_co", self.w_co),
        ]

    def blocks(self):
        """Named per-gate views, e.g. ``W_hf`` or ``b_c``."""
        h = self.hidden_size
        out = []
        for prefix, arr in (("W_x", self.W_x), ("W_h", self.W_h), ("b_", self.b)):
            for k, g in enumerate(GATES):
                out.append((prefix + g, arr[k * h:(k + 1) * h]))
        out += [("w_ci", self.w_ci), ("w_cf", self.w_cf), ("w_co", self.w_co)]
        return out


@dataclass
class NetworkParams:
    layers: list  # of (forward, backward) LstmLayerParams pairs
    out_w: np.ndarray
    out_b: np.ndarray
    config: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        cfg = self.config
        if len(self.layers) != cfg.num_layers:
            raise ValueError(f"expected {cfg.num_layers} layers, got {len(self.layers)}")
        d = cfg.input_size
        for k, (fwd, bwd) in enumerate(self.layers):
            for p in (fwd, bwd):
                if p.input_size != d or p.hidden_size != cfg.hidden_size:
                    raise ValueError(
                        f"layer {k}: expected input {d} / hidden {cfg.hidden_size}, got "
                        f"{p.input_size} / {p.hidden_size}"
                    )
            d = 2 * cfg.hidden_size
        if self.out_w.shape != (2 * cfg.hidden_size,) or self.out_b.shape != (1,):
            raise ValueError("output layer shape does not match hidden size")

    def arrays(self):
        """All trainable arrays as ``(name, array)`` in checkpoint order."""
        out = []
        for k, (fwd, bwd) in enumerate(self.layers):
            for tag, p in (("fwd", fwd), ("bwd", bwd)):
                out += [(f"layer{k}.{tag}.{n}", a) for n, a in p.arrays()]
        out += [("out.w", self.out_w), ("out.b", self.out_b)]
        return out

    def blocks(self):
        """Per-gate named views used by gradient checking reports."""
        out = []
        for k, (fwd, bwd) in enumerate(self.layers):
            for tag, p in (("fwd", fwd), ("bwd", bwd)):
                out += [(f"layer{k}.{tag}.{n}", a) for n, a in p.blocks()]
        out += [("out.w", self.out_w), ("out.b", self.out_b)]
        return out

    def zeros_like(self) -> "NetworkParams":
        return self.map(np.zeros_like)

    def copy(self) -> "NetworkParams":
        return self.map(np.copy)

    def map(self, fn) -> "NetworkParams":
        def layer(p):
            return LstmLayerParams(*(fn(a) for _, a in p.arrays()))

        return NetworkParams(
            [(layer(f), layer(b)) for f, b in self.layers],
            fn(self.out_w), fn(self.out_b), self.config,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def set_flat(self, theta: np.ndarray) -> None:
        pos = 0
        for _, a in self.arrays():
            a[...] = theta[pos:pos + a.size].reshape(a.shape)
            pos += a.size

    @property
    def size(self) -> int:
        return sum(a.size for _, a in self.arrays())

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "NetworkParams":
        layers = []
        d = config.input_size
        for _ in range(config.num_layers):
            layers.append((LstmLayerParams.zeros(d, config.hidden_size),
                           LstmLayerParams.zeros(d, config.hidden_size)))
            d = 2 * config.hidden_size
        return cls(layers, np.zeros(2 * config.hidden_size), np.zeros(1), config)

    @classmethod
    def initialize(cls, config: NetworkConfig, seed: int) -> "NetworkParams":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases and peepholes, forget bias 1."""
        rng = np.random.default_rng(seed)
        net = cls.zeros(config)
        h = config.hidden_size
        for pair in net.layers:
            for p in pair:
                p.W_x[...] = rng.uniform(-1, 1, p.W_x.shape) / np.sqrt(p.input_size)
                p.W_h[...] = rng.uniform(-1, 1, p.W_h.shape) / np.sqrt(h)
                p.b[h:2 * h] = 1.0
        net.out_w[...] = rng.uniform(-1, 1, net.out_w.shape) / np.sqrt(2 * h)
        return net

    @classmethod
    def random(cls, config: NetworkConfig, seed: int, scale: float = 0.5) -> "NetworkParams":
        """Every entry (peepholes and biases included) drawn from N(0, scale^2)."""
        rng = np.random.default_rng(seed)
        net = cls.zeros(config)
        for _, a in net.arrays():
            a[...] = scale * rng.standard_normal(a.shape)
        return net


def save_checkpoint(net: NetworkParams, path) -> None:
    cfg = net.config
    header = _FMNN_HEADER.pack(
        FMNN_MAGIC, FMNN_VERSION, cfg.num_layers, cfg.hidden_size, cfg.input_size,
        cfg.lookahead_samples, cfg.context_steps, cfg.dropout_rate,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(net.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    raw = Path(path).read_bytes()
    if len(raw) < _FMNN_HEADER.size:
        raise ValueError(f"{path}: truncated FMNN header")
    magic, version, layers, hidden, inp, look, ctx, drop = _FMNN_HEADER.unpack_from(raw)
    if magic != FMNN_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {FMNN_MAGIC!r}")
    if version != FMNN_VERSION:
        raise ValueError(f"{path}: unsupported FMNN version {version}")
    cfg = NetworkConfig(num_layers=layers, hidden_size=hidden, dropout_rate=drop,
                        lookahead_samples=look, input_size=inp, context_steps=ctx)
    net = NetworkParams.zeros(cfg)
    theta = np.frombuffer(raw[_FMNN_HEADER.size:], dtype="<f8")
    if theta.size != net.size:
        raise ValueError(f"{path}: expected {net.size} parameters, found {theta.size}")
    net.set_flat(theta.astype(np.float64))
    return net


def with_config(net: NetworkParams, **changes) -> NetworkParams:
    """Same weights under a config differing only in non-shape fields."""
    out = net.copy()
    out.config = replace(net.config, **changes)
    NetworkParams.__post_init__(out)
    return out
