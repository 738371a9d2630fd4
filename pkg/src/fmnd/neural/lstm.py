"""Peephole LSTM, stacked bidirectional network, and exact backpropagation.

Sequences are time-major: ``(T, B, D)``. A training window holds
``n_out`` output steps followed by ``T - n_out`` lookahead rows that only
feed the backward direction. The forward-direction state after step
``n_out - 1`` of every layer is the carry for the next window; gradients do
not flow into the incoming carry.

Cell update, with ``sigma`` the logistic function::

    i = sigma(W_xi x + W_hi h' + w_ci * c' + b_i)
    f = sigma(W_xf x + W_hf h' + w_cf * c' + b_f)
    c = f * c' + i * tanh(W_xc x + W_hc h' + b_c)
    o = sigma(W_xo x + W_ho h' + w_co * c + b_o)
    h = o * tanh(c)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from fmnd.neural import _kernels
from fmnd.neural.params import LstmLayerParams, NetworkParams


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int | None = None) -> "CellState":
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape), np.zeros(shape))


def lstm_cell_forward(x, prev: CellState, p: LstmLayerParams) -> CellState:
    """One peephole LSTM step; ``x`` may be a vector or a ``(B, D)`` batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.input_size or prev.h.shape[-1] != p.hidden_size:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, h {prev.h.shape}, "
            f"layer expects input {p.input_size}, hidden {p.hidden_size}"
        )
    H = p.hidden_size
    z = x @ p.W_x.T + prev.h @ p.W_h.T + p.b
    i = expit(z[..., :H] + p.w_ci * prev.c)
    f = expit(z[..., H:2 * H] + p.w_cf * prev.c)
    c = f * prev.c + i * np.tanh(z[..., 2 * H:3 * H])
    o = expit(z[..., 3 * H:] + p.w_co * c)
    return CellState(o * np.tanh(c), c)


class _SequenceTrace:
    __slots__ = ("X", "h0", "c0", "gates", "C", "TC", "H")


_pool = threading.local()


def _buf(slot, name, shape):
    """Per-thread scratch array reused across calls.

    Reusing already-touched memory avoids a page fault storm on every
    window; buffers are valid until the next call with the same slot.
    ``slot=None`` returns a fresh array.
    """
    if slot is None:
        return np.empty(shape)
    bufs = getattr(_pool, "bufs", None)
    if bufs is None:
        bufs = _pool.bufs = {}
    key = (slot, name)
    arr = bufs.get(key)
    if arr is None or arr.shape != shape:
        arr = bufs[key] = np.empty(shape)
    return arr


def _sigmoid_scale(H):
    # sigmoid(a) = (1 + tanh(a / 2)) / 2; the halving is folded into the weights
    return np.concatenate([np.full(2 * H, 0.5), np.ones(H), np.full(H, 0.5)])


def _sequence_forward(X, h0, c0, p: LstmLayerParams, slot=None):
    """Run one direction over ``X``; gates are stored gate-major ``(T, 4, B, H)``."""
    T, B, D = X.shape
    H = p.hidden_size
    s = _sigmoid_scale(H)
    proj = _buf(slot, "proj", (T * B, 4 * H))
    np.matmul(X.reshape(T * B, D), (p.W_x * s[:, None]).T, out=proj)
    proj += p.b * s
    Z = _buf(slot, "Z", (T, 4, B, H))
    np.copyto(Z, proj.reshape(T, B, 4, H).transpose(0, 2, 1, 3))
    Wh4 = np.ascontiguousarray((p.W_h * s[:, None]).reshape(4, H, H).transpose(0, 2, 1))
    w_if = 0.5 * np.stack([p.w_ci, p.w_cf])[:, None, :]
    w_o = 0.5 * p.w_co
    C = _buf(slot, "C", (T, B, H))
    TC = _buf(slot, "TC", (T, B, H))
    Hs = _buf(slot, "H", (T, B, H))
    rec = _buf(slot, "rec", (4, B, H))
    peep = _buf(slot, "peep", (2, B, H))
    tmp = _buf(slot, "tmp", (B, H))
    h, c = h0, c0
    for t in range(T):
        z = Z[t]
        np.matmul(h, Wh4, out=rec)
        z += rec
        np.multiply(c, w_if, out=peep)
        z[:2] += peep
        np.tanh(z[:3], out=z[:3])
        z[:2] *= 0.5
        z[:2] += 0.5
        i, f, g, o = z
        c_new = C[t]
        np.multiply(f, c, out=c_new)
        np.multiply(i, g, out=tmp)
        c_new += tmp
        np.multiply(c_new, w_o, out=tmp)
        o += tmp
        np.tanh(o, out=o)
        o *= 0.5
        o += 0.5
        np.tanh(c_new, out=TC[t])
        np.multiply(o, TC[t], out=Hs[t])
        h, c = Hs[t], c_new
    tr = _SequenceTrace()
    tr.X, tr.h0, tr.c0, tr.gates, tr.C, tr.TC, tr.H = X, h0, c0, Z, C, TC, Hs
    return Hs, tr


def _sequence_backward(dHs, tr: _SequenceTrace, p: LstmLayerParams, grad: LstmLayerParams,
                       slot=None):
    """Accumulate parameter gradients into ``grad``; return ``(dX, dh0, dc0)``."""
    T, B, H = tr.H.shape
    D = tr.X.shape[2]
    dZ = _buf(slot, "dZ", (T, B, 4 * H))
    dh0, dc0 = _kernels.backward_loop(tr.gates, tr.C, tr.TC, np.ascontiguousarray(tr.c0),
                                      np.ascontiguousarray(dHs), np.ascontiguousarray(p.W_h),
                                      p.w_ci, p.w_cf, p.w_co, dZ)
    dZ2 = dZ.reshape(T * B, 4 * H)
    prev = _buf(slot, "prev", (T, B, H))
    prev[0] = tr.h0
    prev[1:] = tr.H[:-1]
    grad.W_h += dZ2.T @ prev.reshape(T * B, H)
    prev[0] = tr.c0
    prev[1:] = tr.C[:-1]
    C_prev = prev.reshape(T * B, H)
    grad.w_ci += np.einsum("nh,nh->h", dZ2[:, :H], C_prev)
    grad.w_cf += np.einsum("nh,nh->h", dZ2[:, H:2 * H], C_prev)
    grad.w_co += np.einsum("nh,nh->h", dZ2[:, 3 * H:], tr.C.reshape(T * B, H))
    grad.W_x += dZ2.T @ tr.X.reshape(T * B, D)
    grad.b += dZ2.sum(axis=0)
    dX = _buf(slot, "dX", (T, B, D))
    np.matmul(dZ2, p.W_x, out=dX.reshape(T * B, D))
    return dX, dh0, dc0


def _as_batch(xs):
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 2:
        return xs[:, None, :], True
    if xs.ndim != 3:
        raise ValueError(f"expected (T, D) or (T, B, D) input, got shape {xs.shape}")
    return xs, False


def bidirectional_layer_forward(xs, fwd_init: CellState | None, layer, dropout_mask=None):
    """Concatenate forward and backward hidden sequences, ``(T, [B,] 2H)``.

    The backward direction always starts from a zero state at the last row.
    ``dropout_mask`` multiplies the concatenated output (already scaled).
    """
    fwd, bwd = layer
    X, single = _as_batch(xs)
    T, B, D = X.shape
    if T < 1:
        raise ValueError("sequence must have at least one step")
    if D != fwd.input_size or D != bwd.input_size:
        raise ValueError(f"input size {D} does not match layer input {fwd.input_size}")
    H = fwd.hidden_size
    if fwd_init is None:
        h0, c0 = np.zeros((B, H)), np.zeros((B, H))
    else:
        h0 = np.broadcast_to(fwd_init.h, (B, H)).astype(float)
        c0 = np.broadcast_to(fwd_init.c, (B, H)).astype(float)
    Hf, _ = _sequence_forward(X, h0, c0, fwd)
    Hb, _ = _sequence_forward(X[::-1].copy(), np.zeros((B, H)), np.zeros((B, H)), bwd)
    out = np.concatenate([Hf, Hb[::-1]], axis=2)
    if dropout_mask is not None:
        out = out * (dropout_mask[:, None, :] if single else dropout_mask)
    return out[:, 0, :] if single else out


def make_dropout_masks(params: NetworkParams, T: int, B: int, rng) -> list:
    """Inverted-dropout masks for the outputs of every non-top layer."""
    cfg = params.config
    keep = 1.0 - cfg.dropout_rate
    if cfg.dropout_rate == 0.0:
        return [None] * (cfg.num_layers - 1)
    return [
        (rng.random((T, B, 2 * cfg.hidden_size)) < keep) / keep
        for _ in range(cfg.num_layers - 1)
    ]


def _fold(X, k):
    """(T, B, D) -> (k, T/k * B, D): independent k-step segments."""
    T, B = X.shape[:2]
    if T % k:
        raise ValueError(f"window length {T} is not a multiple of context_steps {k}")
    rest = X.shape[2:]
    return X.reshape(T // k, k, B, *rest).swapaxes(0, 1).reshape(k, (T // k) * B, *rest)


def _unfold(Y, T, B):
    k = Y.shape[0]
    rest = Y.shape[2:]
    return Y.reshape(k, T // k, B, *rest).swapaxes(0, 1).reshape(T, B, *rest)


class _NetTrace:
    pass


def _net_forward(params: NetworkParams, X, carry, n_out, masks):
    cfg = params.config
    T, B, D = X.shape
    if D != cfg.input_size:
        raise ValueError(f"window rows have {D} values, network expects {cfg.input_size}")
    H = cfg.hidden_size
    L = cfg.num_layers
    tr = _NetTrace()
    tr.T, tr.B, tr.n_out, tr.masks = T, B, n_out, masks
    tr.layers = []
    inp = X
    new_carry = []
    zeros = np.zeros((B, H))
    for k, (fwd, bwd) in enumerate(params.layers):
        top = k == L - 1
        h0, c0 = (zeros, zeros) if carry is None else (carry[k].h, carry[k].c)
        steps = n_out if top else T
        rev = _buf((k, "b"), "in", inp.shape)
        np.copyto(rev, inp[::-1])
        Hf, tf = _sequence_forward(inp[:steps], h0, c0, fwd, slot=(k, "f"))
        Hb, tb = _sequence_forward(rev, zeros, zeros, bwd, slot=(k, "b"))
        new_carry.append(CellState(Hf[n_out - 1].copy(), tf.C[n_out - 1].copy()))
        out = _buf(k, "out", (steps, B, 2 * H))
        out[..., :H] = Hf
        out[..., H:] = Hb[::-1][:steps]
        if not top and masks[k] is not None:
            out *= masks[k]
        tr.layers.append((tf, tb, steps))
        inp = out
    tr.top = inp
    y = inp @ params.out_w + params.out_b[0]
    return y, new_carry, tr


def _net_backward(params: NetworkParams, tr, dy):
    grads = params.zeros_like()
    H = params.config.hidden_size
    grads.out_w += np.tensordot(dy, tr.top, axes=([0, 1], [0, 1]))
    grads.out_b += dy.sum()
    d_out = dy[..., None] * params.out_w
    for k in range(len(params.layers) - 1, -1, -1):
        fwd, bwd = params.layers[k]
        gf, gb = grads.layers[k]
        tf, tb, steps = tr.layers[k]
        if k < len(params.layers) - 1 and tr.masks[k] is not None:
            d_out *= tr.masks[k]
        dHb = _buf((k, "b"), "dH", (tr.T, tr.B, H))
        dHb[:tr.T - steps] = 0.0
        dHb[tr.T - steps:] = d_out[::-1, :, H:]
        dXf, _, _ = _sequence_backward(d_out[..., :H], tf, fwd, gf, slot=(k, "f"))
        dXb, _, _ = _sequence_backward(dHb, tb, bwd, gb, slot=(k, "b"))
        dX = _buf(k, "dIn", dXb.shape)
        np.copyto(dX, dXb[::-1])
        dX[:steps] += dXf
        d_out = dX
    return grads


def _prepare(params, window, carry, n_out, mode, masks, rng):
    cfg = params.config
    X, single = _as_batch(window)
    T, B, _ = X.shape
    if n_out is None:
        n_out = T
    if not 1 <= n_out <= T:
        raise ValueError(f"n_out must lie in [1, {T}], got {n_out}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if single and carry is not None:
        carry = [CellState(np.atleast_2d(s.h), np.atleast_2d(s.c)) for s in carry]
    if mode == "train" and masks is None:
        if rng is None:
            raise ValueError("train mode needs a dropout rng or explicit masks")
        masks = make_dropout_masks(params, T, B, rng)
    if mode == "infer":
        masks = [None] * (cfg.num_layers - 1)
    if not cfg.stateful:
        k = cfg.context_steps
        if n_out != T:
            raise ValueError("bounded-context networks take no lookahead rows")
        X = _fold(X, k)
        masks = [None if m is None else _fold(m, k) for m in masks]
        carry = None
        n_out = k
    return X, single, carry, n_out, masks, (T, B)


def network_forward(params: NetworkParams, window, carry=None, mode="infer", *,
                    n_out=None, rng=None, masks=None):
    """Map a window of 10-vectors to audio samples.

    Returns ``(y, carry)`` with ``y`` of shape ``(n_out, B)`` (or ``(n_out,)``
    for an unbatched ``(T, D)`` window).
    """
    X, single, carry, n_eff, masks, (T, B) = _prepare(params, window, carry, n_out, mode,
                                                       masks, rng)
    y, new_carry, _ = _net_forward(params, X, carry, n_eff, masks)
    if not params.config.stateful:
        y = _unfold(y, T, B)
        new_carry = None
    if single:
        y = y[:, 0]
        if new_carry is not None:
            new_carry = [CellState(s.h[0], s.c[0]) for s in new_carry]
    return y, new_carry


def forward_backward(params: NetworkParams, window, targets, carry=None, mode="infer", *,
                     n_out=None, rng=None, masks=None):
    """Window MSE, its exact gradient, the new carry and the outputs."""
    X, single, carry, n_eff, masks, (T, B) = _prepare(params, window, carry, n_out, mode,
                                                       masks, rng)
    targets = np.asarray(targets, dtype=float)
    if single:
        targets = targets[:, None]
    if not params.config.stateful:
        targets = _fold(targets, params.config.context_steps)
    y, new_carry, tr = _net_forward(params, X, carry, n_eff, masks)
    if targets.shape != y.shape:
        raise ValueError(f"targets shape {targets.shape} does not match outputs {y.shape}")
    err = y - targets
    with np.errstate(over="ignore"):  # a diverged loss is caught by the caller
        loss = float(np.mean(err * err))
    grads = _net_backward(params, tr, (2.0 / err.size) * err)
    for name, g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    if not params.config.stateful:
        y = _unfold(y, T, B)
        new_carry = None
    return grads, loss, new_carry, y


def network_backward(params: NetworkParams, window, carry, targets, *, mode="infer",
                     n_out=None, rng=None, masks=None):
    """``(gradients, loss)`` of the window mean squared error."""
    grads, loss, _, _ = forward_backward(params, window, targets, carry, mode,
                                         n_out=n_out, rng=rng, masks=masks)
    return grads, loss
