import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fmnd.neural.gradcheck import gradient_check, random_problem, relative_error
from fmnd.neural.lstm import (CellState, bidirectional_layer_forward, forward_backward,
                              lstm_cell_forward, make_dropout_masks, network_backward,
                              network_forward)
from fmnd.neural.params import (LstmLayerParams, NetworkConfig, NetworkParams, load_checkpoint,
                                save_checkpoint)


def _layer(seed, d, h, scale=0.5):
    rng = np.random.default_rng(seed)
    p = LstmLayerParams.zeros(d, h)
    for _, a in p.arrays():
        a[...] = scale * rng.standard_normal(a.shape)
    return p


def _cfg(**kw):
    base = dict(num_layers=2, hidden_size=4, dropout_rate=0.0, lookahead_samples=0, input_size=10)
    base.update(kw)
    return NetworkConfig(**base)


# ------------------------------------------------------------------- cell


def test_zero_params_zero_state():
    p = LstmLayerParams.zeros(3, 4)
    s = lstm_cell_forward(np.array([1.0, -2.0, 0.5]), CellState.zeros(4), p)
    assert np.all(s.c == 0.0) and np.all(s.h == 0.0)


def test_zero_params_unit_cell():
    p = LstmLayerParams.zeros(3, 4)
    s = lstm_cell_forward(np.zeros(3), CellState(np.zeros(4), np.ones(4)), p)
    np.testing.assert_allclose(s.c, 0.5, rtol=1e-15)
    np.testing.assert_allclose(s.h, 0.5 * math.tanh(0.5), rtol=1e-15)
    assert abs(s.h[0] - 0.2311) < 1e-4


@given(st.integers(0, 2**32 - 1))
def test_cell_matches_scalar_oracle(seed):
    p = _layer(seed, 2, 3)
    rng = np.random.default_rng(seed + 1)
    x, h, c = rng.standard_normal(2), rng.uniform(-1, 1, 3), rng.standard_normal(3)
    s = lstm_cell_forward(x, CellState(h, c), p)
    h_ref, c_ref = oracles.cell_step(list(x), list(h), list(c), p)
    np.testing.assert_allclose(s.h, h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.c, c_ref, rtol=0, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
def test_cell_output_is_bounded(seed, scale):
    p = _layer(seed, 4, 5, scale)
    rng = np.random.default_rng(seed)
    s = CellState(np.zeros(5), np.zeros(5))
    for _ in range(20):
        s = lstm_cell_forward(scale * rng.standard_normal(4), s, p)
        assert np.all(np.abs(s.h) <= 1.0) and np.all(np.isfinite(s.c))


def test_cell_dimension_mismatch():
    with pytest.raises(ValueError):
        lstm_cell_forward(np.zeros(5), CellState.zeros(4), LstmLayerParams.zeros(3, 4))


# -------------------------------------------------------- bidirectional


def test_bidirectional_single_step():
    fwd, bwd = _layer(1, 3, 2), _layer(2, 3, 2)
    x = np.array([[0.3, -0.1, 0.7]])
    out = bidirectional_layer_forward(x, None, (fwd, bwd))
    zero = CellState.zeros(2)
    expect = np.concatenate([lstm_cell_forward(x[0], zero, fwd).h,
                             lstm_cell_forward(x[0], zero, bwd).h])
    np.testing.assert_allclose(out[0], expect, rtol=1e-14)


def test_bidirectional_time_reversal_symmetry():
    fwd, bwd = _layer(3, 3, 2), _layer(4, 3, 2)
    xs = np.random.default_rng(0).standard_normal((6, 3))
    out = bidirectional_layer_forward(xs, None, (fwd, bwd))
    rev = bidirectional_layer_forward(xs[::-1], None, (bwd, fwd))
    np.testing.assert_allclose(rev[::-1], np.concatenate([out[:, 2:], out[:, :2]], axis=1),
                               rtol=0, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_bidirectional_matches_oracle(seed):
    fwd, bwd = _layer(seed, 3, 2), _layer(seed + 7, 3, 2)
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((3, 3))
    h0, c0 = rng.uniform(-1, 1, 2), rng.standard_normal(2)
    out = bidirectional_layer_forward(xs, CellState(h0, c0), (fwd, bwd))
    ref = oracles.bidirectional([list(r) for r in xs], fwd, bwd, list(h0), list(c0))
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


# --------------------------------------------------------------- network


def test_zero_network_outputs_zero():
    net = NetworkParams.zeros(_cfg())
    y, carry = network_forward(net, np.random.default_rng(0).standard_normal((7, 10)))
    assert np.all(y == 0.0) and len(carry) == 2


def test_infer_is_deterministic():
    net = NetworkParams.random(_cfg(dropout_rate=0.5), 0)
    x = np.random.default_rng(1).standard_normal((9, 3, 10))
    a, _ = network_forward(net, x, mode="infer")
    b, _ = network_forward(net, x, mode="infer")
    assert np.array_equal(a, b)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_network_matches_oracle(seed, lookahead):
    net = NetworkParams.random(_cfg(lookahead_samples=lookahead), seed)
    rng = np.random.default_rng(seed)
    T = 5 + lookahead
    x = rng.standard_normal((T, 10))
    carry = [CellState(rng.uniform(-1, 1, 4), rng.standard_normal(4)) for _ in range(2)]
    y, new_carry = network_forward(net, x, carry, n_out=5)
    ref, ref_carry = oracles.network(net, x.tolist(),
                                     [(list(s.h), list(s.c)) for s in carry], n_out=5)
    np.testing.assert_allclose(y, ref, rtol=0, atol=1e-10)
    for s, (h, c) in zip(new_carry, ref_carry):
        np.testing.assert_allclose(s.h, h, atol=1e-10)
        np.testing.assert_allclose(s.c, c, atol=1e-10)


def test_batched_equals_per_stream():
    net = NetworkParams.random(_cfg(lookahead_samples=2), 3)
    x = np.random.default_rng(2).standard_normal((6, 4, 10))
    y, _ = network_forward(net, x, n_out=4)
    for b in range(4):
        yb, _ = network_forward(net, x[:, b], n_out=4)
        np.testing.assert_allclose(y[:, b], yb, rtol=0, atol=1e-13)


def _two_windows_vs_long(num_layers, T=6, la=3, seed=5):
    net = NetworkParams.random(_cfg(num_layers=num_layers, lookahead_samples=la), seed)
    x = np.random.default_rng(seed).standard_normal((2 * T + la, 3, 10))
    _, carry = network_forward(net, x[:T + la], None, n_out=T)
    y2, carry2 = network_forward(net, x[T:], carry, n_out=T)
    long, carry_long = network_forward(net, x, None, n_out=2 * T)
    return y2, long[T:], carry2, carry_long


def test_tbptt_carry_consistency():
    # the second window's backward context ends where the long pass's does
    y2, long, carry2, carry_long = _two_windows_vs_long(1)
    np.testing.assert_array_equal(y2, long)
    np.testing.assert_array_equal(carry2[0].h, carry_long[0].h)
    np.testing.assert_array_equal(carry2[0].c, carry_long[0].c)


def test_stacked_carry_first_layer_exact():
    # upper layers carry state built from truncated backward context, so only
    # the first layer's forward state is exactly shared with the long pass
    y2, long, carry2, carry_long = _two_windows_vs_long(2)
    np.testing.assert_array_equal(carry2[0].h, carry_long[0].h)
    assert 0 < np.max(np.abs(y2 - long)) < 1e-2


def test_context_one_is_memoryless():
    net = NetworkParams.random(_cfg(context_steps=1), 4)
    x = np.random.default_rng(0).standard_normal((8, 2, 10))
    y, carry = network_forward(net, x)
    assert carry is None
    x2 = x.copy()
    x2[3] += 1.0
    y2, _ = network_forward(net, x2)
    changed = np.any(y2 != y, axis=1)
    assert changed.tolist() == [t == 3 for t in range(8)]
    single, _ = network_forward(net, x[3:4])
    np.testing.assert_allclose(single, y[3:4], rtol=1e-14)


# -------------------------------------------------------------- gradients


def test_zero_targets_zero_params():
    net = NetworkParams.zeros(_cfg(hidden_size=3))
    grads, loss = network_backward(net, np.ones((4, 10)), None, np.zeros(4))
    assert loss == 0.0 and np.all(grads.flat() == 0.0)


def test_doubling_targets_quadruples_loss():
    net = NetworkParams.zeros(_cfg(hidden_size=3))
    t = np.random.default_rng(0).standard_normal(4)
    _, l1 = network_backward(net, np.ones((4, 10)), None, t)
    _, l2 = network_backward(net, np.ones((4, 10)), None, 2 * t)
    assert math.isclose(l2, 4 * l1, rel_tol=1e-14)


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1))
def test_finite_difference_gradients(seed):
    net, window, targets, carry, masks = random_problem(seed, hidden_size=3, steps=4)
    report = gradient_check(net, window, targets, carry, masks, n_out=4)
    assert report.passed, report.to_text()
    assert len(report.errors) == len(net.blocks())


def test_gradcheck_zero_params():
    net = NetworkParams.zeros(_cfg(hidden_size=2, input_size=3))
    report = gradient_check(net, np.zeros((3, 1, 3)), np.zeros((3, 1)))
    assert all(v == 0.0 for v in report.errors.values())
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_gradcheck_flags_corrupted_block():
    net, window, targets, carry, masks = random_problem(1)
    report = gradient_check(net, window, targets, carry, masks, n_out=4,
                            corrupt="layer0.fwd.W_hf")
    assert report.failed == ["layer0.fwd.W_hf"]


def test_memoryless_gradients():
    cfg = NetworkConfig(num_layers=2, hidden_size=3, dropout_rate=0.0, lookahead_samples=0,
                        input_size=4, context_steps=2)
    net = NetworkParams.random(cfg, 2)
    rng = np.random.default_rng(2)
    report = gradient_check(net, rng.standard_normal((4, 2, 4)), rng.standard_normal((4, 2)))
    assert report.passed, report.to_text()


def test_non_finite_gradient_names_block():
    net = NetworkParams.random(_cfg(hidden_size=3), 0)
    net.layers[0][0].W_h[0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="layer"):
        forward_backward(net, np.ones((4, 10)), np.zeros(4))


# ---------------------------------------------------------------- dropout


def test_dropout_masks_are_inverted():
    net = NetworkParams.zeros(_cfg(num_layers=3, dropout_rate=0.2))
    masks = make_dropout_masks(net, 200, 50, np.random.default_rng(0))
    assert len(masks) == 2
    for m in masks:
        assert set(np.unique(m)) <= {0.0, 1.0 / 0.8}
        assert abs(m.mean() - 1.0) < 0.02


def test_train_mode_needs_rng_and_infer_ignores_masks():
    net = NetworkParams.random(_cfg(dropout_rate=0.3), 1)
    x = np.random.default_rng(0).standard_normal((5, 2, 10))
    with pytest.raises(ValueError):
        network_forward(net, x, mode="train")
    ones = [np.ones((5, 2, 8))]
    y_train, _ = network_forward(net, x, mode="train", masks=ones)
    y_infer, _ = network_forward(net, x, mode="infer")
    np.testing.assert_allclose(y_train, y_infer, rtol=1e-14)
    zeros = [np.zeros((5, 2, 8))]
    y_masked, _ = network_forward(net, x, mode="infer", masks=zeros)
    assert np.array_equal(y_masked, y_infer)


# ---------------------------------------------------------------- params


def test_initialization_recipe():
    cfg = NetworkConfig(hidden_size=8)
    net = NetworkParams.initialize(cfg, 0)
    for k, (fwd, bwd) in enumerate(net.layers):
        for p in (fwd, bwd):
            assert np.all(np.abs(p.W_x) <= 1 / math.sqrt(p.input_size))
            assert np.all(np.abs(p.W_h) <= 1 / math.sqrt(8))
            assert np.all(p.b[8:16] == 1.0) and np.all(p.b[:8] == 0) and np.all(p.b[16:] == 0)
            assert not (p.w_ci.any() or p.w_cf.any() or p.w_co.any())
        assert fwd.input_size == (10 if k == 0 else 16)


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        NetworkConfig(context_steps=1, lookahead_samples=5)


def test_checkpoint_round_trip(tmp_path):
    net = NetworkParams.random(_cfg(lookahead_samples=7, dropout_rate=0.25), 9)
    path = tmp_path / "m.fmnn"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.config == net.config
    assert np.array_equal(back.flat(), net.flat())
    raw = path.read_bytes()
    assert raw[:4] == b"FMNN"
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(path)
