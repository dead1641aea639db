import numpy as np
import pytest

from chardep import nn
from chardep.optim import OptimizerState, Parameter, clip_gradients, global_norm, sgd_step
from conftest import numeric_grad, rel_error

RNG = np.random.default_rng(1234)


def test_dense_relu_values():
    y, _ = nn.dense_relu(np.array([1.0, -2.0]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(y, [1.0, 0.0])
    y, _ = nn.dense_relu(np.zeros(2), np.zeros((2, 2)), np.array([3.0, -3.0]))
    np.testing.assert_array_equal(y, [3.0, 0.0])
    with pytest.raises(ValueError):
        nn.dense_relu(np.zeros(3), np.zeros((2, 2)), np.zeros(2))


def _check_dense_relu(rng):
    x = rng.standard_normal((3, 5))
    W = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    up = rng.standard_normal((3, 4))

    def f():
        return float(np.sum(nn.dense_relu(x, W, b)[0] * up))

    y, cache = nn.dense_relu(x, W, b)
    dx, dW, db = nn.dense_relu_backward(up, cache)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dW, numeric_grad(f, W)), rel_error(db, numeric_grad(f, b)))


def test_dense_relu_gradient():
    assert _check_dense_relu(RNG) < 1e-4


def test_conv_detects_trigram_anywhere():
    # one-hot characters: 0 = filler (zero vector), 1..3 = a, b, c
    emb = np.vstack([np.zeros(3), np.eye(3)])
    K = np.zeros((1, 3, 3))
    K[0, 0, 0] = K[0, 1, 1] = K[0, 2, 2] = 1.0 / 3  # pattern "abc"
    bias = np.array([0.25])
    outputs = []
    for pos in range(0, 6):
        ids = np.zeros(9, dtype=int)
        ids[pos : pos + 3] = [1, 2, 3]
        y, _ = nn.conv1d_maxpool(emb[ids].T, K, bias)
        outputs.append(y[0])
    np.testing.assert_allclose(outputs, 1.0 + 0.25)


def test_conv_zero_kernel_and_short_input():
    y, _ = nn.conv1d_maxpool(RNG.standard_normal((4, 10)), np.zeros((2, 4, 3)), np.zeros(2))
    np.testing.assert_array_equal(y, 0)
    with pytest.raises(ValueError):
        nn.conv1d_maxpool(np.zeros((4, 2)), np.zeros((2, 4, 3)), np.zeros(2))


def test_conv_matches_sliding_window_brute_force():
    C = RNG.standard_normal((3, 11))
    K = RNG.standard_normal((5, 3, 4))
    bias = RNG.standard_normal(5)
    expected = np.zeros(5)
    for o in range(5):
        acts = [max(0.0, bias[o] + sum(K[o, c, j] * C[c, p + j] for c in range(3) for j in range(4))) for p in range(11 - 4 + 1)]
        expected[o] = max(acts)
    np.testing.assert_allclose(nn.conv1d_maxpool(C, K, bias)[0], expected)


def _check_conv(rng):
    C = rng.standard_normal((2, 3, 8))  # batch of two words
    K = rng.standard_normal((4, 3, 3))
    bias = rng.standard_normal(4) * 0.1
    up = rng.standard_normal((2, 4))

    def f():
        return float(np.sum(nn.conv1d_maxpool(C, K, bias)[0] * up))

    y, cache = nn.conv1d_maxpool(C, K, bias)
    dC, dK, db = nn.conv1d_maxpool_backward(up, cache)
    return max(rel_error(dC, numeric_grad(f, C)), rel_error(dK, numeric_grad(f, K)), rel_error(db, numeric_grad(f, bias)))


def test_conv_gradient():
    assert _check_conv(RNG) < 1e-4


def test_conv_tie_goes_to_first_position():
    C = np.ones((1, 6))
    K = np.ones((1, 1, 2))
    y, cache = nn.conv1d_maxpool(C, K, np.zeros(1))
    dC, _, _ = nn.conv1d_maxpool_backward(np.ones(1), cache)
    np.testing.assert_array_equal(dC, [[1, 1, 0, 0, 0, 0]])


def _lstm_params(rng, d, H, scale=0.5):
    return [rng.standard_normal((4 * H, d + H)) * scale, rng.standard_normal(4 * H) * scale]


def test_bilstm_zero_network():
    X = RNG.standard_normal((2, 5, 3))
    z = [np.zeros((8, 5)), np.zeros(8)]
    y, _ = nn.bilstm_final(X, [5, 2], *z, *z)
    np.testing.assert_array_equal(y, 0)


def test_bilstm_single_character_halves_equal():
    X = RNG.standard_normal((1, 1, 3))
    W, b = _lstm_params(RNG, 3, 4)
    y, _ = nn.bilstm_final(X, [1], W, b, W, b)
    np.testing.assert_allclose(y[0, :4], y[0, 4:])


def test_bilstm_padding_is_ignored():
    W1, b1 = _lstm_params(RNG, 3, 4)
    W2, b2 = _lstm_params(RNG, 3, 4)
    X = RNG.standard_normal((1, 3, 3))
    padded = np.concatenate([X, RNG.standard_normal((1, 4, 3))], axis=1)
    a, _ = nn.bilstm_final(X, [3], W1, b1, W2, b2)
    b, _ = nn.bilstm_final(padded, [3], W1, b1, W2, b2)
    np.testing.assert_allclose(a, b)


def _check_bilstm(rng):
    X = rng.standard_normal((2, 3, 2))
    lengths = np.array([3, 2])
    Wf, bf = _lstm_params(rng, 2, 3)
    Wb, bb = _lstm_params(rng, 2, 3)
    up = rng.standard_normal((2, 6))

    def f():
        return float(np.sum(nn.bilstm_final(X, lengths, Wf, bf, Wb, bb)[0] * up))

    y, cache = nn.bilstm_final(X, lengths, Wf, bf, Wb, bb)
    dX, dWf, dbf, dWb, dbb = nn.bilstm_final_backward(up, cache)
    dX_num = numeric_grad(f, X)
    dX_num[1, 2] = 0  # padding position
    return max(
        rel_error(dX, dX_num),
        rel_error(dWf, numeric_grad(f, Wf)),
        rel_error(dbf, numeric_grad(f, bf)),
        rel_error(dWb, numeric_grad(f, Wb)),
        rel_error(dbb, numeric_grad(f, bb)),
    )


def test_bilstm_gradient():
    assert _check_bilstm(RNG) < 1e-4


def test_softmax_examples():
    _, p, _ = nn.softmax_xent(np.zeros(2), 0)
    np.testing.assert_allclose(p, [0.5, 0.5])
    logits = RNG.standard_normal(5)
    _, p1, _ = nn.softmax_xent(logits, 2)
    _, p2, _ = nn.softmax_xent(logits + 37.0, 2)
    np.testing.assert_allclose(p1, p2)
    _, p, g = nn.softmax_xent(np.array([1.0, 2.0, 3.0]), 2, np.array([True, False, True]))
    e = np.exp([1.0, 3.0])
    np.testing.assert_allclose(p, [e[0] / e.sum(), 0.0, e[1] / e.sum()])
    assert g[1] == 0


def test_softmax_rejects_masked_gold():
    with pytest.raises(ValueError):
        nn.softmax_xent(np.zeros(3), 1, np.array([True, False, True]))


def test_softmax_gradient_and_distribution():
    logits = RNG.standard_normal((4, 6))
    gold = np.array([0, 5, 2, 3])
    mask = RNG.random((4, 6)) < 0.7
    mask[np.arange(4), gold] = True
    losses, p, g = nn.softmax_xent(logits, gold, mask)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    assert np.all(p >= 0) and np.all(p[~mask] == 0)

    def f():
        return float(nn.softmax_xent(logits, gold, mask)[0].sum())

    assert rel_error(g, numeric_grad(f, logits)) < 1e-4


def test_dropout():
    rng = np.random.default_rng(0)
    x = RNG.standard_normal(7)
    assert nn.dropout(x, 0.1, False, rng)[0] is x
    np.testing.assert_array_equal(nn.dropout(x, 0.0, True, rng)[0], x)
    masks = np.stack([nn.dropout(np.ones(10), 0.1, True, rng)[0] for _ in range(10_000)])
    np.testing.assert_allclose(masks.mean(axis=0).mean(), 1.0, rtol=0.01)
    assert set(np.unique(masks)) <= {0.0, 1 / 0.9}
    with pytest.raises(ValueError):
        nn.dropout(x, 1.0, True, rng)


def test_init_he_statistics():
    w = nn.init_he((400, 512), 512, np.random.default_rng(0), np.float64)
    assert abs(w.std() / np.sqrt(2 / 512) - 1) < 0.1
    assert abs(w.mean()) < 0.01


def test_init_orthogonal():
    for shape in [(16, 16), (8, 20), (20, 8)]:
        q = nn.init_orthogonal(shape, np.random.default_rng(0), np.float64)
        gram = q @ q.T if shape[0] <= shape[1] else q.T @ q
        np.testing.assert_allclose(gram, np.eye(min(shape)), atol=1e-5)


def test_init_deterministic():
    a = nn.init_he((3, 4), 4, np.random.default_rng(7))
    b = nn.init_he((3, 4), 4, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(
        nn.init_orthogonal((5, 5), np.random.default_rng(7)), nn.init_orthogonal((5, 5), np.random.default_rng(7))
    )


def test_scatter_add_rows_matches_add_at():
    table = np.zeros((6, 3))
    ids = RNG.integers(0, 6, size=(4, 5))
    rows = RNG.standard_normal((4, 5, 3))
    expected = np.zeros((6, 3))
    np.add.at(expected, ids, rows)
    nn.scatter_add_rows(table, ids, rows)
    np.testing.assert_allclose(table, expected)


# optimizer


def test_learning_rate_schedule():
    opt = OptimizerState()
    assert opt.lr(1999) == pytest.approx(0.1)
    assert opt.lr(2000) == pytest.approx(0.095)
    assert opt.lr(4000) == pytest.approx(0.1 * 0.95**2)


def test_zero_gradient_only_shrinks():
    p = Parameter(np.array([1.0, -2.0]))
    opt = OptimizerState()
    sgd_step([p], opt)
    np.testing.assert_allclose(p.value, np.array([1.0, -2.0]) * (1 - 0.1 * 1e-4))
    exempt = Parameter(np.array([1.0]), l2_exempt=True)
    sgd_step([exempt], OptimizerState())
    np.testing.assert_array_equal(exempt.value, [1.0])


def test_clipping_halves_norm_20():
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
    a.grad[:] = [12.0, 0.0]
    b.grad[:] = [16.0]
    assert clip_gradients([a, b], 10.0) == pytest.approx(20.0)
    np.testing.assert_allclose(a.grad, [6.0, 0.0])
    np.testing.assert_allclose(b.grad, [8.0])
    assert global_norm([a, b]) <= 10 + 1e-6


def test_sgd_step_update_rule():
    p = Parameter(np.array([1.0]))
    opt = OptimizerState(l2=0.0)
    p.grad[:] = [2.0]
    sgd_step([p], opt)
    np.testing.assert_allclose(p.value, [1.0 - 0.1 * 2.0])
    p.grad[:] = [1.0]
    sgd_step([p], opt)
    # velocity = 0.9 * 0.2 + 0.1 * 1
    np.testing.assert_allclose(p.value, [0.8 - 0.28])
    assert opt.step == 2
    assert np.all(p.grad == 0)


def test_average_is_mean_of_snapshots():
    rng = np.random.default_rng(3)
    p = Parameter(np.array([0.5]))
    opt = OptimizerState()
    snapshots = []
    for _ in range(25):
        p.grad[:] = rng.standard_normal(1)
        sgd_step([p], opt)
        snapshots.append(p.value.copy())
    np.testing.assert_allclose(p.average, np.mean(snapshots, axis=0))


def test_non_finite_gradient_fails_fast():
    p = Parameter(np.zeros(2))
    p.grad[:] = [np.nan, 1.0]
    with pytest.raises(FloatingPointError):
        sgd_step([p], OptimizerState())
