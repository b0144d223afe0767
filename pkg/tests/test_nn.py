import numpy as np
import pytest

from bfl import nn, oracles


def tiny_model(rng, dims=(4, 6, 3)):
    return nn.init_mlp(list(dims), "relu", rng)


def test_init_shapes_and_activations():
    rng = np.random.default_rng(7)
    model = nn.init_mlp([5, 8, 4, 3], "relu", rng)
    assert [l.weight.shape for l in model.layers] == [(8, 5), (4, 8), (3, 4)]
    assert [l.bias.shape for l in model.layers] == [(8,), (4,), (3,)]
    assert [l.activation for l in model.layers] == ["relu", "relu", "identity"]
    assert model.input_dim == 5
    assert model.output_dim == 3


def test_init_rejects_bad_dims():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        nn.init_mlp([4], "relu", rng)
    with pytest.raises(ValueError):
        nn.init_mlp([4, 0, 3], "relu", rng)


def test_forward_matches_manual_matmul():
    # One hidden layer, checked against the schoolbook matrix product.
    rng = np.random.default_rng(3)
    model = tiny_model(rng)
    x = rng.standard_normal((5, 4))
    h = oracles.matmul_triple_loop(x, model.layers[0].weight.T) + model.layers[0].bias
    h = np.maximum(h, 0.0)
    logits = oracles.matmul_triple_loop(h, model.layers[1].weight.T) + model.layers[1].bias
    np.testing.assert_allclose(nn.forward(model, x), logits, rtol=1e-12)


def test_forward_cached_agrees_with_forward():
    rng = np.random.default_rng(11)
    model = nn.init_mlp([3, 7, 7, 2], "relu", rng)
    x = rng.standard_normal((6, 3))
    out, caches = nn.forward_cached(model, x)
    np.testing.assert_array_equal(out, nn.forward(model, x))
    assert len(caches) == 3


def test_softmax_cross_entropy_matches_logsumexp():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((8, 4)) * 3.0
    labels = rng.integers(0, 4, size=8)
    loss, dlogits = nn.softmax_cross_entropy(logits, labels)
    per_row = []
    for row, y in zip(logits, labels):
        shifted = row - row.max()
        per_row.append(np.log(np.exp(shifted).sum()) - shifted[y])
    np.testing.assert_allclose(loss, np.mean(per_row), rtol=1e-12)
    assert dlogits.shape == logits.shape


def test_softmax_cross_entropy_huge_logits_stay_finite():
    logits = np.array([[1e5, -1e5, 0.0], [-1e5, 1e5, 0.0]])
    loss, dlogits = nn.softmax_cross_entropy(logits, np.array([0, 1]))
    assert np.isfinite(loss)
    assert np.all(np.isfinite(dlogits))


def _pre_activation_margin(model, batch):
    """Smallest |pre-activation| over the relu layers for this batch.

    Central differences straddle the relu kink whenever some unit's input
    sits within the step size of zero, so draws that close are invalid
    gradient-check cases rather than backprop failures.
    """
    margin = np.inf
    _, caches = nn.forward_cached(model, batch)
    for layer, (_, z, _) in zip(model.layers, caches):
        if layer.activation == "relu":
            margin = min(margin, float(np.abs(z).min()))
    return margin


def test_gradient_check_20_random_networks():
    """Backprop vs central finite differences on random shapes and data.

    Normwise relative error below 1e-4 on every one of 20 kink-free draws.
    """
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    attempts = 0
    while checked < 20:
        attempts += 1
        assert attempts < 400, "could not find enough kink-free draws"
        depth = rng.integers(1, 4)
        dims = [int(rng.integers(2, 6))]
        for _ in range(depth):
            dims.append(int(rng.integers(2, 7)))
        dims.append(int(rng.integers(2, 5)))
        model = nn.init_mlp(dims, "relu", rng)
        batch = rng.standard_normal((int(rng.integers(2, 8)), dims[0]))
        labels = rng.integers(0, dims[-1], size=batch.shape[0])
        if _pre_activation_margin(model, batch) < 1e-3:
            continue
        checked += 1

        _, grads = nn.backward(model, batch, labels)
        flat = np.concatenate([np.concatenate([g.ravel(), b]) for g, b in grads])

        fd = oracles.central_difference_grads(model, batch, labels)
        err = np.abs(flat - fd).max() / max(np.abs(fd).max(), 1e-12)
        worst = max(worst, err)
    assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"


def test_backprop_through_input_gradient():
    # The propagated input gradient must match finite differences too;
    # the generator relies on it to learn through the frozen classifier.
    rng = np.random.default_rng(31)
    model = nn.init_mlp([3, 5, 2], "relu", rng)
    x = rng.standard_normal((4, 3))
    labels = rng.integers(0, 2, size=4)
    out, caches = nn.forward_cached(model, x)
    _, dlogits = nn.softmax_cross_entropy(out, labels)
    _, dx = nn.backprop_through(model, caches, dlogits)

    h = 1e-6
    fd = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            bumped = x.copy()
            bumped[i, j] += h
            up, _ = nn.softmax_cross_entropy(nn.forward(model, bumped), labels)
            bumped[i, j] -= 2 * h
            down, _ = nn.softmax_cross_entropy(nn.forward(model, bumped), labels)
            fd[i, j] = (up - down) / (2 * h)
    np.testing.assert_allclose(dx, fd, atol=1e-6)


def test_sgd_step_constant_gradient_recurrence():
    """Two momentum steps with a constant gradient, frozen by hand.

    v1 = g, w1 = w0 - lr g; v2 = 1.9 g, w2 = w0 - lr g (1 + 1.9).
    """
    model = nn.MlpModel([nn.DenseLayer(np.array([[2.0]]), np.array([0.0]), "identity")])
    cfg = nn.SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    state = nn.init_momentum(model)
    g = [(np.array([[1.0]]), np.array([0.0]))]
    model = nn.sgd_step(model, g, cfg, state)
    assert model.layers[0].weight[0, 0] == pytest.approx(2.0 - 0.1)
    model = nn.sgd_step(model, g, cfg, state)
    assert model.layers[0].weight[0, 0] == pytest.approx(2.0 - 0.1 * (1.0 + 1.9))
    closed = oracles.constant_gradient_momentum_value(2.0, 1.0, 0.1, 0.9, 2)
    assert model.layers[0].weight[0, 0] == pytest.approx(closed)


def test_sgd_step_ten_steps_match_closed_form():
    model = nn.MlpModel([nn.DenseLayer(np.array([[0.5]]), np.array([0.0]), "identity")])
    cfg = nn.SgdConfig(learning_rate=0.01, momentum=0.9, weight_decay=0.0)
    state = nn.init_momentum(model)
    g = [(np.array([[2.0]]), np.array([0.0]))]
    for _ in range(10):
        model = nn.sgd_step(model, g, cfg, state)
    expect = oracles.constant_gradient_momentum_value(0.5, 2.0, 0.01, 0.9, 10)
    assert model.layers[0].weight[0, 0] == pytest.approx(expect, rel=1e-12)


def test_weight_decay_hits_weights_not_biases():
    model = nn.MlpModel([nn.DenseLayer(np.array([[1.0]]), np.array([1.0]), "identity")])
    cfg = nn.SgdConfig(learning_rate=1.0, momentum=0.0, weight_decay=0.5)
    state = nn.init_momentum(model)
    zero = [(np.array([[0.0]]), np.array([0.0]))]
    model = nn.sgd_step(model, zero, cfg, state)
    # weight gradient 0 + 0.5*1.0 decay, bias untouched
    assert model.layers[0].weight[0, 0] == pytest.approx(0.5)
    assert model.layers[0].bias[0] == pytest.approx(1.0)


def test_flatten_unflatten_roundtrip():
    rng = np.random.default_rng(9)
    model = nn.init_mlp([4, 6, 3], "relu", rng)
    vec = nn.flatten_params(model)
    assert vec.size == nn.num_params(model) == 4 * 6 + 6 + 6 * 3 + 3
    rebuilt = nn.unflatten_params(model, vec)
    for a, b in zip(model.layers, rebuilt.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
    # layout: layer 0 weights row-major, layer 0 bias, then layer 1
    np.testing.assert_array_equal(vec[:24], model.layers[0].weight.ravel())
    np.testing.assert_array_equal(vec[24:30], model.layers[0].bias)


def test_unflatten_rejects_wrong_length():
    rng = np.random.default_rng(1)
    model = tiny_model(rng)
    with pytest.raises(ValueError):
        nn.unflatten_params(model, np.zeros(nn.num_params(model) + 1))


def test_unflatten_does_not_alias_template():
    rng = np.random.default_rng(13)
    model = tiny_model(rng)
    vec = nn.flatten_params(model)
    other = nn.unflatten_params(model, vec * 2.0)
    assert other.layers[0].weight[0, 0] == pytest.approx(2.0 * model.layers[0].weight[0, 0])
    other.layers[0].weight[0, 0] = 123.0
    assert model.layers[0].weight[0, 0] != 123.0


def test_clone_model_is_independent():
    rng = np.random.default_rng(21)
    model = tiny_model(rng)
    copy = nn.clone_model(model)
    copy.layers[0].weight[0, 0] += 1.0
    assert model.layers[0].weight[0, 0] != copy.layers[0].weight[0, 0]


def test_sgd_step_returns_new_model_and_mutates_state():
    rng = np.random.default_rng(17)
    model = tiny_model(rng)
    cfg = nn.SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    state = nn.init_momentum(model)
    grads = [(np.ones_like(l.weight), np.ones_like(l.bias)) for l in model.layers]
    before = nn.flatten_params(model).copy()
    stepped = nn.sgd_step(model, grads, cfg, state)
    np.testing.assert_array_equal(nn.flatten_params(model), before)
    assert not np.array_equal(nn.flatten_params(stepped), before)
    assert any(np.any(v != 0) for v, _ in state)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        nn.SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        nn.SgdConfig(momentum=-0.1)
    with pytest.raises(ValueError):
        nn.SgdConfig(momentum=1.0)
    with pytest.raises(ValueError):
        nn.SgdConfig(weight_decay=-1e-4)
