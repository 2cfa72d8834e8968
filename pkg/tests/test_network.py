import math

import numpy as np
import pytest

import oracles
from monomal import (
    BENIGN,
    MALWARE,
    FeatureSpace,
    FormatError,
    HeadKind,
    InitMode,
    LayerSpec,
    ParameterError,
    Sample,
    backward,
    deserialize,
    forward,
    init,
    malware_gradient,
    mlp_architecture,
    predict,
    serialize,
)
from monomal.network import Layer, ModelParams, malware_probability, predict_batch


def build_model(weights_per_layer, biases=None, head=None, activations=None):
    """Assemble a ModelParams from explicit numpy weight matrices."""
    head = head or HeadKind("sigmoid_single")
    layers = []
    n = len(weights_per_layer)
    for i, w in enumerate(weights_per_layer):
        w = np.asarray(w, dtype=np.float64)
        act = activations[i] if activations else ("identity" if i == n - 1 else "relu")
        b = np.zeros(w.shape[1]) if biases is None else np.asarray(biases[i], dtype=np.float64)
        layers.append(Layer(w, b, LayerSpec(w.shape[0], w.shape[1], act)))
    return ModelParams(layers, head)


def random_model(rng, n_features=20, hidden=(8, 8), head=None, scale=None):
    head = head or HeadKind("sigmoid_single")
    arch = mlp_architecture(n_features, hidden, head)
    m = init(arch, head, InitMode("glorot_normal", int(rng.integers(1 << 30))))
    if scale is not None:
        for layer in m.layers:
            layer.weights *= scale / math.sqrt(2.0 / (layer.spec.in_dim + layer.spec.out_dim))
    return m


class TestInit:
    def test_abs_glorot_is_nonnegative(self):
        head = HeadKind("sigmoid_single")
        arch = mlp_architecture(30, (8, 8), head)
        m = init(arch, head, InitMode("abs_glorot_normal", 42))
        assert min(layer.weights.min() for layer in m.layers) >= 0.0

    def test_glorot_std(self):
        head = HeadKind("sigmoid_single")
        m = init([LayerSpec(200, 200, "relu"), LayerSpec(200, 1, "identity")], head, InitMode("glorot_normal", 0))
        std = m.layers[0].weights.std()
        target = math.sqrt(2.0 / 400)
        assert abs(std - target) / target < 0.15

    def test_deterministic(self):
        head = HeadKind("softmax_pair")
        arch = mlp_architecture(10, (4,), head)
        assert init(arch, head, InitMode("glorot_normal", 9)) == init(
            arch, head, InitMode("glorot_normal", 9)
        )

    def test_biases_zero(self):
        head = HeadKind("sigmoid_single")
        m = init(mlp_architecture(10, (4,), head), head, InitMode("glorot_normal", 1))
        assert all(np.array_equal(l.bias, np.zeros_like(l.bias)) for l in m.layers)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            ModelParams(
                [
                    Layer(np.zeros((3, 4)), np.zeros(4), LayerSpec(3, 4)),
                    Layer(np.zeros((5, 1)), np.zeros(1), LayerSpec(5, 1, "identity")),
                ],
                HeadKind("sigmoid_single"),
            )


class TestForward:
    def test_zero_net_sigmoid_is_half(self):
        m = build_model([np.zeros((4, 3)), np.zeros((3, 1))])
        trace = forward(m, Sample((0, 2), MALWARE))
        assert trace.probs[0] == 0.5

    def test_softmax_symmetry(self):
        for temp in (1.0, 7.0, 100.0):
            m = build_model([np.zeros((4, 2))], head=HeadKind("softmax_pair", temp))
            trace = forward(m, Sample((1,), BENIGN))
            assert np.allclose(trace.probs, [0.5, 0.5])

    def test_temperature_flattens_monotonically(self):
        # Logits (2, 4): rising temperature pulls probabilities toward (0.5, 0.5).
        m = build_model(
            [np.array([[2.0, 4.0]])],
            head=HeadKind("softmax_pair", 1.0),
            activations=["identity"],
        )
        x = np.ones(1)
        gaps = []
        for temp in (1.0, 2.0, 10.0, 100.0, 1000.0):
            mt = build_model(
                [np.array([[2.0, 4.0]])], head=HeadKind("softmax_pair", temp), activations=["identity"]
            )
            probs = forward(mt, x).probs[0]
            assert probs[1] > 0.5
            gaps.append(probs[1] - 0.5)
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-3

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        m = random_model(rng, head=HeadKind("softmax_pair", 13.0))
        x = (rng.random((40, 20)) < 0.3).astype(float)
        trace = forward(m, x)
        assert np.abs(trace.probs.sum(axis=1) - 1.0).max() < 1e-12

    def test_deterministic_dropout(self):
        rng = np.random.default_rng(1)
        m = random_model(rng)
        x = Sample((1, 5, 7), MALWARE)
        t1 = forward(m, x, dropout=(0.5, np.random.default_rng(33)))
        t2 = forward(m, x, dropout=(0.5, np.random.default_rng(33)))
        assert np.array_equal(t1.probs, t2.probs)

    def test_dropout_masks_hidden_only(self):
        rng = np.random.default_rng(2)
        m = random_model(rng)
        trace = forward(m, Sample((0,), MALWARE), dropout=(0.5, rng))
        assert trace.dropout_masks[-1] is None
        assert all(mask is not None for mask in trace.dropout_masks[:-1])

    def test_sparse_and_dense_agree(self):
        rng = np.random.default_rng(3)
        m = random_model(rng)
        s = Sample((2, 4, 11), MALWARE)
        dense = np.zeros(20)
        dense[list(s.indices)] = 1.0
        assert np.allclose(forward(m, s).probs, forward(m, dense).probs)


class TestBackward:
    @pytest.mark.parametrize("head", [HeadKind("sigmoid_single"), HeadKind("softmax_pair", 5.0)])
    def test_matches_finite_differences(self, head):
        rng = np.random.default_rng(17)
        m = random_model(rng, head=head)
        x = (rng.random(20) < 0.4).astype(float)
        assert oracles.min_preactivation_margin(m, x) > 1e-3
        target = [1.0] if head.variant == "sigmoid_single" else [[0.0, 1.0]]
        trace = forward(m, x)
        g = backward(m, trace, target)
        fd_w, fd_b = oracles.fd_param_gradients(m, x, target, head)
        for gw, fw in zip(g.weights, fd_w):
            assert oracles.max_relative_error(gw, fw) < 1e-4
        for gb, fb in zip(g.biases, fd_b):
            assert oracles.max_relative_error(gb, fb) < 1e-4
        fd_x = oracles.fd_input_gradient(m, x, target, head)
        assert oracles.max_relative_error(g.inputs[0], fd_x) < 1e-4

    def test_matches_finite_differences_through_dropout(self):
        # Re-seeding the dropout rng reproduces the same mask, so central
        # differences remain well posed.
        rng = np.random.default_rng(23)
        m = random_model(rng)
        x = (rng.random(20) < 0.5).astype(float)
        head = m.head
        target = [1.0]

        def run(model):
            return forward(model, x, dropout=(0.5, np.random.default_rng(7)))

        trace = run(m)
        g = backward(m, trace, target)
        eps = 1e-4
        layer = m.layers[1]
        worst = 0.0
        from monomal.training import loss as loss_fn

        for idx in np.ndindex(layer.weights.shape):
            orig = layer.weights[idx]
            layer.weights[idx] = orig + eps
            fp = loss_fn(run(m).probs, target, head)
            layer.weights[idx] = orig - eps
            fm = loss_fn(run(m).probs, target, head)
            layer.weights[idx] = orig
            num = (fp - fm) / (2 * eps)
            a = g.weights[1][idx]
            if abs(a) + abs(num) > 1e-7:
                worst = max(worst, abs(a - num) / max(abs(a), abs(num)))
        assert worst < 1e-4

    def test_nonneg_sigmoid_net_has_nonneg_input_grad_toward_benign(self):
        rng = np.random.default_rng(5)
        m = random_model(rng)
        for layer in m.layers:
            np.abs(layer.weights, out=layer.weights)
        trace = forward(m, Sample((1, 2, 3), MALWARE))
        g = backward(m, trace, [0.0])  # cross-entropy against the benign label
        assert g.inputs.min() >= 0.0
        assert malware_gradient(m, Sample((1, 2, 3), MALWARE)).min() >= 0.0

    def test_gradients_vanish_at_perfect_prediction(self):
        m = build_model([np.array([[30.0]])], activations=["identity"])
        x = np.ones(1)
        trace = forward(m, x)
        g = backward(m, trace, [1.0])
        assert abs(g.weights[0][0, 0]) < 1e-12
        assert abs(g.biases[0][0]) < 1e-12


class TestPredict:
    def test_threshold(self):
        # Single weight drives p above / below 0.5.
        m = build_model([np.array([[0.85]])], activations=["identity"])
        assert predict(m, np.ones(1)) == MALWARE
        assert predict(m, np.zeros(1)) == MALWARE  # p = 0.5 tie
        m_neg = build_model([np.array([[-0.85]])], activations=["identity"])
        assert predict(m_neg, np.ones(1)) == BENIGN

    def test_zero_net_tie_is_malware(self):
        m = build_model([np.zeros((4, 1))], activations=["identity"])
        assert predict(m, Sample((0, 1), MALWARE)) == MALWARE

    def test_softmax_predicts_at_temperature_one(self):
        # Training temperature never changes the deployed decision.
        w = np.array([[1.0, 3.0]])
        for temp in (1.0, 66.0, 100.0):
            m = build_model([w], head=HeadKind("softmax_pair", temp), activations=["identity"])
            assert predict(m, np.ones(1)) == MALWARE
            assert malware_probability(m, np.ones(1))[0] == pytest.approx(
                1.0 / (1.0 + math.exp(-2.0))
            )

    def test_predict_batch_matches_predict(self):
        rng = np.random.default_rng(8)
        m = random_model(rng)
        xs = [Sample(tuple(np.flatnonzero(rng.random(20) < 0.3).tolist()), BENIGN) for _ in range(10)]
        batch = predict_batch(m, xs)
        assert list(batch) == [predict(m, x) for x in xs]


class TestSerialization:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(11)
        m = random_model(rng, head=HeadKind("softmax_pair", 100.0))
        m.feature_space_id = FeatureSpace.prefix(20, 9).checksum
        restored = deserialize(serialize(m))
        assert restored == m
        assert restored.head.temperature == 100.0

    def test_corrupted_header_is_error(self):
        rng = np.random.default_rng(12)
        m = random_model(rng)
        data = serialize(m)
        with pytest.raises(FormatError):
            deserialize(b"mgmodel v2" + data[10:])
        with pytest.raises(FormatError):
            deserialize(b"nonsense\n")

    def test_truncated_body_is_error(self):
        rng = np.random.default_rng(13)
        m = random_model(rng)
        data = serialize(m)
        with pytest.raises(FormatError):
            deserialize(data[: len(data) // 2])

    def test_trailing_garbage_is_error(self):
        rng = np.random.default_rng(14)
        m = random_model(rng)
        with pytest.raises(FormatError):
            deserialize(serialize(m) + b"extra\n")

    def test_space_binding_checked(self):
        rng = np.random.default_rng(15)
        m = random_model(rng)
        space = FeatureSpace.prefix(20, 9)
        m.feature_space_id = space.checksum
        other = FeatureSpace.prefix(20, 10)
        deserialize(serialize(m), expected_space=space)
        with pytest.raises(FormatError):
            deserialize(serialize(m), expected_space=other)


class TestMonotoneGradientInvariant:
    def test_random_nonneg_nets_have_nonneg_malware_gradient(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            m = random_model(rng, n_features=15, hidden=(6,))
            for layer in m.layers:
                np.abs(layer.weights, out=layer.weights)
                layer.bias[:] = rng.normal(0, 0.3, layer.bias.shape)
            x = Sample(tuple(np.flatnonzero(rng.random(15) < 0.4).tolist()), MALWARE)
            assert malware_gradient(m, x).min() >= 0.0
