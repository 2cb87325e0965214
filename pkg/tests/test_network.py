import os
from dataclasses import replace

import numpy as np
import pytest

from stereosparse.core.errors import ConfigurationError, DomainError, NonFiniteError, ShapeError
from stereosparse.layers import ConvLayer, LayerError, SparseCodingLayer
from stereosparse.models.network import VariantKind
from stereosparse.network.builder import build_network
from stereosparse.network.detector import as_batch, backward, cross_entropy, forward, make_layers, predict
from stereosparse.network.model_io import load_model, save_model
from stereosparse.network.trainer import AdamState, TrainingDivergenceError, train_detector, train_step
from stereosparse.solvers.dictionary import initial_dictionary
from stereosparse.utils.sten import StenFormatError, write_bundle

@pytest.fixture
def dictionary():
    return initial_dictionary(2, (2, 3, 3), 2, seed=0, stride=(1, 2, 2))

def loss_of(params, spec, x, labels):
    return cross_entropy(forward(params, spec, x).probs, labels)

def test_build_network_shapes_and_flags(tiny_spec, dictionary):
    spec = tiny_spec(VariantKind.CONV_SUP, depth=4)
    params = build_network(spec, seed=3)
    shapes = [layer.kernel.weights.shape for layer in params.layers]
    assert shapes == [(2, 2, 3, 3, 2), (2, 1, 3, 3, 2), (2, 1, 3, 3, 2), (1, 1, 1, 2, 2)]
    assert all(layer.trainable for layer in params.layers)
    assert all(np.all(layer.bias == 0) for layer in params.layers)
    again = build_network(spec, seed=3)
    for a, b in zip(params.layers, again.layers):
        np.testing.assert_array_equal(a.kernel.weights, b.kernel.weights)

    frozen = build_network(tiny_spec(VariantKind.CONV_UNSUP), dictionary)
    np.testing.assert_array_equal(frozen.layers[0].kernel.weights, dictionary.weights)
    assert not frozen.layers[0].trainable
    assert build_network(tiny_spec(VariantKind.CONV_FINETUNE), dictionary).layers[0].trainable
    assert not build_network(tiny_spec(VariantKind.CONV_RAND)).layers[0].trainable

def test_build_network_dictionary_rules(tiny_spec, dictionary):
    with pytest.raises(ConfigurationError):
        build_network(tiny_spec(VariantKind.CONV_SUP), dictionary)
    with pytest.raises(ConfigurationError):
        build_network(tiny_spec(VariantKind.SPARSE_UNSUP))
    wrong = initial_dictionary(3, (2, 3, 3), 2, seed=0, stride=(1, 2, 2))
    with pytest.raises(ConfigurationError, match="does not match"):
        build_network(tiny_spec(VariantKind.CONV_UNSUP), wrong)

@pytest.mark.parametrize("depth", [2, 3, 4])
def test_forward_produces_window_grid(tiny_spec, tiny_examples, depth):
    spec = tiny_spec(VariantKind.CONV_SUP, depth)
    params = build_network(spec)
    fp = forward(params, spec, np.stack([e.input for e in tiny_examples[:3]]))
    assert fp.logits.shape == (3, 2, 2)
    assert np.all((fp.probs >= 0) & (fp.probs <= 1))
    assert fp.grid.probs.shape == (2, 2)

def test_forward_rejects_wrong_input(tiny_spec):
    spec = tiny_spec()
    with pytest.raises(ShapeError):
        as_batch(np.zeros((2, 8, 15, 2)), spec)
    assert as_batch(np.zeros((2, 8, 16, 2)), spec).shape == (1, 2, 8, 16, 2)

def test_sparse_first_layer_is_signed_and_frozen(tiny_spec, tiny_examples, dictionary):
    spec = tiny_spec(VariantKind.SPARSE_UNSUP)
    params = build_network(spec, dictionary)
    layers = make_layers(params, spec)
    assert isinstance(layers[0], SparseCodingLayer)
    assert isinstance(layers[1], ConvLayer)
    x = np.stack([e.input for e in tiny_examples[:2]])
    fp = forward(params, spec, x)
    grads = backward(params, spec, fp, np.stack([e.labels for e in tiny_examples[:2]]))
    assert grads[0] is None
    assert all(g is not None for g in grads[1:])
    with pytest.raises(LayerError):
        layers[0].backward(np.zeros((1,)), None)

def test_sparse_codes_do_not_depend_on_batch(tiny_spec, tiny_examples, dictionary):
    spec = tiny_spec(VariantKind.SPARSE_UNSUP)
    layer = make_layers(build_network(spec, dictionary), spec)[0]
    x = np.stack([e.input for e in tiny_examples[:3]])
    batch, _ = layer.apply(x)
    solo, _ = layer.apply(x[1:2])
    np.testing.assert_array_equal(batch[1], solo[0])

@pytest.mark.parametrize("variant,depth", [(VariantKind.CONV_SUP, 3), (VariantKind.CONV_FINETUNE, 2),
                                           (VariantKind.CONV_UNSUP, 4)])
def test_gradients_match_finite_differences(tiny_spec, tiny_examples, dictionary, variant, depth):
    spec = tiny_spec(variant, depth)
    params = build_network(spec, dictionary if variant.requires_dictionary else None, seed=2)
    for layer in params.layers:
        layer.bias[:] = 0.05
    x = np.stack([e.input for e in tiny_examples[:2]])
    labels = np.stack([e.labels for e in tiny_examples[:2]])
    grads = backward(params, spec, forward(params, spec, x), labels)
    h = 1e-5  # small enough that no ReLU crosses its kink
    for i, layer in enumerate(params.layers):
        if not layer.trainable:
            assert grads[i] is None
            continue
        d_weights, d_bias = grads[i]
        for tensor, analytic in ((layer.kernel.weights, d_weights), (layer.bias, d_bias)):
            for index in np.ndindex(tensor.shape):
                original = tensor[index]
                tensor[index] = original + h
                up = loss_of(params, spec, x, labels)
                tensor[index] = original - h
                down = loss_of(params, spec, x, labels)
                tensor[index] = original
                numeric = (up - down) / (2 * h)
                assert abs(analytic[index] - numeric) <= 1e-2 * max(abs(analytic[index]), abs(numeric)) + 1e-6

def test_cross_entropy_matches_scalar_loop(rng):
    probs = rng.uniform(0.01, 0.99, size=(3, 4, 8))
    labels = (rng.random((3, 4, 8)) > 0.7).astype(float)
    total = 0.0
    for p, y in zip(probs.ravel(), labels.ravel()):
        total += -np.log(p) if y else -np.log(1.0 - p)
    assert cross_entropy(probs, labels) == pytest.approx(total / probs.size, abs=1e-7)
    assert cross_entropy(labels, labels) <= 1e-6
    with pytest.raises(ShapeError):
        cross_entropy(probs, labels[:1])

def test_train_step_leaves_frozen_layers_untouched(tiny_spec, tiny_examples, dictionary):
    spec = tiny_spec(VariantKind.CONV_UNSUP)
    params = build_network(spec, dictionary)
    batch = (np.stack([e.input for e in tiny_examples[:2]]), np.stack([e.labels for e in tiny_examples[:2]]))
    state = AdamState.for_params(params)
    updated, state, loss = train_step(params, spec, batch, state, 1e-2)
    assert state.step == 1
    assert np.isfinite(loss)
    assert updated.layers[0] is params.layers[0]
    assert not np.array_equal(updated.layers[1].kernel.weights, params.layers[1].kernel.weights)
    with pytest.raises(DomainError):
        train_step(params, spec, batch, state, -1.0)

def test_loss_decreases_on_single_example(tiny_spec, tiny_examples):
    spec = tiny_spec(VariantKind.CONV_SUP)
    params = build_network(spec, seed=1)
    example = tiny_examples[0]
    batch = (example.input[None], example.labels[None])
    state = AdamState.for_params(params)
    losses = []
    for _ in range(50):
        params, state, loss = train_step(params, spec, batch, state, 1e-3)
        losses.append(loss)
    assert losses[-1] < losses[0]

def test_train_step_wraps_non_finite_values(tiny_spec, tiny_examples, mocker):
    spec = tiny_spec()
    params = build_network(spec)
    mocker.patch("stereosparse.network.trainer.forward", side_effect=NonFiniteError("correlate produced non-finite values"))
    batch = (tiny_examples[0].input[None], tiny_examples[0].labels[None])
    with pytest.raises(TrainingDivergenceError, match="non-finite"):
        train_step(params, spec, batch, AdamState.for_params(params), 1e-3)

def test_train_detector_is_deterministic(tiny_spec, tiny_examples):
    spec = tiny_spec(VariantKind.CONV_SUP)
    params_a, curve_a = train_detector(spec, tiny_examples, 4, epochs=3, seed=7, batch_size=2)
    params_b, curve_b = train_detector(spec, tiny_examples, 4, epochs=3, seed=7, batch_size=2)
    assert len(curve_a) == 4
    assert curve_a == curve_b
    for a, b in zip(params_a.layers, params_b.layers):
        np.testing.assert_array_equal(a.kernel.weights, b.kernel.weights)

def test_train_detector_zero_epochs_and_errors(tiny_spec, tiny_examples):
    spec = tiny_spec()
    params, curve = train_detector(spec, tiny_examples, 6, epochs=0, seed=1)
    assert len(curve) == 1
    np.testing.assert_array_equal(params.layers[0].kernel.weights, build_network(spec, seed=1).layers[0].kernel.weights)
    with pytest.raises(ConfigurationError):
        train_detector(spec, tiny_examples, 7, epochs=1, seed=1)
    with pytest.raises(ConfigurationError):
        train_detector(spec, tiny_examples, 0, epochs=1, seed=1)

def test_train_detector_shares_frozen_features(tiny_spec, tiny_examples, dictionary):
    spec = tiny_spec(VariantKind.SPARSE_UNSUP)
    cache = {}
    _, first = train_detector(spec, tiny_examples, 6, epochs=1, seed=1, dictionary=dictionary, first_cache=cache)
    assert sorted(cache) == [f"ex-{i}" for i in range(6)]
    assert cache["ex-0"].shape == (1, 4, 8, 2)
    _, second = train_detector(spec, tiny_examples, 6, epochs=1, seed=1, dictionary=dictionary, first_cache=cache)
    assert first == second

def test_model_round_trip(tiny_spec, tiny_examples, dictionary, temp_dir):
    spec = tiny_spec(VariantKind.CONV_FINETUNE, depth=2)
    params = build_network(spec, dictionary, seed=4)
    path = os.path.join(temp_dir, "model.snet")
    save_model(path, params, spec)
    loaded, loaded_spec = load_model(path)
    assert loaded_spec == spec
    assert [l.trainable for l in loaded.layers] == [l.trainable for l in params.layers]
    before = predict(params, spec, tiny_examples[:2])
    after = predict(loaded, loaded_spec, tiny_examples[:2], workers=2)
    for a, b in zip(before, after):
        np.testing.assert_allclose(a.probs, b.probs, rtol=1e-4, atol=1e-6)
        np.testing.assert_array_equal(a.labels, b.labels)

def test_load_model_rejects_other_bundles(temp_dir):
    path = os.path.join(temp_dir, "other.snet")
    write_bundle(path, {"format": "something-else"}, {})
    with pytest.raises(StenFormatError):
        load_model(path)

def test_frozen_random_first_layer_survives_training(tiny_spec, tiny_examples):
    spec = tiny_spec(VariantKind.CONV_RAND)
    initial = build_network(spec, seed=5)
    trained, curve = train_detector(spec, tiny_examples, 6, epochs=4, seed=5, batch_size=2, lr=1e-2)
    assert len(curve) == 5
    np.testing.assert_array_equal(trained.layers[0].kernel.weights, initial.layers[0].kernel.weights)
    np.testing.assert_array_equal(trained.layers[0].bias, initial.layers[0].bias)
    assert not np.array_equal(trained.layers[-1].kernel.weights, initial.layers[-1].kernel.weights)

@pytest.mark.integration
def test_sparse_detector_halves_its_loss(tiny_spec, tiny_examples, dictionary):
    """Three layers over frozen sparse codes fit the offset windows."""
    spec = replace(tiny_spec(VariantKind.SPARSE_UNSUP, depth=3), mid_features=8)
    _, curve = train_detector(spec, tiny_examples, 6, epochs=300, seed=2, dictionary=dictionary,
                              batch_size=6, lr=1e-2)
    assert curve[-1] <= 0.5 * curve[0]
