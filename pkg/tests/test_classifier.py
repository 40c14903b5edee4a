import math

import numpy as np
import pytest

from regiondeblur.classifier import (
    Conv2d,
    Dense,
    GlobalAveragePool,
    Network,
    ReLU,
    ResidualBlock,
    TrainConfig,
    TrainingSample,
    bce_loss,
    bce_with_logits,
    build_small_resnet,
    load_model,
    save_model,
    train,
    write_training_log,
)
from regiondeblur.errors import DimensionError, ModelFormatError, ValidationError
from regiondeblur.imagecore import Image


def toy_net(seed=0, side=8, standardize=False):
    rng = np.random.default_rng(seed)
    layers = [
        Conv2d(1, 4, 3, 2, rng),
        ReLU(),
        ResidualBlock(4, 6, 2, rng),
        GlobalAveragePool(),
        Dense(6, 1, rng),
    ]
    return Network(layers, input_side=side, standardize=standardize)


def bright_dark_samples(count, side=12, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        lab = i % 2
        base = 0.8 if lab else 0.2
        px = np.clip(base + rng.normal(0, 0.05, (side, side)), 0, 1)
        samples.append(TrainingSample(patch=Image(px), label=lab))
    return samples


# ---------------------------------------------------------------------------
# architecture


def test_default_architecture_shape():
    net = build_small_resnet(seed=0, input_side=64)
    kinds = [d["type"] for d in net.descriptors()]
    assert kinds == ["conv", "relu", "residual", "residual", "residual",
                     "global_average_pool", "dense"]
    stem = net.descriptors()[0]
    assert stem["kernel_size"] == 7 and stem["stride"] == 2 and stem["out_channels"] == 16
    stages = [d for d in net.descriptors() if d["type"] == "residual"]
    assert [(d["in_channels"], d["out_channels"], d["stride"]) for d in stages] == [
        (16, 16, 2), (16, 32, 2), (32, 64, 2)]


def test_no_windowed_pooling_anywhere():
    net = build_small_resnet(seed=0, input_side=64)
    net.assert_stride_only_downsampling()


def test_network_rejects_channel_mismatch():
    rng = np.random.default_rng(0)
    layers = [Conv2d(1, 4, 3, 2, rng), Conv2d(8, 4, 3, 1, rng),
              GlobalAveragePool(), Dense(4, 1, rng)]
    with pytest.raises(ValidationError):
        Network(layers, input_side=16)


def test_network_rejects_dense_without_pooling():
    rng = np.random.default_rng(0)
    with pytest.raises(ValidationError):
        Network([Conv2d(1, 4, 3, 2, rng), Dense(4, 1, rng)], input_side=16)


def test_network_rejects_multi_logit_head():
    rng = np.random.default_rng(0)
    layers = [Conv2d(1, 4, 3, 2, rng), GlobalAveragePool(), Dense(4, 3, rng)]
    with pytest.raises(ValidationError):
        Network(layers, input_side=16)


def test_zero_weight_network_outputs_half():
    layers = [Conv2d(1, 4, 3, 2), GlobalAveragePool(), Dense(4, 1)]
    net = Network(layers, input_side=8, standardize=False)
    probs = net.forward_batch(np.random.default_rng(1).uniform(0, 1, (3, 8, 8)))
    assert np.array_equal(probs, np.full(3, 0.5))


def test_forward_rejects_wrong_patch_side():
    net = toy_net()
    with pytest.raises(DimensionError):
        net.forward_batch(np.zeros((1, 9, 9)))


def test_probabilities_stay_strictly_inside_unit_interval():
    net = toy_net(seed=3)
    for p in net.parameters():
        p *= 100.0
    probs = net.forward_batch(np.random.default_rng(2).uniform(0, 1, (4, 8, 8)))
    assert np.all(probs > 0.0)
    assert np.all(probs < 1.0)


def test_standardization_makes_affine_shifts_invisible():
    net = toy_net(seed=4, standardize=True)
    x = np.random.default_rng(5).uniform(0.2, 0.8, (2, 8, 8))
    base = net.forward_batch(x)
    shifted = net.forward_batch(0.5 * x + 0.2)
    assert np.allclose(base, shifted, atol=1e-6)


def test_single_patch_forward_matches_batch():
    net = toy_net(seed=6)
    x = np.random.default_rng(7).uniform(0, 1, (8, 8))
    single = net.forward(Image(x))
    batch = net.forward_batch(x[None])
    assert single == batch[0]


# ---------------------------------------------------------------------------
# loss


def test_bce_loss_is_zero_on_exact_match():
    assert bce_loss([1.0, 0.0, 1.0], [1, 0, 1]) == 0.0


def test_bce_loss_half_prediction_is_log_two():
    assert abs(bce_loss([0.5], [1]) - math.log(2.0)) < 1e-12
    assert abs(bce_loss([0.5], [0]) - math.log(2.0)) < 1e-12


def test_bce_loss_two_sample_reference_value():
    # mean of -ln(0.9) and -ln(0.8)
    assert abs(bce_loss([0.9, 0.2], [1, 0]) - 0.164252033) < 1e-6


def test_bce_loss_wrong_side_saturation_is_finite():
    value = bce_loss([0.0, 1.0], [1, 0])
    assert math.isfinite(value)
    assert value > 100.0


def test_bce_loss_validates_inputs():
    with pytest.raises(ValidationError):
        bce_loss([1.2], [1])
    with pytest.raises(ValidationError):
        bce_loss([0.5], [0.5])
    with pytest.raises(DimensionError):
        bce_loss([0.5, 0.5], [1])


def test_bce_with_logits_matches_probability_form():
    z = np.array([0.3, -1.2, 2.0])
    y = np.array([1.0, 0.0, 1.0])
    probs = 1.0 / (1.0 + np.exp(-z))
    loss, _grad = bce_with_logits(z, y)
    assert abs(loss - bce_loss(probs, y)) < 1e-12


def test_bce_with_logits_gradient_sign():
    loss, grad = bce_with_logits(np.array([5.0]), np.array([0.0]))
    assert grad[0] > 0.0
    loss, grad = bce_with_logits(np.array([-5.0]), np.array([1.0]))
    assert grad[0] < 0.0


# ---------------------------------------------------------------------------
# gradients


def test_backward_matches_finite_differences():
    net = toy_net(seed=7)
    # biases moved off zero so no ReLU pre-activation sits exactly on its kink
    brng = np.random.default_rng(8)
    for p in net.parameters():
        if p.ndim == 1:
            p[...] = brng.normal(0.0, 0.05, p.shape)
    x = np.random.default_rng(9).uniform(0, 1, (3, 8, 8))
    y = np.array([1.0, 0.0, 1.0])

    tape = []
    z = net.logits(x, tape)
    _, dz = bce_with_logits(z, y)
    net.zero_gradients()
    net.backward(tape, dz)

    h = 1e-5
    worst = 0.0
    for p, g in zip(net.parameters(), net.gradients()):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = bce_with_logits(net.logits(x), y)[0]
            flat[idx] = orig - h
            down = bce_with_logits(net.logits(x), y)[0]
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[idx]) / max(abs(fd), abs(gflat[idx]), 1e-8))
    assert worst < 1e-4


def test_duplicated_batch_keeps_mean_gradient():
    net = toy_net(seed=10)
    x = np.random.default_rng(11).uniform(0, 1, (1, 8, 8))
    y = np.array([1.0])

    tape = []
    _, dz = bce_with_logits(net.logits(x, tape), y)
    net.zero_gradients()
    net.backward(tape, dz)
    single = [g.copy() for g in net.gradients()]

    x2 = np.concatenate([x, x])
    y2 = np.array([1.0, 1.0])
    tape = []
    _, dz2 = bce_with_logits(net.logits(x2, tape), y2)
    net.zero_gradients()
    net.backward(tape, dz2)
    for a, b in zip(single, net.gradients()):
        assert np.allclose(a, b, atol=1e-12)


def test_saturated_correct_predictions_are_stationary():
    net = toy_net(seed=12)
    net.layers[-1].bias[...] = 50.0
    x = np.random.default_rng(13).uniform(0, 1, (4, 8, 8))
    y = np.ones(4)
    tape = []
    _, dz = bce_with_logits(net.logits(x, tape), y)
    net.zero_gradients()
    net.backward(tape, dz)
    assert max(float(np.max(np.abs(g))) for g in net.gradients()) < 1e-6


# ---------------------------------------------------------------------------
# training


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValidationError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)


def test_training_sample_label_validation():
    with pytest.raises(ValidationError):
        TrainingSample(patch=Image(np.zeros((4, 4))), label=2)


def test_train_rejects_fewer_samples_than_one_batch():
    net = toy_net(side=12)
    samples = bright_dark_samples(4)
    with pytest.raises(ValidationError):
        train(net, samples, TrainConfig(batch_size=8, epochs=1, input_side=12))


def test_train_rejects_mismatched_patch_size():
    net = toy_net(side=12)
    samples = bright_dark_samples(8, side=10)
    with pytest.raises(DimensionError):
        train(net, samples, TrainConfig(batch_size=4, epochs=1, input_side=12))


def test_train_separates_bright_from_dark():
    net = toy_net(seed=14, side=12, standardize=False)
    samples = bright_dark_samples(48, seed=15)
    cfg = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=16, epochs=25,
                      seed=16, input_side=12)
    result = train(net, samples, cfg)
    assert result.epochs[-1].mean_loss < result.epochs[0].mean_loss
    probs = net.forward_batch(np.stack([s.patch.pixels for s in samples]))
    preds = (probs >= 0.5).astype(int)
    labels = np.array([s.label for s in samples])
    assert float((preds == labels).mean()) == 1.0


def test_zero_learning_rate_keeps_loss_constant():
    net = toy_net(seed=17, side=12)
    samples = bright_dark_samples(32, seed=18)
    cfg = TrainConfig(learning_rate=0.0, momentum=0.9, batch_size=8, epochs=5,
                      seed=19, input_side=12)
    result = train(net, samples, cfg)
    losses = [e.mean_loss for e in result.epochs]
    assert max(losses) - min(losses) < 1e-12


def test_training_is_seeded():
    samples = bright_dark_samples(32, seed=20)
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=3, seed=21, input_side=12)
    net_a = toy_net(seed=22, side=12)
    net_b = toy_net(seed=22, side=12)
    train(net_a, samples, cfg)
    train(net_b, samples, cfg)
    for pa, pb in zip(net_a.parameters(), net_b.parameters()):
        assert np.array_equal(pa, pb)


def test_training_log_csv(tmp_path):
    net = toy_net(seed=23, side=12)
    samples = bright_dark_samples(16, seed=24)
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=2, seed=25, input_side=12)
    result = train(net, samples, cfg)
    path = tmp_path / "log.csv"
    write_training_log(result.epochs, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,mean_loss,train_accuracy"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# serialization


def test_save_load_round_trip_is_bit_exact(tmp_path):
    net = build_small_resnet(seed=26, input_side=16)
    x = np.random.default_rng(27).uniform(0, 1, (3, 16, 16))
    before = net.forward_batch(x)
    path = tmp_path / "model.bin"
    save_model(net, path)
    loaded = load_model(path)
    assert loaded.input_side == 16
    assert loaded.standardize == net.standardize
    for pa, pb in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(pa, pb)
    assert np.array_equal(before, loaded.forward_batch(x))


def test_save_is_canonical(tmp_path):
    net = build_small_resnet(seed=28, input_side=16)
    save_model(net, tmp_path / "a.bin")
    save_model(load_model(tmp_path / "a.bin"), tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "model.bin"
    net = build_small_resnet(seed=29, input_side=16)
    save_model(net, path)
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_rejects_unsupported_version(tmp_path):
    path = tmp_path / "model.bin"
    save_model(build_small_resnet(seed=30, input_side=16), path)
    data = bytearray(path.read_bytes())
    data[8] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_rejects_corrupted_payload(tmp_path):
    path = tmp_path / "model.bin"
    save_model(build_small_resnet(seed=31, input_side=16), path)
    data = bytearray(path.read_bytes())
    data[-5] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_rejects_truncated_file(tmp_path):
    path = tmp_path / "model.bin"
    save_model(build_small_resnet(seed=32, input_side=16), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)
