import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsfusion.data import AlignedSample
from icsfusion.evaluation import confusion, f1
from icsfusion.model import (
    MODES,
    CheckpointError,
    ModelParams,
    TrainConfig,
    TrainingDiverged,
    backprop,
    batch_loss,
    classify,
    forward,
    forward_batch,
    fuse,
    init_params,
    load_checkpoint,
    network_encode,
    params_equal,
    predict,
    predict_label,
    save_checkpoint,
    sensor_encode,
    train,
)
from icsfusion.numeric import dense_forward, lstm_cell_step, make_rng
from icsfusion.synthetic import separable_toy

SMALL = dict(sensor_widths=(5, 4, 3, 2), lstm_hidden=(3, 3, 2), fusion_widths=(4, 3), window=3)


def small(seed=0, fs=6, fn=4, **kw):
    cfg = TrainConfig(seed=seed, **{**SMALL, **kw})
    params = init_params(fs, fn, cfg)
    rng = make_rng(seed + 100)
    for p in params.params():
        p.value[...] = rng.normal(0, 0.5, p.shape)
    return params


def sample(seed=0, fs=6, fn=4, T=3, y=1):
    rng = make_rng(seed + 200)
    return AlignedSample(rng.uniform(size=fs), rng.normal(size=(T, fn)), y)


def test_default_widths():
    p = init_params(51, 16, TrainConfig())
    assert [W.shape for W, _ in p.sensor] == [(64, 51), (48, 64), (32, 48), (16, 32)]
    assert [l.hidden for l in p.lstm] == [32, 32, 16]
    assert [W.shape for W, _ in p.fusion] == [(32, 32), (16, 32)]
    assert p.classifier[0].shape == (2, 16)


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        TrainConfig(sensor_widths=(4, 4, 4))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"widths": 3})


def test_zero_params_give_uniform_probabilities():
    params = small().zero_()
    latents, probs = forward(params, sample())
    assert not latents.h_s.any() and not latents.o_n.any() and not latents.h.any()
    np.testing.assert_array_equal(probs, [0.5, 0.5])
    assert predict_label(probs) == 0


def test_identity_sensor_encoder():
    cfg = TrainConfig(**{**SMALL, "sensor_widths": (1, 1, 1, 1)})
    params = init_params(1, 4, cfg)
    for W, b in params.sensor:
        W.value[...] = 1.0
        b.value[...] = 0.0
    assert sensor_encode(params, [0.3]).tolist() == [0.3]


def test_sensor_encode_is_four_dense_layers():
    params, s = small(), sample()
    h = s.x_s
    for W, b in params.sensor:
        h = dense_forward(W, b, h, "relu")
    np.testing.assert_array_equal(sensor_encode(params, s.x_s), h)


def test_sensor_encode_shape_error():
    with pytest.raises(ValueError):
        sensor_encode(small(), np.ones(5))


def test_network_encode_zero_params():
    assert not network_encode(small().zero_(), sample().x_n).any()


def test_network_encode_single_step_is_chained_cells():
    params = small()
    x = sample(T=1).x_n
    h = x[0]
    for layer in params.lstm:
        h, _ = lstm_cell_step(layer, h, np.zeros(layer.hidden), np.zeros(layer.hidden))
    np.testing.assert_array_equal(network_encode(params, x), h)


def test_network_encode_empty_window():
    with pytest.raises(ValueError):
        network_encode(small(), np.zeros((0, 4)))


def test_fuse_identity_is_concatenation():
    cfg = TrainConfig(**{**SMALL, "fusion_widths": (4, 4)})
    params = init_params(6, 4, cfg)
    for W, b in params.fusion:
        W.value[...] = np.eye(4)
        b.value[...] = 0.0
    h_s, o_n = np.array([0.1, 0.2]), np.array([0.3, 0.4])
    np.testing.assert_array_equal(fuse(params, h_s, o_n), [0.1, 0.2, 0.3, 0.4])


def test_classify_examples():
    params = small()
    Wc, bc = params.classifier
    Wc.value[...] = 0.0
    bc.value[...] = 0.0
    np.testing.assert_array_equal(classify(params, np.ones(3)), [0.5, 0.5])
    bc.value[...] = [0.0, 1000.0]
    p = classify(params, np.ones(3))
    assert p[0] == pytest.approx(0.0, abs=1e-300) and p[1] == 1.0


def test_forward_is_composition_of_ops():
    params, s = small(), sample()
    latents, probs = forward(params, s)
    h = fuse(params, sensor_encode(params, s.x_s), network_encode(params, s.x_n))
    np.testing.assert_array_equal(latents.h, h)
    np.testing.assert_array_equal(probs, classify(params, h))
    np.testing.assert_array_equal(forward(params, s)[1], probs)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(MODES))
def test_batched_forward_matches_single_sample(seed, mode):
    params = small(seed)
    xs = [sample(seed * 7 + k) for k in range(3)]
    probs, _ = forward_batch(params, np.stack([s.x_s for s in xs]), np.stack([s.x_n for s in xs]), mode)
    for k, s in enumerate(xs):
        ref = forward(params, s, mode)[1]
        np.testing.assert_allclose(probs[:, k], ref, rtol=0, atol=1e-13)
        assert abs(probs[:, k].sum() - 1.0) <= 1e-12


def test_single_modality_zeroes_other_latent():
    params, s = small(), sample()
    assert not forward(params, s, "sensor-only")[0].o_n.any()
    assert not forward(params, s, "network-only")[0].h_s.any()


@pytest.mark.parametrize("p,label", [((0.3, 0.7), 1), ((0.7, 0.3), 0), ((0.5, 0.5), 0)])
def test_predict_label(p, label):
    assert predict_label(p) == label


def test_backprop_without_forward():
    with pytest.raises(RuntimeError):
        backprop(small(), None, [1])


def test_classifier_gradient_is_analytic():
    params, s = small(), sample(y=1)
    probs, cache = forward_batch(params, s.x_s[None], s.x_n[None])
    backprop(params, cache, [1])
    h = cache.fusion_acts[-1][:, 0]
    expected = np.outer(probs[:, 0] - np.array([0.0, 1.0]), h)
    np.testing.assert_allclose(params.classifier[0].grad, expected, rtol=1e-14, atol=1e-16)


def test_duplicated_batch_gives_same_gradient():
    params, s = small(), sample()
    _, cache = forward_batch(params, s.x_s[None], s.x_n[None])
    backprop(params, cache, [s.y])
    single = [p.grad.copy() for p in params.params()]
    _, cache = forward_batch(params, np.stack([s.x_s] * 3), np.stack([s.x_n] * 3))
    backprop(params, cache, [s.y] * 3)
    for g, p in zip(single, params.params()):
        np.testing.assert_allclose(p.grad, g, rtol=1e-12, atol=1e-15)


def test_zero_epochs_returns_initialisation():
    data = separable_toy(20, window=3)
    cfg = TrainConfig(epochs=0, **{k: v for k, v in SMALL.items()})
    init = init_params(5, 3, cfg)
    out = train(cfg, data)
    assert out.losses == [] and params_equal(out.params, init)


def test_training_is_deterministic():
    data = separable_toy(60, window=3)
    cfg = TrainConfig(epochs=3, batch_size=16, **SMALL)
    a, b = train(cfg, data), train(cfg, data)
    assert a.losses == b.losses and params_equal(a.params, b.params)


def test_nan_loss_aborts_with_epoch_and_batch():
    data = separable_toy(40, window=3)
    data.x_s[5, 0] = np.nan
    cfg = TrainConfig(epochs=2, batch_size=8, **SMALL)
    with pytest.raises(TrainingDiverged, match="epoch 0.*batch"):
        train(cfg, data)


@pytest.mark.parametrize("seed", range(5))
def test_small_step_does_not_raise_batch_loss(seed):
    data = separable_toy(64, seed=seed, window=3)
    cfg = TrainConfig(seed=seed, **SMALL)
    params = init_params(5, 3, cfg)
    probs, cache = forward_batch(params, data.x_s, data.x_n)
    before = batch_loss(probs, data.y)
    backprop(params, cache, data.y)
    for p in params.params():
        p.value -= 1e-4 * p.grad
    after = batch_loss(forward_batch(params, data.x_s, data.x_n)[0], data.y)
    assert after <= before


def test_separable_toy_is_learned():
    data = separable_toy(120, window=3)
    out = train(TrainConfig(epochs=60, batch_size=32, **SMALL), data)
    assert f1(confusion(data.y, predict(out.params, data))) == 1.0


# checkpoints ---------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    params = small()
    cfg = TrainConfig(**SMALL)
    save_checkpoint(params, tmp_path / "c.json", cfg, {"modality": "multi"})
    ck = load_checkpoint(tmp_path / "c.json", cfg)
    assert params_equal(ck.params, params)
    assert ck.config == cfg and ck.meta["modality"] == "multi"


def test_truncated_checkpoint(tmp_path):
    save_checkpoint(small(), tmp_path / "c.json")
    text = (tmp_path / "c.json").read_text()
    (tmp_path / "c.json").write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.json")


def test_checkpoint_width_mismatch(tmp_path):
    save_checkpoint(init_params(6, 4, TrainConfig(**{**SMALL, "sensor_widths": (8, 4, 3, 2)})), tmp_path / "c.json")
    with pytest.raises(CheckpointError, match="sensor.0.W"):
        load_checkpoint(tmp_path / "c.json", TrainConfig(**{**SMALL, "sensor_widths": (16, 4, 3, 2)}))


def test_checkpoint_version_mismatch(tmp_path):
    save_checkpoint(small(), tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(tmp_path / "c.json")


def test_model_params_validates_chain():
    params = small()
    with pytest.raises(ValueError):
        ModelParams(params.sensor[:3] + [params.sensor[0]], params.lstm, params.fusion, params.classifier)
