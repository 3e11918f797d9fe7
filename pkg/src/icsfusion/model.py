"""Two-branch detector: dense sensor encoder, stacked LSTM network encoder,
dense fusion network and a 2-way softmax classifier trained with BCE on
the attack probability.

Single-sample functions (:func:`sensor_encode`, :func:`network_encode`,
:func:`fuse`, :func:`classify`, :func:`forward`) are the readable reference
path. Training goes through the batched :func:`forward_batch` /
:func:`backprop` pair, which stacks samples along a trailing batch axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import AlignedSample, AlignedSet
from .numeric import (
    LstmParams,
    OptimizerConfig,
    Param,
    bce_loss,
    dense_backward,
    dense_forward,
    init_dense,
    init_lstm,
    lstm_cell_step,
    lstm_sequence_backward,
    lstm_sequence_forward,
    make_rng,
    softmax,
    zero_grads,
)

MODES = ("multi", "sensor-only", "network-only")
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    sensor_widths: tuple[int, ...] = (64, 48, 32, 16)
    lstm_hidden: tuple[int, ...] = (32, 32, 16)
    fusion_widths: tuple[int, ...] = (32, 16)
    window: int = 8
    epochs: int = 50
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    train_fraction: float = 0.7
    modality: str = "multi"
    class_weighted: bool = False

    def __post_init__(self):
        self.sensor_widths = tuple(int(w) for w in self.sensor_widths)
        self.lstm_hidden = tuple(int(w) for w in self.lstm_hidden)
        self.fusion_widths = tuple(int(w) for w in self.fusion_widths)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.validate()

    def validate(self) -> None:
        for name, widths, n in (("sensor_widths", self.sensor_widths, 4),
                                ("lstm_hidden", self.lstm_hidden, 3),
                                ("fusion_widths", self.fusion_widths, 2)):
            if len(widths) != n:
                raise ValueError(f"{name} needs {n} entries, got {len(widths)}")
            if min(widths) < 1:
                raise ValueError(f"{name} entries must be >= 1, got {widths}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.modality not in MODES:
            raise ValueError(f"modality must be one of {MODES}, got {self.modality!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed out of range: {self.seed}")
        self.optimizer.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("sensor_widths", "lstm_hidden", "fusion_widths"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "optimizer" in d:
            unknown = set(d["optimizer"]) - set(OptimizerConfig.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown optimizer keys: {sorted(unknown)}")
            d["optimizer"] = OptimizerConfig(**d["optimizer"])
        return cls(**d)


@dataclass
class ModelParams:
    sensor: list[tuple[Param, Param]]
    lstm: list[LstmParams]
    fusion: list[tuple[Param, Param]]
    classifier: tuple[Param, Param]

    def __post_init__(self):
        prev = self.sensor[0][0].shape[1]
        for W, _ in self.sensor:
            if W.shape[1] != prev:
                raise ValueError(f"sensor layer {W.name} expects {W.shape[1]} inputs, previous layer gives {prev}")
            prev = W.shape[0]
        sensor_out = prev
        prev = self.lstm[0].input_size
        for layer in self.lstm:
            if layer.input_size != prev:
                raise ValueError(f"LSTM layer {layer.U.name} expects {layer.input_size} inputs, gets {prev}")
            prev = layer.hidden
        prev = sensor_out + prev
        for W, _ in self.fusion:
            if W.shape[1] != prev:
                raise ValueError(f"fusion layer {W.name} expects {W.shape[1]} inputs, gets {prev}")
            prev = W.shape[0]
        Wc = self.classifier[0]
        if Wc.shape != (2, prev):
            raise ValueError(f"classifier weights {Wc.shape}, expected (2, {prev})")

    @property
    def sensor_input(self) -> int:
        return self.sensor[0][0].shape[1]

    @property
    def network_input(self) -> int:
        return self.lstm[0].input_size

    @property
    def sensor_latent(self) -> int:
        return self.sensor[-1][0].shape[0]

    @property
    def network_latent(self) -> int:
        return self.lstm[-1].hidden

    def params(self) -> list[Param]:
        out: list[Param] = []
        for W, b in self.sensor:
            out += [W, b]
        for layer in self.lstm:
            out += layer.params()
        for W, b in self.fusion:
            out += [W, b]
        out += list(self.classifier)
        return out

    def named(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def copy(self) -> "ModelParams":
        return params_from_arrays({p.name: p.value.copy() for p in self.params()})

    def zero_(self) -> "ModelParams":
        for p in self.params():
            p.value[...] = 0.0
        return self


def init_params(sensor_input: int, network_input: int, config: TrainConfig) -> ModelParams:
    """Glorot-uniform weights from the config seed, zero biases, forget bias 1."""
    rng = make_rng(config.seed)
    sensor, prev = [], sensor_input
    for k, w in enumerate(config.sensor_widths):
        sensor.append(init_dense(rng, f"sensor.{k}", prev, w))
        prev = w
    lstm, prev_n = [], network_input
    for k, h in enumerate(config.lstm_hidden):
        lstm.append(init_lstm(rng, f"lstm.{k}", prev_n, h))
        prev_n = h
    fusion, prev = [], prev + prev_n
    for k, w in enumerate(config.fusion_widths):
        fusion.append(init_dense(rng, f"fusion.{k}", prev, w))
        prev = w
    classifier = init_dense(rng, "classifier", prev, 2)
    return ModelParams(sensor, lstm, fusion, classifier)


def params_from_arrays(arrays: dict[str, np.ndarray]) -> ModelParams:
    def p(name):
        if name not in arrays:
            raise CheckpointError(f"missing tensor {name!r}")
        return Param(name, arrays[name])

    def count(prefix):
        return len({n.split(".")[1] for n in arrays if n.startswith(prefix + ".")})

    sensor = [(p(f"sensor.{k}.W"), p(f"sensor.{k}.b")) for k in range(count("sensor"))]
    lstm = [LstmParams(p(f"lstm.{k}.U"), p(f"lstm.{k}.W"), p(f"lstm.{k}.b")) for k in range(count("lstm"))]
    fusion = [(p(f"fusion.{k}.W"), p(f"fusion.{k}.b")) for k in range(count("fusion"))]
    return ModelParams(sensor, lstm, fusion, (p("classifier.W"), p("classifier.b")))


# single-sample path ---------------------------------------------------------


@dataclass
class LatentPair:
    h_s: np.ndarray
    o_n: np.ndarray
    h: np.ndarray


def sensor_encode(params: ModelParams, x_s) -> np.ndarray:
    x_s = np.asarray(x_s, dtype=np.float64)
    if x_s.shape != (params.sensor_input,):
        raise ValueError(f"sensor input has shape {x_s.shape}, model expects ({params.sensor_input},)")
    h = x_s
    for W, b in params.sensor:
        h = dense_forward(W, b, h, "relu")
    return h


def network_encode(params: ModelParams, x_n) -> np.ndarray:
    """Stacked LSTM over rows of ``x_n`` (T, features); returns the last layer's final output."""
    x_n = np.asarray(x_n, dtype=np.float64)
    if x_n.ndim != 2 or x_n.shape[0] == 0:
        raise ValueError(f"network input must be a non-empty (T, features) matrix, got {x_n.shape}")
    if x_n.shape[1] != params.network_input:
        raise ValueError(f"network input has {x_n.shape[1]} features, model expects {params.network_input}")
    seq = list(x_n)
    for layer in params.lstm:
        h = np.zeros(layer.hidden)
        c = np.zeros(layer.hidden)
        out = []
        for x_t in seq:
            h, c = lstm_cell_step(layer, x_t, h, c)
            out.append(h)
        seq = out
    return seq[-1]


def fuse(params: ModelParams, h_s, o_n) -> np.ndarray:
    h_s = np.asarray(h_s, dtype=np.float64)
    o_n = np.asarray(o_n, dtype=np.float64)
    if h_s.shape != (params.sensor_latent,) or o_n.shape != (params.network_latent,):
        raise ValueError(f"fusion expects latents ({params.sensor_latent},) and ({params.network_latent},), "
                         f"got {h_s.shape} and {o_n.shape}")
    h = np.concatenate([h_s, o_n])
    for W, b in params.fusion:
        h = dense_forward(W, b, h, "relu")
    return h


def classify(params: ModelParams, h) -> np.ndarray:
    """(p_normal, p_attack)."""
    Wc, bc = params.classifier
    return softmax(dense_forward(Wc, bc, h, "none"))


def forward(params: ModelParams, sample: AlignedSample, modality: str = "multi"):
    """Returns (LatentPair, probabilities). In single-modality modes the absent latent is zero."""
    if modality not in MODES:
        raise ValueError(f"unknown modality {modality!r}")
    if modality == "network-only":
        h_s = np.zeros(params.sensor_latent)
    else:
        h_s = sensor_encode(params, sample.x_s)
    if modality == "sensor-only":
        o_n = np.zeros(params.network_latent)
    else:
        o_n = network_encode(params, sample.x_n)
    h = fuse(params, h_s, o_n)
    return LatentPair(h_s, o_n, h), classify(params, h)


def predict_label(probabilities) -> int:
    """Argmax over (normal, attack); an exact tie goes to normal."""
    p = np.asarray(probabilities)
    return int(p[1] > p[0])


# batched path ---------------------------------------------------------------


@dataclass
class ForwardCache:
    params_id: int
    modality: str
    sensor_acts: list  # inputs then post-activation outputs of each sensor layer
    lstm_caches: list
    fusion_acts: list
    probs: np.ndarray  # (2, B)


def forward_batch(params: ModelParams, x_s: np.ndarray, x_n: np.ndarray, modality: str = "multi"):
    """Batched forward. ``x_s`` (B, Fs), ``x_n`` (B, T, Fn). Returns (probs (2, B), cache)."""
    if modality not in MODES:
        raise ValueError(f"unknown modality {modality!r}")
    x_s = np.asarray(x_s, dtype=np.float64)
    x_n = np.asarray(x_n, dtype=np.float64)
    B = x_s.shape[0]
    if x_n.shape[0] != B:
        raise ValueError(f"batch size mismatch: {B} sensor rows, {x_n.shape[0]} network windows")
    if x_n.ndim != 3 or x_n.shape[1] == 0:
        raise ValueError(f"network windows must be (B, T>=1, F), got {x_n.shape}")

    sensor_acts, lstm_caches = [], []
    if modality == "network-only":
        h_s = np.zeros((params.sensor_latent, B))
    else:
        h = x_s.T
        sensor_acts.append(h)
        for W, b in params.sensor:
            h = dense_forward(W, b, h, "relu")
            sensor_acts.append(h)
        h_s = h

    if modality == "sensor-only":
        o_n = np.zeros((params.network_latent, B))
    else:
        seq = np.ascontiguousarray(x_n.transpose(1, 2, 0))  # (T, F, B)
        for layer in params.lstm:
            seq, caches = lstm_sequence_forward(layer, seq)
            lstm_caches.append(caches)
        o_n = seq[-1]

    h = np.concatenate([h_s, o_n], axis=0)
    fusion_acts = [h]
    for W, b in params.fusion:
        h = dense_forward(W, b, h, "relu")
        fusion_acts.append(h)
    Wc, bc = params.classifier
    probs = softmax(dense_forward(Wc, bc, h, "none"), axis=0)
    cache = ForwardCache(id(params), modality, sensor_acts, lstm_caches, fusion_acts, probs)
    return probs, cache


def sample_weights(y: np.ndarray, class_weighted: bool, pos_fraction: float | None = None) -> np.ndarray | None:
    """Inverse-frequency weights (mean 1 over a balanced set), or None when off."""
    if not class_weighted:
        return None
    if pos_fraction is None:
        pos_fraction = float(np.mean(y))
    if pos_fraction in (0.0, 1.0):
        return None
    return np.where(y == 1, 0.5 / pos_fraction, 0.5 / (1.0 - pos_fraction))


def batch_loss(probs: np.ndarray, y: np.ndarray, weights=None) -> float:
    return bce_loss(y, probs[1], weights)


def backprop(params: ModelParams, cache: ForwardCache | None, y, weights=None) -> None:
    """Fill every ``Param.grad`` with d(mean BCE)/d(param) for the cached batch.

    Grads are zeroed first. The classifier-logit gradient is ``(p - onehot(y)) / B``,
    exact whenever the attack probability is inside the log clamp.
    """
    if cache is None:
        raise RuntimeError("backprop called without a forward pass")
    if cache.params_id != id(params):
        raise RuntimeError("forward cache belongs to a different parameter set")
    y = np.asarray(y, dtype=np.int64)
    probs = cache.probs
    B = probs.shape[1]
    if y.shape != (B,):
        raise ValueError(f"{y.size} labels for a batch of {B}")
    zero_grads(params.params())

    d_logits = probs.copy()
    d_logits[y, np.arange(B)] -= 1.0
    d_logits /= B
    if weights is not None:
        d_logits *= np.asarray(weights)[None, :]

    Wc, bc = params.classifier
    d = dense_backward(Wc, bc, cache.fusion_acts[-1], None, d_logits, "none")
    for k in reversed(range(len(params.fusion))):
        W, b = params.fusion[k]
        d = dense_backward(W, b, cache.fusion_acts[k], cache.fusion_acts[k + 1], d, "relu")
    d_hs, d_on = d[:params.sensor_latent], d[params.sensor_latent:]

    if cache.modality != "network-only":
        d = d_hs
        for k in reversed(range(len(params.sensor))):
            W, b = params.sensor[k]
            d = dense_backward(W, b, cache.sensor_acts[k], cache.sensor_acts[k + 1], d, "relu")

    if cache.modality != "sensor-only":
        top = params.lstm[-1]
        T = cache.lstm_caches[-1][1].shape[0]
        d_seq = np.zeros((T, top.hidden, B))
        d_seq[-1] = d_on
        for k in reversed(range(len(params.lstm))):
            d_seq = lstm_sequence_backward(params.lstm[k], cache.lstm_caches[k], d_seq)


def loss_and_grad(params: ModelParams, x_s, x_n, y, modality: str = "multi", weights=None) -> float:
    probs, cache = forward_batch(params, x_s, x_n, modality)
    loss = batch_loss(probs, y, weights)
    backprop(params, cache, y, weights)
    return loss


def predict_proba(params: ModelParams, samples: AlignedSet, modality: str = "multi",
                  batch_size: int = 1024) -> np.ndarray:
    """Attack-class probabilities for a sample set, in input order."""
    out = []
    for start in range(0, len(samples), batch_size):
        part = samples[start:start + batch_size]
        probs, _ = forward_batch(params, part.x_s, part.x_n, modality)
        out.append(probs)
    return np.concatenate(out, axis=1) if out else np.zeros((2, 0))


def predict(params: ModelParams, samples: AlignedSet, modality: str = "multi") -> np.ndarray:
    probs = predict_proba(params, samples, modality)
    return (probs[1] > probs[0]).astype(np.int64)


# training -------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]


def train(config: TrainConfig, samples: AlignedSet, params: ModelParams | None = None,
          log=None) -> TrainResult:
    """Minibatch training; one entry per epoch in ``losses`` (sample-weighted mean batch loss)."""
    config.validate()
    if len(samples) == 0:
        raise ValueError("empty training set")
    if params is None:
        params = init_params(samples.x_s.shape[1], samples.x_n.shape[2], config)
    opt = config.optimizer.build()
    order_rng = np.random.Generator(np.random.PCG64([config.seed, 1]))
    pos_fraction = float(np.mean(samples.y))
    all_params = params.params()
    n = len(samples)
    losses = []
    for epoch in range(config.epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            y = samples.y[idx]
            w = sample_weights(y, config.class_weighted, pos_fraction)
            probs, cache = forward_batch(params, samples.x_s[idx], samples.x_n[idx], config.modality)
            loss = batch_loss(probs, y, w)
            if not math.isfinite(loss) or not np.all(np.isfinite(probs)):
                raise TrainingDiverged(epoch, bi, loss)
            backprop(params, cache, y, w)
            opt.step(all_params)
            total += loss * len(idx)
        losses.append(total / n)
        if log is not None:
            log(epoch, losses[-1])
    return TrainResult(params, losses)


# checkpoints ----------------------------------------------------------------


def save_checkpoint(params: ModelParams, path, config: TrainConfig | None = None, meta: dict | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": None if config is None else config.to_dict(),
        "meta": meta or {},
        "tensors": {p.name: {"shape": list(p.shape), "values": p.value.ravel().tolist()}
                    for p in params.params()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig | None
    meta: dict


def load_checkpoint(path, expected: TrainConfig | None = None) -> Checkpoint:
    """Load and validate. With ``expected``, layer widths must match it."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format_version "
                              f"{doc.get('format_version') if isinstance(doc, dict) else None!r}")
    arrays = {}
    try:
        for name, t in doc["tensors"].items():
            values = np.array(t["values"], dtype=np.float64)
            if values.size != math.prod(t["shape"]):
                raise CheckpointError(f"{path}: tensor {name} has {values.size} values for shape {t['shape']}")
            arrays[name] = values.reshape(t["shape"])
        params = params_from_arrays(arrays)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    except ValueError as exc:
        raise CheckpointError(f"{path}: inconsistent tensor shapes ({exc})") from None
    config = TrainConfig.from_dict(doc["config"]) if doc.get("config") else None
    if expected is not None:
        ref = init_params(params.sensor_input, params.network_input, expected)
        for name, p in ref.named().items():
            got = arrays.get(name)
            if got is None or got.shape != p.shape:
                raise CheckpointError(
                    f"{path}: tensor {name} has shape {None if got is None else got.shape}, "
                    f"config expects {p.shape}")
        if len(arrays) != len(ref.named()):
            raise CheckpointError(f"{path}: {len(arrays)} tensors, config expects {len(ref.named())}")
    return Checkpoint(params, config, doc.get("meta", {}))


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    na, nb = a.named(), b.named()
    return na.keys() == nb.keys() and all(
        na[k].shape == nb[k].shape and np.array_equal(na[k].value, nb[k].value) for k in na)


__all__ = [
    "MODES", "TrainConfig", "ModelParams", "LatentPair", "init_params", "sensor_encode",
    "network_encode", "fuse", "classify", "forward", "predict_label", "forward_batch", "backprop",
    "loss_and_grad", "predict_proba", "predict", "train", "TrainResult", "save_checkpoint",
    "load_checkpoint", "Checkpoint", "CheckpointError", "TrainingDiverged", "params_equal",
]
