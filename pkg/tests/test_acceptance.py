"""Acceptance gate. Each test prints one PASS/FAIL line (also collected in the
terminal summary). Oracles here share no code with the implementation beyond
the public entry points under test.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from icsfusion import cli
from icsfusion.data import AlignedSample, IngestError, PreprocessStats, ingest_csv, prepare_dataset
from icsfusion.evaluation import confusion, f1, precision, recall
from icsfusion.gradcheck import TOLERANCE, make_instance
from icsfusion.model import MODES, TrainConfig, backprop, forward, forward_batch, init_params, network_encode, predict, train
from icsfusion.synthetic import SyntheticSpec, generate_synthetic, separable_toy


# 1. gradient check ----------------------------------------------------------


def _sample_loss(inst) -> float:
    # per-sample forward path + clamped BCE on the attack probability, averaged by hand
    total = 0.0
    for k in range(len(inst.y)):
        _, p = forward(inst.params, AlignedSample(inst.x_s[k], inst.x_n[k], int(inst.y[k])), inst.modality)
        q = min(max(float(p[1]), 1e-12), 1.0 - 1e-12)
        total -= math.log(q) if inst.y[k] == 1 else math.log(1.0 - q)
    return total / len(inst.y)


def test_gradient_check_tiny_instance(verdict):
    start = time.perf_counter()
    worst, worst_name = 0.0, None
    for seed in range(5):
        inst = make_instance(seed)
        _, cache = forward_batch(inst.params, inst.x_s, inst.x_n)
        backprop(inst.params, cache, inst.y)
        for p in inst.params.params():
            flat = p.value.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + 1e-5
                up = _sample_loss(inst)
                flat[i] = orig - 1e-5
                down = _sample_loss(inst)
                flat[i] = orig
                fd = (up - down) / 2e-5
                a = p.grad.reshape(-1)[i]
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                if err > worst:
                    worst, worst_name = err, p.name
    elapsed = time.perf_counter() - start
    verdict("1 gradient check", worst <= TOLERANCE and elapsed < 60,
            f"max rel err {worst:.2e} ({worst_name}) over seeds 0-4, {elapsed:.1f}s")


# 2. LSTM oracle -------------------------------------------------------------


def _lstm_reference(layers, xs):
    """Stacked LSTM, written out with plain floats. Gate rows: input, forget, candidate, output."""
    seq = [list(x) for x in xs]
    for U, W, b in layers:
        H = len(b) // 4
        h, c, out = [0.0] * H, [0.0] * H, []
        for x in seq:
            z = [b[r] + sum(U[r][k] * x[k] for k in range(len(x))) + sum(W[r][k] * h[k] for k in range(H))
                 for r in range(4 * H)]
            new_h = []
            for j in range(H):
                i = 1.0 / (1.0 + math.exp(-z[j]))
                f = 1.0 / (1.0 + math.exp(-z[H + j]))
                g = math.tanh(z[2 * H + j])
                o = 1.0 / (1.0 + math.exp(-z[3 * H + j]))
                c[j] = f * c[j] + i * g
                new_h.append(o * math.tanh(c[j]))
            h = new_h
            out.append(h)
        seq = out
    return seq[-1]


def test_lstm_matches_reference(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(100):
        hidden = tuple(int(v) for v in rng.integers(1, 5, 3))
        fn, T = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        params = init_params(3, fn, TrainConfig(lstm_hidden=hidden, seed=case))
        for layer in params.lstm:
            for p in layer.params():
                p.value[...] = rng.normal(0.0, 1.0, p.shape)
        x = rng.normal(0.0, 1.0, (T, fn))
        ref = _lstm_reference([(l.U.value.tolist(), l.W.value.tolist(), l.b.value.tolist()) for l in params.lstm],
                              x.tolist())
        worst = max(worst, float(np.max(np.abs(network_encode(params, x) - np.array(ref)))))
    verdict("2 LSTM oracle", worst <= 1e-10, f"max abs diff {worst:.2e} over 100 cases")


# 3. metrics -----------------------------------------------------------------


def test_metrics_match_brute_force(verdict):
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        y = rng.integers(0, 2, n).tolist()
        p = rng.integers(0, 2, n).tolist() if rng.random() > 0.1 else [0] * n
        tp = tn = fp = fn = 0
        for a, b in zip(y, p):
            if a == 1 and b == 1:
                tp += 1
            elif a == 0 and b == 0:
                tn += 1
            elif a == 0:
                fp += 1
            else:
                fn += 1
        pr = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        fs = 2 * pr * rc / (pr + rc) if pr + rc else 0.0
        cm = confusion(y, p)
        if (cm.tp, cm.tn, cm.fp, cm.fn) != (tp, tn, fp, fn) or (precision(cm), recall(cm), f1(cm)) != (pr, rc, fs):
            mismatches += 1
    zero = confusion([0, 0], [0, 0])
    zero_ok = precision(zero) == recall(zero) == f1(zero) == 0.0
    verdict("3 metrics", mismatches == 0 and zero_ok,
            f"{mismatches} mismatches in 1000 pairs; zero denominators -> 0: {zero_ok}")


# 4. preprocessing invariants -----------------------------------------------


def test_preprocessing_invariants(verdict):
    problems = []
    for seed in range(5):
        sensor, network = generate_synthetic(SyntheticSpec(sample_count=600, seed=seed, missing_rate=0.02))
        sensor.values[:, 0] = 4.2  # constant feature
        prep = prepare_dataset(sensor, network, 8, 0.7)
        for part in (prep.train, prep.test):
            for arr in (part.x_s, part.x_n):
                if np.isnan(arr).any():
                    problems.append(f"seed {seed}: NaN after preprocessing")
                if arr.min() < 0 or arr.max() > 1:
                    problems.append(f"seed {seed}: value outside [0, 1]")
        if np.any(prep.train.x_s[:, 0] != 0) or np.any(prep.test.x_s[:, 0] != 0):
            problems.append(f"seed {seed}: constant feature not mapped to 0")
        # permuting test-range rows must leave stats and training samples untouched
        cut = prep.train.timestamps[-1]
        rng = np.random.default_rng(seed)
        s_late, n_late = sensor.timestamps > cut, network.timestamps > cut
        sv, nv = sensor.values.copy(), network.values.copy()
        sv[s_late] = rng.permutation(sv[s_late]) * 3.0 + 1.0
        nv[n_late] = rng.permutation(nv[n_late]) * 3.0 + 1.0
        other = prepare_dataset(sensor.with_values(sv), network.with_values(nv), 8, 0.7)
        if other.stats != prep.stats or not np.array_equal(other.train.x_n, prep.train.x_n):
            problems.append(f"seed {seed}: test rows influenced training statistics")
    verdict("4 preprocessing", not problems, "; ".join(problems) or "range, completeness, train-only fit, constants")


# 5. ablation ----------------------------------------------------------------


def test_ablation_ordering(verdict):
    start = time.perf_counter()
    sensor, network = generate_synthetic(SyntheticSpec())
    cfg = cli.RunConfig()
    prep = prepare_dataset(sensor, network, cfg.train.window, cfg.train.train_fraction)
    rows = cli.run_ablation(cfg, prep, range(5))
    elapsed = time.perf_counter() - start
    m, s, n = (rows[k]["f1"] for k in MODES)
    ok = m >= s - 0.01 and m >= n - 0.01 and elapsed < 600
    verdict("5 modality ablation", ok,
            f"mean F1 multi {m:.3f}, sensor-only {s:.3f}, network-only {n:.3f}; {elapsed:.0f}s")


# 6. separable toy -----------------------------------------------------------


def _threshold_separable(x: np.ndarray, y: np.ndarray) -> bool:
    # some single feature and cut splits the classes perfectly
    for j in range(x.shape[1]):
        col = x[:, j]
        lo0, hi0, lo1, hi1 = col[y == 0].min(), col[y == 0].max(), col[y == 1].min(), col[y == 1].max()
        if hi0 < lo1 or hi1 < lo0:
            return True
    return False


def test_separable_toy(verdict):
    data = separable_toy(200, seed=0, window=TrainConfig().window)
    flat = np.concatenate([data.x_s, data.x_n.reshape(len(data), -1)], axis=1)
    if not _threshold_separable(flat, data.y):
        verdict("6 separable toy", False, "toy set is not threshold-separable")
    result = train(TrainConfig(epochs=200), data)
    score = f1(confusion(data.y, predict(result.params, data)))
    verdict("6 separable toy", score == 1.0 and result.losses[-1] < 0.1,
            f"train F1 {score:.3f}, final loss {result.losses[-1]:.2e} after 200 epochs")


# 7. determinism -------------------------------------------------------------


def test_determinism(tmp_path, monkeypatch, verdict):
    monkeypatch.chdir(tmp_path)
    base = {"data_dir": "data", "synthetic": {"sample_count": 1500}, "train": {"epochs": 3}}
    assert cli.main(["generate", "--config", _write(tmp_path / "c.json", base), "--out", "data"]) == 0
    for run in ("a", "b"):
        assert cli.main(["train", "--config", "c.json", "--out", run]) == 0
        assert cli.main(["eval", "--config", "c.json", "--out", run]) == 0
    diffs = [name for name in ("checkpoint.json", "loss.csv", "stats.json", "report.csv")
             if (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()]
    reports = [json.loads((tmp_path / r / "report.json").read_text()) for r in ("a", "b")]
    for r in reports:
        r["meta"].pop("created_at")
    if reports[0] != reports[1]:
        diffs.append("report.json")
    verdict("7 determinism", not diffs, f"differing artifacts: {diffs}" if diffs else "checkpoint, loss trace, "
            "stats and reports bitwise identical")


def _write(path: Path, doc) -> str:
    path.write_text(json.dumps(doc))
    return str(path.name)


# 8. ingestion widths --------------------------------------------------------


def _csv(path: Path, n: int, label: bool) -> Path:
    head = ["timestamp"] + [f"c{j}" for j in range(n)] + (["label"] if label else [])
    row = ["0"] + ["1.0"] * n + (["0"] if label else [])
    path.write_text(",".join(head) + "\n" + ",".join(row) + "\n")
    return path


def test_ingestion_widths(tmp_path, verdict):
    ok = ingest_csv(_csv(tmp_path / "s.csv", 51, True), "sensor").values.shape[1] == 51
    ok &= ingest_csv(_csv(tmp_path / "n.csv", 16, False), "network").values.shape[1] == 16
    rejected = 0
    for modality, n, label in (("sensor", 50, True), ("sensor", 52, True), ("network", 15, False),
                               ("network", 17, False)):
        try:
            ingest_csv(_csv(tmp_path / f"{modality}{n}.csv", n, label), modality)
        except IngestError as exc:
            rejected += str(n) in str(exc) and ("51" in str(exc) or "16" in str(exc))
    verdict("8 ingestion", ok and rejected == 4, f"51/16 accepted: {ok}; off-by-one rejected {rejected}/4")
