"""Command-line entry point: ``icsfusion {generate,train,eval,gradcheck,ablation}``.

Exit codes: 0 ok, 2 usage or missing input, 3 numerical abort, 4 failed
verification.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import IngestError, PreprocessError, PreprocessStats, ingest_csv, prepare_dataset
from .evaluation import emit_report, evaluate
from .model import (
    MODES,
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .synthetic import SyntheticSpec, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("icsfusion")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data_dir: str | None = None
    sensor_csv: str | None = None
    network_csv: str | None = None
    out_dir: str = "runs/default"
    sensor_features: int = 51
    network_features: int = 16
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    ablation_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    gradcheck_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise UsageError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            d["train"] = TrainConfig.from_dict(d.get("train", {}))
            syn = d.get("synthetic", {})
            unknown = set(syn) - {f.name for f in fields(SyntheticSpec)}
            if unknown:
                raise UsageError(f"unknown synthetic keys: {sorted(unknown)}")
            d["synthetic"] = SyntheticSpec(**syn)
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from None
        if cfg.sensor_features < 1 or cfg.network_features < 1:
            raise UsageError("feature counts must be positive")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None

    def data_paths(self) -> tuple[Path, Path]:
        if self.sensor_csv and self.network_csv:
            paths = Path(self.sensor_csv), Path(self.network_csv)
        elif self.data_dir:
            paths = Path(self.data_dir) / "sensor.csv", Path(self.data_dir) / "network.csv"
        else:
            raise UsageError("config needs 'data_dir' or both 'sensor_csv' and 'network_csv'")
        for p in paths:
            if not p.exists():
                raise UsageError(f"data file not found: {p}")
        return paths

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _dataset_id(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _stats_id(stats: PreprocessStats) -> str:
    return hashlib.sha256(json.dumps(stats.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _load_prepared(cfg: RunConfig, stats: PreprocessStats | None = None):
    sensor_path, network_path = cfg.data_paths()
    sensor = ingest_csv(sensor_path, "sensor", cfg.sensor_features)
    network = ingest_csv(network_path, "network", cfg.network_features)
    prepared = prepare_dataset(sensor, network, cfg.train.window, cfg.train.train_fraction, stats)
    return prepared, _dataset_id((sensor_path, network_path))


# commands -------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, args) -> int:
    paths = write_dataset(cfg.synthetic, args.out)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    prepared, dataset_id = _load_prepared(cfg)
    tc = cfg.train
    log.info("training %s model on %d samples (%d test held out)", tc.modality, len(prepared.train),
             len(prepared.test))
    result = train(tc, prepared.train, log=lambda e, loss: log.info("epoch %d loss %.6f", e, loss))
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    prepared.stats.save(out / "stats.json")
    meta = {"modality": tc.modality, "dataset": dataset_id, "stats": _stats_id(prepared.stats),
            "train_samples": len(prepared.train), "final_loss": result.losses[-1] if result.losses else None}
    save_checkpoint(result.params, out / "checkpoint.json", tc, meta)
    with (out / "loss.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(result.losses):
            w.writerow([e, repr(loss)])
    print(f"checkpoint: {out / 'checkpoint.json'}")
    if result.losses:
        print(f"final loss: {result.losses[-1]:.6f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = cfg.out
    ckpt_path, stats_path = out / "checkpoint.json", out / "stats.json"
    for p in (ckpt_path, stats_path):
        if not p.exists():
            raise UsageError(f"missing {p.name} in {out}; run train first")
    ckpt = load_checkpoint(ckpt_path, cfg.train)
    stats = PreprocessStats.load(stats_path)
    if ckpt.meta.get("stats") != _stats_id(stats):
        raise CheckpointError(f"{stats_path} does not belong to {ckpt_path}")
    modality = ckpt.meta.get("modality", cfg.train.modality)
    prepared, dataset_id = _load_prepared(cfg, stats)
    if prepared.test.x_s.shape[1] != ckpt.params.sensor_input or \
            prepared.test.x_n.shape[2] != ckpt.params.network_input:
        raise CheckpointError("checkpoint input widths do not match the data")
    report = evaluate(ckpt.params, prepared.test, modality,
                      meta={"checkpoint": _sha(ckpt_path), "dataset": dataset_id, "modality": modality},
                      created_at=getattr(args, "created_at", None))
    emit_report(report, out / "report.json", "json")
    emit_report(report, out / "report.csv", "csv")
    if not report.consistent():
        print("report metrics do not match the confusion counts", file=sys.stderr)
        return EXIT_VERIFY
    cm = report.confusion
    print(f"tp={cm.tp} tn={cm.tn} fp={cm.fp} fn={cm.fn}")
    print(f"precision={report.precision:.4f} recall={report.recall:.4f} f1={report.f1:.4f}")
    print(f"false alarms={report.fp_rate_pct:.2f}% evaded attacks={report.fn_rate_pct:.2f}%")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    worst, ok = gradcheck.run(cfg.gradcheck_seeds, backward=gradcheck.default_backward)
    for name, err in worst.items():
        flag = "ok" if err <= gradcheck.TOLERANCE else "FAIL"
        print(f"{name:16s} {err:.3e} {flag}")
    if not ok:
        bad = [n for n, e in worst.items() if e > gradcheck.TOLERANCE]
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(worst)} tensors within {gradcheck.TOLERANCE:g}")
    return EXIT_OK


def run_ablation(cfg: RunConfig, prepared, seeds) -> dict[str, dict[str, float]]:
    """Mean test precision/recall/F1 per modality mode over ``seeds``."""
    rows = {}
    for mode in MODES:
        scores = []
        for seed in seeds:
            tc = TrainConfig.from_dict({**cfg.train.to_dict(), "modality": mode, "seed": seed})
            result = train(tc, prepared.train)
            rep = evaluate(result.params, prepared.test, mode, created_at="-")
            log.info("%s seed %d: p=%.4f r=%.4f f1=%.4f", mode, seed, rep.precision, rep.recall, rep.f1)
            scores.append((rep.precision, rep.recall, rep.f1))
        p, r, f = np.mean(scores, axis=0)
        rows[mode] = {"precision": float(p), "recall": float(r), "f1": float(f),
                      "f1_per_seed": [s[2] for s in scores]}
    return rows


def cmd_ablation(cfg: RunConfig, args) -> int:
    prepared, _ = _load_prepared(cfg)
    rows = run_ablation(cfg, prepared, cfg.ablation_seeds)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "precision", "recall", "f1"])
        for mode, r in rows.items():
            w.writerow([mode, repr(r["precision"]), repr(r["recall"]), repr(r["f1"])])
    print(f"{'model':14s} {'precision':>9s} {'recall':>7s} {'f1':>6s}")
    for mode, r in rows.items():
        print(f"{mode:14s} {r['precision']:9.3f} {r['recall']:7.3f} {r['f1']:6.3f}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "ablation": cmd_ablation}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icsfusion", description="Multi-modal ICS attack detector")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int, help="override the training (and generator) seed")
        sp.add_argument("--out", required=name == "generate", help="output directory")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    try:
        if args.seed is not None:
            cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": args.seed})
            cfg.synthetic = SyntheticSpec(**{**cfg.synthetic.to_dict(), "seed": args.seed})
    except ValueError as exc:
        raise UsageError(f"invalid --seed: {exc}") from None
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(RunConfig.load(args.config), args)
        if args.command in ("train", "eval", "ablation"):
            cfg.data_paths()
        return COMMANDS[args.command](cfg, args)
    except (UsageError, IngestError, PreprocessError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
