"""Command-line front end: generate, train, eval, ablate, export-plots.

Every command leaves a RunManifest JSON next to its outputs recording what
ran, on which data (checksummed), with which seed, and for how long, so any
artifact can be traced back to its inputs. All outputs are plain JSON,
JSON-lines, or CSV.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from typing import Optional, Sequence

import gaf
from gaf import checkpoint as ck
from gaf import train as tr
from gaf.data import (
    DEFAULT_EVAL,
    DEFAULT_TRAIN,
    DatasetParseError,
    InfeasibleSpecError,
    generate,
    read_dataset,
    write_dataset,
)
from gaf.evaluation import DEFAULT_THRESHOLDS, AlignmentError
from gaf.tensor import NumericalError
from gaf.train import ConfigError, TrainAbort

SEED_ENV = "GAF_SEED"


def _checksum_files(paths: Sequence[str]) -> str:
    """sha256 over the concatenated bytes of the given files, in order."""
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as f:
            while True:
                chunk = f.read(1 << 20)
                if not chunk:
                    break
                h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    path: str,
    command: str,
    config: dict,
    seed: Optional[int],
    dataset_checksum: str,
    outputs: Sequence[str],
    t0: float,
) -> None:
    obj = {
        "command": command,
        "config": config,
        "seed": seed,
        "dataset_checksum": dataset_checksum,
        "tool_version": gaf.__version__,
        "duration_s": round(time.monotonic() - t0, 3),
        "outputs": sorted(outputs),
    }
    ck._atomic_write(path, json.dumps(obj, indent=2) + "\n")


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return obj


def _env_seed(cfg: tr.TrainConfig) -> tr.TrainConfig:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return dataclasses.replace(cfg, seed=seed)


def _load_train_config(path: str) -> tr.TrainConfig:
    return _env_seed(tr.load_config(path))


def cmd_generate(args) -> int:
    t0 = time.monotonic()
    spec_obj = _read_json(args.spec) if args.spec else {}
    unknown = set(spec_obj) - {"train", "eval"}
    if unknown:
        raise ConfigError(f"unknown spec sections: {sorted(unknown)}")
    try:
        train_spec = dataclasses.replace(DEFAULT_TRAIN, **spec_obj.get("train", {}))
        eval_spec = dataclasses.replace(DEFAULT_EVAL, **spec_obj.get("eval", {}))
    except TypeError as e:
        raise ConfigError(f"bad dataset spec: {e}") from None
    os.makedirs(args.out, exist_ok=True)
    paths = []
    n_written = 0
    for name, spec in (("train", train_spec), ("eval", eval_spec)):
        seqs = generate(spec)
        path = os.path.join(args.out, f"{name}.jsonl")
        write_dataset(seqs, path)
        paths.append(path)
        n_written += len(seqs)
    checksum = _checksum_files(paths)
    _write_manifest(
        os.path.join(args.out, "manifest.json"),
        "generate",
        {
            "spec": args.spec,
            "train": dataclasses.asdict(train_spec),
            "eval": dataclasses.asdict(eval_spec),
        },
        train_spec.seed,
        checksum,
        paths,
        t0,
    )
    print(f"wrote {n_written} sequences to {args.out} (checksum {checksum[:12]})")
    return 0


def cmd_train(args) -> int:
    t0 = time.monotonic()
    cfg = _load_train_config(args.config)
    train_data = read_dataset(cfg.train_data)
    eval_data = read_dataset(cfg.eval_data)
    checksum = _checksum_files([cfg.train_data, cfg.eval_data])
    _, history = tr.train_alternating(train_data, eval_data, cfg)
    outputs = [cfg.checkpoint, tr.metrics_path(cfg.checkpoint)]
    _write_manifest(
        cfg.checkpoint + ".manifest.json",
        "train",
        dataclasses.asdict(cfg),
        cfg.seed,
        checksum,
        outputs,
        t0,
    )
    final = history[-1]
    print(
        f"trained {cfg.epochs} epochs: loss {final['loss']:.4f}, "
        f"lambda fg/bg {final['lambda_fg_mean']:.3f}/{final['lambda_bg_mean']:.3f}, "
        f"checkpoint {cfg.checkpoint}"
    )
    return 0


def _parse_thresholds(raw: str) -> list[float]:
    try:
        vals = [float(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad thresholds {raw!r}") from None
    if not vals or any(not (0.0 < v <= 1.0) for v in vals):
        raise ConfigError(f"thresholds must lie in (0, 1], got {raw!r}")
    return vals


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    thresholds = _parse_thresholds(args.thresholds)
    frame, seg, det = ck.load_models(args.ckpt)
    data = read_dataset(args.data)
    checksum = _checksum_files([args.data])
    report = tr.evaluate_models(seg, det, data, thresholds)
    text = report.to_json()
    out = args.ckpt + ".eval.json"
    ck._atomic_write(out, text + "\n")
    print(text)
    _write_manifest(
        args.ckpt + ".eval.manifest.json",
        "eval",
        {"ckpt": args.ckpt, "data": args.data, "thresholds": thresholds},
        None,
        checksum,
        [out],
        t0,
    )
    return 0


def ablation_table(
    train_data,
    eval_data,
    cfg: tr.TrainConfig,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> list[dict]:
    """Train every loss variant from the same seed and evaluate each one.

    Returns one row per variant, in VARIANTS order: {"variant", "map":
    {threshold: value}}. Checkpoints land at cfg.checkpoint + "." + variant.
    """
    rows = []
    for variant in tr.VARIANTS:
        vcfg = dataclasses.replace(cfg, checkpoint=f"{cfg.checkpoint}.{variant}")
        _, _ = tr.train_alternating(train_data, eval_data, vcfg,
                                    variant=variant, eval_every=0)
        frame, seg, det = ck.load_models(vcfg.checkpoint)
        report = tr.evaluate_models(seg, det, eval_data, thresholds)
        rows.append({"variant": variant,
                     "map": {f"{t:g}": report.map[t] for t in thresholds}})
    return rows


def _ablation_csv(rows: list[dict], thresholds: Sequence[float]) -> str:
    header = "variant," + ",".join(f"{t:g}" for t in thresholds)
    lines = [header]
    for row in rows:
        lines.append(row["variant"] + ","
                     + ",".join(repr(row["map"][f"{t:g}"]) for t in thresholds))
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    t0 = time.monotonic()
    cfg = _load_train_config(args.config)
    train_data = read_dataset(cfg.train_data)
    eval_data = read_dataset(cfg.eval_data)
    checksum = _checksum_files([cfg.train_data, cfg.eval_data])
    thresholds = DEFAULT_THRESHOLDS
    rows = ablation_table(train_data, eval_data, cfg, thresholds)
    table = {"thresholds": [float(t) for t in thresholds], "rows": rows}
    json_out = cfg.checkpoint + ".ablation.json"
    csv_out = cfg.checkpoint + ".ablation.csv"
    ck._atomic_write(json_out, json.dumps(table, indent=2) + "\n")
    csv_text = _ablation_csv(rows, thresholds)
    ck._atomic_write(csv_out, csv_text)
    print(csv_text, end="")
    outputs = [json_out, csv_out] + [f"{cfg.checkpoint}.{v}" for v in tr.VARIANTS]
    _write_manifest(
        cfg.checkpoint + ".ablation.manifest.json",
        "ablate",
        dataclasses.asdict(cfg),
        cfg.seed,
        checksum,
        outputs,
        t0,
    )
    return 0


# fixed CSV schemas for the exported curves; one row per metrics record
_PLOT_SERIES = {
    "loss.csv": ("epoch", "stage", "loss"),
    "lambda_separation.csv": ("epoch", "lambda_fg_mean", "lambda_bg_mean"),
}


def _csv_cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def cmd_export_plots(args) -> int:
    t0 = time.monotonic()
    try:
        history = tr.read_history(args.history)
    except OSError as e:
        raise ConfigError(f"cannot read history: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed history: {e}") from None
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    for fname, cols in _PLOT_SERIES.items():
        lines = [",".join(cols)]
        for i, rec in enumerate(history):
            missing = [c for c in cols if c not in rec]
            if missing:
                raise ConfigError(f"history record {i} lacks fields {missing}")
            lines.append(",".join(_csv_cell(rec[c]) for c in cols))
        path = os.path.join(args.out_dir, fname)
        ck._atomic_write(path, "\n".join(lines) + "\n")
        outputs.append(path)
    checksum = _checksum_files([args.history])
    _write_manifest(
        os.path.join(args.out_dir, "manifest.json"),
        "export-plots",
        {"history": args.history},
        None,
        checksum,
        outputs,
        t0,
    )
    print(f"wrote {len(outputs)} CSVs to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gaf",
        description="Generative attention features on synthetic temporal sequences.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--spec", default=None,
                   help="JSON with optional 'train'/'eval' field overrides")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="run alternating two-stage training")
    t.add_argument("--config", required=True, help="training config JSON")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--thresholds", default=",".join(f"{t:g}" for t in DEFAULT_THRESHOLDS),
                   help="comma-separated IoU thresholds")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train and score each loss variant")
    a.add_argument("--config", required=True, help="training config JSON")
    a.set_defaults(fn=cmd_ablate)

    x = sub.add_parser("export-plots", help="dump metrics history as CSVs")
    x.add_argument("--history", required=True, help="JSON-lines metrics file")
    x.add_argument("--out-dir", required=True)
    x.set_defaults(fn=cmd_export_plots)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (TrainAbort, NumericalError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ConfigError, DatasetParseError, InfeasibleSpecError, AlignmentError,
            ck.CheckpointVersionError, ck.CheckpointFormatError, OSError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
