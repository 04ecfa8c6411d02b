"""Alternating two-stage training.

Odd (1-based) epochs update the frame-level generative model with its
variational loss, holding the segment attention fixed; even epochs update
the segment attention and detection heads with the weighted detection
losses plus the reconstruction-through-the-frozen-frame-model term. One
"batch" is one sequence. Everything is seeded, so a (seed, config, data)
triple reproduces metrics and checkpoints byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from gaf import checkpoint as ck
from gaf import tensor as gt
from gaf.attention import AttentionMap, from_mask
from gaf.cvae import CvaeModel, cvae_loss
from gaf.data import FeatureSequence
from gaf.detector import (
    DetectionResult,
    DetectorModel,
    decode,
    detector_loss,
    reg_loss,
    sequence_clf_loss,
)
from gaf.evaluation import EvalReport, evaluate_map
from gaf.optim import Adam
from gaf.segment import SegmentModel, attention_forward, enhance, fuse
from gaf.tensor import ContractError, NumericalError, Tape, Tensor

VARIANTS = ("ai", "ai+nai", "full")


class ConfigError(ValueError):
    """Config file missing, malformed, or carrying unknown fields."""


class TrainAbort(RuntimeError):
    """Training hit a numerical failure; carries epoch and sequence index."""

    def __init__(self, epoch: int, step: int, msg: str):
        super().__init__(f"epoch {epoch}, sequence {step}: {msg}")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    train_data: str
    eval_data: str
    checkpoint: str
    epochs: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-3
    beta_kl: float = 0.2
    alpha: float = 2.0
    beta_reg: float = 2.0
    stage_schedule: str = "epoch"
    seed: int = 7

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if min(self.alpha, self.beta_reg, self.beta_kl, self.weight_decay) < 0:
            raise ConfigError("alpha, beta_reg, beta_kl, weight_decay must be >= 0")
        if self.stage_schedule != "epoch":
            raise ConfigError(f"unsupported stage_schedule {self.stage_schedule!r}")


# hyperparameter presets; "paper" keeps the small fine-tuning step size and
# unit loss weights, "desk" is tuned for training these models from scratch
PRESETS = {
    "desk": dict(epochs=20, lr=1e-3, weight_decay=1e-3, beta_kl=0.2,
                 alpha=2.0, beta_reg=2.0, stage_schedule="epoch", seed=7),
    "paper": dict(epochs=20, lr=1e-5, weight_decay=1e-3, beta_kl=1.0,
                  alpha=1.0, beta_reg=1.0, stage_schedule="epoch", seed=7),
}

_FIELD_NAMES = {f.name for f in dataclasses.fields(TrainConfig)}
_REQUIRED = ("train_data", "eval_data", "checkpoint")


def load_config(path: str) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    preset = obj.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}, choose from {sorted(PRESETS)}")
    unknown = set(obj) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for name in _REQUIRED:
        if name not in obj:
            raise ConfigError(f"config missing required field {name!r}")
    merged = {**PRESETS[preset], **obj}
    try:
        return TrainConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def metrics_path(checkpoint_path: str) -> str:
    return checkpoint_path + ".metrics.jsonl"


def infer_dims(data: Sequence[FeatureSequence]) -> tuple[int, int]:
    if not data:
        raise ConfigError("dataset is empty")
    d = data[0].features.shape[1]
    k = max((iv.class_id for s in data for iv in s.intervals), default=1)
    return d, k


def build_models(D: int, K: int, seed: int) -> tuple[CvaeModel, SegmentModel, DetectorModel]:
    rng = np.random.default_rng([seed, 11])
    return CvaeModel(D, rng), SegmentModel(D, rng), DetectorModel(D, K, rng)


def _detached_attention(seg: SegmentModel, features: np.ndarray) -> AttentionMap:
    lam = attention_forward(seg, Tensor(features))  # no tape active: constant
    return AttentionMap(Tensor(lam.lam.data.copy()))


def attention_stats(seg: SegmentModel, data: Sequence[FeatureSequence]) -> tuple[float, float]:
    """Mean attention over all foreground frames and all background frames."""
    fg, bg = [], []
    for s in data:
        lam = attention_forward(seg, Tensor(s.features)).lam.data
        fg.append(lam[s.fg_mask == 1])
        bg.append(lam[s.fg_mask == 0])
    fg_all, bg_all = np.concatenate(fg), np.concatenate(bg)
    return (
        float(fg_all.mean()) if fg_all.size else 0.0,
        float(bg_all.mean()) if bg_all.size else 0.0,
    )


def predict_dataset(
    seg: SegmentModel,
    det: DetectorModel,
    data: Sequence[FeatureSequence],
    score_thresh: float = 0.5,
    nms_iou: float = 0.5,
) -> list[DetectionResult]:
    out = []
    for s in data:
        f = Tensor(s.features)
        lam = attention_forward(seg, f)
        f_prime = enhance(seg, f, lam)
        out.append(decode(det, f_prime, lam, seq_id=s.seq_id,
                          score_thresh=score_thresh, nms_iou=nms_iou))
    return out


def evaluate_models(
    seg: SegmentModel,
    det: DetectorModel,
    data: Sequence[FeatureSequence],
    iou_thresholds: Sequence[float] = (0.5,),
    score_thresh: float = 0.5,
    nms_iou: float = 0.5,
) -> EvalReport:
    return evaluate_map(predict_dataset(seg, det, data, score_thresh, nms_iou),
                        data, iou_thresholds)


def _stage1_epoch(frame, seg, data, opt, beta_kl, rng, lam_mode, epoch):
    totals, recons, kls = [], [], []
    for i, s in enumerate(data):
        if lam_mode == "oracle":
            lam = from_mask(s.fg_mask)
        else:
            lam = _detached_attention(seg, s.features)
        eps = rng.standard_normal((s.features.shape[0], frame.d_z))
        opt.zero_grad()
        try:
            with Tape():
                total, recon, kl = cvae_loss(frame, Tensor(s.features), lam,
                                             beta_kl, eps=eps)
                gt.backward(total)
            opt.step()
        except NumericalError as e:
            raise TrainAbort(epoch, i, str(e)) from e
        totals.append(total.item())
        recons.append(recon.item())
        kls.append(kl.item())
    return {
        "loss": float(np.mean(totals)),
        "recon": float(np.mean(recons)),
        "kl": float(np.mean(kls)),
    }


def _stage2_epoch(frame, seg, det, data, opt, alpha, beta_reg, rng,
                  use_nai, include_lr, epoch):
    if not frame.frozen():
        raise ContractError("stage 2 requires a frozen frame model")
    before = ck.param_checksum(frame.named_params())
    for _, p in frame.named_params():
        p.grad = None  # drop stage-1 leftovers so the leak check is fresh
    totals = []
    for i, s in enumerate(data):
        eps = rng.standard_normal((s.features.shape[0], frame.d_z))
        opt.zero_grad()
        try:
            with Tape():
                f = Tensor(s.features)
                lam = attention_forward(seg, f)
                f_prime = enhance(seg, f, lam)
                clf = sequence_clf_loss(det, f_prime, lam, s.intervals, use_nai=use_nai)
                reg = reg_loss(det, f_prime, lam, s.intervals,
                               include_background=use_nai)
                loss = detector_loss(clf, reg, alpha, beta_reg) if clf is not None \
                    else beta_reg * reg
                if include_lr:
                    loss = loss + fuse(frame, seg, f, lam=lam, eps=eps)
                gt.backward(loss)
            for name, p in frame.named_params():
                if p.grad is not None:
                    raise ContractError(f"gradient leaked into frozen {name}")
            opt.step()
        except NumericalError as e:
            raise TrainAbort(epoch, i, str(e)) from e
        totals.append(loss.item())
    if ck.param_checksum(frame.named_params()) != before:
        raise ContractError("frozen frame model changed during stage 2")
    return float(np.mean(totals))


def train_stage1(
    frame: CvaeModel,
    seg: SegmentModel,
    data: Sequence[FeatureSequence],
    cfg: TrainConfig,
    lam_mode: str = "seg",
) -> list[dict]:
    """Stage-1-only training for cfg.epochs epochs; returns per-epoch
    {loss, recon, kl} means. lam_mode "seg" reads the attention targets from
    the (fixed) segment model, "oracle" from the ground-truth masks."""
    if lam_mode not in ("seg", "oracle"):
        raise ConfigError(f"unknown lam_mode {lam_mode!r}")
    frame.set_trainable(True)
    seg.set_trainable(False)
    seg_sum = ck.param_checksum(seg.named_params())
    opt = Adam(list(frame.named_params()), cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 13])
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        curve.append(_stage1_epoch(frame, seg, data, opt, cfg.beta_kl, rng,
                                   lam_mode, epoch))
    if ck.param_checksum(seg.named_params()) != seg_sum:
        raise ContractError("fixed segment model changed during stage 1")
    return curve


def train_stage2(
    frame: CvaeModel,
    seg: SegmentModel,
    det: DetectorModel,
    data: Sequence[FeatureSequence],
    cfg: TrainConfig,
    variant: str = "full",
) -> list[float]:
    """Stage-2-only training for cfg.epochs epochs under a frozen frame
    model; returns per-epoch mean losses. Variants: "ai" keeps only the
    action-instance terms, "ai+nai" adds the non-action terms, "full" adds
    the frame-model reconstruction term on top."""
    use_nai, include_lr = _variant_flags(variant)
    frame.set_trainable(False)
    seg.set_trainable(True)
    det.set_trainable(True)
    opt = Adam(list(seg.named_params()) + list(det.named_params()),
               cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 17])
    return [
        _stage2_epoch(frame, seg, det, data, opt, cfg.alpha, cfg.beta_reg,
                      rng, use_nai, include_lr, epoch)
        for epoch in range(1, cfg.epochs + 1)
    ]


def _variant_flags(variant: str) -> tuple[bool, bool]:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, choose from {VARIANTS}")
    return variant != "ai", variant == "full"


def train_alternating(
    train_data: Sequence[FeatureSequence],
    eval_data: Sequence[FeatureSequence],
    cfg: TrainConfig,
    variant: str = "full",
    eval_every: int = 5,
) -> tuple[tuple[CvaeModel, SegmentModel, DetectorModel], list[dict]]:
    """Full alternating run: builds the models, alternates stage-1/stage-2
    epochs, verifies the freeze contract every epoch, and writes the final
    checkpoint plus a JSON-lines metrics history next to it."""
    use_nai, include_lr = _variant_flags(variant)
    d, k = infer_dims(train_data)
    frame, seg, det = build_models(d, k, cfg.seed)
    opt1 = Adam(list(frame.named_params()), cfg.lr, cfg.weight_decay)
    opt2 = Adam(list(seg.named_params()) + list(det.named_params()),
                cfg.lr, cfg.weight_decay)
    rng1 = np.random.default_rng([cfg.seed, 13])
    rng2 = np.random.default_rng([cfg.seed, 17])

    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        stage = 1 if epoch % 2 == 1 else 2
        if stage == 1:
            frame.set_trainable(True)
            seg.set_trainable(False)
            frozen_sum = ck.param_checksum(seg.named_params())
            stats = _stage1_epoch(frame, seg, train_data, opt1, cfg.beta_kl,
                                  rng1, "seg", epoch)
            loss = stats["loss"]
            if ck.param_checksum(seg.named_params()) != frozen_sum:
                raise ContractError(f"fixed segment model changed in epoch {epoch}")
        else:
            frame.set_trainable(False)
            seg.set_trainable(True)
            det.set_trainable(True)
            loss = _stage2_epoch(frame, seg, det, train_data, opt2, cfg.alpha,
                                 cfg.beta_reg, rng2, use_nai, include_lr, epoch)
        fg_mean, bg_mean = attention_stats(seg, train_data)
        rec = {
            "epoch": epoch,
            "stage": stage,
            "loss": loss,
            "lambda_fg_mean": fg_mean,
            "lambda_bg_mean": bg_mean,
        }
        if eval_every > 0 and epoch % eval_every == 0:
            rec["map"] = float(evaluate_models(seg, det, eval_data).map[0.5])
        history.append(rec)

    ck.save_models(cfg.checkpoint, frame, seg, det)
    ck._atomic_write(metrics_path(cfg.checkpoint), history_lines(history))
    return (frame, seg, det), history


def history_lines(history: Sequence[dict]) -> str:
    return "".join(json.dumps(rec, separators=(",", ":")) + "\n" for rec in history)


def read_history(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
