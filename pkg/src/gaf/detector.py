"""Anchor-free 1D detection heads and interval decoding.

A frame either belongs to an action (class 1..K) or to background (class 0).
The classifier head scores pooled features; the regression head predicts
per-frame non-negative offsets to the enclosing interval's boundaries.
Decoding turns per-frame offsets plus attention into scored intervals,
pruned by class-wise greedy NMS.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from gaf import tensor as gt
from gaf.attention import AttentionMap, attention_pool_safe
from gaf.data import ActionInterval
from gaf.layers import Linear
from gaf.tensor import ContractError, Tensor


class DetectorModel:
    def __init__(self, D: int, K: int, rng: np.random.Generator):
        self.D = D
        self.K = K
        self.clf_head = Linear(D, K + 1, rng)
        self.reg_head = Linear(D, 2, rng)

    _FIELDS = ("clf_head", "reg_head")

    def named_params(self, prefix: str = "detector") -> Iterator[tuple[str, Tensor]]:
        for name in self._FIELDS:
            yield from getattr(self, name).named_params(f"{prefix}.{name}")

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_params():
            p.requires_grad = flag


@dataclass(frozen=True)
class Proposal:
    start: float
    end: float
    class_id: int
    score: float


@dataclass
class DetectionResult:
    seq_id: str
    proposals: list[Proposal]


def _log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax; the max shift is a detached constant."""
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    shifted = logits - shift
    lse = gt.log(gt.ssum(gt.exp(shifted), axis=1, keepdims=True))
    return shifted - lse


def clf_loss(model: DetectorModel, f_ai: Tensor, f_nai: Optional[Tensor], c: int) -> Tensor:
    """Cross-entropy of the action-pooled feature against class c, plus (when
    given) cross-entropy of the background-pooled feature against class 0."""
    if not (1 <= c <= model.K):
        raise ContractError(f"action class must be in 1..{model.K}, got {c}")
    logp_ai = _log_softmax(model.clf_head(gt.reshape(f_ai, (1, model.D))))
    loss = gt.neg(gt.ssum(logp_ai * _one_hot(c, model.K + 1)))
    if f_nai is not None:
        logp_nai = _log_softmax(model.clf_head(gt.reshape(f_nai, (1, model.D))))
        loss = loss + gt.neg(gt.ssum(logp_nai * _one_hot(0, model.K + 1)))
    return loss


def _one_hot(c: int, n: int) -> Tensor:
    v = np.zeros((1, n))
    v[0, c] = 1.0
    return Tensor(v)


def interval_offsets(t: int, interval: ActionInterval) -> tuple[float, float]:
    """Ground-truth (distance to start, distance to end) for a frame inside."""
    return float(t - interval.start), float(interval.end - t)


def sequence_clf_loss(
    model: DetectorModel,
    f_prime: Tensor,
    lam: AttentionMap,
    intervals: Sequence[ActionInterval],
    use_nai: bool = True,
) -> Optional[Tensor]:
    """Classification loss for a whole sequence: each interval's action
    feature is pooled over its own window (plus 25% temporal context on each
    side) and scored with clf_loss; losses are averaged over intervals. The
    non-action feature is pooled once over the full sequence — background is
    a property of the sequence, not of any one interval's neighborhood, and
    a window-local pool would be foreground-dominated. Sequences whose
    intervals tile every frame have no non-action instance, so the class-0
    term is skipped for them. Returns None when the sequence offers nothing
    to classify (no intervals and use_nai=False)."""
    t_len = f_prime.data.shape[0]
    has_bg = sum(iv.length for iv in intervals) < t_len  # intervals are disjoint
    f_nai = attention_pool_safe(f_prime, lam)[1] if use_nai and has_bg else None
    if not intervals:
        if not use_nai:
            return None
        logp = _log_softmax(model.clf_head(gt.reshape(f_nai, (1, model.D))))
        return gt.neg(gt.ssum(logp * _one_hot(0, model.K + 1)))
    terms = []
    for iv in intervals:
        ctx = int(round(0.25 * iv.length))
        w0, w1 = max(0, iv.start - ctx), min(t_len, iv.end + ctx)
        f_win = gt.slice_rows(f_prime, w0, w1)
        lam_win = AttentionMap(gt.slice_rows(lam.lam, w0, w1))
        f_ai, _ = attention_pool_safe(f_win, lam_win)
        terms.append(clf_loss(model, f_ai, f_nai, iv.class_id))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total / float(len(terms))


def reg_loss(
    model: DetectorModel,
    f_prime: Tensor,
    lam: AttentionMap,
    intervals: Sequence[ActionInterval],
    include_background: bool = True,
) -> Tensor:
    """Per-frame boundary regression. Frames inside an interval regress to
    their true offsets weighted by lambda_t; background frames regress to
    zero offsets weighted by (1 - lambda_t). Each term is a weighted mean
    (total weight in the denominator), so the loss grades offset quality
    and does not grow with the amount of attention mass behind it. The
    weights are treated as constants: letting gradients flow through them
    rewards suppressing the attention on hard frames, the opposite of what
    the attention is for."""
    t_len = f_prime.data.shape[0]
    if lam.T != t_len:
        raise gt.ShapeError(f"attention length {lam.T} != T={t_len}")
    pred = gt.softplus(model.reg_head(f_prime))  # [T, 2], non-negative
    targets = np.zeros((t_len, 2))
    fg = np.zeros(t_len, dtype=bool)
    for iv in intervals:
        for t in range(iv.start, min(iv.end, t_len)):
            targets[t] = interval_offsets(t, iv)
            fg[t] = True
    lam_const = lam.lam.data[:, None]
    w_fg = lam_const * fg[:, None]
    penalty = gt.ssum(gt.smooth_l1(pred - Tensor(targets)), axis=1, keepdims=True)
    loss = gt.ssum(penalty * Tensor(w_fg)) / (float(w_fg.sum()) + 1e-8)
    if include_background:
        w_bg = (1.0 - lam_const) * ~fg[:, None]
        loss = loss + gt.ssum(penalty * Tensor(w_bg)) / (float(w_bg.sum()) + 1e-8)
    return loss


def detector_loss(clf: Tensor, reg: Tensor, alpha: float, beta_reg: float) -> Tensor:
    if alpha < 0 or beta_reg < 0:
        raise ContractError("loss weights must be >= 0")
    return alpha * clf + beta_reg * reg


def iou(a, b) -> float:
    """Intersection over union of two half-open intervals (start, end)."""
    a0, a1 = (a.start, a.end) if hasattr(a, "start") else (a[0], a[1])
    b0, b1 = (b.start, b.end) if hasattr(b, "start") else (b[0], b[1])
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union if union > 0 else 0.0


def nms(proposals: list[Proposal], nms_iou: float) -> list[Proposal]:
    """Class-wise greedy suppression: walk by descending score, drop any
    proposal overlapping a kept same-class proposal by more than nms_iou."""
    ordered = sorted(proposals, key=lambda p: (-p.score, p.start, p.end, p.class_id))
    kept: list[Proposal] = []
    for p in ordered:
        if any(k.class_id == p.class_id and iou(k, p) > nms_iou for k in kept):
            continue
        kept.append(p)
    return kept


def decode(
    model: DetectorModel,
    f_prime: Tensor,
    lam: AttentionMap,
    seq_id: str = "",
    score_thresh: float = 0.5,
    nms_iou: float = 0.5,
) -> DetectionResult:
    """Frames with attention above threshold become interval candidates via
    their predicted offsets; score = lambda_t * class probability."""
    if not (0.0 <= score_thresh <= 1.0 and 0.0 <= nms_iou <= 1.0):
        raise ContractError("thresholds must lie in [0,1]")
    t_len = f_prime.data.shape[0]
    offsets = gt.softplus(model.reg_head(f_prime)).data
    logits = model.clf_head(f_prime).data
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    lam_v = lam.lam.data
    candidates = []
    for t in range(t_len):
        if lam_v[t] < score_thresh:
            continue
        d_start, d_end = offsets[t]
        start = max(0.0, t - d_start)
        end = min(float(t_len), t + max(d_end, 1e-6))
        cls = int(probs[t, 1:].argmax()) + 1
        candidates.append(Proposal(start, end, cls, float(lam_v[t] * probs[t, cls])))
    kept = nms(candidates, nms_iou)
    kept.sort(key=lambda p: (-p.score, p.start, p.end, p.class_id))
    return DetectionResult(seq_id=seq_id, proposals=kept)
