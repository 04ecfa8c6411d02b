"""Segment-level attention: produce lambda from features, enhance features
through a two-level temporal pyramid, and couple back to the frozen
frame-level model via a reconstruction term."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from gaf import cvae as gc
from gaf import tensor as gt
from gaf.attention import AttentionMap
from gaf.layers import Conv1d, Linear
from gaf.tensor import ContractError, Tensor


class PyramidError(ValueError):
    """Sequence too short for the two-level pyramid."""


class SegmentModel:
    def __init__(self, D: int, rng: np.random.Generator, h_att: int = 16,
                 att_bias: float = -7.0):
        self.D = D
        self.att1 = Conv1d(3, D, h_att, rng)
        self.att2 = Conv1d(3, h_att, 1, rng)
        # background-prior bias: a negative value starts the attention low
        # everywhere, so foreground has to be argued up instead of
        # background argued down
        self.att2.b.data[:] = att_bias
        self.theta_seg = Linear(D, D, rng)
        self.enhance_conv = Conv1d(3, D + 1, D, rng)
        self.pyr_conv = Conv1d(3, D, D, rng, stride=2)

    _FIELDS = ("att1", "att2", "theta_seg", "enhance_conv", "pyr_conv")

    def named_params(self, prefix: str = "segment") -> Iterator[tuple[str, Tensor]]:
        for name in self._FIELDS:
            yield from getattr(self, name).named_params(f"{prefix}.{name}")

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_params():
            p.requires_grad = flag


def attention_forward(model: SegmentModel, f: Tensor) -> AttentionMap:
    """Per-frame attention in (0,1) from a small temporal conv stack."""
    h = gt.relu(model.att1(f))
    logits = model.att2(h)  # [T, 1]
    lam = gt.sigmoid(gt.reshape(logits, (f.data.shape[0],)))
    return AttentionMap(lam)


def enhance(model: SegmentModel, f: Tensor, lam: AttentionMap) -> Tensor:
    """Enhanced features F': average of a full-resolution conv level and a
    stride-2 level upsampled back to length T."""
    t = f.data.shape[0]
    if t < 4:
        raise PyramidError(f"need at least 4 frames for the stride-2 level, got {t}")
    if lam.T != t:
        raise gt.ShapeError(f"attention length {lam.T} != T={t}")
    level1 = model.enhance_conv(gt.concat([model.theta_seg(f), lam.column()], axis=1))
    level2 = gt.upsample_nearest(model.pyr_conv(level1), t, factor=2)
    return (level1 + level2) * 0.5


def fuse(
    frame_model: gc.CvaeModel,
    seg_model: SegmentModel,
    f: Tensor,
    lam: Optional[AttentionMap] = None,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[np.ndarray] = None,
) -> Tensor:
    """Reconstruction loss of the frozen frame-level model driven by the
    segment-level attention. Gradients reach seg_model only, through lam
    (computed here from seg_model when not supplied); the frame model must
    already be frozen (contract-checked here)."""
    if not frame_model.frozen():
        raise ContractError("fuse requires a frozen frame model")
    if lam is None:
        lam = attention_forward(seg_model, f)
    sample = gc.encode(frame_model, f, lam, rng=rng, eps=eps)
    x_r = gc.decode(frame_model, sample.z, lam)
    return gc.reconstruction_mse(f, x_r)
