"""Per-frame attention values and attention-weighted pooling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from gaf import tensor as gt
from gaf.tensor import ContractError, Tensor

log = logging.getLogger(__name__)

POOL_EPS = 1e-6


class PoolingDegenerateError(ValueError):
    """A pooling denominator underflowed (attention all-on or all-off)."""


@dataclass
class AttentionMap:
    """Length-T vector of per-frame attention values, each in [0, 1]."""

    lam: Tensor

    def __post_init__(self):
        if self.lam.data.ndim != 1:
            raise ContractError(f"attention map must be 1-D, got shape {self.lam.data.shape}")
        if np.any(self.lam.data < 0.0) or np.any(self.lam.data > 1.0):
            raise ContractError("attention values must lie in [0, 1]")

    @property
    def T(self) -> int:
        return self.lam.data.shape[0]

    def column(self) -> Tensor:
        return gt.reshape(self.lam, (self.T, 1))


def from_mask(mask: np.ndarray) -> AttentionMap:
    """Wrap a binary foreground mask as a (constant) attention map."""
    return AttentionMap(Tensor(np.asarray(mask, dtype=np.float64)))


def attention_pool(f: Tensor, lam: AttentionMap) -> tuple[Tensor, Tensor]:
    """Attention-weighted mean features: (foreground-pooled, background-pooled).

    Raises PoolingDegenerateError when either weight mass is below POOL_EPS;
    callers that must survive that case use attention_pool_safe.
    """
    t = f.data.shape[0]
    if lam.T != t:
        raise gt.ShapeError(f"attention length {lam.T} != T={t}")
    w_fg = float(lam.lam.data.sum())
    w_bg = float(t - lam.lam.data.sum())
    if w_fg <= POOL_EPS or w_bg <= POOL_EPS:
        raise PoolingDegenerateError(
            f"attention mass degenerate (fg={w_fg:.2e}, bg={w_bg:.2e})"
        )
    col = lam.column()
    inv = 1.0 - col
    f_ai = gt.ssum(f * col, axis=0) / gt.ssum(col)
    f_nai = gt.ssum(f * inv, axis=0) / gt.ssum(inv)
    return f_ai, f_nai


def attention_pool_safe(f: Tensor, lam: AttentionMap) -> tuple[Tensor, Tensor]:
    """attention_pool with an unweighted-mean fallback for degenerate sides."""
    try:
        return attention_pool(f, lam)
    except PoolingDegenerateError:
        log.warning("degenerate attention mass, falling back to unweighted mean pooling")
        m = gt.mean(f, axis=0)
        t = f.data.shape[0]
        w_fg = float(lam.lam.data.sum())
        col = lam.column()
        if w_fg <= POOL_EPS:
            f_nai = gt.ssum(f * (1.0 - col), axis=0) / gt.ssum(1.0 - col)
            return m, f_nai
        if t - w_fg <= POOL_EPS:
            f_ai = gt.ssum(f * col, axis=0) / gt.ssum(col)
            return f_ai, m
        return m, m


def separation(lam: np.ndarray, fg_mask: np.ndarray) -> float:
    """Mean attention on foreground frames minus mean on background frames."""
    fg = fg_mask.astype(bool)
    if not fg.any() or fg.all():
        raise ContractError("separation needs both foreground and background frames")
    return float(lam[fg].mean() - lam[~fg].mean())


def ranking_auc(lam: np.ndarray, fg_mask: np.ndarray) -> float:
    """Pairwise ranking quality of attention against the foreground mask.

    Brute-force definition: over all (fg, bg) frame pairs, the fraction where
    the foreground frame gets strictly higher attention, counting ties 1/2.
    """
    fg = fg_mask.astype(bool)
    if not fg.any() or fg.all():
        raise ContractError("auc needs both foreground and background frames")
    pos = lam[fg][:, None]
    neg = lam[~fg][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return float(wins) / (pos.size * neg.size)
