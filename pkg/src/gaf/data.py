"""Synthetic temporal-action sequences.

Each sequence is T frames of D-dimensional features: background frames are
standard normal, frames inside an action interval of class k get a fixed
class direction added at strength s. The fg_mask column is the oracle
foreground indicator the attention losses are judged against.

Dataset files are UTF-8 JSON lines, one sequence per line, with a fixed
field order so identical data produces identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InfeasibleSpecError(ValueError):
    """The requested intervals cannot fit in a length-T sequence."""


class DatasetParseError(ValueError):
    """A dataset file violated the format; carries the offending line number."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class ActionInterval:
    start: int  # inclusive frame index
    end: int  # exclusive
    class_id: int  # 1..K, 0 is reserved for background

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad interval [{self.start}, {self.end})")
        if self.class_id < 1:
            raise ValueError(f"class_id must be >= 1, got {self.class_id}")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class FeatureSequence:
    seq_id: str
    features: np.ndarray  # [T, D] float64
    intervals: list[ActionInterval]
    fg_mask: np.ndarray  # [T] uint8, 1 inside any interval

    def validate(self) -> None:
        t, _ = self.features.shape
        mask = np.zeros(t, dtype=np.uint8)
        prev_end = 0
        for iv in self.intervals:
            if iv.end > t:
                raise ValueError(f"{self.seq_id}: interval [{iv.start},{iv.end}) exceeds T={t}")
            if iv.start < prev_end:
                raise ValueError(f"{self.seq_id}: intervals overlap or are unsorted")
            prev_end = iv.end
            mask[iv.start : iv.end] = 1
        if not np.array_equal(mask, self.fg_mask):
            raise ValueError(f"{self.seq_id}: fg_mask inconsistent with intervals")


@dataclass(frozen=True)
class DatasetSpec:
    num_sequences: int = 200
    T: int = 128
    D: int = 16
    K: int = 5
    min_interval_len: int = 8
    max_interval_len: int = 32
    min_intervals: int = 1
    max_intervals: int = 3
    snr: float = 3.0
    seed: int = 7
    # class directions are keyed separately so train/eval splits can share
    # class semantics while drawing disjoint noise streams
    class_seed: int = 7

    def __post_init__(self):
        if min(self.num_sequences, self.T, self.D, self.K) < 1:
            raise ValueError("num_sequences, T, D, K must all be positive")
        if self.min_interval_len < 2:
            raise ValueError("min_interval_len must be >= 2")
        if self.max_interval_len < self.min_interval_len:
            raise ValueError("max_interval_len < min_interval_len")
        if self.min_intervals < 0 or self.max_intervals < self.min_intervals:
            raise ValueError("bad intervals-per-sequence range")
        if self.snr <= 0:
            raise ValueError("snr must be > 0")
        if self.max_intervals * self.max_interval_len > self.T:
            raise InfeasibleSpecError(
                f"{self.max_intervals} intervals of up to {self.max_interval_len} "
                f"frames cannot fit in T={self.T}"
            )


DEFAULT_TRAIN = DatasetSpec()
DEFAULT_EVAL = DatasetSpec(num_sequences=50, seed=8)


# weight of the common component; a hair under the promised 0.3
# pairwise-dot ceiling so rounding in the Gram matrix cannot poke above it
_RHO = 0.3 - 1e-6


def class_directions(K: int, D: int, seed: int) -> np.ndarray:
    """K unit-norm direction vectors with pairwise |dot products| <= 0.3.

    Built as mu_k = s_k*sqrt(rho)*v + sqrt(1-rho)*w_k from an orthonormal
    frame (v, w_1..w_K) with alternating signs s_k, so every class carries
    the common "action present" axis v at weight rho while the
    class-specific parts stay mutually orthogonal. The sign alternation
    keeps the class means balanced along v: no single linear direction
    separates action from background, but the axis is there for a
    nonlinear model to pick up. The frame is a function of (K, D, seed)
    alone and never depends on how many sequences were drawn.
    """
    if K + 1 > D:
        raise InfeasibleSpecError(f"need {K + 1} orthogonal directions, D={D} is too small")
    rng = np.random.default_rng([seed, 1])
    q, r = np.linalg.qr(rng.standard_normal((D, K + 1)))
    q = q * np.sign(np.diag(r))  # pin the sign convention
    v, w = q[:, :1], q[:, 1:]
    signs = np.where(np.arange(K) % 2 == 0, 1.0, -1.0)
    return (signs * np.sqrt(_RHO) * v + np.sqrt(1.0 - _RHO) * w).T


def _place_intervals(rng: np.random.Generator, spec: DatasetSpec) -> list[ActionInterval]:
    n = int(rng.integers(spec.min_intervals, spec.max_intervals + 1))
    if n == 0:
        return []
    lengths = rng.integers(spec.min_interval_len, spec.max_interval_len + 1, size=n)
    # spec validation guarantees n*max_len <= T, so slack >= 0
    slack = spec.T - int(lengths.sum())
    # split the free frames into n+1 gaps (before, between, after)
    cuts = np.sort(rng.integers(0, slack + 1, size=n)) if slack > 0 else np.zeros(n, dtype=int)
    intervals = []
    pos = 0
    prev_cut = 0
    for i in range(n):
        gap = int(cuts[i] - prev_cut)
        prev_cut = int(cuts[i])
        start = pos + gap
        end = start + int(lengths[i])
        intervals.append(ActionInterval(start, end, int(rng.integers(1, spec.K + 1))))
        pos = end
    return intervals


def generate(spec: DatasetSpec) -> list[FeatureSequence]:
    """Materialize the dataset a spec describes. Pure in (spec,)."""
    dirs = class_directions(spec.K, spec.D, spec.class_seed)
    seqs = []
    for i in range(spec.num_sequences):
        rng = np.random.default_rng([spec.seed, 2, i])
        intervals = _place_intervals(rng, spec)
        feats = rng.standard_normal((spec.T, spec.D))
        mask = np.zeros(spec.T, dtype=np.uint8)
        for iv in intervals:
            feats[iv.start : iv.end] += spec.snr * dirs[iv.class_id - 1]
            mask[iv.start : iv.end] = 1
        seq = FeatureSequence(f"seq{i:04d}", feats, intervals, mask)
        seq.validate()
        seqs.append(seq)
    return seqs


def _float_list(a: np.ndarray) -> list:
    return [float(v) for v in a.reshape(-1)]


def write_dataset(seqs: Sequence[FeatureSequence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            t, d = s.features.shape
            rec = {
                "seq_id": s.seq_id,
                "T": t,
                "D": d,
                "features": _float_list(s.features),
                "intervals": [[iv.start, iv.end, iv.class_id] for iv in s.intervals],
                "fg_mask": [int(v) for v in s.fg_mask],
            }
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_dataset(path: str) -> list[FeatureSequence]:
    seqs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(lineno, f"invalid JSON ({e.msg})") from None
            try:
                t, d = int(rec["T"]), int(rec["D"])
                feats = np.array(rec["features"], dtype=np.float64).reshape(t, d)
                intervals = [ActionInterval(int(a), int(b), int(c)) for a, b, c in rec["intervals"]]
                mask = np.array(rec["fg_mask"], dtype=np.uint8)
                if mask.shape != (t,):
                    raise ValueError(f"fg_mask length {mask.shape[0]} != T={t}")
                seq = FeatureSequence(str(rec["seq_id"]), feats, intervals, mask)
                seq.validate()
            except DatasetParseError:
                raise
            except (KeyError, ValueError, TypeError) as e:
                raise DatasetParseError(lineno, str(e)) from None
            seqs.append(seq)
    return seqs
