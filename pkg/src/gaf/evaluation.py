"""Detection quality: interpolated average precision over IoU thresholds.

Protocol: per class and threshold, all proposals across sequences are ranked
by score; each is greedily matched to the best still-unmatched ground-truth
interval of its sequence/class at IoU >= threshold. AP integrates the
precision-recall curve with all-point interpolation; mAP averages classes
that have at least one ground-truth instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gaf.data import FeatureSequence
from gaf.detector import DetectionResult, iou

DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)


class AlignmentError(ValueError):
    """Results reference a sequence id absent from the ground truth."""


@dataclass
class EvalReport:
    ap: dict[int, dict[float, float]]  # class -> threshold -> AP
    map: dict[float, float] = field(default_factory=dict)  # threshold -> mAP
    avg_map: float = 0.0

    def to_json(self) -> str:
        obj = {
            "map": {f"{thr:g}": v for thr, v in self.map.items()},
            "avg_map": self.avg_map,
            "ap": {
                f"class_{c}": {f"{thr:g}": v for thr, v in per.items()}
                for c, per in sorted(self.ap.items())
            },
        }
        return json.dumps(obj, indent=2, sort_keys=False)


def _interp_ap(tp: np.ndarray, fp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from per-rank hit/miss indicators."""
    if n_gt == 0:
        return 0.0
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1)
    # envelope: precision at recall r is the max precision at recall >= r
    prec_env = np.concatenate(([0.0], precision, [0.0]))
    rec_pts = np.concatenate(([0.0], recall, [1.0]))
    for i in range(prec_env.size - 2, -1, -1):
        prec_env[i] = max(prec_env[i], prec_env[i + 1])
    ap = 0.0
    for i in range(1, rec_pts.size):
        ap += (rec_pts[i] - rec_pts[i - 1]) * prec_env[i]
    return float(ap)


def evaluate_map(
    results: Sequence[DetectionResult],
    truth: Sequence[FeatureSequence],
    iou_thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    truth_by_id = {s.seq_id: s for s in truth}
    for r in results:
        if r.seq_id not in truth_by_id:
            raise AlignmentError(f"unknown seq_id {r.seq_id!r} in results")

    classes = sorted({iv.class_id for s in truth for iv in s.intervals})
    # flat proposal table: (score, seq_id, start, end, class)
    flat = [
        (p.score, r.seq_id, p.start, p.end, p.class_id)
        for r in results
        for p in r.proposals
    ]

    ap: dict[int, dict[float, float]] = {c: {} for c in classes}
    for c in classes:
        gt_by_seq = {
            sid: [iv for iv in s.intervals if iv.class_id == c]
            for sid, s in truth_by_id.items()
        }
        n_gt = sum(len(v) for v in gt_by_seq.values())
        props = sorted(
            (p for p in flat if p[4] == c),
            key=lambda p: (-p[0], p[1], p[2], p[3]),
        )
        for thr in iou_thresholds:
            matched = {sid: [False] * len(g) for sid, g in gt_by_seq.items()}
            tp = np.zeros(len(props))
            fp = np.zeros(len(props))
            for i, (_, sid, start, end, _) in enumerate(props):
                cands = gt_by_seq[sid]
                best_j, best_iou = -1, thr
                for j, g in enumerate(cands):
                    if matched[sid][j]:
                        continue
                    ov = iou((start, end), g)
                    if ov > best_iou or (ov == best_iou and ov >= thr and best_j == -1):
                        best_j, best_iou = j, ov
                if best_j >= 0:
                    matched[sid][best_j] = True
                    tp[i] = 1.0
                else:
                    fp[i] = 1.0
            ap[c][thr] = _interp_ap(tp, fp, n_gt)

    map_per_thr = {
        thr: float(np.mean([ap[c][thr] for c in classes])) if classes else 0.0
        for thr in iou_thresholds
    }
    avg = float(np.mean(list(map_per_thr.values()))) if map_per_thr else 0.0
    return EvalReport(ap=ap, map=map_per_thr, avg_map=avg)
