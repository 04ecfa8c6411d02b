"""Checkpoint serialization and parameter checksums.

Format: a single JSON object with a "version" field plus one entry per
parameter path -> {"shape": [...], "values": [row-major floats]}. Floats
round-trip exactly through JSON (shortest-repr), so identical parameters
produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Iterable

import numpy as np

from gaf.cvae import CvaeModel
from gaf.detector import DetectorModel
from gaf.segment import SegmentModel
from gaf.tensor import Tensor

VERSION = "gaf-ckpt-1"


class CheckpointVersionError(ValueError):
    """File carries an unknown or missing version tag."""


class CheckpointFormatError(ValueError):
    """File structure does not describe the expected models."""


def param_checksum(named_params: Iterable[tuple[str, Tensor]]) -> str:
    """Order-independent digest of parameter values (paths sorted)."""
    h = hashlib.sha256()
    for name, p in sorted(named_params, key=lambda kv: kv[0]):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path: str, named_params: Iterable[tuple[str, Tensor]]) -> None:
    obj: dict = {"version": VERSION}
    for name, p in named_params:
        obj[name] = {
            "shape": list(p.data.shape),
            "values": [float(v) for v in p.data.reshape(-1)],
        }
    _atomic_write(path, json.dumps(obj, separators=(",", ":")))


def load_raw(path: str) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    version = obj.pop("version", None)
    if version != VERSION:
        raise CheckpointVersionError(f"expected version {VERSION!r}, found {version!r}")
    out = {}
    for name, entry in obj.items():
        try:
            arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointFormatError(f"bad entry for {name!r}: {e}") from None
        out[name] = arr
    return out


def restore(named_params: Iterable[tuple[str, Tensor]], state: dict[str, np.ndarray]) -> None:
    """Overwrite parameters in place; the key sets must match exactly."""
    params = dict(named_params)
    missing = params.keys() - state.keys()
    extra = state.keys() - params.keys()
    if missing or extra:
        raise CheckpointFormatError(f"missing={sorted(missing)} extra={sorted(extra)}")
    for name, p in params.items():
        if state[name].shape != p.data.shape:
            raise CheckpointFormatError(
                f"{name}: shape {state[name].shape} != expected {p.data.shape}"
            )
        p.data = state[name].copy()


def save_models(path: str, frame: CvaeModel, seg: SegmentModel, det: DetectorModel) -> None:
    save(path, list(frame.named_params()) + list(seg.named_params()) + list(det.named_params()))


def load_models(path: str) -> tuple[CvaeModel, SegmentModel, DetectorModel]:
    """Rebuild the three models from a checkpoint alone, inferring sizes
    from parameter shapes."""
    state = load_raw(path)
    try:
        D, d_reduce = state["frame.theta_reduce.w"].shape
        h_enc = state["frame.enc_fc.w"].shape[1]
        d_z = state["frame.enc_mu.w"].shape[1]
        h_dec = state["frame.dec_fc.w"].shape[1]
        h_att = state["segment.att1.w"].shape[2]
        K = state["detector.clf_head.w"].shape[1] - 1
    except KeyError as e:
        raise CheckpointFormatError(f"checkpoint lacks required parameter {e}") from None
    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    frame = CvaeModel(D, rng, d_z=d_z, d_reduce=d_reduce, h_enc=h_enc, h_dec=h_dec)
    seg = SegmentModel(D, rng, h_att=h_att)
    det = DetectorModel(D, K, rng)
    restore(
        list(frame.named_params()) + list(seg.named_params()) + list(det.named_params()),
        state,
    )
    return frame, seg, det
