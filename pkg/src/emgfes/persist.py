"""Deterministic binary serialization for trained models.

Format: magic, version, model kind, then a sorted-key JSON manifest
(scalars plus array shapes/dtypes in order) followed by the raw
little-endian array bytes, each length-prefixed. The byte stream is a pure
function of the model contents, so its SHA-256 works as the model identity
recorded in session log headers.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .gbdt import GbdtModel, GbdtParams, Tree
from .labels import Movement
from .lda import LdaModel

MODEL_MAGIC = b"EMGM"
MODEL_VERSION = 1
KIND_LDA = 1
KIND_GBDT = 2


class ModelFormatError(Exception):
    pass


def _write_array(out: BinaryIO, arr: np.ndarray, dtype: str) -> dict:
    data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    out.write(struct.pack("<Q", len(data)))
    out.write(data)
    return {"shape": list(arr.shape), "dtype": dtype}


def _read_array(buf: BinaryIO, meta: dict) -> np.ndarray:
    (length,) = struct.unpack("<Q", buf.read(8))
    raw = buf.read(length)
    if len(raw) < length:
        raise ModelFormatError("truncated array data")
    return np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()


def _model_arrays(model: LdaModel | GbdtModel) -> dict[str, tuple[np.ndarray, str]]:
    """Name -> (array, wire dtype). Arrays are written and read back in
    sorted name order so the manifest and the byte stream always agree."""
    if isinstance(model, LdaModel):
        return {
            "class_means": (model.class_means, "<f8"),
            "shared_cov_inv": (model.shared_cov_inv, "<f8"),
            "priors": (model.priors, "<f8"),
            "projection": (model.projection, "<f8"),
        }
    return {
        "bin_lo": (model.bin_lo, "<f8"),
        "bin_width": (model.bin_width, "<f8"),
        "n_nodes": (np.array([t.n_nodes for t in model.trees], dtype=np.int64), "<i8"),
        "feature": (np.concatenate([t.feature for t in model.trees]), "<i4"),
        "threshold_bin": (np.concatenate([t.threshold_bin for t in model.trees]), "<i4"),
        "left": (np.concatenate([t.left for t in model.trees]), "<i4"),
        "right": (np.concatenate([t.right for t in model.trees]), "<i4"),
        "value": (np.concatenate([t.value for t in model.trees]), "<f8"),
    }


def model_kind(model: LdaModel | GbdtModel) -> str:
    if isinstance(model, LdaModel):
        return "lda"
    if isinstance(model, GbdtModel):
        return "gbdt"
    raise ModelFormatError(f"unsupported model type {type(model).__name__}")


def model_bytes(model: LdaModel | GbdtModel) -> bytes:
    if isinstance(model, LdaModel):
        kind = KIND_LDA
        manifest = {
            "classes": [int(c) for c in model.classes],
            "shrinkage": model.shrinkage,
        }
    elif isinstance(model, GbdtModel):
        kind = KIND_GBDT
        manifest = {
            "classes": [int(c) for c in model.classes],
            "params": {
                "iterations": model.params.iterations,
                "max_depth": model.params.max_depth,
                "learning_rate": model.params.learning_rate,
                "l2_leaf_reg": model.params.l2_leaf_reg,
                "n_bins": model.params.n_bins,
            },
            "train_losses": list(model.train_losses),
        }
    else:
        raise ModelFormatError(f"unsupported model type {type(model).__name__}")

    arrays = io.BytesIO()
    specs = _model_arrays(model)
    manifest["arrays"] = {
        name: _write_array(arrays, arr, dtype)
        for name, (arr, dtype) in sorted(specs.items())
    }

    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    out.write(struct.pack("<IBI", MODEL_VERSION, kind, len(blob)))
    out.write(blob)
    out.write(arrays.getvalue())
    return out.getvalue()


def model_hash(model: LdaModel | GbdtModel) -> str:
    return hashlib.sha256(model_bytes(model)).hexdigest()


def save_model(model: LdaModel | GbdtModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path: str | Path) -> LdaModel | GbdtModel:
    return parse_model(Path(path).read_bytes())


def save_calibration(cal, path: str | Path) -> None:
    """Write a labeled calibration recording as an npz archive."""
    with open(path, "wb") as fh:  # keep the exact path, no .npz suffixing
        np.savez(
            fh,
            features=cal.features,
            labels=cal.labels,
            classes=np.array([int(c) for c in cal.classes], dtype=np.int64),
            seg_movement=np.array([int(s.movement) for s in cal.segments], dtype=np.int64),
            seg_start=np.array([s.start for s in cal.segments], dtype=np.int64),
            seg_end=np.array([s.end for s in cal.segments], dtype=np.int64),
        )


def load_calibration(path: str | Path):
    from .calibration import CalibrationSet, Segment

    try:
        with np.load(path) as z:
            return CalibrationSet(
                features=z["features"],
                labels=z["labels"],
                classes=tuple(Movement(int(c)) for c in z["classes"]),
                segments=tuple(
                    Segment(Movement(int(m)), int(a), int(b))
                    for m, a, b in zip(z["seg_movement"], z["seg_start"], z["seg_end"])
                ),
            )
    except (KeyError, ValueError, OSError) as e:
        raise ModelFormatError(f"not a calibration file: {e}") from e


def parse_model(data: bytes) -> LdaModel | GbdtModel:
    buf = io.BytesIO(data)
    if buf.read(4) != MODEL_MAGIC:
        raise ModelFormatError("bad magic")
    version, kind, mlen = struct.unpack("<IBI", buf.read(9))
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    try:
        manifest = json.loads(buf.read(mlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"bad manifest: {exc}") from exc
    classes = tuple(Movement(c) for c in manifest["classes"])
    arrays = {
        name: _read_array(buf, manifest["arrays"][name])
        for name in sorted(manifest["arrays"])
    }

    if kind == KIND_LDA:
        return LdaModel(
            classes=classes,
            class_means=arrays["class_means"],
            shared_cov_inv=arrays["shared_cov_inv"],
            priors=arrays["priors"],
            projection=arrays["projection"],
            shrinkage=manifest["shrinkage"],
        )
    if kind == KIND_GBDT:
        trees = []
        offset = 0
        for n in arrays["n_nodes"]:
            n = int(n)
            sl = slice(offset, offset + n)
            trees.append(
                Tree(
                    feature=arrays["feature"][sl],
                    threshold_bin=arrays["threshold_bin"][sl],
                    left=arrays["left"][sl],
                    right=arrays["right"][sl],
                    value=arrays["value"][sl],
                )
            )
            offset += n
        return GbdtModel(
            classes=classes,
            params=GbdtParams(**manifest["params"]),
            bin_lo=arrays["bin_lo"],
            bin_width=arrays["bin_width"],
            trees=tuple(trees),
            train_losses=tuple(manifest["train_losses"]),
        )
    raise ModelFormatError(f"unknown model kind {kind}")
