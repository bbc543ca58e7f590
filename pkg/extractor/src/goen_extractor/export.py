"""Feature-file writer and the batched extraction driver.

The writer is a from-scratch implementation of the engine's feature
format (magic GOENFEAT, version 1, little-endian, fixed layout) so the
two packages share only bytes on disk, never code. ID exports carry
labels and logits; OOD exports carry logits only.
"""

from __future__ import annotations

import os
import struct

import numpy as np
import torch

from .model import MultiScaleResNet

MAGIC = b"GOENFEAT"
VERSION = 1
FLAG_LABELS = 1
FLAG_LOGITS = 2
_HEADER = struct.Struct("<8sIIQQI")

FEATURE_MODES = ("projected", "concat640")


class DimensionDrift(RuntimeError):
    """Feature dimension changed between files of one export run."""


def write_feature_file(path: str, features: np.ndarray, num_classes: int,
                       labels: np.ndarray | None = None,
                       logits: np.ndarray | None = None) -> int:
    """Write one feature file; returns the byte count."""
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
        raise ValueError(f"features must be (N>=1, D>=1), got {feats.shape}")
    if not np.isfinite(feats).all():
        raise ValueError("features contain NaN or infinity")
    n, d = feats.shape
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")

    flags = 0
    body = [feats.tobytes()]
    if labels is not None:
        lab = np.ascontiguousarray(labels, dtype="<i4")
        if lab.shape != (n,):
            raise ValueError(f"labels shape {lab.shape} does not match N={n}")
        if lab.min() < 0 or lab.max() >= num_classes:
            raise ValueError(f"labels must lie in [0, {num_classes})")
        flags |= FLAG_LABELS
        body.append(lab.tobytes())
    if logits is not None:
        lg = np.ascontiguousarray(logits, dtype="<f4")
        if lg.shape != (n, num_classes):
            raise ValueError(
                f"logits shape {lg.shape} does not match ({n}, {num_classes})")
        if not np.isfinite(lg).all():
            raise ValueError("logits contain NaN or infinity")
        flags |= FLAG_LOGITS
        body.append(lg.tobytes())

    blob = _HEADER.pack(MAGIC, VERSION, flags, n, d, num_classes) + b"".join(body)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class ExportRun:
    """Writes a family of files, enforcing one feature dimension per run."""

    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.dim: int | None = None
        self.written: list[str] = []

    def write(self, name: str, features: np.ndarray, num_classes: int,
              labels: np.ndarray | None = None,
              logits: np.ndarray | None = None) -> str:
        d = int(np.asarray(features).shape[1])
        if self.dim is None:
            self.dim = d
        elif d != self.dim:
            raise DimensionDrift(
                f"{name}: dimension {d} differs from this run's {self.dim}")
        path = os.path.join(self.out_dir, f"{name}.goenfeat")
        write_feature_file(path, features, num_classes,
                           labels=labels, logits=logits)
        self.written.append(path)
        return path


@torch.no_grad()
def extract_features(model: MultiScaleResNet, data_loader, device: str = "cpu",
                     mode: str = "projected", keep_labels: bool = True):
    """(features, labels, logits) numpy arrays for every batch in order.

    mode picks the exported representation: 'projected' for the
    512-d post-projection vector, 'concat640' for the normalised
    per-tap concatenation. keep_labels=False returns labels=None for
    OOD sets whose loader labels are placeholders.
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"mode must be one of {FEATURE_MODES}, got {mode!r}")
    model.eval()
    model.to(device)
    feats, labs, logits = [], [], []
    for images, batch_labels in data_loader:
        concat, z, batch_logits = model.all_outputs(images.to(device))
        chosen = z if mode == "projected" else concat
        feats.append(chosen.cpu().numpy())
        logits.append(batch_logits.cpu().numpy())
        labs.append(np.asarray(batch_labels))
    features = np.concatenate(feats, axis=0)
    all_logits = np.concatenate(logits, axis=0)
    all_labels = np.concatenate(labs, axis=0) if keep_labels else None
    return features, all_labels, all_logits
