#!/usr/bin/env python3
"""Feature files: build a labeled set, write it, read it back, split it.

The on-disk format is little-endian and fixed-layout, so a file written
here is readable from any language with a struct reader. Run from the
repository root:

    python3 demos/01_feature_files.py
"""

import os
import tempfile

import numpy as np

from goen import FeatureSet, SplitSpec, file_size, load_feature_file, save_feature_file, split

rng = np.random.default_rng(0)

feats = rng.normal(size=(12, 4))
labels = np.repeat(np.arange(3, dtype=np.int32), 4)
logits = rng.normal(size=(12, 3))
dataset = FeatureSet(features=feats, num_classes=3, labels=labels,
                     logits=logits, name="demo")

print(f"rows: {dataset.n}, dim: {dataset.dim}, classes: {dataset.num_classes}")

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "demo.goenfeat")
    save_feature_file(dataset, path)
    print(f"written: {os.path.getsize(path)} bytes "
          f"(header 36 + features {12 * 4 * 4} + labels {12 * 4} "
          f"+ logits {12 * 3 * 4})")
    print(f"file_size() predicts: "
          f"{file_size(dataset.n, dataset.dim, dataset.num_classes, True, True)}")

    back = load_feature_file(path)
    same = (np.array_equal(back.features, dataset.features.astype(np.float32))
            and np.array_equal(back.labels, dataset.labels))
    print(f"round trip exact at f32: {same}")

    # a seeded split is deterministic and exhaustive
    train, val = split(back, SplitSpec(seed=42, fractions=(0.75, 0.25),
                                       names=("train", "val")))
    print(f"split: {train.n} train + {val.n} val rows, "
          f"names {train.name!r} / {val.name!r}")
