"""Cross-package checks: files and seeds must agree with the engine.

The engine is a separate install; everything here skips cleanly when it
is absent. No code is shared between the packages, so these tests are
the contract.
"""

import numpy as np
import pytest
import torch
from torch.utils.data import DataLoader, TensorDataset

import goen_extractor as gx

goen = pytest.importorskip("goen")


def test_prng_sequences_agree():
    ours = gx.Xorshift64Star(5)
    theirs = goen.Xorshift64Star(5)
    assert [ours.next_u64() for _ in range(50)] == \
           [theirs.next_u64() for _ in range(50)]


def test_shuffle_convention_agrees():
    ours = list(range(40))
    gx.Xorshift64Star(9).shuffle(ours)
    theirs = list(range(40))
    goen.Xorshift64Star(9).shuffle(theirs)
    assert ours == theirs


def test_written_file_loads_in_engine(tmp_path):
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(20, 6)).astype(np.float32)
    labels = (np.arange(20) % 4).astype(np.int32)
    logits = rng.normal(size=(20, 4)).astype(np.float32)
    path = str(tmp_path / "bridge.goenfeat")
    gx.write_feature_file(path, feats, 4, labels=labels, logits=logits)

    back = goen.load_feature_file(path)
    assert back.name == "bridge"
    assert back.num_classes == 4
    assert np.array_equal(back.features, feats)
    assert np.array_equal(back.labels, labels)
    assert np.array_equal(back.logits, logits)


def test_byte_identical_to_engine_writer(tmp_path):
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(9, 3)).astype(np.float32)
    labels = (np.arange(9) % 2).astype(np.int32)
    ours = str(tmp_path / "ours.goenfeat")
    theirs = str(tmp_path / "theirs.goenfeat")
    gx.write_feature_file(ours, feats, 2, labels=labels)
    goen.save_feature_file(
        goen.FeatureSet(features=feats, num_classes=2, labels=labels), theirs)
    assert open(ours, "rb").read() == open(theirs, "rb").read()


def test_smoke_export_feeds_engine(tmp_path):
    # 100-sample round trip: extract from an untrained backbone, write,
    # then fit and score inside the engine
    torch.manual_seed(0)
    model = gx.MultiScaleResNet(num_classes=10)
    model.eval()
    images = torch.randn(100, 3, 32, 32)
    labels = torch.arange(100) % 10
    tiny = DataLoader(TensorDataset(images, labels), batch_size=32)

    feats, labs, logits = gx.extract_features(model, tiny)
    run = gx.ExportRun(str(tmp_path))
    path = run.write("smoke_train", feats, 10,
                     labels=labs.astype(np.int32), logits=logits)

    train = goen.load_feature_file(path)
    fitted = goen.fit_gaussian(train)
    assert fitted.num_classes == 10 and fitted.dim == 512
    scores = goen.min_mahalanobis_rows(fitted, goen.normalize_rows(
        train.features.astype(np.float64)))
    assert scores.shape == (100,) and np.isfinite(scores).all()
