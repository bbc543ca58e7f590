#!/usr/bin/env python3
"""Train the three-cue calibration head and watch the scores separate.

The head is a tiny fixed-architecture MLP that maps (distance, cosine,
entropy) cues to a single OOD probability. Training uses soft targets
and keeps the epoch with the widest ID/OOD gap on a holdout.
"""

import numpy as np

from goen import (
    TrainConfig,
    build_cue_matrix,
    fit_gaussian,
    head_forward,
    head_forward_batch,
    make_fixture_suite,
    train_head,
)

suite = make_fixture_suite(seed=11)
model = fit_gaussian(suite["train"])

id_cues = build_cue_matrix(model, suite["val"])
ood_cues = build_cue_matrix(model, suite["hard_calib"])
print(f"cue pools: {id_cues.shape[0]} ID rows, {ood_cues.shape[0]} OOD rows")
print(f"mean ID cue  (m1, m2, m3): {np.round(id_cues.mean(axis=0), 3)}")
print(f"mean OOD cue (m1, m2, m3): {np.round(ood_cues.mean(axis=0), 3)}")

# hold out the tail tenth of each pool for early stopping
k_id, k_ood = id_cues.shape[0] // 10, ood_cues.shape[0] // 10
head, history = train_head(id_cues[k_id:], ood_cues[k_ood:],
                           id_cues[:k_id], ood_cues[:k_ood],
                           TrainConfig(seed=3))

first, last = history.records[0], history.records[-1]
print(f"\nepochs run: {len(history.records)}, kept epoch {history.best_epoch} "
      f"with holdout gap {history.best_gap:.4f}")
print(f"train loss: {first.train_loss:.4f} (epoch 0) -> "
      f"{last.train_loss:.4f} (epoch {last.epoch})")

u_test = head_forward_batch(head, build_cue_matrix(model, suite["test"]))
u_sphere = head_forward_batch(head, build_cue_matrix(model, suite["sphere"]))
u_hard = head_forward_batch(head, build_cue_matrix(model, suite["hard_eval"]))
print(f"\nmean head score  ID test: {u_test.mean():.4f}")
print(f"mean head score  sphere:  {u_sphere.mean():.4f}")
print(f"mean head score  hard:    {u_hard.mean():.4f}")

one = head_forward(head, id_cues[0])
print(f"single-row forward agrees with batch: "
      f"{abs(one - head_forward_batch(head, id_cues[:1])[0]) < 1e-15}")
