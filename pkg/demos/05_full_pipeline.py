#!/usr/bin/env python3
"""End-to-end runs: one evaluation, an ablation sweep, a seed study.

Everything here happens in memory on generated fixtures. The file-driven
twin of this flow is the command line (fit / calibrate / eval / ablate /
seeds on .goenfeat inputs).
"""

from goen import (
    AblationVariant,
    LoadedSets,
    PipelineConfig,
    TrainConfig,
    make_fixture_suite,
    render_seed_table,
    render_table,
    run_ablation,
    run_goen_sets,
    run_seeds,
)

suite = make_fixture_suite(seed=42)
sets = LoadedSets(train=suite["train"], val=suite["val"], test=suite["test"],
                  eval_ood=(suite["sphere"], suite["hard_eval"]),
                  hard_calib=suite["hard_calib"])
cfg = PipelineConfig(train_path="", val_path="", test_path="",
                     train_cfg=TrainConfig(seed=42))

report = run_goen_sets(cfg, sets)
print(render_table([report]))

# ablation: drop the hard calibration pool, then crush feature spread
variants = [
    AblationVariant("default"),
    AblationVariant("noise-only", use_hard_ood=False),
    AblationVariant("compact-0.9", compact_alpha=0.9),
]
print(render_table(run_ablation(cfg, variants, sets=sets)))

# rerun the whole flow under different seeds; spread should be tiny
summary = run_seeds(cfg, [42, 123, 2024], sets=sets)
print(render_seed_table(summary))
