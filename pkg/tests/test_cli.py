"""Exit codes, option precedence, and the output contract of every subcommand."""

import json
import os
import struct

import numpy as np
import pytest

from goen import FeatureSet, save_feature_file
from goen.cli import main
from goen.synthetic import make_fixture_suite

HEADER = struct.Struct("<8sIIQQI")


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """A small synthetic suite on disk, shared by the command tests."""
    out = tmp_path_factory.mktemp("fixtures")
    suite = make_fixture_suite(seed=42, n_train_per_class=60,
                               n_eval_per_class=60, n_hard_calib=200,
                               n_hard_eval=200, n_sphere=200)
    paths = {}
    for key, fs in suite.items():
        paths[key] = str(out / f"{key}.goenfeat")
        save_feature_file(fs, paths[key])
    return paths


def data_flags(paths, *, ood=("sphere", "hard_eval")):
    flags = ["--train", paths["train"], "--val", paths["val"],
             "--test", paths["test"], "--hard-calib", paths["hard_calib"]]
    for key in ood:
        flags += ["--ood", paths[key]]
    return flags


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def test_fit_writes_model(fixture_dir, tmp_path, capsys):
    model_path = str(tmp_path / "model.goenmodl")
    code = main(["fit", "--train", fixture_dir["train"],
                 "--model-out", model_path])
    assert code == 0
    assert os.path.exists(model_path)
    out = capsys.readouterr().out
    assert "classes: 5" in out
    assert "condition number" in out


def test_fit_without_labels_exits_2(fixture_dir, tmp_path, capsys):
    code = main(["fit", "--train", fixture_dir["sphere"],
                 "--model-out", str(tmp_path / "m.goenmodl")])
    assert code == 2
    assert "labels" in capsys.readouterr().err


def test_fit_rejects_zero_epsilon(fixture_dir, tmp_path, capsys):
    code = main(["fit", "--train", fixture_dir["train"],
                 "--model-out", str(tmp_path / "m.goenmodl"),
                 "--epsilon", "0"])
    assert code == 2
    assert "epsilon" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# calibrate and score
# ---------------------------------------------------------------------------

def test_calibrate_then_score(fixture_dir, tmp_path, capsys):
    model_path = str(tmp_path / "model.goenmodl")
    head_path = str(tmp_path / "head.goenhead")
    assert main(["fit", "--train", fixture_dir["train"],
                 "--model-out", model_path]) == 0
    code = main(["calibrate", "--model", model_path, "--head-out", head_path,
                 "--val", fixture_dir["val"],
                 "--hard-calib", fixture_dir["hard_calib"], "--seed", "7"])
    assert code == 0
    assert os.path.exists(head_path)
    capsys.readouterr()

    scores_path = str(tmp_path / "scores.txt")
    code = main(["score", "--model", model_path, "--head", head_path,
                 "--features", fixture_dir["test"], "--out", scores_path])
    assert code == 0
    with open(scores_path) as fh:
        values = [float(line) for line in fh]
    assert len(values) == 300
    assert all(0.0 <= v <= 1.0 for v in values)

    # stdout route prints the same scores
    capsys.readouterr()
    assert main(["score", "--model", model_path, "--head", head_path,
                 "--features", fixture_dir["test"]]) == 0
    printed = [float(line) for line in capsys.readouterr().out.splitlines()]
    assert printed == values


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_report_and_table(fixture_dir, tmp_path, capsys):
    out_dir = str(tmp_path / "reports")
    code = main(["eval", *data_flags(fixture_dir), "--out-dir", out_dir,
                 "--seed", "42"])
    assert code == 0
    table = capsys.readouterr().out
    for label in ("ID Acc", "sphere AUROC", "hard_eval AUROC", "Avg OOD AUROC"):
        assert label in table
    with open(os.path.join(out_dir, "report.json")) as fh:
        report = json.load(fh)
    assert "average_auroc" in report
    assert report["average_auroc"] is not None
    assert os.path.exists(os.path.join(out_dir, "report.txt"))


def test_eval_json_flag_prints_json(fixture_dir, tmp_path, capsys):
    code = main(["eval", *data_flags(fixture_dir, ood=("sphere",)),
                 "--out-dir", str(tmp_path / "r"), "--json"])
    assert code == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["variant"] == "goen"


def test_eval_leakage_exits_3(fixture_dir, tmp_path, capsys):
    code = main(["eval", "--train", fixture_dir["train"],
                 "--val", fixture_dir["val"], "--test", fixture_dir["test"],
                 "--hard-calib", fixture_dir["hard_eval"],
                 "--ood", fixture_dir["hard_eval"],
                 "--out-dir", str(tmp_path / "r")])
    assert code == 3
    assert "calibration and evaluation" in capsys.readouterr().err


def test_eval_missing_train_exits_2(fixture_dir, tmp_path, capsys):
    code = main(["eval", "--val", fixture_dir["val"],
                 "--test", fixture_dir["test"],
                 "--out-dir", str(tmp_path / "r")])
    assert code == 2
    assert "train" in capsys.readouterr().err


def test_eval_baselines_add_columns(fixture_dir, tmp_path, capsys):
    code = main(["eval", *data_flags(fixture_dir, ood=("sphere",)),
                 "--baselines", "--rules", "max_softmax,energy",
                 "--out-dir", str(tmp_path / "r"), "--knn-k", "10"])
    assert code == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert "goen" in header
    assert "max_softmax" in header
    assert "energy" in header


def test_eval_nonfinite_file_exits_4(fixture_dir, tmp_path, capsys):
    # a feature payload with a NaN never comes out of the writer, so the
    # file is forged byte by byte
    bad = tmp_path / "bad.goenfeat"
    payload = struct.pack("<4f", 1.0, float("nan"), 0.5, 0.25)
    bad.write_bytes(HEADER.pack(b"GOENFEAT", 1, 0, 2, 2, 1) + payload)
    code = main(["eval", "--train", str(bad), "--val", fixture_dir["val"],
                 "--test", fixture_dir["test"],
                 "--out-dir", str(tmp_path / "r")])
    assert code == 4
    assert "NaN" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# ablate and seeds
# ---------------------------------------------------------------------------

def test_ablate_default_variants(fixture_dir, tmp_path, capsys):
    out_dir = str(tmp_path / "reports")
    code = main(["ablate", *data_flags(fixture_dir, ood=("sphere",)),
                 "--out-dir", out_dir])
    assert code == 0
    header = capsys.readouterr().out.splitlines()[0]
    for name in ("default", "noise-only", "compact-0.9"):
        assert name in header
    assert os.path.exists(os.path.join(out_dir, "ablation.json"))


def test_ablate_explicit_variants(fixture_dir, tmp_path, capsys):
    code = main(["ablate", *data_flags(fixture_dir, ood=("sphere",)),
                 "--variant", "plain", "--variant", "mixed:hard=false,alpha=0.5",
                 "--out-dir", str(tmp_path / "r"), "--json"])
    assert code == 0
    parsed = json.loads(capsys.readouterr().out)
    assert [r["variant"] for r in parsed["reports"]] == ["plain", "mixed"]


def test_ablate_bad_variant_spec_exits_2(fixture_dir, tmp_path, capsys):
    code = main(["ablate", *data_flags(fixture_dir, ood=("sphere",)),
                 "--variant", "broken:alpha", "--out-dir", str(tmp_path / "r")])
    assert code == 2


def test_seeds_table(fixture_dir, tmp_path, capsys):
    out_dir = str(tmp_path / "reports")
    code = main(["seeds", *data_flags(fixture_dir, ood=("sphere",)),
                 "--seeds", "42,123", "--out-dir", out_dir])
    assert code == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "seeds: 42, 123"
    with open(os.path.join(out_dir, "seeds.json")) as fh:
        assert json.load(fh)["seeds"] == [42, 123]


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def test_inspect_dispatches_on_magic(fixture_dir, tmp_path, capsys):
    model_path = str(tmp_path / "model.goenmodl")
    head_path = str(tmp_path / "head.goenhead")
    main(["fit", "--train", fixture_dir["train"], "--model-out", model_path])
    main(["calibrate", "--model", model_path, "--head-out", head_path,
          "--val", fixture_dir["val"], "--hard-calib",
          fixture_dir["hard_calib"]])
    capsys.readouterr()

    assert main(["inspect", fixture_dir["train"]]) == 0
    out = capsys.readouterr().out
    assert "feature set" in out and "rows: 300" in out

    assert main(["inspect", model_path]) == 0
    assert "gaussian model" in capsys.readouterr().out

    assert main(["inspect", head_path]) == 0
    out = capsys.readouterr().out
    assert "calibration head" in out and "parameters: 2369" in out


def test_inspect_unknown_magic_exits_2(tmp_path, capsys):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"GARBAGE!" + bytes(64))
    assert main(["inspect", str(junk)]) == 2
    assert "magic" in capsys.readouterr().err


def test_inspect_missing_file_exits_2(tmp_path, capsys):
    assert main(["inspect", str(tmp_path / "nope.goenfeat")]) == 2


# ---------------------------------------------------------------------------
# verify-theory
# ---------------------------------------------------------------------------

def test_verify_theory_all_pass(capsys):
    assert main(["verify-theory"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    assert all(line.startswith("PASS") for line in lines)


def test_verify_theory_alias_selects_one(capsys):
    assert main(["verify-theory", "--only", "lemma-a2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("PASS conditioning")


def test_verify_theory_unknown_check_exits_2(capsys):
    assert main(["verify-theory", "--only", "lemma-a9"]) == 2


def test_verify_theory_tampered_tolerance_fails(capsys):
    # an unreachable tau bound must flip the verdict and print the statistic
    assert main(["verify-theory", "--only", "theorem-a3",
                 "--tau-min", "1.01"]) == 1
    line = capsys.readouterr().out.strip()
    assert line.startswith("FAIL score-density-agreement")
    assert "kendall tau 0." in line


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def test_synth_writes_suite_and_config(tmp_path, capsys):
    out_dir = str(tmp_path / "suite")
    code = main(["synth", "--out-dir", out_dir, "--seed", "7",
                 "--n-train", "20", "--n-eval", "20", "--n-hard", "50",
                 "--n-sphere", "50"])
    assert code == 0
    names = sorted(os.listdir(out_dir))
    assert names == ["goen.json", "hard_calib.goenfeat", "hard_eval.goenfeat",
                     "sphere.goenfeat", "test.goenfeat", "train.goenfeat",
                     "val.goenfeat"]
    with open(os.path.join(out_dir, "goen.json")) as fh:
        config = json.load(fh)
    for key in ("train", "val", "test", "hard_calib"):
        assert os.path.exists(config[key])
    assert len(config["ood_eval"]) == 2


def test_synth_config_feeds_eval(tmp_path, capsys):
    out_dir = str(tmp_path / "suite")
    main(["synth", "--out-dir", out_dir, "--n-train", "40", "--n-eval", "40",
          "--n-hard", "100", "--n-sphere", "100"])
    capsys.readouterr()
    code = main(["eval", "--config", os.path.join(out_dir, "goen.json"),
                 "--out-dir", str(tmp_path / "r")])
    assert code == 0
    assert "Avg OOD AUROC" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# option precedence
# ---------------------------------------------------------------------------

def test_output_dir_precedence(fixture_dir, tmp_path, capsys, monkeypatch):
    config_dir = str(tmp_path / "from_config")
    env_dir = str(tmp_path / "from_env")
    flag_dir = str(tmp_path / "from_flag")
    config_path = str(tmp_path / "cfg.json")
    with open(config_path, "w") as fh:
        json.dump({"output_dir": config_dir}, fh)
    flags = ["eval", *data_flags(fixture_dir, ood=("sphere",)),
             "--config", config_path]

    assert main(flags) == 0
    assert os.path.exists(os.path.join(config_dir, "report.json"))

    monkeypatch.setenv("GOEN_OUTPUT_DIR", env_dir)
    assert main(flags) == 0
    assert os.path.exists(os.path.join(env_dir, "report.json"))

    assert main(flags + ["--out-dir", flag_dir]) == 0
    assert os.path.exists(os.path.join(flag_dir, "report.json"))
    capsys.readouterr()


def test_config_seed_overridden_by_flag(fixture_dir, tmp_path, capsys):
    config_path = str(tmp_path / "cfg.json")
    with open(config_path, "w") as fh:
        json.dump({"seed": 1}, fh)
    code = main(["eval", *data_flags(fixture_dir, ood=("sphere",)),
                 "--config", config_path, "--seed", "9",
                 "--out-dir", str(tmp_path / "r"), "--json"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 9


def test_unknown_config_key_exits_2(fixture_dir, tmp_path, capsys):
    config_path = str(tmp_path / "cfg.json")
    with open(config_path, "w") as fh:
        json.dump({"learning_rte": 0.1}, fh)
    code = main(["eval", *data_flags(fixture_dir, ood=("sphere",)),
                 "--config", config_path, "--out-dir", str(tmp_path / "r")])
    assert code == 2
    assert "learning_rte" in capsys.readouterr().err


def test_example_config_is_loadable():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    path = os.path.join(here, "config", "goen.example.json")
    with open(path) as fh:
        config = json.load(fh)
    from goen.cli import CONFIG_DEFAULTS
    assert set(config) <= set(CONFIG_DEFAULTS)
    assert config["epsilon"] == 1e-5
    assert config["seeds"] == [42, 123, 2024, 777, 314]
