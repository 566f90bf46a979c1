import json
import subprocess
import sys

import pytest
import yaml

from fewshot_nlg.cli import INSPECT_HEADER, OUTPUT_ROOT_ENV, main, parse_run_config
from fewshot_nlg.selftrain import ConfigError

CONFIG = {
    "selftrain": {
        "iterations": 2, "M": 3, "R": 2, "warmup_epochs": 30, "epochs_per_iteration": 1, "eval_k": 2,
        "max_len": 25, "model": {"embed_dim": 16, "hidden_dim": 32},
    },
    "toy": {"n_train": 20, "n_dev": 10, "n_test": 10, "n_unlabeled": 30},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(CONFIG))
    return path


def lines(text):
    return [l for l in text.splitlines() if l and not l.startswith("#")]


def test_synth_writes_split_files(tmp_path, config_file, capsys):
    assert main(["--seed", "3", "synth", "--config", str(config_file), "--out", str(tmp_path / "data")]) == 0
    out = lines(capsys.readouterr().out)
    assert out[0] == "split\tsize"
    assert "train\t20" in out and "unlabeled\t30" in out
    for name in ("train.txt", "dev.txt", "test.txt", "unlabeled.txt"):
        assert (tmp_path / "data" / name).exists()


def test_synth_is_deterministic(tmp_path, config_file):
    for name in ("a", "b"):
        main(["--seed", "5", "synth", "--config", str(config_file), "--out", str(tmp_path / name)])
    for f in ("train.txt", "unlabeled.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_output_root_from_environment(tmp_path, config_file, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert main(["--seed", "2", "synth", "--config", str(config_file)]) == 0
    assert (tmp_path / "root" / "synth-seed2" / "train.txt").exists()


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "run.json"
    cfg.write_text(json.dumps(CONFIG))
    assert main(["--seed", "1", "synth", "--config", str(cfg), "--out", str(base / "data")]) == 0
    assert main(["--seed", "1", "selftrain", "--config", str(cfg), "--out", str(base / "run")]) == 0
    return base, cfg


def test_selftrain_outputs(trained_run):
    base, _ = trained_run
    report = json.loads((base / "run" / "report.json").read_text())
    assert len(report["iterations"]) == 2
    assert (base / "run" / "best.npz").exists()


def test_train_is_warmup_only(trained_run, capsys):
    base, cfg = trained_run
    assert main(["--seed", "1", "train", "--config", str(cfg), "--out", str(base / "warm")]) == 0
    assert lines(capsys.readouterr().out)[0] == "split\tbleu\terr\tn_mrs\tn_slots"
    assert (base / "warm" / "warmup" / "checkpoint.npz").exists()
    assert not list((base / "warm").glob("iter_*"))
    run_ckpt = (base / "run" / "warmup" / "checkpoint.npz").read_bytes()
    assert (base / "warm" / "warmup" / "checkpoint.npz").read_bytes() == run_ckpt


def test_eval_checkpoint_and_predictions(trained_run, tmp_path, capsys):
    base, _ = trained_run
    test = str(base / "data" / "test.txt")
    preds = tmp_path / "preds.txt"
    assert main(["eval", "--test", test, "--checkpoint", str(base / "run" / "best.npz"), "--k", "2", "--output", str(preds)]) == 0
    first = capsys.readouterr().out
    assert first.startswith("# source:")
    assert main(["eval", "--test", test, "--predictions", str(preds)]) == 0
    second = capsys.readouterr().out
    assert lines(first)[1] == lines(second)[1]


def test_eval_gold_predictions_score_perfectly(trained_run, capsys):
    base, _ = trained_run
    test = str(base / "data" / "test.txt")
    assert main(["eval", "--test", test, "--predictions", test]) == 0
    bleu, err, _, _ = lines(capsys.readouterr().out)[1].split("\t")
    assert float(bleu) == pytest.approx(100.0) and float(err) == 0.0


def test_eval_requires_a_source(trained_run, capsys):
    base, _ = trained_run
    assert main(["eval", "--test", str(base / "data" / "test.txt")]) == 1
    assert "error [eval/load-checkpoint]" in capsys.readouterr().err


def test_inspect_table(trained_run, capsys):
    base, _ = trained_run
    args = ["--seed", "4", "inspect", "--checkpoint", str(base / "run" / "best.npz"),
            "--unlabeled", str(base / "data" / "unlabeled.txt"), "--gold", str(base / "data" / "train.txt"), "--M", "3"]
    assert main(args + ["--verbose"]) == 0
    out = capsys.readouterr().out
    comments = [l for l in out.splitlines() if l.startswith("#")]
    assert [c.split("\t")[0] for c in comments] == ["# mu_a", "# mean_threshold", "# var_threshold"]
    table = lines(out)
    assert tuple(table[0].split("\t")) == INSPECT_HEADER + ("raw_log_samples",)
    assert len(table) == 31
    assert all(len(r.split("\t")[-1].split()) == 3 for r in table[1:])
    assert main(args) == 0
    assert lines(capsys.readouterr().out)[1:] == [r.rsplit("\t", 1)[0] for r in table[1:]]


def test_augment_writes_artifacts(trained_run, tmp_path, capsys):
    base, cfg = trained_run
    out = tmp_path / "aug"
    assert main(["--seed", "1", "augment", "--config", str(cfg), "--checkpoint", str(base / "run" / "best.npz"), "--out", str(out)]) == 0
    n_aug, n_sel, n_pseudo = map(int, lines(capsys.readouterr().out)[1].split("\t"))
    assert n_aug == 30 and n_pseudo <= n_sel <= n_aug
    for name in ("augmented.txt", "selection.tsv", "pseudo.txt", "pseudo_provenance.tsv"):
        assert (out / name).exists()


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"selftrain": {"iterations": 1, "learning_rate": 1}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "error [synth/config]" in err and "learning_rate" in err


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.yaml")]) == 1
    assert "not found" in capsys.readouterr().err


def test_malformed_training_file_names_the_line(tmp_path, capsys):
    train = tmp_path / "train.txt"
    train.write_text("inform ( a = b ) & b .\ninform ( a = \n")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"data": {"train": str(train)}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "error [train/load-data]" in err and "2" in err


def test_parse_run_config_rules():
    assert parse_run_config(None).toy is None
    with pytest.raises(ConfigError, match="not both"):
        parse_run_config({"data": {"train": "t"}, "toy": {}})
    with pytest.raises(ConfigError, match="unknown"):
        parse_run_config({"toy": {"n_rows": 3}})
    with pytest.raises(ConfigError):
        parse_run_config({"selftrain": {"M": 1}})


def test_invalid_strategy_rejected_by_argparse():
    with pytest.raises(SystemExit) as info:
        main(["selftrain", "--strategy", "median"])
    assert info.value.code == 2


def test_installed_script_runs(tmp_path, config_file):
    proc = subprocess.run(
        [sys.executable, "-m", "fewshot_nlg.cli", "synth", "--config", str(config_file), "--out", str(tmp_path / "d")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("split\tsize")
