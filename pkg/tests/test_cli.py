import json

import pytest

from laslab.harness import cli
from laslab.harness.cli import main
from laslab.training import TrainingDiverged

SMALL_DATA = ["--n-train", "40", "--n-valid", "10", "--n-test", "6", "--speaker-block", "10"]
SMALL_MODEL = ["--encoder-hidden", "8", "--decoder-hidden", "12", "--embed-dim", "8", "--attention-dim", "8",
               "--max-epochs", "2", "--batch-size", "8"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Generated corpus, a two-epoch model and an LM, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), *SMALL_DATA]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "model"), *SMALL_MODEL]) == 0
    assert main(["build-lm", "--data", str(root / "data"), "--out", str(root / "lm")]) == 0
    return root


def decode_args(root, *extra):
    return ["--data", str(root / "data"), "--model", str(root / "model" / "model.lasc"), "--beam", "2", *extra]


def test_pipeline_outputs(workdir, capsys):
    for name in ("stamp.json", "vocab.txt", "train/manifest.tsv", "test/text"):
        assert (workdir / "data" / name).exists()
    assert (workdir / "model" / "model.lasc").exists()
    assert (workdir / "lm" / "lm.arpa").read_text().lstrip().startswith("\\data\\")
    stamp = json.loads((workdir / "model" / "stamp.json").read_text())
    assert stamp["seed"] == 0 and len(stamp["config_hash"]) == 64

    hyp = workdir / "hyp.txt"
    assert main(["decode", *decode_args(workdir, "--out", str(hyp), "--lm", str(workdir / "lm"))]) == 0
    rows = [line.split("\t") for line in hyp.read_text().splitlines()]
    assert len(rows) == 6 and all(len(r) == 4 for r in rows)
    assert (workdir / "hyp.txt.stamp.json").exists()
    capsys.readouterr()
    assert main(["eval", "--ref", str(workdir / "data" / "test" / "text"), "--hyp", str(hyp)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[0] for line in out] == ["CER", "SER", "utterances"]
    assert out[2] == "utterances\t6"


def test_eval_of_reference_against_itself(workdir, capsys):
    ref = str(workdir / "data" / "test" / "text")
    assert main(["eval", "--ref", ref, "--hyp", ref]) == 0
    assert capsys.readouterr().out == "CER\t0.000000\nSER\t0.000000\nutterances\t6\n"


def test_sweep_prints_one_row_per_value(workdir, capsys):
    assert main(["sweep", *decode_args(workdir, "--param", "beam", "--values", "1,2,5,10,30",
                                       "--max-utts", "2")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "# beam\tCER\tSER"
    rows = [line.split("\t") for line in lines[1:]]
    assert [r[0] for r in rows] == ["1", "2", "5", "10", "30"]
    for _, c, s in rows:
        assert float(c) >= 0 and 0 <= float(s) <= 1


def test_config_file_and_override(workdir, tmp_path, capsys):
    (tmp_path / "d.cfg").write_text("beam = 1\nmax_utts = 2\n")
    out = tmp_path / "h.txt"
    assert main(["decode", "--config", str(tmp_path / "d.cfg"), *decode_args(workdir, "--out", str(out))]) == 0
    stamp = json.loads((tmp_path / "h.txt.stamp.json").read_text())
    assert stamp["config"]["beam"] == 2  # command line beats file
    assert stamp["config"]["max_utts"] == 2
    assert len(out.read_text().splitlines()) == 2


def test_output_root_variable(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("LASLAB_OUT", str(tmp_path))
    assert main(["decode", *decode_args(workdir, "--out", "sub/h.txt", "--max-utts", "1")]) == 0
    assert (tmp_path / "sub" / "h.txt").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["decode", "--bogus", "1"],
    ["decode", "--beam", "wide"],
    ["sweep", "--param", "frames"],
])
def test_usage_errors_exit_1(argv, workdir, capsys):
    if argv[:1] == ["sweep"]:
        argv = argv + decode_args(workdir)
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_unknown_config_key_exit_1(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("bean = 3\n")
    assert main(["decode", "--config", str(tmp_path / "c.cfg")]) == 1
    assert "valid keys" in capsys.readouterr().err


def test_data_errors_exit_2(workdir, tmp_path):
    assert main(["decode", "--data", str(workdir / "data"), "--model", str(tmp_path / "none.lasc")]) == 2
    assert main(["eval", "--ref", str(tmp_path / "missing"), "--hyp", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "bad.lasc"
    bad.write_bytes(b"LASC")
    assert main(["decode", *decode_args(workdir, "--model", str(bad))]) == 2


def test_numeric_failure_exit_3(workdir, tmp_path, monkeypatch, capsys):
    def diverge(*args, **kwargs):
        raise TrainingDiverged("non-finite loss at epoch 1; last finite per-char loss was 2.5")

    monkeypatch.setattr(cli, "train_loop", diverge)
    assert main(["train", "--data", str(workdir / "data"), "--out", str(tmp_path / "m"), *SMALL_MODEL]) == 3
    assert "last finite" in capsys.readouterr().err
