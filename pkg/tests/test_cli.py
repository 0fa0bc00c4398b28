import subprocess
import sys

import pytest

from scopeseg import cli

SMALL = [
    "--synth.height=16",
    "--synth.width=16",
    "--synth.count=6",
    "--epochs=1",
    "--pretrain_epochs=1",
    "--n_train=3",
    "--n_test=2",
    "--batch_accum=2",
]


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.run(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for code in range(2, 8):
        assert f"  {code}  " in out
    assert "SCOPE_THREADS" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "scopeseg", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout


def test_full_cli_flow(tmp_path, capsys):
    data, run = tmp_path / "data", tmp_path / "run"
    common = SMALL + [f"--dataset={data}", f"--output={run}"]
    assert cli.run(["synth", *common]) == 0
    assert cli.run(["train", *common]) == 0
    assert (run / "model.scope").is_file() and (run / "train_log.csv").is_file()
    preds = tmp_path / "pred"
    preds.mkdir()
    assert cli.run(["infer", "--checkpoint", str(run / "model.scope"), "--image", str(data / "img_0001.pgm"),
                    "--out", str(tmp_path / "soft.pgm"), *common]) == 0
    (tmp_path / "soft_mask.pgm").rename(preds / "msk_0001.pgm")
    assert cli.run(["eval", "--pred", str(preds), "--gt", str(data), "--out", str(tmp_path / "m.csv")]) == 0
    assert (tmp_path / "m.csv").read_text().splitlines()[-1].startswith("mean,")


def test_config_file_and_override(tmp_path):
    cfg_file = tmp_path / "c.txt"
    cfg_file.write_text("synth.height = 16\nsynth.width=16\n")
    out = tmp_path / "d"
    assert cli.run(["synth", "--config", str(cfg_file), "--count", "2", "--out", str(out), "--synth.width=32"]) == 0
    assert (out / "img_0000.pgm").read_bytes().startswith(b"P5\n32 16\n")


def test_exit_codes(tmp_path, capsys):
    assert cli.run(["train", "--epochs=0"]) == cli.EXIT_USAGE
    assert cli.run(["train", "--bogus=1"]) == cli.EXIT_USAGE
    assert cli.run(["train", "stray"]) == cli.EXIT_USAGE
    assert cli.run(["train", f"--dataset={tmp_path / 'none'}"]) == cli.EXIT_DATASET
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n")
    ckpt = tmp_path / "m.scope"
    ckpt.write_bytes(b"junk")
    assert cli.run(["infer", "--checkpoint", str(ckpt), "--image", str(bad), "--out", str(tmp_path / "o.pgm")]) == cli.EXIT_CHECKPOINT
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    assert cli.run(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_PAIRING
    (tmp_path / "p" / "a.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    (tmp_path / "g" / "a.pgm").write_bytes(b"P5\n2 2\n255\n\x00\x00\x00\x00")
    assert cli.run(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_IO
    assert len({cli.EXIT_USAGE, cli.EXIT_DATASET, cli.EXIT_IO, cli.EXIT_CHECKPOINT, cli.EXIT_PAIRING, cli.EXIT_GRADCHECK}) == 6


def test_gradcheck_exit_codes(capsys):
    assert cli.run(["gradcheck"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:2] == ["component", "max_rel_err"]
    assert len(out) - 1 >= 6
    assert cli.run(["gradcheck", "--perturb", "0.01"]) == cli.EXIT_GRADCHECK
