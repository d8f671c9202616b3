"""End-to-end CLI flows on a miniature configuration."""

import numpy as np
import pytest

from camotta import cli
from camotta import data as D

MINI_INI = """\
[model]
resolution = 64
base = 8
embed = 16
depth = 2
heads = 2

[train]
steps = 2
batch = 2

[adapt]
iterations = 1
"""


@pytest.fixture()
def mini_cfg(tmp_path):
    p = tmp_path / "mini.ini"
    p.write_text(MINI_INI)
    return str(p)


def _gen(tmp_path, mini_cfg, n=2):
    root = tmp_path / "ds"
    rc = cli.main(["gen-data", "--config", mini_cfg, "--count", str(n),
                   "--camouflage", "0.7", "--out", str(root)])
    assert rc == 0
    return root


def test_print_config(capsys, mini_cfg):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--config", mini_cfg, "--print-config",
                  "--data", "x", "--out-checkpoint", "y"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "[model]" in out and "resolution = 64" in out and "[adapt]" in out


def test_gen_and_degrade(tmp_path, mini_cfg):
    root = _gen(tmp_path, mini_cfg)
    assert len(list((root / "images").iterdir())) == 2
    rc = cli.main(["degrade", "--kind", "gb", "--severity", "3",
                   "--in", str(root), "--out", str(tmp_path / "deg")])
    assert rc == 0
    orig = dict((n, i) for n, i, _ in D.load_dataset(root))
    for name, img, _ in D.load_dataset(tmp_path / "deg"):
        assert img.shape == orig[name].shape
        assert not np.array_equal(img, orig[name])


def test_train_adapt_eval_report(tmp_path, mini_cfg, capsys):
    root = _gen(tmp_path, mini_cfg)
    ckpt = tmp_path / "m.ckpt"
    assert cli.main(["train", "--config", mini_cfg, "--data", str(root),
                     "--out-checkpoint", str(ckpt)]) == 0
    assert ckpt.exists()

    frozen_csv = tmp_path / "frozen.csv"
    maps_dir = tmp_path / "maps"
    assert cli.main(["adapt", "--config", mini_cfg, "--checkpoint", str(ckpt),
                     "--data", str(root), "--mode", "frozen",
                     "--out-csv", str(frozen_csv),
                     "--dump-maps", str(maps_dir)]) == 0
    text = frozen_csv.read_text()
    assert text.splitlines()[0] == "sample,mode,degradation,severity," \
                                   "s_measure,e_measure,wfbeta,mae"
    assert len(list(maps_dir.iterdir())) == 2

    hcl_csv = tmp_path / "hcl.csv"
    assert cli.main(["adapt", "--config", mini_cfg, "--checkpoint", str(ckpt),
                     "--data", str(root), "--mode", "hcl", "--iters", "0",
                     "--out-csv", str(hcl_csv)]) == 0
    frozen_rows = [l.split(",")[4:] for l in text.splitlines()[1:]]
    hcl_rows = [l.split(",")[4:] for l in hcl_csv.read_text().splitlines()[1:]]
    assert frozen_rows == hcl_rows  # 0-iteration adaptation == frozen

    eval_csv = tmp_path / "eval.csv"
    assert cli.main(["eval", "--pred-dir", str(maps_dir),
                     "--gt-dir", str(root / "masks"),
                     "--out-csv", str(eval_csv)]) == 1  # stems do not match
    # rename maps to the gt stems so pairs match
    for p in maps_dir.iterdir():
        p.rename(maps_dir / p.name.replace("_frozen", ""))
    assert cli.main(["eval", "--pred-dir", str(maps_dir),
                     "--gt-dir", str(root / "masks"),
                     "--out-csv", str(eval_csv)]) == 0

    report_dir = tmp_path / "report"
    assert cli.main(["report", "--csv", str(frozen_csv), str(hcl_csv),
                     "--out", str(report_dir)]) == 0
    assert (report_dir / "summary.txt").exists()
    for m in ("s_measure", "e_measure", "wfbeta", "mae"):
        assert (report_dir / f"{m}.png").stat().st_size > 0


def test_verify_filter(capsys):
    assert cli.main(["verify", "--filter", "spectral", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "spectral.parseval" in out and "4/4 properties passed" in out


def test_verify_unknown_filter():
    assert cli.main(["verify", "--filter", "nonexistent"]) == 1


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["adapt", "--mode", "psychic"])
    assert exc.value.code == 2


def test_bad_config_exit_1(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nwidth = 3\n")
    assert cli.main(["train", "--config", str(bad), "--data", "x",
                     "--out-checkpoint", "y"]) == 1


def test_missing_checkpoint_exit_1(tmp_path, mini_cfg):
    assert cli.main(["adapt", "--config", mini_cfg,
                     "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--data", str(tmp_path), "--mode", "frozen",
                     "--out-csv", str(tmp_path / "o.csv")]) == 1
