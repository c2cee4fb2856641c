import csv

import numpy as np
import pytest

from msfsnet import cli, selfcheck
from msfsnet.gradcheck import GradCheckReport, LeafReport
from msfsnet.images import read_image, write_image

TINY = "base_channels = 4\nrcab_bottleneck_count = 1\nattention_ratio = 2\nepochs = 2\ncrop = 16\nlr0 = 1e-3\n"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert cli.main(["synth", "--n", "3", "--size", "16", "--seed", "1", "--out", str(root)]) == 0
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    return root, cfg


def test_synth_layout(corpus):
    root, _ = corpus
    names = sorted(p.name for p in (root / "blurry").iterdir())
    assert names == sorted(p.name for p in (root / "sharp").iterdir()) and len(names) == 3


def test_train_infer_resume(corpus, tmp_path, capsys):
    root, cfg = corpus
    ckpt = tmp_path / "m.msfs"
    args = ["train", "--blurry", str(root / "blurry"), "--sharp", str(root / "sharp"), "--config", str(cfg), "--out", str(ckpt)]
    assert cli.main(args) == 0
    assert ckpt.exists()
    with (tmp_path / "m.metrics.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 2
    longer = tmp_path / "longer.cfg"
    longer.write_text(TINY.replace("epochs = 2", "epochs = 3"))
    assert cli.main(args[:-4] + ["--config", str(longer), "--out", str(ckpt), "--resume", str(ckpt)]) == 0
    assert "3 epochs" in capsys.readouterr().out

    out = tmp_path / "restored.png"
    assert cli.main(["infer", "--ckpt", str(ckpt), "--input", str(root / "blurry" / "00000.png"), "--output", str(out)]) == 0
    assert read_image(out).shape == (3, 16, 16)


def test_infer_rejects_bad_size(corpus, tmp_path):
    root, cfg = corpus
    ckpt = tmp_path / "m.msfs"
    cli.main(["train", "--blurry", str(root / "blurry"), "--sharp", str(root / "sharp"), "--config", str(cfg), "--out", str(ckpt)])
    write_image(tmp_path / "odd.png", np.zeros((3, 10, 12)))
    assert cli.main(["infer", "--ckpt", str(ckpt), "--input", str(tmp_path / "odd.png"), "--output", str(tmp_path / "o.png")]) == 1
    (tmp_path / "junk.msfs").write_bytes(b"junk")
    assert cli.main(["infer", "--ckpt", str(tmp_path / "junk.msfs"), "--input", str(tmp_path / "odd.png"), "--output", str(tmp_path / "o.png")]) == 1


def test_analyze(corpus, tmp_path):
    root, _ = corpus
    out = tmp_path / "fig.csv"
    assert cli.main(["analyze", "--corpus-a", str(root / "sharp"), "--corpus-b", str(root / "blurry"), "--sigma", "2", "--out", str(out)]) == 0
    with out.open() as fh:
        assert len(list(csv.DictReader(fh))) == 6


def test_ablate(corpus, tmp_path):
    root, _ = corpus
    cfg = tmp_path / "ab.cfg"
    cfg.write_text(TINY.replace("epochs = 2", "epochs = 1"))
    out = tmp_path / "ab.csv"
    assert cli.main(["ablate", "--blurry", str(root / "blurry"), "--sharp", str(root / "sharp"), "--config", str(cfg), "--out", str(out)]) == 0
    with out.open() as fh:
        assert len(list(csv.DictReader(fh))) == 6


def test_validation_errors_exit_1(corpus, tmp_path):
    root, cfg = corpus
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    base = ["train", "--blurry", str(root / "blurry"), "--sharp", str(root / "sharp"), "--out", str(tmp_path / "x.msfs")]
    assert cli.main(base + ["--config", str(bad)]) == 1
    assert cli.main(["train", "--blurry", str(tmp_path / "nope"), "--sharp", str(root / "sharp"), "--out", str(tmp_path / "x.msfs")]) == 1
    assert cli.main(["synth", "--n", "2", "--size", "10", "--out", str(tmp_path / "s")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_2(corpus, tmp_path):
    root, _ = corpus
    cfg = tmp_path / "boom.cfg"
    cfg.write_text(TINY + "lr0 = 1e30\nzero_head = false\n")
    out = tmp_path / "boom.msfs"
    code = cli.main(["train", "--blurry", str(root / "blurry"), "--sharp", str(root / "sharp"), "--config", str(cfg), "--out", str(out)])
    assert code == 2
    assert (tmp_path / "boom.msfs.lastgood").exists()


def test_gradcheck_exit_codes(monkeypatch):
    def fake(passed):
        rep = GradCheckReport(tol=1e-3, leaves=[LeafReport("w", 1, 0, 0.0 if passed else 1.0)])
        return lambda **kw: [("fake", rep)]

    monkeypatch.setattr(selfcheck, "gradient_suite", fake(True))
    assert cli.main(["gradcheck"]) == 0
    monkeypatch.setattr(selfcheck, "gradient_suite", fake(False))
    assert cli.main(["gradcheck", "--f64"]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "msfsnet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout
