import subprocess
import sys

import pytest

from conftest import FIG2_CONLLU, FIG2_DEPMAT, FIG2_TSV, TOY_CONLLU, TOY_TSV
from lgsum.cli import main
from lgsum.depmatrix import load_matrix
from lgsum.model import Vocabulary

TINY = "width=16\nheads=2\nenc_layers=1\ndec_layers=1\nffn_width=32\nmax_steps=2\nwarmup_steps=5\n"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    rc = main(["train", "--data", TOY_TSV, "--parses", TOY_CONLLU, "--out", str(d / "run"),
               "--config", str(d / "tiny.cfg"), "--fusion-mode", "direct", "--fusion-weight", "0.25"])
    assert rc == 0
    return d


def common(d):
    return ["--data", TOY_TSV, "--parses", TOY_CONLLU, "--checkpoint", str(d / "run" / "checkpoint.bin")]


class TestCommands:
    def test_train_outputs(self, run_dir):
        assert (run_dir / "run" / "metrics.tsv").read_text().count("\n") == 2

    def test_build_vocab(self, tmp_path):
        assert main(["build-vocab", "--data", TOY_TSV, "--parses", TOY_CONLLU,
                     "--out", str(tmp_path / "v.txt")]) == 0
        assert "anna" in Vocabulary.load(tmp_path / "v.txt").index

    def test_generate(self, run_dir, tmp_path):
        out = tmp_path / "gen.txt"
        assert main(["generate", *common(run_dir), "--min-gen", "2", "--max-gen", "4",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 8 and all(2 <= len(line.split()) <= 4 for line in lines)

    def test_evaluate(self, run_dir, tmp_path):
        out = tmp_path / "eval.csv"
        assert main(["evaluate", *common(run_dir), "--min-gen", "1", "--max-gen", "3",
                     "--beam", "2", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 10

    def test_export(self, run_dir, tmp_path, capsys):
        assert main(["export-attn", *common(run_dir), "--example", "1", "--head", "mean",
                     "--stage", "base", "--out", str(tmp_path / "a")]) == 0
        assert (tmp_path / "a.base.pgm").exists() and (tmp_path / "a.dep.csv").exists()

    def test_build_depmat(self, tmp_path):
        assert main(["build-depmat", "--parses", FIG2_CONLLU, "--out", str(tmp_path)]) == 0
        (path,) = tmp_path.iterdir()
        assert load_matrix(path) == load_matrix(FIG2_DEPMAT)

    def test_alpha_sweep(self, run_dir, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["alpha-sweep", "--data", FIG2_TSV, "--parses", FIG2_CONLLU, "--config",
                     str(run_dir / "tiny.cfg"), "--alphas", "0,2", "--max-gen", "3",
                     "--min-gen", "1", "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0].startswith("alpha,") and len(rows) == 3


class TestErrors:
    def test_missing_file(self, capsys):
        assert main(["train", "--data", "nope.tsv", "--parses", TOY_CONLLU, "--out", "x"]) != 0
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and "error:" in err[0]

    def test_missing_flag(self, capsys):
        assert main(["evaluate", "--data", TOY_TSV, "--parses", TOY_CONLLU]) != 0
        assert "--checkpoint" in capsys.readouterr().err

    def test_bad_example_index(self, run_dir, capsys):
        assert main(["export-attn", *common(run_dir), "--example", "99"]) != 0

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "lgsum", "build-depmat", "--parses", "missing"],
                              capture_output=True, text=True)
        assert proc.returncode != 0
        assert proc.stderr.strip().count("\n") == 0 and "error" in proc.stderr
