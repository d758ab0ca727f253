import subprocess
import sys

import numpy as np
import pytest

from tgcn.cli import main
from tgcn.graph_data import load_edge_list, normalize_adjacency, split
from tgcn.model import forward, predict_entries
from tgcn.training import load_checkpoint

CONFIG = """\
[data]
{data}
seed = 0

[model]
widths = 4,4,4
window = 2

[train]
epochs = {epochs}
seed = 0

[output]
dir = {out}
"""


def write_config(tmp_path, data="synth = smooth\nnodes = 10\nslices = 4", epochs=5, out="run", name="exp.ini"):
    path = tmp_path / name
    path.write_text(CONFIG.format(data=data, epochs=epochs, out=out))
    return path


@pytest.fixture
def edge_file(tmp_path):
    path = tmp_path / "g.txt"
    assert main(["synth", "--nodes", "10", "--slices", "4", "--density", "0.2", "--seed", "1", "--out", str(path)]) == 0
    return path


@pytest.fixture
def trained(tmp_path, edge_file):
    cfg = write_config(tmp_path, data=f"path = {edge_file.name}")
    assert main(["train", "--config", str(cfg)]) == 0
    return tmp_path / "run" / "model.ckpt", edge_file


class TestTrain:
    def test_writes_artifacts(self, tmp_path, capsys):
        assert main(["train", "--config", str(write_config(tmp_path))]) == 0
        out = tmp_path / "run"
        assert sorted(p.name for p in out.iterdir()) == ["manifest.ini", "metrics.csv", "model.ckpt"]
        assert capsys.readouterr().out.startswith("test,")
        manifest = (out / "manifest.ini").read_text()
        assert "split_seed = 0" in manifest and "seed = 0" in manifest.split("[train]")[1]

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["train", "--config", str(cfg)])
        first = [(tmp_path / "run" / f).read_bytes() for f in ("metrics.csv", "model.ckpt", "manifest.ini")]
        main(["train", "--config", str(cfg)])
        second = [(tmp_path / "run" / f).read_bytes() for f in ("metrics.csv", "model.ckpt", "manifest.ini")]
        assert first == second

    def test_missing_data_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path, data="path = nowhere.txt")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "nowhere.txt" in capsys.readouterr().err

    def test_missing_seed(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("seed = 0\n\n[model]", "\n[model]"))
        assert main(["train", "--config", str(cfg)]) == 1
        assert "seed" in capsys.readouterr().err

    @pytest.mark.parametrize("bad", ["window = 0", "window = two", "activation = relu"])
    def test_bad_model_values(self, tmp_path, bad):
        cfg = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("window = 2", bad))
        assert main(["train", "--config", str(cfg)]) == 1

    def test_both_data_sources(self, tmp_path, edge_file):
        cfg = write_config(tmp_path, data=f"path = {edge_file.name}\nsynth = smooth")
        assert main(["train", "--config", str(cfg)]) == 1

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.ini")]) == 2

    def test_malformed_edge_list(self, tmp_path):
        (tmp_path / "bad.txt").write_text("a b 1.0\n")
        assert main(["train", "--config", str(write_config(tmp_path, data="path = bad.txt"))]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_numerical(self, tmp_path):
        cfg = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("epochs = 5", "epochs = 5\nlearning_rate = 1e308"))
        assert main(["train", "--config", str(cfg)]) == 3


class TestEvaluate:
    def test_prints_test_row(self, trained, capsys):
        ckpt, data = trained
        capsys.readouterr()
        assert main(["evaluate", "--ckpt", str(ckpt), "--data", str(data), "--seed", "0"]) == 0
        row = capsys.readouterr().out.strip().split(",")
        g = load_edge_list(data)
        assert row[0] == "test" and int(row[1]) == split(g, seed=0).test.size
        assert float(row[3]) >= float(row[2]) >= 0

    def test_repeatable(self, trained, capsys):
        ckpt, data = trained
        args = ["evaluate", "--ckpt", str(ckpt), "--data", str(data), "--seed", "0"]
        capsys.readouterr()
        main(args)
        first = capsys.readouterr().out
        main(args)
        assert capsys.readouterr().out == first

    def test_missing_checkpoint(self, tmp_path, edge_file, capsys):
        assert main(["evaluate", "--ckpt", str(tmp_path / "x.ckpt"), "--data", str(edge_file), "--seed", "0"]) == 2
        assert "x.ckpt" in capsys.readouterr().err

    def test_shape_mismatch(self, tmp_path, trained):
        ckpt, _ = trained
        other = tmp_path / "other.txt"
        main(["synth", "--nodes", "12", "--slices", "4", "--seed", "0", "--out", str(other)])
        assert main(["evaluate", "--ckpt", str(ckpt), "--data", str(other), "--seed", "0"]) == 2


class TestPredict:
    def test_matches_per_entry_value(self, trained, capsys):
        ckpt, data = trained
        g = load_edge_list(data)
        p = load_checkpoint(ckpt)
        i, j, t = g.entries[3]
        expected = predict_entries(forward(p, normalize_adjacency(g.adjacency)), [(i, j, t)], p.W_c, p.z, p.v)[0]
        capsys.readouterr()
        assert main(["predict", "--ckpt", str(ckpt), "--data", str(data), "--edge", f"{i},{j},{t}"]) == 0
        assert float(capsys.readouterr().out) == expected

    def test_zero_v(self, trained, capsys, tmp_path):
        ckpt, data = trained
        lines = ckpt.read_text().splitlines()
        k = lines.index(next(line for line in lines if line.startswith("v ")))
        lines[k + 1] = " ".join("0" for _ in lines[k + 1].split())
        zero = tmp_path / "zero.ckpt"
        zero.write_text("\n".join(lines) + "\n")
        capsys.readouterr()
        assert main(["predict", "--ckpt", str(zero), "--data", str(data), "--edge", "0,1,0"]) == 0
        assert float(capsys.readouterr().out) == 0.0

    def test_out_of_range(self, trained):
        ckpt, data = trained
        assert main(["predict", "--ckpt", str(ckpt), "--data", str(data), "--edge", "0,1,99"]) != 0

    def test_malformed_edge(self, trained):
        ckpt, data = trained
        with pytest.raises(SystemExit) as info:
            main(["predict", "--ckpt", str(ckpt), "--data", str(data), "--edge", "0,1"])
        assert info.value.code == 1


class TestSynth:
    def test_round_trip(self, edge_file):
        g = load_edge_list(edge_file)
        assert (g.n_nodes, g.n_slices) == (10, 4)
        assert np.bincount(g.entries[:, 2]).tolist() == [20] * 4

    def test_deterministic(self, tmp_path):
        paths = [tmp_path / "a.txt", tmp_path / "b.txt"]
        for p in paths:
            main(["synth", "--nodes", "8", "--slices", "3", "--seed", "5", "--temporal", "--out", str(p)])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_invalid_density(self, tmp_path):
        assert main(["synth", "--nodes", "8", "--slices", "3", "--seed", "5", "--density", "0",
                     "--out", str(tmp_path / "x.txt")]) == 1


class TestGradcheck:
    def test_default_instance(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "worst relative error" in out and "ok" in out

    def test_names_parameter(self, capsys):
        main(["gradcheck", "--seed", "2"])
        out = capsys.readouterr().out
        assert any(name in out for name in ("W_n", "W_1", "W_2", "W_c", "z[", "v[", "mixing"))

    def test_zero_eps(self, capsys):
        assert main(["gradcheck", "--eps", "0"]) == 1
        assert "eps" in capsys.readouterr().err

    def test_uses_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("window = 2", "window = 3\nactivation = sigmoid\ntied = true"))
        assert main(["gradcheck", "--config", str(cfg)]) == 0


class TestUsage:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 1

    def test_missing_required(self):
        with pytest.raises(SystemExit) as info:
            main(["evaluate", "--ckpt", "x"])
        assert info.value.code == 1

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "tgcn.cli", "gradcheck"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("worst relative error")
