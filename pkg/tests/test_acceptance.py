"""Acceptance criteria 1-9, one test each, at the stated tolerances.

Run ``pytest tests/test_acceptance.py`` (or ``python tests/test_acceptance.py``);
a PASS/FAIL line per criterion is printed in the terminal summary.
"""
import math
import time

import numpy as np

from oracles import m_product_loop, mode_n_loop, softmax_band, static_gcn
from tgcn.cli import gradcheck_instance, main
from tgcn.evaluation import evaluate, mae, rmse
from tgcn.graph_data import dump_edge_list, load_edge_list, normalize_adjacency, split, synth_generate, synth_temporal
from tgcn.model import MixingMatrix, ModelConfig, ModelParameters, forward, materialize_mixing
from tgcn.tensor_core import BandedLowerMatrix, inverse_m_transform, m_product, m_transform
from tgcn.training import TrainConfig, finite_difference_check, load_checkpoint, save_checkpoint, train


def rel_err(got, ref):
    return float(np.max(np.abs(got - ref)) / max(np.max(np.abs(ref)), 1e-300))


def random_mixing(rng, T, b):
    """Half softmax-normalized bands, half signed bands with |diagonal| >= 0.1."""
    if rng.random() < 0.5:
        return materialize_mixing(MixingMatrix(rng.normal(size=(T, b))))
    bands = rng.uniform(-0.5, 0.5, (T, b))
    bands[:, 0] = rng.choice([-1.0, 1.0], T) * rng.uniform(0.1, 1.0, T)
    return BandedLowerMatrix(bands)


def test_1_tensor_algebra_oracles(criterion):
    with criterion(1, "tensor-algebra oracle equivalence") as info:
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        worst_prod = worst_tr = 0.0
        n = 120
        for _ in range(n):
            I, J, K = rng.integers(1, 5, size=3)
            T = int(rng.integers(1, 6))
            b = int(rng.integers(1, T + 1))
            M = random_mixing(rng, T, b)
            X, Y = rng.normal(size=(I, J, T)), rng.normal(size=(J, K, T))
            worst_prod = max(worst_prod, rel_err(m_product(X, Y, M), m_product_loop(X, Y, M.to_dense())))
            worst_tr = max(worst_tr, rel_err(m_transform(X, M), mode_n_loop(X, M.to_dense(), 3)))
        elapsed = time.perf_counter() - start
        info["detail"] = f"{n} instances, m_product rel {worst_prod:.1e}, m_transform rel {worst_tr:.1e}"
        assert worst_prod < 1e-10 and worst_tr < 1e-12 and elapsed < 5.0


def test_2_static_gcn_degeneracy(criterion):
    with criterion(2, "window 1 equals per-snapshot GCN") as info:
        start = time.perf_counter()
        worst = 0.0
        for seed in range(10):
            g = synth_generate(6, 4, density=0.2, seed=seed)
            p = ModelParameters.init(ModelConfig(widths=(5, 4, 3), window=1, seed=seed), 6, 4)
            F = forward(p, normalize_adjacency(g.adjacency))
            dense = g.adjacency.to_dense()
            ref = static_gcn([dense[:, :, t] for t in range(4)], p.W_n, p.layers)
            worst = max(worst, float(np.max(np.abs(F - ref))))
        elapsed = time.perf_counter() - start
        info["detail"] = f"10 instances N=6 T=4 L=2, max abs diff {worst:.1e}"
        assert worst <= 1e-12 and elapsed < 1.0


def test_3_mixing_matrix_law(criterion):
    with criterion(3, "mixing-matrix law") as info:
        rng = np.random.default_rng(3)
        worst_sum = worst_trip = 0.0
        for _ in range(50):
            T = int(rng.integers(1, 11))
            b = int(rng.integers(1, T + 1))
            raw = rng.uniform(-1.0, 1.0, size=(T, b))
            M = materialize_mixing(MixingMatrix(raw))
            dense = M.to_dense()
            worst_sum = max(worst_sum, float(np.max(np.abs(dense.sum(axis=1) - 1.0))))
            assert np.all(dense[np.triu_indices(T, 1)] == 0.0)
            assert np.all(dense[np.tril_indices(T, -b)] == 0.0)
            assert np.all(np.diag(dense) > 0.0)
            assert np.allclose(dense, softmax_band(MixingMatrix(raw).raw, b), rtol=0, atol=1e-13)
            X = rng.normal(size=(3, 2, T))
            worst_trip = max(worst_trip, rel_err(inverse_m_transform(m_transform(X, M), M), X))
        info["detail"] = f"50 matrices, raw ~ U(-1, 1), row-sum err {worst_sum:.1e}, round-trip rel {worst_trip:.1e}"
        assert worst_sum <= 1e-12 and worst_trip <= 1e-12


def test_4_gradient_exactness(criterion):
    with criterion(4, "gradients match central differences") as info:
        start = time.perf_counter()
        params, adj, entries, targets = gradcheck_instance(ModelConfig(widths=(4, 4, 4), window=2, seed=0))
        worst, (name, idx) = finite_difference_check(params, adj, entries, targets, eps=1e-5)
        elapsed = time.perf_counter() - start
        n_coords = sum(a.size for _, a in params.blocks())
        info["detail"] = f"{len(entries)} entries, {n_coords} coords, worst rel {worst:.1e} at {name}{list(idx)}"
        assert params.n_nodes == 6 and params.n_slices == 4 and len(params.layers) == 2 and params.window == 2
        assert worst < 1e-4 and elapsed < 30.0


def test_5_overfit_sanity(criterion):
    with criterion(5, "overfit sanity") as info:
        start = time.perf_counter()
        g = synth_generate(20, 8, density=0.15, seed=0)
        cfg = TrainConfig(epochs=500, learning_rate=1e-2, model=ModelConfig(widths=(16, 16, 16), window=2))
        _, log = train(g, split(g, seed=0), cfg)
        elapsed = time.perf_counter() - start
        scale = float(np.max(np.abs(g.weights)))
        final = log[-1].train_mae
        info["detail"] = f"train MAE {final:.4f} vs threshold {0.05 * scale:.4f} (0.05 x max|w|={scale:.3f})"
        assert final < 0.05 * scale and elapsed < 120.0


def test_6_temporal_signal(criterion):
    with criterion(6, "window 2 beats window 1 on temporal data") as info:
        margins = []
        for seed in (0, 1, 2):
            g = synth_temporal(20, 8, density=0.15, seed=seed)
            s = split(g, seed=seed)
            val = {}
            for b in (1, 2):
                cfg = TrainConfig(epochs=300, model=ModelConfig(widths=(16, 16, 16), window=b, seed=seed), seed=seed)
                params, _ = train(g, s, cfg)
                val[b] = evaluate(params, g, s, "validation").mae
            margins.append(val[1] - val[2])
        info["detail"] = "val MAE margins (b1 - b2) " + ", ".join(f"{m:+.4f}" for m in margins)
        assert all(m > 0 for m in margins)


def test_7_metric_identities(criterion):
    with criterion(7, "metric identities") as info:
        assert mae([(1.5, 2.0)]) == 0.5 and rmse([(1.5, 2.0)]) == 0.5
        assert mae([(0.7, 0.7), (-3.0, -3.0)]) == 0.0 and rmse([(0.7, 0.7), (-3.0, -3.0)]) == 0.0
        assert mae([(0.0, 3.0), (0.0, -4.0)]) == 3.5
        assert rmse([(0.0, 3.0), (0.0, -4.0)]) == math.sqrt(12.5)
        assert rmse([(0.0, -0.25)] * 7) == 0.25
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 50))
            pairs = np.column_stack([rng.normal(size=n), rng.standard_cauchy(size=n)])
            assert rmse(pairs) >= mae(pairs) >= 0
        info["detail"] = "hand examples exact, rmse >= mae on 100 random sets"


def test_8_determinism(criterion, tmp_path):
    with criterion(8, "determinism") as info:
        cfg = tmp_path / "exp.ini"
        cfg.write_text(
            "[data]\nsynth = smooth\nnodes = 12\nslices = 4\nseed = 0\n"
            "[model]\nwidths = 8,8,8\n[train]\nepochs = 40\nseed = 0\n[output]\ndir = {}\n"
        )
        outputs = []
        for run in ("a", "b"):
            cfg.write_text(cfg.read_text().rsplit("dir = ", 1)[0] + f"dir = {run}\n")
            assert main(["train", "--config", str(cfg)]) == 0
            outputs.append([(tmp_path / run / f).read_bytes() for f in ("metrics.csv", "model.ckpt")])
        assert outputs[0] == outputs[1]
        g = synth_generate(20, 8, seed=0)
        assert np.array_equal(split(g, seed=9).tags, split(g, seed=9).tags)
        info["detail"] = "metrics.csv and model.ckpt byte-identical; splits identical"


def test_9_round_trips(criterion, tmp_path):
    with criterion(9, "format round trips") as info:
        g = synth_temporal(15, 5, seed=2)
        text = dump_edge_list(g)
        reloaded = load_edge_list(text.encode())
        assert reloaded == g and dump_edge_list(reloaded) == text
        p = ModelParameters.init(ModelConfig(widths=(3, 4, 2), window=3, seed=4), 15, 5)
        p.mixing = MixingMatrix(np.random.default_rng(0).normal(size=(5, 3)))
        save_checkpoint(p, tmp_path / "m.ckpt")
        q = load_checkpoint(tmp_path / "m.ckpt")
        assert q.equals(p)
        info["detail"] = f"edge list {g.n_entries} entries identical; checkpoint element-exact"


if __name__ == "__main__":
    import sys

    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
