import json

import numpy as np
import pytest
from scipy.stats import kendalltau

from d2cl.evaluate import (ExperimentReport, SweepConfig, kendall_scores, kendall_tau_fast,
                           kendall_tau_reference, pearson_scores, perturbation_grid,
                           read_report_csv, run_cell, run_embedding_perturbation, run_snr_sweep)
from d2cl.graph import linear_index, linear_indices
from d2cl.model import ModelConfig, TrainConfig

TINY = SweepConfig(families=("linear",), snrs=(10.0,), seeds=(0,), p=10, n=64,
                   methods=("d2cl", "pearson", "kendall"),
                   model=ModelConfig(grid_resolution=8),
                   training=TrainConfig(epochs=2, batch_size=8))


def test_pearson_scores_symmetric_and_flagged():
    rng = np.random.default_rng(0)
    X = np.c_[rng.standard_normal((50, 3)), np.ones(50)]
    pairs = [linear_index(0, 1, 4), linear_index(1, 0, 4), linear_index(2, 3, 4)]
    s, bad = pearson_scores(X, pairs)
    assert s[0] == s[1] == pytest.approx(abs(np.corrcoef(X[:, 0], X[:, 1])[0, 1]))
    assert bad.tolist() == [False, False, True] and s[2] == 0


def test_kendall_reference_matches_scipy_with_ties():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.integers(0, 5, 40).astype(float)
        y = x + rng.integers(-2, 3, 40)
        assert kendall_tau_reference(x, y) == pytest.approx(kendalltau(x, y).statistic, abs=1e-12)
        assert kendall_tau_fast(x, y) == pytest.approx(kendall_tau_reference(x, y), abs=1e-12)


def test_kendall_sign_flip_and_constant():
    x = np.arange(10.0)
    y = x ** 2
    assert kendall_tau_reference(x, -y) == -kendall_tau_reference(x, y)
    assert kendall_tau_fast(x, np.ones(10)) == 0.0


def test_kendall_scores_paths_agree():
    X = np.random.default_rng(2).standard_normal((30, 4))
    ks = linear_indices(np.array([0, 1, 3]), np.array([1, 0, 2]), 4)
    fast, _ = kendall_scores(X, ks)
    ref, _ = kendall_scores(X, ks, reference=True)
    assert np.allclose(fast, ref) and fast[0] == fast[1]


def test_report_summary_and_files(tmp_path):
    rep = ExperimentReport()
    for seed, auc in enumerate([0.6, 0.8]):
        rep.add({"family": "linear", "snr": 10.0, "target": "direct", "method": "pearson",
                 "seed": seed, "auc": auc, "runtime_s": 0.1})
    (row,) = rep.summary()
    assert row["auc_mean"] == pytest.approx(0.7)
    assert row["auc_sd"] == pytest.approx(np.std([0.6, 0.8], ddof=1))
    rep.save(tmp_path)
    back = read_report_csv(tmp_path / "report.csv")
    assert [r["auc"] for r in back] == [0.6, 0.8]
    assert json.loads((tmp_path / "report.json").read_text())["summary"][0]["seeds"] == [0, 1]


def test_perturbation_grid():
    assert perturbation_grid() == [("zero", 0.0), ("gauss", 1.0), ("gauss", 2.0), ("gauss", 5.0)]


def test_run_cell_tiny_end_to_end():
    rep, art = run_cell(TINY, "linear", 10.0, "direct", 0, keep=True)
    assert [r["method"] for r in rep.rows] == ["d2cl", "pearson", "kendall"]
    assert all(0.0 <= r["auc"] <= 1.0 for r in rep.rows)
    assert art.model is not None and len(art.history) == 2
    pert = run_embedding_perturbation(art, seed=0)
    names = [r["method"] for r in pert.rows]
    assert names[0] == "reference" and "cnn:zero" in names and "gnn:gauss5" in names


def test_sweep_records_failures_and_continues():
    bad = SweepConfig(families=("linear", "sine"), snrs=(10.0,), seeds=(0,), p=8, n=32,
                      methods=("pearson",))
    rep = run_snr_sweep(bad)
    assert len(rep.rows) == 1 and len(rep.failures) == 1
    assert "sine" in rep.failures[0]["error"]
