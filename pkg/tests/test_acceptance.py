"""Acceptance gate: every release criterion with its stated tolerance.

Each test prints one `[acceptance] ... PASS/FAIL` line (visible with
`pytest -rA` or `-s`). Expected values are frozen from independent oracles:
dense numpy recomputation for the sparse kernels, central finite differences
for the gradients, brute-force pairwise/threshold walks for the ranking
metrics, and a pre-build oracle run of the full pipeline for the synthetic
benchmark margins.
"""

import dataclasses
import json
import time
from contextlib import contextmanager

import numpy as np

from oodhg import (
    BinaryScoredSet,
    DetectorConfig,
    KPlusOnePrediction,
    PropagationConfig,
    SynthConfig,
    TrainConfig,
    aupr,
    auroc,
    compose_metapath,
    detect,
    fpr_at_95tpr,
    generate_synthetic,
    gradients,
    make_splits,
    micro_f1,
    propagate,
    train,
)
from oodhg.cli import main as cli_main
from oodhg.hetgraph import MetaPath
from oodhg.model import map_to_head
from oodhg.pipeline import run_experiment
from oodhg.sparse import SparseRowMatrix

from conftest import dense_row_normalize, random_typed_graph
from test_metrics import pairwise_auroc, rank_walk_aupr, threshold_sweep_fpr95
from test_model import GRAD_CFG, fd_gradients, gradcheck_instance, make_params

# margin for criterion 5, frozen from a calibration run of this pipeline:
# mean AUROC over seeds 0..4 was full=0.9951 vs raw-energy arm=0.8212
# (gap +0.174) and MSP=0.9606 (gap +0.035)
DIRECTIONALITY_MARGIN = 0.02

ARM_FULL = {}
ARM_RAW = {"alpha": 1.0, "steps": 0}
ARM_NO_LE = {"alpha": 1.0}
ARM_NO_EP = {"steps": 0}

SEPARABLE = dict(nodes_per_class=100, intra_edge_prob=0.15,
                 inter_edge_prob=0.002)


@contextmanager
def criterion(name: str):
    try:
        yield
    except Exception:
        print(f"[acceptance] {name}: FAIL")
        raise
    print(f"[acceptance] {name}: PASS")


def test_criterion_1_sparse_ops_match_dense_oracles():
    with criterion("1 oracle equivalence (compose + propagate vs dense, 1e-10)"):
        start = time.monotonic()
        rng = np.random.default_rng(20240)
        checked = 0
        for _ in range(100):
            counts = {"t": int(rng.integers(2, 51)), "u": int(rng.integers(2, 51)),
                      "v": int(rng.integers(2, 51))}
            graph, dense = random_typed_graph(
                rng, counts, [("t", "u"), ("u", "t"), ("u", "v"), ("v", "t")],
                edge_prob=float(rng.uniform(0.05, 0.5)), target_type="t")
            for seq in [("t", "u", "t"), ("t", "u", "v", "t")]:
                sparse_result = compose_metapath(graph, seq)
                expected = np.eye(counts["t"])
                for hop in zip(seq[:-1], seq[1:]):
                    expected = expected @ dense_row_normalize(dense[hop])
                sums = expected.sum(axis=1)
                lossy = (sums > 0) & (np.abs(sums - 1.0) > 1e-9)
                expected[lossy] /= sums[lossy, None]
                empty = np.flatnonzero(sums == 0)
                expected[empty, :] = 0.0
                expected[empty, empty] = 1.0
                np.testing.assert_allclose(sparse_result.to_dense(), expected,
                                           atol=1e-10)

                e0 = rng.standard_normal(counts["t"]) * 3
                k = int(rng.integers(1, 9))
                gamma = float(rng.uniform(0.1, 0.9))
                got = propagate(e0, sparse_result, PropagationConfig(gamma, k))
                m = gamma * np.eye(counts["t"]) + (1 - gamma) * expected
                oracle = np.linalg.matrix_power(m, k) @ e0
                np.testing.assert_allclose(got, oracle, atol=1e-10)
                checked += 1
        elapsed = time.monotonic() - start
        assert checked >= 200
        assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s, budget 10s"


def test_criterion_2_gradients_match_finite_differences():
    with criterion("2 gradient correctness (central differences, rel 1e-4)"):
        start = time.monotonic()
        for seed in range(20):
            graph, labels = gradcheck_instance(seed, n_target=12)
            paths = [MetaPath(("target", "aux0", "target"))]
            params = make_params(graph, paths, seed + 500, GRAD_CFG.d_hidden, 2)
            y_head = map_to_head(labels, np.array([0, 1]))
            train_ids = np.array([0, 1, 2, 4, 5, 6, 8, 9])
            analytic = gradients(graph, paths, paths, params, y_head,
                                 train_ids, GRAD_CFG)
            fd = fd_gradients(graph, paths, paths, params, y_head,
                              train_ids, GRAD_CFG)
            for a, f in zip(analytic.param_list(), fd):
                err = np.abs(a - f)
                tol = np.maximum(1e-7, 1e-4 * np.maximum(np.abs(a), np.abs(f)))
                assert np.all(err <= tol), f"seed {seed}: max err {err.max():.2e}"
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"criterion 2 took {elapsed:.1f}s, budget 30s"


def test_criterion_3_metric_oracles():
    with criterion("3 metric oracles (brute force, 1e-12; micro-F1 == accuracy)"):
        rng = np.random.default_rng(77)
        for _ in range(200):
            n = int(rng.integers(4, 31))
            scores = rng.standard_normal(n)
            if rng.random() < 0.4:
                scores = np.round(scores, 1)
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            if not labels.any():
                labels[0] = True
            if labels.all():
                labels[0] = False
            s = BinaryScoredSet(scores, labels)
            assert abs(auroc(s) - pairwise_auroc(scores, labels)) <= 1e-12
            assert abs(aupr(s) - rank_walk_aupr(scores, labels)) <= 1e-12
            assert fpr_at_95tpr(s) == threshold_sweep_fpr95(scores, labels)

            k = int(rng.integers(2, 6))
            pred = rng.integers(0, k, n)
            gold = rng.integers(0, k, n)
            kp = KPlusOnePrediction(pred, gold, k)
            assert micro_f1(kp) == np.mean(pred == gold)


def test_criterion_4_propagation_invariants():
    with criterion("4 propagation invariants and detector monotonicity"):
        rng = np.random.default_rng(99)
        for _ in range(25):
            n = int(rng.integers(3, 40))
            arr = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
            arr[np.arange(n), rng.integers(0, n, n)] += 1.0
            a = SparseRowMatrix.from_dense(arr).row_normalize()
            e0 = rng.standard_normal(n) * 4

            # identities
            np.testing.assert_array_equal(
                propagate(e0, a, PropagationConfig(1.0, 5)), e0)
            np.testing.assert_array_equal(
                propagate(e0, a, PropagationConfig(0.5, 0)), e0)

            # convex-combination bounds for every step count
            gamma = float(rng.uniform(0.05, 1.0))
            for k in (1, 2, 4, 8):
                out = propagate(e0, a, PropagationConfig(gamma, k))
                assert out.min() >= e0.min() - 1e-12
                assert out.max() <= e0.max() + 1e-12

            # constant fixed point
            c = float(rng.uniform(-5, 5))
            out = propagate(np.full(n, c), a, PropagationConfig(gamma, 6))
            np.testing.assert_allclose(out, c, atol=1e-12)

            # detector monotone in tau
            taus = np.sort(rng.uniform(-3, 3, 3))
            flags = [detect(e0, DetectorConfig(t)) for t in taus]
            for lo, hi in zip(flags[:-1], flags[1:]):
                assert np.all(hi[lo])


def _arm_mean_aurocs(seeds):
    base = TrainConfig()
    full, raw, msp, no_le, no_ep = [], [], [], [], []
    for seed in seeds:
        graph, labels = generate_synthetic(SynthConfig(seed=seed))
        splits = make_splits(labels, 3, seed=seed)
        _, _, rep_raw = run_experiment(
            graph, labels, splits, dataclasses.replace(base, seed=seed, **ARM_RAW))
        raw.append(rep_raw.metrics["auroc"])
        msp.append(rep_raw.metrics["auroc_msp"])
        _, _, rep_full = run_experiment(
            graph, labels, splits, dataclasses.replace(base, seed=seed))
        full.append(rep_full.metrics["auroc"])
        _, _, rep_no_le = run_experiment(
            graph, labels, splits, dataclasses.replace(base, seed=seed, **ARM_NO_LE))
        no_le.append(rep_no_le.metrics["auroc"])
        _, _, rep_no_ep = run_experiment(
            graph, labels, splits, dataclasses.replace(base, seed=seed, **ARM_NO_EP))
        no_ep.append(rep_no_ep.metrics["auroc"])
    return {name: float(np.mean(vals)) for name, vals in
            [("full", full), ("raw", raw), ("msp", msp),
             ("no_le", no_le), ("no_ep", no_ep)]}


def test_criterion_5_synthetic_benchmark_directionality():
    with criterion("5 benchmark directionality (full vs raw/MSP, 4-arm order)"):
        start = time.monotonic()
        means = _arm_mean_aurocs(range(5))
        print("    mean AUROC:", {k: round(v, 4) for k, v in means.items()})
        assert means["full"] >= means["raw"] + DIRECTIONALITY_MARGIN
        assert means["full"] >= means["msp"] + DIRECTIONALITY_MARGIN
        # qualitative ordering: full at least matches every ablated arm
        assert means["full"] >= means["no_le"]
        assert means["full"] >= means["no_ep"]
        assert means["full"] >= means["raw"]
        elapsed = time.monotonic() - start
        assert elapsed < 180.0, f"criterion 5 took {elapsed:.1f}s, budget 180s"


def test_criterion_6_null_case_sanity():
    with criterion("6 null case (shift 0, intra == inter -> AUROC ~ 0.5)"):
        cfg = TrainConfig()
        aurocs = []
        for seed in range(20):
            graph, labels = generate_synthetic(SynthConfig(
                seed=seed, ood_shift=0.0,
                intra_edge_prob=0.07, inter_edge_prob=0.07))
            splits = make_splits(labels, 3, seed=seed)
            _, _, rep = run_experiment(graph, labels, splits,
                                       dataclasses.replace(cfg, seed=seed))
            aurocs.append(rep.metrics["auroc"])
        mean = float(np.mean(aurocs))
        print(f"    null mean AUROC over 20 seeds: {mean:.4f}")
        assert 0.45 <= mean <= 0.55


def test_criterion_7_training_energy_descent():
    with criterion("7 training-energy descent on the separable instance"):
        for seed in range(5):
            graph, labels = generate_synthetic(SynthConfig(seed=seed, **SEPARABLE))
            splits = make_splits(labels, 3, seed=seed)
            _, history = train(graph, labels, splits,
                               TrainConfig(seed=seed))
            first = history.records[0].train_energy_mean
            last = history.records[-1].train_energy_mean
            assert last < first, f"seed {seed}: {last} !< {first}"


def test_criterion_8_split_protocol():
    with criterion("8 split protocol (24/6/70 with all held-out nodes in test)"):
        labels = np.array([4] * 10 + [0] * 30 + [1] * 30 + [2] * 30)
        splits = make_splits(labels, ood_class=4, seed=123)
        assert splits.train_ids.size == 24
        assert splits.val_ids.size == 6
        assert splits.test_ids.size == 70
        ood_nodes = set(np.flatnonzero(labels == 4))
        assert ood_nodes <= set(splits.test_ids)


def test_criterion_9_byte_identical_reruns(tmp_path):
    with criterion("9 determinism (byte-identical checkpoint, splits, metrics)"):
        import shutil

        data = tmp_path / "data"
        run = tmp_path / "run"
        ev = tmp_path / "eval"
        artifacts = []
        for _ in range(2):
            for d in (data, run, ev):
                shutil.rmtree(d, ignore_errors=True)
            # identical flags both times, including all paths
            assert cli_main(["gen", "--per-class", "40", "--seed", "3",
                             "-o", str(data)]) == 0
            assert cli_main(["train", "--data", str(data), "--ood-class", "3",
                             "--seed", "3", "--epochs", "10",
                             "--out", str(run)]) == 0
            assert cli_main(["eval", "--ckpt", str(run / "checkpoint.json"),
                             "--data", str(data), "--ood-class", "3",
                             "--out", str(ev)]) == 0
            artifacts.append({
                "checkpoint": (run / "checkpoint.json").read_bytes(),
                "splits": (run / "splits.json").read_bytes(),
                "metrics": (ev / "metrics.json").read_bytes(),
                "scores": (ev / "scores.tsv").read_bytes(),
            })
        assert artifacts[0] == artifacts[1]


def test_criterion_10_bench_linearity(tmp_path):
    with criterion("10 bench linearity (warm k=8 / k=1 within [4, 16])"):
        data = tmp_path / "data"
        out = tmp_path / "bench"
        assert cli_main(["gen", "--seed", "0", "-o", str(data)]) == 0
        assert cli_main(["bench", "--data", str(data), "--out", str(out)]) == 0
        report = json.loads((out / "bench.json").read_text())
        warm = report["propagate_warm_s"]
        ratio = warm["8"] / warm["1"]
        print(f"    warm times {warm}, ratio k8/k1 = {ratio:.2f}")
        assert 4.0 <= ratio <= 16.0
        assert report["compose_cold_s"] >= warm["1"]
