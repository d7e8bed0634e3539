from __future__ import annotations

import functools
import json

import numpy as np
import pytest
from pytest_mock import MockerFixture

from tempcrl._private.errors import ConfigError, ContractError, TempcrlError
from tempcrl.diffcore import Rng, const
from tempcrl.evaluate import (
    EvalConfig,
    GroupGraphFitter,
    MetricsReport,
    evaluate_oracle,
    evaluate_run,
    lemma1_check,
    posthoc_graph,
    prune_temporal,
    r2_matrix,
    r2_scores,
    r2_summary,
    shd,
    summarize,
)
from tempcrl.scm import CausalGraph, GeneratorConfig, Trajectory, generate
from tempcrl.train import TrainConfig, train

FAST = EvalConfig(predictor="linear", posthoc_steps=20, posthoc_batch=32, graph_samples=2)


@pytest.fixture(scope="module")
def trajectory() -> Trajectory:
    config = GeneratorConfig(
        kind="chain", k=2, t=300, calibration_batches=5, calibration_batch_size=200, entangler_samples=500
    )
    return generate(config, seed=0)[0]


def graph(instant: list[list[int]], temporal: list[list[int]] | None = None) -> CausalGraph:
    array = np.array(instant, dtype=np.int64)
    return CausalGraph(array, np.array(temporal, dtype=np.int64) if temporal is not None else np.zeros_like(array))


def test_evaluate__r2_summary():
    matrix = np.array([[0.3, 0.4], [0.9, 0.1], [-0.2, 0.8]])

    diag, sep = r2_summary(matrix)

    assert diag == pytest.approx(0.85)
    assert sep == pytest.approx(0.05)


def test_evaluate__r2_summary__single_factor():
    assert r2_summary(np.array([[0.0], [0.7]])) == (pytest.approx(0.7), 0.0)


def test_evaluate__r2_matrix__linear():
    rng = Rng(0)
    latents = rng.child("latents").normal(size=(400, 3))
    factors = np.stack([2.0 * latents[:, 1] + 1.0, latents[:, 2]], axis=1)

    matrix = r2_matrix(latents, factors, np.array([0, 1, 2]), 2, rng, predictor="linear")

    assert matrix.shape == (3, 2)
    assert matrix[1, 0] == pytest.approx(1.0)
    assert matrix[2, 1] == pytest.approx(1.0)
    assert matrix[1, 1] < 0.1
    assert matrix[0, 0] < 0.1


def test_evaluate__r2_matrix__empty_group():
    latents = Rng(0).normal(size=(100, 2))

    matrix = r2_matrix(latents, latents, np.array([1, 1]), 2, Rng(1), predictor="linear")

    assert np.all(matrix[0] == 0.0)
    assert np.all(matrix[2] == 0.0)
    assert np.allclose(matrix[1], 1.0)


def test_evaluate__r2_matrix__mlp():
    x = Rng(0).normal(size=(1000, 1))
    factors = np.tanh(2.0 * x)
    config = EvalConfig(mlp_steps=300, mlp_lr=1e-2, mlp_hidden=32)

    matrix = r2_matrix(x, factors, np.array([1]), 1, Rng(1), predictor="mlp", config=config)

    assert matrix[1, 0] > 0.8


@pytest.mark.parametrize(
    "rows, predictor, match",
    [
        ((10, 9), "linear", "rows"),
        ((3, 3), "linear", "Not enough samples"),
        ((50, 50), "forest", "Unknown R² predictor"),
    ],
    ids=["row-mismatch", "too-few", "unknown-predictor"],
)
def test_evaluate__r2_matrix__invalid(rows, predictor, match):
    latents, factors = np.zeros((rows[0], 2)), np.zeros((rows[1], 2))

    with pytest.raises(ContractError, match=match):
        r2_matrix(latents, factors, np.array([1, 2]), 2, Rng(0), predictor=predictor)


def test_evaluate__r2_scores__independent_without_entangler(trajectory: Trajectory):
    result = train(TrainConfig(batch_size=16, steps=1, flow_layers=1, hidden=8, graph_samples=2), trajectory)

    with pytest.raises(ContractError, match="entangler"):
        r2_scores(result.model, trajectory, Rng(0), config=EvalConfig(split="independent"))


@pytest.mark.parametrize(
    "pred, truth, expected",
    [
        (graph([[0, 1], [0, 0]]), graph([[0, 1], [0, 0]]), (0, 0)),
        (graph([[0, 1], [0, 0]]), graph([[0, 0], [1, 0]]), (1, 0)),
        (graph([[0, 0], [0, 0]]), graph([[0, 1], [0, 0]]), (1, 0)),
        (graph([[0, 1], [0, 0]], [[1, 0], [0, 0]]), graph([[0, 1], [0, 0]], [[0, 1], [0, 1]]), (0, 3)),
    ],
    ids=["equal", "reversed", "missing", "temporal"],
)
def test_evaluate__shd(pred, truth, expected):
    assert shd(pred, truth) == expected


def test_evaluate__shd__size_mismatch():
    with pytest.raises(ContractError, match="different sizes"):
        shd(graph([[0, 1], [0, 0]]), graph([[0, 1, 0], [0, 0, 1], [0, 0, 0]]))


def test_evaluate__MetricsReport__write(tmp_path):
    report = MetricsReport(
        np.array([[0.0, 0.0], [0.9, 0.1], [0.2, 0.8]]),
        shd_instant=1,
        shd_temporal=0,
        meta={"seed": 3, "graph_method": "enco", "predictor": "mlp", "split": "heldout"},
    )

    report.write(tmp_path / "metrics.json")
    loaded = MetricsReport.read(tmp_path / "metrics.json")

    assert np.array_equal(loaded.r2_matrix, report.r2_matrix)
    assert loaded.shd_instant == 1
    assert loaded.meta["seed"] == 3
    assert loaded.r2_diag == pytest.approx(0.85)


def test_evaluate__MetricsReport__write__missing_meta(tmp_path):
    with pytest.raises(ConfigError, match="meta.seed"):
        MetricsReport(np.zeros((2, 1))).write(tmp_path / "metrics.json")


def test_evaluate__MetricsReport__read__invalid(tmp_path):
    (tmp_path / "broken.json").write_text("{")
    (tmp_path / "partial.json").write_text(json.dumps({"schema_version": 1, "r2_matrix": [[0.0]]}))

    with pytest.raises(TempcrlError, match="Unable to read metrics"):
        MetricsReport.read(tmp_path / "missing.json")

    with pytest.raises(TempcrlError, match="Unable to read metrics"):
        MetricsReport.read(tmp_path / "broken.json")

    with pytest.raises(ConfigError, match="r2_diag"):
        MetricsReport.read(tmp_path / "partial.json")


def test_evaluate__summarize(tmp_path):
    meta = {"seed": 0, "graph_method": "enco", "predictor": "mlp", "split": "heldout"}
    reports = [
        MetricsReport(np.array([[0.0], [0.8]]), shd_instant=2, meta=meta),
        MetricsReport(np.array([[0.0], [0.6]]), meta=meta),
    ]

    summary = summarize(reports, tmp_path / "summary.csv").set_index("metric")

    assert summary.loc["r2_diag", "mean"] == pytest.approx(0.7)
    assert summary.loc["r2_diag", "std"] == pytest.approx(0.1)
    assert summary.loc["shd_instant", "mean"] == pytest.approx(2.0)
    assert summary.loc["shd_instant", "count"] == 1
    assert (tmp_path / "summary.csv").exists()


def test_evaluate__lemma1_check():
    gap, dependence_alt, dependence_true, gap_without_edge = lemma1_check(Rng(0), samples=20000)

    assert gap < 1e-3
    assert gap_without_edge > 0.5
    assert dependence_alt == pytest.approx(1 / np.sqrt(2), abs=0.03)
    assert dependence_true < 0.05


def test_evaluate__GroupGraphFitter__fixed_orientations():
    orientations = np.zeros((3, 3))
    orientations[1, 2] = 3.0
    config = EvalConfig(posthoc_steps=5, posthoc_batch=16, graph_samples=2)
    fitter = GroupGraphFitter(2, 2, np.array([1, 2]), Rng(0), hidden=8, orientations=orientations, config=config)
    z = Rng(1).normal(size=(50, 2))

    probs = fitter.fit_instant(z, np.zeros((50, 2)), Rng(2))

    assert probs.shape == (3, 3)
    assert fitter.graph.theta.values[1, 2] == 3.0
    assert fitter.graph.theta.values[2, 1] == -3.0
    assert np.all(probs[0] == 0.0)


def test_evaluate__evaluate_oracle(trajectory: Trajectory):
    report, matrices = evaluate_oracle(trajectory, seed=1, config=FAST)

    assert report.r2_matrix.shape == (3, 2)
    assert np.all(report.r2_matrix[0] == 0.0)
    assert report.r2_diag > 0.99
    assert report.meta["graph_method"] == "oracle"
    assert isinstance(report.shd_instant, int)
    assert isinstance(report.shd_temporal, int)
    assert {"posthoc", "instant", "temporal", "temporal_probs"} <= set(matrices)


def test_evaluate__evaluate_run(trajectory: Trajectory):
    result = train(
        TrainConfig(batch_size=16, steps=2, flow_layers=1, hidden=8, graph_samples=2), trajectory, seed=0
    )

    report, matrices = evaluate_run(result, trajectory, seed=2, config=FAST)

    assert report.r2_matrix.shape == (3, 2)
    assert report.meta["graph_method"] == "enco"
    assert report.meta["step"] == 2
    assert report.meta["M"] == 4
    assert matrices["edge_probs"].shape == (3, 3)
    assert matrices["temporal"].shape == (2, 2)
    assert isinstance(report.shd_instant, int)


def test_evaluate__GroupGraphFitter__prune_instant(mocker: MockerFixture):
    strength = np.zeros((4, 4))
    strength[1, 2], strength[1, 3], strength[2, 3] = 0.3, 0.5, 0.001

    def logprob(model, z_t, z_t1, targets, assign, graphs, **kwargs):
        per_group = np.einsum("gij,ij->gj", graphs[:, 0], strength)
        return const(per_group[:, None, :] + np.zeros((1, z_t.shape[0], 1)))

    mocker.patch("tempcrl.evaluate.prior_logprob", side_effect=logprob)
    fitter = GroupGraphFitter(3, 3, np.array([1, 2, 3]), Rng(0), hidden=8, config=EvalConfig(prune_samples=100))
    instant = graph([[0, 1, 1], [0, 0, 1], [0, 0, 0]])
    probs = np.zeros((4, 4))
    probs[1, 2], probs[1, 3], probs[2, 3] = 0.9, 0.8, 0.6
    z, targets = Rng(1).normal(size=(200, 3)), np.zeros((200, 3))

    pruned = fitter.prune_instant(z, targets, instant, probs)

    assert pruned.instant.tolist() == [[0, 1, 1], [0, 0, 0], [0, 0, 0]]


def test_evaluate__GroupGraphFitter__prune_instant__disabled(mocker: MockerFixture):
    logprob = mocker.patch("tempcrl.evaluate.prior_logprob")
    fitter = GroupGraphFitter(2, 2, np.array([1, 2]), Rng(0), hidden=8, config=EvalConfig(prune_samples=0))
    instant = graph([[0, 1], [0, 0]])

    pruned = fitter.prune_instant(Rng(1).normal(size=(50, 2)), np.zeros((50, 2)), instant, np.full((3, 3), 0.9))

    assert pruned is instant
    assert logprob.call_count == 0


def planted_trajectory(T: int, seed: int) -> tuple[np.ndarray, np.ndarray, CausalGraph]:
    """
    Linear Gaussian process over three variables with edge C1 -> C3 and
    temporal edges C1 -> C1, C1 -> C2, C2 -> C3, C3 -> C3.
    """
    rng = Rng(seed)
    temporal = np.array([[0.7, 0.8, 0.0], [0.0, 0.0, -0.8], [0.0, 0.0, 0.5]])
    targets = np.eye(5, dtype=np.int64)[rng.child("targets").integers(0, 5, size=T)][:, 1:4]
    targets[0] = 0
    noise = rng.child("noise").normal(size=(T, 3))
    replaced = rng.child("int").normal(size=(T, 3))

    z = np.zeros((T, 3))
    for t in range(1, T):
        mean = z[t - 1] @ temporal
        for i in range(3):
            value = mean[i] + 0.5 * noise[t, i] + (0.9 * z[t, 0] if i == 2 else 0.0)
            z[t, i] = replaced[t, i] if targets[t, i] else value

    truth = graph([[0, 0, 1], [0, 0, 0], [0, 0, 0]], (temporal != 0).astype(np.int64).tolist())
    return z, targets, truth


@pytest.mark.slow
def test_evaluate__posthoc_graph__planted_graph():
    z, targets, truth = planted_trajectory(20000, seed=0)

    instant, fitter = posthoc_graph(z, targets, np.arange(1, 4), 3, Rng(1), config=EvalConfig(posthoc_steps=2000))
    temporal, _ = prune_temporal(fitter, z, targets, instant, Rng(2))

    assert instant.instant.tolist() == truth.instant.tolist()
    assert temporal.tolist() == truth.temporal.tolist()


@pytest.mark.slow
def test_evaluate__posthoc_graph__chain_factors():
    recovered = 0
    for seed in range(1, 6):
        trajectory, _ = generate(GeneratorConfig(kind="chain", k=4, t=50000), seed=seed)
        instant, _ = posthoc_graph(trajectory.factors, trajectory.targets, np.arange(1, 5), 4, Rng(seed))
        recovered += shd(instant, trajectory.graph)[0] == 0

    assert recovered >= 4


@functools.cache
def desk_scale_run(seed: int, method: str, fp_noise: float = 0.0) -> MetricsReport:
    trajectory, _ = generate(GeneratorConfig(kind="random", k=4, t=100000, fp_noise=fp_noise), seed=seed)
    result = train(TrainConfig(graph_method=method, epochs=50), trajectory, seed=seed)
    return evaluate_run(result, trajectory, seed=seed)[0]


@pytest.mark.slow
def test_evaluate__evaluate_run__random_graph():
    reports = [desk_scale_run(seed, "enco") for seed in range(1, 6)]

    passed = [r.r2_diag >= 0.95 and r.r2_sep <= 0.05 and r.shd_instant <= 1 for r in reports]
    assert sum(passed) >= 3


@pytest.mark.slow
def test_evaluate__evaluate_run__without_graph_learning():
    seeds = range(1, 6)
    enco = [desk_scale_run(seed, "enco") for seed in seeds]
    none = [desk_scale_run(seed, "none") for seed in seeds]

    assert np.mean([r.r2_sep for r in none]) > np.mean([r.r2_sep for r in enco])
    assert np.mean([r.shd_instant for r in none]) > np.mean([r.shd_instant for r in enco])


@pytest.mark.slow
def test_evaluate__evaluate_run__noisy_targets():
    report = desk_scale_run(1, "enco", fp_noise=0.1)

    assert report.r2_diag >= 0.90
