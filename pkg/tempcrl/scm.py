from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np
import pandas as pd

from ._private.errors import CalibrationError, ContractError, TempcrlError
from ._private.logging import TempcrlLogger
from ._private.types import GraphKind
from .diffcore import Rng
from .flows import FlowStack, flow_apply, make_entangler

__all__ = [
    "GENERATOR_VERSION",
    "CausalGraph",
    "GeneratorConfig",
    "GroundTruthSCM",
    "MechanismNet",
    "Trajectory",
    "build_scm",
    "calibrate_mechanisms",
    "check_faithfulness",
    "dot_graph",
    "generate",
    "generate_dataset",
    "pad_nuisance",
    "rollout",
    "sample_graph",
    "sample_targets",
    "sample_targets_batch",
    "scm_step",
]

GENERATOR_VERSION = "tempcrl-generator-2"

logger = TempcrlLogger.GetLogger()


def dot_graph(
    instant: np.ndarray,
    temporal: np.ndarray | None = None,
    *,
    names: list[str] | None = None,
    probabilities: np.ndarray | None = None,
    name: str = "causal_graph",
) -> str:
    """
    Render adjacency matrices as a DOT digraph.

    Instantaneous edges are solid, temporal edges dashed. If
    ``probabilities`` is given, instantaneous edges are labeled with the
    edge probability rounded to 3 decimals.
    """
    size = instant.shape[0]
    names = names if names is not None else [f"C{i + 1}" for i in range(size)]
    lines = [f"digraph {name} {{"]
    for node in names:
        lines.append(f'  "{node}";')

    for i, j in zip(*np.nonzero(instant)):
        label = f' label="{probabilities[i, j]:.3f}"' if probabilities is not None else ""
        lines.append(f'  "{names[i]}" -> "{names[j]}" [style=solid{label}];')

    if temporal is not None:
        for i, j in zip(*np.nonzero(temporal)):
            lines.append(f'  "{names[i]}" -> "{names[j]}" [style=dashed];')

    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class CausalGraph(object):
    """
    Instantaneous and temporal structure over ``K`` causal variables.

    Entry ``(i, j)`` of :attr:`instant` is 1 if ``C_i -> C_j`` within a time
    step, entry ``(i, j)`` of :attr:`temporal` is 1 if ``C_i^t -> C_j^{t+1}``.
    """

    instant: np.ndarray
    temporal: np.ndarray

    def __post_init__(self) -> None:
        self.instant = np.asarray(self.instant, dtype=np.int64)
        self.temporal = np.asarray(self.temporal, dtype=np.int64)
        if self.instant.ndim != 2 or self.instant.shape[0] != self.instant.shape[1]:
            raise ContractError(f"Instantaneous adjacency must be square, got {self.instant.shape}")

        if self.temporal.shape != self.instant.shape:
            raise ContractError(f"Temporal adjacency has shape {self.temporal.shape}, expected {self.instant.shape}")

        if np.any(np.diag(self.instant)):
            raise ContractError("Instantaneous adjacency must have zero diagonal")

        if not self.is_acyclic(self.instant):
            raise ContractError("Instantaneous graph contains a cycle")

    @property
    def K(self) -> int:
        return self.instant.shape[0]

    @property
    def num_instant_edges(self) -> int:
        return int(self.instant.sum())

    @property
    def num_temporal_edges(self) -> int:
        return int(self.temporal.sum())

    @staticmethod
    def is_acyclic(adjacency: np.ndarray) -> bool:
        return nx.is_directed_acyclic_graph(nx.from_numpy_array(np.asarray(adjacency), create_using=nx.DiGraph))

    def topological_order(self) -> list[int]:
        graph = nx.from_numpy_array(self.instant, create_using=nx.DiGraph)
        return [int(x) for x in nx.lexicographical_topological_sort(graph)]

    def to_dict(self) -> dict[str, Any]:
        return {"instant": self.instant.tolist(), "temporal": self.temporal.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CausalGraph:
        return cls(instant=np.array(d["instant"]), temporal=np.array(d["temporal"]))

    def to_dot(self, probabilities: np.ndarray | None = None) -> str:
        return dot_graph(self.instant, self.temporal, probabilities=probabilities)


def sample_graph(kind: GraphKind, K: int, rng: Rng, temporal_prob: float = 0.25) -> CausalGraph:
    """
    Sample instantaneous and temporal graph.

    Instantaneous edges are sampled over pairs and oriented along a random
    variable ordering: ``random`` keeps each pair with probability 0.5,
    ``chain`` links consecutive variables of the ordering, ``full`` keeps all
    pairs and ``empty`` none. Temporal edges are i.i.d. with
    ``temporal_prob``; a variable without temporal parent gets a self-edge.
    """
    if K < 2:
        raise ContractError(f"At least two causal variables are required, got K={K}")

    order = rng.permutation(K)
    rank = np.arange(K)[:, None] < np.arange(K)[None, :]
    match kind:
        case "random":
            keep = rank & (rng.uniform(size=(K, K)) < 0.5)
        case "chain":
            keep = np.eye(K, k=1, dtype=bool)
        case "full":
            keep = rank
        case "empty":
            keep = np.zeros((K, K), dtype=bool)
        case _:
            raise ContractError(f"Unknown graph kind: {kind}")

    instant = np.zeros((K, K), dtype=np.int64)
    for a, b in zip(*np.nonzero(keep)):
        instant[order[a], order[b]] = 1

    temporal = (rng.uniform(size=(K, K)) < temporal_prob).astype(np.int64)
    for j in range(K):
        if not temporal[:, j].any():
            temporal[j, j] = 1

    return CausalGraph(instant=instant, temporal=temporal)


class _Norm(object):
    """
    Batch normalization without affine parameters. Batch statistics are used
    and tracked while calibrating, running statistics once frozen.
    """

    momentum = 0.1
    eps = 1e-5

    def __init__(self, width: int) -> None:
        self.running_mean: np.ndarray = np.zeros(width)
        self.running_var: np.ndarray = np.ones(width)

    def __call__(self, x: np.ndarray, calibrating: bool) -> np.ndarray:
        if not calibrating:
            return (x - self.running_mean) / np.sqrt(self.running_var + self.eps)

        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if np.any(var < 1e-8):
            raise CalibrationError(f"Degenerate variance {var.min():.3g} during calibration")

        self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
        self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        return (x - mean) / np.sqrt(var + self.eps)


class MechanismNet(object):
    """
    Random mean function of one causal variable.

    Input is the concatenation ``[C^t, C^{t+1}]``; the input mask keeps only
    temporal parents from ``C^t`` and instantaneous parents from
    ``C^{t+1}``.
    """

    hidden = 32
    slope = 0.1

    def __init__(self, mask: np.ndarray, rng: Rng) -> None:
        self.mask: np.ndarray = np.asarray(mask, dtype=np.float64)
        self.frozen: bool = False

        widths = [self.mask.shape[0], self.hidden, self.hidden, 1]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=(fan_out,)))

        self.norms: list[_Norm] = [_Norm(w) for w in widths[1:]]

    def __call__(self, inputs: np.ndarray, calibrating: bool = False) -> np.ndarray:
        if calibrating and self.frozen:
            raise CalibrationError("Mechanism statistics are frozen")

        h = inputs * self.mask
        for i, (weight, bias, norm) in enumerate(zip(self.weights, self.biases, self.norms)):
            h = norm(h @ weight + bias, calibrating)
            if i < len(self.weights) - 1:
                h = np.where(h > 0, h, self.slope * h)

        return h[:, 0]


@dataclass
class GroundTruthSCM(object):
    """
    Latent causal process: graph, mechanisms and intervention policy.
    """

    graph: CausalGraph
    mechanisms: list[MechanismNet]
    obs_sigma: float = 0.3
    fp_noise: float = 0.0
    order: list[int] = field(init=False)

    def __post_init__(self) -> None:
        self.order = self.graph.topological_order()

    @property
    def K(self) -> int:
        return self.graph.K

    @property
    def calibrated(self) -> bool:
        return all(m.frozen for m in self.mechanisms)

    def step_batch(
        self,
        previous: np.ndarray,
        executed: np.ndarray,
        obs_noise: np.ndarray,
        int_noise: np.ndarray,
        calibrating: bool = False,
    ) -> np.ndarray:
        """
        Ancestral sampling of one time step for a batch of previous states.
        """
        current = np.zeros_like(previous)
        for i in self.order:
            mean = self.mechanisms[i](np.concatenate([previous, current], axis=1), calibrating)
            current[:, i] = np.where(executed[:, i] > 0, int_noise[:, i], mean + self.obs_sigma * obs_noise[:, i])

        return current


def _init_mechanisms(graph: CausalGraph, rng: Rng) -> list[MechanismNet]:
    mechanisms = []
    for i in range(graph.K):
        mask = np.concatenate([graph.temporal[:, i], graph.instant[:, i]])
        mechanisms.append(MechanismNet(mask, rng.child("mechanism", i)))

    return mechanisms


def sample_targets_batch(K: int, n: int, rng: Rng, fp_noise: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw ``n`` single-target intervention vectors.

    Each variable is the target with probability 1/(K+2), no variable with
    probability 2/(K+2). With ``fp_noise`` a flagged intervention is not
    executed with that probability.

    :return: Flagged targets and executed interventions, both ``(n, K)``.
    :rtype: tuple[np.ndarray, np.ndarray]
    """
    if not 0.0 <= fp_noise <= 1.0:
        raise ContractError(f"fp_noise must be within [0, 1], got {fp_noise}")

    choice = rng.integers(0, K + 2, size=n)
    flags = np.zeros((n, K), dtype=np.int64)
    rows = np.nonzero(choice < K)[0]
    flags[rows, choice[rows]] = 1

    executed = flags.copy()
    if fp_noise > 0:
        dropped = rng.uniform(size=n) < fp_noise
        executed[dropped] = 0

    return flags, executed


def sample_targets(K: int, rng: Rng, fp_noise: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """
    Single-row variant of :func:`sample_targets_batch`.
    """
    flags, executed = sample_targets_batch(K, 1, rng, fp_noise)
    return flags[0], executed[0]


def calibrate_mechanisms(
    scm: GroundTruthSCM, rng: Rng, batches: int = 100, batch_size: int = 1000
) -> GroundTruthSCM:
    """
    Fit normalization statistics by sequential sampling, each batch being the
    previous state of the next one, then freeze them.

    :raises CalibrationError: On degenerate variance.
    """
    state = rng.child("initial").normal(size=(batch_size, scm.K))
    for b in range(batches):
        sub = rng.child("batch", b)
        _, executed = sample_targets_batch(scm.K, batch_size, sub.child("targets"))
        state = scm.step_batch(
            state,
            executed,
            sub.child("obs").normal(size=state.shape),
            sub.child("int").normal(size=state.shape),
            calibrating=True,
        )

    for mechanism in scm.mechanisms:
        mechanism.frozen = True

    return scm


def build_scm(
    graph: CausalGraph, rng: Rng, *, obs_sigma: float = 0.3, fp_noise: float = 0.0, retries: int = 5, **kwargs
) -> GroundTruthSCM:
    """
    Initialize and calibrate mechanisms for ``graph``, re-initializing with a
    new substream on calibration failure.
    """
    for attempt in range(retries + 1):
        scm = GroundTruthSCM(graph, _init_mechanisms(graph, rng.child("init", attempt)), obs_sigma, fp_noise)
        try:
            return calibrate_mechanisms(scm, rng.child("calibrate", attempt), **kwargs)
        except CalibrationError as e:
            logger.notice("Mechanism calibration failed, re-initializing", attempt=attempt, error=str(e))

    raise CalibrationError(f"Mechanism calibration failed {retries + 1} times")


def scm_step(scm: GroundTruthSCM, previous: np.ndarray, targets: np.ndarray, rng: Rng) -> np.ndarray:
    """
    Sample ``C^{t+1}`` given ``C^t`` and executed interventions.
    """
    previous = np.asarray(previous, dtype=np.float64)[None, :]
    targets = np.asarray(targets)[None, :]
    return scm.step_batch(
        previous,
        targets,
        rng.child("obs").normal(size=previous.shape),
        rng.child("int").normal(size=previous.shape),
    )[0]


@dataclass
class Trajectory(object):
    """
    Single contiguous rollout: factors ``C``, flagged targets ``I`` and
    observations ``x``. Row ``t`` of the targets holds the interventions
    that produced row ``t`` of the factors.
    """

    factors: np.ndarray
    targets: np.ndarray
    observations: np.ndarray
    graph: CausalGraph | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.observations.shape[0]

    @property
    def K(self) -> int:
        return self.targets.shape[1]

    @property
    def D(self) -> int:
        return self.observations.shape[1]

    def manifest(self) -> dict[str, Any]:
        manifest = {
            "generator_version": GENERATOR_VERSION,
            "K": self.K,
            "D": self.D,
            "T": self.T,
            **self.meta,
        }
        if self.graph is not None:
            manifest.update(self.graph.to_dict())

        return manifest

    def save(self, out_dir: str | Path) -> None:
        """
        Write ``data.csv``, ``manifest.json`` and ``graph.dot`` (if the graph
        is known).
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        columns: dict[str, Any] = {"t": np.arange(self.T)}
        columns.update({f"C_{i + 1}": self.factors[:, i] for i in range(self.K)})
        columns.update({f"I_{i + 1}": self.targets[:, i].astype(np.int64) for i in range(self.K)})
        columns.update({f"x_{i + 1}": self.observations[:, i] for i in range(self.D)})
        pd.DataFrame(columns).to_csv(out / "data.csv", index=False, float_format="%.17g")

        with open(out / "manifest.json", "w") as f:
            json.dump(self.manifest(), f, indent=2)
            f.write("\n")

        if self.graph is not None:
            (out / "graph.dot").write_text(self.graph.to_dot())

    @classmethod
    def load(cls, data_dir: str | Path) -> Trajectory:
        """
        Read a dataset written by :meth:`save`.

        :raises TempcrlError: If files are missing or inconsistent.
        """
        path = Path(data_dir)
        try:
            with open(path / "manifest.json") as f:
                manifest = json.load(f)

            frame = pd.read_csv(path / "data.csv", float_precision="round_trip")
        except (OSError, ValueError) as e:
            raise TempcrlError(f"Unable to load dataset from {path}: {e}") from e

        K, D = int(manifest["K"]), int(manifest["D"])
        factors = frame[[f"C_{i + 1}" for i in range(K)]].to_numpy(dtype=np.float64)
        targets = frame[[f"I_{i + 1}" for i in range(K)]].to_numpy(dtype=np.int64)
        observations = frame[[f"x_{i + 1}" for i in range(D)]].to_numpy(dtype=np.float64)

        graph = CausalGraph.from_dict(manifest) if "instant" in manifest and "temporal" in manifest else None
        meta = {
            k: v for k, v in manifest.items() if k not in ("generator_version", "K", "D", "T", "instant", "temporal")
        }
        return cls(factors, targets, observations, graph, meta)


def rollout(scm: GroundTruthSCM, rng: Rng, T: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Simulate ``T`` consecutive time steps.

    :return: Factors ``(T, K)`` and flagged targets ``(T, K)``; the first row
        is drawn from N(0, 1) without intervention.
    :rtype: tuple[np.ndarray, np.ndarray]
    """
    if not scm.calibrated:
        raise ContractError("Mechanisms must be calibrated before generating data")

    K = scm.K
    flags, executed = sample_targets_batch(K, T, rng.child("targets"), scm.fp_noise)
    flags[0] = 0
    executed[0] = 0

    obs_noise = rng.child("obs").normal(size=(T, K))
    int_noise = rng.child("int").normal(size=(T, K))
    factors = np.empty((T, K))
    factors[0] = rng.child("initial").normal(size=K)
    for t in range(1, T):
        factors[t] = scm.step_batch(
            factors[t - 1 : t], executed[t : t + 1], obs_noise[t : t + 1], int_noise[t : t + 1]
        )[0]

    return factors, flags


def pad_nuisance(factors: np.ndarray, dim: int, rng: Rng) -> np.ndarray:
    """
    Append independent standard normal columns to ``factors`` up to ``dim``.
    """
    return np.concatenate([factors, rng.normal(size=(factors.shape[0], dim - factors.shape[1]))], axis=1)


def generate_dataset(scm: GroundTruthSCM, entangler: FlowStack, rng: Rng, T: int = 150000) -> Trajectory:
    """
    Roll out ``T`` time steps and observe every factor row through the
    entangler. If the entangler is wider than ``K``, the factors are padded
    with independent standard normal nuisance coordinates that carry no
    causal information.

    :raises ContractError: If the entangler is narrower than ``K``.
    """
    if entangler.dim < scm.K:
        raise ContractError(f"Entangler has dim {entangler.dim}, at least K={scm.K} is required")

    factors, flags = rollout(scm, rng, T)
    observations = flow_apply(entangler, pad_nuisance(factors, entangler.dim, rng.child("nuisance")))
    return Trajectory(factors, flags, observations, scm.graph, {"fp_noise": scm.fp_noise, "obs_sigma": scm.obs_sigma})


def check_faithfulness(scm: GroundTruthSCM, rng: Rng, samples: int = 50000, threshold: float = 0.05) -> list[tuple]:
    """
    Flag true instantaneous edges whose partial correlation, given all other
    variables, stays below ``threshold`` on observational samples.

    :return: Violating edges as ``(i, j, partial correlation)``.
    :rtype: list[tuple]
    """
    K = scm.K
    previous = rng.child("previous").normal(size=(samples, K))
    current = scm.step_batch(
        previous, np.zeros((samples, K)), rng.child("obs").normal(size=(samples, K)), np.zeros((samples, K))
    )
    precision = np.linalg.inv(np.cov(current, rowvar=False))
    scale = np.sqrt(np.outer(np.diag(precision), np.diag(precision)))
    partial = -precision / scale

    violations = []
    for i, j in zip(*np.nonzero(scm.graph.instant)):
        if abs(partial[i, j]) < threshold:
            violations.append((int(i), int(j), float(partial[i, j])))
            logger.notice("Possible faithfulness violation", edge=f"C{i + 1} -> C{j + 1}", pcorr=float(partial[i, j]))

    return violations


@dataclass
class GeneratorConfig(object):
    """
    Options of the synthetic data generator.
    """

    kind: str = "random"
    k: int = 4
    t: int = 100000
    temporal_prob: float = 0.25
    obs_sigma: float = 0.3
    fp_noise: float = 0.0
    calibration_batches: int = 100
    calibration_batch_size: int = 1000
    entangler_samples: int = 10000
    obs_dim: int | None = None

    @property
    def dim(self) -> int:
        """
        Observation dimension, twice the number of causal variables unless
        set explicitly. Dimensions beyond ``k`` are nuisance coordinates.
        """
        return self.obs_dim if self.obs_dim is not None else 2 * self.k


def generate(config: GeneratorConfig, seed: int) -> tuple[Trajectory, FlowStack]:
    """
    Sample a graph, calibrate its mechanisms, build the entangler and roll
    out a dataset, all from streams of ``seed``.

    :return: Dataset and the entangler it was observed through.
    :raises CalibrationError: If the mechanisms can not be calibrated.
    """
    rng = Rng(seed).child("generate")
    logger.phase("Generating: graph and mechanisms")
    graph = sample_graph(config.kind, config.k, rng.child("graph"), config.temporal_prob)  # type: ignore[arg-type]
    scm = build_scm(
        graph,
        rng.child("scm"),
        obs_sigma=config.obs_sigma,
        fp_noise=config.fp_noise,
        batches=config.calibration_batches,
        batch_size=config.calibration_batch_size,
    )
    check_faithfulness(scm, rng.child("faithfulness"))

    logger.phase("Generating: entangler")
    calibration, _ = rollout(scm, rng.child("calibration"), config.entangler_samples)
    calibration = pad_nuisance(calibration, config.dim, rng.child("calibration").child("nuisance"))
    entangler = make_entangler(config.dim, rng.child("entangler"), calibration)

    logger.phase("Generating: rollout")
    trajectory = generate_dataset(scm, entangler, rng.child("data"), config.t)
    trajectory.meta.update({"seed": seed, "kind": config.kind, "temporal_prob": config.temporal_prob})
    logger.info(
        "Dataset generated",
        extra={
            "data": {
                "K": trajectory.K,
                "D": trajectory.D,
                "T": trajectory.T,
                "instant edges": graph.num_instant_edges,
                "temporal edges": graph.num_temporal_edges,
            }
        },
    )
    return trajectory, entangler
