"""Decay-weighted, baseline-corrected cross-similarity scoring of aligned trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import AggregationError, InputError
from .alignment import AlignmentPath, dtw_align, fastdtw_align
from .embeddings import EmbeddedTrajectory


@dataclass(frozen=True)
class NodeSimilarityConfig:
    """Gaussian cross-similarity settings.

    bandwidth is either the string "median" (median pairwise Euclidean
    distance over the task's vectors, computed once per task) or a fixed
    positive sigma.
    """

    bandwidth: Union[str, float] = "median"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise InputError(f"unknown bandwidth {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise InputError(f"fixed bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class TaskScore:
    task_id: str
    score: float
    per_reference: tuple[float, ...]
    chosen_reference: int
    z_rand: tuple[float, ...]


def median_heuristic_bandwidth(vectors: np.ndarray) -> float:
    """Median pairwise Euclidean distance; falls back to 1.0 when degenerate."""
    n = vectors.shape[0]
    if n < 2:
        return 1.0
    sq = np.sum(vectors**2, axis=1)
    dist_sq = np.maximum(sq[:, None] + sq[None, :] - 2.0 * vectors @ vectors.T, 0.0)
    upper = dist_sq[np.triu_indices(n, k=1)]
    median = float(np.median(np.sqrt(upper)))
    return median if median > 0.0 else 1.0


def resolve_bandwidth(config: NodeSimilarityConfig, *trajectories: EmbeddedTrajectory) -> float:
    if isinstance(config.bandwidth, float) or isinstance(config.bandwidth, int):
        return float(config.bandwidth)
    return median_heuristic_bandwidth(np.vstack([t.vectors for t in trajectories]))


def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return math.exp(-float(np.dot(diff, diff)) / (2.0 * sigma * sigma))


def node_similarity(
    ref_samples: Sequence[np.ndarray], test_samples: Sequence[np.ndarray], sigma: float
) -> float:
    """Mean Gaussian kernel over all cross pairs of reference and test samples."""
    if not len(ref_samples) or not len(test_samples):
        raise InputError("node similarity requires non-empty sample sets")
    ref = np.atleast_2d(np.asarray(ref_samples, dtype=np.float64))
    test = np.atleast_2d(np.asarray(test_samples, dtype=np.float64))
    if ref.shape[1] != test.shape[1]:
        raise InputError(f"dimension mismatch: {ref.shape[1]} vs {test.shape[1]}")
    total = 0.0
    for x in ref:
        for y in test:
            total += gaussian_kernel(x, y, sigma)
    return total / (ref.shape[0] * test.shape[0])


def decay(i: int, j: int) -> float:
    """Linear distance decay between original positions of an aligned pair."""
    return 1.0 / (1.0 + abs(i - j))


def _align(
    ref: EmbeddedTrajectory, test: EmbeddedTrajectory, radius: Optional[int]
) -> AlignmentPath:
    if radius is None:
        return dtw_align(ref, test)
    return fastdtw_align(ref, test, radius)


def _kernel_row(ref: EmbeddedTrajectory, test: EmbeddedTrajectory, path: AlignmentPath, sigma: float) -> list[float]:
    return [
        decay(i, j) * gaussian_kernel(ref.vectors[i], test.vectors[j], sigma) for i, j in path.pairs
    ]


def vertex_dtw_single(
    ref: EmbeddedTrajectory,
    test: EmbeddedTrajectory,
    z_rand: float,
    config: NodeSimilarityConfig,
    radius: Optional[int] = None,
    sigma: Optional[float] = None,
) -> float:
    """Score one test trajectory against one reference.

    Averages clamp([0,1], decay * kernel - z_rand) over the alignment path.
    """
    if sigma is None:
        sigma = resolve_bandwidth(config, ref, test)
    path = _align(ref, test, radius)
    terms = _kernel_row(ref, test, path, sigma)
    total = sum(min(max(0.0, term - z_rand), 1.0) for term in terms)
    return total / len(terms)


def compute_z_rand(
    ref: EmbeddedTrajectory,
    baseline: EmbeddedTrajectory,
    config: NodeSimilarityConfig,
    radius: Optional[int] = None,
    sigma: Optional[float] = None,
) -> float:
    """Unclamped mean of decay * kernel along the baseline-to-reference alignment."""
    if sigma is None:
        sigma = resolve_bandwidth(config, ref, baseline)
    path = _align(ref, baseline, radius)
    terms = _kernel_row(ref, baseline, path, sigma)
    return sum(terms) / len(terms)


def score_task(
    refs: Sequence[EmbeddedTrajectory],
    test: EmbeddedTrajectory,
    baseline: EmbeddedTrajectory,
    config: NodeSimilarityConfig,
    radius: Optional[int] = None,
) -> TaskScore:
    """Score against every reference and keep the maximum (lowest index on ties).

    The median-heuristic bandwidth is resolved once per task, over the union of
    all reference and test vectors, and reused for the baseline correction.
    """
    if not refs:
        raise InputError(f"task {test.task_id!r}: at least one reference is required")
    sigma = (
        float(config.bandwidth)
        if not isinstance(config.bandwidth, str)
        else median_heuristic_bandwidth(np.vstack([t.vectors for t in (*refs, test)]))
    )
    z_values: list[float] = []
    scores: list[float] = []
    for ref in refs:
        z = compute_z_rand(ref, baseline, config, radius=radius, sigma=sigma)
        z_values.append(z)
        scores.append(vertex_dtw_single(ref, test, z, config, radius=radius, sigma=sigma))
    best = max(range(len(scores)), key=lambda r: (scores[r], -r))
    return TaskScore(
        task_id=test.task_id,
        score=scores[best],
        per_reference=tuple(scores),
        chosen_reference=best,
        z_rand=tuple(z_values),
    )


def aggregate_scores(
    scores: Sequence[TaskScore],
    weighting: str = "uniform",
    exclude_trivial: bool = False,
    capability_groups: Optional[dict[str, int]] = None,
    trivial_tasks: Optional[set[str]] = None,
) -> float:
    """Aggregate task scores: plain mean, or mean of within-capability-group means."""
    if weighting not in ("uniform", "capability"):
        raise InputError(f"unknown weighting {weighting!r}")
    kept = list(scores)
    if exclude_trivial:
        trivial = trivial_tasks or set()
        kept = [s for s in kept if s.task_id not in trivial]
    if not kept:
        raise AggregationError("no task scores remain after exclusion")
    if weighting == "uniform":
        return sum(s.score for s in kept) / len(kept)
    if capability_groups is None:
        raise InputError("capability weighting requires a task-to-group mapping")
    by_group: dict[int, list[float]] = {}
    for s in kept:
        if s.task_id not in capability_groups:
            raise InputError(f"task {s.task_id!r} is not mapped to any capability group")
        by_group.setdefault(capability_groups[s.task_id], []).append(s.score)
    return sum(sum(v) / len(v) for v in by_group.values()) / len(by_group)
