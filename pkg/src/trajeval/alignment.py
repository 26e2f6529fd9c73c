"""Dynamic time warping under cosine distance: exact and multiresolution approximate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .embeddings import EmbeddedTrajectory


@dataclass(frozen=True)
class AlignmentPath:
    """Monotone index-pair path from (0,0) to (m-1,n-1) with its summed cosine cost."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def _normalized(matrix: np.ndarray, label: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InputError(f"{label} contains a zero vector; cosine distance is undefined")
    return matrix / norms


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise InputError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise InputError("cosine distance is undefined for a zero vector")
    return float(1.0 - np.dot(u, v) / (nu * nv))


def cost_matrix(ref: EmbeddedTrajectory, test: EmbeddedTrajectory) -> np.ndarray:
    """Pairwise cosine distances, ref steps as rows, test steps as columns."""
    if ref.dim != test.dim:
        raise InputError(f"dimension mismatch: ref dim {ref.dim} vs test dim {test.dim}")
    a = _normalized(np.asarray(ref.vectors, dtype=np.float64), f"reference {ref.task_id!r}")
    b = _normalized(np.asarray(test.vectors, dtype=np.float64), f"test {test.task_id!r}")
    return 1.0 - a @ b.T


def _accumulate_kernel(cost: np.ndarray, acc: np.ndarray) -> None:
    m, n = cost.shape
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i - 1, j - 1] + best


try:  # same operation order as the fallback, so results are bit-identical
    from numba import njit

    _accumulate_jit = njit(cache=True, nogil=True)(_accumulate_kernel)
except ImportError:  # pragma: no cover
    _accumulate_jit = _accumulate_kernel


def _accumulate(cost: np.ndarray) -> np.ndarray:
    """Accumulated-cost matrix with an inf-padded border row/column."""
    m, n = cost.shape
    acc = np.full((m + 1, n + 1), np.inf)
    acc[0, 0] = 0.0
    _accumulate_jit(np.ascontiguousarray(cost), acc)
    return acc


def _traceback(acc: np.ndarray) -> list[tuple[int, int]]:
    """Walk the accumulated matrix back from the corner.

    Ties prefer the diagonal predecessor, then the one advancing the reference
    index, then the test index, so identical sequences trace the pure diagonal.
    """
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    pairs = [(i - 1, j - 1)]
    while i > 1 or j > 1:
        diag = acc[i - 1, j - 1]
        up = acc[i - 1, j]
        left = acc[i, j - 1]
        if diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
        pairs.append((i - 1, j - 1))
    pairs.reverse()
    return pairs


def _path_cost(cost: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    return float(sum(cost[i, j] for i, j in pairs))


def dtw_align(ref: EmbeddedTrajectory, test: EmbeddedTrajectory) -> AlignmentPath:
    """Globally optimal monotone alignment of two embedded trajectories."""
    cost = cost_matrix(ref, test)
    acc = _accumulate(cost)
    pairs = _traceback(acc)
    return AlignmentPath(pairs=tuple(pairs), total_cost=_path_cost(cost, pairs))


def _coarsen(matrix: np.ndarray) -> np.ndarray:
    """Halve a sequence by averaging adjacent pairs; an odd tail passes through."""
    n = matrix.shape[0]
    even = n - (n % 2)
    halved = (matrix[0:even:2] + matrix[1:even:2]) / 2.0
    if n % 2:
        halved = np.vstack([halved, matrix[-1:]])
    return halved


def _expand_window(
    coarse_pairs: tuple[tuple[int, int], ...], m: int, n: int, radius: int
) -> list[tuple[int, int, int]]:
    """Project a coarse path up one resolution and inflate it by the search radius.

    Returns per-row column ranges [(i, j_lo, j_hi)] covering the fine-grained
    search window.
    """
    inflated: set[tuple[int, int]] = set()
    for i, j in coarse_pairs:
        for a in range(-radius, radius + 1):
            for b in range(-radius, radius + 1):
                inflated.add((i + a, j + b))
    lo = [n] * m
    hi = [-1] * m
    for i, j in inflated:
        for fi in (2 * i, 2 * i + 1):
            if not 0 <= fi < m:
                continue
            fj_lo = max(0, 2 * j)
            fj_hi = min(n - 1, 2 * j + 1)
            if fj_lo > fj_hi:
                continue
            lo[fi] = min(lo[fi], fj_lo)
            hi[fi] = max(hi[fi], fj_hi)
    # Rows form contiguous, monotone bands because the source path is monotone.
    return [(i, lo[i], hi[i]) for i in range(m)]


def _windowed_dtw(cost: np.ndarray, window: list[tuple[int, int, int]]) -> AlignmentPath:
    m, n = cost.shape
    acc = np.full((m + 1, n + 1), np.inf)
    acc[0, 0] = 0.0
    for i, j_lo, j_hi in window:
        row_cost = cost[i]
        prev = acc[i]
        cur = acc[i + 1]
        for j in range(j_lo, j_hi + 1):
            best = min(prev[j], prev[j + 1], cur[j])
            cur[j + 1] = row_cost[j] + best
    pairs = _traceback(acc)
    return AlignmentPath(pairs=tuple(pairs), total_cost=_path_cost(cost, pairs))


def fastdtw_align(ref: EmbeddedTrajectory, test: EmbeddedTrajectory, radius: int) -> AlignmentPath:
    """Multiresolution approximate alignment within a refinement radius.

    Cost is admissible (never below the exact optimum) and degenerates to the
    exact alignment once the window covers the full matrix.
    """
    if radius < 0:
        raise InputError(f"radius must be non-negative, got {radius}")
    if ref.dim != test.dim:
        raise InputError(f"dimension mismatch: ref dim {ref.dim} vs test dim {test.dim}")
    return _fastdtw(
        np.asarray(ref.vectors, dtype=np.float64),
        np.asarray(test.vectors, dtype=np.float64),
        radius,
        ref.task_id,
        test.task_id,
    )


def _exact_from_arrays(a: np.ndarray, b: np.ndarray, ref_id: str, test_id: str) -> AlignmentPath:
    return dtw_align(
        EmbeddedTrajectory(task_id=ref_id, vectors=a), EmbeddedTrajectory(task_id=test_id, vectors=b)
    )


def _fastdtw(a: np.ndarray, b: np.ndarray, radius: int, ref_id: str, test_id: str) -> AlignmentPath:
    min_size = radius + 2
    if a.shape[0] <= min_size or b.shape[0] <= min_size:
        return _exact_from_arrays(a, b, ref_id, test_id)
    coarse = _fastdtw(_coarsen(a), _coarsen(b), radius, ref_id, test_id)
    window = _expand_window(coarse.pairs, a.shape[0], b.shape[0], radius)
    cost = cost_matrix(
        EmbeddedTrajectory(task_id=ref_id, vectors=a), EmbeddedTrajectory(task_id=test_id, vectors=b)
    )
    return _windowed_dtw(cost, window)


def validate_path(path: AlignmentPath, m: int, n: int) -> None:
    """Raise unless the path satisfies the alignment invariants for an m x n instance."""
    pairs = path.pairs
    if not pairs or pairs[0] != (0, 0) or pairs[-1] != (m - 1, n - 1):
        raise InputError(f"path endpoints {pairs[:1]}..{pairs[-1:]} do not span the {m}x{n} instance")
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        di, dj = i1 - i0, j1 - j0
        if di not in (0, 1) or dj not in (0, 1) or (di, dj) == (0, 0):
            raise InputError(f"non-monotone step from ({i0},{j0}) to ({i1},{j1})")
