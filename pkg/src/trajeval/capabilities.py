"""Functional correctness, intent-template capability clustering, and capability scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import IO, Optional, Sequence

import numpy as np

from .errors import InputError
from .trajlog import TaskResult


@dataclass(frozen=True)
class TemplateEntry:
    template_id: str
    template_text: str
    task_ids: tuple[str, ...]
    embedding: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CapabilityGroup:
    group_id: int
    members: tuple[TemplateEntry, ...]


def load_templates(source: IO[str]) -> list[TemplateEntry]:
    """Load a JSONL template manifest of {"template_id", "template_text", "task_ids"}."""
    templates = []
    for line in source:
        if not line.strip():
            continue
        obj = json.loads(line)
        templates.append(
            TemplateEntry(
                template_id=obj["template_id"],
                template_text=obj["template_text"],
                task_ids=tuple(obj["task_ids"]),
            )
        )
    return templates


def attach_embeddings(templates: Sequence[TemplateEntry], embedder) -> list[TemplateEntry]:
    """Embed raw template texts (placeholders intact) through the shared embedder."""
    vectors = embedder.embed_texts([t.template_text for t in templates])
    return [replace(t, embedding=v) for t, v in zip(templates, vectors)]


def _cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def cluster_templates(templates: Sequence[TemplateEntry], threshold: float = 0.60) -> list[CapabilityGroup]:
    """Greedy, order-dependent grouping of templates into capabilities.

    Each template joins the first existing group containing a member with
    cosine similarity strictly greater than the threshold, else founds a new
    group. Deterministic for a fixed input order.
    """
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must lie in (0, 1), got {threshold}")
    dims = {t.embedding.shape[0] for t in templates if t.embedding is not None}
    if any(t.embedding is None for t in templates):
        raise InputError("every template must carry an embedding before clustering")
    if len(dims) > 1:
        raise InputError(f"mixed template embedding dimensions: {sorted(dims)}")
    groups: list[list[TemplateEntry]] = []
    for template in templates:
        placed = False
        for members in groups:
            if any(_cosine_similarity(template.embedding, m.embedding) > threshold for m in members):
                members.append(template)
                placed = True
                break
        if not placed:
            groups.append([template])
    return [CapabilityGroup(group_id=g, members=tuple(members)) for g, members in enumerate(groups)]


def functional_correctness(results: Sequence[TaskResult]) -> float:
    """Fraction of tasks completed."""
    if not results:
        raise InputError("functional correctness requires at least one result")
    seen: set[str] = set()
    for r in results:
        if r.task_id in seen:
            raise InputError(f"duplicate task_id {r.task_id!r} in results")
        seen.add(r.task_id)
    return sum(1 for r in results if r.completed) / len(results)


def detect_trivial(trivial_agent_results: Sequence[TaskResult]) -> set[str]:
    """Tasks the trivial agent completed; excluded from capability credit."""
    seen: set[str] = set()
    for r in trivial_agent_results:
        if r.task_id in seen:
            raise InputError(f"duplicate task_id {r.task_id!r} in trivial-agent results")
        seen.add(r.task_id)
    return {r.task_id for r in trivial_agent_results if r.completed}


def task_to_group(groups: Sequence[CapabilityGroup]) -> dict[str, int]:
    mapping: dict[str, int] = {}
    for group in groups:
        for template in group.members:
            for task_id in template.task_ids:
                if task_id in mapping:
                    raise InputError(f"task {task_id!r} appears in more than one template/group")
                mapping[task_id] = group.group_id
    return mapping


def _earned_groups(
    groups: Sequence[CapabilityGroup], results: Sequence[TaskResult], trivial: set[str]
) -> set[int]:
    mapping = task_to_group(groups)
    earned: set[int] = set()
    for r in results:
        if r.task_id not in mapping:
            raise InputError(f"task {r.task_id!r} does not belong to any capability group")
        if r.completed and r.task_id not in trivial:
            earned.add(mapping[r.task_id])
    return earned


def capability_score(
    groups: Sequence[CapabilityGroup], results: Sequence[TaskResult], trivial: set[str]
) -> float:
    """Fraction of capability groups with at least one non-trivial completion."""
    if not groups:
        raise InputError("capability score requires at least one group")
    return len(_earned_groups(groups, results, trivial)) / len(groups)


def capability_diff(
    groups: Sequence[CapabilityGroup],
    results_a: Sequence[TaskResult],
    results_b: Sequence[TaskResult],
    trivial: set[str],
) -> tuple[set[int], set[int]]:
    """(acquired, lost) capability group ids going from result set a to b."""
    if {r.task_id for r in results_a} != {r.task_id for r in results_b}:
        raise InputError("result sets cover different tasks")
    earned_a = _earned_groups(groups, results_a, trivial)
    earned_b = _earned_groups(groups, results_b, trivial)
    return earned_b - earned_a, earned_a - earned_b
