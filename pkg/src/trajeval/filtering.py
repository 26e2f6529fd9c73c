"""Unsupervised trajectory filtering, balanced step sampling, and mixture assembly."""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Optional, Sequence

from .errors import MissingFallbackError, MixtureError
from .trajlog import Action, ActionKind, Step, Terminal, Trajectory, parse_action


class VerdictStatus(str, Enum):
    PLAUSIBLE = "plausible"
    SELF_CRITIQUE = "self_critique"
    REFUSAL = "refusal"
    ENV_ERROR = "env_error"
    UNPARSABLE = "unparsable"


@dataclass(frozen=True)
class FilterVerdict:
    status: VerdictStatus
    detail: str = ""


class Origin(str, Enum):
    INITIAL = "initial"
    FINAL = "final"
    INTERMEDIATE = "intermediate"


@dataclass(frozen=True)
class TrainingExample:
    intent: str
    observation: str
    prev_action: Optional[Action]
    target_action: Action
    origin: Origin
    source_task: str


@dataclass(frozen=True)
class PlausibleSet:
    trajectories: tuple[Trajectory, ...]


@dataclass(frozen=True)
class TrainingSet:
    examples: tuple[TrainingExample, ...]
    mixture: str  # "A", "B", or "C"
    seed: int


# Whole-word, case-insensitive: "accountant" must not trip the "cannot" check.
_SELF_CRITIQUE_RE = re.compile(r"\b(impossible|cannot)\b", re.IGNORECASE)
_REFUSAL_PREFIX_RE = re.compile(r"no\b", re.IGNORECASE)


def _is_refusal_answer(answer: str) -> bool:
    stripped = answer.strip()
    if not stripped:
        return True
    if stripped.lower() == "n/a":
        return True
    return _REFUSAL_PREFIX_RE.match(stripped) is not None


def classify_trajectory(traj: Trajectory) -> FilterVerdict:
    """Classify one trajectory. Precedence: env error > unparsable > self-critique > refusal."""
    if traj.terminal is Terminal.ENV_ERROR:
        return FilterVerdict(VerdictStatus.ENV_ERROR, "environment reported an error")
    for step in traj.steps:
        if step.action.kind is ActionKind.INVALID:
            return FilterVerdict(
                VerdictStatus.UNPARSABLE, f"step {step.index} action is unparsable: {step.action.raw!r}"
            )
    for t, generation in enumerate(traj.generations):
        m = _SELF_CRITIQUE_RE.search(generation)
        if m:
            return FilterVerdict(VerdictStatus.SELF_CRITIQUE, f"step {t} generation contains {m.group(0)!r}")
    final = traj.steps[-1].action
    if final.kind is ActionKind.STOP and _is_refusal_answer(final.answer or ""):
        return FilterVerdict(VerdictStatus.REFUSAL, f"final stop answer {final.answer!r} is a refusal")
    return FilterVerdict(VerdictStatus.PLAUSIBLE)


def filter_plausible(trajectories: Sequence[Trajectory]) -> tuple[PlausibleSet, dict[str, int]]:
    """Keep plausible trajectories in input order; also report per-status counts."""
    counts: Counter[str] = Counter()
    kept: list[Trajectory] = []
    for traj in trajectories:
        verdict = classify_trajectory(traj)
        counts[verdict.status.value] += 1
        if verdict.status is VerdictStatus.PLAUSIBLE:
            kept.append(traj)
    return PlausibleSet(tuple(kept)), dict(counts)


def merge_with_fallback(
    primary: Sequence[Trajectory], fallback: Sequence[Trajectory]
) -> list[Trajectory]:
    """Per task: primary if plausible, else the fallback if plausible, else drop the task."""
    fallback_by_task = {t.task_id: t for t in fallback}
    merged: list[Trajectory] = []
    for traj in primary:
        if traj.task_id not in fallback_by_task:
            raise MissingFallbackError(f"no fallback trajectory for task {traj.task_id!r}")
        if classify_trajectory(traj).status is VerdictStatus.PLAUSIBLE:
            merged.append(traj)
            continue
        candidate = fallback_by_task[traj.task_id]
        if classify_trajectory(candidate).status is VerdictStatus.PLAUSIBLE:
            merged.append(candidate)
    return merged


def _example_from_step(step: Step, origin: Origin, task_id: str) -> TrainingExample:
    return TrainingExample(
        intent=step.intent,
        observation=step.observation,
        prev_action=step.prev_action,
        target_action=step.action,
        origin=origin,
        source_task=task_id,
    )


def balanced_sample(plausible: PlausibleSet, seed: int) -> list[TrainingExample]:
    """Sample training examples balanced 1:1:2 across initial, final, and interior steps.

    All initial steps are kept; final and interior pools are sampled without
    replacement, capped at their pool sizes. Deterministic for a given seed.
    """
    initial_pool: list[tuple[Step, str]] = []
    final_pool: list[tuple[Step, str]] = []
    interior_pool: list[tuple[Step, str]] = []
    for traj in plausible.trajectories:
        initial_pool.append((traj.steps[0], traj.task_id))
        if len(traj.steps) > 1:
            final_pool.append((traj.steps[-1], traj.task_id))
        for step in traj.steps[1:-1]:
            interior_pool.append((step, traj.task_id))

    rng = random.Random(seed)
    n_initial = len(initial_pool)
    finals = rng.sample(final_pool, min(n_initial, len(final_pool)))
    interiors = rng.sample(interior_pool, min(2 * n_initial, len(interior_pool)))

    examples = [_example_from_step(s, Origin.INITIAL, tid) for s, tid in initial_pool]
    examples += [_example_from_step(s, Origin.FINAL, tid) for s, tid in finals]
    examples += [_example_from_step(s, Origin.INTERMEDIATE, tid) for s, tid in interiors]
    return examples


def assemble_mixture(
    kind: str,
    in_domain: Sequence[TrainingExample],
    out_of_domain: Sequence[TrainingExample],
    seed: int,
) -> TrainingSet:
    """Assemble mixture A (in-domain), B (shuffled union), or C (out-of-domain)."""
    if kind not in ("A", "B", "C"):
        raise MixtureError(f"unknown mixture kind {kind!r}")
    if kind in ("A", "B") and not in_domain:
        raise MixtureError("mixture requires a non-empty in-domain pool")
    if kind in ("B", "C") and not out_of_domain:
        raise MixtureError("mixture requires a non-empty out-of-domain pool")
    if kind == "A":
        examples = list(in_domain)
    elif kind == "C":
        examples = list(out_of_domain)
    else:
        examples = list(in_domain) + list(out_of_domain)
        random.Random(seed).shuffle(examples)
    return TrainingSet(examples=tuple(examples), mixture=kind, seed=seed)


def example_to_record(example: TrainingExample, mixture: Optional[str] = None) -> dict:
    return {
        "intent": example.intent,
        "observation": example.observation,
        "prev_action": None if example.prev_action is None else example.prev_action.render(),
        "target_action": example.target_action.render(),
        "origin": example.origin.value,
        "source_task": example.source_task,
        "mixture": mixture,
    }


def example_from_record(obj: dict) -> TrainingExample:
    prev = obj.get("prev_action")
    return TrainingExample(
        intent=obj["intent"],
        observation=obj["observation"],
        prev_action=None if prev is None else parse_action(prev),
        target_action=parse_action(obj["target_action"]),
        origin=Origin(obj["origin"]),
        source_task=obj["source_task"],
    )


def write_examples(examples: Iterable[TrainingExample], sink: IO[str], mixture: Optional[str] = None) -> None:
    for example in examples:
        sink.write(json.dumps(example_to_record(example, mixture), ensure_ascii=False) + "\n")


def read_examples(source: IO[str]) -> list[TrainingExample]:
    return [example_from_record(json.loads(line)) for line in source if line.strip()]
