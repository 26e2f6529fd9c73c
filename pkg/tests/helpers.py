"""Shared test utilities: deterministic fake providers and trajectory builders."""

from __future__ import annotations

import hashlib

import numpy as np

from trajeval.embeddings import EmbeddedTrajectory
from trajeval.trajlog import Action, Step, Terminal, Trajectory, parse_action


def hash_vector(model: str, text: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random vector derived purely from sha256 bytes.

    Stable across platforms and library versions, so fixture files and golden
    outputs never drift.
    """
    raw = bytearray()
    counter = 0
    while len(raw) < dim:
        digest = hashlib.sha256(f"{model}\x00{text}\x00{counter}".encode("utf-8")).digest()
        raw.extend(digest)
        counter += 1
    return (np.frombuffer(bytes(raw[:dim]), dtype=np.uint8).astype(np.float64) - 127.5) / 127.5


class FakeEmbedProvider:
    """In-process stand-in for the embedding endpoint; content-hash vectors."""

    def __init__(self, model: str = "fixture-embed", dim: int = 16):
        self.model = model
        self.dim = dim
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return [hash_vector(self.model, text, self.dim) for text in texts]


def make_trajectory(
    task_id: str,
    actions: list[str],
    intent: str = "do the task",
    terminal: Terminal = Terminal.STOPPED,
    generations: list[str] | None = None,
    observations: list[str] | None = None,
    success: bool | None = None,
) -> Trajectory:
    steps = []
    prev: Action | None = None
    for t, raw in enumerate(actions):
        action = parse_action(raw)
        obs = observations[t] if observations else f"page for {task_id} step {t}"
        steps.append(Step(intent=intent, observation=obs, prev_action=prev, action=action, index=t))
        prev = action
    gens = generations if generations is not None else [f"generation {t}" for t in range(len(actions))]
    return Trajectory(
        task_id=task_id,
        steps=tuple(steps),
        terminal=terminal,
        generations=tuple(gens),
        success=success,
    )


def embedded(task_id: str, vectors) -> EmbeddedTrajectory:
    return EmbeddedTrajectory(task_id=task_id, vectors=np.asarray(vectors, dtype=np.float64))
