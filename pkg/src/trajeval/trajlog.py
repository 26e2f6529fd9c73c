"""Trajectory data model, browser-agent action grammar, and JSONL log ingestion."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Optional

from .errors import InputError, LogFormatError, TrajectoryValidationError


class ActionKind(str, Enum):
    CLICK = "click"
    TYPE = "type"
    HOVER = "hover"
    PRESS = "press"
    SCROLL = "scroll"
    NEW_TAB = "new_tab"
    TAB_FOCUS = "tab_focus"
    CLOSE_TAB = "close_tab"
    GOTO = "goto"
    GO_BACK = "go_back"
    GO_FORWARD = "go_forward"
    STOP = "stop"
    INVALID = "invalid"


class Terminal(str, Enum):
    STOPPED = "stopped"
    ENV_ERROR = "env_error"
    STEP_LIMIT = "step_limit"


@dataclass(frozen=True)
class Action:
    """A parsed agent command. Unrecognized text parses to kind=INVALID, never raises."""

    kind: ActionKind
    element_id: Optional[int] = None
    text_arg: Optional[str] = None
    key_arg: Optional[str] = None
    direction: Optional[str] = None  # "up" or "down"
    answer: Optional[str] = None  # stop actions only
    raw: str = ""

    def render(self) -> str:
        """Canonical text form. parse_action(a.render()) == a for non-invalid actions."""
        k = self.kind
        if k is ActionKind.CLICK:
            return f"click [{self.element_id}]"
        if k is ActionKind.TYPE:
            if self.key_arg is None:
                return f"type [{self.element_id}] [{self.text_arg}]"
            return f"type [{self.element_id}] [{self.text_arg}] [{self.key_arg}]"
        if k is ActionKind.HOVER:
            return f"hover [{self.element_id}]"
        if k is ActionKind.PRESS:
            return f"press [{self.key_arg}]"
        if k is ActionKind.SCROLL:
            return f"scroll [{self.direction}]"
        if k is ActionKind.NEW_TAB:
            return "new_tab"
        if k is ActionKind.TAB_FOCUS:
            return f"tab_focus [{self.element_id}]"
        if k is ActionKind.CLOSE_TAB:
            return "close_tab"
        if k is ActionKind.GOTO:
            return f"goto [{self.text_arg}]"
        if k is ActionKind.GO_BACK:
            return "go_back"
        if k is ActionKind.GO_FORWARD:
            return "go_forward"
        if k is ActionKind.STOP:
            return f"stop [{self.answer}]"
        return self.raw


# Bracketed arguments may contain spaces but brackets do not nest.
_ARG = r"\[([^\[\]]*)\]"
_INT_ARG = r"\[(\d+)\]"
_ACTION_RES = [
    (re.compile(rf"click {_INT_ARG}$"), lambda m: Action(ActionKind.CLICK, element_id=int(m[1]))),
    (
        re.compile(rf"type {_INT_ARG} {_ARG}(?: {_ARG})?$"),
        lambda m: Action(ActionKind.TYPE, element_id=int(m[1]), text_arg=m[2], key_arg=m[3]),
    ),
    (re.compile(rf"hover {_INT_ARG}$"), lambda m: Action(ActionKind.HOVER, element_id=int(m[1]))),
    (re.compile(rf"press {_ARG}$"), lambda m: Action(ActionKind.PRESS, key_arg=m[1])),
    (re.compile(r"scroll \[(up|down)\]$"), lambda m: Action(ActionKind.SCROLL, direction=m[1])),
    (re.compile(r"new_tab$"), lambda m: Action(ActionKind.NEW_TAB)),
    (re.compile(rf"tab_focus {_INT_ARG}$"), lambda m: Action(ActionKind.TAB_FOCUS, element_id=int(m[1]))),
    (re.compile(r"close_tab$"), lambda m: Action(ActionKind.CLOSE_TAB)),
    (re.compile(rf"goto {_ARG}$"), lambda m: Action(ActionKind.GOTO, text_arg=m[1])),
    (re.compile(r"go_back$"), lambda m: Action(ActionKind.GO_BACK)),
    (re.compile(r"go_forward$"), lambda m: Action(ActionKind.GO_FORWARD)),
    (re.compile(rf"stop {_ARG}$"), lambda m: Action(ActionKind.STOP, answer=m[1])),
]


def parse_action(raw: str) -> Action:
    """Parse one action string. Total: anything unrecognized becomes an invalid action."""
    text = raw.strip()
    for pattern, build in _ACTION_RES:
        m = pattern.match(text)
        if m:
            return build(m)
    return Action(ActionKind.INVALID, raw=raw)


@dataclass(frozen=True)
class Step:
    intent: str
    observation: str
    prev_action: Optional[Action]
    action: Action
    index: int


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    steps: tuple[Step, ...]
    terminal: Terminal
    generations: tuple[str, ...]
    success: Optional[bool] = None

    def validate(self) -> None:
        if not self.steps:
            raise TrajectoryValidationError(self.task_id, "trajectory has no steps")
        if len(self.generations) != len(self.steps):
            raise TrajectoryValidationError(
                self.task_id,
                f"{len(self.generations)} generations for {len(self.steps)} steps",
            )
        for t, step in enumerate(self.steps):
            if step.index != t:
                raise TrajectoryValidationError(self.task_id, f"step index {step.index} at position {t}")
        if self.steps[0].prev_action is not None:
            raise TrajectoryValidationError(self.task_id, "step 0 has a previous action")
        if not self.steps[0].observation:
            raise TrajectoryValidationError(self.task_id, "step 0 has an empty observation")
        for t in range(1, len(self.steps)):
            if self.steps[t].prev_action != self.steps[t - 1].action:
                raise TrajectoryValidationError(
                    self.task_id, f"step {t} prev_action does not chain from step {t - 1}"
                )
        if self.terminal is Terminal.STOPPED and self.steps[-1].action.kind is not ActionKind.STOP:
            raise TrajectoryValidationError(self.task_id, "terminal is stopped but final action is not stop")


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    completed: bool


def _step_from_record(task_id: str, index: int, obj: dict, prev: Optional[Action]) -> Step:
    action = parse_action(obj["action"])
    return Step(
        intent=obj["intent"],
        observation=obj["observation"],
        prev_action=prev,
        action=action,
        index=index,
    )


def trajectory_from_record(obj: dict) -> Trajectory:
    task_id = obj["task_id"]
    steps: list[Step] = []
    generations: list[str] = []
    prev: Optional[Action] = None
    for t, step_obj in enumerate(obj["steps"]):
        declared_prev = step_obj.get("prev_action")
        expected = None if prev is None else prev.render()
        declared = None if declared_prev is None else parse_action(declared_prev).render()
        if t == 0:
            if declared_prev is not None:
                raise TrajectoryValidationError(task_id, "step 0 declares a previous action")
        elif declared != expected:
            raise TrajectoryValidationError(
                task_id, f"step {t} prev_action {declared_prev!r} does not match step {t - 1} action"
            )
        step = _step_from_record(task_id, t, step_obj, prev)
        steps.append(step)
        generations.append(step_obj.get("generation", ""))
        prev = step.action
    traj = Trajectory(
        task_id=task_id,
        steps=tuple(steps),
        terminal=Terminal(obj["terminal"]),
        generations=tuple(generations),
        success=obj.get("success"),
    )
    traj.validate()
    return traj


def trajectory_to_record(traj: Trajectory) -> dict:
    steps = []
    for step, generation in zip(traj.steps, traj.generations):
        steps.append(
            {
                "intent": step.intent,
                "observation": step.observation,
                "prev_action": None if step.prev_action is None else step.prev_action.render(),
                "action": step.action.render(),
                "generation": generation,
            }
        )
    record = {"task_id": traj.task_id, "terminal": traj.terminal.value, "steps": steps}
    if traj.success is not None:
        record["success"] = traj.success
    return record


def load_trajectories(source: IO[str]) -> list[Trajectory]:
    """Load a JSONL trajectory log, one record per line, in file order."""
    out: list[Trajectory] = []
    for line_number, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(line_number, f"invalid JSON: {exc.msg}") from exc
        try:
            out.append(trajectory_from_record(obj))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, TrajectoryValidationError):
                raise
            raise LogFormatError(line_number, f"malformed record: {exc}") from exc
    return out


def dump_trajectories(trajectories: Iterable[Trajectory], sink: IO[str]) -> None:
    for traj in trajectories:
        sink.write(json.dumps(trajectory_to_record(traj), ensure_ascii=False) + "\n")


def load_results(source: IO[str]) -> list[TaskResult]:
    """Load a JSONL results file of {"task_id", "completed"} records."""
    results: list[TaskResult] = []
    seen: set[str] = set()
    for line_number, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            result = TaskResult(task_id=obj["task_id"], completed=bool(obj["completed"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise LogFormatError(line_number, f"malformed result record: {exc}") from exc
        if result.task_id in seen:
            raise InputError(f"duplicate task_id {result.task_id!r} in results")
        seen.add(result.task_id)
        results.append(result)
    return results
