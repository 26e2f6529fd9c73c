"""Out-of-domain example generation through a pluggable text-generation endpoint."""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import httpx
import numpy as np

from .errors import (
    DiversityExhaustionError,
    GenerationRunError,
    InputError,
    ProviderContractError,
    SynthFormatError,
)
from .embeddings import Embedder
from .filtering import Origin, TrainingExample
from .trajlog import Action, ActionKind, parse_action

DIVERSITY_THRESHOLD = 0.70

ACTION_SPACE_TEXT = """\
click [id]: Click on the element with the given numerical id on the webpage.
type [id] [content] [press_enter_after]: Type content into the field with the given id; press_enter_after is 1 to press Enter afterwards, 0 otherwise.
hover [id]: Hover over the element with the given id.
press [key_comb]: Press a keyboard combination (e.g. Ctrl+v).
scroll [up] or scroll [down]: Scroll the page up or down.
new_tab: Open a new, empty browser tab.
tab_focus [tab_index]: Switch focus to the browser tab with the given index.
close_tab: Close the currently active tab.
goto [url]: Navigate to the given URL.
go_back: Navigate back to the previously viewed page.
go_forward: Navigate forward (undo go_back).
stop [answer]: Issue this when the objective is complete, with the answer inside the brackets; use an empty bracket if no answer is needed."""


def _load_prompt(name: str) -> str:
    return resources.files("trajeval.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def fill_prompt(template: str, **values: str) -> str:
    """Exact text splicing of named placeholders; no reflow, no format-spec parsing."""
    out = template
    for name, value in values.items():
        out = out.replace("{" + name + "}", value)
    return out


@dataclass(frozen=True)
class Objective:
    intent: str
    url: str  # bare hostname, no path
    embedding: np.ndarray


@dataclass
class ObjectivePool:
    seed_intents: list[str]
    generated: list[Objective] = field(default_factory=list)

    def max_similarity(self, embedding: np.ndarray) -> float:
        """Max cosine similarity against previously generated intents; 0 when empty."""
        if not self.generated:
            return 0.0
        best = -1.0
        unit = embedding / np.linalg.norm(embedding)
        for objective in self.generated:
            other = objective.embedding / np.linalg.norm(objective.embedding)
            best = max(best, float(np.dot(unit, other)))
        return best


@dataclass(frozen=True)
class Plan:
    objective: Objective
    steps: tuple[str, ...]
    selected_step: Optional[int] = None  # 1-based

    def __post_init__(self):
        if not self.steps:
            raise InputError("a plan must contain at least one step")
        if self.selected_step is not None and not 1 <= self.selected_step <= len(self.steps):
            raise InputError(f"selected step {self.selected_step} outside plan of {len(self.steps)} steps")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 1.0
    top_p: float = 1.0
    max_retries: int = 10


class HttpGenerationProvider:
    """Client for the generation wire contract: POST /generate -> {"text"}."""

    def __init__(self, base_url: str, client: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=300.0)

    def generate(self, prompt: str, temperature: float, top_p: float) -> str:
        try:
            response = self._client.post(
                self.base_url + "/generate",
                json={"prompt": prompt, "temperature": temperature, "top_p": top_p},
            )
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise GenerationRunError(f"generation request failed: {exc}") from exc
        body = response.json()
        if "text" not in body:
            raise ProviderContractError("generation response missing 'text'")
        return body["text"]


_OBJECTIVE_RE = re.compile(r"^OBJECTIVE:\s*(.+)$", re.MULTILINE)
_URL_RE = re.compile(r"^URL:\s*(.+)$", re.MULTILINE)
_ENVELOPE_RE = re.compile(r"In summary, the next action I will perform is ```(.*?)```", re.DOTALL)


def _normalize_hostname(url: str) -> str:
    host = url.strip()
    host = re.sub(r"^[a-z]+://", "", host, flags=re.IGNORECASE)
    host = host.rstrip("/")
    if not host or "/" in host or " " in host:
        raise SynthFormatError("objective", f"URL {url!r} is not a bare hostname")
    return host


def _render_objective_examples(intents_and_urls: Sequence[tuple[str, Optional[str]]]) -> str:
    blocks = []
    for intent, url in intents_and_urls:
        block = f"OBJECTIVE: {intent}"
        if url is not None:
            block += f"\nURL: {url}"
        blocks.append(block)
    return "\n\n".join(blocks)


def generate_objective(
    gen: HttpGenerationProvider,
    pool: ObjectivePool,
    embedder: Embedder,
    params: GenerationParams,
    rng: random.Random,
) -> Objective:
    """Generate one novel objective, enforcing the pool's diversity gate.

    Few-shot material is 2 seed intents plus up to 2 previously generated
    objectives (fewer while the pool is still small). Candidates whose maximum
    cosine similarity against the pool reaches the threshold are retried.
    """
    if len(pool.seed_intents) < 2:
        raise InputError("the seed intent pool must contain at least 2 intents")
    template = _load_prompt("objective")
    best_intent, best_similarity = "", -1.0
    for _ in range(params.max_retries):
        shots: list[tuple[str, Optional[str]]] = [
            (intent, None) for intent in rng.sample(pool.seed_intents, 2)
        ]
        n_generated = min(2, len(pool.generated))
        if n_generated:
            shots += [(o.intent, o.url) for o in rng.sample(pool.generated, n_generated)]
        prompt = fill_prompt(template, examples=_render_objective_examples(shots))
        response = gen.generate(prompt, params.temperature, params.top_p)
        intent_match = _OBJECTIVE_RE.search(response)
        url_match = _URL_RE.search(response)
        if not intent_match or not url_match:
            raise SynthFormatError("objective", "response lacks OBJECTIVE:/URL: lines")
        intent = intent_match.group(1).strip()
        url = _normalize_hostname(url_match.group(1))
        embedding = embedder.embed_texts([intent])[0]
        similarity = pool.max_similarity(embedding)
        if similarity < DIVERSITY_THRESHOLD:
            objective = Objective(intent=intent, url=url, embedding=embedding)
            pool.generated.append(objective)
            return objective
        if similarity > best_similarity:
            best_intent, best_similarity = intent, similarity
    raise DiversityExhaustionError(best_intent, best_similarity, params.max_retries)


def select_step(plan_length: int, rng: random.Random) -> int:
    """Pick a 1-based plan step, balancing initial, final, and interior positions.

    Initial and final each carry probability 1/4, the remaining 1/2 splits
    uniformly over interior steps; degenerate lengths renormalize.
    """
    if plan_length < 1:
        raise InputError(f"plan length must be positive, got {plan_length}")
    if plan_length == 1:
        return 1
    if plan_length == 2:
        return rng.choice([1, 2])
    u = rng.random()
    if u < 0.25:
        return 1
    if u < 0.5:
        return plan_length
    return rng.randrange(2, plan_length)


def _render_example_block(example: TrainingExample) -> str:
    prev = "None" if example.prev_action is None else example.prev_action.render()
    next_action = (
        "Let's think step-by-step. This action makes progress towards the objective. "
        f"In summary, the next action I will perform is ```{example.target_action.render()}```"
    )
    return (
        f"OBJECTIVE: {example.intent}\n"
        f"WEBPAGE: {example.observation}\n"
        f"PREVIOUS ACTION: {prev}\n"
        f"NEXT ACTION: {next_action}"
    )


def _render_plan(steps: Sequence[str]) -> str:
    return "\n".join(f"{k}. {step}" for k, step in enumerate(steps, start=1))


def _parse_plan(response: str) -> tuple[str, ...]:
    steps = tuple(line.strip() for line in response.splitlines() if line.strip())
    if not steps:
        raise SynthFormatError("plan", "response contains no plan steps")
    return steps


def _parse_section(response: str, marker: str, *, stage: str) -> str:
    pattern = re.compile(
        rf"^{marker}:\s*(.*?)(?=^(?:WEBPAGE|PREVIOUS ACTION|NEXT ACTION):|\Z)",
        re.MULTILINE | re.DOTALL,
    )
    m = pattern.search(response)
    if not m or not m.group(1).strip():
        raise SynthFormatError(stage, f"response lacks a {marker}: section")
    return m.group(1).strip()


def _parse_next_action(section: str, *, stage: str) -> Action:
    m = _ENVELOPE_RE.search(section)
    if not m:
        raise SynthFormatError(stage, "next action lacks the triple-backtick summary envelope")
    action = parse_action(m.group(1).strip())
    if action.kind is ActionKind.INVALID:
        raise SynthFormatError(stage, f"next action {m.group(1)!r} is not a valid action")
    return action


def generate_example(
    gen: HttpGenerationProvider,
    pool: ObjectivePool,
    in_domain: Sequence[TrainingExample],
    embedder: Embedder,
    params: GenerationParams,
    rng: random.Random,
) -> TrainingExample:
    """Chain the objective, plan, URL, actions, and observation prompts into one example."""
    if len(in_domain) < 2:
        raise InputError("at least 2 in-domain examples are required as few-shot material")
    objective = generate_objective(gen, pool, embedder, params, rng)

    plan_prompt = fill_prompt(_load_prompt("plan"), objective=objective.intent, url=objective.url)
    steps = _parse_plan(gen.generate(plan_prompt, params.temperature, params.top_p))
    k = select_step(len(steps), rng)
    plan = Plan(objective=objective, steps=steps, selected_step=k)

    url_prompt = fill_prompt(
        _load_prompt("url"),
        objective=objective.intent,
        website=objective.url,
        steps=_render_plan(steps),
        step_number=str(k),
    )
    step_url = gen.generate(url_prompt, params.temperature, params.top_p).strip()
    if not step_url or "\n" in step_url:
        raise SynthFormatError("url", "response is not a single URL line")

    shots = rng.sample(list(in_domain), 2)
    actions_prompt = fill_prompt(
        _load_prompt("actions"),
        action_space=ACTION_SPACE_TEXT,
        example_1=_render_example_block(shots[0]),
        example_2=_render_example_block(shots[1]),
        step_number=str(k),
        objective=objective.intent,
        url=step_url,
        plan=_render_plan(steps),
        current_step=plan.steps[k - 1],
    )
    actions_response = gen.generate(actions_prompt, params.temperature, params.top_p)
    prev_section = _parse_section(actions_response, "PREVIOUS ACTION", stage="actions")
    next_section = _parse_section(actions_response, "NEXT ACTION", stage="actions")
    target_action = _parse_next_action(next_section, stage="actions")
    prev_action: Optional[Action] = None
    if k > 1 and prev_section.strip().lower() != "none":
        parsed_prev = parse_action(prev_section.splitlines()[0])
        if parsed_prev.kind is ActionKind.INVALID:
            raise SynthFormatError("actions", f"previous action {prev_section!r} is not a valid action")
        prev_action = parsed_prev

    obs_shots = rng.sample(list(in_domain), 2)
    observation_prompt = fill_prompt(
        _load_prompt("observation"),
        action_space=ACTION_SPACE_TEXT,
        example_1=_render_example_block(obs_shots[0]),
        example_2=_render_example_block(obs_shots[1]),
        objective=objective.intent,
        url=step_url,
        previous_action="None" if prev_action is None else prev_action.render(),
        next_action=next_section,
    )
    observation_response = gen.generate(observation_prompt, params.temperature, params.top_p)
    observation = _parse_section(observation_response, "WEBPAGE", stage="observation")

    if k == 1:
        origin = Origin.INITIAL
    elif k == len(steps):
        origin = Origin.FINAL
    else:
        origin = Origin.INTERMEDIATE
    source_task = "synthetic:" + hashlib.sha256(objective.intent.encode("utf-8")).hexdigest()[:12]
    return TrainingExample(
        intent=objective.intent,
        observation=observation,
        prev_action=prev_action,
        target_action=target_action,
        origin=origin,
        source_task=source_task,
    )


def generate_dataset(
    gen: HttpGenerationProvider,
    pool: ObjectivePool,
    in_domain: Sequence[TrainingExample],
    n: int,
    embedder: Embedder,
    params: GenerationParams,
    seed: int,
) -> list[TrainingExample]:
    """Generate n examples; per-example failures are retried, then recorded as skips."""
    if n < 1:
        raise InputError(f"dataset size must be positive, got {n}")
    rng = random.Random(seed)
    examples: list[TrainingExample] = []
    skips: list[str] = []
    for _ in range(n):
        for attempt in range(params.max_retries):
            try:
                examples.append(generate_example(gen, pool, in_domain, embedder, params, rng))
                break
            except (SynthFormatError, DiversityExhaustionError) as exc:
                if attempt == params.max_retries - 1:
                    skips.append(str(exc))
    if len(skips) * 2 > n:
        raise GenerationRunError(
            f"{len(skips)} of {n} examples failed all retries; first failure: {skips[0]}"
        )
    return examples
