"""Command-line surface: batch filtering, sampling, generation, scoring, and reporting."""

from __future__ import annotations

import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .capabilities import (
    attach_embeddings,
    capability_diff,
    capability_score,
    cluster_templates,
    detect_trivial,
    functional_correctness,
    load_templates,
    task_to_group,
)
from .embeddings import Embedder, EmbeddingCache, HttpEmbeddingProvider, render_step
from .errors import TrajevalError
from .filtering import (
    PlausibleSet,
    assemble_mixture,
    balanced_sample,
    filter_plausible,
    merge_with_fallback,
    read_examples,
    write_examples,
)
from .synthgen import GenerationParams, HttpGenerationProvider, ObjectivePool, generate_dataset
from .trajlog import dump_trajectories, load_results, load_trajectories
from .vertex import NodeSimilarityConfig, TaskScore, aggregate_scores, score_task


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.ClickException(f"cannot read input {path!r}: {exc}") from exc


def _digest(path: str) -> str:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise click.ClickException(f"cannot read input {path!r}: {exc}") from exc
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _atomic_write_text(path: str, text: str) -> None:
    """Write via a sibling temp file and rename, so failures leave no partial output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".trajeval-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_report(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _manifest(seed: Optional[int], config: dict, inputs: dict[str, Optional[str]]) -> dict:
    settings = {k: v for k, v in config.items() if v is not None}
    config_hash = hashlib.sha256(json.dumps(settings, sort_keys=True).encode("utf-8")).hexdigest()
    return {
        "tool": "trajeval",
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash,
        "inputs": {name: _digest(path) for name, path in inputs.items() if path is not None},
    }


def _load_log(path: str):
    return load_trajectories(io.StringIO(_read_text(path)))


def _load_results_file(path: str):
    return load_results(io.StringIO(_read_text(path)))


def _make_embedder(embeddings: Optional[str], endpoint: Optional[str], model: str) -> Embedder:
    cache = EmbeddingCache(Path(embeddings)) if embeddings else EmbeddingCache()
    provider = HttpEmbeddingProvider(endpoint, model) if endpoint else None
    return Embedder(model=model, provider=provider, cache=cache)


class _DomainErrors(click.Group):
    """Translate domain errors to exit code 1 with a module-qualified diagnostic."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except TrajevalError as exc:
            raise click.ClickException(f"{type(exc).__module__.split('.')[-1]}: {exc}") from exc


@click.group(cls=_DomainErrors)
@click.version_option(__version__)
def main():
    """Offline evaluation and data curation for web-agent trajectory logs."""


@main.command("filter")
@click.option("--input", "input_path", required=True, help="Trajectory log (JSONL).")
@click.option("--fallback", "fallback_path", default=None, help="Fallback trajectory log for merging.")
@click.option("--out", "out_path", required=True)
def filter_cmd(input_path: str, fallback_path: Optional[str], out_path: str):
    """Keep plausible trajectories; optionally merge with a fallback log per task."""
    trajectories = _load_log(input_path)
    if fallback_path is not None:
        kept = merge_with_fallback(trajectories, _load_log(fallback_path))
        counts = {"merged": len(kept), "input": len(trajectories)}
    else:
        plausible, counts = filter_plausible(trajectories)
        kept = list(plausible.trajectories)
    sink = io.StringIO()
    dump_trajectories(kept, sink)
    _atomic_write_text(out_path, sink.getvalue())
    click.echo(json.dumps({"counts": counts}, sort_keys=True), err=True)


@main.command("sample")
@click.option("--input", "input_path", required=True, help="Plausible trajectory log (JSONL).")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", required=True)
def sample_cmd(input_path: str, seed: int, out_path: str):
    """Balanced 1:1:2 sampling of training examples from plausible trajectories."""
    trajectories = _load_log(input_path)
    examples = balanced_sample(PlausibleSet(tuple(trajectories)), seed)
    sink = io.StringIO()
    write_examples(examples, sink)
    _atomic_write_text(out_path, sink.getvalue())


@main.command("mix")
@click.option("--kind", type=click.Choice(["A", "B", "C"]), required=True)
@click.option("--in-domain", "in_domain_path", default=None, help="In-domain examples (JSONL).")
@click.option("--out-of-domain", "ood_path", default=None, help="Out-of-domain examples (JSONL).")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", required=True)
def mix_cmd(kind: str, in_domain_path: Optional[str], ood_path: Optional[str], seed: int, out_path: str):
    """Assemble a training mixture from sampled example pools."""
    in_domain = read_examples(io.StringIO(_read_text(in_domain_path))) if in_domain_path else []
    ood = read_examples(io.StringIO(_read_text(ood_path))) if ood_path else []
    training_set = assemble_mixture(kind, in_domain, ood, seed)
    sink = io.StringIO()
    write_examples(training_set.examples, sink, mixture=kind)
    _atomic_write_text(out_path, sink.getvalue())


@main.command("embed")
@click.option("--input", "input_path", required=True, help="Trajectory log to embed (JSONL).")
@click.option("--embed-endpoint", required=True, help="Embedding provider base URL.")
@click.option("--embed-model", default="all-mpnet-base-v2", show_default=True)
@click.option("--embeddings", "cache_path", required=True, help="Vector cache file to populate (JSONL).")
def embed_cmd(input_path: str, embed_endpoint: str, embed_model: str, cache_path: str):
    """Embed all steps of a log into a reusable on-disk vector cache."""
    embedder = _make_embedder(cache_path, embed_endpoint, embed_model)
    texts = [render_step(step) for traj in _load_log(input_path) for step in traj.steps]
    embedder.embed_texts(texts)
    click.echo(json.dumps({"texts": len(texts), "cached": len(embedder.cache)}, sort_keys=True), err=True)


@main.command("score-fc")
@click.option("--results", "results_path", required=True, help="Task results (JSONL).")
@click.option("--out", "out_path", required=True)
def score_fc_cmd(results_path: str, out_path: str):
    """Functional correctness: mean binary completion over tasks."""
    results = _load_results_file(results_path)
    score = functional_correctness(results)
    report = {
        "score": score,
        "completed": sum(1 for r in results if r.completed),
        "total": len(results),
        "manifest": _manifest(None, {"command": "score-fc"}, {"results": results_path}),
    }
    _atomic_write_text(out_path, _dump_report(report))


def _grouped_templates(templates_path: str, embedder: Embedder, threshold: float):
    templates = load_templates(io.StringIO(_read_text(templates_path)))
    return cluster_templates(attach_embeddings(templates, embedder), threshold)


@main.command("score-capability")
@click.option("--templates", "templates_path", required=True, help="Template manifest (JSONL).")
@click.option("--results", "results_path", required=True)
@click.option("--trivial-results", "trivial_path", default=None)
@click.option("--embeddings", "embeddings_path", default=None, help="Precomputed vector file (JSONL).")
@click.option("--embed-endpoint", default=None)
@click.option("--embed-model", default="all-distilroberta-v1", show_default=True)
@click.option("--threshold", type=float, default=0.60, show_default=True)
@click.option("--out", "out_path", required=True)
def score_capability_cmd(
    templates_path: str,
    results_path: str,
    trivial_path: Optional[str],
    embeddings_path: Optional[str],
    embed_endpoint: Optional[str],
    embed_model: str,
    threshold: float,
    out_path: str,
):
    """Cluster intent templates into capabilities and score non-trivial completions."""
    embedder = _make_embedder(embeddings_path, embed_endpoint, embed_model)
    groups = _grouped_templates(templates_path, embedder, threshold)
    results = _load_results_file(results_path)
    trivial = detect_trivial(_load_results_file(trivial_path)) if trivial_path else set()
    score = capability_score(groups, results, trivial)
    mapping = task_to_group(groups)
    completed_nontrivial = {
        mapping[r.task_id] for r in results if r.completed and r.task_id not in trivial
    }
    report = {
        "score": score,
        "groups": [
            {
                "group_id": g.group_id,
                "template_ids": [t.template_id for t in g.members],
                "earned": g.group_id in completed_nontrivial,
            }
            for g in groups
        ],
        "manifest": _manifest(
            None,
            {"command": "score-capability", "threshold": threshold, "embed_model": embed_model},
            {"templates": templates_path, "results": results_path, "trivial_results": trivial_path},
        ),
    }
    _atomic_write_text(out_path, _dump_report(report))


@main.command("diff-capabilities")
@click.option("--templates", "templates_path", required=True)
@click.option("--results-a", "results_a_path", required=True)
@click.option("--results-b", "results_b_path", required=True)
@click.option("--trivial-results", "trivial_path", default=None)
@click.option("--embeddings", "embeddings_path", default=None)
@click.option("--embed-endpoint", default=None)
@click.option("--embed-model", default="all-distilroberta-v1", show_default=True)
@click.option("--threshold", type=float, default=0.60, show_default=True)
@click.option("--out", "out_path", required=True)
def diff_capabilities_cmd(
    templates_path: str,
    results_a_path: str,
    results_b_path: str,
    trivial_path: Optional[str],
    embeddings_path: Optional[str],
    embed_endpoint: Optional[str],
    embed_model: str,
    threshold: float,
    out_path: str,
):
    """Capability groups acquired and lost between two result sets."""
    embedder = _make_embedder(embeddings_path, embed_endpoint, embed_model)
    groups = _grouped_templates(templates_path, embedder, threshold)
    trivial = detect_trivial(_load_results_file(trivial_path)) if trivial_path else set()
    acquired, lost = capability_diff(
        groups, _load_results_file(results_a_path), _load_results_file(results_b_path), trivial
    )
    report = {
        "acquired": sorted(acquired),
        "lost": sorted(lost),
        "manifest": _manifest(
            None,
            {"command": "diff-capabilities", "threshold": threshold, "embed_model": embed_model},
            {
                "templates": templates_path,
                "results_a": results_a_path,
                "results_b": results_b_path,
                "trivial_results": trivial_path,
            },
        ),
    }
    _atomic_write_text(out_path, _dump_report(report))


@main.command("score-vertex")
@click.option("--input", "input_path", required=True, help="Test trajectory log (JSONL).")
@click.option("--refs", "refs_path", required=True, help="Reference trajectory log (JSONL).")
@click.option("--baseline", "baseline_path", required=True, help="Trivial-agent trajectory log (JSONL).")
@click.option("--embeddings", "embeddings_path", default=None)
@click.option("--embed-endpoint", default=None)
@click.option("--embed-model", default="all-mpnet-base-v2", show_default=True)
@click.option("--sigma", default="median", show_default=True, help='"median" or a fixed positive number.')
@click.option("--radius", type=int, default=None, help="Use approximate alignment with this radius.")
@click.option("--weighting", type=click.Choice(["uniform", "capability"]), default="uniform", show_default=True)
@click.option("--exclude-trivial", is_flag=True, default=False)
@click.option("--templates", "templates_path", default=None, help="Required for capability weighting.")
@click.option("--trivial-results", "trivial_path", default=None, help="Required for --exclude-trivial.")
@click.option("--threshold", type=float, default=0.60, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True)
def score_vertex_cmd(
    input_path: str,
    refs_path: str,
    baseline_path: str,
    embeddings_path: Optional[str],
    embed_endpoint: Optional[str],
    embed_model: str,
    sigma: str,
    radius: Optional[int],
    weighting: str,
    exclude_trivial: bool,
    templates_path: Optional[str],
    trivial_path: Optional[str],
    threshold: float,
    jobs: int,
    seed: int,
    out_path: str,
):
    """Decay-weighted alignment score of each test trajectory against its references."""
    bandwidth = "median" if sigma == "median" else float(sigma)
    config = NodeSimilarityConfig(bandwidth=bandwidth)
    embedder = _make_embedder(embeddings_path, embed_endpoint, embed_model)

    tests = _load_log(input_path)
    refs_by_task: dict[str, list] = {}
    for traj in _load_log(refs_path):
        refs_by_task.setdefault(traj.task_id, []).append(traj)
    baseline_by_task = {traj.task_id: traj for traj in _load_log(baseline_path)}

    def score_one(traj) -> TaskScore:
        if traj.task_id not in refs_by_task:
            raise click.ClickException(f"no reference trajectories for task {traj.task_id!r}")
        if traj.task_id not in baseline_by_task:
            raise click.ClickException(f"no baseline trajectory for task {traj.task_id!r}")
        refs = [embedder.embed_trajectory(t) for t in refs_by_task[traj.task_id]]
        baseline = embedder.embed_trajectory(baseline_by_task[traj.task_id])
        return score_task(refs, embedder.embed_trajectory(traj), baseline, config, radius=radius)

    tests = sorted(tests, key=lambda t: t.task_id)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(score_one, tests))
    else:
        scores = [score_one(t) for t in tests]

    trivial = detect_trivial(_load_results_file(trivial_path)) if trivial_path else set()
    groups_mapping = None
    if weighting == "capability":
        if templates_path is None:
            raise click.ClickException("capability weighting requires --templates")
        groups_mapping = task_to_group(_grouped_templates(templates_path, embedder, threshold))
    aggregate = aggregate_scores(
        scores,
        weighting=weighting,
        exclude_trivial=exclude_trivial,
        capability_groups=groups_mapping,
        trivial_tasks=trivial,
    )
    report = {
        "aggregate": aggregate,
        "weighting": weighting,
        "exclude_trivial": exclude_trivial,
        "tasks": [
            {
                "task_id": s.task_id,
                "score": s.score,
                "per_reference": list(s.per_reference),
                "chosen_reference": s.chosen_reference,
                "z_rand": list(s.z_rand),
            }
            for s in scores
        ],
        "manifest": _manifest(
            seed,
            {
                "command": "score-vertex",
                "sigma": sigma,
                "radius": radius,
                "weighting": weighting,
                "exclude_trivial": exclude_trivial,
                "embed_model": embed_model,
            },
            {
                "input": input_path,
                "refs": refs_path,
                "baseline": baseline_path,
                "templates": templates_path,
                "trivial_results": trivial_path,
            },
        ),
    }
    _atomic_write_text(out_path, _dump_report(report))


@main.command("report")
@click.option("--input", "input_path", required=True, help="Existing trajectory score report (JSON).")
@click.option("--weighting", type=click.Choice(["uniform", "capability"]), default="uniform", show_default=True)
@click.option("--exclude-trivial", is_flag=True, default=False)
@click.option("--templates", "templates_path", default=None)
@click.option("--trivial-results", "trivial_path", default=None)
@click.option("--embeddings", "embeddings_path", default=None)
@click.option("--embed-endpoint", default=None)
@click.option("--embed-model", default="all-distilroberta-v1", show_default=True)
@click.option("--threshold", type=float, default=0.60, show_default=True)
@click.option("--out", "out_path", required=True)
def report_cmd(
    input_path: str,
    weighting: str,
    exclude_trivial: bool,
    templates_path: Optional[str],
    trivial_path: Optional[str],
    embeddings_path: Optional[str],
    embed_endpoint: Optional[str],
    embed_model: str,
    threshold: float,
    out_path: str,
):
    """Re-aggregate an existing score report under different weighting options."""
    source = json.loads(_read_text(input_path))
    scores = [
        TaskScore(
            task_id=t["task_id"],
            score=t["score"],
            per_reference=tuple(t["per_reference"]),
            chosen_reference=t["chosen_reference"],
            z_rand=tuple(t["z_rand"]),
        )
        for t in source["tasks"]
    ]
    trivial = detect_trivial(_load_results_file(trivial_path)) if trivial_path else set()
    groups_mapping = None
    if weighting == "capability":
        if templates_path is None:
            raise click.ClickException("capability weighting requires --templates")
        embedder = _make_embedder(embeddings_path, embed_endpoint, embed_model)
        groups_mapping = task_to_group(_grouped_templates(templates_path, embedder, threshold))
    aggregate = aggregate_scores(
        scores,
        weighting=weighting,
        exclude_trivial=exclude_trivial,
        capability_groups=groups_mapping,
        trivial_tasks=trivial,
    )
    report = {
        "aggregate": aggregate,
        "weighting": weighting,
        "exclude_trivial": exclude_trivial,
        "tasks": source["tasks"],
        "manifest": _manifest(
            None,
            {
                "command": "report",
                "weighting": weighting,
                "exclude_trivial": exclude_trivial,
                "threshold": threshold,
            },
            {"input": input_path, "templates": templates_path, "trivial_results": trivial_path},
        ),
    }
    _atomic_write_text(out_path, _dump_report(report))


@main.command("generate")
@click.option("--gen-endpoint", required=True, help="Text-generation provider base URL.")
@click.option("--embed-endpoint", default=None)
@click.option("--embeddings", "embeddings_path", default=None)
@click.option("--embed-model", default="all-distilroberta-v1", show_default=True)
@click.option("--intents", "intents_path", required=True, help="Seed intents, one per line.")
@click.option("--in-domain", "in_domain_path", required=True, help="In-domain examples (JSONL).")
@click.option("-n", "count", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--top-p", type=float, default=1.0, show_default=True)
@click.option("--max-retries", type=int, default=10, show_default=True)
@click.option("--out", "out_path", required=True)
def generate_cmd(
    gen_endpoint: str,
    embed_endpoint: Optional[str],
    embeddings_path: Optional[str],
    embed_model: str,
    intents_path: str,
    in_domain_path: str,
    count: int,
    seed: int,
    temperature: float,
    top_p: float,
    max_retries: int,
    out_path: str,
):
    """Generate out-of-domain training examples through a generation endpoint."""
    seed_intents = [line.strip() for line in _read_text(intents_path).splitlines() if line.strip()]
    in_domain = read_examples(io.StringIO(_read_text(in_domain_path)))
    pool = ObjectivePool(seed_intents=seed_intents)
    params = GenerationParams(temperature=temperature, top_p=top_p, max_retries=max_retries)
    embedder = _make_embedder(embeddings_path, embed_endpoint, embed_model)
    gen = HttpGenerationProvider(gen_endpoint)
    examples = generate_dataset(gen, pool, in_domain, count, embedder, params, seed)
    sink = io.StringIO()
    write_examples(examples, sink, mixture="C")
    _atomic_write_text(out_path, sink.getvalue())


if __name__ == "__main__":
    sys.exit(main())
