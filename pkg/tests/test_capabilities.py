import io
import math

import numpy as np
import pytest

from trajeval.capabilities import (
    CapabilityGroup,
    TemplateEntry,
    attach_embeddings,
    capability_diff,
    capability_score,
    cluster_templates,
    detect_trivial,
    functional_correctness,
    load_templates,
    task_to_group,
)
from trajeval.embeddings import Embedder
from trajeval.errors import InputError
from trajeval.trajlog import TaskResult

from helpers import FakeEmbedProvider


def template(template_id, embedding, task_ids=()):
    return TemplateEntry(
        template_id=template_id,
        template_text=f"text for {template_id}",
        task_ids=tuple(task_ids),
        embedding=np.asarray(embedding, dtype=np.float64),
    )


def unit_at(theta):
    return np.array([math.cos(theta), math.sin(theta), 0.0])


def result(task_id, completed):
    return TaskResult(task_id=task_id, completed=completed)


class TestLoadTemplates:
    def test_round_trip_and_embedding_attach(self):
        source = io.StringIO(
            '{"template_id": "a", "template_text": "Find {item}", "task_ids": ["t1", "t2"]}\n'
            '{"template_id": "b", "template_text": "Fork {repo}", "task_ids": ["t3"]}\n'
        )
        templates = load_templates(source)
        assert [t.template_id for t in templates] == ["a", "b"]
        assert templates[0].task_ids == ("t1", "t2")
        assert templates[0].embedding is None
        embedder = Embedder(model="fixture-embed", provider=FakeEmbedProvider())
        attached = attach_embeddings(templates, embedder)
        assert all(t.embedding is not None and t.embedding.shape == (16,) for t in attached)


class TestClustering:
    def test_all_dissimilar_yields_singletons(self):
        templates = [template(f"t{i}", np.eye(4)[i]) for i in range(4)]
        groups = cluster_templates(templates)
        assert [len(g.members) for g in groups] == [1, 1, 1, 1]

    def test_partition_validity(self):
        rng = np.random.default_rng(0)
        templates = [template(f"t{i}", rng.normal(size=8)) for i in range(30)]
        groups = cluster_templates(templates)
        seen = [m.template_id for g in groups for m in g.members]
        assert sorted(seen) == sorted(t.template_id for t in templates)
        assert len(seen) == len(set(seen))

    def test_exact_boundary_stays_split(self):
        # cos([5,0],[3,4]) = 15/25 = 0.6 exactly; the threshold is strict
        groups = cluster_templates([template("u", [5.0, 0.0]), template("v", [3.0, 4.0])])
        assert len(groups) == 2

    def test_just_above_boundary_joins(self):
        groups = cluster_templates(
            [template("u", unit_at(0.0)), template("v", unit_at(math.acos(0.601)))]
        )
        assert len(groups) == 1

    def test_chaining_through_middle_template(self):
        # sim(t1,t2)=0.9 and sim(t2,t3)=0.8; sim(t1,t3)=cos(acos(.9)+acos(.8))
        # is ~0.4585, below threshold, so t3 joins only through t2's group
        t1 = template("t1", unit_at(0.0))
        t2 = template("t2", unit_at(math.acos(0.9)))
        t3 = template("t3", unit_at(math.acos(0.9) + math.acos(0.8)))
        sim = lambda a, b: float(np.dot(a.embedding, b.embedding))
        assert sim(t1, t2) == pytest.approx(0.9, abs=1e-12)
        assert sim(t2, t3) == pytest.approx(0.8, abs=1e-12)
        assert sim(t1, t3) < 0.60
        groups = cluster_templates([t1, t2, t3])
        assert len(groups) == 1
        assert [m.template_id for m in groups[0].members] == ["t1", "t2", "t3"]

    def test_order_sensitivity_regression(self):
        theta = math.acos(0.7)
        u = template("u", unit_at(0.0))
        v = template("v", unit_at(theta))
        w = template("w", unit_at(2 * theta))
        assert len(cluster_templates([u, v, w])) == 1
        assert len(cluster_templates([u, w, v])) == 2

    def test_threshold_out_of_range(self):
        with pytest.raises(InputError):
            cluster_templates([template("t", [1.0, 0.0])], threshold=1.0)

    def test_missing_embedding_rejected(self):
        bare = TemplateEntry(template_id="t", template_text="x", task_ids=())
        with pytest.raises(InputError):
            cluster_templates([bare])

    def test_mixed_dims_rejected(self):
        with pytest.raises(InputError):
            cluster_templates([template("a", [1.0, 0.0]), template("b", [1.0, 0.0, 0.0])])


class TestFunctionalCorrectness:
    def _results(self, completed, total):
        return [result(f"t{i}", i < completed) for i in range(total)]

    def test_58_of_812(self):
        assert functional_correctness(self._results(58, 812)) * 100 == pytest.approx(7.14, abs=0.01)

    def test_76_of_812(self):
        assert functional_correctness(self._results(76, 812)) * 100 == pytest.approx(9.36, abs=0.01)

    def test_none_completed(self):
        assert functional_correctness(self._results(0, 10)) == 0.0

    def test_count_is_integral(self):
        results = self._results(7, 23)
        assert functional_correctness(results) * len(results) == pytest.approx(7.0, abs=1e-9)

    def test_duplicates_rejected(self):
        with pytest.raises(InputError, match="duplicate"):
            functional_correctness([result("a", True), result("a", False)])

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            functional_correctness([])


class TestDetectTrivial:
    def test_none_completed(self):
        assert detect_trivial([result("a", False), result("b", False)]) == set()

    def test_completed_subset(self):
        results = [result("a", True), result("b", False), result("c", True)]
        assert detect_trivial(results) == {"a", "c"}

    def test_duplicates_rejected(self):
        with pytest.raises(InputError):
            detect_trivial([result("a", True), result("a", True)])


def _grouping(spec):
    """Build groups from {group_id: {template_id: [task_ids]}}."""
    groups = []
    for gid, members in spec.items():
        entries = tuple(
            TemplateEntry(template_id=tid, template_text=tid, task_ids=tuple(tasks))
            for tid, tasks in members.items()
        )
        groups.append(CapabilityGroup(group_id=gid, members=entries))
    return groups


class TestCapabilityScore:
    def test_21_of_136_groups(self):
        groups = _grouping({g: {f"tmpl{g}": [f"task{g}"]} for g in range(136)})
        results = [result(f"task{g}", g < 21) for g in range(136)]
        score = capability_score(groups, results, trivial=set())
        assert score * 100 == pytest.approx(15.44, abs=0.01)

    def test_trivial_only_completion_earns_nothing(self):
        groups = _grouping({0: {"tmpl": ["a", "b"]}})
        results = [result("a", True), result("b", False)]
        assert capability_score(groups, results, trivial={"a"}) == 0.0

    def test_one_group_one_nontrivial_success(self):
        groups = _grouping({0: {"tmpl": ["a"]}})
        assert capability_score(groups, [result("a", True)], trivial=set()) == 1.0

    def test_monotone_in_added_success(self):
        groups = _grouping({0: {"t0": ["a"]}, 1: {"t1": ["b"]}})
        before = capability_score(groups, [result("a", True), result("b", False)], set())
        after = capability_score(groups, [result("a", True), result("b", True)], set())
        assert after >= before

    def test_unmapped_task_rejected(self):
        groups = _grouping({0: {"tmpl": ["a"]}})
        with pytest.raises(InputError):
            capability_score(groups, [result("zzz", True)], trivial=set())

    def test_task_in_two_groups_rejected(self):
        groups = _grouping({0: {"t0": ["a"]}, 1: {"t1": ["a"]}})
        with pytest.raises(InputError):
            task_to_group(groups)


class TestCapabilityDiff:
    GROUPS = _grouping({0: {"t0": ["a"]}, 1: {"t1": ["b"]}})

    def test_identical_results(self):
        results = [result("a", True), result("b", False)]
        assert capability_diff(self.GROUPS, results, list(results), set()) == (set(), set())

    def test_acquired_group(self):
        before = [result("a", False), result("b", False)]
        after = [result("a", True), result("b", False)]
        assert capability_diff(self.GROUPS, before, after, set()) == ({0}, set())

    def test_one_lost_one_acquired(self):
        res_a = [result("a", True), result("b", False)]
        res_b = [result("a", False), result("b", True)]
        assert capability_diff(self.GROUPS, res_a, res_b, set()) == ({1}, {0})

    def test_coverage_mismatch_rejected(self):
        with pytest.raises(InputError, match="different tasks"):
            capability_diff(self.GROUPS, [result("a", True)], [result("b", True)], set())
