import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajeval.embeddings import EmbeddedTrajectory
from trajeval.errors import AggregationError, InputError
from trajeval.vertex import (
    NodeSimilarityConfig,
    TaskScore,
    aggregate_scores,
    compute_z_rand,
    decay,
    gaussian_kernel,
    median_heuristic_bandwidth,
    node_similarity,
    score_task,
    vertex_dtw_single,
)

SIGMA_ONE = NodeSimilarityConfig(bandwidth=1.0)
MEDIAN = NodeSimilarityConfig()


def emb(rows, task_id="t"):
    return EmbeddedTrajectory(task_id=task_id, vectors=np.asarray(rows, dtype=np.float64))


def _score(task_id, score):
    return TaskScore(task_id=task_id, score=score, per_reference=(score,), chosen_reference=0,
                     z_rand=(0.0,))


class TestConfig:
    def test_rejects_unknown_mode(self):
        with pytest.raises(InputError):
            NodeSimilarityConfig(bandwidth="mean")

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(InputError):
            NodeSimilarityConfig(bandwidth=0.0)


class TestKernelAndDecay:
    def test_kernel_at_zero_distance(self):
        assert gaussian_kernel(np.ones(3), np.ones(3), sigma=2.5) == pytest.approx(1.0)

    def test_kernel_at_two_sigma_squared(self):
        # ||x-y||^2 = 2 sigma^2 gives exp(-1)
        x, y = np.array([0.0]), np.array([math.sqrt(2.0)])
        assert gaussian_kernel(x, y, sigma=1.0) == pytest.approx(math.exp(-1.0))

    def test_node_similarity_mean_of_four_kernels(self):
        # four cross pairs with squared distances 0, 1, 1, 4 at sigma=1
        refs = [np.array([0.0]), np.array([1.0])]
        tests = [np.array([0.0]), np.array([-1.0])]
        expected = (1.0 + math.exp(-0.5) + math.exp(-0.5) + math.exp(-2.0)) / 4.0
        assert node_similarity(refs, tests, sigma=1.0) == pytest.approx(expected, abs=1e-12)

    def test_node_similarity_empty_rejected(self):
        with pytest.raises(InputError):
            node_similarity([], [np.ones(2)], sigma=1.0)

    @pytest.mark.parametrize("i,j,expected", [(3, 3, 1.0), (2, 3, 0.5), (0, 3, 0.25)])
    def test_decay(self, i, j, expected):
        assert decay(i, j) == pytest.approx(expected)


class TestMedianHeuristic:
    def test_three_points_on_a_line(self):
        vectors = np.array([[0.0], [1.0], [3.0]])
        # pairwise distances 1, 3, 2 -> median 2
        assert median_heuristic_bandwidth(vectors) == pytest.approx(2.0)

    def test_degenerate_fallback(self):
        assert median_heuristic_bandwidth(np.ones((4, 2))) == pytest.approx(1.0)
        assert median_heuristic_bandwidth(np.ones((1, 2))) == pytest.approx(1.0)


class TestVertexSingle:
    def test_self_score_identity(self):
        rng = np.random.default_rng(0)
        x = emb(rng.normal(size=(5, 4)))
        assert vertex_dtw_single(x, x, 0.0, MEDIAN) == pytest.approx(1.0, abs=1e-9)

    def test_zrand_at_least_one_floors_score(self):
        rng = np.random.default_rng(1)
        a, b = emb(rng.normal(size=(4, 3)), "a"), emb(rng.normal(size=(5, 3)), "b")
        assert vertex_dtw_single(a, b, 1.0, MEDIAN) == 0.0

    def test_hand_traced_three_vs_two(self):
        # DTW path (0,0),(1,1),(2,1); sigma fixed at 1, z_rand = 0.1.
        # terms: 1*1, 1*exp(-1/2), 0.5*1 -> clamped (t - 0.1) each.
        ref = emb([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], "ref")
        test = emb([[1.0, 0.0], [1.0, 1.0]], "test")
        expected = (0.9 + (math.exp(-0.5) - 0.1) + 0.4) / 3.0
        got = vertex_dtw_single(ref, test, 0.1, SIGMA_ONE)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_strict_degradation_when_appending_dissimilar_step(self):
        rng = np.random.default_rng(2)
        base = rng.normal(size=(4, 3))
        ref = emb(base, "ref")
        same = vertex_dtw_single(ref, emb(base, "test"), 0.0, SIGMA_ONE)
        extended = np.vstack([base, base[-1] + 10.0])
        worse = vertex_dtw_single(ref, emb(extended, "test"), 0.0, SIGMA_ONE)
        assert worse < same

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=1, max_value=6),
        st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_range_property(self, m, n, z_rand, seed):
        rng = np.random.default_rng(seed)
        a = emb(rng.normal(size=(m, 3)), "a")
        b = emb(rng.normal(size=(n, 3)), "b")
        score = vertex_dtw_single(a, b, z_rand, MEDIAN)
        assert 0.0 <= score <= 1.0

    def test_monotone_in_z_rand(self):
        rng = np.random.default_rng(3)
        a, b = emb(rng.normal(size=(4, 3)), "a"), emb(rng.normal(size=(6, 3)), "b")
        values = [vertex_dtw_single(a, b, z, SIGMA_ONE) for z in np.linspace(-0.5, 1.2, 9)]
        assert all(x >= y - 1e-12 for x, y in zip(values, values[1:]))


class TestZRand:
    def test_baseline_identical_to_ref(self):
        rng = np.random.default_rng(4)
        x = emb(rng.normal(size=(4, 3)))
        assert compute_z_rand(x, x, MEDIAN) == pytest.approx(1.0, abs=1e-9)

    def test_one_step_baseline_vs_three_step_ref(self):
        # unique path (0,0),(1,0),(2,0): decay 1, 1/2, 1/3 against kernels
        # exp(0), exp(-1), exp(-1/2) at sigma = 1.
        ref = emb([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], "ref")
        baseline = emb([[1.0, 0.0]], "baseline")
        expected = (1.0 + 0.5 * math.exp(-1.0) + (1.0 / 3.0) * math.exp(-0.5)) / 3.0
        assert compute_z_rand(ref, baseline, SIGMA_ONE) == pytest.approx(expected, abs=1e-12)

    def test_unclamped_can_exceed_test_score(self):
        # z_rand uses no clamp: with a far-away baseline it is small but positive
        ref = emb([[1.0, 0.0]], "ref")
        baseline = emb([[100.0, 0.0]], "baseline")
        z = compute_z_rand(ref, baseline, SIGMA_ONE)
        assert 0.0 < z < 1e-9 or z == pytest.approx(math.exp(-0.5 * 99.0**2))


class TestScoreTask:
    def test_copy_reference_wins(self):
        rng = np.random.default_rng(5)
        test = emb(rng.normal(size=(4, 3)), "task")
        unrelated = emb(rng.normal(size=(4, 3)) + 50.0, "task")
        baseline = emb(rng.normal(size=(1, 3)) - 50.0, "task")
        result = score_task([unrelated, test], test, baseline, SIGMA_ONE)
        assert result.chosen_reference == 1
        assert result.score == pytest.approx(1.0, abs=1e-6)
        assert result.score == max(result.per_reference)

    def test_single_reference_equals_vertex_single(self):
        rng = np.random.default_rng(6)
        ref = emb(rng.normal(size=(3, 3)), "task")
        test = emb(rng.normal(size=(4, 3)), "task")
        baseline = emb(rng.normal(size=(1, 3)), "task")
        result = score_task([ref], test, baseline, SIGMA_ONE)
        z = compute_z_rand(ref, baseline, SIGMA_ONE)
        assert result.z_rand == (pytest.approx(z),)
        assert result.score == pytest.approx(vertex_dtw_single(ref, test, z, SIGMA_ONE))

    def test_tie_picks_lowest_index(self):
        ref = emb([[1.0, 0.0]], "task")
        test = emb([[1.0, 0.0]], "task")
        baseline = emb([[0.0, 1.0]], "task")
        result = score_task([ref, ref, ref], test, baseline, SIGMA_ONE)
        assert result.chosen_reference == 0

    def test_score_invariant_under_ref_permutation(self):
        rng = np.random.default_rng(7)
        refs = [emb(rng.normal(size=(3, 3)), "task") for _ in range(3)]
        test = emb(rng.normal(size=(4, 3)), "task")
        baseline = emb(rng.normal(size=(1, 3)), "task")
        forward = score_task(refs, test, baseline, MEDIAN)
        reversed_ = score_task(list(reversed(refs)), test, baseline, MEDIAN)
        assert forward.score == pytest.approx(reversed_.score, abs=1e-12)
        assert forward.per_reference == tuple(reversed(reversed_.per_reference))

    def test_median_bandwidth_shared_across_references(self):
        # with MedianHeuristic, sigma comes from the union of refs and test, so
        # adding a far-away second reference changes the first reference's score
        near = emb([[1.0, 0.0], [0.0, 1.0]], "task")
        test = emb([[1.0, 0.1], [0.1, 1.0]], "task")
        far = emb([[40.0, 0.0], [0.0, 40.0]], "task")
        baseline = emb([[5.0, 5.0]], "task")
        alone = score_task([near], test, baseline, MEDIAN)
        with_far = score_task([near, far], test, baseline, MEDIAN)
        assert alone.per_reference[0] != pytest.approx(with_far.per_reference[0])

    def test_empty_refs_rejected(self):
        test = emb([[1.0, 0.0]], "task")
        with pytest.raises(InputError):
            score_task([], test, test, MEDIAN)


class TestAggregate:
    def test_uniform_mean(self):
        scores = [_score("a", 0.2), _score("b", 0.4)]
        assert aggregate_scores(scores) == pytest.approx(0.3)

    def test_by_capability_group_means(self):
        scores = [_score("a1", 0.2), _score("a2", 0.4), _score("b1", 1.0)]
        groups = {"a1": 0, "a2": 0, "b1": 1}
        got = aggregate_scores(scores, weighting="capability", capability_groups=groups)
        assert got == pytest.approx(0.65)

    def test_exclude_trivial_drops_group(self):
        scores = [_score("a1", 0.2), _score("a2", 0.4), _score("b1", 1.0)]
        groups = {"a1": 0, "a2": 0, "b1": 1}
        got = aggregate_scores(
            scores,
            weighting="capability",
            capability_groups=groups,
            exclude_trivial=True,
            trivial_tasks={"b1"},
        )
        assert got == pytest.approx(0.3)

    def test_empty_after_exclusion_is_error(self):
        with pytest.raises(AggregationError):
            aggregate_scores([_score("a", 0.5)], exclude_trivial=True, trivial_tasks={"a"})

    def test_unmapped_task_rejected(self):
        with pytest.raises(InputError):
            aggregate_scores([_score("a", 0.5)], weighting="capability", capability_groups={})

    def test_unknown_weighting_rejected(self):
        with pytest.raises(InputError):
            aggregate_scores([_score("a", 0.5)], weighting="harmonic")
