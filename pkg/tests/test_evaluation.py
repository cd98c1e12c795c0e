import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgalign.evaluation import (DEGREE_BUCKETS, SimilarityMatrix, csls_adjust, degree_breakdown, degree_bucket,
                                evaluate_embeddings, rank_metrics, report_from_ranks, similarity_matrix, true_ranks,
                                write_rank_dump)

from oracles import csls_oracle, hits_mrr_oracle, ranks_oracle


class TestSimilarity:
    def test_identical_single_row(self):
        h = np.array([[0.3, -1.0, 2.0]])
        assert similarity_matrix(h, h, "neg-l2").scores[0, 0] == 0.0
        assert similarity_matrix(h, h, "cosine").scores[0, 0] == pytest.approx(1.0)

    def test_permuted_targets_permute_columns(self, rng):
        A, B = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        perm = rng.permutation(5)
        for metric in ("cosine", "neg-l2"):
            np.testing.assert_allclose(similarity_matrix(A, B[perm], metric).scores,
                                       similarity_matrix(A, B, metric).scores[:, perm])

    def test_matches_scalar_oracle(self, rng):
        A, B = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        cos = similarity_matrix(A, B, "cosine").scores
        l2 = similarity_matrix(A, B, "neg-l2").scores
        for i in range(3):
            for j in range(3):
                assert cos[i, j] == pytest.approx(A[i] @ B[j] / np.linalg.norm(A[i]) / np.linalg.norm(B[j]))
                assert l2[i, j] == pytest.approx(-np.sum((A[i] - B[j]) ** 2))

    def test_errors(self):
        with pytest.raises(ValueError):
            similarity_matrix(np.zeros((1, 2)), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            similarity_matrix(np.zeros((1, 2)), np.zeros((1, 2)), "dot")


class TestCSLS:
    def test_constant_matrix(self):
        np.testing.assert_allclose(csls_adjust(np.full((4, 5), 0.7), 2), 0.0, atol=1e-15)

    def test_full_neighbourhood_uses_means(self, rng):
        S = rng.normal(size=(4, 4))
        want = 2 * S - S.mean(axis=1, keepdims=True) - S.mean(axis=0, keepdims=True)
        np.testing.assert_allclose(csls_adjust(S, 4), want)

    @pytest.mark.parametrize("shape,k", [((4, 4), 2), ((5, 7), 3), ((10, 10), 10), ((3, 8), 1)])
    def test_matches_cell_oracle(self, rng, shape, k):
        S = rng.normal(size=shape)
        np.testing.assert_allclose(csls_adjust(S, k), csls_oracle(S, k), rtol=1e-12)

    def test_clamps_and_warns(self, rng, caplog):
        S = rng.normal(size=(3, 3))
        out = csls_adjust(S, 10)
        np.testing.assert_allclose(out, csls_oracle(S, 3))
        assert "exceeds" in caplog.text

    def test_keeps_wrapper(self, rng):
        S = SimilarityMatrix(rng.normal(size=(2, 3)), np.array([4, 5]), np.array([7, 8, 9]))
        out = csls_adjust(S, 2)
        assert isinstance(out, SimilarityMatrix) and out.cols.tolist() == [7, 8, 9]

    def test_k_zero(self):
        with pytest.raises(ValueError):
            csls_adjust(np.zeros((2, 2)), 0)


class TestRanks:
    def test_perfect_diagonal(self):
        rep = rank_metrics(np.eye(5) + 0.1, range(5))
        assert rep.hits1 == 1.0 and rep.mrr == 1.0

    def test_known_ranks(self):
        rep = report_from_ranks(np.array([1, 2, 4]))
        assert rep.mrr == pytest.approx(0.5833, abs=1e-4)
        assert rep.hits == {"1": pytest.approx(1 / 3), "10": 1.0}

    def test_constant_scores_rank_last(self):
        rep = rank_metrics(np.zeros((10, 10)), range(10))
        assert rep.hits1 == 0.0
        assert true_ranks(np.zeros((10, 10)), range(10)).tolist() == [10] * 10

    def test_matches_oracle(self, rng):
        S = rng.integers(0, 4, size=(8, 6)).astype(float)
        truth = rng.integers(0, 6, size=8)
        assert true_ranks(S, truth).tolist() == ranks_oracle(S, truth)

    def test_missing_truth(self):
        with pytest.raises(ValueError):
            rank_metrics(np.zeros((2, 2)), [0, None])
        with pytest.raises(ValueError):
            true_ranks(np.zeros((2, 2)), [0])
        with pytest.raises(ValueError):
            true_ranks(np.zeros((2, 2)), [0, 2])

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.floats(-5, 5)),
           st.data())
    def test_metric_sanity(self, S, data):
        truth = data.draw(st.lists(st.integers(0, S.shape[1] - 1), min_size=S.shape[0], max_size=S.shape[0]))
        rep = rank_metrics(S, truth, k_list=(1, 2, 3, 5, 10))
        values = [rep.hits[k] for k in ("1", "2", "3", "5", "10")]
        assert values == sorted(values)
        assert rep.hits1 <= rep.mrr <= 1.0
        h1, mrr = hits_mrr_oracle(ranks_oracle(S, truth), 1)
        assert rep.hits1 == pytest.approx(h1) and rep.mrr == pytest.approx(mrr)


class TestDegrees:
    @pytest.mark.parametrize("deg,label", [(0, "1"), (1, "1"), (5, "5"), (6, ">=6"), (40, ">=6")])
    def test_bucket_labels(self, deg, label):
        assert degree_bucket(deg) == label

    def test_single_bucket(self):
        hits, counts = degree_breakdown(np.array([1, 2, 1]), np.array([1, 1, 1]))
        assert counts == {"1": 3, "2": 0, "3": 0, "4": 0, "5": 0, ">=6": 0}
        assert hits["1"] == pytest.approx(2 / 3) and hits["2"] is None

    def test_counts_partition_the_test_set(self, rng):
        deg = rng.integers(0, 12, size=50)
        _, counts = degree_breakdown(rng.integers(1, 5, size=50), deg)
        assert sum(counts.values()) == 50 and list(counts) == list(DEGREE_BUCKETS)


class TestEvaluateEmbeddings:
    def test_pure_and_serialisable(self, rng):
        H = rng.normal(size=(20, 4))
        pairs = [(i, i + 10) for i in range(10)]
        a = evaluate_embeddings(H, pairs, source_degrees=np.arange(10))
        b = evaluate_embeddings(H, pairs, source_degrees=np.arange(10))
        a.runtime_s = b.runtime_s = 0.0
        assert a.to_json() == b.to_json()
        assert json.loads(a.to_json())["count"] == 10

    def test_missing_target(self, rng):
        with pytest.raises(ValueError, match="missing"):
            evaluate_embeddings(rng.normal(size=(4, 2)), [(0, 2), (1, 3)], candidates=[2])

    def test_extra_candidates_can_only_lower_scores(self, rng):
        H = rng.normal(size=(30, 4))
        pairs = [(i, i + 15) for i in range(10)]
        closed = evaluate_embeddings(H, pairs, csls_k=0)
        opened = evaluate_embeddings(H, pairs, candidates=range(15, 30), csls_k=0)
        assert opened.mrr <= closed.mrr

    def test_random_embeddings_are_near_chance(self):
        hits = []
        for seed in range(20):
            H = np.random.default_rng(seed).normal(size=(200, 16))
            hits.append(evaluate_embeddings(H, [(i, i + 100) for i in range(100)]).hits1)
        # one correct match in a hundred on average; the bound is the binomial 99.9% quantile
        assert np.mean(hits) <= 0.0398

    def test_rank_dump(self, tmp_path):
        write_rank_dump(tmp_path / "r.tsv", [(0, 1)], [3], ["a"], ["x", "y"])
        assert (tmp_path / "r.tsv").read_text() == "a\ty\t3\n"
