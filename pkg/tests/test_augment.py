import logging

import numpy as np
import pytest

from kgalign.augment import (PseudoPairPool, augment_pool, mutual_nearest, nearest_negatives, propose_pseudo_pairs,
                             truncated_uniform_negatives)
from kgalign.encoder import EncoderConfig
from kgalign.graph import SynthConfig, generate_synthetic_pair
from kgalign.trainer import TrainConfig, semi_supervised_train

from oracles import nearest_oracle


class TestNearestNegatives:
    def test_all_candidates_sorted(self, rng):
        E = rng.normal(size=(6, 3))
        got = truncated_uniform_negatives(E[0], E, [1, 2, 3, 4, 5], 5)
        assert got.tolist() == nearest_oracle(E[0], E, [1, 2, 3, 4, 5], 5)

    def test_equidistant_ties_go_to_lower_index(self):
        E = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        assert truncated_uniform_negatives(E[0], E, [4, 2, 3, 1], 2).tolist() == [1, 2]

    @pytest.mark.parametrize("seed", range(5))
    def test_fifty_candidates_match_full_sort(self, seed):
        rng = np.random.default_rng(seed)
        E = rng.normal(size=(60, 4))
        cand = list(range(10, 60))
        got = truncated_uniform_negatives(E[0], E, cand, 10, exclude=12)
        assert got.tolist() == nearest_oracle(E[0], E, cand, 10, exclude=12)

    def test_too_few_candidates_warns(self, rng, caplog):
        E = rng.normal(size=(4, 2))
        with caplog.at_level(logging.WARNING):
            got = truncated_uniform_negatives(E[0], E, [1, 2], 5)
        assert sorted(got.tolist()) == [1, 2]
        assert "only 2 candidates" in caplog.text

    def test_batched_matches_single(self, rng):
        E = rng.normal(size=(20, 3))
        E[15] = E[12]  # a tie inside the pool
        anchors, positives = np.array([0, 1, 2]), np.array([10, 11, 12])
        pool = np.arange(19, 9, -1)
        got = nearest_negatives(E, anchors, positives, pool, 4)
        for row, a, p in zip(got, anchors, positives):
            assert row.tolist() == nearest_oracle(E[a], E, pool, 4, exclude=p)


class TestMutualNearest:
    def test_mutual_pair_accepted(self):
        S = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert mutual_nearest(S) == [(0, 0), (1, 1)]

    def test_one_sided_preference_rejected(self):
        # row 0 prefers column 0, but column 0 prefers row 1
        S = np.array([[0.9, 0.1], [0.95, 0.2]])
        assert (0, 0) not in mutual_nearest(S)
        assert mutual_nearest(S) == [(1, 0)]

    def test_margin_gate(self):
        S = np.array([[0.9, 0.85], [0.1, 0.97]])
        assert mutual_nearest(S) == [(0, 0), (1, 1)]
        # row 0 beats its runner-up by only 0.05; row 1 and column 1 clear 0.1
        assert mutual_nearest(S, min_margin=0.1) == [(1, 1)]

    def test_single_column_has_no_runner_up(self):
        # only the column gap (0.4) applies
        S = np.array([[0.3], [0.7]])
        assert mutual_nearest(S, min_margin=0.3) == [(1, 0)]
        assert mutual_nearest(S, min_margin=0.5) == []

    def test_empty(self):
        assert mutual_nearest(np.zeros((0, 3))) == []

    def test_accepted_pairs_are_mutual_in_returned_scores(self, rng):
        H = rng.normal(size=(30, 5))
        found, S = propose_pseudo_pairs(H, range(15), range(15, 30), return_scores=True)
        for u, v in found:
            assert S[u].argmax() == v - 15 and S[:, v - 15].argmax() == u


class TestPool:
    def test_claimed_entities_rejected(self):
        pool = PseudoPairPool.with_claimed([0], [5])
        pool.add(1, 6, 3)
        for u, v in ((0, 7), (2, 5), (1, 8), (3, 6)):
            with pytest.raises(ValueError):
                pool.add(u, v, 4)
        assert pool.as_array().tolist() == [[1, 6]]

    def test_rounds_grow_monotonically_and_stay_injective(self, rng):
        H = rng.normal(size=(40, 6))
        pool = PseudoPairPool.with_claimed([0, 1], [20, 21])
        sizes = []
        for epoch in range(5):
            augment_pool(pool, H + 0.3 * rng.normal(size=H.shape), range(20), range(20, 40), epoch)
            sizes.append(len(pool))
        assert sizes == sorted(sizes) and sizes[-1] > 0
        left, right = pool.as_array().T
        assert len(set(left)) == len(left) and len(set(right)) == len(right)
        assert not {0, 1} & set(left) and not {20, 21} & set(right)

    def test_tsv_dump(self, tmp_path):
        pool = PseudoPairPool()
        pool.add(1, 12, 5)
        pool.write_tsv(tmp_path / "p.tsv", ["a", "b"], ["x", "y", "z"], offset=10)
        assert (tmp_path / "p.tsv").read_text() == "b\tz\t5\n"

    def test_identical_embeddings_pair_up_exactly(self, rng):
        base = rng.normal(size=(25, 8))
        H = np.concatenate([base, base[::-1]])
        found = propose_pseudo_pairs(H, range(25), range(25, 50), csls_k=5, min_margin=0.1)
        assert sorted(found) == [(i, 49 - i) for i in range(25)]


def test_noiseless_pseudo_pairs_are_precise():
    syn = generate_synthetic_pair(SynthConfig(200, 10, 6.0, 0.0, 0.3, 42))
    enc = EncoderConfig(depth=3, dropout_rate=0.3, add_self=False, input_dropout=True)
    res = semi_supervised_train(syn.pair, enc, train_cfg=TrainConfig(learning_rate=0.02, epochs=40, patience=40),
                                augment_start=10)
    pairs = res.pool.as_array()
    assert len(pairs) >= 50
    correct = np.mean(syn.truth[pairs[:, 0]] == pairs[:, 1] - 200)
    assert correct >= 0.95
    sizes = [r["pseudo_pairs"] for r in res.history if "pseudo_pairs" in r]
    assert sizes == sorted(sizes)
