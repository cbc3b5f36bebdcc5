import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hlam.hierarchy import induce_patterns
from hlam.model import ItemNoise, PatternSet, gamma_matrix
from hlam.simulate import (SimDesign, align_columns, build_q, build_q1, build_q2, build_q_factorization,
                           build_qblock, entry_diff, metric_acc_q, metric_mismatch_q, metric_one_minus_fdr,
                           metric_tpr, reconstruct, reconstruction_error, replication_seed, sample_data,
                           tree_hierarchy)


class TestDesigns:
    def test_q1_three(self):
        np.testing.assert_array_equal(build_q1(3), [[1, 1, 0], [0, 1, 1], [0, 0, 1]])

    def test_block(self):
        B = build_qblock(4)
        assert B.shape == (12, 4)
        np.testing.assert_array_equal(B[:4], np.eye(4))

    def test_stack(self):
        Q = build_q(120, 8)
        assert Q.shape == (120, 8)
        np.testing.assert_array_equal(Q, np.tile(build_qblock(8), (5, 1)))
        with pytest.raises(ValueError):
            build_q(100, 8)

    def test_q2_sums(self):
        Q2 = build_q2()
        assert Q2.sum(axis=1).tolist() == [2] * 7
        assert Q2.sum(axis=0).tolist() == [2] * 7
        assert Q2[6].tolist() == [1, 0, 0, 0, 0, 0, 1]

    def test_factorization_q(self):
        Q = build_q_factorization(1000, 7)
        assert Q.shape == (1000, 7)
        np.testing.assert_array_equal(Q[:7], np.eye(7))
        np.testing.assert_array_equal(Q[500:507], build_q2())


class TestSampling:
    def test_deterministic(self):
        d = SimDesign(N=50, J=24, K=8, hierarchy=tree_hierarchy(), noise=0.2)
        a = sample_data(d, np.random.default_rng(3))
        b = sample_data(d, np.random.default_rng(3))
        c = sample_data(d, np.random.default_rng(4))
        np.testing.assert_array_equal(a.responses, b.responses)
        assert not np.array_equal(a.responses, c.responses)

    def test_patterns_respect_hierarchy(self):
        d = SimDesign(N=300, J=24, K=8, hierarchy=tree_hierarchy(), noise=0.2)
        s = sample_data(d, np.random.default_rng(0))
        allowed = set(induce_patterns(tree_hierarchy()).as_tuples())
        assert {tuple(r) for r in s.assignments.tolist()} <= allowed

    def test_full_mask(self):
        s = sample_data(SimDesign(N=20, J=24, K=8), np.random.default_rng(0))
        assert s.observed.all()

    def test_missing_rate_and_coverage(self):
        s = sample_data(SimDesign(N=400, J=24, K=8, missing_rate=0.5), np.random.default_rng(0))
        assert abs(1 - s.observed.mean() - 0.5) < 0.02
        assert s.observed.any(axis=0).all() and s.observed.any(axis=1).all()

    def test_noise_level(self):
        s = sample_data(SimDesign(N=2000, J=24, K=8, noise=0.2), np.random.default_rng(1))
        assert abs(np.mean(s.responses != s.ideal) - 0.2) < 0.01

    def test_replication_seeds_distinct(self):
        assert len({replication_seed(7, i) for i in range(50)}) == 50
        assert replication_seed(7, 3) == replication_seed(7, 3)


class TestReconstruct:
    def test_threshold(self):
        A = np.array([[1], [0]])
        out = reconstruct(A, [[1]], ItemNoise([0.8], [0.2]))
        np.testing.assert_array_equal(out, [[1], [0]])
        out = reconstruct(A, [[1]], ItemNoise([0.6], [0.45]))
        np.testing.assert_array_equal(out, [[1], [0]])

    def test_truth_reproduces_ideal(self):
        s = sample_data(SimDesign(N=100, J=24, K=8, hierarchy=tree_hierarchy(), noise=0.0),
                        np.random.default_rng(2))
        R_hat = reconstruct(s.assignments, s.Q, s.theta)
        assert reconstruction_error(R_hat, s.ideal) == 0.0


class TestMetrics:
    TREE = induce_patterns(tree_hierarchy())

    def test_acc_identical_and_permuted(self):
        Q = build_q(24, 8)
        assert metric_acc_q(Q, Q, self.TREE) == 1.0
        perm = [2, 0, 1, 3, 4, 5, 7, 6]
        assert metric_acc_q(Q[:, perm], Q, self.TREE) == 1.0

    def test_acc_one_row(self):
        Q_true = np.eye(8, dtype=np.uint8)[:6]
        Q_hat = Q_true.copy()
        Q_hat[0] = np.eye(8, dtype=np.uint8)[3]
        G_t, G_h = gamma_matrix(Q_true, self.TREE), gamma_matrix(Q_hat, self.TREE)
        assert int((G_t != G_h).sum()) == 3
        assert metric_acc_q(Q_hat, Q_true, self.TREE) == pytest.approx(0.95)
        assert metric_mismatch_q(Q_hat, Q_true, self.TREE) == pytest.approx(0.05)

    def test_set_metrics(self):
        truth = self.TREE.patterns
        assert metric_tpr(truth, truth) == 1.0 and metric_one_minus_fdr(truth, truth) == 1.0
        extra = np.vstack([truth, [[0, 1, 0, 0, 0, 0, 0, 0]]])
        assert metric_tpr(extra, truth) == 1.0
        assert metric_one_minus_fdr(extra, truth) == pytest.approx(10 / 11)
        half = truth[:5]
        assert metric_tpr(half, truth) == 0.5 and metric_one_minus_fdr(half, truth) == 1.0
        with pytest.raises(ValueError):
            metric_one_minus_fdr(np.zeros((0, 8)), truth)

    @given(arrays(np.uint8, (7, 4), elements=st.integers(0, 1)), arrays(np.uint8, (7, 4), elements=st.integers(0, 1)),
           st.permutations(range(4)))
    def test_entry_diff_permutation_invariant(self, A, B, perm):
        perm = list(perm)
        assert entry_diff(A, B) == entry_diff(B, A)
        assert entry_diff(A[:, perm], B) == entry_diff(A, B)
        assert entry_diff(A[:, perm], A) == 0

    @given(arrays(np.uint8, (6, 4), elements=st.integers(0, 1)), st.permutations(range(4)))
    def test_acc_permutation_invariant(self, Q, perm):
        pats = PatternSet.from_rows(np.array([[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1], [0, 0, 1, 0]]))
        other = Q.copy()
        other[0] = 1 - other[0]
        a = metric_acc_q(other, Q, pats)
        assert metric_acc_q(other[:, list(perm)], Q, pats) == pytest.approx(a)
        assert 0.0 <= a <= 1.0
        assert metric_acc_q(Q[:, list(perm)], Q, pats) == 1.0

    def test_alignment_recovers_permutation(self):
        Q = build_q(24, 8)
        perm = np.array([3, 1, 0, 2, 5, 4, 7, 6])
        al = align_columns(Q[:, perm], Q, self.TREE.patterns)
        assert al.agreement == 1.0 and al.exhaustive

    @given(arrays(np.uint8, (6, 4), elements=st.integers(0, 1)), arrays(np.uint8, (6, 4), elements=st.integers(0, 1)))
    def test_alignment_matches_plain_loop(self, Q_hat, Q_true):
        import itertools
        pats = np.array([[0, 0, 0, 0], [1, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 1], [1, 1, 1, 1]], dtype=np.uint8)
        G_true = gamma_matrix(Q_true, pats)
        best = max(itertools.permutations(range(4)),
                   key=lambda p: ((gamma_matrix(Q_hat[:, list(p)], pats) == G_true).sum(),
                                  -(Q_hat[:, list(p)] != Q_true).sum()))
        al = align_columns(Q_hat, Q_true, pats)
        assert al.agreement == pytest.approx((gamma_matrix(Q_hat[:, list(best)], pats) == G_true).mean())
        assert list(al.perm) == list(best)
