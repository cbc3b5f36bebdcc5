import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hlam import pem
from hlam.hierarchy import Hierarchy, induce_patterns
from hlam.model import ItemNoise, PatternSet, ResponseData, all_binary_vectors
from hlam.pem import PemConfig, ebic, enforce_identity, lambda_path, pem_fit, reduce_candidates

from conftest import FORK_EDGES, FORK_PATTERNS

EBIC_EXAMPLE = 334.41993430028674  # 200 + 10 log 1200 + 2 log C(113, 10)


def _sample(rng, patterns, Q, N, noise):
    idx = rng.integers(0, len(patterns), N)
    A = patterns[idx]
    ideal = (Q @ (1 - A).T == 0).T
    flip = rng.random(ideal.shape) < noise
    return ResponseData((ideal ^ flip).astype(np.uint8))


class TestEbic:
    def test_worked_value(self):
        exact = 200 + 10 * math.log(1200) + 2 * math.log(math.comb(113, 10))
        assert exact == pytest.approx(EBIC_EXAMPLE, rel=1e-15)
        assert ebic(-100.0, 10, 113, 1200, 1.0) == pytest.approx(EBIC_EXAMPLE, rel=1e-12)

    def test_no_binomial_when_gamma_zero(self):
        assert ebic(-50.0, 1, 40, 300, 0.0) == pytest.approx(100 + math.log(300))

    def test_full_selection(self):
        assert ebic(-50.0, 7, 7, 300, 1.0) == pytest.approx(100 + 7 * math.log(300))

    def test_range(self):
        with pytest.raises(ValueError):
            ebic(0.0, 5, 3, 10)


class TestPemFit:
    def test_spurious_candidates_pruned(self):
        Q = np.vstack([np.eye(2), np.eye(2)]).astype(np.uint8)
        R = np.repeat(np.array([[1, 0, 1, 0], [0, 1, 0, 1]], dtype=np.uint8), 4, axis=0)
        fit = pem_fit(ResponseData(R), Q, all_binary_vectors(2), -2.0)
        assert fit.selected.as_strings() == ["01", "10"]
        assert np.all(fit.p[[0, 3]] < 1.0 / (2 * 8))

    def test_penalty_equal_to_class_size_floors_everything(self):
        # two subjects per class: lambda + sum(phi) <= 0 for every candidate
        Q = np.vstack([np.eye(2), np.eye(2)]).astype(np.uint8)
        R = np.array([[1, 0, 1, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 1, 0, 1]], dtype=np.uint8)
        fit = pem_fit(ResponseData(R), Q, all_binary_vectors(2), -2.0)
        np.testing.assert_allclose(fit.p, 0.25)
        assert all(fit.truncated_trace)

    def test_weak_penalty_frequencies(self, rng):
        Q = np.tile(np.eye(2, dtype=np.uint8), (4, 1))
        pats = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        idx = np.r_[np.zeros(300, int), np.ones(100, int)]
        R = (Q @ (1 - pats[idx]).T == 0).T.astype(np.uint8)
        fit = pem_fit(ResponseData(R), Q, pats, -1e-6, theta_init=ItemNoise.constant(8, 0.9, 0.1))
        np.testing.assert_allclose(fit.p, [0.75, 0.25], atol=1e-3)

    @settings(max_examples=25)
    @given(st.integers(0, 2 ** 31 - 1), st.sampled_from([-0.2, -1.0, -3.0]))
    def test_normalization_and_ascent(self, seed, lam):
        rng = np.random.default_rng(seed)
        Q = rng.integers(0, 2, (6, 3)).astype(np.uint8)
        Q[:3] = np.eye(3, dtype=np.uint8)
        data = _sample(rng, FORK_PATTERNS, Q, 80, 0.15)
        cands = all_binary_vectors(3)
        fit = pem_fit(data, Q, cands, lam, PemConfig(max_iters=60))
        assert fit.p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(fit.p > 0)
        objs, trunc = fit.objective_trace, fit.truncated_trace
        for t in range(len(trunc)):
            if t + 1 < len(objs) and not trunc[t]:
                assert objs[t + 1] >= objs[t] - 1e-8

    @given(st.integers(0, 2 ** 31 - 1))
    def test_responsibilities_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        Q = rng.integers(0, 2, (5, 3))
        data = _sample(rng, all_binary_vectors(3), Q, 30, 0.2)
        mix = pem._Mixture(data, Q, all_binary_vectors(3))
        p = rng.dirichlet(np.ones(8))
        comp = mix.component_loglik(np.full(5, 0.8), np.full(5, 0.25))
        phi, _ = mix.responsibilities(np.log(p), comp)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-10)

    def test_positive_lambda_rejected(self):
        with pytest.raises(ValueError):
            pem_fit(ResponseData(np.ones((2, 2), np.uint8)), np.eye(2), all_binary_vectors(2), 0.5)


class TestPath:
    def test_single_lambda(self, rng):
        Q = np.tile(np.eye(3, dtype=np.uint8), (3, 1))
        data = _sample(rng, FORK_PATTERNS, Q, 200, 0.1)
        res = lambda_path(data, Q, all_binary_vectors(3), PemConfig(lambda_grid=[-0.6]))
        assert res.best_lambda == -0.6 and len(res.table) == 1

    def test_reselects_generating_set(self, rng):
        Q = np.tile(np.eye(3, dtype=np.uint8), (4, 1))
        data = _sample(rng, FORK_PATTERNS, Q, 600, 0.02)
        res = lambda_path(data, Q, all_binary_vectors(3))
        assert set(res.A_final.as_tuples()) == {tuple(r) for r in FORK_PATTERNS.tolist()}
        assert [r.lam for r in res.table] == list(pem.DEFAULT_LAMBDA_GRID)

    def test_tie_goes_to_larger_penalty(self, rng):
        Q = np.tile(np.eye(3, dtype=np.uint8), (4, 1))
        data = _sample(rng, FORK_PATTERNS, Q, 600, 0.02)
        res = lambda_path(data, Q, FORK_PATTERNS, PemConfig(lambda_grid=[-0.2, -0.4]))
        # nothing to prune, so both fits select the same set and tie exactly
        assert res.table[0].ebic == pytest.approx(res.table[1].ebic, rel=1e-9)
        assert res.best_lambda == -0.4

    def test_table_round_trip(self, rng):
        Q = np.tile(np.eye(3, dtype=np.uint8), (2, 1))
        data = _sample(rng, FORK_PATTERNS, Q, 100, 0.1)
        res = lambda_path(data, Q, all_binary_vectors(3), PemConfig(lambda_grid=[-0.2, -1.0]))
        text = res.table_csv()
        assert pem.format_path_table(pem.parse_path_table(text)) == text


class TestCandidates:
    def test_reduction_to_minimal_pattern(self):
        Q = np.array([[1, 0, 0], [1, 1, 0], [1, 0, 1]], dtype=np.uint8)
        out = reduce_candidates(Q, [[0, 1, 1], [1, 1, 1], [1, 1, 0]])
        assert out.as_strings() == ["000", "110", "111"]

    def test_identity_q_keeps_all(self):
        assert len(reduce_candidates(np.eye(3, dtype=np.uint8), all_binary_vectors(3))) == 8


class TestEnforceIdentity:
    def test_closest_rows(self):
        Q = np.array([[1, 1, 0], [1, 0, 0], [0, 1, 1], [1, 1, 1]], dtype=np.uint8)
        out, rows = enforce_identity(Q)
        assert rows == [1, 0, 2]
        np.testing.assert_array_equal(out[[1, 0, 2]], np.eye(3, dtype=np.uint8))
        np.testing.assert_array_equal(out[3], Q[3])


class TestFinalize:
    def test_full_cube(self):
        assert pem.finalize(all_binary_vectors(3)).closure == frozenset()

    def test_fork(self):
        assert pem.finalize(FORK_PATTERNS).closure == Hierarchy(3, frozenset(FORK_EDGES)).closure
