import itertools
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from forests.exceptions import ConfigurationError
from pruning.methods import (PruneMethod, PruneResult, ghost_equivalence_check, prune, prune_bsf, prune_lasso,
                             prune_sbs_prime, prune_sfs)
from pruning.nnlasso import kkt_violations


def validation_matrix(n=40, B=8, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(n)
    bias = rng.normal(0, 0.5, B)
    noise = rng.uniform(0.2, 1.5, B)
    P = y[:, np.newaxis] + bias + noise * rng.standard_normal((n, B))
    return P, y


def mspe_of(P, y, subset):
    return float(np.mean(np.square(P[:, list(subset)].mean(axis=1) - y)))


def greedy_forward(P, y):
    chosen, trace = [], []
    for _ in range(P.shape[1]):
        remaining = [i for i in range(P.shape[1]) if i not in chosen]
        pick = min(remaining, key=lambda i: (mspe_of(P, y, chosen + [i]), i))
        chosen.append(pick)
        trace.append(mspe_of(P, y, chosen))
    best = int(np.argmin(trace))
    return sorted(chosen[:best + 1]), trace


def greedy_backward(P, y):
    current = list(range(P.shape[1]))
    trace, sets = [mspe_of(P, y, current)], [list(current)]
    while len(current) > 1:
        error = mspe_of(P, y, current)
        drop = min(current, key=lambda i: (abs(error - mspe_of(P, y, [j for j in current if j != i])), i))
        current.remove(drop)
        trace.append(mspe_of(P, y, current))
        sets.append(list(current))
    best = int(np.argmin(trace))
    return sorted(sets[best]), trace


def exhaustive(P, y, K):
    candidates = [(mspe_of(P, y, subset), subset) for k in range(1, K + 1)
                  for subset in itertools.combinations(range(P.shape[1]), k)]
    return min(candidates)


class SequentialSelectionTests(SimpleTestCase):
    def test_forward_selection_matches_naive_greedy(self):
        for seed in range(3):
            P, y = validation_matrix(seed=seed)
            expected, trace = greedy_forward(P, y)
            result = prune_sfs(P, y)
            self.assertEqual(list(result.selected), expected)
            np.testing.assert_allclose(result.trace, trace, rtol=1e-12)
            self.assertEqual(result.validation_mspe, min(result.trace))

    def test_forward_trace_ends_with_full_forest(self):
        P, y = validation_matrix(seed=4)
        result = prune_sfs(P, y)
        self.assertEqual(len(result.trace), 8)
        self.assertAlmostEqual(result.trace[-1], mspe_of(P, y, range(8)), places=12)
        self.assertLessEqual(result.validation_mspe, mspe_of(P, y, range(8)))

    def test_backward_selection_matches_naive_greedy(self):
        for seed in range(3):
            P, y = validation_matrix(seed=seed + 10)
            expected, trace = greedy_backward(P, y)
            result = prune_sbs_prime(P, y)
            self.assertEqual(list(result.selected), expected)
            np.testing.assert_allclose(result.trace, trace, rtol=1e-12)

    def test_uniform_weights(self):
        P, y = validation_matrix(seed=5)
        result = prune_sbs_prime(P, y)
        np.testing.assert_allclose(result.weights, 1.0 / result.n_trees)
        self.assertLessEqual(result.validation_mspe, result.trace[0])


class ExhaustiveSearchTests(SimpleTestCase):
    def test_matches_brute_force(self):
        for seed in range(3):
            P, y = validation_matrix(B=8, seed=seed + 20)
            expected_mspe, expected = exhaustive(P, y, 3)
            result = prune_bsf(P, y, K=3)
            self.assertEqual(result.selected, expected)
            self.assertAlmostEqual(result.validation_mspe, expected_mspe, places=12)

    def test_duplicate_trees_resolve_to_smallest_indices(self):
        P, y = validation_matrix(B=3, seed=30)
        P = np.column_stack([P[:, 0], P[:, 0], P[:, 0], P[:, 0]])
        result = prune_bsf(P, y, K=2)
        self.assertEqual(result.selected, (0,))

    def test_parallel_chunks_give_the_same_answer(self):
        P, y = validation_matrix(B=10, seed=31)
        self.assertEqual(prune_bsf(P, y, K=3).selected, prune_bsf(P, y, K=3, n_jobs=2).selected)

    def test_k_above_half_is_rejected(self):
        P, y = validation_matrix(B=4)
        with self.assertRaises(ConfigurationError):
            prune_bsf(P, y, K=3)

    def test_dispatcher_clamps_k(self):
        P, y = validation_matrix(B=4)
        with self.assertLogs('pruning.methods', level='WARNING'):
            result = prune(PruneMethod.BSF, P, y, K=4)
        self.assertLessEqual(result.n_trees, 2)


class LassoTests(SimpleTestCase):
    def test_weights_are_non_negative_and_capped(self):
        P, y = validation_matrix(n=80, B=10, seed=40)
        result = prune_lasso(P, y, max_trees=2, seed=1, folds=5)
        self.assertLessEqual(result.n_trees, 2)
        self.assertTrue(np.all(result.weights >= 0))
        self.assertIs(result.method, PruneMethod.LASSO_K)
        self.assertEqual(result.label, 'LASSO2')

    def test_uncapped_lasso(self):
        P, y = validation_matrix(n=80, B=10, seed=41)
        result = prune_lasso(P, y, seed=1, folds=5)
        self.assertIs(result.method, PruneMethod.LASSO)
        np.testing.assert_allclose(result.predict(P), P[:, list(result.selected)] @ result.weights)

    def test_all_zero_solution_falls_back_to_best_tree(self):
        rng = np.random.default_rng(42)
        P = 1.0 + np.abs(rng.standard_normal((30, 5)))
        y = -np.ones(30)
        result = prune_lasso(P, y, seed=1, folds=3)
        self.assertTrue(result.fallback)
        self.assertIn('fallback', result.flags)
        self.assertEqual(result.n_trees, 1)
        best = int(np.argmin(np.mean(np.square(P - y[:, np.newaxis]), axis=0)))
        self.assertEqual(result.selected, (best,))

    def test_same_seed_same_result(self):
        P, y = validation_matrix(n=60, B=6, seed=43)
        first = prune(PruneMethod.LASSO, P, y, seed=9, folds=4)
        second = prune(PruneMethod.LASSO, P, y, seed=9, folds=4, n_jobs=2)
        self.assertEqual(first.selected, second.selected)
        np.testing.assert_array_equal(first.weights, second.weights)


class DispatcherTests(SimpleTestCase):
    def test_single_tree_forest_is_forced(self):
        P, y = validation_matrix(B=1)
        for method in PruneMethod:
            result = prune(method, P, y)
            self.assertEqual(result.selected, (0,))
            np.testing.assert_array_equal(result.weights, [1.0])
            self.assertIn('forced', result.flags)

    def test_method_names(self):
        self.assertIs(PruneMethod.parse("sbs'"), PruneMethod.SBS_PRIME)
        self.assertIs(PruneMethod.parse('SFS'), PruneMethod.SFS)
        self.assertIs(PruneMethod.parse('lasso4'), PruneMethod.LASSO_K)
        self.assertEqual(PruneMethod.SBS_PRIME.label(), "SBS'")
        self.assertEqual(PruneMethod.LASSO_K.label(4), 'LASSO4')

    def test_unknown_method_lists_valid_ones(self):
        with self.assertRaises(ConfigurationError) as context:
            PruneMethod.parse('random')
        self.assertIn('bsf', str(context.exception))

    def test_mismatched_responses(self):
        P, y = validation_matrix()
        with self.assertRaises(ConfigurationError):
            prune(PruneMethod.SFS, P, y[:-1])


class PruneResultTests(SimpleTestCase):
    def test_json_round_trip(self):
        P, y = validation_matrix(seed=50)
        result = prune_bsf(P, y, K=2)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'result.json'
            result.to_json(path)
            restored = PruneResult.from_json(path)
        self.assertEqual(restored.selected, result.selected)
        self.assertEqual(restored.validation_mspe, result.validation_mspe)
        np.testing.assert_array_equal(restored.full_weights(8), result.full_weights(8))

    def test_duplicate_indices_are_rejected(self):
        with self.assertRaises(ConfigurationError):
            PruneResult(method=PruneMethod.SFS, selected=(1, 1), weights=[0.5, 0.5], validation_mspe=0.0)


class GhostTreeTests(SimpleTestCase):
    def test_replacing_a_tree_by_the_mean_of_the_others(self):
        P, y = validation_matrix(seed=60)
        with_ghost, without = ghost_equivalence_check(P, y, 3)
        self.assertAlmostEqual(with_ghost, without, places=12)


class RandomInstanceTests(SimpleTestCase):
    def test_methods_match_independent_replays(self):
        for seed in range(200):
            B = 2 + seed % 7
            P, y = validation_matrix(n=30, B=B, seed=1000 + seed)
            with self.subTest(seed=seed, B=B):
                self.assertEqual(list(prune_sfs(P, y).selected), greedy_forward(P, y)[0])
                self.assertEqual(list(prune_sbs_prime(P, y).selected), greedy_backward(P, y)[0])
                expected_mspe, expected = exhaustive(P, y, B // 2)
                result = prune_bsf(P, y, K=B // 2)
                self.assertEqual(result.selected, expected)
                self.assertAlmostEqual(result.validation_mspe, expected_mspe, places=12)


class MethodExamplesTests(SimpleTestCase):
    def test_backward_selection_keeps_both_identical_trees(self):
        P, y = validation_matrix(B=1, seed=70)
        P = np.column_stack([P[:, 0], P[:, 0]])
        result = prune_sbs_prime(P, y)
        self.assertEqual(result.trace[0], result.trace[1])
        self.assertEqual(result.selected, (0, 1))

    def test_forward_selection_takes_the_perfect_tree(self):
        rng = np.random.default_rng(71)
        y = rng.standard_normal(50)
        result = prune_sfs(np.column_stack([y, rng.standard_normal(50)]), y)
        self.assertEqual(result.trace[0], 0.0)
        self.assertEqual(result.selected, (0,))
        self.assertEqual(result.validation_mspe, 0.0)

    def test_exhaustive_search_error_does_not_grow_with_k(self):
        P, y = validation_matrix(B=8, seed=72)
        errors = [prune_bsf(P, y, K=K).validation_mspe for K in range(1, 5)]
        for smaller, larger in zip(errors, errors[1:]):
            self.assertLessEqual(larger, smaller + 1e-12)

    def test_exhaustive_search_finds_exact_pair(self):
        P, _ = validation_matrix(n=30, B=8, seed=73)
        y = (P[:, 2] + P[:, 5]) / 2
        result = prune_bsf(P, y, K=2)
        self.assertEqual(result.selected, (2, 5))
        self.assertEqual(result.validation_mspe, 0.0)

    def test_single_tree_k_is_best_individual_tree(self):
        P, y = validation_matrix(B=8, seed=74)
        best = int(np.argmin(np.mean(np.square(P - y[:, np.newaxis]), axis=0)))
        self.assertEqual(prune_bsf(P, y, K=1).selected, (best,))


class LassoExamplesTests(SimpleTestCase):
    def test_scaled_column_is_recovered(self):
        rng = np.random.default_rng(80)
        P = rng.standard_normal((80, 6))
        y = 3 * P[:, 4]
        result = prune_lasso(P, y, seed=1, folds=5, min_ratio=1e-4)
        self.assertIn(4, result.selected)
        self.assertLess(result.validation_mspe, 1e-6 * float(np.var(y)))

    def test_cap_equal_to_forest_size_changes_nothing(self):
        P, y = validation_matrix(n=60, B=6, seed=81)
        plain = prune_lasso(P, y, seed=2, folds=4)
        capped = prune_lasso(P, y, max_trees=6, seed=2, folds=4)
        self.assertNotIn('restricted_refit', capped.flags)
        self.assertEqual(capped.selected, plain.selected)
        np.testing.assert_array_equal(capped.weights, plain.weights)
        self.assertEqual(capped.lambda_, plain.lambda_)

    def test_restricted_refit_is_optimal_on_kept_trees(self):
        rng = np.random.default_rng(82)
        P = rng.standard_normal((100, 8))
        y = P[:, :4].sum(axis=1)
        result = prune_lasso(P, y, max_trees=2, seed=3, folds=5)
        self.assertIn('restricted_refit', result.flags)
        self.assertNotIn('objective_increased', result.flags)
        self.assertLessEqual(result.n_trees, 2)
        violations = kkt_violations(P, y, result.full_weights(8), result.lambda_, active=list(result.selected))
        self.assertEqual(violations.tolist(), [])


class GhostTreeExamplesTests(SimpleTestCase):
    def test_two_trees(self):
        P, y = validation_matrix(B=2, seed=90)
        with_ghost, without = ghost_equivalence_check(P, y, 0)
        other = float(np.mean(np.square(P[:, 1] - y)))
        self.assertAlmostEqual(with_ghost, other, places=12)
        self.assertAlmostEqual(without, other, places=12)

    def test_identical_trees(self):
        P, y = validation_matrix(B=1, seed=91)
        P = np.repeat(P, 5, axis=1)
        full = float(np.mean(np.square(P.mean(axis=1) - y)))
        for j in range(5):
            with_ghost, without = ghost_equivalence_check(P, y, j)
            self.assertAlmostEqual(with_ghost, full, places=12)
            self.assertAlmostEqual(without, full, places=12)
