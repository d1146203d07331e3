import math

import numpy as np
from django.test import SimpleTestCase

from experiments.config import FULL, TREE, ExperimentConfig
from experiments.experiment import (MethodOutcome, RunRecord, method_table, pairwise_comparisons, run_experiment,
                                    run_replication, summarize)
from forests.exceptions import ForestPruneError
from pruning.methods import prune_lasso

SMALL = {
    'scenario': {'n': 150, 'relevant_vars': 2, 'noise_variance': 0.04},
    'B': 4,
    'methods': ['sfs', 'sbs_prime', 'bsf', 'lasso', 'lasso2'],
    'K': 2,
    'reps': 2,
    'master_seed': 7,
    'cv_folds': 3,
    'cart': {'min_split': 10, 'min_bucket': 4},
    'baselines': [FULL, TREE],
}
METHODS = ['SFS', "SBS'", 'BSF', 'LASSO', 'LASSO2']


def mspes_by_label(record: RunRecord) -> dict:
    return {label: outcome.test_mspe for label, outcome in record.outcomes.items()}


def fake_record(rep: int, values: dict, trees: dict) -> RunRecord:
    outcomes = {label: MethodOutcome(test_mspe=value, n_trees=trees[label], wall_time=0.0)
                for label, value in values.items()}
    return RunRecord(rep=rep, outcomes=outcomes, full_forest_test_mspe=values[FULL], B=trees[FULL])


class ExperimentRunTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = ExperimentConfig.from_dict(SMALL)
        cls.records = run_experiment(cls.config)

    def test_every_replication_reports_every_label(self):
        self.assertEqual([record.rep for record in self.records], [0, 1])
        for record in self.records:
            self.assertEqual(list(record.outcomes), [FULL] + METHODS + [TREE])
            self.assertEqual(record.outcomes[FULL].n_trees, 4)
            self.assertEqual(record.outcomes[TREE].n_trees, 1)
            self.assertFalse(any(outcome.failed for outcome in record.outcomes.values()))
            self.assertEqual(record.full_forest_test_mspe, record.value(FULL))

    def test_pruned_forests_are_subsets(self):
        for record in self.records:
            for label in METHODS:
                outcome = record.outcomes[label]
                self.assertGreaterEqual(outcome.n_trees, 1)
                self.assertLessEqual(outcome.n_trees, 4)
                self.assertTrue(set(outcome.selected) <= set(range(4)))
                self.assertTrue(math.isfinite(outcome.test_mspe))
            self.assertLessEqual(record.outcomes['BSF'].n_trees, 2)
            self.assertLessEqual(record.outcomes['LASSO2'].n_trees, 2)

    def test_same_seed_same_numbers(self):
        again = run_experiment(self.config)
        self.assertEqual([mspes_by_label(record) for record in again],
                         [mspes_by_label(record) for record in self.records])
        self.assertEqual([record.seeds for record in again], [record.seeds for record in self.records])

    def test_replication_does_not_depend_on_the_others(self):
        single = run_replication(self.config, 1)
        self.assertEqual(mspes_by_label(single), mspes_by_label(self.records[1]))

    def test_different_master_seed_changes_the_data(self):
        other = run_replication(self.config.with_seed(8), 0)
        self.assertNotEqual(other.seeds, self.records[0].seeds)

    def test_distributed_run_matches_local(self):
        distributed = run_experiment(self.config, distributed=True)
        self.assertEqual([mspes_by_label(record) for record in distributed],
                         [mspes_by_label(record) for record in self.records])

    def test_record_round_trip(self):
        record = self.records[0]
        restored = RunRecord.from_dict(record.to_dict())
        self.assertEqual(mspes_by_label(restored), mspes_by_label(record))
        self.assertEqual(restored.outcomes['SFS'].selected, record.outcomes['SFS'].selected)

    def test_summary_tables(self):
        reports = summarize(self.records, self.config.baselines, self.config.method_labels)
        self.assertEqual(len(reports), len(METHODS) * 2)
        full = [report for report in reports if report.method_b == FULL]
        self.assertTrue(all(report.alpha == 0.05 / len(METHODS) for report in full))
        self.assertTrue(all(report.n_pairs == 2 for report in reports))
        tree = [report for report in reports if report.method_b == TREE]
        self.assertTrue(all(report.alpha is None and report.significant is None for report in tree))

        pairs = pairwise_comparisons(self.records, self.config.method_labels)
        self.assertEqual(len(pairs), 10)
        self.assertEqual((pairs[0].method_a, pairs[0].method_b), ('SFS', "SBS'"))

        table = method_table(self.records)
        self.assertEqual(list(table.columns), ['method', 'avg_mspe', 'avg_trees', 'avg_time', 'failures'])
        self.assertEqual(table['method'].tolist(), [FULL] + METHODS + [TREE])
        self.assertEqual(table['failures'].sum(), 0)


class ComparisonTests(SimpleTestCase):
    def setUp(self):
        trees = {FULL: 10, 'SFS': 3}
        self.records = [
            fake_record(0, {FULL: 1.0, 'SFS': 0.5}, trees),
            fake_record(1, {FULL: 2.0, 'SFS': 1.5}, trees),
            fake_record(2, {FULL: 1.0, 'SFS': 1.5}, trees),
        ]

    def test_relative_differences(self):
        (report,) = summarize(self.records)
        self.assertEqual(report.method_a, 'SFS')
        self.assertAlmostEqual(report.mspe_delta_pct, 100 * (3.5 / 3 - 4 / 3) / (4 / 3))
        self.assertAlmostEqual(report.freq_delta_leq_0, 2 / 3)
        self.assertAlmostEqual(report.trees_delta_pct, -70.0)
        self.assertEqual(report.alpha, 0.05)
        self.assertFalse(report.significant)

    def test_failed_pairs_are_skipped(self):
        failed = MethodOutcome(test_mspe=math.nan, n_trees=0, wall_time=0.0, flags=('failed',), failed=True)
        self.records[2].outcomes['SFS'] = failed
        (report,) = summarize(self.records)
        self.assertEqual(report.n_pairs, 2)
        self.assertEqual(report.freq_delta_leq_0, 1.0)
        self.assertEqual(method_table(self.records).set_index('method').loc['SFS', 'failures'], 1)

    def test_empty_records(self):
        with self.assertRaises(ForestPruneError):
            summarize([])


class SingleTreeForestTests(SimpleTestCase):
    def test_every_method_keeps_the_only_tree(self):
        config = ExperimentConfig.from_dict({**SMALL, 'B': 1, 'reps': 1, 'baselines': [FULL]})
        (record,) = run_experiment(config)
        for label in METHODS:
            outcome = record.outcomes[label]
            self.assertEqual(outcome.test_mspe, record.value(FULL), label)
            self.assertEqual(outcome.selected, (0,))
            self.assertIn('forced', outcome.flags)


def mean_mspe(records, label: str) -> float:
    return float(np.mean([record.value(label) for record in records]))


class DirectionTests(SimpleTestCase):
    """Уменьшенные версии сценарных прогонов: проверяется только направление эффекта."""

    def test_low_noise_large_sample(self):
        config = ExperimentConfig.from_dict({
            'scenario': {'n': 3000, 'relevant_vars': 2, 'noise_variance': 0.04},
            'B': 10, 'methods': ['lasso', 'sfs', 'bsf'], 'K': 2, 'reps': 2, 'master_seed': 123,
        })
        records = run_experiment(config)
        full = mean_mspe(records, FULL)
        self.assertLess(mean_mspe(records, 'LASSO'), full)
        self.assertLess(mean_mspe(records, 'SFS'), 1.1 * full)
        self.assertLess(mean_mspe(records, 'BSF'), 1.1 * full)

    def test_low_noise_small_sample(self):
        config = ExperimentConfig.from_dict({
            'scenario': {'n': 600, 'relevant_vars': 2, 'noise_variance': 0.04},
            'B': 10, 'methods': ['lasso'], 'reps': 3, 'master_seed': 123,
        })
        records = run_experiment(config)
        self.assertLess(mean_mspe(records, 'LASSO'), mean_mspe(records, FULL))

    def test_lasso_advantage_grows_with_validation_size(self):
        # деревья независимы и имеют единичную дисперсию, поэтому MSPE весов w равна |w − β|² + σ²
        beta = np.zeros(10)
        beta[:2] = 0.5
        full = float(np.sum(np.square(np.full(10, 0.1) - beta)))
        gaps = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            trees = rng.standard_normal((10000, 10))
            y = trees @ beta + 0.5 * rng.standard_normal(10000)
            row = []
            for n in (100, 1000, 10000):
                result = prune_lasso(trees[:n], y[:n], seed=seed)
                row.append(float(np.sum(np.square(result.full_weights(10) - beta))) - full)
            gaps.append(row)
        gaps = np.array(gaps)
        self.assertTrue(np.all(gaps < 0), gaps)
        mean_gap = np.abs(gaps.mean(axis=0))
        self.assertLessEqual(mean_gap[0], mean_gap[1])
        self.assertLessEqual(mean_gap[1], mean_gap[2])
