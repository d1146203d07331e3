import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from forests.data import (SCENARIOS, Dataset, ScenarioConfig, generate_scenario, load_csv, replication_seeds,
                          scenario_config, split, split_sizes, validate_ratios)
from forests.exceptions import ConfigurationError, IngestionError


class ScenarioTests(SimpleTestCase):
    def test_catalog_has_sixteen_scenarios(self):
        self.assertEqual(sorted(SCENARIOS), list(range(1, 17)))
        self.assertEqual(SCENARIOS[1], {'n': 600, 'relevant_vars': 2, 'forest_size': 25, 'noise_variance': 0.04})
        self.assertEqual(SCENARIOS[6], {'n': 20000, 'relevant_vars': 2, 'forest_size': 100, 'noise_variance': 0.04})
        self.assertEqual(SCENARIOS[16]['noise_variance'], 2.0)

    def test_unknown_scenario(self):
        with self.assertRaises(ConfigurationError):
            scenario_config(17)

    def test_generation_is_reproducible(self):
        config = ScenarioConfig(n=50, relevant_vars=2, noise_variance=0.04, seed=7)
        first, second = generate_scenario(config), generate_scenario(config)
        np.testing.assert_array_equal(first.features, second.features)
        np.testing.assert_array_equal(first.response, second.response)
        self.assertEqual(first.column_names, tuple(f'x{j}' for j in range(1, 11)))

    def test_noiseless_response_is_sum_of_relevant_columns(self):
        dataset = generate_scenario(ScenarioConfig(n=40, relevant_vars=3, noise_variance=0.0, seed=1))
        np.testing.assert_allclose(dataset.response, dataset.features[:, :3].sum(axis=1))

    def test_relevant_vars_cannot_exceed_total(self):
        with self.assertRaises(ConfigurationError):
            ScenarioConfig(n=10, relevant_vars=11, noise_variance=1.0)

    def test_from_dict_rejects_unknown_fields(self):
        with self.assertRaises(ConfigurationError):
            ScenarioConfig.from_dict({'n': 10, 'relevant_vars': 2, 'noise_variance': 1.0, 'colour': 'red'})


class SplitTests(SimpleTestCase):
    def test_sizes_follow_floor_and_remainder_order(self):
        self.assertEqual(split_sizes(10, (0.6, 0.2, 0.2)), (6, 2, 2))
        self.assertEqual(split_sizes(7, (0.6, 0.2, 0.2)), (5, 1, 1))
        self.assertEqual(split_sizes(1000, (0.3, 0.35, 0.35)), (300, 350, 350))

    def test_parts_are_disjoint_and_cover_all_rows(self):
        parts = split(101, seed=5)
        joined = np.concatenate([parts.train, parts.validation, parts.test])
        np.testing.assert_array_equal(np.sort(joined), np.arange(101))
        self.assertEqual(parts.sizes(), split_sizes(101, (0.6, 0.2, 0.2)))

    def test_same_seed_same_split(self):
        first, second = split(60, seed=9), split(60, seed=9)
        np.testing.assert_array_equal(first.validation, second.validation)
        self.assertFalse(np.array_equal(first.train, split(60, seed=10).train))

    def test_train_validation_is_sorted_union(self):
        parts = split(30, seed=2)
        union = parts.train_validation()
        self.assertEqual(len(union), 24)
        self.assertTrue(np.all(np.diff(union) > 0))

    def test_invalid_ratios(self):
        for ratios in [(0.5, 0.5), (0.6, 0.3, 0.2), (0.0, 0.5, 0.5)]:
            with self.assertRaises(ConfigurationError):
                validate_ratios(ratios)


class ReplicationSeedTests(SimpleTestCase):
    def test_seeds_depend_only_on_master_and_rep(self):
        self.assertEqual(replication_seeds(123, 4), replication_seeds(123, 4))
        self.assertNotEqual(replication_seeds(123, 4), replication_seeds(123, 5))
        self.assertNotEqual(replication_seeds(123, 0), replication_seeds(124, 0))


class CsvTests(SimpleTestCase):
    def write(self, text: str) -> Path:
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        path = Path(directory.name) / 'data.csv'
        path.write_text(text, encoding='utf-8')
        return path

    def test_categorical_columns_are_one_hot_in_lexicographic_order(self):
        path = self.write('a,colour,y\n1.5,red,1\n2.5,blue,2\n3.5,red,3\n')
        dataset = load_csv(path, 'y')
        self.assertEqual(dataset.column_names, ('a', 'colour=blue', 'colour=red'))
        np.testing.assert_array_equal(dataset.features[:, 1], [0, 1, 0])
        np.testing.assert_array_equal(dataset.response, [1, 2, 3])

    def test_ordinal_levels_keep_declared_order(self):
        path = self.write('size,y\nsmall,1\nlarge,2\nmedium,3\n')
        dataset = load_csv(path, 'y', {'size': ['small', 'medium', 'large']})
        np.testing.assert_array_equal(dataset.features[:, 0], [0, 2, 1])

    def test_missing_cell_reports_row_and_column(self):
        path = self.write('a,b,y\n1,2,3\n4,,6\n')
        with self.assertRaises(IngestionError) as context:
            load_csv(path, 'y')
        self.assertEqual(context.exception.row, 1)
        self.assertEqual(context.exception.column, 'b')

    def test_missing_response_column(self):
        path = self.write('a,b\n1,2\n')
        with self.assertRaises(IngestionError):
            load_csv(path, 'y')

    def test_non_numeric_response(self):
        path = self.write('a,y\n1,2\n3,oops\n')
        with self.assertRaises(IngestionError) as context:
            load_csv(path, 'y')
        self.assertEqual(context.exception.row, 1)

    def test_missing_file(self):
        with self.assertRaises(IngestionError):
            load_csv('/nonexistent/data.csv', 'y')

    def test_dataset_rejects_non_finite_features(self):
        with self.assertRaises(IngestionError):
            Dataset(features=[[1.0], [np.nan]], response=[1.0, 2.0], column_names=('a',))


class ScenarioMomentsTests(SimpleTestCase):
    def test_response_variance(self):
        dataset = generate_scenario(ScenarioConfig(n=20000, relevant_vars=2, noise_variance=0.04, seed=7))
        self.assertAlmostEqual(float(np.var(dataset.response)), 2.04, delta=0.1)

    def test_noise_overpowers_signal_half_the_time(self):
        dataset = generate_scenario(ScenarioConfig(n=20000, relevant_vars=2, noise_variance=2.0, seed=7))
        signal = dataset.features[:, :2].sum(axis=1)
        noise = dataset.response - signal
        self.assertAlmostEqual(float(np.mean(np.abs(signal) <= np.abs(noise))), 0.5, delta=0.02)

    def test_irrelevant_columns_are_uncorrelated_with_response(self):
        dataset = generate_scenario(ScenarioConfig(n=20000, relevant_vars=2, noise_variance=0.04, seed=7))
        for j in range(2, dataset.width):
            r = np.corrcoef(dataset.features[:, j], dataset.response)[0, 1]
            self.assertLess(abs(r), 0.05, dataset.column_names[j])
