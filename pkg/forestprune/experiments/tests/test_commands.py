import json
import tempfile
from io import StringIO
from pathlib import Path

import pandas as pd
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase

from pruning.bounds import BoundInputs, bsf_bound, finite_class_bound, lasso_generalization_bound, sfs_bound

SMALL_EXPERIMENT = {
    'scenario': {'n': 150, 'relevant_vars': 2, 'noise_variance': 0.04},
    'B': 4,
    'methods': ['sfs', 'bsf', 'lasso'],
    'K': 2,
    'reps': 3,
    'master_seed': 3,
    'cv_folds': 3,
    'cart': {'min_split': 10, 'min_bucket': 4},
    'baselines': ['FULL', 'TREE'],
}


def table_values(output: str) -> dict[str, float]:
    rows = [line.split() for line in output.strip().splitlines()[1:]]
    return {name: float(value) for name, value in rows}


class BoundsCommandTests(SimpleTestCase):
    def test_printed_bounds(self):
        out = StringIO()
        call_command('bounds', '--n', '12250', '--B', '100', '--K', '4', '--delta', '0.05', '--cardinality', '50',
                     stdout=out)
        values = table_values(out.getvalue())
        inputs = BoundInputs(n=12250, B=100, K=4, delta=0.05)
        self.assertEqual(list(values), ['LASSO', 'BSF', 'SFS', 'FINITE'])
        self.assertAlmostEqual(values['LASSO'], lasso_generalization_bound(inputs), delta=1e-9)
        self.assertAlmostEqual(values['BSF'], bsf_bound(inputs), delta=1e-9)
        self.assertAlmostEqual(values['SFS'], sfs_bound(inputs), delta=1e-9)
        self.assertAlmostEqual(values['FINITE'], finite_class_bound(50, 12250, 0.05, 1.0), delta=1e-9)

    def test_invalid_delta(self):
        with self.assertRaises(CommandError) as context:
            call_command('bounds', '--delta', '1.5', stdout=StringIO())
        self.assertEqual(context.exception.returncode, 2)

    def test_simulation_from_config(self):
        with tempfile.TemporaryDirectory() as directory:
            config = Path(directory) / 'bounds.json'
            config.write_text(json.dumps({
                'scenario': {'n': 240, 'relevant_vars': 2, 'noise_variance': 0.04, 'forest_size': 6},
                'methods': ['bsf', 'sfs'], 'reps': 1, 'K': 2, 'cv_folds': 3,
                'cart': {'min_split': 10, 'min_bucket': 4},
            }), encoding='utf-8')
            call_command('bounds', '--simulate', str(config), '--output-dir', directory, '--threads', '1',
                         stdout=StringIO())
            summary = pd.read_csv(Path(directory) / 'bound_summary.csv')
        self.assertEqual(summary['method'].tolist(), ['BSF', 'SFS'])


class SimulateAndReportCommandTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.directory = tempfile.TemporaryDirectory()
        cls.root = Path(cls.directory.name)
        config = cls.root / 'experiment.json'
        config.write_text(json.dumps(SMALL_EXPERIMENT), encoding='utf-8')
        cls.output = StringIO()
        call_command('simulate', str(config), '--output-dir', str(cls.root / 'run'), '--threads', '1',
                     stdout=cls.output)

    @classmethod
    def tearDownClass(cls):
        cls.directory.cleanup()
        super().tearDownClass()

    def test_experiment_outputs(self):
        run = self.root / 'run'
        for name in ('records.csv', 'timings.csv', 'summary.csv', 'comparisons.csv', 'methods.csv', 'manifest.json'):
            self.assertTrue((run / name).is_file(), name)
        self.assertEqual(len(pd.read_csv(run / 'records.csv')), 3)
        self.assertEqual(len(pd.read_csv(run / 'summary.csv')), 6)
        self.assertEqual(len(pd.read_csv(run / 'comparisons.csv')), 3)
        self.assertIn('SFS против FULL', self.output.getvalue())

    def test_report_recomputes_the_summary(self):
        run = self.root / 'run'
        call_command('report', str(run / 'records.csv'), '--baseline', 'FULL', 'TREE',
                     '--output-dir', str(self.root / 'report'), stdout=StringIO())
        original = pd.read_csv(run / 'summary.csv')
        recomputed = pd.read_csv(self.root / 'report' / 'summary.csv')
        pd.testing.assert_frame_equal(recomputed, original)

    def test_thread_count_does_not_change_the_files(self):
        call_command('simulate', str(self.root / 'experiment.json'), '--output-dir', str(self.root / 'run4'),
                     '--threads', '4', stdout=StringIO())
        for name in ('records.csv', 'summary.csv', 'comparisons.csv'):
            self.assertEqual((self.root / 'run4' / name).read_bytes(), (self.root / 'run' / name).read_bytes(), name)

    def test_report_on_missing_records(self):
        with self.assertRaises(CommandError) as context:
            call_command('report', str(self.root / 'absent.csv'), '--output-dir', str(self.root / 'report'))
        self.assertEqual(context.exception.returncode, 1)

    def test_missing_config(self):
        with self.assertRaises(CommandError) as context:
            call_command('simulate', str(self.root / 'absent.json'), '--output-dir', str(self.root / 'run'))
        self.assertEqual(context.exception.returncode, 2)


class VizCommandTests(SimpleTestCase):
    def test_layout_marks_selected_trees(self):
        with tempfile.TemporaryDirectory() as directory:
            call_command('fit', '--scenario', '1', '--rows', '0:300', '--trees', '5', '--output-dir', directory,
                         '--threads', '1', stdout=StringIO())
            forest = str(Path(directory) / 'forest.json')
            call_command('prune', '--forest', forest, '--scenario', '1', '--rows', '300:420', '--method', 'bsf',
                         '--K', '2', '--output-dir', directory, stdout=StringIO())
            call_command('viz', '--forest', forest, '--scenario', '1', '--rows', '420:600',
                         '--result', str(Path(directory) / 'prune_result.json'), '--output-dir', directory,
                         stdout=StringIO())
            layout = pd.read_csv(Path(directory) / 'layout.csv')
            selected = json.loads((Path(directory) / 'prune_result.json').read_text(encoding='utf-8'))['selected']
        self.assertEqual(layout['tree_index'].tolist(), list(range(5)))
        self.assertEqual(sorted(layout.loc[layout['selected_flag'] == 1, 'tree_index']), sorted(selected))
        self.assertTrue((layout['individual_mspe'] > 0).all())
