from experiments.config import load_experiment_config
from experiments.experiment import pairwise_comparisons, run_experiment, summarize
from experiments.reports import write_experiment_outputs
from forests.management.base import ForestPruneCommand


class Command(ForestPruneCommand):
    help = 'Запускает эксперимент по JSON-конфигурации: повторы, сводка сравнений и манифест.'

    def add_arguments(self, parser):
        parser.add_argument('config', help='JSON-конфигурация эксперимента')
        super().add_arguments(parser)
        parser.add_argument('--distributed', action='store_true',
                            help='Выполнять повторы задачами Celery в очереди experiment_tasks')

    def run(self, **options):
        config = load_experiment_config(options['config'])
        if options['seed'] is not None:
            config = config.with_seed(options['seed'])
        output_dir = self.output_dir(options)
        records = run_experiment(config, n_jobs=self.threads(options), distributed=options['distributed'])
        summary = summarize(records, config.baselines, config.method_labels)
        comparisons = pairwise_comparisons(records, config.method_labels)
        write_experiment_outputs(config, records, summary, comparisons, output_dir)
        for report in summary:
            self.stdout.write(f'{report.method_a} против {report.method_b}: ΔMSPE {report.mspe_delta_pct:+.2f}%, '
                              f'p={report.p_value:.4g}')
