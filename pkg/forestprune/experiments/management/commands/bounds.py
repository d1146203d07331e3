import pandas as pd

from experiments.config import load_bound_config
from experiments.experiment import run_bound_simulation
from forests.management.base import ForestPruneCommand
from pruning.bounds import BoundInputs, finite_class_bound, lasso_risk_bound, slack_for, write_bound_reports
from pruning.methods import PruneMethod


class Command(ForestPruneCommand):
    help = 'Печатает обобщающие оценки для заданных параметров или проверяет их на симуляции (--simulate).'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--n', type=int, default=1000, help='Размер валидационной выборки')
        parser.add_argument('--B', type=int, default=100, help='Размер леса')
        parser.add_argument('--K', type=int, default=4, help='Наибольший размер подлеса для BSF')
        parser.add_argument('--delta', type=float, default=0.05, help='Уровень доверия δ')
        parser.add_argument('--M', type=float, default=1.0, help='Граница |Y| и |предсказаний|')
        parser.add_argument('--r', type=float, default=1.0, help='Граница предсказаний деревьев для Lasso')
        parser.add_argument('--Lambda', type=float, default=1.0, help='Граница ℓ1-нормы весов Lasso')
        parser.add_argument('--tau', type=float, default=None, help='τ для оценки риска Lasso')
        parser.add_argument('--sigma', type=float, default=1.0, help='σ для оценки риска Lasso')
        parser.add_argument('--cardinality', type=int, default=None, help='Мощность конечного класса подлесов')
        parser.add_argument('--methods', nargs='+', default=['lasso', 'bsf', 'sfs'], help='Методы для таблицы')
        parser.add_argument('--simulate', metavar='CONFIG', help='JSON-конфигурация проверки оценок на симуляции')
        parser.add_argument('--distributed', action='store_true', help='Распределить повторы через Celery')

    def run(self, **options):
        if options['simulate']:
            self.simulate(options)
            return
        inputs = BoundInputs(n=options['n'], B=options['B'], delta=options['delta'], M=options['M'], r=options['r'],
                             Lambda=options['Lambda'], K=options['K'], tau=options['tau'] or 1.0,
                             sigma=options['sigma'])
        rows = []
        for value in options['methods']:
            method = PruneMethod.parse(value)
            rows.append({'bound': method.label(), 'slack': slack_for(method, inputs)})
        if options['cardinality'] is not None:
            rows.append({'bound': 'FINITE', 'slack': finite_class_bound(options['cardinality'], inputs.n,
                                                                         inputs.delta, inputs.M)})
        if options['tau'] is not None:
            rows.append({'bound': 'LASSO_RISK', 'slack': lasso_risk_bound(inputs.tau, inputs.M, inputs.sigma,
                                                                          inputs.B, inputs.n)})
        table = pd.DataFrame(rows)
        self.stdout.write(table.to_string(index=False, float_format=lambda value: f'{value:.10g}'))

    def simulate(self, options):
        config = load_bound_config(options['simulate'])
        if options['seed'] is not None:
            config = config.with_seed(options['seed'])
        reports = run_bound_simulation(config, n_jobs=self.threads(options), distributed=options['distributed'])
        _, summary_path = write_bound_reports(reports, self.output_dir(options))
        self.stdout.write(f'Проверка оценок: {len(reports)} отчётов, сводка {summary_path}')
