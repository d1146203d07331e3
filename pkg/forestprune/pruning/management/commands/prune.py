from django.conf import settings

from forests.forest import load_forest, prediction_matrix
from forests.management.base import ForestPruneCommand, add_dataset_arguments, load_dataset_option, parse_rows
from pruning.methods import PruneMethod, prune


class Command(ForestPruneCommand):
    help = 'Прореживает сохранённый лес на валидационных строках и пишет результат в JSON.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        add_dataset_arguments(parser)
        defaults = settings.FORESTPRUNE_DEFAULTS
        parser.add_argument('--forest', required=True, help='JSON леса (результат команды fit)')
        parser.add_argument('--method', required=True,
                            help="Метод: sfs, sbs_prime (sbs'), bsf, lasso или lassoN с порогом N деревьев")
        parser.add_argument('--K', type=int, default=defaults['bsf_k'], help='Наибольший размер подлеса для BSF')
        parser.add_argument('--max-trees', type=int, default=None,
                            help='Порог числа деревьев для lasso_k (по умолчанию из lassoN или 4)')
        parser.add_argument('--folds', type=int, default=defaults['cv_folds'], help='Число блоков кросс-валидации')
        parser.add_argument('--rule', choices=('min', '1se'), default='min', help='Правило выбора λ')
        parser.add_argument('--save-matrix', action='store_true', help='Сохранить матрицу предсказаний в CSV')
        parser.add_argument('--name', default='prune_result.json', help='Имя файла результата')

    def run(self, **options):
        method = PruneMethod.parse(options['method'])
        suffix = options['method'].strip().lower()[5:]
        max_trees = options['max_trees'] or (int(suffix) if method is PruneMethod.LASSO_K and suffix.isdigit()
                                             else settings.FORESTPRUNE_DEFAULTS['max_trees'])
        seed = options['seed'] if options['seed'] is not None else 123
        forest = load_forest(options['forest'])
        dataset = load_dataset_option(options, seed)
        forest.check_schema(dataset)
        rows = parse_rows(options['rows'], dataset.n_rows)
        threads = self.threads(options)

        matrix = prediction_matrix(forest, dataset, rows, n_jobs=threads)
        result = prune(method, matrix, dataset.response[matrix.row_indices], K=options['K'], max_trees=max_trees,
                       seed=seed, n_jobs=threads, folds=options['folds'], rule=options['rule'])
        output_dir = self.output_dir(options)
        result.to_json(output_dir / options['name'])
        if options['save_matrix']:
            matrix.to_csv(output_dir / 'predictions.csv')
        self.stdout.write(f'{result.label}: деревья {list(result.selected)}, '
                          f'MSPE на валидации {result.validation_mspe:.6g}')
