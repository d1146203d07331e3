from django.conf import settings

from forests.cart import CartParams
from forests.forest import fit_forest, save_forest
from forests.management.base import ForestPruneCommand, add_dataset_arguments, load_dataset_option, parse_rows


class Command(ForestPruneCommand):
    help = 'Обучает лес на CSV или синтетическом сценарии и сохраняет его в JSON.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        add_dataset_arguments(parser)
        defaults = settings.FORESTPRUNE_DEFAULTS
        parser.add_argument('--trees', type=int, default=25, help='Число деревьев B')
        parser.add_argument('--subspace-rate', type=float, default=defaults['subspace_rate'],
                            help='Вероятность включения признака в подпространство дерева')
        parser.add_argument('--min-split', type=int, default=defaults['min_split'],
                            help='Минимальное число строк в узле для попытки разбиения')
        parser.add_argument('--min-bucket', type=int, default=defaults['min_bucket'],
                            help='Минимальное число строк в каждом потомке')
        parser.add_argument('--cp', type=float, default=defaults['cp'],
                            help='Минимальный прирост разбиения как доля SSE корня')
        parser.add_argument('--max-depth', type=int, default=defaults['max_depth'],
                            help='Наибольшая глубина дерева')
        parser.add_argument('--name', default='forest.json', help='Имя файла леса в каталоге результатов')

    def run(self, **options):
        seed = options['seed'] if options['seed'] is not None else 123
        dataset = load_dataset_option(options, seed)
        rows = parse_rows(options['rows'], dataset.n_rows)
        params = CartParams(min_split=options['min_split'], min_bucket=options['min_bucket'], cp=options['cp'],
                            max_depth=options['max_depth'])
        forest = fit_forest(dataset, rows, options['trees'], params, options['subspace_rate'], seed=seed,
                            n_jobs=self.threads(options))
        path = self.output_dir(options) / options['name']
        save_forest(forest, path)
        self.stdout.write(f'Лес из {forest.size} деревьев сохранён: {path}')
