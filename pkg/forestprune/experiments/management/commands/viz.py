import numpy as np

from experiments.analysis import classical_mds, correlation_distance
from forests.exceptions import SchemaMismatchError
from forests.forest import load_forest, prediction_matrix
from forests.management.base import ForestPruneCommand, add_dataset_arguments, load_dataset_option, parse_rows
from pruning.methods import PruneResult


class Command(ForestPruneCommand):
    help = 'Строит двумерную карту деревьев леса по корреляции их предсказаний и пишет её в CSV.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        add_dataset_arguments(parser)
        parser.add_argument('--forest', required=True, help='JSON леса')
        parser.add_argument('--result', help='JSON результата прореживания для отметки выбранных деревьев')
        parser.add_argument('--name', default='layout.csv', help='Имя файла карты')

    def run(self, **options):
        seed = options['seed'] if options['seed'] is not None else 123
        forest = load_forest(options['forest'])
        dataset = load_dataset_option(options, seed)
        rows = parse_rows(options['rows'], dataset.n_rows)
        matrix = prediction_matrix(forest, dataset, rows, n_jobs=self.threads(options))

        selected = None
        if options['result']:
            selected = PruneResult.from_json(options['result']).selected
            if max(selected) >= forest.size:
                raise SchemaMismatchError(f"Результат ссылается на дерево {max(selected)}, "
                                          f"а в лесу {forest.size} деревьев")
        truth = dataset.response[matrix.row_indices]
        individual = np.mean(np.square(matrix.values - truth[:, np.newaxis]), axis=0)
        layout = classical_mds(correlation_distance(matrix))
        path = self.output_dir(options) / options['name']
        layout.to_csv(path, selected=selected, individual_mspe=individual)
        self.stdout.write(f'Карта {forest.size} деревьев сохранена: {path}, stress {layout.stress:.4g}')
