from django.conf import settings

from forests.cart import dump_tree
from forests.exceptions import SchemaMismatchError
from forests.forest import load_forest
from forests.management.base import ForestPruneCommand
from forests.merge import merge_selection
from pruning.methods import PruneResult


class Command(ForestPruneCommand):
    help = 'Сливает отобранные деревья леса в одно дерево с тем же предсказанием.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--forest', required=True, help='JSON леса (результат команды fit)')
        parser.add_argument('--result', required=True, help='JSON результата прореживания (команда prune)')
        parser.add_argument('--max-leaves', type=int, default=settings.FORESTPRUNE_DEFAULTS['max_leaves'],
                            help='Предельное число листьев объединённого дерева')
        parser.add_argument('--coalesce', action='store_true', help='Склеивать поддеревья с равными листьями')

    def run(self, **options):
        forest = load_forest(options['forest'])
        result = PruneResult.from_json(options['result'])
        if max(result.selected) >= forest.size:
            raise SchemaMismatchError(f"Результат ссылается на дерево {max(result.selected)}, "
                                      f"а в лесу {forest.size} деревьев")
        merged = merge_selection(forest, result.selected, result.weights, max_leaves=options['max_leaves'],
                                 coalesce=options['coalesce'])
        output_dir = self.output_dir(options)
        (output_dir / 'merged_tree.json').write_text(merged.tree.to_json() + '\n', encoding='utf-8')
        (output_dir / 'merged_tree.txt').write_text(dump_tree(merged.tree) + '\n', encoding='utf-8')
        self.stdout.write(f'Объединено деревьев: {len(merged.source_indices)}, листьев {merged.leaf_count}, '
                          f'глубина {merged.tree.depth}')
