from pathlib import Path

from experiments.config import FULL
from experiments.experiment import pairwise_comparisons, summarize
from experiments.reports import comparisons_frame, ordered_methods, read_records
from forests.management.base import ForestPruneCommand


class Command(ForestPruneCommand):
    help = 'Пересчитывает сводку и попарные сравнения по сохранённому records.csv.'

    def add_arguments(self, parser):
        parser.add_argument('records', help='records.csv, записанный командой simulate')
        super().add_arguments(parser)
        parser.add_argument('--baseline', nargs='+', default=[FULL], help='Базовые линии для сравнения')

    def run(self, **options):
        path = Path(options['records'])
        records = read_records(path, path.with_name('timings.csv'))
        methods = ordered_methods(records)
        summary = summarize(records, options['baseline'], methods)
        output_dir = self.output_dir(options)
        comparisons_frame(summary).to_csv(output_dir / 'summary.csv', index=False, float_format='%.17g')
        comparisons_frame(pairwise_comparisons(records, methods)).to_csv(
            output_dir / 'comparisons.csv', index=False, float_format='%.17g')
        self.stdout.write(comparisons_frame(summary).to_string(index=False))
