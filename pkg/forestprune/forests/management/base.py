"""
Общая основа команд forestprune.

Коды возврата: 0 при успехе, 2 при ошибке параметров или конфигурации,
1 при ошибке во время работы (данные, несовпадение схем, бюджет слияния).
"""
import logging
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from forests.data import Dataset, generate_scenario, load_csv, scenario_config
from forests.exceptions import ConfigurationError, ForestPruneError

CONFIG_ERROR = 2
RUNTIME_ERROR = 1

logger = logging.getLogger(__name__)


class ForestPruneCommand(BaseCommand):
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--output-dir', default=settings.FORESTPRUNE_OUTPUT_DIR,
                            help='Каталог для результатов (по умолчанию FORESTPRUNE_OUTPUT_DIR)')
        parser.add_argument('--seed', type=int, default=None, help='Переопределяет seed из конфигурации')
        parser.add_argument('--threads', type=int, default=None,
                            help='Число потоков (по умолчанию FORESTPRUNE_THREADS)')

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except ConfigurationError as e:
            raise CommandError(str(e), returncode=CONFIG_ERROR) from e
        except (ForestPruneError, ArithmeticError, ValueError, OSError) as e:
            logger.error(f"Команда завершилась ошибкой: {e}")
            raise CommandError(str(e), returncode=RUNTIME_ERROR) from e

    def run(self, **options):
        raise NotImplementedError

    def threads(self, options) -> int:
        threads = options.get('threads') or settings.FORESTPRUNE_THREADS
        if threads < 1:
            raise ConfigurationError(f"Число потоков должно быть положительным: {threads}")
        return threads

    def output_dir(self, options) -> Path:
        path = Path(options['output_dir'])
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f"Каталог результатов недоступен для записи: {path}") from e
        return path


def add_dataset_arguments(parser):
    parser.add_argument('--csv', help='CSV с данными')
    parser.add_argument('--response', default='y', help='Столбец отклика в CSV')
    parser.add_argument('--scenario', type=int, help='Номер синтетического сценария вместо CSV')
    parser.add_argument('--rows', help="Строки данных: диапазон 'a:b' или список '0,3,5' (по умолчанию все)")


def load_dataset_option(options, seed: int) -> Dataset:
    if bool(options.get('csv')) == (options.get('scenario') is not None):
        raise ConfigurationError("Укажите ровно один источник данных: --csv или --scenario")
    if options.get('csv'):
        return load_csv(options['csv'], options['response'])
    return generate_scenario(scenario_config(options['scenario'], seed))


def parse_rows(text: str | None, n_rows: int) -> np.ndarray:
    if not text:
        return np.arange(n_rows)
    try:
        if ':' in text:
            start, stop = (int(part) if part else None for part in text.split(':', 1))
            return np.arange(n_rows)[slice(start, stop)]
        return np.array([int(part) for part in text.split(',')], dtype=np.int64)
    except ValueError as e:
        raise ConfigurationError(f"Некорректный список строк '{text}'") from e
