"""
Файлы результатов эксперимента: records.csv (по строке на повтор),
timings.csv, summary.csv, comparisons.csv, methods.csv и manifest.json.

Время выполнения пишется только в timings.csv, чтобы остальные таблицы были
побайтно воспроизводимы при любом числе потоков.
"""
import json
import logging
import math
import platform
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import pandas as pd

from forests.exceptions import IngestionError
from .analysis import ComparisonReport
from .config import FULL, TREE, ExperimentConfig
from .experiment import MethodOutcome, RunRecord, method_table, record_labels

FLOAT_FORMAT = '%.17g'
PACKAGES = ('numpy', 'scipy', 'pandas', 'joblib', 'Django', 'celery', 'cachetools')

logger = logging.getLogger(__name__)


def records_frame(records: list[RunRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = {'rep': record.rep, 'B': record.B}
        for label, outcome in record.outcomes.items():
            row[f'{label}_mspe'] = outcome.test_mspe
            row[f'{label}_trees'] = outcome.n_trees
            row[f'{label}_flags'] = ';'.join(outcome.flags)
        rows.append(row)
    return pd.DataFrame(rows)


def timings_frame(records: list[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([
        {'rep': record.rep, **{f'{label}_time': outcome.wall_time for label, outcome in record.outcomes.items()}}
        for record in records
    ])


def comparisons_frame(reports: list[ComparisonReport]) -> pd.DataFrame:
    columns = list(ComparisonReport.__dataclass_fields__)
    return pd.DataFrame([asdict(report) for report in reports], columns=columns)


def read_records(path: str | Path, timings_path: str | Path | None = None) -> list[RunRecord]:
    """Восстанавливает записи из records.csv (и, если есть, timings.csv)."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"Файл записей не найден: {path}")
    frame = pd.read_csv(path, keep_default_na=False, na_values=[''])
    for column in ('rep', 'B'):
        if column not in frame.columns:
            raise IngestionError(f"В {path} нет столбца '{column}'", column=column)
    labels = [column[:-len('_mspe')] for column in frame.columns if column.endswith('_mspe')]
    timings = None
    if timings_path is not None and Path(timings_path).is_file():
        timings = pd.read_csv(timings_path).set_index('rep')

    records = []
    for _, row in frame.iterrows():
        outcomes = {}
        for label in labels:
            flags = row.get(f'{label}_flags')
            flags = tuple(str(flags).split(';')) if isinstance(flags, str) and flags else ()
            wall_time = 0.0
            if timings is not None and f'{label}_time' in timings.columns:
                wall_time = float(timings.loc[row['rep'], f'{label}_time'])
            test_mspe = float(row[f'{label}_mspe'])
            outcomes[label] = MethodOutcome(test_mspe=test_mspe, n_trees=int(row[f'{label}_trees']),
                                            wall_time=wall_time, flags=flags,
                                            failed='failed' in flags or math.isnan(test_mspe))
        records.append(RunRecord(rep=int(row['rep']), B=int(row['B']), outcomes=outcomes,
                                 full_forest_test_mspe=outcomes[FULL].test_mspe if FULL in outcomes else math.nan))
    return records


def _versions() -> dict:
    versions = {'python': platform.python_version()}
    for package in PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = None
    return versions


def write_manifest(path: Path, config_data: dict, records: list[RunRecord], files: list[str]):
    manifest = {
        'config': config_data,
        'seeds': {str(record.rep): record.seeds for record in records},
        'software': _versions(),
        'files': files,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def write_experiment_outputs(config: ExperimentConfig, records: list[RunRecord], summary: list[ComparisonReport],
                             comparisons: list[ComparisonReport], output_dir: str | Path) -> dict[str, Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: output_dir / f'{name}.csv' for name in ('records', 'timings', 'summary', 'comparisons', 'methods')}
    records_frame(records).to_csv(paths['records'], index=False, float_format=FLOAT_FORMAT)
    timings_frame(records).to_csv(paths['timings'], index=False, float_format='%.6f')
    comparisons_frame(summary).to_csv(paths['summary'], index=False, float_format=FLOAT_FORMAT)
    comparisons_frame(comparisons).to_csv(paths['comparisons'], index=False, float_format=FLOAT_FORMAT)
    method_table(records).drop(columns='avg_time').to_csv(paths['methods'], index=False, float_format=FLOAT_FORMAT)
    paths['manifest'] = output_dir / 'manifest.json'
    write_manifest(paths['manifest'], config.to_dict(), records, sorted(path.name for path in paths.values()))
    logger.info(f"Результаты записаны в {output_dir}")
    return paths


def ordered_methods(records: list[RunRecord]) -> list[str]:
    return [label for label in record_labels(records) if label not in (FULL, TREE)]
