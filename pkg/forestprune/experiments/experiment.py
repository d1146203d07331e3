"""
Протокол эксперимента: разбиение 60/20/20 → лес на обучающей части →
прореживание на валидации → переобучение леса на обучающей и валидационной
частях → оценка на тесте; повтор с seed, порождённым из общего.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
import pandas as pd
from celery import group
from joblib import Parallel, delayed
from scipy.optimize import nnls

from forests.cart import fit_tree
from forests.data import Dataset, generate_scenario, load_csv, replication_seeds, split
from forests.exceptions import ForestPruneError
from forests.forest import fit_forest, prediction_matrix, refit_forest, uniform_mean
from pruning.bounds import BoundReport, simulate_bounds
from pruning.methods import COMBINATORIAL, prune
from .analysis import ComparisonReport, mspe, wilcoxon_signed_rank
from .config import FULL, TREE, BoundSimulationConfig, ExperimentConfig

SIGNIFICANCE = 0.05

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodOutcome:
    test_mspe: float
    n_trees: int
    wall_time: float
    validation_mspe: float = math.nan
    selected: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()
    failed: bool = False

    def to_dict(self) -> dict:
        return {'test_mspe': self.test_mspe, 'n_trees': self.n_trees, 'wall_time': self.wall_time,
                'validation_mspe': self.validation_mspe, 'selected': list(self.selected),
                'flags': list(self.flags), 'failed': self.failed}

    @classmethod
    def from_dict(cls, data: dict) -> 'MethodOutcome':
        return cls(**{**data, 'selected': tuple(data.get('selected', ())), 'flags': tuple(data.get('flags', ()))})


@dataclass(frozen=True)
class RunRecord:
    rep: int
    outcomes: dict[str, MethodOutcome]
    full_forest_test_mspe: float
    B: int
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {'rep': self.rep, 'B': self.B, 'full_forest_test_mspe': self.full_forest_test_mspe,
                'seeds': self.seeds, 'outcomes': {label: outcome.to_dict() for label, outcome in self.outcomes.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> 'RunRecord':
        return cls(rep=int(data['rep']), B=int(data['B']), full_forest_test_mspe=float(data['full_forest_test_mspe']),
                   seeds=dict(data.get('seeds', {})),
                   outcomes={label: MethodOutcome.from_dict(outcome) for label, outcome in data['outcomes'].items()})

    def value(self, label: str) -> float:
        return self.outcomes[label].test_mspe

    def trees(self, label: str) -> int:
        return self.outcomes[label].n_trees


def load_dataset(config: ExperimentConfig, data_seed: int) -> Dataset:
    if config.scenario is not None:
        return generate_scenario(replace(config.scenario, seed=data_seed))
    return load_csv(config.csv.path, config.csv.response_column, config.csv.ordinal_levels)


def _refit_lasso_weights(values: np.ndarray, y: np.ndarray, selected) -> tuple[np.ndarray, tuple[str, ...]]:
    """Перевзвешивание на предсказаниях переобученных деревьев при фиксированном наборе деревьев."""
    weights, _ = nnls(values[:, list(selected)], y)
    if not np.any(weights > 0):
        return weights, ('refit_all_zero',)
    if np.any(weights == 0):
        return weights, ('support_shrunk',)
    return weights, ()


def run_replication(config: ExperimentConfig, rep: int, n_jobs: int = 1) -> RunRecord:
    seeds = replication_seeds(config.master_seed, rep)
    dataset = load_dataset(config, seeds.data)
    parts = split(dataset, config.ratios, seed=seeds.split)
    y_val, y_test = dataset.response[parts.validation], dataset.response[parts.test]

    started = time.perf_counter()
    forest = fit_forest(dataset, parts.train, config.B, config.params, config.subspace_rate, seed=seeds.forest,
                        n_jobs=n_jobs)
    forest_time = time.perf_counter() - started
    validation = prediction_matrix(forest, dataset, parts.validation, n_jobs=n_jobs)

    pruned = {}
    for method, label in zip(config.methods, config.method_labels):
        started = time.perf_counter()
        try:
            result = prune(method, validation, y_val, K=config.K, max_trees=config.max_trees, seed=seeds.cv,
                           n_jobs=n_jobs, folds=config.cv_folds)
            pruned[label] = (result, time.perf_counter() - started)
        except (ForestPruneError, ArithmeticError, ValueError) as e:
            logger.error(f"Повтор {rep}: метод {label} завершился ошибкой: {e}")
            pruned[label] = (None, time.perf_counter() - started)

    retrain_rows = parts.train_validation()
    started = time.perf_counter()
    retrained = refit_forest(forest, dataset, retrain_rows, n_jobs=n_jobs)
    retrain_time = time.perf_counter() - started
    retrained_validation = prediction_matrix(retrained, dataset, parts.validation, n_jobs=n_jobs).values
    test = prediction_matrix(retrained, dataset, parts.test, n_jobs=n_jobs).values

    full_mspe = mspe(uniform_mean(test), y_test)
    outcomes = {FULL: MethodOutcome(test_mspe=full_mspe, n_trees=config.B, wall_time=forest_time + retrain_time)}

    for label, (result, elapsed) in pruned.items():
        if result is None:
            outcomes[label] = MethodOutcome(test_mspe=math.nan, n_trees=0, wall_time=elapsed, flags=('failed',),
                                            failed=True)
            continue
        flags = result.flags
        weights = result.weights
        if result.method not in COMBINATORIAL and 'forced' not in flags:
            refitted, refit_flags = _refit_lasso_weights(retrained_validation, y_val, result.selected)
            if refit_flags:
                logger.warning(f"Повтор {rep}: {label} после переобучения: {', '.join(refit_flags)}")
            if 'refit_all_zero' not in refit_flags:
                weights = refitted
            flags = flags + refit_flags
        predictions = replace(result, weights=weights).predict(test)
        outcomes[label] = MethodOutcome(
            test_mspe=mspe(predictions, y_test), n_trees=int(np.count_nonzero(weights)) or result.n_trees,
            wall_time=elapsed, validation_mspe=result.validation_mspe, selected=result.selected, flags=flags,
        )

    started = time.perf_counter()
    tree = fit_tree(dataset, retrain_rows, np.ones(dataset.width, dtype=bool), config.params, seeds.forest)
    tree_mspe = mspe(tree.predict(dataset.features[parts.test]), y_test)
    outcomes[TREE] = MethodOutcome(test_mspe=tree_mspe, n_trees=1, wall_time=time.perf_counter() - started)

    logger.info(f"Повтор {rep}: MSPE полного леса {full_mspe:.6g}, " + ', '.join(
        f'{label} {outcome.test_mspe:.6g}' for label, outcome in outcomes.items() if label != FULL))
    return RunRecord(rep=rep, outcomes=outcomes, full_forest_test_mspe=full_mspe, B=config.B,
                     seeds={'data': seeds.data, 'split': seeds.split, 'forest': seeds.forest, 'cv': seeds.cv})


def run_experiment(config: ExperimentConfig, n_jobs: int = 1, distributed: bool = False) -> list[RunRecord]:
    """
    Выполняет все повторы. Локально повторы распределяются через joblib,
    при ``distributed`` группой задач Celery; результат упорядочен по повтору.
    """
    logger.info(f"Эксперимент: {config.reps} повторов, B={config.B}, методы {list(config.method_labels)}")
    if distributed:
        from .tasks import run_replication_task

        payload = config.to_dict()
        results = group(run_replication_task.s(payload, rep) for rep in range(config.reps)).apply_async().get()
        records = [RunRecord.from_dict(result) for result in results]
    else:
        records = Parallel(n_jobs=n_jobs)(delayed(run_replication)(config, rep) for rep in range(config.reps))
    records = sorted(records, key=lambda record: record.rep)
    failed = sum(outcome.failed for record in records for outcome in record.outcomes.values())
    if failed:
        logger.warning(f"Методов, завершившихся ошибкой: {failed}")
    return records


def record_labels(records: list[RunRecord]) -> list[str]:
    labels = []
    for record in records:
        for label in record.outcomes:
            if label not in labels:
                labels.append(label)
    return labels


def _paired(records, label_a: str, label_b: str) -> list[RunRecord]:
    return [record for record in records
            if label_a in record.outcomes and label_b in record.outcomes
            and not record.outcomes[label_a].failed and not record.outcomes[label_b].failed]


def _delta_pct(values: np.ndarray, baseline: np.ndarray) -> float:
    reference = baseline.mean()
    if reference == 0:
        return 0.0 if values.mean() == 0 else math.inf
    return float(100 * (values.mean() - reference) / reference)


def compare(records: list[RunRecord], label: str, baseline: str, alpha: float | None = None) -> ComparisonReport | None:
    paired = _paired(records, label, baseline)
    if not paired:
        logger.warning(f"Нет пар без ошибок для сравнения {label} и {baseline}")
        return None
    values = np.array([record.value(label) for record in paired])
    reference = np.array([record.value(baseline) for record in paired])
    trees = np.array([record.trees(label) for record in paired], dtype=np.float64)
    reference_trees = np.array([record.trees(baseline) for record in paired], dtype=np.float64)
    p_value = wilcoxon_signed_rank(values, reference).p_value
    return ComparisonReport(
        method_a=label, method_b=baseline,
        mspe_delta_pct=_delta_pct(values, reference),
        p_value=p_value,
        freq_delta_leq_0=float(np.mean(values - reference <= 0)),
        trees_delta_pct=_delta_pct(trees, reference_trees),
        trees_p_value=wilcoxon_signed_rank(trees, reference_trees).p_value,
        n_pairs=len(paired),
        alpha=alpha,
        significant=None if alpha is None else bool(p_value < alpha),
    )


def summarize(records: list[RunRecord], baselines=(FULL,), methods=None) -> list[ComparisonReport]:
    """
    Сравнение каждого метода с каждой базовой линией. Для сравнений с полным
    лесом уровень значимости делится на число методов (поправка Бонферрони).
    """
    if not records:
        raise ForestPruneError("Нет записей для сводки")
    methods = list(methods) if methods is not None else [
        label for label in record_labels(records) if label not in (FULL, TREE)
    ]
    reports = []
    for baseline in baselines:
        alpha = SIGNIFICANCE / len(methods) if baseline == FULL and methods else None
        for label in methods:
            report = compare(records, label, baseline, alpha)
            if report is not None:
                reports.append(report)
    return reports


def pairwise_comparisons(records: list[RunRecord], methods=None) -> list[ComparisonReport]:
    """Все неупорядоченные пары методов в порядке их объявления."""
    methods = list(methods) if methods is not None else [
        label for label in record_labels(records) if label not in (FULL, TREE)
    ]
    reports = []
    for label_a, label_b in combinations(methods, 2):
        report = compare(records, label_a, label_b)
        if report is not None:
            reports.append(report)
    return reports


def method_table(records: list[RunRecord]) -> pd.DataFrame:
    rows = []
    for label in record_labels(records):
        outcomes = [record.outcomes[label] for record in records if label in record.outcomes]
        good = [outcome for outcome in outcomes if not outcome.failed]
        rows.append({
            'method': label,
            'avg_mspe': float(np.mean([outcome.test_mspe for outcome in good])) if good else math.nan,
            'avg_trees': float(np.mean([outcome.n_trees for outcome in good])) if good else math.nan,
            'avg_time': float(np.mean([outcome.wall_time for outcome in outcomes])),
            'failures': len(outcomes) - len(good),
        })
    return pd.DataFrame(rows)


def run_bound_simulation(config: BoundSimulationConfig, n_jobs: int = 1, distributed: bool = False) -> list[BoundReport]:
    if not distributed:
        return simulate_bounds(config.scenario, config.methods, config.reps, config.ratios, n_jobs=n_jobs,
                               **config.options())
    from .tasks import run_bound_replication_task

    payload = config.to_dict()
    batches = group(run_bound_replication_task.s(payload, rep) for rep in range(config.reps)).apply_async().get()
    return [BoundReport.from_dict(report) for batch in batches for report in batch]
