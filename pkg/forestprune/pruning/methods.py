"""
Методы прореживания леса по валидационной матрице предсказаний.

SFS и SBS' строят жадные последовательности с выбором глобального минимума трассы,
BSF перебирает все подлесы размера 1..K, LASSO использует неотрицательный Lasso
с кросс-валидацией и, при заданном ``max_trees``, повторной подгонкой на
ограниченном наборе деревьев.

Во всех методах при равенстве побеждает меньший индекс дерева, а в трассах
выбирается самая ранняя итерация с минимальной ошибкой.
"""
import enum
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import nnls

from forests.exceptions import ConfigurationError
from forests.forest import PredictionMatrix, uniform_mean, weighted_sum
from .nnlasso import DEFAULT_FOLDS, cv_select_lambda

DEFAULT_BSF_K = 4
DEFAULT_MAX_TREES = 4
BSF_CHUNK = 50000
# относительный допуск, внутри которого кандидаты BSF пересчитываются напрямую
BSF_RECHECK = 1e-9

logger = logging.getLogger(__name__)


class PruneMethod(enum.Enum):
    SFS = 'sfs'
    SBS_PRIME = 'sbs_prime'
    BSF = 'bsf'
    LASSO = 'lasso'
    LASSO_K = 'lasso_k'

    @classmethod
    def parse(cls, value: 'str | PruneMethod') -> 'PruneMethod':
        if isinstance(value, cls):
            return value
        aliases = {"sbs'": cls.SBS_PRIME, 'sbs': cls.SBS_PRIME, 'sbsprime': cls.SBS_PRIME}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        for method in cls:
            if key in (method.value, method.name.lower()):
                return method
        if key.startswith('lasso') and key[5:].isdigit():
            return cls.LASSO_K
        valid = ', '.join(method.value for method in cls)
        raise ConfigurationError(f"Неизвестный метод '{value}', допустимые: {valid}")

    def label(self, max_trees: int | None = None) -> str:
        if self is PruneMethod.SBS_PRIME:
            return "SBS'"
        if self is PruneMethod.LASSO_K:
            return f'LASSO{max_trees if max_trees is not None else DEFAULT_MAX_TREES}'
        return self.name


COMBINATORIAL = (PruneMethod.SFS, PruneMethod.SBS_PRIME, PruneMethod.BSF)


@dataclass(frozen=True, eq=False)
class PruneResult:
    method: PruneMethod
    selected: tuple[int, ...]
    weights: np.ndarray
    validation_mspe: float
    trace: tuple[float, ...] = ()
    fallback: bool = False
    lambda_: float | None = None
    max_trees: int | None = None
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        selected = tuple(int(i) for i in self.selected)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not selected:
            raise ConfigurationError("Результат прореживания не содержит деревьев")
        if len(set(selected)) != len(selected):
            raise ConfigurationError(f"Индексы деревьев повторяются: {selected}")
        if weights.shape != (len(selected),) or np.any(weights < 0):
            raise ConfigurationError("Веса должны быть неотрицательными, по одному на выбранное дерево")
        object.__setattr__(self, 'selected', selected)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'trace', tuple(float(v) for v in self.trace))

    @property
    def label(self) -> str:
        return self.method.label(self.max_trees)

    @property
    def n_trees(self) -> int:
        return len(self.selected)

    def full_weights(self, B: int) -> np.ndarray:
        weights = np.zeros(B)
        weights[list(self.selected)] = self.weights
        return weights

    def predict(self, matrix: PredictionMatrix | np.ndarray) -> np.ndarray:
        values = matrix.values if isinstance(matrix, PredictionMatrix) else np.asarray(matrix)
        return sub_forest_predictions(values, self.selected, self.weights, self.method)

    def to_dict(self) -> dict:
        return {
            'method': self.method.value,
            'label': self.label,
            'selected': list(self.selected),
            'weights': self.weights.tolist(),
            'validation_mspe': self.validation_mspe,
            'trace': list(self.trace),
            'fallback': self.fallback,
            'lambda': self.lambda_,
            'max_trees': self.max_trees,
            'flags': list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'PruneResult':
        try:
            return cls(method=PruneMethod.parse(data['method']), selected=data['selected'],
                       weights=data['weights'], validation_mspe=float(data['validation_mspe']),
                       trace=data.get('trace', ()), fallback=bool(data.get('fallback', False)),
                       lambda_=data.get('lambda'), max_trees=data.get('max_trees'),
                       flags=tuple(data.get('flags', ())))
        except KeyError as e:
            raise ConfigurationError(f"В результате прореживания нет поля {e}") from e

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + '\n', encoding='utf-8')
        return text

    @classmethod
    def from_json(cls, path: str | Path) -> 'PruneResult':
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text(encoding='utf-8')))
        except FileNotFoundError as e:
            raise ConfigurationError(f"Файл результата не найден: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Некорректный JSON в {path}: {e}") from e


def _values(P) -> np.ndarray:
    values = P.values if isinstance(P, PredictionMatrix) else np.asarray(P, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 1:
        raise ConfigurationError("Матрица предсказаний должна содержать хотя бы один столбец")
    return values


def _responses(values: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != values.shape[0]:
        raise ConfigurationError(f"Откликов {y.shape[0]}, а строк матрицы {values.shape[0]}")
    if y.shape[0] < 1:
        raise ConfigurationError("Валидационная выборка пуста")
    return y


def _mspe(predictions: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.square(predictions - y)))


def sub_forest_predictions(values: np.ndarray, selected, weights, method: PruneMethod) -> np.ndarray:
    """Равновзвешенное среднее для комбинаторных методов, Σ βᵢ tᵢ для Lasso; суммирование идёт по возрастанию индексов."""
    order = np.argsort(np.asarray(selected), kind='stable')
    columns = values[:, np.asarray(selected)[order]]
    if method in COMBINATORIAL:
        return uniform_mean(columns)
    return weighted_sum(columns, np.asarray(weights)[order])


def _uniform_result(method: PruneMethod, values, y, selected, trace=()) -> PruneResult:
    selected = tuple(sorted(selected))
    k = len(selected)
    mspe = _mspe(uniform_mean(values[:, list(selected)]), y)
    return PruneResult(method=method, selected=selected, weights=np.full(k, 1.0 / k), validation_mspe=mspe,
                       trace=trace)


def _first_minimum(trace: list[float]) -> int:
    return int(np.argmin(np.asarray(trace)))


def prune_sfs(P, y) -> PruneResult:
    """
    Последовательное добавление: на каждом шаге добавляется дерево,
    дающее минимальную ошибку равновзвешенного подлеса. Трасса проходит все B
    шагов; возвращается префикс с первым минимумом.
    """
    values = _values(P)
    y = _responses(values, y)
    B = values.shape[1]
    chosen: list[int] = []
    remaining = list(range(B))
    running = np.zeros(values.shape[0])
    trace = []
    for step in range(1, B + 1):
        candidates = (running[:, np.newaxis] + values[:, remaining]) / step
        errors = np.mean(np.square(candidates - y[:, np.newaxis]), axis=0)
        pick = remaining[int(np.argmin(errors))]
        chosen.append(pick)
        remaining.remove(pick)
        running = running + values[:, pick]
        trace.append(_mspe(uniform_mean(values[:, sorted(chosen)]), y))
    best = _first_minimum(trace)
    logger.debug(f"SFS: минимум {trace[best]:.6g} на шаге {best + 1} из {B}")
    return _uniform_result(PruneMethod.SFS, values, y, chosen[:best + 1], trace)


def prune_sbs_prime(P, y) -> PruneResult:
    """
    Модифицированное последовательное удаление: удаляется дерево, чьё
    исключение меньше всего меняет ошибку по модулю. Трасса начинается с
    полного леса и идёт до одного дерева.
    """
    values = _values(P)
    y = _responses(values, y)
    B = values.shape[1]
    current = list(range(B))
    running = values.sum(axis=1)
    trace = [_mspe(uniform_mean(values), y)]
    removed: list[int] = []
    while len(current) > 1:
        k = len(current)
        current_error = _mspe(running / k, y)
        candidates = (running[:, np.newaxis] - values[:, current]) / (k - 1)
        errors = np.mean(np.square(candidates - y[:, np.newaxis]), axis=0)
        drop = current[int(np.argmin(np.abs(current_error - errors)))]
        current.remove(drop)
        removed.append(drop)
        running = values[:, current].sum(axis=1)
        trace.append(_mspe(uniform_mean(values[:, current]), y))
    best = _first_minimum(trace)
    survivors = sorted(set(range(B)) - set(removed[:best]))
    logger.debug(f"SBS': минимум {trace[best]:.6g} после {best} удалений, осталось {len(survivors)}")
    return _uniform_result(PruneMethod.SBS_PRIME, values, y, survivors, trace)


def _bsf_chunk(combos: np.ndarray, gram: np.ndarray, correlations: np.ndarray, yty: float, n: int,
               tolerance: float) -> list[tuple[float, tuple[int, ...]]]:
    k = combos.shape[1]
    cross = np.zeros(len(combos))
    for a in range(k):
        for b in range(k):
            cross += gram[combos[:, a], combos[:, b]]
    scores = (yty - (2.0 / k) * correlations[combos].sum(axis=1) + cross / (k * k)) / n
    best = scores.min()
    keep = np.flatnonzero(scores <= best + tolerance)
    return [(float(scores[i]), tuple(int(j) for j in combos[i])) for i in keep]


def _combination_chunks(B: int, K: int):
    for k in range(1, K + 1):
        combos = itertools.combinations(range(B), k)
        while True:
            chunk = list(itertools.islice(combos, BSF_CHUNK))
            if not chunk:
                break
            yield np.array(chunk, dtype=np.int64)


def prune_bsf(P, y, K: int = DEFAULT_BSF_K, n_jobs: int = 1) -> PruneResult:
    """
    Полный перебор равновзвешенных подлесов размера 1..K.

    Ошибка считается через матрицу Грама:
    MSPE(S) = (yᵀy − (2/k)Σ pᵢᵀy + (1/k²)Σ pᵢᵀpⱼ) / n. Кандидаты, близкие к
    минимуму, пересчитываются напрямую; при равенстве выбирается
    лексикографически наименьший набор индексов.
    """
    values = _values(P)
    y = _responses(values, y)
    n, B = values.shape
    if not 1 <= K <= B / 2:
        raise ConfigurationError(f"Для BSF нужно 1 ≤ K ≤ B/2, получено K={K}, B={B}")
    gram = values.T @ values
    correlations = values.T @ y
    yty = float(y @ y)
    tolerance = BSF_RECHECK * max(yty / n, float(np.diag(gram).max()) / n, np.finfo(float).tiny)

    chunks = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_bsf_chunk)(combos, gram, correlations, yty, n, tolerance)
        for combos in _combination_chunks(B, K)
    )
    candidates = [candidate for chunk in chunks for candidate in chunk]
    best_score = min(score for score, _ in candidates)
    finalists = sorted(subset for score, subset in candidates if score <= best_score + tolerance)
    exact = [(_mspe(uniform_mean(values[:, list(subset)]), y), subset) for subset in finalists]
    mspe, winner = min(exact)
    logger.debug(f"BSF(K={K}): лучший подлес {winner}, MSPE {mspe:.6g}, финалистов {len(finalists)}")
    return _uniform_result(PruneMethod.BSF, values, y, winner)


def _best_single_tree(values: np.ndarray, y: np.ndarray) -> int:
    errors = np.mean(np.square(values - y[:, np.newaxis]), axis=0)
    return int(np.argmin(errors))


def prune_lasso(P, y, max_trees: int | None = None, seed: int = 123, folds: int = DEFAULT_FOLDS,
                rule: str = 'min', standardize: bool = False, n_jobs: int = 1, **solver_options) -> PruneResult:
    """
    Отбор деревьев неотрицательным Lasso с λ из кросс-валидации.

    Если ненулевых коэффициентов больше ``max_trees``, остаются ``max_trees``
    наибольших, остальные фиксируются нулём, и кросс-валидация с подгонкой
    повторяется один раз на ограниченном наборе. Если решение нулевое,
    выбирается лучшее одиночное дерево с весом из МНК по одному столбцу.
    """
    values = _values(P)
    y = _responses(values, y)
    n, B = values.shape
    if max_trees is not None and max_trees < 1:
        raise ConfigurationError(f"max_trees должен быть положительным: {max_trees}")
    method = PruneMethod.LASSO if max_trees is None else PruneMethod.LASSO_K
    folds = min(folds, n)
    if folds < 2:
        raise ConfigurationError(f"Для кросс-валидации нужно хотя бы 2 строки, получено {n}")

    options = dict(folds=folds, seed=seed, rule=rule, standardize=standardize, n_jobs=n_jobs, **solver_options)
    lam, path = cv_select_lambda(values, y, **options)
    fit = path.fits[path.selected_index]
    flags = []
    if max_trees is not None and fit.nonzero_count > max_trees:
        order = np.argsort(-fit.coefficients, kind='stable')
        keep = np.sort(order[:max_trees])
        logger.info(f"Lasso выбрал {fit.nonzero_count} деревьев при пороге {max_trees}: "
                    f"повторная подгонка на {keep.tolist()}")
        lam, path = cv_select_lambda(values, y, active=keep, **options)
        fit = path.fits[path.selected_index]
        flags.append('restricted_refit')
    if fit.objective_increased:
        flags.append('objective_increased')

    if fit.nonzero_count == 0:
        best = _best_single_tree(values, y)
        weight, _ = nnls(values[:, [best]], y)
        logger.warning(f"Lasso обнулил все коэффициенты, выбрано дерево {best} с весом {weight[0]:.6g}")
        predictions = weighted_sum(values[:, [best]], weight)
        return PruneResult(method=method, selected=(best,), weights=weight, validation_mspe=_mspe(predictions, y),
                           fallback=True, lambda_=lam, max_trees=max_trees, flags=tuple(flags + ['fallback']))

    selected = fit.support
    weights = fit.coefficients[selected]
    predictions = weighted_sum(values[:, selected], weights)
    return PruneResult(method=method, selected=tuple(selected.tolist()), weights=weights,
                       validation_mspe=_mspe(predictions, y), lambda_=lam, max_trees=max_trees, flags=tuple(flags))


def prune(method: PruneMethod | str, P, y, K: int = DEFAULT_BSF_K, max_trees: int = DEFAULT_MAX_TREES,
          seed: int = 123, n_jobs: int = 1, **lasso_options) -> PruneResult:
    """
    Единая точка вызова методов.

    В лесу из одного дерева выбирать нечего: любой метод возвращает это
    дерево с весом 1. Для BSF значение K ограничивается сверху B/2.
    """
    method = PruneMethod.parse(method)
    values = _values(P)
    y = _responses(values, y)
    B = values.shape[1]
    if B == 1:
        cap = max_trees if method is PruneMethod.LASSO_K else None
        return PruneResult(method=method, selected=(0,), weights=np.ones(1), validation_mspe=_mspe(values[:, 0], y),
                           max_trees=cap, flags=('forced',))
    if method is PruneMethod.SFS:
        return prune_sfs(values, y)
    if method is PruneMethod.SBS_PRIME:
        return prune_sbs_prime(values, y)
    if method is PruneMethod.BSF:
        effective = min(K, B // 2)
        if effective != K:
            logger.warning(f"K={K} больше B/2 при B={B}, перебор ограничен K={effective}")
        return prune_bsf(values, y, effective, n_jobs=n_jobs)
    if method is PruneMethod.LASSO:
        return prune_lasso(values, y, None, seed=seed, n_jobs=n_jobs, **lasso_options)
    return prune_lasso(values, y, max_trees, seed=seed, n_jobs=n_jobs, **lasso_options)


def ghost_equivalence_check(P, y, j: int) -> tuple[float, float]:
    """
    Ошибка полного леса, где предсказание дерева j заменено средним остальных
    («призрачное» дерево), и ошибка среднего без дерева j. Они совпадают.
    """
    values = _values(P)
    y = _responses(values, y)
    B = values.shape[1]
    if B < 2:
        raise ConfigurationError("Для проверки нужно хотя бы два дерева")
    if not 0 <= j < B:
        raise ConfigurationError(f"Индекс дерева {j} вне диапазона 0..{B - 1}")
    others = [i for i in range(B) if i != j]
    without = uniform_mean(values[:, others])
    ghost = values.copy()
    ghost[:, j] = without
    return _mspe(uniform_mean(ghost), y), _mspe(without, y)
