"""
Бэггинг-лес из деревьев CART со случайными подпространствами признаков.

Каждое дерево получает собственный поток случайных чисел, порождённый из
общего seed по индексу дерева (``SeedSequence.spawn``), поэтому результат
не зависит от числа параллельных исполнителей.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .cart import CartParams, RegressionTree, fit_tree
from .data import Dataset
from .exceptions import ConfigurationError, IngestionError, SchemaMismatchError

DEFAULT_SUBSPACE_RATE = 0.8

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[RegressionTree, ...]
    feature_masks: np.ndarray
    bootstrap_seeds: tuple[int, ...]
    params: CartParams
    subspace_rate: float = DEFAULT_SUBSPACE_RATE
    bootstrap: bool = True

    def __post_init__(self):
        masks = np.array(self.feature_masks, dtype=bool, copy=True)
        if masks.ndim != 2 or masks.shape[0] != len(self.trees):
            raise ConfigurationError(f"Ожидается по одной маске признаков на дерево, деревьев {len(self.trees)}")
        if not masks.any(axis=1).all():
            raise ConfigurationError("У каждого дерева должен быть хотя бы один активный признак")
        if len(self.bootstrap_seeds) != len(self.trees):
            raise ConfigurationError("Число seed бутстрепа не совпадает с числом деревьев")
        masks.flags.writeable = False
        object.__setattr__(self, 'feature_masks', masks)
        object.__setattr__(self, 'trees', tuple(self.trees))
        object.__setattr__(self, 'bootstrap_seeds', tuple(int(s) for s in self.bootstrap_seeds))

    @property
    def size(self) -> int:
        return len(self.trees)

    @property
    def width(self) -> int:
        return self.feature_masks.shape[1]

    def check_schema(self, dataset: Dataset):
        if dataset.width != self.width:
            raise SchemaMismatchError(f"Лес обучен на {self.width} признаках, а в данных их {dataset.width}")


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Матрица предсказаний n × B: столбец i содержит предсказания дерева i."""
    values: np.ndarray
    row_indices: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ConfigurationError("Матрица предсказаний должна быть двумерной")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("Матрица предсказаний содержит нечисловые значения")
        rows = np.array(self.row_indices, dtype=np.int64, copy=True)
        if len(rows) != values.shape[0]:
            raise ConfigurationError("Число индексов строк не совпадает с числом строк матрицы")
        values.flags.writeable = False
        rows.flags.writeable = False
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'row_indices', rows)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_trees(self) -> int:
        return self.values.shape[1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=[f'tree_{i}' for i in range(self.n_trees)])
        frame.insert(0, 'row_index', self.row_indices)
        return frame

    def to_csv(self, path: str | Path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')


def uniform_mean(values: np.ndarray) -> np.ndarray:
    """Среднее по столбцам с последовательным суммированием слева направо."""
    total = np.zeros(values.shape[0])
    for i in range(values.shape[1]):
        total += values[:, i]
    return total / values.shape[1]


def weighted_sum(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    total = np.zeros(values.shape[0])
    for i in range(values.shape[1]):
        total += weights[i] * values[:, i]
    return total


def _draw_mask(rng: np.random.Generator, width: int, rate: float) -> np.ndarray:
    if width < 1:
        raise ConfigurationError("Нет признаков для выбора подпространства")
    # пустое подпространство перетягивается заново
    while True:
        mask = rng.random(width) < rate
        if mask.any():
            return mask


def _bootstrap_rows(train_indices: np.ndarray, bootstrap_seed: int, bootstrap: bool) -> np.ndarray:
    if not bootstrap:
        return train_indices
    m = len(train_indices)
    return train_indices[np.random.default_rng(bootstrap_seed).integers(0, m, m)]


def _tree_streams(seed: int, B: int) -> list[tuple[np.random.Generator, int]]:
    streams = []
    for child in np.random.SeedSequence(seed).spawn(B):
        mask_seq, bootstrap_seq = child.spawn(2)
        bootstrap_seed = int(bootstrap_seq.generate_state(1, dtype=np.uint32)[0])
        streams.append((np.random.default_rng(mask_seq), bootstrap_seed))
    return streams


def _fit_trees(dataset, train_indices, masks, bootstrap_seeds, params, bootstrap, n_jobs) -> list[RegressionTree]:
    return Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(fit_tree)(dataset, _bootstrap_rows(train_indices, bootstrap_seed, bootstrap), mask, params,
                          bootstrap_seed)
        for mask, bootstrap_seed in zip(masks, bootstrap_seeds)
    )


def _validate_rows(dataset: Dataset, row_indices) -> np.ndarray:
    rows = np.asarray(row_indices, dtype=np.int64)
    if rows.ndim != 1:
        raise ConfigurationError("Индексы строк должны быть одномерным списком")
    if len(rows) and (rows.min() < 0 or rows.max() >= dataset.n_rows):
        raise ConfigurationError(f"Индексы строк вне диапазона 0..{dataset.n_rows - 1}")
    return rows


def fit_forest(dataset: Dataset, train_indices, B: int, params: CartParams | None = None,
               subspace_rate: float = DEFAULT_SUBSPACE_RATE, seed: int = 123, bootstrap: bool = True,
               n_jobs: int = 1) -> Forest:
    """
    Обучает B деревьев: у каждого своя бутстреп-выборка размера |train|
    и маска признаков, где каждый признак включён с вероятностью ``subspace_rate``.

    ``bootstrap=False`` отключает ресэмплинг (используется в тестах и для
    одиночного дерева-эталона).
    """
    params = params or CartParams()
    if B < 1:
        raise ConfigurationError(f"Размер леса должен быть не меньше 1: B={B}")
    if not 0 < subspace_rate <= 1:
        raise ConfigurationError(f"Доля подпространства должна лежать в (0, 1]: {subspace_rate}")
    if dataset.width < 1:
        raise ConfigurationError("В данных нет ни одного признака, кроме отклика")
    train = _validate_rows(dataset, train_indices)
    if len(train) == 0:
        raise ConfigurationError("Обучающая выборка пуста")

    streams = _tree_streams(seed, B)
    masks = np.array([_draw_mask(rng, dataset.width, subspace_rate) for rng, _ in streams], dtype=bool)
    bootstrap_seeds = [bootstrap_seed for _, bootstrap_seed in streams]
    trees = _fit_trees(dataset, train, masks, bootstrap_seeds, params, bootstrap, n_jobs)
    logger.info(f"Лес обучен: B={B}, строк {len(train)}, средний размер подпространства "
                f"{masks.sum(axis=1).mean():.2f} из {dataset.width}")
    return Forest(trees=tuple(trees), feature_masks=masks, bootstrap_seeds=tuple(bootstrap_seeds), params=params,
                  subspace_rate=subspace_rate, bootstrap=bootstrap)


def refit_forest(forest: Forest, dataset: Dataset, train_indices, n_jobs: int = 1) -> Forest:
    """Переобучает лес на новых строках с теми же масками и seed бутстрепа."""
    forest.check_schema(dataset)
    train = _validate_rows(dataset, train_indices)
    if len(train) == 0:
        raise ConfigurationError("Обучающая выборка пуста")
    trees = _fit_trees(dataset, train, forest.feature_masks, forest.bootstrap_seeds, forest.params,
                       forest.bootstrap, n_jobs)
    logger.debug(f"Лес переобучен на {len(train)} строках")
    return Forest(trees=tuple(trees), feature_masks=forest.feature_masks, bootstrap_seeds=forest.bootstrap_seeds,
                  params=forest.params, subspace_rate=forest.subspace_rate, bootstrap=forest.bootstrap)


def prediction_matrix(forest: Forest, dataset: Dataset, row_indices, n_jobs: int = 1) -> PredictionMatrix:
    forest.check_schema(dataset)
    rows = _validate_rows(dataset, row_indices)
    features = dataset.features[rows]
    columns = Parallel(n_jobs=n_jobs, prefer='threads')(delayed(tree.predict)(features) for tree in forest.trees)
    values = np.column_stack(columns) if columns else np.empty((len(rows), 0))
    return PredictionMatrix(values=values, row_indices=rows)


def predict_forest(forest: Forest, dataset: Dataset, row_indices, weights=None) -> np.ndarray:
    """
    Без весов возвращает равновзвешенное среднее по всем деревьям, с весами
    сумму Σ βᵢ tᵢ(x) без перенормировки.
    """
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (forest.size,):
            raise ConfigurationError(f"Ожидается {forest.size} весов, получено {weights.size}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ConfigurationError("Веса деревьев должны быть конечными и неотрицательными")
    matrix = prediction_matrix(forest, dataset, row_indices)
    if weights is None:
        return uniform_mean(matrix.values)
    return weighted_sum(matrix.values, weights)


def forest_to_dict(forest: Forest) -> dict:
    return {
        'params': forest.params.to_dict(),
        'subspace_rate': forest.subspace_rate,
        'bootstrap': forest.bootstrap,
        'width': forest.width,
        'feature_masks': forest.feature_masks.astype(int).tolist(),
        'bootstrap_seeds': list(forest.bootstrap_seeds),
        'trees': [tree.to_dict() for tree in forest.trees],
    }


def forest_from_dict(data: dict) -> Forest:
    try:
        masks = np.array(data['feature_masks'], dtype=bool)
        if masks.ndim != 2 or masks.shape[1] != data['width']:
            raise ConfigurationError(f"Маски признаков не соответствуют ширине {data['width']}")
        return Forest(
            trees=tuple(RegressionTree.from_dict(tree) for tree in data['trees']),
            feature_masks=masks,
            bootstrap_seeds=tuple(data['bootstrap_seeds']),
            params=CartParams.from_dict(data['params']),
            subspace_rate=float(data.get('subspace_rate', DEFAULT_SUBSPACE_RATE)),
            bootstrap=bool(data.get('bootstrap', True)),
        )
    except KeyError as e:
        raise ConfigurationError(f"В описании леса нет поля {e}") from e


def save_forest(forest: Forest, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(forest_to_dict(forest), indent=2) + '\n', encoding='utf-8')
    logger.debug(f"Лес из {forest.size} деревьев сохранён в {path}")


def load_forest(path: str | Path) -> Forest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise IngestionError(f"Файл леса не найден: {path}") from e
    except json.JSONDecodeError as e:
        raise IngestionError(f"Некорректный JSON леса в {path}: {e}") from e
    return forest_from_dict(data)
