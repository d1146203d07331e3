"""
Синтетические сценарии, чтение CSV и детерминированное разбиение выборки.

Генератор случайных чисел: numpy ``Generator`` на PCG64, инициализированный
целым seed; нормальные величины берутся из ``standard_normal`` (зиккурат).
Оба алгоритма зафиксированы в numpy и воспроизводимы на любых платформах.
"""
import json
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, IngestionError

DEFAULT_TOTAL_VARS = 10
DEFAULT_RATIOS = (0.6, 0.2, 0.2)
RESPONSE_NAME = 'y'
RATIO_TOLERANCE = 1e-9

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    response: np.ndarray
    column_names: tuple[str, ...]
    response_name: str = RESPONSE_NAME

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        response = np.array(self.response, dtype=np.float64, copy=True).ravel()
        if features.ndim != 2:
            raise IngestionError(f"Матрица признаков должна быть двумерной, получено измерений: {features.ndim}")
        if features.shape[0] != response.shape[0]:
            raise IngestionError(
                f"Число строк признаков ({features.shape[0]}) не совпадает с длиной отклика ({response.shape[0]})"
            )
        if len(self.column_names) != features.shape[1]:
            raise IngestionError(
                f"Имён столбцов {len(self.column_names)}, а столбцов {features.shape[1]}"
            )
        if not np.all(np.isfinite(features)):
            row, col = np.argwhere(~np.isfinite(features))[0]
            raise IngestionError(f"Нечисловое значение в строке {row}, столбце '{self.column_names[col]}'",
                                 row=int(row), column=self.column_names[col])
        if not np.all(np.isfinite(response)):
            row = int(np.flatnonzero(~np.isfinite(response))[0])
            raise IngestionError(f"Нечисловой отклик в строке {row}", row=row, column=self.response_name)
        features.flags.writeable = False
        response.flags.writeable = False
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'response', response)
        object.__setattr__(self, 'column_names', tuple(self.column_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def train_validation(self) -> np.ndarray:
        """Объединение обучающей и валидационной частей (для переобучения на 80%)."""
        return np.sort(np.concatenate([self.train, self.validation]))


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    relevant_vars: int
    noise_variance: float
    seed: int = 123
    total_vars: int = DEFAULT_TOTAL_VARS
    forest_size: int = 25

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError(f"Размер выборки должен быть положительным: n={self.n}")
        if not 0 <= self.relevant_vars <= self.total_vars:
            raise ConfigurationError(
                f"Число значимых переменных {self.relevant_vars} вне диапазона 0..{self.total_vars}"
            )
        # σ²=0 допускается как вырожденный предел без шума
        if not math.isfinite(self.noise_variance) or self.noise_variance < 0:
            raise ConfigurationError(f"Дисперсия шума должна быть неотрицательной: {self.noise_variance}")
        if self.forest_size < 1:
            raise ConfigurationError(f"Размер леса должен быть не меньше 1: B={self.forest_size}")

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioConfig':
        known = {'n', 'relevant_vars', 'noise_variance', 'seed', 'total_vars', 'forest_size'}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные поля сценария: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigurationError(f"Неполная конфигурация сценария: {e}") from e

    def to_dict(self) -> dict:
        return asdict(self)


def _scenario_catalog() -> dict[int, dict]:
    # Порядок нумерации: n меняется быстрее всего, затем число переменных, B и шум
    catalog = {}
    for number in range(1, 17):
        i = number - 1
        catalog[number] = {
            'n': (600, 20000)[i % 2],
            'relevant_vars': (2, 8)[(i // 2) % 2],
            'forest_size': (25, 100)[(i // 4) % 2],
            'noise_variance': (0.04, 2.0)[i // 8],
        }
    return catalog


SCENARIOS = _scenario_catalog()


def scenario_config(number: int, seed: int = 123) -> ScenarioConfig:
    """Конфигурация одного из 16 стандартных синтетических сценариев."""
    if number not in SCENARIOS:
        raise ConfigurationError(f"Сценарий {number} не существует, доступны 1..{len(SCENARIOS)}")
    return ScenarioConfig(seed=seed, **SCENARIOS[number])


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Файл сценария не найден: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Некорректный JSON в {path}: {e}") from e
    return ScenarioConfig.from_dict(data)


def generate_scenario(config: ScenarioConfig) -> Dataset:
    """
    Генерирует выборку Y = x_1 + ... + x_k + ε, где признаки и шум нормальны.

    Признаки независимы и распределены N(0, 1), первые ``relevant_vars`` столбцов
    входят в отклик с коэффициентом 1, шум имеет дисперсию ``noise_variance``.
    """
    rng = np.random.default_rng(config.seed)
    features = rng.standard_normal((config.n, config.total_vars))
    noise = rng.standard_normal(config.n) * math.sqrt(config.noise_variance)
    signal = np.zeros(config.n)
    for j in range(config.relevant_vars):
        signal += features[:, j]
    response = signal + noise
    names = tuple(f'x{j + 1}' for j in range(config.total_vars))
    logger.debug(f"Сгенерирован сценарий n={config.n}, значимых переменных {config.relevant_vars}, "
                 f"σ²={config.noise_variance}, seed={config.seed}")
    return Dataset(features=features, response=response, column_names=names)


def _first_missing_cell(frame: pd.DataFrame) -> tuple[int, str] | None:
    missing = frame.isna()
    if not missing.values.any():
        return None
    row, col = np.argwhere(missing.values)[0]
    return int(row), str(frame.columns[col])


def load_csv(path: str | Path, response_column: str, ordinal_levels: dict[str, list[str]] | None = None) -> Dataset:
    """
    Читает CSV (RFC-4180, UTF-8, заголовок обязателен) в Dataset.

    Категориальные столбцы кодируются one-hot с лексикографически
    упорядоченными уровнями; столбцы из ``ordinal_levels`` кодируются
    порядковым номером уровня в объявленном списке.
    """
    path = Path(path)
    ordinal_levels = ordinal_levels or {}
    if not path.is_file():
        raise IngestionError(f"Файл не найден: {path}")
    try:
        frame = pd.read_csv(path, encoding='utf-8', sep=',', decimal='.', skipinitialspace=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        logger.error(f"Ошибка разбора CSV {path}: {e}")
        raise IngestionError(f"Не удалось разобрать CSV {path}: {e}") from e

    if response_column not in frame.columns:
        raise IngestionError(f"Столбец отклика '{response_column}' отсутствует в {path}", column=response_column)

    missing = _first_missing_cell(frame)
    if missing:
        row, column = missing
        raise IngestionError(f"Пустая ячейка: строка данных {row}, столбец '{column}'", row=row, column=column)

    response = frame[response_column]
    if not pd.api.types.is_numeric_dtype(response):
        bad = pd.to_numeric(response, errors='coerce').isna()
        row = int(np.flatnonzero(bad.values)[0])
        raise IngestionError(f"Нечисловой отклик '{response.iloc[row]}' в строке данных {row}",
                             row=row, column=response_column)

    unknown_ordinals = set(ordinal_levels) - set(frame.columns)
    if unknown_ordinals:
        raise IngestionError(f"Порядковые столбцы отсутствуют в файле: {sorted(unknown_ordinals)}")

    numeric_parts, names, indicator_parts, indicator_names = [], [], [], []
    for column in frame.columns:
        if column == response_column:
            continue
        values = frame[column]
        if column in ordinal_levels:
            levels = [str(level) for level in ordinal_levels[column]]
            codes = values.astype(str).map({level: k for k, level in enumerate(levels)})
            if codes.isna().any():
                row = int(np.flatnonzero(codes.isna().values)[0])
                raise IngestionError(f"Уровень '{values.iloc[row]}' не объявлен для столбца '{column}'",
                                     row=row, column=column)
            numeric_parts.append(codes.to_numpy(dtype=np.float64))
            names.append(column)
        elif pd.api.types.is_numeric_dtype(values):
            numeric_parts.append(values.to_numpy(dtype=np.float64))
            names.append(column)
        else:
            as_text = values.astype(str)
            for level in sorted(as_text.unique()):
                indicator_parts.append((as_text == level).to_numpy(dtype=np.float64))
                indicator_names.append(f'{column}={level}')

    columns = numeric_parts + indicator_parts
    features = np.column_stack(columns) if columns else np.empty((len(frame), 0))
    logger.info(f"Загружен {path}: {features.shape[0]} строк, {features.shape[1]} признаков")
    return Dataset(features=features, response=response.to_numpy(dtype=np.float64),
                   column_names=tuple(names + indicator_names), response_name=response_column)


def validate_ratios(ratios) -> tuple[float, float, float]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ConfigurationError(f"Нужно три доли разбиения, получено {len(ratios)}")
    if any(not 0 < r < 1 for r in ratios):
        raise ConfigurationError(f"Каждая доля должна лежать в (0, 1): {ratios}")
    if abs(sum(ratios) - 1) > RATIO_TOLERANCE:
        raise ConfigurationError(f"Сумма долей должна быть равна 1: {ratios}")
    return ratios


def split_sizes(n: int, ratios) -> tuple[int, int, int]:
    """Округление вниз, остаток строк по одной: обучение, затем валидация, затем тест."""
    ratios = validate_ratios(ratios)
    sizes = [math.floor(r * n + RATIO_TOLERANCE) for r in ratios]
    remainder = n - sum(sizes)
    k = 0
    while remainder > 0:
        sizes[k % 3] += 1
        remainder -= 1
        k += 1
    return sizes[0], sizes[1], sizes[2]


def split(dataset: Dataset | int, ratios=DEFAULT_RATIOS, seed: int = 123) -> SplitIndices:
    n = dataset if isinstance(dataset, int) else dataset.n_rows
    n_train, n_validation, _ = split_sizes(n, ratios)
    permutation = np.random.default_rng(seed).permutation(n)
    train = np.sort(permutation[:n_train])
    validation = np.sort(permutation[n_train:n_train + n_validation])
    test = np.sort(permutation[n_train + n_validation:])
    return SplitIndices(train=train, validation=validation, test=test)


@dataclass(frozen=True)
class ReplicationSeeds:
    data: int
    split: int
    forest: int
    cv: int


def replication_seeds(master_seed: int, rep: int) -> ReplicationSeeds:
    """Seed повтора порождается из общего seed по номеру повтора и не зависит от числа повторов."""
    state = np.random.SeedSequence(master_seed, spawn_key=(rep,)).generate_state(4, dtype=np.uint32)
    return ReplicationSeeds(*(int(value) for value in state))
