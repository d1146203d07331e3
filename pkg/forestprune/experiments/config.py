"""
JSON-конфигурации экспериментов и проверки оценок.

Конфигурация эксперимента:

    {
      "scenario": 2,                       # номер из каталога или объект ScenarioConfig
      "csv": {"path": ..., "response_column": "y", "ordinal_levels": {...}},  # вместо scenario
      "B": 25, "methods": ["sfs", "sbs_prime", "bsf", "lasso", "lasso4"],
      "K": 4, "max_trees": 4, "reps": 10, "ratios": [0.6, 0.2, 0.2],
      "master_seed": 123, "cart": {...}, "subspace_rate": 0.8, "cv_folds": 10,
      "baselines": ["FULL"]
    }
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from django.conf import settings

from forests.cart import CartParams
from forests.data import DEFAULT_RATIOS, ScenarioConfig, scenario_config, validate_ratios
from forests.exceptions import ConfigurationError
from pruning.bounds import BOUND_SPLIT
from pruning.methods import PruneMethod

FULL = 'FULL'
TREE = 'TREE'

logger = logging.getLogger(__name__)


def _defaults() -> dict:
    return getattr(settings, 'FORESTPRUNE_DEFAULTS', {})


def _cart_params(data: dict | None) -> CartParams:
    defaults = _defaults()
    merged = {key: defaults[key] for key in ('min_split', 'min_bucket', 'cp', 'max_depth') if key in defaults}
    merged.update(data or {})
    return CartParams.from_dict(merged)


def _scenario(value, seed: int) -> ScenarioConfig:
    if isinstance(value, int) and not isinstance(value, bool):
        return scenario_config(value, seed)
    if isinstance(value, dict):
        return ScenarioConfig.from_dict({'seed': seed, **value})
    raise ConfigurationError(f"Сценарий задаётся номером или объектом, получено: {value!r}")


def parse_methods(values) -> tuple[tuple[PruneMethod, ...], int | None]:
    """Разбирает список методов; 'lasso4' задаёт LASSO с порогом 4 дерева."""
    if isinstance(values, str):
        values = [values]
    methods, cap = [], None
    for value in values:
        method = PruneMethod.parse(value)
        text = str(value).strip().lower()
        if method is PruneMethod.LASSO_K and text[5:].isdigit():
            cap = int(text[5:])
        if method not in methods:
            methods.append(method)
    if not methods:
        raise ConfigurationError("Список методов пуст")
    return tuple(methods), cap


def read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise ConfigurationError(f"Файл конфигурации не найден: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Некорректный JSON в {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Конфигурация в {path} должна быть объектом JSON")
    return data


@dataclass(frozen=True)
class CsvSource:
    path: str
    response_column: str
    ordinal_levels: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[PruneMethod, ...]
    reps: int
    B: int
    scenario: ScenarioConfig | None = None
    csv: CsvSource | None = None
    K: int = 4
    max_trees: int = 4
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    master_seed: int = 123
    params: CartParams = field(default_factory=CartParams)
    subspace_rate: float = 0.8
    cv_folds: int = 10
    baselines: tuple[str, ...] = (FULL,)

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError(f"Число повторов должно быть положительным: {self.reps}")
        if not self.methods:
            raise ConfigurationError("Список методов пуст")
        if (self.scenario is None) == (self.csv is None):
            raise ConfigurationError("Нужно указать ровно один источник данных: scenario или csv")
        if self.B < 1:
            raise ConfigurationError(f"Размер леса должен быть не меньше 1: B={self.B}")
        if self.K < 1 or self.max_trees < 1:
            raise ConfigurationError(f"K и max_trees должны быть положительными: K={self.K}, "
                                     f"max_trees={self.max_trees}")
        if not 0 < self.subspace_rate <= 1:
            raise ConfigurationError(f"Доля подпространства должна лежать в (0, 1]: {self.subspace_rate}")
        object.__setattr__(self, 'ratios', validate_ratios(self.ratios))
        labels = set(self.method_labels) | {FULL, TREE}
        unknown = [baseline for baseline in self.baselines if baseline not in labels]
        if unknown:
            raise ConfigurationError(f"Неизвестные базовые линии {unknown}, доступны: {sorted(labels)}")

    @property
    def method_labels(self) -> tuple[str, ...]:
        return tuple(method.label(self.max_trees) for method in self.methods)

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        known = {'scenario', 'csv', 'B', 'methods', 'K', 'max_trees', 'reps', 'ratios', 'master_seed', 'cart',
                 'subspace_rate', 'cv_folds', 'baselines'}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные поля конфигурации: {sorted(unknown)}")
        defaults = _defaults()
        seed = int(data.get('master_seed', 123))
        methods, cap = parse_methods(data.get('methods', ['sfs', 'sbs_prime', 'bsf', 'lasso', 'lasso4']))

        scenario = _scenario(data['scenario'], seed) if 'scenario' in data else None
        csv = None
        if 'csv' in data:
            try:
                csv = CsvSource(**data['csv'])
            except TypeError as e:
                raise ConfigurationError(f"Некорректное описание CSV: {e}") from e
        if scenario is not None and 'B' in data:
            scenario = replace(scenario, forest_size=int(data['B']))
        B = data.get('B', scenario.forest_size if scenario is not None else 25)
        try:
            return cls(
                methods=methods,
                reps=int(data.get('reps', 1)),
                B=int(B),
                scenario=scenario,
                csv=csv,
                K=int(data.get('K', defaults.get('bsf_k', 4))),
                max_trees=int(data.get('max_trees', cap or defaults.get('max_trees', 4))),
                ratios=tuple(data.get('ratios', DEFAULT_RATIOS)),
                master_seed=seed,
                params=_cart_params(data.get('cart')),
                subspace_rate=float(data.get('subspace_rate', defaults.get('subspace_rate', 0.8))),
                cv_folds=int(data.get('cv_folds', defaults.get('cv_folds', 10))),
                baselines=tuple(data.get('baselines', [FULL])),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"Некорректное значение в конфигурации: {e}") from e

    def to_dict(self) -> dict:
        data = {
            'methods': [method.value if method is not PruneMethod.LASSO_K else f'lasso{self.max_trees}'
                        for method in self.methods],
            'reps': self.reps,
            'B': self.B,
            'K': self.K,
            'max_trees': self.max_trees,
            'ratios': list(self.ratios),
            'master_seed': self.master_seed,
            'cart': self.params.to_dict(),
            'subspace_rate': self.subspace_rate,
            'cv_folds': self.cv_folds,
            'baselines': list(self.baselines),
        }
        if self.scenario is not None:
            data['scenario'] = {key: value for key, value in self.scenario.to_dict().items() if key != 'seed'}
        else:
            data['csv'] = {'path': self.csv.path, 'response_column': self.csv.response_column,
                           'ordinal_levels': self.csv.ordinal_levels}
        return data

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        scenario = replace(self.scenario, seed=seed) if self.scenario is not None else None
        return replace(self, master_seed=seed, scenario=scenario)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    config = ExperimentConfig.from_dict(read_json(path))
    logger.debug(f"Загружена конфигурация эксперимента {path}")
    return config


@dataclass(frozen=True)
class BoundSimulationConfig:
    scenario: ScenarioConfig
    methods: tuple[PruneMethod, ...]
    reps: int
    ratios: tuple[float, float, float] = BOUND_SPLIT
    K: int = 4
    delta: float = 0.05
    M: float | None = None
    r: float | None = None
    params: CartParams = field(default_factory=CartParams)
    subspace_rate: float = 0.8
    cv_folds: int = 10

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError(f"Число повторов должно быть положительным: {self.reps}")
        object.__setattr__(self, 'ratios', validate_ratios(self.ratios))

    @classmethod
    def from_dict(cls, data: dict) -> 'BoundSimulationConfig':
        known = {'scenario', 'methods', 'reps', 'ratios', 'K', 'delta', 'M', 'r', 'cart', 'subspace_rate',
                 'cv_folds', 'master_seed'}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные поля конфигурации: {sorted(unknown)}")
        if 'scenario' not in data:
            raise ConfigurationError("В конфигурации проверки оценок нет сценария")
        methods, _ = parse_methods(data.get('methods', ['lasso', 'bsf', 'sfs']))
        try:
            return cls(
                scenario=_scenario(data['scenario'], int(data.get('master_seed', 123))),
                methods=methods,
                reps=int(data.get('reps', 1)),
                ratios=tuple(data.get('ratios', BOUND_SPLIT)),
                K=int(data.get('K', 4)),
                delta=float(data.get('delta', 0.05)),
                M=data.get('M'),
                r=data.get('r'),
                params=_cart_params(data.get('cart')),
                subspace_rate=float(data.get('subspace_rate', 0.8)),
                cv_folds=int(data.get('cv_folds', 10)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"Некорректное значение в конфигурации: {e}") from e

    def options(self) -> dict:
        """Именованные аргументы для simulate_bounds и bound_replication."""
        return {'K': self.K, 'delta': self.delta, 'M': self.M, 'r': self.r, 'params': self.params,
                'subspace_rate': self.subspace_rate, 'folds': self.cv_folds}

    def with_seed(self, seed: int) -> 'BoundSimulationConfig':
        return replace(self, scenario=replace(self.scenario, seed=seed))

    def to_dict(self) -> dict:
        return {
            'scenario': {key: value for key, value in self.scenario.to_dict().items() if key != 'seed'},
            'master_seed': self.scenario.seed,
            'methods': [method.value for method in self.methods],
            'reps': self.reps,
            'ratios': list(self.ratios),
            'K': self.K,
            'delta': self.delta,
            'M': self.M,
            'r': self.r,
            'cart': self.params.to_dict(),
            'subspace_rate': self.subspace_rate,
            'cv_folds': self.cv_folds,
        }


def load_bound_config(path: str | Path) -> BoundSimulationConfig:
    return BoundSimulationConfig.from_dict(read_json(path))
