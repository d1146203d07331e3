"""
Индукция регрессионных деревьев CART с ранней остановкой в духе rpart.

Соглашения:
  * порог разбиения ставится посередине между соседними наблюдёнными
    значениями признака;
  * строка уходит влево тогда и только тогда, когда значение < порога;
  * при равном приросте выбирается признак с меньшим индексом, затем меньший порог.
"""
import json
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset
from .exceptions import ConfigurationError, SchemaMismatchError

LEAF = -1

DEFAULT_MIN_SPLIT = 20
DEFAULT_MIN_BUCKET = 7
DEFAULT_CP = 0.01
DEFAULT_MAX_DEPTH = 30

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CartParams:
    min_split: int = DEFAULT_MIN_SPLIT
    min_bucket: int = DEFAULT_MIN_BUCKET
    cp: float = DEFAULT_CP
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        if self.min_bucket < 1:
            raise ConfigurationError(f"min_bucket должен быть не меньше 1: {self.min_bucket}")
        if self.min_split < 1:
            raise ConfigurationError(f"min_split должен быть положительным: {self.min_split}")
        if self.cp < 0:
            raise ConfigurationError(f"cp не может быть отрицательным: {self.cp}")
        if self.max_depth < 0:
            raise ConfigurationError(f"max_depth не может быть отрицательным: {self.max_depth}")
        if self.min_split < 2 * self.min_bucket:
            logger.warning(f"min_split={self.min_split} меньше 2·min_bucket={2 * self.min_bucket}: "
                           f"часть узлов не сможет разбиться")

    @classmethod
    def from_dict(cls, data: dict | None) -> 'CartParams':
        data = data or {}
        unknown = set(data) - {'min_split', 'min_bucket', 'cp', 'max_depth'}
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры CART: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """
    Дерево в виде плоских массивов узлов; корень имеет id 0.

    У узла-листа ``feature == LEAF``. ``count`` хранит число обучающих строк,
    дошедших до узла (0 у деревьев, полученных слиянием).
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name, dtype in (('feature', np.int64), ('threshold', np.float64), ('left', np.int64),
                            ('right', np.int64), ('value', np.float64), ('count', np.int64)):
            array = np.array(getattr(self, name), dtype=dtype, copy=True)
            array.flags.writeable = False
            object.__setattr__(self, name, array)
        self._validate()

    def _validate(self):
        n = len(self.feature)
        if n == 0:
            raise ConfigurationError("Дерево не содержит узлов")
        if not all(len(getattr(self, name)) == n for name in ('threshold', 'left', 'right', 'value', 'count')):
            raise ConfigurationError("Массивы узлов дерева имеют разную длину")
        parents = np.zeros(n, dtype=np.int64)
        for node in range(n):
            if self.feature[node] == LEAF:
                continue
            for child in (self.left[node], self.right[node]):
                if not 0 < child < n:
                    raise ConfigurationError(f"Узел {node} ссылается на несуществующий узел {child}")
                parents[child] += 1
        if parents[0] != 0 or np.any(parents[1:] != 1):
            raise ConfigurationError("Узлы дерева не образуют дерево с единственным корнем")
        # при единственном родителе у каждого узла цикл означает недостижимость из корня
        seen, stack = 0, [0]
        while stack:
            node = stack.pop()
            seen += 1
            if self.feature[node] != LEAF:
                stack.extend((int(self.left[node]), int(self.right[node])))
        if seen != n:
            raise ConfigurationError("Часть узлов дерева недостижима из корня")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    @property
    def leaf_count(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def depth(self) -> int:
        # обход от корня: id потомка может быть меньше id родителя
        deepest, stack = 0, [(0, 0)]
        while stack:
            node, level = stack.pop()
            deepest = max(deepest, level)
            if self.feature[node] != LEAF:
                stack.append((int(self.left[node]), level + 1))
                stack.append((int(self.right[node]), level + 1))
        return deepest

    @property
    def max_feature_index(self) -> int:
        used = self.feature[self.feature != LEAF]
        return int(used.max()) if len(used) else -1

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[np.newaxis, :]
        if features.shape[1] <= self.max_feature_index:
            raise SchemaMismatchError(
                f"Ширина строки {features.shape[1]} меньше требуемой деревом {self.max_feature_index + 1}"
            )
        node = np.zeros(features.shape[0], dtype=np.int64)
        while True:
            split_feature = self.feature[node]
            active = np.flatnonzero(split_feature != LEAF)
            if len(active) == 0:
                break
            current = node[active]
            go_left = features[active, split_feature[active]] < self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
        return self.value[node].copy()

    def to_dict(self) -> dict:
        nodes = []
        for node in range(self.n_nodes):
            if self.feature[node] == LEAF:
                nodes.append({'id': node, 'kind': 'leaf', 'value': float(self.value[node]),
                              'count': int(self.count[node])})
            else:
                nodes.append({'id': node, 'kind': 'split', 'feature': int(self.feature[node]),
                              'threshold': float(self.threshold[node]), 'left': int(self.left[node]),
                              'right': int(self.right[node]), 'value': float(self.value[node]),
                              'count': int(self.count[node])})
        return {'root': 0, 'seed': self.seed, 'nodes': nodes}

    @classmethod
    def from_dict(cls, data: dict) -> 'RegressionTree':
        if data.get('root', 0) != 0:
            raise ConfigurationError(f"Ожидается корень с id 0, получен {data.get('root')}")
        nodes = sorted(data['nodes'], key=lambda node: node['id'])
        if [node['id'] for node in nodes] != list(range(len(nodes))):
            raise ConfigurationError("Идентификаторы узлов должны идти подряд с нуля")
        leaf = [node['kind'] == 'leaf' for node in nodes]
        return cls(
            feature=[LEAF if is_leaf else node['feature'] for node, is_leaf in zip(nodes, leaf)],
            threshold=[0.0 if is_leaf else node['threshold'] for node, is_leaf in zip(nodes, leaf)],
            left=[LEAF if is_leaf else node['left'] for node, is_leaf in zip(nodes, leaf)],
            right=[LEAF if is_leaf else node['right'] for node, is_leaf in zip(nodes, leaf)],
            value=[node['value'] for node in nodes],
            count=[node.get('count', 0) for node in nodes],
            seed=data.get('seed'),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def dump_tree(tree: RegressionTree, column_names=None) -> str:
    """Текстовое представление дерева в стиле print.rpart; листья отмечены '*'."""

    def name(feature: int) -> str:
        return column_names[feature] if column_names is not None else f'x[{feature}]'

    lines = []

    def walk(node: int, label: int, condition: str, indent: int):
        marker = ' *' if tree.is_leaf(node) else ''
        lines.append(f"{'  ' * indent}{label}) {condition} {int(tree.count[node])} "
                     f"{float(tree.value[node]):.6g}{marker}")
        if not tree.is_leaf(node):
            feature, threshold = int(tree.feature[node]), float(tree.threshold[node])
            walk(int(tree.left[node]), 2 * label, f'{name(feature)}< {threshold:.6g}', indent + 1)
            walk(int(tree.right[node]), 2 * label + 1, f'{name(feature)}>={threshold:.6g}', indent + 1)

    walk(0, 1, 'root', 0)
    return '\n'.join(lines)


@dataclass
class _Split:
    feature: int
    threshold: float
    improvement: float


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, min_bucket: int) -> _Split | None:
    n = len(y)
    centered = y - y.mean()
    total, total_sq = centered.sum(), np.square(centered).sum()
    node_sse = total_sq - total * total / n
    left_n = np.arange(1, n + 1, dtype=np.float64)
    right_n = n - left_n
    valid_positions = np.arange(n - 1)
    valid_positions = valid_positions[(valid_positions >= min_bucket - 1) & (valid_positions < n - min_bucket)]
    if len(valid_positions) == 0:
        return None

    best = None
    for feature in features:
        order = np.argsort(x[:, feature], kind='stable')
        xs, ys = x[order, feature], centered[order]
        positions = valid_positions[xs[valid_positions] < xs[valid_positions + 1]]
        if len(positions) == 0:
            continue
        csum, csq = np.cumsum(ys), np.cumsum(np.square(ys))
        left_sse = csq[positions] - np.square(csum[positions]) / left_n[positions]
        right_sum = total - csum[positions]
        right_sse = (total_sq - csq[positions]) - np.square(right_sum) / right_n[positions]
        improvement = node_sse - left_sse - right_sse
        k = int(np.argmax(improvement))
        if best is None or improvement[k] > best.improvement:
            low, high = xs[positions[k]], xs[positions[k] + 1]
            threshold = low + (high - low) / 2
            if not low < threshold <= high:
                threshold = high
            best = _Split(feature=int(feature), threshold=float(threshold), improvement=float(improvement[k]))
    return best


def fit_tree(dataset: Dataset, row_indices, feature_mask, params: CartParams | None = None,
             seed: int | None = None) -> RegressionTree:
    """
    Жадно строит дерево, минимизируя сумму квадратов ошибок.

    Разбиение принимается, если в узле не меньше ``min_split`` строк, в каждом
    потомке не меньше ``min_bucket``, глубина потомков не превышает ``max_depth``
    и прирост не меньше ``cp`` от SSE корня. ``seed`` сохраняется в дереве:
    сама индукция детерминирована.
    """
    params = params or CartParams()
    rows = np.asarray(row_indices, dtype=np.int64)
    if len(rows) == 0:
        raise ConfigurationError("Нельзя обучить дерево на пустом множестве строк")
    mask = np.asarray(feature_mask, dtype=bool)
    if mask.shape != (dataset.width,):
        raise SchemaMismatchError(f"Маска признаков длины {len(mask)} при ширине данных {dataset.width}")
    if not mask.any():
        raise ConfigurationError("Маска признаков не содержит ни одного признака")

    x = dataset.features[rows]
    y = dataset.response[rows]
    features = np.flatnonzero(mask)
    root_centered = y - y.mean()
    min_improvement = params.cp * float(np.square(root_centered).sum())

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def grow(positions: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[positions].mean()))
        count.append(len(positions))

        if len(positions) < params.min_split or depth >= params.max_depth:
            return node
        split = _best_split(x[positions], y[positions], features, params.min_bucket)
        if split is None or split.improvement <= 0 or split.improvement < min_improvement:
            return node

        goes_left = x[positions, split.feature] < split.threshold
        feature[node] = split.feature
        threshold[node] = split.threshold
        left[node] = grow(positions[goes_left], depth + 1)
        right[node] = grow(positions[~goes_left], depth + 1)
        return node

    grow(np.arange(len(rows)), 0)
    tree = RegressionTree(feature=feature, threshold=threshold, left=left, right=right,
                          value=value, count=count, seed=seed)
    logger.debug(f"Дерево построено: {tree.n_nodes} узлов, {tree.leaf_count} листьев, глубина {tree.depth}")
    return tree


def predict_tree(tree: RegressionTree, features) -> float:
    """Предсказание дерева для одной строки признаков."""
    return float(tree.predict(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])
