"""
Слияние взвешенного набора деревьев в одно эквивалентное дерево.

Деревья сворачиваются слева направо в порядке возрастания индексов: каждый
лист накопленного дерева заменяется копией следующего дерева, значение
листа копии равно (накопленное значение + вес · значение листа). Веса
вносятся в константы листьев при построении, поэтому предсказание
объединённого дерева сводится к обычному обходу без арифметики.

Для каждого узла поддерживается полуинтервал [lo, hi) по каждому признаку:
влево уходят строки со значением < порога, остальные вправо. Разбиения,
исход которых на пути уже предрешён, схлопываются в достижимого потомка.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .cart import LEAF, RegressionTree
from .exceptions import ConfigurationError, MergeBudgetExceeded

DEFAULT_MAX_LEAVES = 10 ** 6

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MergedTree:
    tree: RegressionTree
    source_indices: tuple[int, ...]
    source_weights: np.ndarray

    @property
    def leaf_count(self) -> int:
        return self.tree.leaf_count


class _TreeBuilder:
    """Накопитель узлов в прямом порядке обхода, как у fit_tree."""

    def __init__(self, max_leaves: int):
        self.max_leaves = max_leaves
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        self.leaves = 0

    def add_leaf(self, value: float) -> int:
        self.leaves += 1
        if self.leaves > self.max_leaves:
            raise MergeBudgetExceeded(f"Объединённое дерево превышает бюджет в {self.max_leaves} листьев")
        return self._add(LEAF, 0.0, value)

    def add_split(self, feature: int, threshold: float, value: float) -> int:
        return self._add(feature, threshold, value)

    def _add(self, feature, threshold, value) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def link(self, node: int, left: int, right: int):
        self.left[node] = left
        self.right[node] = right

    def build(self) -> RegressionTree:
        n = len(self.feature)
        return RegressionTree(feature=self.feature, threshold=self.threshold, left=self.left, right=self.right,
                              value=self.value, count=np.zeros(n, dtype=np.int64))


def _route(box: dict, feature: int, threshold: float) -> str | None:
    lo, hi = box.get(feature, (-np.inf, np.inf))
    if hi <= threshold:
        return 'left'
    if lo >= threshold:
        return 'right'
    return None


def _narrow(box: dict, feature: int, threshold: float) -> tuple[dict, dict]:
    lo, hi = box.get(feature, (-np.inf, np.inf))
    left_box, right_box = dict(box), dict(box)
    left_box[feature] = (lo, min(hi, threshold))
    right_box[feature] = (max(lo, threshold), hi)
    return left_box, right_box


def merge_trees(trees, weights, source_indices=None, max_leaves: int = DEFAULT_MAX_LEAVES,
                prune_infeasible: bool = True, coalesce: bool = False) -> MergedTree:
    """
    Строит одно дерево, предсказание которого равно Σ wᵢ tᵢ(x).

    Значение листа считается в порядке свёртки: ((0 + w₀v₀) + w₁v₁) + ...
    ``prune_infeasible=False`` оставляет недостижимые ветви (для проверки
    ``infeasible_branch_prune``); ``coalesce`` включает склейку равных листьев.
    """
    trees = list(trees)
    weights = np.asarray(weights, dtype=np.float64)
    if not trees:
        raise ConfigurationError("Для слияния нужно хотя бы одно дерево")
    if weights.shape != (len(trees),):
        raise ConfigurationError(f"Деревьев {len(trees)}, а весов {weights.size}")
    if not np.all(np.isfinite(weights)):
        raise ConfigurationError("Веса слияния должны быть конечными")
    indices = tuple(range(len(trees))) if source_indices is None else tuple(int(i) for i in source_indices)
    if len(indices) != len(trees):
        raise ConfigurationError("Число индексов источников не совпадает с числом деревьев")

    builder = _TreeBuilder(max_leaves)

    def graft(k: int, node: int, accumulated: float, box: dict) -> int:
        tree = trees[k]
        if tree.feature[node] == LEAF:
            value = accumulated + weights[k] * float(tree.value[node])
            if k + 1 < len(trees):
                return graft(k + 1, 0, value, box)
            return builder.add_leaf(value)

        feature, threshold = int(tree.feature[node]), float(tree.threshold[node])
        if prune_infeasible:
            side = _route(box, feature, threshold)
            if side == 'left':
                return graft(k, int(tree.left[node]), accumulated, box)
            if side == 'right':
                return graft(k, int(tree.right[node]), accumulated, box)
        split = builder.add_split(feature, threshold, accumulated)
        left_box, right_box = _narrow(box, feature, threshold)
        left = graft(k, int(tree.left[node]), accumulated, left_box)
        right = graft(k, int(tree.right[node]), accumulated, right_box)
        builder.link(split, left, right)
        return split

    graft(0, 0, 0.0, {})
    merged = builder.build()
    if coalesce:
        merged = coalesce_equal_leaves(merged)
    logger.info(f"Слияние {len(trees)} деревьев: {merged.n_nodes} узлов, {merged.leaf_count} листьев, "
                f"глубина {merged.depth}")
    return MergedTree(tree=merged, source_indices=indices, source_weights=weights.copy())


def merge_selection(forest, selected, weights, **kwargs) -> MergedTree:
    """Сливает выбранные деревья леса в порядке возрастания их индексов."""
    order = np.argsort(np.asarray(selected), kind='stable')
    selected = [int(selected[i]) for i in order]
    weights = np.asarray(weights, dtype=np.float64)[order]
    if any(not 0 <= i < forest.size for i in selected):
        raise ConfigurationError(f"Индексы деревьев вне диапазона 0..{forest.size - 1}")
    return merge_trees([forest.trees[i] for i in selected], weights, source_indices=selected, **kwargs)


def infeasible_branch_prune(tree: RegressionTree) -> RegressionTree:
    """Схлопывает разбиения, исход которых задан условиями предков; предсказания не меняются."""
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def walk(node: int, box: dict) -> int:
        if tree.feature[node] != LEAF:
            split_feature, split_threshold = int(tree.feature[node]), float(tree.threshold[node])
            side = _route(box, split_feature, split_threshold)
            if side == 'left':
                return walk(int(tree.left[node]), box)
            if side == 'right':
                return walk(int(tree.right[node]), box)
        new = len(feature)
        feature.append(int(tree.feature[node]))
        threshold.append(float(tree.threshold[node]))
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(tree.value[node]))
        count.append(int(tree.count[node]))
        if tree.feature[node] != LEAF:
            left_box, right_box = _narrow(box, feature[new], threshold[new])
            left[new] = walk(int(tree.left[node]), left_box)
            right[new] = walk(int(tree.right[node]), right_box)
        return new

    walk(0, {})
    pruned = RegressionTree(feature=feature, threshold=threshold, left=left, right=right, value=value,
                            count=count, seed=tree.seed)
    if pruned.n_nodes < tree.n_nodes:
        logger.debug(f"Удалено недостижимых узлов: {tree.n_nodes - pruned.n_nodes}")
    return pruned


def coalesce_equal_leaves(tree: RegressionTree) -> RegressionTree:
    """Заменяет разбиение листом, если оба его потомка являются листьями с равными значениями."""
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    known = {}

    def collapsed(node: int) -> float | None:
        if node not in known:
            if tree.feature[node] == LEAF:
                known[node] = float(tree.value[node])
            else:
                left_value = collapsed(int(tree.left[node]))
                right_value = collapsed(int(tree.right[node]))
                same = left_value is not None and left_value == right_value
                known[node] = left_value if same else None
        return known[node]

    def walk(node: int) -> int:
        new = len(feature)
        merged_value = collapsed(node)
        is_leaf = merged_value is not None
        feature.append(LEAF if is_leaf else int(tree.feature[node]))
        threshold.append(0.0 if is_leaf else float(tree.threshold[node]))
        left.append(LEAF)
        right.append(LEAF)
        value.append(merged_value if is_leaf else float(tree.value[node]))
        count.append(int(tree.count[node]))
        if not is_leaf:
            left[new] = walk(int(tree.left[node]))
            right[new] = walk(int(tree.right[node]))
        return new

    walk(0)
    return RegressionTree(feature=feature, threshold=threshold, left=left, right=right, value=value,
                          count=count, seed=tree.seed)


def tree_depth(tree: RegressionTree) -> int:
    return tree.depth


def leaf_count(tree: RegressionTree) -> int:
    return tree.leaf_count
