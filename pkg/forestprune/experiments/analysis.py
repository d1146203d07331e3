"""
Статистика для сравнения методов и визуализации леса: MSPE, знаковый
ранговый критерий Уилкоксона, корреляционное расстояние между деревьями и
классическое многомерное шкалирование.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from cachetools import LRUCache, cached
from scipy import linalg, stats

from forests.exceptions import ConfigurationError
from forests.forest import PredictionMatrix

EXACT_LIMIT = 12
SYMMETRY_TOLERANCE = 1e-9

logger = logging.getLogger(__name__)


def mspe(predictions, truth) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if predictions.shape != truth.shape:
        raise ConfigurationError(f"Длины не совпадают: {predictions.size} и {truth.size}")
    if predictions.size == 0:
        raise ConfigurationError("MSPE не определена на пустой выборке")
    return float(np.mean(np.square(predictions - truth)))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    exact: bool
    degenerate: bool = False


@cached(cache=LRUCache(maxsize=512))
def _null_distribution(doubled_ranks: tuple[int, ...]) -> np.ndarray:
    """
    Число знаковых расстановок для каждого значения 2·W+.

    Перебор всех 2ⁿ расстановок сведён к свёртке: каждый ранг либо входит в
    сумму, либо нет.
    """
    counts = np.zeros(sum(doubled_ranks) + 1, dtype=np.float64)
    counts[0] = 1.0
    for rank in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[rank:] = counts[:len(counts) - rank]
        counts = counts + shifted
    return counts


def _exact_p_value(doubled_ranks: np.ndarray, doubled_w_plus: int) -> float:
    counts = _null_distribution(tuple(int(r) for r in doubled_ranks))
    total = counts.sum()
    lower = counts[:doubled_w_plus + 1].sum() / total
    upper = counts[doubled_w_plus:].sum() / total
    return min(1.0, 2 * min(lower, upper))


def _normal_p_value(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4
    _, ties = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24 - np.sum(ties ** 3 - ties) / 48
    if variance <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(variance)
    return float(min(1.0, 2 * stats.norm.sf(z)))


def wilcoxon_signed_rank(a, b, method: str = 'auto') -> WilcoxonResult:
    """
    Двусторонний знаковый ранговый критерий для парных выборок.

    Нулевые разности отбрасываются, равные модули получают средние ранги.
    При n ≤ 12 распределение статистики считается точно, иначе используется
    нормальное приближение с поправками на непрерывность и связки.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ConfigurationError(f"Длины выборок не совпадают: {a.size} и {b.size}")
    if method not in ('auto', 'exact', 'approx'):
        raise ConfigurationError(f"Неизвестный способ расчёта: {method}")
    differences = a - b
    differences = differences[differences != 0]
    n = len(differences)
    if n == 0:
        logger.debug("Все разности нулевые, p = 1")
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_effective=0, exact=True, degenerate=True)

    ranks = stats.rankdata(np.abs(differences), method='average')
    w_plus = float(ranks[differences > 0].sum())
    w_minus = float(ranks[differences < 0].sum())
    exact = method == 'exact' or (method == 'auto' and n <= EXACT_LIMIT)
    if exact:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p_value = _exact_p_value(doubled, int(round(2 * w_plus)))
    else:
        p_value = _normal_p_value(ranks, w_plus)
    return WilcoxonResult(statistic=min(w_plus, w_minus), p_value=p_value, n_effective=n, exact=exact)


def _matrix_values(P) -> np.ndarray:
    return P.values if isinstance(P, PredictionMatrix) else np.asarray(P, dtype=np.float64)


def constant_columns(P) -> np.ndarray:
    values = _matrix_values(P)
    return np.flatnonzero(np.ptp(values, axis=0) == 0)


def correlation_distance(P) -> np.ndarray:
    """
    Dᵢⱼ = √((1 − cᵢⱼ)/2), где cᵢⱼ есть корреляция Пирсона предсказаний деревьев i и j.

    Для столбцов с нулевой дисперсией корреляция полагается равной 0.
    """
    values = _matrix_values(P)
    centered = values - values.mean(axis=0)
    norms = np.sqrt(np.square(centered).sum(axis=0))
    constant = norms == 0
    if constant.any():
        logger.warning(f"Постоянные предсказания у деревьев {np.flatnonzero(constant).tolist()}: корреляция принята 0")
    safe = np.where(constant, 1.0, norms)
    correlation = (centered.T @ centered) / np.outer(safe, safe)
    correlation[constant, :] = 0.0
    correlation[:, constant] = 0.0
    correlation = np.clip(correlation, -1.0, 1.0)
    distance = np.sqrt(np.clip((1 - correlation) / 2, 0.0, 1.0))
    distance = (distance + distance.T) / 2
    np.fill_diagonal(distance, 0.0)
    return distance


@dataclass(frozen=True, eq=False)
class MdsLayout:
    coordinates: np.ndarray
    eigenvalues: np.ndarray
    stress: float
    clamped: bool = False

    def pairwise_distances(self) -> np.ndarray:
        diff = self.coordinates[:, np.newaxis, :] - self.coordinates[np.newaxis, :, :]
        return np.sqrt(np.square(diff).sum(axis=2))

    def to_frame(self, selected=None, individual_mspe=None) -> pd.DataFrame:
        B = self.coordinates.shape[0]
        flags = np.zeros(B, dtype=int)
        if selected is not None:
            flags[list(selected)] = 1
        return pd.DataFrame({
            'tree_index': np.arange(B),
            'x': self.coordinates[:, 0],
            'y': self.coordinates[:, 1] if self.coordinates.shape[1] > 1 else np.zeros(B),
            'selected_flag': flags,
            'individual_mspe': individual_mspe if individual_mspe is not None else np.full(B, np.nan),
        })

    def to_csv(self, path: str | Path, selected=None, individual_mspe=None):
        self.to_frame(selected, individual_mspe).to_csv(path, index=False, float_format='%.17g')


def classical_mds(D, dims: int = 2) -> MdsLayout:
    """
    Классическое шкалирование Торгерсона: B* = −½·J·D²·J; координатами служат
    собственные векторы B*, умноженные на √λ. Знак каждого вектора выбирается
    так, чтобы его наибольшая по модулю компонента была положительной.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ConfigurationError(f"Матрица расстояний должна быть квадратной, получено {D.shape}")
    if dims < 1:
        raise ConfigurationError(f"Размерность должна быть положительной: {dims}")
    scale = max(float(np.abs(D).max()), 1.0) if D.size else 1.0
    if not np.allclose(D, D.T, rtol=0.0, atol=SYMMETRY_TOLERANCE * scale):
        raise ConfigurationError("Матрица расстояний несимметрична")
    if np.any(D < 0) or np.any(np.abs(np.diag(D)) > SYMMETRY_TOLERANCE * scale):
        raise ConfigurationError("Расстояния должны быть неотрицательными, диагональ нулевой")

    B = D.shape[0]
    J = np.eye(B) - np.full((B, B), 1.0 / B)
    centered = -0.5 * J @ np.square(D) @ J
    centered = (centered + centered.T) / 2
    eigenvalues, eigenvectors = linalg.eigh(centered)
    order = np.argsort(eigenvalues, kind='stable')[::-1][:dims]
    top_values, top_vectors = eigenvalues[order], eigenvectors[:, order]

    clamped = bool(np.any(top_values < 0))
    if clamped:
        logger.warning(f"Отрицательные собственные значения {top_values[top_values < 0].tolist()} заменены нулём")
    top_values = np.maximum(top_values, 0.0)
    for k in range(top_vectors.shape[1]):
        pivot = int(np.argmax(np.abs(top_vectors[:, k])))
        if top_vectors[pivot, k] < 0:
            top_vectors[:, k] = -top_vectors[:, k]

    coordinates = np.zeros((B, dims))
    coordinates[:, :top_vectors.shape[1]] = top_vectors * np.sqrt(top_values)
    coordinates -= coordinates.mean(axis=0)
    values = np.zeros(dims)
    values[:len(top_values)] = top_values

    layout = MdsLayout(coordinates=coordinates, eigenvalues=values, stress=0.0, clamped=clamped)
    recovered = layout.pairwise_distances()
    denominator = float(np.square(D).sum())
    stress = math.sqrt(float(np.square(D - recovered).sum()) / denominator) if denominator > 0 else 0.0
    return MdsLayout(coordinates=coordinates, eigenvalues=values, stress=stress, clamped=clamped)


@dataclass(frozen=True)
class ComparisonReport:
    method_a: str
    method_b: str
    mspe_delta_pct: float
    p_value: float
    freq_delta_leq_0: float
    trees_delta_pct: float
    trees_p_value: float
    n_pairs: int = 0
    alpha: float | None = None
    significant: bool | None = None

    def __post_init__(self):
        for name in ('p_value', 'trees_p_value', 'freq_delta_leq_0'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigurationError(f"{name} должен лежать в [0, 1]: {value}")
