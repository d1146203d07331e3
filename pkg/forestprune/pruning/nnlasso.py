"""
Неотрицательный Lasso без свободного члена:

    min_{β ≥ 0} ||y − Xβ||² + λ Σ βⱼ

Решается циклическим покоординатным спуском в ковариационной форме
(обновления через матрицу Грама XᵀX), путь по λ строится с тёплым стартом,
λ выбирается K-кратной кросс-валидацией.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from forests.exceptions import ConfigurationError

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10000
DEFAULT_GRID_SIZE = 100
DEFAULT_MIN_RATIO = 1e-3
DEFAULT_FOLDS = 10
KKT_FACTOR = 10

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NnLassoFit:
    coefficients: np.ndarray
    lambda_: float
    objective: float
    iterations: int
    converged: bool
    objective_history: tuple[float, ...] = ()
    objective_increased: bool = False

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients > 0)


@dataclass(frozen=True, eq=False)
class LambdaPath:
    lambdas: np.ndarray
    fits: tuple[NnLassoFit, ...]
    cv_mean: np.ndarray | None = None
    cv_se: np.ndarray | None = None
    selected_index: int | None = None
    rule: str = 'min'
    fold_errors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.lambdas) != len(self.fits):
            raise ConfigurationError("Число значений λ не совпадает с числом решений")
        if np.any(np.diff(self.lambdas) >= 0):
            raise ConfigurationError("Сетка λ должна строго убывать")

    @property
    def selected_lambda(self) -> float | None:
        return None if self.selected_index is None else float(self.lambdas[self.selected_index])

    def to_frame(self) -> pd.DataFrame:
        n = len(self.lambdas)
        return pd.DataFrame({
            'lambda': self.lambdas,
            'cv_mean': self.cv_mean if self.cv_mean is not None else np.full(n, np.nan),
            'cv_se': self.cv_se if self.cv_se is not None else np.full(n, np.nan),
            'nonzero_count': [fit.nonzero_count for fit in self.fits],
        })

    def to_csv(self, path: str | Path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')


def _prepare(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ConfigurationError(f"Несогласованные размеры: X {X.shape}, y {y.shape}")
    if X.shape[0] < 1:
        raise ConfigurationError("Нужна хотя бы одна строка")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ConfigurationError("X и y должны быть конечными")
    return X, y


def _active_mask(active, width: int) -> np.ndarray:
    if active is None:
        return np.ones(width, dtype=bool)
    mask = np.zeros(width, dtype=bool)
    mask[np.asarray(active)] = True
    return mask


def _column_scale(X: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.square(X).mean(axis=0))
    scale[scale == 0] = 1.0
    return scale


def objective(X, y, coefficients, lam) -> float:
    residual = y - X @ coefficients
    return float(residual @ residual + lam * np.sum(coefficients))


def _coordinate_descent(gram, xty, yty, lam, beta, active, tol, max_iter):
    """
    Покоординатный спуск по матрице Грама.

    Возвращает β, число проходов, флаг сходимости, историю целевой функции
    и признак того, что она хотя бы раз выросла между проходами.
    """
    diag = np.diag(gram)
    gradient = xty - gram @ beta
    coordinates = [j for j in np.flatnonzero(active) if diag[j] > 0]
    history, increased = [], False
    previous = yty - 2 * beta @ xty + beta @ gram @ beta + lam * beta.sum()
    for sweep in range(1, max_iter + 1):
        max_change = 0.0
        for j in coordinates:
            old = beta[j]
            new = max(0.0, (gradient[j] + diag[j] * old - lam / 2) / diag[j])
            if new != old:
                beta[j] = new
                gradient -= gram[:, j] * (new - old)
                max_change = max(max_change, abs(new - old))
        current = yty - 2 * beta @ xty + beta @ gram @ beta + lam * beta.sum()
        if current > previous + 1e-10 * max(1.0, abs(previous)):
            logger.warning(f"Целевая функция выросла на проходе {sweep}: {previous:.12g} -> {current:.12g}")
            increased = True
        history.append(float(current))
        previous = current
        if max_change < tol:
            return beta, sweep, True, history, increased
    return beta, max_iter, False, history, increased


def fit_nnlasso(X, y, lam: float, init=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                active=None, standardize: bool = False) -> NnLassoFit:
    """
    Решает задачу для одного λ.

    Обновление координаты: βⱼ ← max(0, (xⱼᵀr₋ⱼ − λ/2) / xⱼᵀxⱼ). Координаты с нулевой
    нормой столбца и вне ``active`` остаются нулевыми. При ``standardize``
    столбцы делятся на их среднеквадратичное значение, штраф действует в
    масштабированных координатах, коэффициенты возвращаются в исходном масштабе.
    """
    X, y = _prepare(X, y)
    if lam < 0 or not np.isfinite(lam):
        raise ConfigurationError(f"λ должна быть неотрицательной: {lam}")
    width = X.shape[1]
    mask = _active_mask(active, width)
    scale = _column_scale(X) if standardize else np.ones(width)
    design = X / scale

    beta = np.zeros(width) if init is None else np.asarray(init, dtype=np.float64).copy() * scale
    if beta.shape != (width,) or np.any(beta < 0):
        raise ConfigurationError("Начальное приближение должно быть неотрицательным вектором длины B")
    beta[~mask] = 0.0

    gram = design.T @ design
    beta, iterations, converged, history, increased = _coordinate_descent(
        gram, design.T @ y, float(y @ y), lam, beta, mask, tol, max_iter
    )
    if not converged:
        logger.warning(f"Покоординатный спуск не сошёлся за {max_iter} проходов при λ={lam:.6g}")
    coefficients = beta / scale
    return NnLassoFit(coefficients=coefficients, lambda_=float(lam),
                      objective=objective(design, y, beta, lam), iterations=iterations,
                      converged=converged, objective_history=tuple(history),
                      objective_increased=increased)


def lambda_grid(X, y, count: int = DEFAULT_GRID_SIZE, min_ratio: float = DEFAULT_MIN_RATIO, active=None,
                standardize: bool = False) -> np.ndarray:
    """
    Логарифмическая сетка от λ_max = 2·max(xⱼᵀy)⁺ до min_ratio·λ_max.

    При λ_max все коэффициенты нулевые. Если все xⱼᵀy ≤ 0, решение нулевое
    при любом λ и λ_max полагается равной 1.
    """
    X, y = _prepare(X, y)
    if count < 1:
        raise ConfigurationError(f"Длина сетки должна быть положительной: {count}")
    if not 0 < min_ratio <= 1:
        raise ConfigurationError(f"min_ratio должен лежать в (0, 1]: {min_ratio}")
    design = X / _column_scale(X) if standardize else X
    correlations = (design.T @ y)[_active_mask(active, X.shape[1])]
    lambda_max = 2 * float(correlations.max()) if len(correlations) else 0.0
    if lambda_max <= 0:
        logger.warning("Все xⱼᵀy ≤ 0: решение нулевое при любом λ, λ_max принята равной 1")
        lambda_max = 1.0
    if min_ratio == 1 or count == 1:
        return np.array([lambda_max])
    return np.geomspace(lambda_max, min_ratio * lambda_max, count)


def fit_path(X, y, lambdas, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, active=None,
             standardize: bool = False) -> tuple[NnLassoFit, ...]:
    fits, previous = [], None
    for lam in lambdas:
        fit = fit_nnlasso(X, y, lam, init=previous, tol=tol, max_iter=max_iter, active=active,
                          standardize=standardize)
        fits.append(fit)
        previous = fit.coefficients
    return tuple(fits)


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    permutation = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[permutation] = np.arange(n) % folds
    return assignment


def _fold_errors(X, y, train, held_out, lambdas, tol, max_iter, active, standardize) -> np.ndarray:
    fits = fit_path(X[train], y[train], lambdas, tol, max_iter, active, standardize)
    return np.array([np.mean(np.square(y[held_out] - X[held_out] @ fit.coefficients)) for fit in fits])


def cv_select_lambda(X, y, folds: int = DEFAULT_FOLDS, seed: int = 123, rule: str = 'min', active=None,
                     count: int = DEFAULT_GRID_SIZE, min_ratio: float = DEFAULT_MIN_RATIO,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, standardize: bool = False,
                     n_jobs: int = 1) -> tuple[float, LambdaPath]:
    """
    Выбирает λ по средней ошибке на отложенных фолдах.

    ``rule='min'`` берёт первый минимум, ``rule='1se'`` берёт наибольшее λ, чья
    ошибка не превышает минимум плюс его стандартную ошибку.
    """
    X, y = _prepare(X, y)
    n = X.shape[0]
    if rule not in ('min', '1se'):
        raise ConfigurationError(f"Неизвестное правило выбора λ: {rule}")
    if not 2 <= folds <= n:
        raise ConfigurationError(f"Нужно 2 ≤ folds ≤ n, получено folds={folds}, n={n}")
    assignment = fold_assignment(n, folds, seed)
    if np.any(np.bincount(assignment, minlength=folds) == 0):
        raise ConfigurationError("Один из фолдов не содержит строк")

    lambdas = lambda_grid(X, y, count, min_ratio, active, standardize)
    errors = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_fold_errors)(X, y, assignment != k, assignment == k, lambdas, tol, max_iter, active, standardize)
        for k in range(folds)
    )
    errors = np.vstack(errors)
    cv_mean = errors.mean(axis=0)
    cv_se = errors.std(axis=0, ddof=1) / np.sqrt(folds)

    best = int(np.argmin(cv_mean))
    selected = best
    if rule == '1se':
        selected = int(np.flatnonzero(cv_mean <= cv_mean[best] + cv_se[best])[0])

    fits = fit_path(X, y, lambdas, tol, max_iter, active, standardize)
    path = LambdaPath(lambdas=lambdas, fits=fits, cv_mean=cv_mean, cv_se=cv_se, selected_index=selected,
                      rule=rule, fold_errors=errors)
    logger.debug(f"Кросс-валидация: выбрана λ={lambdas[selected]:.6g} ({rule}), "
                 f"ненулевых коэффициентов {fits[selected].nonzero_count}")
    return float(lambdas[selected]), path


def kkt_violations(X, y, coefficients, lam: float, tol: float = DEFAULT_TOL, active=None) -> np.ndarray:
    """
    Индексы координат, нарушающих условия оптимальности.

    Для βⱼ > 0 требуется |2xⱼᵀ(Xβ − y) + λ| ≤ 10·tol·sⱼ, для βⱼ = 0 требуется
    2xⱼᵀ(Xβ − y) + λ ≥ −10·tol·sⱼ, где sⱼ = 2Σₖ|xⱼᵀxₖ|.
    """
    X, y = _prepare(X, y)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    gram = X.T @ X
    gradient = 2 * X.T @ (X @ coefficients - y) + lam
    slack = KKT_FACTOR * tol * np.maximum(2 * np.abs(gram).sum(axis=1), 1.0)
    positive = coefficients > 0
    bad = np.where(positive, np.abs(gradient) > slack, gradient < -slack)
    bad &= _active_mask(active, X.shape[1])
    return np.flatnonzero(bad)
