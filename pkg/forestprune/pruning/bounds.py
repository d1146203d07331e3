"""
Обобщающие оценки для прореженных лесов и их проверка на симуляциях.

Все калькуляторы возвращают «запас», то есть слагаемое, которое добавляется к
эмпирическому риску на валидации, чтобы с вероятностью 1 − δ получить
верхнюю оценку истинного риска.
"""
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import gammaln

from forests.cart import CartParams
from forests.data import ScenarioConfig, generate_scenario, replication_seeds, split
from forests.exceptions import ConfigurationError
from forests.forest import DEFAULT_SUBSPACE_RATE, fit_forest, prediction_matrix
from .methods import DEFAULT_BSF_K, PruneMethod, prune_bsf, prune_lasso, prune_sbs_prime, prune_sfs

BOUND_SPLIT = (0.3, 0.35, 0.35)
DEFAULT_DELTA = 0.05
BOUNDED_METHODS = (PruneMethod.LASSO, PruneMethod.BSF, PruneMethod.SFS, PruneMethod.SBS_PRIME)

logger = logging.getLogger(__name__)


def _check_delta(delta: float):
    if not 0 < delta < 1:
        raise ConfigurationError(f"δ должна лежать в (0, 1): {delta}")


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ConfigurationError(f"{name} должен быть положительным: {value}")


@dataclass(frozen=True)
class BoundInputs:
    n: int
    B: int
    delta: float = DEFAULT_DELTA
    M: float = 1.0
    r: float = 1.0
    Lambda: float = 1.0
    K: int = DEFAULT_BSF_K
    tau: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        _check_delta(self.delta)
        _check_positive(n=self.n, B=self.B, M=self.M, r=self.r, K=self.K, tau=self.tau)
        # нулевые Λ и σ допустимы: соответствующее слагаемое исчезает
        if self.Lambda < 0 or self.sigma < 0:
            raise ConfigurationError(f"Λ и σ не могут быть отрицательными: Λ={self.Lambda}, σ={self.sigma}")


def l1_rademacher_complexity(r: float, Lambda: float, p: int, n: int) -> float:
    """Сложность Радемахера линейных комбинаций с ||β||₁ ≤ Λ над p признаками, |признак| ≤ r."""
    _check_positive(r=r, p=p, n=n)
    if Lambda < 0:
        raise ConfigurationError(f"Λ не может быть отрицательной: {Lambda}")
    return r * Lambda * math.sqrt(2 * math.log(2 * p) / n)


def rademacher_bound(M: float, n: int, delta: float, rademacher: float) -> float:
    """Запас M²√(log(1/δ)/2n) + 4M·R для квадратичной потери, ограниченной M²."""
    _check_delta(delta)
    _check_positive(M=M, n=n)
    if rademacher < 0:
        raise ConfigurationError(f"Сложность Радемахера не может быть отрицательной: {rademacher}")
    return M * M * math.sqrt(math.log(1 / delta) / (2 * n)) + 4 * M * rademacher


def lasso_generalization_bound(inputs: BoundInputs) -> float:
    """M²√(log(1/δ)/2n) + 4rΛM√(2log(2B)/n)."""
    complexity = l1_rademacher_complexity(inputs.r, inputs.Lambda, inputs.B, inputs.n)
    return rademacher_bound(inputs.M, inputs.n, inputs.delta, complexity)


def log_factorial(k: int) -> float:
    return float(gammaln(k + 1))


def bsf_bound(inputs: BoundInputs) -> float:
    """M²√((K log B + log(1/(δ(K−1)!)))/2n) при K ≤ B/2."""
    K, B = inputs.K, inputs.B
    if K > B / 2:
        raise ConfigurationError(f"Оценка BSF требует K ≤ B/2, получено K={K}, B={B}")
    complexity = K * math.log(B) - math.log(inputs.delta) - log_factorial(K - 1)
    return inputs.M ** 2 * math.sqrt(complexity / (2 * inputs.n))


def sfs_bound(inputs: BoundInputs) -> float:
    """M²√((B/2·log B + log(1/(δ(B/2−1)!)) + log 2)/2n) для чётного B."""
    B = inputs.B
    if B % 2 or B < 2:
        raise ConfigurationError(f"Оценка SFS выведена для чётного B ≥ 2, получено B={B}; "
                                 f"округлите B вверх до чётного")
    half = B // 2
    complexity = half * math.log(B) - math.log(inputs.delta) - log_factorial(half - 1) + math.log(2)
    return inputs.M ** 2 * math.sqrt(complexity / (2 * inputs.n))


def finite_class_bound(cardinality: int, n: int, delta: float, M: float) -> float:
    """M√((|H| + log(1/δ))/2n); мощность класса входит линейно."""
    _check_delta(delta)
    _check_positive(cardinality=cardinality, n=n, M=M)
    return M * math.sqrt((cardinality + math.log(1 / delta)) / (2 * n))


def lasso_risk_bound(tau: float, M: float, sigma: float, B: int, n: int) -> float:
    """2τMσ√(2log(2B)/n) + 8τ²M²√(2log(2B²)/n)."""
    _check_positive(tau=tau, M=M, B=B, n=n)
    if sigma < 0:
        raise ConfigurationError(f"σ не может быть отрицательной: {sigma}")
    return (2 * tau * M * sigma * math.sqrt(2 * math.log(2 * B) / n)
            + 8 * tau * tau * M * M * math.sqrt(2 * math.log(2 * B * B) / n))


def slack_for(method: PruneMethod, inputs: BoundInputs) -> float:
    if method in (PruneMethod.LASSO, PruneMethod.LASSO_K):
        return lasso_generalization_bound(inputs)
    if method is PruneMethod.BSF:
        return bsf_bound(inputs)
    # SBS' выбирает из того же класса равновзвешенных подлесов, что и SFS
    even = inputs.B + inputs.B % 2
    return sfs_bound(replace(inputs, B=even))


@dataclass(frozen=True)
class BoundReport:
    method: PruneMethod
    rep: int
    bound_value: float
    empirical_risk: float
    true_risk_estimate: float
    breach: bool
    utilization: float
    risk_delta: float
    bound_fraction: float
    range_source: str = 'estimated'

    def to_dict(self) -> dict:
        data = asdict(self)
        data['method'] = self.method.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'BoundReport':
        return cls(**{**data, 'method': PruneMethod.parse(data['method'])})


def bound_report(method: PruneMethod, rep: int, slack: float, empirical: float, true_risk: float,
                 range_source: str = 'estimated') -> BoundReport:
    """
    Разрыв, отнесённый к запасу, отсекается снизу нулём; нарушением считается тестовый риск выше оценки.

    При нулевом эмпирическом риске относительный прирост не определён и равен NaN.
    """
    gap = true_risk - empirical
    return BoundReport(
        method=method, rep=rep, bound_value=slack, empirical_risk=empirical, true_risk_estimate=true_risk,
        breach=bool(true_risk > empirical + slack), utilization=max(0.0, gap / slack),
        risk_delta=gap / empirical if empirical > 0 else math.nan,
        bound_fraction=true_risk / (empirical + slack), range_source=range_source,
    )


def _parse_methods(methods) -> tuple[PruneMethod, ...]:
    parsed = tuple(dict.fromkeys(PruneMethod.parse(method) for method in methods))
    if not parsed:
        raise ConfigurationError("Не задано ни одного метода")
    invalid = [method.value for method in parsed if method not in BOUNDED_METHODS]
    if invalid:
        raise ConfigurationError(f"Для методов {invalid} оценка не определена, допустимы: "
                                 f"{[method.value for method in BOUNDED_METHODS]}")
    return parsed


def bound_replication(scenario: ScenarioConfig, methods, rep: int, ratios=BOUND_SPLIT, K: int = DEFAULT_BSF_K,
                      delta: float = DEFAULT_DELTA, M: float | None = None, r: float | None = None,
                      params: CartParams | None = None, subspace_rate: float = DEFAULT_SUBSPACE_RATE,
                      folds: int = 10) -> list[BoundReport]:
    """Один повтор: новые данные, лес на обучающей части, прореживание на валидации, риск на тесте."""
    methods = _parse_methods(methods)
    seeds = replication_seeds(scenario.seed, rep)
    dataset = generate_scenario(replace(scenario, seed=seeds.data))
    parts = split(dataset, ratios, seed=seeds.split)
    B = scenario.forest_size
    forest = fit_forest(dataset, parts.train, B, params, subspace_rate, seed=seeds.forest)
    validation = prediction_matrix(forest, dataset, parts.validation)
    test = prediction_matrix(forest, dataset, parts.test)
    y_val, y_test = dataset.response[parts.validation], dataset.response[parts.test]

    range_source = 'user' if M is not None else 'estimated'
    low, high = float(dataset.response.min()), float(dataset.response.max())
    M = M if M is not None else high - low
    r = r if r is not None else max(abs(low), abs(high))
    n = len(parts.validation)

    reports = []
    for method in methods:
        if method is PruneMethod.LASSO:
            result = prune_lasso(validation, y_val, seed=seeds.cv, folds=folds)
            inputs = BoundInputs(n=n, B=B, delta=delta, M=M, r=r, Lambda=float(result.weights.sum()))
        elif method is PruneMethod.BSF:
            result = prune_bsf(validation, y_val, K)
            inputs = BoundInputs(n=n, B=B, delta=delta, M=M, r=r, K=K)
        elif method is PruneMethod.SFS:
            result = prune_sfs(validation, y_val)
            inputs = BoundInputs(n=n, B=B, delta=delta, M=M, r=r)
        else:
            result = prune_sbs_prime(validation, y_val)
            inputs = BoundInputs(n=n, B=B, delta=delta, M=M, r=r)
        true_risk = float(np.mean(np.square(result.predict(test) - y_test)))
        reports.append(bound_report(method, rep, slack_for(method, inputs), result.validation_mspe, true_risk,
                                    range_source))
    logger.debug(f"Повтор {rep}: " + ', '.join(f'{report.method.value} use={report.utilization:.4f}'
                                              for report in reports))
    return reports


def simulate_bounds(scenario: ScenarioConfig, methods, reps: int, ratios=BOUND_SPLIT, n_jobs: int = 1,
                    **options) -> list[BoundReport]:
    """Повторы выполняются параллельно, отчёты собираются в порядке (повтор, метод)."""
    if reps < 1:
        raise ConfigurationError(f"Число повторов должно быть положительным: {reps}")
    methods = _parse_methods(methods)
    logger.info(f"Проверка оценок: n={scenario.n}, B={scenario.forest_size}, повторов {reps}, "
                f"методы {[method.value for method in methods]}")
    batches = Parallel(n_jobs=n_jobs)(
        delayed(bound_replication)(scenario, methods, rep, ratios, **options) for rep in range(reps)
    )
    reports = [report for batch in batches for report in batch]
    breaches = sum(report.breach for report in reports)
    if breaches:
        logger.warning(f"Оценка нарушена в {breaches} случаях из {len(reports)}")
    return reports


def _mean_sd(values: list[float]) -> tuple[float, float | None]:
    # NaN (неопределённые значения) в среднее не входят
    array = np.asarray(values, dtype=np.float64)
    array = array[~np.isnan(array)]
    if len(array) == 0:
        return math.nan, None
    return float(array.mean()), (float(array.std(ddof=1)) if len(array) > 1 else None)


def summarize_bounds(reports: list[BoundReport]) -> pd.DataFrame:
    """Таблица в формате: метод, % нарушений, использование % ± sd, Δ риска % ± sd."""
    rows = []
    methods = list(dict.fromkeys(report.method for report in reports))
    for method in methods:
        own = [report for report in reports if report.method is method]
        use_mean, use_sd = _mean_sd([100 * report.utilization for report in own])
        risk_mean, risk_sd = _mean_sd([100 * report.risk_delta for report in own])
        fraction_mean, _ = _mean_sd([report.bound_fraction for report in own])
        rows.append({
            'method': method.label(),
            'reps': len(own),
            'breach_pct': 100 * sum(report.breach for report in own) / len(own),
            'use_pct_mean': use_mean,
            'use_pct_sd': use_sd,
            'risk_delta_pct_mean': risk_mean,
            'risk_delta_pct_sd': risk_sd,
            'bound_fraction_mean': fraction_mean,
        })
    return pd.DataFrame(rows)


def write_bound_reports(reports: list[BoundReport], output_dir: str | Path) -> tuple[Path, Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    detail_path, summary_path = output_dir / 'bound_reports.csv', output_dir / 'bound_summary.csv'
    pd.DataFrame([report.to_dict() for report in reports]).to_csv(detail_path, index=False, float_format='%.17g')
    summarize_bounds(reports).to_csv(summary_path, index=False, float_format='%.6g')
    return detail_path, summary_path
