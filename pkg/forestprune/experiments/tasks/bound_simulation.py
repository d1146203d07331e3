import logging

from celery import shared_task

from experiments.config import BoundSimulationConfig
from pruning.bounds import bound_replication

logger = logging.getLogger(__name__)


@shared_task(queue='experiment_tasks')
def run_bound_replication_task(config: dict, rep: int) -> list[dict]:
    """Один повтор проверки обобщающих оценок."""
    simulation = BoundSimulationConfig.from_dict(config)
    reports = bound_replication(simulation.scenario, simulation.methods, rep, simulation.ratios, **simulation.options())
    logger.debug(f"Повтор {rep} проверки оценок завершён: {len(reports)} отчётов")
    return [report.to_dict() for report in reports]
