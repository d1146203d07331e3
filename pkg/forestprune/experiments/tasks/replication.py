import logging

from celery import shared_task

from experiments.config import ExperimentConfig
from experiments.experiment import run_replication

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=2, default_retry_delay=30, queue='experiment_tasks')
def run_replication_task(self, config: dict, rep: int) -> dict:
    """Выполняет один повтор эксперимента; конфигурация и результат передаются как JSON."""
    try:
        record = run_replication(ExperimentConfig.from_dict(config), rep)
    except MemoryError as e:
        logger.error(f"Повтор {rep}: нехватка памяти: {e}")
        raise self.retry(exc=e)
    return record.to_dict()
