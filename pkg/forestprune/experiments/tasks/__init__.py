from .replication import run_replication_task
from .bound_simulation import run_bound_replication_task
