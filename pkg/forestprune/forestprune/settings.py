import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR.parent / '.env')

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'forestprune-local-only')
DEBUG = os.getenv('DJANGO_DEBUG', 'false').lower() == 'true'
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'forests.apps.ForestsConfig',
    'pruning.apps.PruningConfig',
    'experiments.apps.ExperimentsConfig',
]

# Данные хранятся в JSON/CSV, база не нужна
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

FORESTPRUNE_OUTPUT_DIR = os.getenv('FORESTPRUNE_OUTPUT_DIR', str(BASE_DIR.parent / 'output'))
FORESTPRUNE_THREADS = int(os.getenv('FORESTPRUNE_THREADS', '0')) or (os.cpu_count() or 1)

FORESTPRUNE_DEFAULTS = {
    'min_split': 20,
    'min_bucket': 7,
    'cp': 0.01,
    'max_depth': 30,
    'subspace_rate': 0.8,
    'bsf_k': 4,
    'max_trees': 4,
    'cv_folds': 10,
    'max_leaves': 10 ** 6,
}

CELERY_BROKER_URL = os.getenv('CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.getenv('CELERY_RESULT_BACKEND', 'redis://localhost:6379/1')
CELERY_TASK_ALWAYS_EAGER = os.getenv('CELERY_TASK_ALWAYS_EAGER', 'true').lower() == 'true'
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_ROUTES = {
    'experiments.tasks.*': {'queue': 'experiment_tasks'},
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'forests': {'handlers': ['console'], 'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'), 'propagate': False},
        'pruning': {'handlers': ['console'], 'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'), 'propagate': False},
        'experiments': {'handlers': ['console'], 'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'), 'propagate': False},
    },
}
