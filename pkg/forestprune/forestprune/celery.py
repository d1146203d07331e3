import os

from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'forestprune.settings')

app = Celery('forestprune')
app.config_from_object('django.conf:settings', namespace='CELERY')
app.autodiscover_tasks()
