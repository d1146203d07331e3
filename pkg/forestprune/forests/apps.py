from django.apps import AppConfig


class ForestsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'forests'
