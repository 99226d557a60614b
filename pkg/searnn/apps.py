from django.apps import AppConfig


class SearnnAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'searnn'
