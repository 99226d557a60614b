from django.apps import AppConfig


class NumericCoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'numeric_core'
