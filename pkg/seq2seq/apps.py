from django.apps import AppConfig


class Seq2SeqConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'seq2seq'
