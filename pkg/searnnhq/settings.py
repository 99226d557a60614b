# SearnnHQ Settings Module
from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='django-insecure-searnnhq-local-only')

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = []

# Application definition
THIRD_PARTY_APPS = [
    'rest_framework',
]

LOCAL_APPS = [
    'corpus',
    'metrics',
    'numeric_core',
    'seq2seq',
    'policies',
    'searnn',
    'trainer',
    'cli',
]

INSTALLED_APPS = THIRD_PARTY_APPS + LOCAL_APPS

# No database: runs, vocabularies and checkpoints live on the filesystem.
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# SearnnHQ Specific Settings
SEARNN_OUTPUT_DIR = config('SEARNN_OUTPUT_DIR', default=str(BASE_DIR / 'runs'))
SEARNN_THREADS = config('SEARNN_THREADS', default=1, cast=int)

SEARNN_SETTINGS = {
    # corpus
    'VOCAB_SIZE': 30000,
    'MIN_FREQ': 1,
    'BUCKET_WIDTH': 4,
    # model
    'EMBED_SIZE': 64,
    'HIDDEN_SIZE': 256,
    'INIT_SCALE': 0.08,
    # trainer
    'LEARNING_RATE': 1e-3,
    'MAX_STEPS': 25000,
    'BATCH_SIZE': 32,
    'EVAL_EVERY': 500,
    'ANNEAL_FACTOR': 0.5,
    'ANNEAL_PATIENCE': 3,
    'LR_FLOOR': 1e-6,
    'CLIP_NORM': 5.0,
    'MAX_DECODE_LEN': 100,
    'TRAIN_EVAL_SIZE': 100,
    # searnn
    'ROLLIN': 'reference',
    'ROLLOUT_MIX_P': 0.5,
    'LOSS': 'kl',
    'ALPHA': 1.0,
    'TOP_K': 15,
    'NEIGHBORS': 10,
    'MAX_ROLLOUT_LEN': 50,
}

# Logging Configuration
LOG_LEVEL = config('SEARNN_LOG_LEVEL', default='INFO')
LOG_FILE = Path(config('SEARNN_LOG_FILE', default=str(BASE_DIR / 'logs' / 'searnnhq.log')))
LOG_FILE.parent.mkdir(parents=True, exist_ok=True)

_APP_LOGGER = {
    'handlers': ['file', 'console'],
    'level': LOG_LEVEL,
    'propagate': False,
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'DEBUG',
            'class': 'logging.FileHandler',
            'filename': LOG_FILE,
            'formatter': 'verbose',
        },
        'console': {
            'level': 'WARNING',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['file', 'console'],
            'level': 'INFO',
            'propagate': True,
        },
        **{app: dict(_APP_LOGGER) for app in LOCAL_APPS},
    },
}
