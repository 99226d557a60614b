import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'searnnhq.settings')
django.setup()
