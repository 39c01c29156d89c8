import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "factorlab.settings")
django.setup()
