from django.apps import AppConfig


class AnovaConfig(AppConfig):
    name = "anova"
    verbose_name = "GLM factorization and permutation inference"
