"""Goal-conditioned latent world model with sampling-based planning,
inverse inference of goals and beliefs, collective-belief aggregation, and an
empirical verifier for goal identification from behavior."""

__version__ = "0.1.0"
