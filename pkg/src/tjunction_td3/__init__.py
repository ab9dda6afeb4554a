"""T-intersection driving simulator and a twin-critic actor-critic learner."""

__version__ = "0.1.0"
