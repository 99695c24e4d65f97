"""Multi-source irregular time-series classification of next blood-glucose
levels: data pipeline, hierarchical attention model, training, evaluation,
synthetic cohorts, CLI, and an inference service."""

__version__ = "0.1.0"
