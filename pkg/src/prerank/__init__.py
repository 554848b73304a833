"""Click-log pre-training and feature-fused fine-tuning for relevance ranking."""

__version__ = "0.1.0"
