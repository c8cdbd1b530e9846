"""2AFC triplet annotation: metric-learning embeddings, Bayes-factor question
selection, and hierarchical structure extraction."""

__version__ = "0.1.0"
