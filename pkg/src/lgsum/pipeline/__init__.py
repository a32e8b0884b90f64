"""Corpus handling, training, evaluation and experiment drivers."""
