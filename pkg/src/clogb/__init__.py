"""Combinatorial logistic bandits: estimators, confidence bonuses, environments, and an experiment harness."""

__version__ = "0.1.0"
