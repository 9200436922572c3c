"""Closed-loop trajectory simulation for auditing recommender popularity bias."""

__version__ = "0.1.0"
