"""Stable influencer detection on monthly retweet cascades.

Scores users as source spreaders and brokers, labels those who stay in the
top share for several consecutive months, and predicts that label from
graph and score features with gradient-boosted trees.
"""

from .errors import ConfigError, DataError, StableInfError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "StableInfError", "__version__"]
