"""Explained next-day stock movement prediction from tweets.

Summarize tweets into facts, explain a prediction, reflect on mistakes to
harvest training pairs, then fit a reward model and a PPO policy and pick
answers best-of-n. ``sep.cli`` wires the steps into a command line.
"""

from .core import (
    ComparisonPair,
    DailyCorpus,
    DemonstrationSample,
    EpisodeMemory,
    FactSummary,
    InputWindow,
    MovementLabel,
    PredictedLabel,
    PredictionResponse,
    PriceBar,
    RawTweet,
    ReflectionRecord,
    StockSymbol,
    daily_return,
    ground_truth_label,
    parse_prediction,
)
from .errors import SEPError

__version__ = "0.1.0"

__all__ = [
    "ComparisonPair", "DailyCorpus", "DemonstrationSample", "EpisodeMemory", "FactSummary", "InputWindow",
    "MovementLabel", "PredictedLabel", "PredictionResponse", "PriceBar", "RawTweet", "ReflectionRecord",
    "SEPError", "StockSymbol", "daily_return", "ground_truth_label", "parse_prediction",
]
