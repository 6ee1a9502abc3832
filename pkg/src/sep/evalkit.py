"""Binary classification metrics, informative filtering and judge-prompt export."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, TypeVar

from .core import InputWindow, MovementLabel, PredictedLabel, PredictionResponse
from .errors import InvalidValue, ShapeError, UndefinedMetric
from .llmio import ChatMessage, render
from . import prompts


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidValue("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(predictions: Sequence[PredictedLabel], truths: Sequence[MovementLabel], *,
              non_decisive: str = "fold") -> ConfusionCounts:
    """Tally predictions against truths.

    Neutral, Mixed and Malformed predictions are wrong by definition. With
    ``non_decisive="fold"`` they land in the wrong cell for their truth
    (fn for a Positive truth, fp for a Negative one); ``"exclude"`` drops them.
    """
    if len(predictions) != len(truths):
        raise ShapeError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if not predictions:
        raise ShapeError("confusion needs at least one sample")
    if non_decisive not in ("fold", "exclude"):
        raise ValueError("non_decisive must be 'fold' or 'exclude'")
    tp = fp = tn = fn = 0
    for p, t in zip(predictions, truths):
        pos_truth = t is MovementLabel.POSITIVE
        if not p.decisive:
            if non_decisive == "exclude":
                continue
            fn += pos_truth
            fp += not pos_truth
        elif p is PredictedLabel.POSITIVE:
            tp += pos_truth
            fp += not pos_truth
        else:
            fn += pos_truth
            tn += not pos_truth
    return ConfusionCounts(tp, fp, tn, fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetric("accuracy of zero samples")
    return (c.tp + c.tn) / c.total


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    if c.total == 0:
        raise UndefinedMetric("MCC of zero samples")
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    value = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(math.prod(float(f) for f in factors))
    return min(1.0, max(-1.0, value))


T = TypeVar("T")


def filter_informative(samples: Iterable[T]) -> list[T]:
    """Keep samples whose window has facts on its last day.

    A sample is anything with a ``window`` attribute, or an :class:`InputWindow`.
    """
    out = []
    for s in samples:
        window = s if isinstance(s, InputWindow) else s.window
        if window.eve.informative:
            out.append(s)
    return out


def metric_report(predictions: Sequence[PredictedLabel], truths: Sequence[MovementLabel],
                  filter_name: str = "all", non_decisive: str = "fold") -> dict:
    c = confusion(predictions, truths, non_decisive=non_decisive)
    return {"accuracy": accuracy(c), "mcc": mcc(c), "counts": c.to_dict(),
            "n_samples": len(predictions), "filter": filter_name}


# metric name and the questions a judge answers for it, scored 1-7
RUBRIC_METRICS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Relevance to Stock Movement", (
        "Do the reasons given bear directly on why this stock's price would move?",)),
    ("Financial Metrics", (
        "Are concrete financial figures such as earnings, revenue or valuation cited?",
        "Is it made clear how those figures would affect the share price?")),
    ("Global & Industry Factors", (
        "Are macroeconomic conditions or sector-wide trends taken into account?",
        "Is the link between world events and this stock made clear?")),
    ("Company Developments", (
        "Are specific company events named?",
        "Is the likely effect of those events on the stock explained?")),
    ("Temporal Awareness", (
        "Does the reasoning account for when each event happened?",
        "Does it treat recent news differently from older news?")),
    ("Balance of Positive & Negative", (
        "Are both favourable and unfavourable factors weighed?",
        "Are offsetting factors that could dampen the main effect acknowledged?")),
    ("Contextual Understanding", (
        "Is the news read in its proper context rather than taken at face value?",
        "Does the reasoning admit the uncertainty inherent in short-term price moves?")),
    ("Clarity & Coherence", (
        "Is the explanation easy to follow?",
        "Do the factors connect into one logical argument?")),
    ("Consistency with Information", (
        "Does every claim agree with the facts provided?",
        "Is the explanation free of errors and self-contradiction?")),
    ("Sensitivity to Updates", (
        "Does the reasoning allow that new information could change the outlook?",)),
)


@dataclass(frozen=True)
class RubricPrompt:
    metric: str
    questions: tuple[str, ...]
    messages: tuple[ChatMessage, ...]


def export_rubric(prediction: PredictionResponse, window: InputWindow) -> list[RubricPrompt]:
    """One 1-7 judge prompt per rubric metric, in a fixed order."""
    facts = prompts.format_window(window)
    out = []
    for metric, questions in RUBRIC_METRICS:
        msgs = render(prompts.RUBRIC, {
            "metric": metric,
            "questions": prompts.bullet_lines(questions),
            "facts": facts,
            "label": prediction.label.value,
            "explanation": prediction.explanation or "(no explanation given)",
        })
        out.append(RubricPrompt(metric, questions, tuple(msgs)))
    return out
