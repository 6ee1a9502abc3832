"""Domain vocabulary: stocks, days, corpora, labels, windows, responses, memory.

All values are frozen dataclasses validated on construction, so an invalid
value cannot be built through the public surface.
"""

from __future__ import annotations

import datetime as dt
import enum
import math
import re
from dataclasses import dataclass, field, replace

from .errors import InvalidBarPair, InvalidValue

TradingDay = dt.date

SECTORS = (
    "Basic Materials",
    "Financial Services",
    "Consumer Defensive",
    "Utilities",
    "Energy",
    "Technology",
    "Consumer Cyclical",
    "Real Estate",
    "Healthcare",
    "Communication Services",
    "Industrials",
)

# Top five names per sector in the 2020-2022 universe.
UNIVERSE = {
    "Basic Materials": ("BHP", "RIO", "SHW", "VALE", "APD"),
    "Financial Services": ("BRK-A", "V", "JPM", "MA", "BAC"),
    "Consumer Defensive": ("WMT", "PG", "KO", "PEP", "COST"),
    "Utilities": ("NEE", "DUK", "SO", "D", "AEP"),
    "Energy": ("XOM", "CVX", "SHEL", "TTE", "COP"),
    "Technology": ("AAPL", "MSFT", "TSM", "NVDA", "AVGO"),
    "Consumer Cyclical": ("AMZN", "TSLA", "HD", "BABA", "TM"),
    "Real Estate": ("AMT", "PLD", "CCI", "EQIX", "PSA"),
    "Healthcare": ("UNH", "JNJ", "LLY", "PFE", "ABBV"),
    "Communication Services": ("GOOG", "META", "VZ", "CMCSA", "DIS"),
    "Industrials": ("UPS", "UNP", "HON", "LMT", "CAT"),
}
SECTOR_OF = {t: s for s, tickers in UNIVERSE.items() for t in tickers}

_TICKER = re.compile(r"^[A-Z][A-Z0-9.\-]{0,9}$")


@dataclass(frozen=True, order=True)
class StockSymbol:
    ticker: str
    industry: str = field(compare=False)

    def __post_init__(self):
        if not self.ticker or not _TICKER.match(self.ticker):
            raise InvalidValue(f"bad ticker {self.ticker!r}")
        if self.industry not in SECTORS:
            raise InvalidValue(f"unknown industry {self.industry!r} for {self.ticker}")

    @classmethod
    def lookup(cls, ticker: str, industry: str | None = None) -> "StockSymbol":
        ticker = ticker.lstrip("$").upper()
        if industry is None:
            try:
                industry = SECTOR_OF[ticker]
            except KeyError:
                raise InvalidValue(f"no industry known for {ticker}; pass one explicitly") from None
        return cls(ticker, industry)

    def __str__(self) -> str:
        return self.ticker


def as_day(value) -> TradingDay:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value)[:10])
    except ValueError as exc:
        raise InvalidValue(f"not an ISO date: {value!r}") from exc


@dataclass(frozen=True)
class RawTweet:
    id: str
    stock: StockSymbol
    day: TradingDay
    text: str
    shares: int = 0

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidValue(f"tweet {self.id!r} has empty text")
        if self.shares < 0:
            raise InvalidValue(f"tweet {self.id!r} has negative shares")


@dataclass(frozen=True)
class DailyCorpus:
    stock: StockSymbol
    day: TradingDay
    tweets: tuple[RawTweet, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tweets", tuple(self.tweets))
        for tw in self.tweets:
            if tw.stock != self.stock or tw.day != self.day:
                raise InvalidValue(f"tweet {tw.id!r} does not belong to {self.stock} on {self.day}")

    def __len__(self) -> int:
        return len(self.tweets)


@dataclass(frozen=True)
class FactSummary:
    stock: StockSymbol
    day: TradingDay
    facts: tuple[str, ...] = ()
    informative: bool = False
    # set when the reply could not be parsed into point-form facts
    flagged: bool = False

    def __post_init__(self):
        object.__setattr__(self, "facts", tuple(self.facts))
        if self.informative != bool(self.facts):
            raise InvalidValue("informative must be true exactly when facts are present")


@dataclass(frozen=True)
class InputWindow:
    stock: StockSymbol
    target_day: TradingDay
    summaries: tuple[FactSummary, ...]

    def __post_init__(self):
        object.__setattr__(self, "summaries", tuple(self.summaries))
        if not self.summaries:
            raise InvalidValue("a window needs at least one summary")
        days = [s.day for s in self.summaries]
        if any(a >= b for a, b in zip(days, days[1:])):
            raise InvalidValue("window days must be strictly increasing")
        if days[-1] >= self.target_day:
            raise InvalidValue("last summary must precede the target day")
        if any(s.stock != self.stock for s in self.summaries):
            raise InvalidValue("all summaries must belong to the window's stock")

    @property
    def T(self) -> int:
        return len(self.summaries)

    @property
    def eve(self) -> FactSummary:
        """Summary of the day right before the target day."""
        return self.summaries[-1]

    @property
    def key(self) -> tuple[str, str]:
        return self.stock.ticker, self.target_day.isoformat()


class MovementLabel(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"

    def as_int(self) -> int:
        return 1 if self is MovementLabel.POSITIVE else 0

    @property
    def opposite(self) -> "MovementLabel":
        return MovementLabel.NEGATIVE if self is MovementLabel.POSITIVE else MovementLabel.POSITIVE


class PredictedLabel(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NEUTRAL = "Neutral"
    MIXED = "Mixed"
    MALFORMED = "Malformed"

    @property
    def decisive(self) -> bool:
        return self in (PredictedLabel.POSITIVE, PredictedLabel.NEGATIVE)

    def matches(self, truth: MovementLabel) -> bool:
        return self.decisive and self.value == truth.value


_PREDICTION_LINE = re.compile(
    r"^[ \t*#>\-]*prediction[ \t*]*:[ \t*]*(positive|negative|neutral|mixed)\b",
    re.IGNORECASE | re.MULTILINE,
)
_EXPLANATION_MARK = re.compile(r"^[ \t*#>\-]*explanation[ \t*]*:[ \t*]*", re.IGNORECASE | re.MULTILINE)


def parse_prediction(raw: str) -> tuple[PredictedLabel, str]:
    """Parse a ``Prediction: <label>`` / ``Explanation: <text>`` reply.

    Anything without a recognisable prediction line is ``Malformed`` with an
    empty explanation; that is a value, never an exception.
    """
    m = _PREDICTION_LINE.search(raw)
    if m is None:
        return PredictedLabel.MALFORMED, ""
    label = PredictedLabel(m.group(1).capitalize())
    e = _EXPLANATION_MARK.search(raw)
    explanation = raw[e.end():].strip() if e else ""
    return label, explanation


@dataclass(frozen=True)
class PredictionResponse:
    label: PredictedLabel
    explanation: str
    raw: str

    def __post_init__(self):
        if (self.label, self.explanation) != parse_prediction(self.raw):
            raise InvalidValue("label/explanation must be the parse of raw")

    @classmethod
    def from_raw(cls, raw: str) -> "PredictionResponse":
        label, explanation = parse_prediction(raw)
        return cls(label, explanation, raw)

    @classmethod
    def canonical(cls, label: PredictedLabel | MovementLabel | str, explanation: str) -> "PredictionResponse":
        value = label if isinstance(label, str) else label.value
        return cls.from_raw(f"Prediction: {value}\nExplanation: {explanation}")


@dataclass(frozen=True)
class ReflectionRecord:
    iteration: int
    feedback: str

    def __post_init__(self):
        if self.iteration < 0:
            raise InvalidValue("iteration must be non-negative")
        if not self.feedback or not self.feedback.strip():
            raise InvalidValue("reflection feedback must be non-empty")


@dataclass(frozen=True)
class EpisodeMemory:
    """Short-term memory (``last_response``) plus long-term ``reflections``."""

    window: InputWindow
    truth: MovementLabel
    last_response: PredictionResponse
    reflections: tuple[ReflectionRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "reflections", tuple(self.reflections))
        for i, r in enumerate(self.reflections):
            if r.iteration != i:
                raise InvalidValue("reflections must be contiguous from iteration 0")

    @property
    def next_iteration(self) -> int:
        return len(self.reflections)

    def with_reflection(self, record: ReflectionRecord) -> "EpisodeMemory":
        return replace(self, reflections=self.reflections + (record,))

    def with_response(self, response: PredictionResponse) -> "EpisodeMemory":
        return replace(self, last_response=response)


@dataclass(frozen=True)
class ComparisonPair:
    window: InputWindow
    truth: MovementLabel
    winner: PredictionResponse
    loser: PredictionResponse
    resolved_iteration: int

    def __post_init__(self):
        if not self.winner.label.matches(self.truth):
            raise InvalidValue("winner must match the ground truth")
        if self.loser.label.matches(self.truth):
            raise InvalidValue("loser must not match the ground truth")
        if self.resolved_iteration < 1:
            raise InvalidValue("resolved_iteration must be at least 1")


@dataclass(frozen=True)
class DemonstrationSample:
    window: InputWindow
    truth: MovementLabel
    response: PredictionResponse

    def __post_init__(self):
        if not self.response.label.matches(self.truth):
            raise InvalidValue("demonstration response must match the ground truth")


@dataclass(frozen=True)
class PriceBar:
    stock: StockSymbol
    day: TradingDay
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: int = 0

    def __post_init__(self):
        prices = (self.open, self.high, self.low, self.close, self.adj_close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise InvalidValue(f"{self.stock} {self.day}: prices must be positive and finite")
        if not (self.low <= self.open <= self.high and self.low <= self.close <= self.high):
            raise InvalidValue(f"{self.stock} {self.day}: need low <= open, close <= high")
        if self.volume < 0:
            raise InvalidValue("volume must be non-negative")


def _check_pair(prev_bar: PriceBar, next_bar: PriceBar) -> None:
    if prev_bar.stock != next_bar.stock:
        raise InvalidBarPair(f"bars belong to {prev_bar.stock} and {next_bar.stock}")
    if not prev_bar.day < next_bar.day:
        raise InvalidBarPair(f"days not increasing: {prev_bar.day} -> {next_bar.day}")


def daily_return(prev_bar: PriceBar, next_bar: PriceBar) -> float:
    _check_pair(prev_bar, next_bar)
    return (next_bar.adj_close - prev_bar.adj_close) / prev_bar.adj_close


def ground_truth_label(prev_bar: PriceBar, next_bar: PriceBar) -> MovementLabel:
    """Positive iff adjusted close strictly rises; flat days are Negative."""
    _check_pair(prev_bar, next_bar)
    if next_bar.adj_close > prev_bar.adj_close:
        return MovementLabel.POSITIVE
    return MovementLabel.NEGATIVE
