"""Long-only portfolios from predicted outlooks, profit-driven reflection and backtesting."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import PredictedLabel, PredictionResponse, StockSymbol, TradingDay
from .errors import InsufficientHistory, InvalidValue, MissingReturnError
from .llmio import DEFAULT_MAX_TOKENS, Backend, complete, make_request
from . import prompts

TRADING_DAYS = 252

_WEIGHT_LINE = re.compile(
    r"^[ \t*\-•]*\$?([A-Za-z][A-Za-z0-9.\-]{0,9})[ \t*]*[:=][ \t*]*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)",
    re.MULTILINE,
)


def _ticker(s: StockSymbol | str) -> str:
    return s.ticker if isinstance(s, StockSymbol) else StockSymbol.lookup(s).ticker


@dataclass(frozen=True)
class PortfolioWeights:
    """Long-only weights keyed by ticker; empty means uninvested."""

    day: TradingDay
    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        w = {_ticker(k): float(v) for k, v in self.weights.items()}
        if any(not math.isfinite(v) or v < 0 for v in w.values()):
            raise InvalidValue("weights must be finite and non-negative")
        if w and abs(math.fsum(w.values()) - 1.0) > 1e-9:
            raise InvalidValue(f"weights sum to {math.fsum(w.values())}, not 1")
        object.__setattr__(self, "weights", dict(sorted(w.items())))

    def to_dict(self) -> dict:
        return {"date": self.day.isoformat(), "weights": dict(self.weights)}


@dataclass(frozen=True)
class BacktestReport:
    overall: float
    cumulative: float
    std_dev: float
    sharpe: float
    sharpe_defined: bool = True
    n_days: int = 0

    def to_dict(self) -> dict:
        return {"overall": self.overall, "cumulative": self.cumulative, "std_dev": self.std_dev,
                "sharpe": self.sharpe, "sharpe_defined": self.sharpe_defined, "n_days": self.n_days}


def select_positive(day_predictions: Mapping[StockSymbol | str, PredictionResponse]) -> list[str]:
    return sorted(_ticker(s) for s, p in day_predictions.items() if p.label is PredictedLabel.POSITIVE)


def normalize(raw: Mapping[str, float]) -> dict[str, float]:
    """Clamp to finite non-negative values and rescale to sum 1; all-zero gives equal weights."""
    vals = {t: (v if math.isfinite(v) and v > 0 else 0.0) for t, v in raw.items()}
    if not vals:
        return {}
    top = max(vals.values())
    if top <= 0:
        return {t: 1.0 / len(vals) for t in vals}
    scaled = {t: v / top for t, v in vals.items()}
    total = math.fsum(scaled.values())
    return {t: v / total for t, v in scaled.items()}


def parse_weights(reply: str, tickers: Sequence[str]) -> dict[str, float]:
    """Read ``TICKER: number`` lines for the given tickers; others are ignored."""
    wanted = set(tickers)
    found: dict[str, float] = {}
    for m in _WEIGHT_LINE.finditer(reply):
        t = m.group(1).upper()
        if t in wanted and t not in found:
            found[t] = float(m.group(2))
    return normalize({t: found.get(t, 0.0) for t in tickers})


def generate_weights(backend: Backend, day: TradingDay, explanations: Mapping[StockSymbol | str, str], *,
                     max_tokens: int = DEFAULT_MAX_TOKENS) -> PortfolioWeights:
    if not explanations:
        raise InvalidValue("generate_weights needs at least one stock")
    outlooks = {_ticker(s): e for s, e in explanations.items()}
    req = make_request(prompts.PORTFOLIO, {"date": day.isoformat(), "outlooks": prompts.format_outlooks(outlooks)},
                       max_tokens=max_tokens, meta={"date": day.isoformat()})
    [reply] = complete(backend, req)
    return PortfolioWeights(day, parse_weights(reply, sorted(outlooks)))


def daily_profit(weights: PortfolioWeights, returns: Mapping[StockSymbol | str, float]) -> float:
    rets = {_ticker(k): v for k, v in returns.items()}
    total = []
    for t, w in weights.weights.items():
        if t not in rets:
            raise MissingReturnError(t)
        total.append(w * rets[t])
    return math.fsum(total)


@dataclass(frozen=True)
class WeightPair:
    day: TradingDay
    winner: PortfolioWeights
    loser: PortfolioWeights
    winner_profit: float
    loser_profit: float

    def __post_init__(self):
        if not self.winner_profit > self.loser_profit:
            raise InvalidValue("a weight pair's winner must earn strictly more")


@dataclass(frozen=True)
class PortfolioRound:
    first: PortfolioWeights
    revised: PortfolioWeights
    reflection: str
    first_profit: float
    revised_profit: float

    @property
    def pair(self) -> WeightPair | None:
        day = self.first.day
        if self.revised_profit > self.first_profit:
            return WeightPair(day, self.revised, self.first, self.revised_profit, self.first_profit)
        if self.first_profit > self.revised_profit:
            return WeightPair(day, self.first, self.revised, self.first_profit, self.revised_profit)
        return None


def profit_reflect_pair(backend: Backend, explanations: Mapping[StockSymbol | str, str], first: PortfolioWeights,
                        realized_returns: Mapping[StockSymbol | str, float], *,
                        max_tokens: int = DEFAULT_MAX_TOKENS) -> PortfolioRound:
    """Show the realised profit, ask for a lesson, then for revised weights."""
    outlooks = {_ticker(s): e for s, e in explanations.items()}
    tickers = sorted(outlooks)
    day = first.day.isoformat()
    p0 = daily_profit(first, realized_returns)
    base = {"date": day, "outlooks": prompts.format_outlooks(outlooks)}
    req = make_request(prompts.PORTFOLIO_REFLECT,
                       {**base, "weights": prompts.format_weights(first.weights), "profit": f"{p0:+.4%}"},
                       max_tokens=max_tokens, meta={"date": day})
    [reflection] = complete(backend, req)
    req = make_request(prompts.PORTFOLIO_REVISE, {**base, "reflection": reflection.strip()},
                       max_tokens=max_tokens, meta={"date": day})
    [reply] = complete(backend, req)
    revised = PortfolioWeights(first.day, parse_weights(reply, tickers))
    return PortfolioRound(first, revised, reflection.strip(), p0, daily_profit(revised, realized_returns))


def _compounded_gain(profits: Sequence[float]) -> float:
    """``prod(1 + p) - 1`` computed exactly in integers, then rounded once.

    Every double is ``a / 2**k``, so the product is an integer over a power of
    two. Near-cancelling series keep full relative precision this way.
    """
    num, shift = 1, 0
    for x in profits:
        a, b = x.as_integer_ratio()
        k = b.bit_length() - 1
        num *= a + b
        shift += k
    return (num - (1 << shift)) / (1 << shift)


def profit_metrics(profits: Sequence[float]) -> BacktestReport:
    p = np.asarray(profits, dtype=float)
    if len(p) < 2:
        raise InsufficientHistory(f"backtest needs at least 2 days, got {len(p)}")
    overall = math.fsum(p)
    cumulative = _compounded_gain(p.tolist())
    mean = overall / len(p)
    std = math.sqrt(math.fsum((p - mean) ** 2) / (len(p) - 1))
    # equal profits can leave rounding residue in std; treat that as zero
    if std <= 1e-12 * float(np.max(np.abs(p))) or np.ptp(p) == 0:
        return BacktestReport(overall, cumulative, 0.0, 0.0, False, len(p))
    sharpe = mean / std * math.sqrt(TRADING_DAYS)
    return BacktestReport(overall, cumulative, std, sharpe, True, len(p))


def backtest(series: Sequence[tuple[PortfolioWeights, Mapping[StockSymbol | str, float]]]) -> BacktestReport:
    """Daily profits of held weights; uninvested days count as zero profit."""
    return profit_metrics([daily_profit(w, r) for w, r in series])


class BaselineKind(enum.Enum):
    EQUAL = "equal_1_over_N"
    POSITIVE_ONLY = "positive_only"


def baseline_weights(kind: BaselineKind | str, universe: Sequence[StockSymbol | str], day: TradingDay,
                     day_predictions: Mapping[StockSymbol | str, PredictionResponse] | None = None) -> PortfolioWeights:
    kind = BaselineKind(kind)
    if not universe:
        raise InvalidValue("baseline needs a non-empty universe")
    if kind is BaselineKind.EQUAL:
        chosen = sorted({_ticker(s) for s in universe})
    else:
        positives = set(select_positive(day_predictions or {}))
        chosen = sorted({_ticker(s) for s in universe} & positives)
    return PortfolioWeights(day, {t: 1.0 / len(chosen) for t in chosen})
