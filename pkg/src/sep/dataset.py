"""Windows over trading days and the chronological train/validation/test split."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Callable, Iterable, Sequence, TypeVar

from .core import FactSummary, InputWindow, MovementLabel, PriceBar, StockSymbol, TradingDay, ground_truth_label
from .errors import InsufficientData, InvalidValue

T = TypeVar("T")


def build_windows(summaries: Iterable[FactSummary], bars: Iterable[PriceBar], T: int = 5, *,
                  stocks: Sequence[str] | None = None, start: TradingDay | None = None,
                  end: TradingDay | None = None) -> list[tuple[InputWindow, MovementLabel]]:
    """One ``(window, truth)`` per stock and target day, ordered by (day, ticker).

    The window holds the ``T`` trading days before the target; a day with no
    summary on file is uninformative. The truth is the target day's close
    against the previous close.
    """
    if T < 1:
        raise InvalidValue("T must be at least 1")
    wanted = {s.upper() for s in stocks} if stocks else None
    by_key = {(s.stock.ticker, s.day): s for s in summaries}
    per_stock: dict[StockSymbol, list[PriceBar]] = defaultdict(list)
    for b in bars:
        if wanted is None or b.stock.ticker in wanted:
            per_stock[b.stock].append(b)
    out = []
    for stock, series in per_stock.items():
        series.sort(key=lambda b: b.day)
        for i in range(T, len(series)):
            target = series[i].day
            if (start and target < start) or (end and target > end):
                continue
            days = [b.day for b in series[i - T:i]]
            sums = tuple(by_key.get((stock.ticker, d)) or FactSummary(stock, d) for d in days)
            out.append((InputWindow(stock, target, sums), ground_truth_label(series[i - 1], series[i])))
    out.sort(key=lambda e: (e[0].target_day, e[0].stock.ticker))
    return out


def split_days(days: Iterable[TradingDay], ratio: float = 0.8) -> tuple[list[TradingDay], list[TradingDay]]:
    """Earliest ``floor(n * ratio)`` distinct days train, the rest test."""
    if not 0 < ratio < 1:
        raise InvalidValue("ratio must lie in (0, 1)")
    ordered = sorted(set(days))
    k = math.floor(len(ordered) * ratio)
    if k == 0 or k == len(ordered):
        raise InsufficientData(f"{len(ordered)} trading days cannot be split at {ratio}")
    return ordered[:k], ordered[k:]


def split_dataset(samples: Sequence[T], ratio: float = 0.8, validation_fraction: float = 0.1, *,
                  day_of: Callable[[T], TradingDay] = lambda s: s.window.target_day,
                  tiebreak: Callable[[T], object] = lambda s: s.window.stock.ticker,
                  days: Iterable[TradingDay] | None = None) -> tuple[list[T], list[T], list[T]]:
    """Chronological (train, validation, test) split.

    Input order does not matter; samples are sorted by day, then ``tiebreak``.
    Validation is the latest ``round(validation_fraction * len(pool))`` samples
    of the train pool. Pass ``days`` to place the train/test boundary on a
    calendar other than the samples' own, so that several artifacts share it.
    """
    if not 0 <= validation_fraction < 1:
        raise InvalidValue("validation_fraction must lie in [0, 1)")
    train_days, _ = split_days(days if days is not None else (day_of(s) for s in samples), ratio)
    cutoff = train_days[-1]
    ordered = sorted(samples, key=lambda s: (day_of(s), tiebreak(s)))
    pool = [s for s in ordered if day_of(s) <= cutoff]
    test = [s for s in ordered if day_of(s) > cutoff]
    n_val = math.floor(len(pool) * validation_fraction + 0.5)
    if n_val >= len(pool):
        raise InsufficientData("train pool too small to hold out validation samples")
    return pool[:len(pool) - n_val], pool[len(pool) - n_val:], test
