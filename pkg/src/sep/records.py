"""JSONL persistence for domain values.

Every artifact is one JSON object per line with sorted keys, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .core import (
    ComparisonPair,
    DemonstrationSample,
    FactSummary,
    InputWindow,
    MovementLabel,
    PredictionResponse,
    PriceBar,
    RawTweet,
    StockSymbol,
    as_day,
)
from .errors import DataError


def read_jsonl(path: str | Path) -> Iterator[dict]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: {exc.msg}") from exc


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def write_json(path: str | Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def stock_from(rec: Mapping) -> StockSymbol:
    return StockSymbol.lookup(rec["stock"], rec.get("industry"))


def tweet_to_dict(tw: RawTweet) -> dict:
    return {"id": tw.id, "stock": tw.stock.ticker, "industry": tw.stock.industry,
            "date": tw.day.isoformat(), "text": tw.text, "shares": tw.shares}


def tweet_from_dict(d: Mapping) -> RawTweet:
    return RawTweet(str(d["id"]), stock_from(d), as_day(d["date"]), d["text"], int(d.get("shares", 0)))


def price_to_dict(bar: PriceBar) -> dict:
    return {"stock": bar.stock.ticker, "industry": bar.stock.industry, "date": bar.day.isoformat(),
            "open": bar.open, "high": bar.high, "low": bar.low, "close": bar.close,
            "adj_close": bar.adj_close, "volume": bar.volume}


def price_from_dict(d: Mapping) -> PriceBar:
    return PriceBar(stock_from(d), as_day(d["date"]), float(d["open"]), float(d["high"]), float(d["low"]),
                    float(d["close"]), float(d["adj_close"]), int(d.get("volume", 0)))


def summary_to_dict(s: FactSummary) -> dict:
    return {"stock": s.stock.ticker, "industry": s.stock.industry, "date": s.day.isoformat(),
            "facts": list(s.facts), "informative": s.informative, "flagged": s.flagged}


def summary_from_dict(d: Mapping) -> FactSummary:
    facts = tuple(d.get("facts", ()))
    return FactSummary(stock_from(d), as_day(d["date"]), facts, bool(facts), bool(d.get("flagged", False)))


def window_to_dict(w: InputWindow) -> dict:
    return {"stock": w.stock.ticker, "industry": w.stock.industry, "target_date": w.target_day.isoformat(),
            "summaries": [{"date": s.day.isoformat(), "facts": list(s.facts), "flagged": s.flagged}
                          for s in w.summaries]}


def window_from_dict(d: Mapping) -> InputWindow:
    stock = stock_from(d)
    sums = tuple(FactSummary(stock, as_day(s["date"]), tuple(s["facts"]), bool(s["facts"]), bool(s.get("flagged")))
                 for s in d["summaries"])
    return InputWindow(stock, as_day(d["target_date"]), sums)


def demo_to_dict(s: DemonstrationSample) -> dict:
    return {"window": window_to_dict(s.window), "truth": s.truth.value, "response": s.response.raw}


def demo_from_dict(d: Mapping) -> DemonstrationSample:
    return DemonstrationSample(window_from_dict(d["window"]), MovementLabel(d["truth"]),
                               PredictionResponse.from_raw(d["response"]))


def pair_to_dict(p: ComparisonPair) -> dict:
    return {"window": window_to_dict(p.window), "truth": p.truth.value, "winner": p.winner.raw,
            "loser": p.loser.raw, "resolved_iteration": p.resolved_iteration}


def pair_from_dict(d: Mapping) -> ComparisonPair:
    return ComparisonPair(window_from_dict(d["window"]), MovementLabel(d["truth"]),
                          PredictionResponse.from_raw(d["winner"]), PredictionResponse.from_raw(d["loser"]),
                          int(d["resolved_iteration"]))
