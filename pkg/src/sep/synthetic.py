"""Synthetic markets, tweet days and a rule-following stand-in for the LLM.

Nothing here is needed in production; it exists so the whole pipeline can run
offline with known answers.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import re
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ComparisonPair,
    DemonstrationSample,
    FactSummary,
    InputWindow,
    MovementLabel,
    PredictedLabel,
    PredictionResponse,
    PriceBar,
    RawTweet,
    StockSymbol,
    parse_prediction,
)
from .dataset import build_windows
from .llmio import CallbackBackend, CompletionRequest
from .text import stable_hash, tokenize
from . import prompts, records

POS_WORDS = frozenset({"beat", "beats", "upgrade", "upgrades", "record", "growth", "raises", "strong", "surge"})
NEG_WORDS = frozenset({"miss", "misses", "downgrade", "downgrades", "lawsuit", "recall", "cuts", "weak", "probe"})

NAMES = {"AAPL": "Apple", "MSFT": "Microsoft", "XOM": "Exxon", "JPM": "JPMorgan", "KO": "Coca-Cola",
         "NVDA": "Nvidia", "PFE": "Pfizer", "WMT": "Walmart", "CAT": "Caterpillar", "DIS": "Disney", "NEE": "NextEra"}

_POS_FACTS = (
    "{n} reported quarterly earnings that beat estimates",
    "Analysts upgrade {n} citing strong demand",
    "{n} raises its full-year guidance",
    "{n} posts record sales growth in its main segment",
)
_NEG_FACTS = (
    "{n} misses revenue estimates for the quarter",
    "Regulators open a probe into {n} accounting",
    "{n} faces a lawsuit over a product recall",
    "Analysts downgrade {n} on a weak outlook",
    "{n} cuts its dividend to preserve cash",
)
_NOISE = (
    "anyone holding ${t} today?",
    "${t} to the moon",
    "watching ${t} closely this week",
    "${t} chart looks interesting",
    "what do you all think about ${t}",
    "bought more ${t} lol",
    "${t} ${t} ${t} free signals join my channel",
)


def trading_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def make_market(tickers: Sequence[str] = ("AAPL", "MSFT", "XOM", "JPM", "KO"), n_days: int = 30,
                seed: int = 0, start: dt.date = dt.date(2021, 1, 4), busy_every: int = 7,
                agreement: float = 0.8) -> tuple[list[RawTweet], list[PriceBar]]:
    """Tweets and price bars where news on day t-1 drives the move on day t.

    A day carries good news, bad news or none; the next close follows the
    news with probability ``agreement``. Every ``busy_every``-th day is busy
    enough (25-40 tweets) to be worth clustering.
    """
    rng = np.random.default_rng(seed)
    days = trading_days(start, n_days)
    tweets: list[RawTweet] = []
    bars: list[PriceBar] = []
    for t in tickers:
        stock = StockSymbol.lookup(t)
        name = NAMES.get(t, t)
        price = 100.0
        signal = 0
        for k, day in enumerate(days):
            if k > 0:
                if signal == 0:
                    up = rng.random() < 0.5
                else:
                    up = (signal > 0) == (rng.random() < agreement)
                ret = (1 if up else -1) * abs(rng.normal(0.01, 0.005)) + 1e-4 * (1 if up else -1)
                prev, price = price, price * (1 + ret)
                op = prev * (1 + rng.normal(0, 0.002))
            else:
                op = price
            hi, lo = max(op, price) * 1.004, min(op, price) * 0.996
            bars.append(PriceBar(stock, day, round(op, 6), round(hi, 6), round(lo, 6), round(price, 6),
                                 round(price, 6), int(rng.integers(1e5, 1e6))))
            # today's news sets tomorrow's direction
            signal = int(rng.choice([-1, 0, 1], p=[0.35, 0.3, 0.35]))
            texts = []
            if signal:
                pool = _POS_FACTS if signal > 0 else _NEG_FACTS
                texts += [pool[i].format(n=name) for i in rng.choice(len(pool), size=int(rng.integers(1, 3)), replace=False)]
            n_noise = int(rng.integers(25, 40)) if busy_every and k % busy_every == busy_every - 1 else int(rng.integers(1, 6))
            texts += [_NOISE[int(i)].replace("{t}", t) for i in rng.integers(len(_NOISE), size=n_noise)]
            order = rng.permutation(len(texts))
            for j, i in enumerate(order):
                tweets.append(RawTweet(f"{t}-{day:%Y%m%d}-{j:03d}", stock, day, texts[i], int(rng.integers(0, 50))))
    return tweets, bars


def write_market(directory: str | Path, **kwargs) -> tuple[Path, Path]:
    directory = Path(directory)
    tweets, bars = make_market(**kwargs)
    tp, pp = directory / "tweets.jsonl", directory / "prices.jsonl"
    records.write_jsonl(tp, map(records.tweet_to_dict, tweets))
    records.write_jsonl(pp, map(records.price_to_dict, bars))
    return tp, pp


def _word(rng: np.random.Generator) -> str:
    cons, vows = "bcdfghjklmnprstvz", "aeiou"
    return "".join(cons[rng.integers(len(cons))] + vows[rng.integers(len(vows))] for _ in range(int(rng.integers(2, 4))))


def topic_day(n_topics: int = 16, topic_size: int = 20, total: int = 469, seed: int = 0,
              ticker: str = "AAPL", day: dt.date = dt.date(2021, 3, 1)) -> tuple[list[RawTweet], list[int]]:
    """A busy day: ``n_topics`` paraphrase groups plus unrelated chatter.

    Each topic is a 14-word base; each member swaps one word and appends
    another. Returns the tweets (shuffled) and each one's topic (-1 = chatter).
    """
    rng = np.random.default_rng(seed)
    vocab = sorted({_word(rng) for _ in range(6000)})
    pick = lambda k: [vocab[i] for i in rng.integers(len(vocab), size=k)]  # noqa: E731
    texts, topics = [], []
    for c in range(n_topics):
        base = pick(14)
        for _ in range(topic_size):
            words = list(base)
            words[int(rng.integers(14))] = pick(1)[0]
            texts.append(" ".join(words + pick(1)))
            topics.append(c)
    while len(texts) < total:
        texts.append(" ".join(pick(14)))
        topics.append(-1)
    stock = StockSymbol.lookup(ticker)
    order = rng.permutation(len(texts))
    tweets = [RawTweet(f"t{j:04d}", stock, day, texts[i], int(rng.integers(0, 100))) for j, i in enumerate(order)]
    return tweets, [topics[i] for i in order]


# -- rule-following responder -------------------------------------------------

def _polarity(text: str) -> int:
    toks = set(tokenize(text))
    return len(toks & POS_WORDS) - len(toks & NEG_WORDS)


def _last_user(req: CompletionRequest) -> str:
    return [m.content for m in req.messages if m.role == "user"][-1]


def _days(text: str) -> list[list[str]]:
    blocks: list[list[str]] = []
    for line in text.splitlines():
        if re.match(r"^Day \d+ \(", line):
            blocks.append([])
        elif blocks and line.startswith("- ") and line != "- No information available.":
            blocks[-1].append(line[2:])
        elif blocks and not line.strip():
            break
    return blocks


def _label_of(raw: str) -> PredictedLabel:
    return parse_prediction(raw)[0]


def _explain(stock: str, days: list[list[str]], label: PredictedLabel | None = None) -> str:
    score = sum((i + 1) * _polarity(f) for i, facts in enumerate(days) for f in facts)
    if label is None:
        label = PredictedLabel.POSITIVE if score > 0 else PredictedLabel.NEGATIVE if score < 0 else (
            PredictedLabel.POSITIVE if stable_hash(stock + str(len(days))) & 1 else PredictedLabel.NEGATIVE)
    facts = [f for d in days for f in d]
    verb = "rise" if label is PredictedLabel.POSITIVE else "fall"
    if facts:
        lead = max(facts[::-1], key=lambda f: abs(_polarity(f)))
        body = f"The most telling fact is that {lead[0].lower() + lead[1:]}. Weighing the recent news more heavily, {stock} should {verb}."
    else:
        body = f"There is no concrete news on {stock}, so I expect it to {verb} with the broader market."
    return f"Prediction: {label.value}\nExplanation: {body}"


def rules_reply(req: CompletionRequest) -> list[str]:
    """Deterministic answers for every template, good enough to exercise the loop."""
    text = _last_user(req)
    stock = req.meta.get("stock") or (re.search(r"^Stock: (\S+)", text, re.M) or [None, "?"])[1]
    name = req.template
    if name == "summarize":
        facts = []
        for line in text.split("Tweets:\n", 1)[1].splitlines():
            m = re.match(r"^\d+\. (.*)$", line)
            if not m:
                break
            if _polarity(m.group(1)) and m.group(1) not in facts:
                facts.append(m.group(1))
        return [prompts.bullet_lines(facts) if facts else prompts.NO_INFO] * req.n
    if name == "explain":
        days = _days(text)
        first = _explain(stock, days)
        out = [first]
        for k in range(1, req.n):
            label = _label_of(first)
            if k % 2:
                label = PredictedLabel.NEGATIVE if label is PredictedLabel.POSITIVE else PredictedLabel.POSITIVE
            out.append(_explain(stock, days[k % 2:] or days, label))
        return out
    if name == "reflect":
        prev = _label_of(text.split("Earlier response:\n", 1)[1])
        other = "Negative" if prev is PredictedLabel.POSITIVE else "Positive"
        return [f"The prediction leaned on the wrong facts and the price moved the other way. "
                f"Next time give more weight to the opposing news and predict {other}."] * req.n
    if name == "explain_reflect":
        lessons = re.findall(r"predict (Positive|Negative)\.", text)
        days = _days(text)
        # every fourth input ignores its first lesson, so some episodes need two rounds
        stubborn = stable_hash(text.split("Earlier attempts", 1)[0]) % 4 == 0 and len(lessons) == 1
        if stubborn:
            label = PredictedLabel.POSITIVE if lessons[-1] == "Negative" else PredictedLabel.NEGATIVE
        else:
            label = PredictedLabel(lessons[-1]) if lessons else None
        return [_explain(stock, days, label)] * req.n
    if name in ("portfolio", "portfolio_revise"):
        outlooks = re.findall(r"^([A-Z][A-Z0-9.\-]*): (.*)$", text.split("Outlooks:\n", 1)[1], re.M)
        raw = {t: max(0.1, 1.0 + _polarity(o)) for t, o in outlooks}
        if name == "portfolio_revise":
            raw = {t: v * v for t, v in raw.items()}
        total = sum(raw.values())
        lines = [f"{t}: {v / total:.4f}" for t, v in raw.items()]
        return ["\n".join(lines) + "\nExplanation: weights follow the strength of each outlook."] * req.n
    if name == "portfolio_reflect":
        return ["Concentrate more capital in the stocks with the strongest news."] * req.n
    if name == "rubric":
        return ["Score: 4\nThe explanation is adequate."] * req.n
    return ["NO INFO"] * req.n


def rules_backend() -> CallbackBackend:
    return CallbackBackend(rules_reply, name="rules")


# -- scripted flip fixture ------------------------------------------------------

def flip_plan(n: int = 100, initially_correct: int = 40, flips: Sequence[int] = (15, 15, 15)) -> list[int | None]:
    """Per episode, the iteration at which it turns correct (None = never)."""
    plan: list[int | None] = [0] * initially_correct
    for i, k in enumerate(flips, 1):
        plan += [i] * k
    plan += [None] * (n - len(plan))
    if len(plan) != n:
        raise ValueError("plan does not fit in n episodes")
    return plan


def flip_script(episodes: Sequence[tuple[InputWindow, MovementLabel]], plan: Sequence[int | None],
                max_iters: int = 3) -> dict[str, list[str]]:
    """Replies that make episode ``j`` turn correct exactly at ``plan[j]``."""
    script: dict[str, list[str]] = defaultdict(list)
    for (w, truth), turn in zip(episodes, plan):
        right = PredictedLabel(truth.value)
        wrong = PredictedLabel(truth.opposite.value)
        t = w.stock.ticker
        say = lambda lab, k: f"Prediction: {lab.value}\nExplanation: attempt {k} for {t} on {w.target_day}."  # noqa: E731
        script["explain"].append(say(right if turn == 0 else wrong, 0))
        if turn == 0:
            continue
        last = max_iters if turn is None else turn
        for k in range(1, last + 1):
            script["reflect"].append(f"Reflection {k} on {t}: the previous call was wrong.")
            script["explain_reflect"].append(say(right if k == turn else wrong, k))
    return dict(script)


def synthetic_windows(n: int, T: int = 5, seed: int = 0,
                      tickers: Sequence[str] = ("AAPL", "MSFT", "XOM", "JPM", "KO")) -> list[tuple[InputWindow, MovementLabel]]:
    """``n`` windows over made-up facts, with alternating truths."""
    rng = np.random.default_rng(seed)
    days = trading_days(dt.date(2021, 1, 4), n // len(tickers) + T + 1)
    out = []
    for j in range(n):
        t = tickers[j % len(tickers)]
        stock = StockSymbol.lookup(t)
        k = j // len(tickers)
        sums = []
        for d in days[k:k + T]:
            facts = tuple(rng.choice(_POS_FACTS + _NEG_FACTS, size=int(rng.integers(0, 3)), replace=False))
            sums.append(FactSummary(stock, d, tuple(f.format(n=NAMES[t]) for f in facts), bool(facts)))
        truth = MovementLabel.POSITIVE if j % 2 == 0 else MovementLabel.NEGATIVE
        out.append((InputWindow(stock, days[k + T], tuple(sums)), truth))
    return out


def write_flip_fixture(directory: str | Path, n_days: int = 25, T: int = 5, seed: int = 0,
                       plan: Sequence[int | None] | None = None) -> dict[str, Path]:
    """Files for ``sep explain --backend mock --script flip.jsonl`` with a known pair count.

    Five stocks over ``n_days`` days give ``5 * (n_days - T)`` episodes; with the
    defaults that is 100, laid out as in :func:`flip_plan`.
    """
    directory = Path(directory)
    tweets, bars = make_market(n_days=n_days, seed=seed, busy_every=0)
    summaries = []
    by_day = defaultdict(list)
    for tw in tweets:
        by_day[(tw.stock, tw.day)].append(tw.text)
    for (stock, day), texts in sorted(by_day.items()):
        facts = tuple(x for x in texts if _polarity(x))
        summaries.append(FactSummary(stock, day, facts, bool(facts)))
    episodes = build_windows(summaries, bars, T)
    plan = list(plan) if plan is not None else flip_plan(len(episodes))
    script = flip_script(episodes, plan)
    paths = {"summaries": directory / "summaries.jsonl", "prices": directory / "prices.jsonl",
             "script": directory / "flip.jsonl"}
    records.write_jsonl(paths["summaries"], map(records.summary_to_dict, summaries))
    records.write_jsonl(paths["prices"], map(records.price_to_dict, bars))
    records.write_jsonl(paths["script"], ({"template": k, "reply": r} for k, v in sorted(script.items()) for r in v))
    return paths


# -- separable marker task ------------------------------------------------------

MARKER = "zqxmarker"


@dataclasses.dataclass(frozen=True)
class MarkerTask:
    windows: list[InputWindow]
    demos: list[DemonstrationSample]
    pairs: list[ComparisonPair]
    candidates: dict[tuple[str, str], list[PredictionResponse]]

    def __call__(self, window: InputWindow) -> list[PredictionResponse]:
        return self.candidates[window.key]


def marker_task(n_windows: int = 60, n_candidates: int = 4, seed: int = 0) -> MarkerTask:
    """Windows whose candidate sets hold exactly one response carrying :data:`MARKER`.

    Each pair's winner is the marker response (labelled with the truth) and
    its loser a marker-free response with the wrong label, so the marker is the
    only feature that separates winners from losers. Demos use a marker-free
    response with the right label, leaving room for PPO to find the marker.
    """
    if n_candidates < 3:
        raise ValueError("need at least 3 candidates per window")
    rng = np.random.default_rng(seed)
    vocab = sorted({_word(rng) for _ in range(3000)})
    words = lambda k: " ".join(vocab[i] for i in rng.integers(len(vocab), size=k))  # noqa: E731
    windows, demos, pairs, cands = [], [], [], {}
    for w, truth in synthetic_windows(n_windows, seed=seed):
        wrong = truth.opposite
        marked = int(rng.integers(n_candidates))
        labels = [truth if rng.random() < 0.5 else wrong for _ in range(n_candidates)]
        labels[marked] = truth
        others = [i for i in range(n_candidates) if i != marked]
        labels[others[0]], labels[others[1]] = wrong, truth
        resp = []
        for i, lab in enumerate(labels):
            text = words(8) + (f" {MARKER}" if i == marked else "")
            resp.append(PredictionResponse.canonical(lab, text))
        windows.append(w)
        cands[w.key] = resp
        pairs.append(ComparisonPair(w, truth, resp[marked], resp[others[0]], 1))
        demos.append(DemonstrationSample(w, truth, resp[others[1]]))
    return MarkerTask(windows, demos, pairs, cands)
