"""Prompt templates used across the engine and helpers that format their inputs."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .core import DailyCorpus, FactSummary, InputWindow, PredictionResponse, ReflectionRecord
from .llmio import PromptTemplate

NO_INFO = "NO INFO"

_SUMMARIZE_BODY = """Stock: {stock}
Date: {date}
Tweets:
{tweets}

List the factual information in these tweets that bears on {stock} or its industry. Write one fact per line, each starting with "- ". Skip opinions, jokes, price targets without a source, and anything unverifiable. If nothing factual remains, reply with exactly: {sentinel}"""

SUMMARIZE = PromptTemplate(
    name="summarize",
    system="You condense noisy social-media posts into short factual bullet points.",
    body=_SUMMARIZE_BODY,
    exemplars=(
        (
            _SUMMARIZE_BODY.format(
                stock="KO", date="2021-04-19", sentinel=NO_INFO,
                tweets="1. $KO first-quarter revenue came in at $9.02B against $8.6B expected\n"
                       "2. who else is buying $KO before the dividend lol\n"
                       "3. Coca-Cola says away-from-home volumes are recovering as venues reopen"),
            "- Coca-Cola reported first-quarter revenue of $9.02B, above the $8.6B analysts expected.\n"
            "- Coca-Cola said sales at restaurants and venues are recovering as reopenings continue.",
        ),
        (
            _SUMMARIZE_BODY.format(
                stock="CAT", date="2022-06-13", sentinel=NO_INFO,
                tweets="1. $CAT to the moon \U0001F680\U0001F680\n"
                       "2. anyone holding $CAT over the weekend?\n"
                       "3. $CAT $DE $ALL $XYZ hot stocks list free signals join now"),
            NO_INFO,
        ),
    ),
)

_EXPLAIN_BODY = """Stock: {stock}
Facts from the previous {days} trading days, oldest first:
{facts}

Predict whether the price of {stock} will rise or fall on the next trading day ({target_date}). Weigh the facts against each other, giving more weight to recent and material news, and commit to one direction.
Answer in this format:
Prediction: Positive or Negative
Explanation: <a short paragraph>"""

_EXPLAIN_EXEMPLARS = (
    (
        _EXPLAIN_BODY.format(
            stock="MSFT", days=3, target_date="2021-07-28",
            facts="Day 1 (2021-07-22):\n- Microsoft announced a partnership to expand its cloud offering for banks.\n"
                  "Day 2 (2021-07-23):\n- No information available.\n"
                  "Day 3 (2021-07-27):\n- Microsoft reported quarterly revenue up 21%, beating estimates.\n"
                  "- Azure revenue grew 51% year over year."),
        "Prediction: Positive\nExplanation: The most recent and most material news is an earnings beat "
        "with revenue up 21% and cloud growth above 50%. Together with the earlier cloud partnership this "
        "points to strong demand, and there is no offsetting negative news, so the price is likely to rise.",
    ),
    (
        _EXPLAIN_BODY.format(
            stock="XOM", days=3, target_date="2020-03-10",
            facts="Day 1 (2020-03-04):\n- Exxon Mobil reaffirmed its dividend.\n"
                  "Day 2 (2020-03-05):\n- Oil demand forecasts were cut because of the spreading coronavirus.\n"
                  "Day 3 (2020-03-09):\n- Oil prices fell more than 20% after producers failed to agree on output cuts."),
        "Prediction: Negative\nExplanation: Although the dividend was reaffirmed, the latest facts describe a "
        "collapse in oil prices and weaker demand forecasts. Exxon's earnings depend directly on crude prices, "
        "and this news is more recent and far larger in impact, so the price is likely to fall.",
    ),
)

EXPLAIN = PromptTemplate(
    name="explain",
    system="You are a financial analyst who predicts next-day stock movements and explains the reasoning.",
    body=_EXPLAIN_BODY,
    exemplars=_EXPLAIN_EXEMPLARS,
)

EXPLAIN_REFLECT = PromptTemplate(
    name="explain_reflect",
    system=EXPLAIN.system,
    body=_EXPLAIN_BODY + """

Earlier attempts at this prediction were wrong. Lessons from those attempts, oldest first:
{reflections}

Use these lessons when making the new prediction.""",
    exemplars=_EXPLAIN_EXEMPLARS,
)

REFLECT = PromptTemplate(
    name="reflect",
    system="You review stock predictions that turned out to be wrong and extract lessons from them.",
    body="""Stock: {stock}
Facts from the previous {days} trading days, oldest first:
{facts}

Earlier response:
{response}

The prediction above was incorrect. In a few sentences, first state where the reasoning went wrong, then give a short high-level plan for weighing these facts differently next time.
Reflection:""",
)

_PORTFOLIO_HEADER = """Date: {date}
Each stock below is predicted to rise on the next trading day. Outlooks:
{outlooks}
"""

PORTFOLIO = PromptTemplate(
    name="portfolio",
    system="You are a portfolio manager who allocates capital across stocks and explains the allocation.",
    body=_PORTFOLIO_HEADER + """
Assign a non-negative portfolio weight to every stock so the weights sum to 1. Give one line per stock in the form TICKER: weight, then a line starting with "Explanation:".""",
)

PORTFOLIO_REFLECT = PromptTemplate(
    name="portfolio_reflect",
    system=PORTFOLIO.system,
    body=_PORTFOLIO_HEADER + """
Weights you chose:
{weights}

The portfolio returned {profit} on the day. Reflect on how the allocation could have earned a higher profit, and give a short plan for weighing the outlooks next time.
Reflection:""",
)

PORTFOLIO_REVISE = PromptTemplate(
    name="portfolio_revise",
    system=PORTFOLIO.system,
    body=_PORTFOLIO_HEADER + """
Lesson from reviewing an earlier allocation:
{reflection}

Assign a non-negative portfolio weight to every stock so the weights sum to 1. Give one line per stock in the form TICKER: weight, then a line starting with "Explanation:".""",
)

RUBRIC = PromptTemplate(
    name="rubric",
    system="You grade explanations of stock movement predictions.",
    body="""Metric: {metric}
{questions}

Facts available to the predictor:
{facts}

Prediction: {label}
Explanation: {explanation}

Rate the explanation on this metric from 1 (poor) to 7 (excellent). Reply with "Score: <1-7>" and one sentence of justification.""",
)

ALL = {t.name: t for t in (SUMMARIZE, EXPLAIN, EXPLAIN_REFLECT, REFLECT, PORTFOLIO,
                           PORTFOLIO_REFLECT, PORTFOLIO_REVISE, RUBRIC)}


def format_tweets(corpus: DailyCorpus) -> str:
    return "\n".join(f"{i}. {tw.text.strip()}" for i, tw in enumerate(corpus.tweets, 1))


def format_summary(summary: FactSummary) -> str:
    if not summary.informative:
        return "- No information available."
    return "\n".join(f"- {f}" for f in summary.facts)


def format_window(window: InputWindow) -> str:
    return "\n".join(f"Day {i} ({s.day.isoformat()}):\n{format_summary(s)}"
                     for i, s in enumerate(window.summaries, 1))


def format_reflections(reflections: Sequence[ReflectionRecord]) -> str:
    return "\n".join(f"Reflection {r.iteration + 1}: {r.feedback.strip()}" for r in reflections)


def window_bindings(window: InputWindow) -> dict[str, object]:
    return {
        "stock": window.stock.ticker,
        "days": window.T,
        "target_date": window.target_day.isoformat(),
        "facts": format_window(window),
    }


def window_meta(window: InputWindow, **extra) -> dict[str, str]:
    meta = {"stock": window.stock.ticker, "date": window.target_day.isoformat()}
    meta.update({k: str(v) for k, v in extra.items()})
    return meta


def format_outlooks(explanations: Mapping[str, str]) -> str:
    return "\n".join(f"{t}: {e.strip()}" for t, e in sorted(explanations.items()))


def format_weights(weights: Mapping[str, float]) -> str:
    return "\n".join(f"{t}: {w:.4f}" for t, w in sorted(weights.items()))


def format_response(response: PredictionResponse) -> str:
    return response.raw.strip() or "(empty response)"


def bullet_lines(items: Iterable[str]) -> str:
    return "\n".join(f"- {x}" for x in items)
