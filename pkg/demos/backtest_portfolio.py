"""
From outlooks to a backtest
===========================

Positive outlooks go into a long-only portfolio. A second pass shows the
model its realised profit and asks for revised weights. Daily profits then
roll up into overall gain, compounded gain and an annualised Sharpe ratio.
"""

# %%
import datetime as dt

import numpy as np

from sep.core import PredictionResponse
from sep.folio import (
    backtest,
    baseline_weights,
    generate_weights,
    profit_metrics,
    profit_reflect_pair,
)
from sep.synthetic import rules_backend, trading_days

backend = rules_backend()
days = trading_days(dt.date(2021, 3, 1), 20)
outlooks = {"AAPL": "Apple beat estimates and raised guidance.", "MSFT": "Microsoft faces an outage probe.",
            "NVDA": "Nvidia posted record growth."}
first = generate_weights(backend, days[0], outlooks)
print("first weights", first.weights)

# %%
returns = {"AAPL": 0.012, "MSFT": -0.018, "NVDA": 0.004}
rnd = profit_reflect_pair(backend, outlooks, first, returns)
print(f"profit {rnd.first_profit:+.4f} -> {rnd.revised_profit:+.4f}")
print("pair:", rnd.pair and (rnd.pair.winner.weights, rnd.pair.loser.weights))

# %%
# Two days, worked by hand: +10% then -5% sums to 5% but compounds to 4.5%.
print(profit_metrics([0.1, -0.05]))

# %%
# A month of random daily returns against the equal-weight baseline.
rng = np.random.default_rng(0)
tickers = list(outlooks)
series, equal = [], []
for d in days:
    r = dict(zip(tickers, rng.normal(0.001, 0.02, size=3)))
    preds = {t: PredictionResponse.canonical("Positive" if r[t] > 0 else "Negative", "x") for t in tickers}
    series.append((baseline_weights("positive_only", tickers, d, preds), r))
    equal.append((baseline_weights("equal_1_over_N", tickers, d), r))
print("hindsight positives:", backtest(series))
print("equal weights      :", backtest(equal))
