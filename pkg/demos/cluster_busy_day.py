"""
Picking representative tweets on a busy day
===========================================

A heavily discussed day can carry hundreds of tweets that repeat a handful of
stories. We embed them, cluster by density and keep the best-scoring tweet of
each cluster.
"""

# %%
# A synthetic day: 16 stories, each retold about 20 times, padded with chatter.
from sep.core import DailyCorpus, StockSymbol
from sep.corpus import HashingEmbedder, select_representatives
from sep.synthetic import topic_day

tweets, topic_of = topic_day(seed=0)
aapl = StockSymbol.lookup("AAPL")
day = DailyCorpus(aapl, tweets[0].day, tuple(tweets))
print(f"{len(day)} tweets, {len(set(t for t in topic_of if t >= 0))} stories")

# %%
# Each kept tweet comes with its cluster id. Most stories should survive once.
picked = select_representatives(day, HashingEmbedder())
print(f"kept {len(picked)}")
for tweet, cid in picked[:5]:
    print(f"  cluster {cid:2d}: {tweet.text[:70]}")

# %%
# Quiet days pass through untouched (cluster id ``None``).
quiet = DailyCorpus(aapl, day.day, day.tweets[:4])
print([cid for _, cid in select_representatives(quiet, HashingEmbedder())])
