"""
Harvesting training data with self-reflection
=============================================

Each episode asks for a prediction. A wrong answer triggers a reflection and
a fresh attempt; the first correct attempt is paired with the wrong one before
it. Episodes that start out right become demonstrations instead.
"""

# %%
from collections import Counter

from sep.pipeline import OutcomeKind, run_episodes
from sep.synthetic import rules_backend, synthetic_windows

episodes = synthetic_windows(40, seed=3)
outcomes = run_episodes(rules_backend(), episodes, max_iters=3)
print(Counter(o.kind.value for o in outcomes))

# %%
# A resolved pair: the winner carries the right label, the loser the wrong one.
pair = next(o.pair for o in outcomes if o.kind is OutcomeKind.RESOLVED_PAIR)
print("truth :", pair.truth.value, "| resolved at iteration", pair.resolved_iteration)
print("winner:", pair.winner.raw.splitlines()[0])
print("loser :", pair.loser.raw.splitlines()[0])

# %%
# More iterations never lose pairs, they can only add some.
for m in (1, 2, 3):
    out = run_episodes(rules_backend(), episodes, max_iters=m)
    print(m, sum(o.kind is OutcomeKind.RESOLVED_PAIR for o in out))
