"""
Reward model, supervised policy and PPO on a toy task
======================================================

Every window offers a few candidate answers and exactly one of them contains
a marker word. Comparison pairs always prefer the marked answer, so a working
reward model has to find the marker, and PPO should then shift probability
towards it.
"""

# %%
import numpy as np

from sep.sampler import SamplerConfig, best_of_n, generate_candidates, score_candidates
from sep.synthetic import MARKER, marker_task
from sep.tuner import (
    TrainConfig,
    expected_reward,
    feature_hash,
    max_abs_log_ratio,
    ranking_accuracy,
    sft_train,
    train_ppo,
    train_reward,
)

task = marker_task(seed=0)
print(len(task.windows), "windows,", len(task.pairs), "pairs,", len(task.demos), "demos")

# %%
# One epoch of pairwise training at the default learning rate.
cfg = TrainConfig(seed=0)
rm, trace = train_reward(task.pairs, cfg)
print(trace[-1], "ranking accuracy", ranking_accuracy(rm, task.pairs))
print("marker weight", rm.weights[feature_hash(MARKER)])

# %%
# Supervised start, then PPO against the reward model with a KL anchor.
sft, _ = sft_train(task.demos, task, cfg)
policy, _ = train_ppo(sft, task.windows, rm, cfg)
print("expected reward, sft:", expected_reward(sft, task.windows, rm))
print("expected reward, ppo:", expected_reward(policy, task.windows, rm))

# %%
# A large beta keeps the policy closer to its reference.
for beta in (0.0, 1e3):
    p, _ = train_ppo(sft, task.windows, rm, TrainConfig(seed=0, beta=beta))
    print(f"beta={beta:g}: max |log ratio| {max_abs_log_ratio(p, sft, task.windows):.3e}")

# %%
# Best-of-4 at inference: sample from the policy, keep the highest reward.
w = task.windows[0]
cands = generate_candidates(policy, w, SamplerConfig(n=4, seed=1))
idx, best = best_of_n(rm, w, cands)
print("scores", np.round(score_candidates(rm, w, cands), 6))
print("picked", idx, "| carries the marker:", MARKER in best.raw)
