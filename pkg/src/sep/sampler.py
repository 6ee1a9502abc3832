"""Best-of-n inference: draw n candidate responses, keep the one the reward model likes most."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InputWindow, PredictionResponse
from .errors import EmptyCandidateError
from .llmio import DEFAULT_MAX_TOKENS, Backend, complete, make_request
from .tuner import Policy, RewardModel, policy_distribution, reward_score
from . import prompts


@dataclass(frozen=True)
class SamplerConfig:
    n: int = 4
    temperature: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")


def generate_candidates(source: Backend | Policy, window: InputWindow, config: SamplerConfig = SamplerConfig(), *,
                        max_tokens: int = DEFAULT_MAX_TOKENS) -> list[PredictionResponse]:
    if isinstance(source, Policy):
        # the rng is keyed by the window so a batch gives the same draws in any order
        rng = np.random.default_rng([config.seed, *window.target_day.isoformat().encode(),
                                     *window.stock.ticker.encode()])
        cands, p = policy_distribution(source, window)
        picks = rng.choice(len(cands), size=config.n, replace=True, p=p / p.sum())
        return [cands[i] for i in picks]
    req = make_request(prompts.EXPLAIN, prompts.window_bindings(window), temperature=config.temperature,
                       n=config.n, max_tokens=max_tokens, meta=prompts.window_meta(window))
    return [PredictionResponse.from_raw(r) for r in complete(source, req)]


def score_candidates(reward: RewardModel, window: InputWindow, candidates: Sequence[PredictionResponse]) -> list[float]:
    return [reward_score(reward, window, c) for c in candidates]


def best_of_n(reward: RewardModel, window: InputWindow,
              candidates: Sequence[PredictionResponse]) -> tuple[int, PredictionResponse]:
    """Index and response with the highest reward; the first one wins ties."""
    if not candidates:
        raise EmptyCandidateError("best_of_n needs at least one candidate")
    scores = score_candidates(reward, window, candidates)
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best, candidates[best]


def predict(source: Backend | Policy, reward: RewardModel, window: InputWindow,
            config: SamplerConfig = SamplerConfig()) -> dict:
    """One predictions.jsonl record for ``window``."""
    cands = generate_candidates(source, window, config)
    scores = score_candidates(reward, window, cands)
    idx, best = best_of_n(reward, window, cands)
    return {
        "stock": window.stock.ticker,
        "date": window.target_day.isoformat(),
        "label": best.label.value,
        "explanation": best.explanation,
        "selected": idx,
        "candidates_scored": [{"raw": c.raw, "label": c.label.value, "score": s} for c, s in zip(cands, scores)],
    }
