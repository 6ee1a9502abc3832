"""Supervised tuning, reward modelling and PPO on a desk-scale policy.

The policy is a softmax over a finite set of candidate responses per input,
scored by a linear model over hashed n-gram features; the reward model is an
independent linear scorer over the same features. This keeps exact
log-probabilities and sampling available, so the pairwise reward loss and
the KL-penalised PPO objective are computed and differentiated as written.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .core import (
    ComparisonPair,
    DemonstrationSample,
    InputWindow,
    MovementLabel,
    PredictionResponse,
)
from .errors import CandidateCoverageError, DataError, DivergenceError, InsufficientData
from .text import ngrams, stable_hash, tokenize

HASH_BITS = 18
HASH_SIZE = 1 << HASH_BITS
MAGIC = b"SEPM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    sft_epochs: int = 2
    sft_lr: float = 3e-4
    reward_epochs: int = 1
    reward_lr: float = 2e-4
    ppo_epochs: int = 4
    ppo_lr: float = 1.4e-5
    beta: float = 0.2
    clip_eps: float = 0.2
    batch_size: int = 8
    ppo_batch_size: int = 64
    ppo_inner_steps: int = 4
    whiten_rewards: bool = True
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sft_lr", "reward_lr", "ppo_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0 or self.clip_eps <= 0 or self.temperature <= 0:
            raise ValueError("beta must be >= 0, clip_eps and temperature > 0")
        for name in ("batch_size", "ppo_batch_size", "ppo_inner_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("sft_epochs", "reward_epochs", "ppo_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# -- features ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse count vector over the ``2**18`` hash space (sorted unique indices)."""

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_counts(cls, counts: Mapping[int, float]) -> "FeatureVector":
        idx = np.array(sorted(counts), dtype=np.int64)
        vals = np.array([float(counts[i]) for i in idx], dtype=float)
        idx.flags.writeable = False
        vals.flags.writeable = False
        return cls(idx, vals)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    def dot(self, weights: np.ndarray) -> float:
        return float(weights[self.indices] @ self.values)

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        return (isinstance(other, FeatureVector) and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None


def feature_hash(gram: str) -> int:
    return stable_hash(gram) & (HASH_SIZE - 1)


@lru_cache(maxsize=1 << 17)
def featurize(window: InputWindow, response: PredictionResponse) -> FeatureVector:
    """Hashed unigram+bigram counts of the window's facts followed by the raw response."""
    text = "\n".join(f for s in window.summaries for f in s.facts) + "\n" + response.raw
    counts = Counter(feature_hash(g) for g in ngrams(tokenize(text), 2))
    return FeatureVector.from_counts(counts)


def _sparse_diff(a: FeatureVector, b: FeatureVector) -> FeatureVector:
    d = Counter(a.as_dict())
    d.subtract(b.as_dict())
    return FeatureVector.from_counts({k: v for k, v in d.items() if v != 0})


# -- reward model -----------------------------------------------------------

@dataclass
class RewardModel:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(HASH_SIZE))
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (HASH_SIZE,):
            raise ValueError(f"reward weights must have shape ({HASH_SIZE},)")
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise DivergenceError("reward model parameters are not finite")


def reward_score(model: RewardModel, window: InputWindow, response: PredictionResponse) -> float:
    return featurize(window, response).dot(model.weights) + model.bias


def _pair_deltas(weights: np.ndarray, diffs: Sequence[FeatureVector]) -> np.ndarray:
    return np.array([d.dot(weights) for d in diffs])


def pair_diffs(pairs: Sequence[ComparisonPair]) -> list[FeatureVector]:
    return [_sparse_diff(featurize(p.window, p.winner), featurize(p.window, p.loser)) for p in pairs]


def reward_loss_grad(weights: np.ndarray, diffs: Sequence[FeatureVector]) -> tuple[float, np.ndarray]:
    """Mean ``log(1 + exp(-delta))`` over pairs and its gradient in the weights.

    The bias cancels inside ``delta`` and so has zero gradient.
    """
    deltas = _pair_deltas(weights, diffs)
    loss = float(np.mean(np.logaddexp(0.0, -deltas)))
    coef = -expit(-deltas) / len(diffs)
    grad = np.zeros_like(weights)
    for c, d in zip(coef, diffs):
        np.add.at(grad, d.indices, c * d.values)
    return loss, grad


def reward_loss(model: RewardModel, pairs: Sequence[ComparisonPair]) -> float:
    if not pairs:
        raise InsufficientData("reward_loss needs at least one pair")
    deltas = np.array([reward_score(model, p.window, p.winner) - reward_score(model, p.window, p.loser)
                       for p in pairs])
    return float(np.mean(np.logaddexp(0.0, -deltas)))


def ranking_accuracy(model: RewardModel, pairs: Sequence[ComparisonPair]) -> float:
    wins = sum(reward_score(model, p.window, p.winner) > reward_score(model, p.window, p.loser) for p in pairs)
    return wins / len(pairs)


def _batches(n: int, size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def train_reward(pairs: Sequence[ComparisonPair], config: TrainConfig = TrainConfig(),
                 init: RewardModel | None = None) -> tuple[RewardModel, list[dict]]:
    """Minibatch gradient descent on the pairwise loss; returns the model and a per-epoch trace."""
    if not pairs:
        raise InsufficientData("train_reward needs at least one pair")
    rng = np.random.default_rng(config.seed)
    w = (init.weights.copy() if init else np.zeros(HASH_SIZE))
    bias = init.bias if init else 0.0
    diffs = pair_diffs(pairs)
    trace: list[dict] = []
    for epoch in range(1, config.reward_epochs + 1):
        for batch in _batches(len(diffs), config.batch_size, rng):
            _, g = reward_loss_grad(w, [diffs[i] for i in batch])
            w -= config.reward_lr * g
        loss, _ = reward_loss_grad(w, diffs)
        acc = float(np.mean(_pair_deltas(w, diffs) > 0))
        trace.append({"stage": "reward", "epoch": epoch, "loss": loss, "accuracy": acc})
        if not (math.isfinite(loss) and np.all(np.isfinite(w))):
            raise DivergenceError(f"reward training diverged at epoch {epoch}", trace)
    return RewardModel(w, bias), trace


# -- policy -----------------------------------------------------------------

CandidateGenerator = Callable[[InputWindow], Sequence[PredictionResponse]]


@dataclass
class Policy:
    weights: np.ndarray
    candidates: CandidateGenerator
    temperature: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (HASH_SIZE,):
            raise ValueError(f"policy weights must have shape ({HASH_SIZE},)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def uniform(cls, candidates: CandidateGenerator, temperature: float = 1.0) -> "Policy":
        return cls(np.zeros(HASH_SIZE), candidates, temperature)

    def copy(self) -> "Policy":
        return replace(self, weights=self.weights.copy())


def _block(policy: Policy, window: InputWindow) -> tuple[list[PredictionResponse], list[FeatureVector]]:
    cands = list(policy.candidates(window))
    if not cands:
        raise CandidateCoverageError(f"no candidates for {window.stock} {window.target_day}")
    return cands, [featurize(window, c) for c in cands]


def _log_probs(weights: np.ndarray, feats: Sequence[FeatureVector], temperature: float) -> np.ndarray:
    scores = np.array([f.dot(weights) for f in feats]) / temperature
    return scores - logsumexp(scores)


def _index_of(cands: Sequence[PredictionResponse], response: PredictionResponse, window: InputWindow) -> int:
    for i, c in enumerate(cands):
        if c.raw == response.raw:
            return i
    raise CandidateCoverageError(f"response not among the candidates for {window.stock} {window.target_day}")


def policy_distribution(policy: Policy, window: InputWindow) -> tuple[list[PredictionResponse], np.ndarray]:
    cands, feats = _block(policy, window)
    return cands, np.exp(_log_probs(policy.weights, feats, policy.temperature))


def policy_logprob(policy: Policy, window: InputWindow, response: PredictionResponse) -> float:
    cands, feats = _block(policy, window)
    return float(_log_probs(policy.weights, feats, policy.temperature)[_index_of(cands, response, window)])


def _grad_logprob(weights, feats, k, temperature, out, scale=1.0) -> float:
    """Add ``scale * d log p_k / d weights`` into ``out``; returns ``log p_k``."""
    lp = _log_probs(weights, feats, temperature)
    p = np.exp(lp)
    np.add.at(out, feats[k].indices, scale * feats[k].values / temperature)
    for pj, f in zip(p, feats):
        np.add.at(out, f.indices, -scale * pj * f.values / temperature)
    return float(lp[k])


def sft_objective_grad(weights: np.ndarray, policy: Policy, demos: Sequence[DemonstrationSample]) -> tuple[float, np.ndarray]:
    """Mean demo log-likelihood and its gradient (to be ascended)."""
    grad = np.zeros_like(weights)
    total = 0.0
    for d in demos:
        cands, feats = _block(policy, d.window)
        k = _index_of(cands, d.response, d.window)
        total += _grad_logprob(weights, feats, k, policy.temperature, grad, 1.0 / len(demos))
    return total / len(demos), grad


def mean_logprob(policy: Policy, samples: Sequence[DemonstrationSample]) -> float:
    return float(np.mean([policy_logprob(policy, d.window, d.response) for d in samples]))


def sft_train(demos: Sequence[DemonstrationSample], candidates: CandidateGenerator,
              config: TrainConfig = TrainConfig(), init: Policy | None = None) -> tuple[Policy, list[dict]]:
    """Gradient ascent on mean demo log-probability from a uniform (or given) policy."""
    if not demos:
        raise InsufficientData("sft_train needs at least one demonstration")
    policy = init.copy() if init else Policy.uniform(candidates, config.temperature)
    policy.candidates = candidates
    for d in demos:
        _index_of(policy.candidates(d.window), d.response, d.window)
    rng = np.random.default_rng(config.seed)
    trace: list[dict] = []
    for epoch in range(1, config.sft_epochs + 1):
        for batch in _batches(len(demos), config.batch_size, rng):
            _, g = sft_objective_grad(policy.weights, policy, [demos[i] for i in batch])
            policy.weights += config.sft_lr * g
        ll = mean_logprob(policy, demos)
        trace.append({"stage": "sft", "epoch": epoch, "mean_logprob": ll})
        if not (math.isfinite(ll) and np.all(np.isfinite(policy.weights))):
            raise DivergenceError(f"SFT diverged at epoch {epoch}", trace)
    return policy, trace


# -- PPO --------------------------------------------------------------------

def ppo_objective(policy: Policy, sft: Policy, reward: RewardModel, window: InputWindow,
                  sampled: PredictionResponse, beta: float) -> float:
    """``-(r - beta * (log pi(y|x) - log pi_sft(y|x)))`` for one sampled response."""
    r = reward_score(reward, window, sampled)
    log_ratio = policy_logprob(policy, window, sampled) - policy_logprob(sft, window, sampled)
    return -(r - beta * log_ratio)


def ppo_objective_grad(weights: np.ndarray, policy: Policy, sft: Policy, reward: RewardModel,
                       samples: Sequence[tuple[InputWindow, PredictionResponse]], beta: float) -> tuple[float, np.ndarray]:
    """Batch-mean objective and its gradient in the policy weights, samples held fixed.

    Only the ``+beta * log pi`` term depends on the policy weights.
    """
    grad = np.zeros_like(weights)
    total = 0.0
    n = len(samples)
    for window, y in samples:
        cands, feats = _block(policy, window)
        k = _index_of(cands, y, window)
        lp = _grad_logprob(weights, feats, k, policy.temperature, grad, beta / n)
        total += -(reward_score(reward, window, y) - beta * (lp - policy_logprob(sft, window, y)))
    return total / n, grad


def expected_reward(policy: Policy, windows: Sequence[InputWindow], reward: RewardModel) -> float:
    """Exact mean over windows of the policy's expected reward."""
    vals = []
    for w in windows:
        cands, p = policy_distribution(policy, w)
        vals.append(float(p @ np.array([reward_score(reward, w, c) for c in cands])))
    return float(np.mean(vals))


def max_abs_log_ratio(policy: Policy, reference: Policy, windows: Sequence[InputWindow]) -> float:
    worst = 0.0
    for w in windows:
        _, feats = _block(policy, w)
        diff = _log_probs(policy.weights, feats, policy.temperature) - _log_probs(reference.weights, feats, reference.temperature)
        worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def train_ppo(init: Policy, windows: Sequence[InputWindow], reward: RewardModel,
              config: TrainConfig = TrainConfig(), sft: Policy | None = None) -> tuple[Policy, list[dict]]:
    """Clipped-surrogate PPO on the reward-minus-KL signal, anchored to ``sft``.

    Each epoch runs ``ceil(len(windows) / ppo_batch_size)`` rollouts; a rollout
    draws ``ppo_batch_size`` windows with replacement, samples one response per
    window from the current policy, whitens the rewards across the rollout,
    subtracts ``beta * log(pi / pi_sft)`` and takes ``ppo_inner_steps`` gradient
    steps on the clipped surrogate.
    """
    if not windows:
        raise InsufficientData("train_ppo needs at least one window")
    sft = (sft or init).copy()
    policy = init.copy()
    T = policy.temperature
    rng = np.random.default_rng(config.seed)
    eps = config.clip_eps
    trace: list[dict] = []
    n_rollouts = math.ceil(len(windows) / config.ppo_batch_size)
    for epoch in range(1, config.ppo_epochs + 1):
        epoch_rewards = []
        for _ in range(n_rollouts):
            rollout = []
            for i in rng.integers(len(windows), size=config.ppo_batch_size):
                w = windows[i]
                cands, feats = _block(policy, w)
                lp = _log_probs(policy.weights, feats, T)
                k = int(rng.choice(len(cands), p=np.exp(lp) / np.exp(lp).sum()))
                lp_sft = float(_log_probs(sft.weights, feats, sft.temperature)[k])
                r = reward_score(reward, w, cands[k])
                rollout.append((feats, k, float(lp[k]), lp_sft, r))
            rewards = np.array([x[4] for x in rollout])
            epoch_rewards.extend(rewards.tolist())
            if config.whiten_rewards:
                sd = rewards.std()
                rewards = (rewards - rewards.mean()) / sd if sd > 1e-12 else rewards - rewards.mean()
            adv = rewards - config.beta * np.array([x[2] - x[3] for x in rollout])
            for _ in range(config.ppo_inner_steps):
                grad = np.zeros(HASH_SIZE)
                for (feats, k, old_lp, _, _), a in zip(rollout, adv):
                    new_lp = float(_log_probs(policy.weights, feats, T)[k])
                    ratio = math.exp(new_lp - old_lp)
                    clipped = (a > 0 and ratio > 1 + eps) or (a < 0 and ratio < 1 - eps)
                    if not clipped and a != 0:
                        # d/dphi of -(ratio * a) = -a * ratio * dlogpi
                        _grad_logprob(policy.weights, feats, k, T, grad, -a * ratio / len(rollout))
                policy.weights -= config.ppo_lr * grad
            if not np.all(np.isfinite(policy.weights)):
                raise DivergenceError(f"PPO diverged at epoch {epoch}", trace)
        trace.append({"stage": "ppo", "epoch": epoch, "mean_reward": float(np.mean(epoch_rewards))})
    return policy, trace


# -- gradient checking -------------------------------------------------------

def grad_check(objective: Callable[[np.ndarray], tuple[float, np.ndarray]], params: np.ndarray,
               epsilon: float = 1e-6, n_coords: int = 20, seed: int = 0, atol: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks up to ``n_coords`` coordinates: half drawn where the analytic
    gradient exceeds ``atol`` in magnitude, the rest uniformly at random.
    Coordinates where both estimates are below ``atol`` count as agreeing,
    since there the difference quotient is rounding noise.
    """
    params = np.asarray(params, dtype=float)
    _, analytic = objective(params)
    rng = np.random.default_rng(seed)
    nz = np.flatnonzero(np.abs(analytic) > atol)
    picked = rng.choice(nz, size=min(len(nz), n_coords // 2), replace=False) if len(nz) else np.array([], int)
    rest = rng.choice(params.size, size=n_coords - len(picked), replace=False)
    worst = 0.0
    x = params.copy()
    for i in np.unique(np.concatenate([picked, rest])):
        orig = x[i]
        x[i] = orig + epsilon
        f_plus, _ = objective(x)
        x[i] = orig - epsilon
        f_minus, _ = objective(x)
        x[i] = orig
        numeric = (f_plus - f_minus) / (2 * epsilon)
        denom = max(abs(numeric), abs(analytic[i]))
        if denom > atol:
            worst = max(worst, abs(numeric - analytic[i]) / denom)
    return worst


# -- candidates ---------------------------------------------------------------

def canonical_candidates(window: InputWindow) -> list[PredictionResponse]:
    """A fixed menu of responses for any window: three framings per direction."""
    t = window.stock.ticker
    latest = next((s.facts[0] for s in reversed(window.summaries) if s.facts), None)
    out = []
    for label, move, verb in ((MovementLabel.POSITIVE, "upward", "rise"), (MovementLabel.NEGATIVE, "downward", "fall")):
        out.append(PredictionResponse.canonical(
            label, f"Taken together, the facts about {t} over the past {window.T} days point to an {move} move."))
        if latest:
            out.append(PredictionResponse.canonical(
                label, f"The most recent news outweighs the rest and should make {t} {verb}: {latest}"))
        out.append(PredictionResponse.canonical(
            label, f"There is little decisive news, so recent sentiment suggests {t} will {verb}."))
    return out


class CandidatePool:
    """Harvested responses per window plus the canonical menu, in a fixed order."""

    def __init__(self, known: Mapping[tuple[str, str], Iterable[PredictionResponse]] | None = None,
                 fallback: CandidateGenerator = canonical_candidates):
        self.known: dict[tuple[str, str], list[PredictionResponse]] = {}
        self.fallback = fallback
        for key, responses in (known or {}).items():
            for r in responses:
                self.add(key, r)

    def add(self, key: tuple[str, str], response: PredictionResponse) -> None:
        bucket = self.known.setdefault(key, [])
        if all(r.raw != response.raw for r in bucket):
            bucket.append(response)

    @classmethod
    def from_samples(cls, demos: Iterable[DemonstrationSample] = (), pairs: Iterable[ComparisonPair] = (),
                     fallback: CandidateGenerator = canonical_candidates) -> "CandidatePool":
        pool = cls(fallback=fallback)
        for d in demos:
            pool.add(d.window.key, d.response)
        for p in pairs:
            pool.add(p.window.key, p.winner)
            pool.add(p.window.key, p.loser)
        return pool

    def __call__(self, window: InputWindow) -> list[PredictionResponse]:
        seen = sorted(self.known.get(window.key, []), key=lambda r: r.raw)
        raws = {r.raw for r in seen}
        return seen + [r for r in self.fallback(window) if r.raw not in raws]


# -- persistence -------------------------------------------------------------

def _write_params(path: str | Path, weights: np.ndarray, extra: float) -> None:
    arr = np.concatenate([np.asarray(weights, dtype="<f8"), np.array([extra], dtype="<f8")])
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(weights)))
        fh.write(arr.tobytes())


def _read_params(path: str | Path) -> tuple[np.ndarray, float]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a model file")
    version, dim = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    arr = np.frombuffer(blob[12:], dtype="<f8")
    if len(arr) != dim + 1:
        raise DataError(f"{path}: truncated model file")
    return arr[:dim].astype(float), float(arr[dim])


def save_reward_model(path: str | Path, model: RewardModel) -> None:
    _write_params(path, model.weights, model.bias)


def load_reward_model(path: str | Path) -> RewardModel:
    w, bias = _read_params(path)
    return RewardModel(w, bias)


def save_policy(path: str | Path, policy: Policy) -> None:
    _write_params(path, policy.weights, policy.temperature)


def load_policy(path: str | Path, candidates: CandidateGenerator) -> Policy:
    w, temperature = _read_params(path)
    return Policy(w, candidates, temperature)
