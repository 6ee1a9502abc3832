"""Reduce a day's tweet flood to one representative tweet per topic cluster.

The pipeline is embed -> project to a low dimension -> density clustering ->
class-based TF-IDF ranking of the members of each cluster. Embedding,
projection and clustering are pluggable stand-ins; the contract that matters
downstream is "one representative per cluster".
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .core import DailyCorpus, RawTweet
from .errors import DimensionError, InvalidValue
from .text import ngrams, stable_hash, tokenize

log = logging.getLogger(__name__)


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class HashingEmbedder:
    """Signed feature hashing of token uni/bi-grams, L2-normalised.

    Offline and deterministic for a given ``seed``; safe for concurrent use.
    """

    dim: int = 256
    seed: int = 0
    max_ngram: int = 2
    name: str = "hashing"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            for g in ngrams(tokenize(text), self.max_ngram):
                h = stable_hash(f"{self.seed}:{g}")
                out[row, h % self.dim] += 1.0 if (h >> 32) & 1 else -1.0
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0)
        return out


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple[int, ...]
    min_cluster_size: int

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        sizes = Counter(x for x in self.labels if x != -1)
        if any(v < self.min_cluster_size for v in sizes.values()):
            raise InvalidValue("every cluster must have at least min_cluster_size members")

    @property
    def n_clusters(self) -> int:
        return len({x for x in self.labels if x != -1})

    @property
    def n_noise(self) -> int:
        return sum(1 for x in self.labels if x == -1)


def reduce_dims(vectors, target_dim: int, seed: int = 0, method: str = "pca") -> np.ndarray:
    """Project vectors down to ``target_dim`` columns.

    ``method="pca"`` (default) projects onto the leading principal axes, with
    each axis sign-fixed so its largest loading is positive. ``method="random"``
    is a seeded Gaussian random projection. Both are deterministic; asking for
    the input dimension returns the vectors unchanged.
    """
    X = np.asarray(vectors, dtype=float)
    if X.size == 0:
        return np.zeros((0, target_dim))
    if X.ndim != 2:
        raise DimensionError("expected a 2-d array of vectors")
    if target_dim > X.shape[1]:
        raise DimensionError(f"cannot project {X.shape[1]} dims up to {target_dim}")
    if target_dim == X.shape[1]:
        return X.copy()
    if method == "random":
        rng = np.random.default_rng(seed)
        P = rng.standard_normal((X.shape[1], target_dim)) / math.sqrt(target_dim)
        return X @ P
    if method != "pca":
        raise ValueError(f"unknown reduction method {method!r}")
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    V = np.zeros((X.shape[1], target_dim))
    k = min(target_dim, Vt.shape[0])
    V[:, :k] = Vt[:k].T
    signs = np.sign(V[np.abs(V).argmax(axis=0), np.arange(target_dim)])
    signs[signs == 0] = 1.0
    return Xc @ (V * signs)


def auto_eps(vectors, percentile: float = 30.0, k: int = 10) -> float:
    """Radius at which ``percentile`` percent of points have ``k`` neighbours (self included).

    The k-distance adapts to the day's density, which a single fixed radius
    or a percentile of all pairwise distances does not.
    """
    X = np.asarray(vectors, dtype=float)
    if len(X) < 2:
        return 0.0
    D = np.sort(squareform(pdist(X)), axis=1)
    kth = D[:, min(k, len(X)) - 1]
    return float(np.percentile(kth, percentile))


def cluster_density(vectors, min_cluster_size: int, eps: float, min_samples: int | None = None) -> ClusterAssignment:
    """DBSCAN-style pass: core points need ``min_samples`` neighbours (self included)
    within ``eps``; connected cores form clusters, border points join their nearest
    core, and clusters smaller than ``min_cluster_size`` dissolve into noise (-1).
    """
    if min_cluster_size < 2:
        raise InvalidValue("min_cluster_size must be at least 2")
    X = np.asarray(vectors, dtype=float)
    n = len(X)
    if n < min_cluster_size or eps <= 0:
        return ClusterAssignment((-1,) * n, min_cluster_size)
    min_samples = min_cluster_size if min_samples is None else min_samples

    D = squareform(pdist(X))
    near = D <= eps
    core = near.sum(axis=1) >= min_samples
    labels = np.full(n, -1)
    core_idx = np.flatnonzero(core)
    if len(core_idx):
        adj = csr_matrix(near[np.ix_(core_idx, core_idx)])
        _, comp = connected_components(adj, directed=False)
        labels[core_idx] = comp
        for i in np.flatnonzero(~core):
            cand = core_idx[near[i, core_idx]]
            if len(cand):
                labels[i] = labels[cand[np.argmin(D[i, cand])]]

    sizes = Counter(labels[labels >= 0].tolist())
    remap: dict[int, int] = {}
    out = []
    for lab in labels.tolist():
        if lab < 0 or sizes[lab] < min_cluster_size:
            out.append(-1)
            continue
        out.append(remap.setdefault(lab, len(remap)))
    return ClusterAssignment(tuple(out), min_cluster_size)


def ctfidf(clusters: Mapping[Hashable, Iterable[str] | Counter]) -> dict[Hashable, dict[str, float]]:
    """Class-based TF-IDF: ``W[t, c] = tf[t, c] * log(1 + A / f[t])``.

    ``A`` is the mean token count over non-empty classes and ``f[t]`` the
    frequency of ``t`` summed across all classes.
    """
    counts = {c: (v if isinstance(v, Counter) else Counter(v)) for c, v in clusters.items()}
    totals = Counter()
    for cnt in counts.values():
        totals.update(cnt)
    sizes = [sum(cnt.values()) for cnt in counts.values()]
    nonempty = sum(1 for s in sizes if s > 0)
    if nonempty == 0:
        return {c: {} for c in counts}
    A = sum(sizes) / nonempty
    return {
        c: {t: tf * math.log1p(A / totals[t]) for t, tf in cnt.items() if tf > 0}
        for c, cnt in counts.items()
    }


@dataclass(frozen=True)
class ClusterParams:
    min_cluster_size: int = 10
    target_dim: int = 15
    eps: float | None = None
    eps_percentile: float = 30.0
    min_samples: int | None = None
    reduction: str = "pca"
    seed: int = 0


def _score(tokens: list[str], weights: Mapping[str, float]) -> float:
    return math.fsum(weights.get(t, 0.0) for t in tokens)


def select_representatives(corpus: DailyCorpus, provider: EmbeddingProvider,
                           params: ClusterParams = ClusterParams()) -> list[tuple[RawTweet, int | None]]:
    """Representative tweets paired with their cluster id.

    Days smaller than ``min_cluster_size`` are passed through unchanged with a
    cluster id of ``None``.
    """
    tweets = list(corpus.tweets)
    if len(tweets) < params.min_cluster_size:
        return [(tw, None) for tw in tweets]

    emb = provider.embed([tw.text for tw in tweets])
    target = min(params.target_dim, emb.shape[1])
    low = reduce_dims(emb, target, params.seed, params.reduction)
    k = params.min_samples or params.min_cluster_size
    eps = params.eps if params.eps is not None else auto_eps(low, params.eps_percentile, k)
    assignment = cluster_density(low, params.min_cluster_size, eps, params.min_samples)

    tokens = [tokenize(tw.text) for tw in tweets]
    members: dict[int, list[int]] = {}
    for i, lab in enumerate(assignment.labels):
        if lab >= 0:
            members.setdefault(lab, []).append(i)
    weights = ctfidf({c: [t for i in idx for t in tokens[i]] for c, idx in members.items()})

    out = []
    for c in sorted(members):
        best = min(members[c], key=lambda i: (-_score(tokens[i], weights[c]), -tweets[i].shares, tweets[i].id))
        out.append((tweets[best], c))
    log.debug("%s %s: %d tweets -> %d clusters (%d noise, eps=%.4f)", corpus.stock, corpus.day,
              len(tweets), assignment.n_clusters, assignment.n_noise, eps)
    return out


def representative_tweets(corpus: DailyCorpus, provider: EmbeddingProvider,
                          params: ClusterParams = ClusterParams()) -> DailyCorpus:
    picked = select_representatives(corpus, provider, params)
    return DailyCorpus(corpus.stock, corpus.day, tuple(tw for tw, _ in picked))
