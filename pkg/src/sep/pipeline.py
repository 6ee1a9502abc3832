"""Summarize, explain, reflect and harvest training samples."""

from __future__ import annotations

import enum
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .core import (
    ComparisonPair,
    DailyCorpus,
    DemonstrationSample,
    EpisodeMemory,
    FactSummary,
    InputWindow,
    MovementLabel,
    PredictionResponse,
    ReflectionRecord,
    StockSymbol,
    parse_prediction,
)
from .errors import EpisodeAborted, InvalidValue, MalformedBackendReply, SEPError
from .llmio import DEFAULT_MAX_TOKENS, Backend, complete, make_request
from . import prompts

__all__ = [
    "LoopOutcome", "OutcomeKind", "explain_initial", "explain_with_reflections", "parse_facts",
    "parse_prediction", "reflect", "run_episodes", "run_reflection_loop", "summarize_day",
]

log = logging.getLogger(__name__)

_FACT_LINE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")


def parse_facts(reply: str, sentinel: str = prompts.NO_INFO) -> tuple[tuple[str, ...], bool]:
    """Return ``(facts, flagged)`` from a summarizer reply.

    Dash/bullet/number-prefixed lines are facts. A reply with no such lines is
    uninformative when it carries the sentinel on its own line (or is blank);
    otherwise the whole reply becomes a single fact and is flagged.
    """
    facts = tuple(m.group(1) for m in map(_FACT_LINE.match, reply.splitlines()) if m)
    if facts:
        return facts, False
    if any(line.strip() == sentinel for line in reply.splitlines()):
        return (), False
    if not reply.strip():
        return (), True
    return (reply.strip(),), True


def summarize_day(backend: Backend, stock: StockSymbol, corpus: DailyCorpus, *,
                  sentinel: str = prompts.NO_INFO, max_tokens: int = DEFAULT_MAX_TOKENS) -> FactSummary:
    if corpus.stock != stock:
        raise InvalidValue(f"corpus belongs to {corpus.stock}, not {stock}")
    if not corpus.tweets:
        return FactSummary(stock, corpus.day)
    req = make_request(
        prompts.SUMMARIZE,
        {"stock": stock.ticker, "date": corpus.day.isoformat(),
         "tweets": prompts.format_tweets(corpus), "sentinel": sentinel},
        max_tokens=max_tokens,
        meta={"stock": stock.ticker, "date": corpus.day.isoformat()},
    )
    [reply] = complete(backend, req)
    facts, flagged = parse_facts(reply, sentinel)
    if flagged:
        log.warning("%s %s: summary reply not in point form", stock, corpus.day)
    return FactSummary(stock, corpus.day, facts, bool(facts), flagged)


def explain_initial(backend: Backend, window: InputWindow, *,
                    max_tokens: int = DEFAULT_MAX_TOKENS) -> PredictionResponse:
    req = make_request(prompts.EXPLAIN, prompts.window_bindings(window), temperature=0.0,
                       max_tokens=max_tokens, meta=prompts.window_meta(window, iteration=0))
    [reply] = complete(backend, req)
    return PredictionResponse.from_raw(reply)


def reflect(backend: Backend, memory: EpisodeMemory, *,
            max_tokens: int = DEFAULT_MAX_TOKENS) -> ReflectionRecord:
    """Verbal feedback on the last (wrong) response, indexed after existing reflections."""
    if memory.last_response.label.matches(memory.truth):
        raise InvalidValue("reflect needs an incorrect last response")
    bindings = prompts.window_bindings(memory.window)
    bindings["response"] = prompts.format_response(memory.last_response)
    req = make_request(prompts.REFLECT, bindings, temperature=0.0, max_tokens=max_tokens,
                       meta=prompts.window_meta(memory.window, iteration=memory.next_iteration))
    [reply] = complete(backend, req)
    if not reply.strip():
        raise MalformedBackendReply("empty reflection")
    return ReflectionRecord(memory.next_iteration, reply.strip())


def explain_with_reflections(backend: Backend, window: InputWindow, reflections: Sequence[ReflectionRecord], *,
                             max_tokens: int = DEFAULT_MAX_TOKENS) -> PredictionResponse:
    if not reflections:
        raise InvalidValue("explain_with_reflections needs at least one reflection")
    ordered = sorted(reflections, key=lambda r: r.iteration)
    bindings = prompts.window_bindings(window)
    bindings["reflections"] = prompts.format_reflections(ordered)
    req = make_request(prompts.EXPLAIN_REFLECT, bindings, temperature=0.0, max_tokens=max_tokens,
                       meta=prompts.window_meta(window, iteration=len(ordered)))
    [reply] = complete(backend, req)
    return PredictionResponse.from_raw(reply)


class OutcomeKind(enum.Enum):
    INITIAL_CORRECT = "initial_correct"
    RESOLVED_PAIR = "resolved_pair"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class LoopOutcome:
    kind: OutcomeKind
    iterations_used: int
    demo: DemonstrationSample | None = None
    pair: ComparisonPair | None = None
    memory: EpisodeMemory | None = None

    def __post_init__(self):
        if self.kind is OutcomeKind.INITIAL_CORRECT and (self.demo is None or self.iterations_used != 0):
            raise InvalidValue("InitialCorrect carries a demo and uses 0 iterations")
        if self.kind is OutcomeKind.RESOLVED_PAIR and (
                self.pair is None or self.pair.resolved_iteration != self.iterations_used):
            raise InvalidValue("ResolvedPair iterations must equal the pair's resolved iteration")
        if self.kind is OutcomeKind.UNRESOLVED and self.memory is None:
            raise InvalidValue("Unresolved carries the episode memory")


def run_reflection_loop(backend: Backend, window: InputWindow, truth: MovementLabel,
                        max_iters: int = 3, *, max_tokens: int = DEFAULT_MAX_TOKENS) -> LoopOutcome:
    """One episode: explain, then alternate reflect / re-explain until correct.

    The first correct response at iteration ``i`` is paired with the wrong
    response from iteration ``i - 1``. Backend failures abort the episode with
    :class:`EpisodeAborted` carrying the memory built so far.
    """
    if max_iters < 1:
        raise InvalidValue("max_iters must be at least 1")
    memory = None
    try:
        first = explain_initial(backend, window, max_tokens=max_tokens)
        if first.label.matches(truth):
            return LoopOutcome(OutcomeKind.INITIAL_CORRECT, 0, demo=DemonstrationSample(window, truth, first))
        memory = EpisodeMemory(window, truth, first)
        for i in range(1, max_iters + 1):
            memory = memory.with_reflection(reflect(backend, memory, max_tokens=max_tokens))
            attempt = explain_with_reflections(backend, window, memory.reflections, max_tokens=max_tokens)
            if attempt.label.matches(truth):
                pair = ComparisonPair(window, truth, attempt, memory.last_response, i)
                return LoopOutcome(OutcomeKind.RESOLVED_PAIR, i, pair=pair)
            memory = memory.with_response(attempt)
        return LoopOutcome(OutcomeKind.UNRESOLVED, max_iters, memory=memory)
    except SEPError as exc:
        if isinstance(exc, InvalidValue):
            raise
        raise EpisodeAborted(exc, memory) from exc


def run_episodes(backend: Backend, episodes: Sequence[tuple[InputWindow, MovementLabel]],
                 max_iters: int = 3, *, jobs: int = 1, max_tokens: int = DEFAULT_MAX_TOKENS,
                 keep_aborted: bool = False) -> list[LoopOutcome | EpisodeAborted]:
    """Run independent episodes, concurrently up to the backend's in-flight bound.

    Results come back in input order either way. With ``keep_aborted`` an
    aborted episode yields its :class:`EpisodeAborted` in place of an outcome
    instead of stopping the batch.
    """
    workers = max(1, min(jobs, getattr(backend, "max_in_flight", 1)))

    def run(ep):
        try:
            return run_reflection_loop(backend, ep[0], ep[1], max_iters, max_tokens=max_tokens)
        except EpisodeAborted as exc:
            if keep_aborted:
                log.warning("%s %s: %s", ep[0].stock, ep[0].target_day, exc)
                return exc
            raise

    if workers == 1:
        return [run(ep) for ep in episodes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, episodes))
