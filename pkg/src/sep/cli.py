"""``sep`` command line.

Each subcommand reads and writes JSONL artifacts inside one output directory.
Commands that talk to a model journal every request to ``sessions.jsonl`` and
every command is appended to ``runlog.jsonl``, so ``sep replay`` can rebuild
the directory from the journal alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import corpus, dataset, evalkit, folio, pipeline, records, sampler, synthetic, tuner
from .core import DailyCorpus, MovementLabel, PredictedLabel, PredictionResponse, as_day, daily_return
from .errors import ConfigError, DataError, EpisodeAborted, InsufficientData, SEPError
from .llmio import Backend, Journal, JournaledBackend, OpenAIBackend, ScriptedBackend

log = logging.getLogger("sep")

OUT_TOKEN = "@out"


@dataclass
class RunConfig:
    tweets: str | None = None
    prices: str | None = None
    out: str = "sep-run"
    T: int = 5
    ratio: float = 0.8
    validation_fraction: float = 0.1
    backend: str = "rules"
    model: str = "gpt-3.5-turbo"
    script: str | None = None
    seed: int = 0
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    max_iters: int = 3
    max_tokens: int = 1024
    n: int = 4
    temperature: float = 0.7
    filter: str = "all"
    non_decisive: str = "fold"
    start: str | None = None
    end: str | None = None
    stocks: list[str] | None = None
    embed_dim: int = 256
    cluster: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if not 0 < self.ratio < 1 or not 0 <= self.validation_fraction < 1:
            raise ConfigError("ratio must lie in (0, 1) and validation_fraction in [0, 1)")
        if self.T < 1 or self.max_iters < 1 or self.n < 1 or self.jobs < 1:
            raise ConfigError("T, max_iters, n and jobs must be positive")
        if self.backend not in ("mock", "rules", "openai"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.filter not in ("all", "informative"):
            raise ConfigError("filter must be 'all' or 'informative'")
        if self.non_decisive not in ("fold", "exclude"):
            raise ConfigError("non_decisive must be 'fold' or 'exclude'")
        for d in (self.start, self.end):
            if d is not None:
                try:
                    as_day(d)
                except DataError as exc:
                    raise ConfigError(str(exc)) from None
        try:
            self.train_config()
            self.cluster_params()
            self.sampler_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def train_config(self) -> tuner.TrainConfig:
        return tuner.TrainConfig(**{"seed": self.seed, **self.train})

    def cluster_params(self) -> corpus.ClusterParams:
        return corpus.ClusterParams(**{"seed": self.seed, **self.cluster})

    def sampler_config(self) -> sampler.SamplerConfig:
        return sampler.SamplerConfig(self.n, self.temperature, self.seed)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Run:
    """One command invocation: config, resolved paths and the (lazy) backend."""

    def __init__(self, cfg: RunConfig, paths: dict[str, str | None], *, backend: Backend | None = None):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.paths = paths
        # a backend passed in (replay) is used as is, without a journal
        self._backend = backend

    def path(self, key: str, default: str | None = None) -> Path:
        value = self.paths.get(key) or default
        if value is None:
            raise ConfigError(f"missing --{key.replace('_', '-')}")
        return self.resolve(value)

    def resolve(self, value: str) -> Path:
        if value.startswith(OUT_TOKEN):
            return self.out / value[len(OUT_TOKEN):].lstrip("/")
        return Path(value)

    def artifact(self, name: str) -> Path:
        return self.out / name

    @property
    def backend(self) -> Backend:
        if self._backend is None:
            cfg = self.cfg
            if cfg.backend == "mock":
                if not cfg.script:
                    raise ConfigError("--backend mock needs --script")
                inner = ScriptedBackend.from_file(cfg.script)
            elif cfg.backend == "rules":
                inner = synthetic.rules_backend()
            else:
                inner = OpenAIBackend(cfg.model, max_in_flight=cfg.jobs)
            self._backend = JournaledBackend(inner, Journal(self.artifact("sessions.jsonl")))
        return self._backend

    def windows(self, split: str = "all"):
        """(window, truth) pairs from summaries and prices, optionally one split's."""
        cfg = self.cfg
        sums = [records.summary_from_dict(d) for d in records.read_jsonl(self.path("summaries", "@out/summaries.jsonl"))]
        bars = [records.price_from_dict(d) for d in records.read_jsonl(self.path("prices", cfg.prices))]
        eps = dataset.build_windows(sums, bars, cfg.T, stocks=cfg.stocks,
                                    start=as_day(cfg.start) if cfg.start else None,
                                    end=as_day(cfg.end) if cfg.end else None)
        if split == "all":
            return eps
        return self.split(eps, day_of=lambda e: e[0].target_day, tiebreak=lambda e: e[0].stock.ticker)[split]

    def calendar(self) -> list:
        bars = records.read_jsonl(self.path("prices", self.cfg.prices))
        days = sorted({as_day(d["date"]) for d in bars})
        return days[self.cfg.T:]

    def split(self, samples, **kw) -> dict[str, list]:
        train, val, test = dataset.split_dataset(samples, self.cfg.ratio, self.cfg.validation_fraction,
                                                 days=self.calendar(), **kw)
        return {"train": train, "validation": val, "test": test, "pool": train + val}


# -- commands ---------------------------------------------------------------------

def cmd_cluster(run: Run) -> dict:
    cfg = run.cfg
    tweets = [records.tweet_from_dict(d) for d in records.read_jsonl(run.path("tweets", cfg.tweets))]
    by_day = defaultdict(list)
    for tw in tweets:
        by_day[(tw.stock, tw.day)].append(tw)
    provider = corpus.HashingEmbedder(dim=cfg.embed_dim, seed=cfg.seed)
    params = cfg.cluster_params()
    out = []
    for (stock, day), tws in sorted(by_day.items()):
        for tw, cid in corpus.select_representatives(DailyCorpus(stock, day, tuple(tws)), provider, params):
            out.append({**records.tweet_to_dict(tw), "cluster_id": cid})
    records.write_jsonl(run.artifact("clustered.jsonl"), out)
    return {"tweets_in": len(tweets), "tweets_out": len(out), "days": len(by_day)}


def _pool(run: Run, fn: Callable, items: Sequence) -> list:
    workers = max(1, min(run.cfg.jobs, run.backend.max_in_flight))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def cmd_summarize(run: Run) -> dict:
    default = "@out/clustered.jsonl" if run.artifact("clustered.jsonl").exists() else run.cfg.tweets
    tweets = [records.tweet_from_dict(d) for d in records.read_jsonl(run.path("tweets", default))]
    by_day = defaultdict(list)
    for tw in tweets:
        if not run.cfg.stocks or tw.stock.ticker in run.cfg.stocks:
            by_day[(tw.stock, tw.day)].append(tw)
    days = sorted(by_day)
    summaries = _pool(run, lambda k: pipeline.summarize_day(run.backend, k[0], DailyCorpus(k[0], k[1], tuple(by_day[k])),
                                                            max_tokens=run.cfg.max_tokens), days)
    records.write_jsonl(run.artifact("summaries.jsonl"), map(records.summary_to_dict, summaries))
    return {"days": len(days), "informative": sum(s.informative for s in summaries),
            "flagged": sum(s.flagged for s in summaries)}


def cmd_explain(run: Run) -> dict:
    episodes = run.windows()
    results = pipeline.run_episodes(run.backend, episodes, run.cfg.max_iters, jobs=run.cfg.jobs,
                                    max_tokens=run.cfg.max_tokens, keep_aborted=True)
    demos, pairs, unresolved, aborted = [], [], [], 0
    for r in results:
        if isinstance(r, EpisodeAborted):
            aborted += 1
        elif r.kind is pipeline.OutcomeKind.INITIAL_CORRECT:
            demos.append(records.demo_to_dict(r.demo))
        elif r.kind is pipeline.OutcomeKind.RESOLVED_PAIR:
            pairs.append(records.pair_to_dict(r.pair))
        else:
            m = r.memory
            unresolved.append({"window": records.window_to_dict(m.window), "truth": m.truth.value,
                               "last_response": m.last_response.raw,
                               "reflections": [x.feedback for x in m.reflections]})
    records.write_jsonl(run.artifact("demos.jsonl"), demos)
    records.write_jsonl(run.artifact("pairs.jsonl"), pairs)
    records.write_jsonl(run.artifact("unresolved.jsonl"), unresolved)
    return {"episodes": len(episodes), "demos": len(demos), "pairs": len(pairs),
            "unresolved": len(unresolved), "aborted": aborted}


def _samples(run: Run):
    demos = [records.demo_from_dict(d) for d in records.read_jsonl(run.path("demos", "@out/demos.jsonl"))]
    pairs = [records.pair_from_dict(d) for d in records.read_jsonl(run.path("pairs", "@out/pairs.jsonl"))]
    return demos, pairs


def _candidates(run: Run) -> tuner.CandidatePool:
    demos, pairs = _samples(run)
    return tuner.CandidatePool.from_samples(demos, pairs)


def _write_trace(run: Run, stage: str, rows: list[dict]) -> None:
    path = run.artifact("train_trace.jsonl")
    kept = [r for r in records.read_jsonl(path) if r.get("stage") != stage] if path.exists() else []
    records.write_jsonl(path, kept + rows)


def cmd_train_sft(run: Run) -> dict:
    demos, _ = _samples(run)
    parts = run.split(demos)
    if not parts["train"]:
        raise InsufficientData("no demonstrations in the training split")
    policy, trace = tuner.sft_train(parts["train"], _candidates(run), run.cfg.train_config())
    if parts["validation"]:
        trace.append({"stage": "sft", "split": "validation",
                      "mean_logprob": tuner.mean_logprob(policy, parts["validation"])})
    tuner.save_policy(run.artifact("policy_sft.bin"), policy)
    _write_trace(run, "sft", trace)
    return {"train": len(parts["train"]), "validation": len(parts["validation"])}


def cmd_train_reward(run: Run) -> dict:
    _, pairs = _samples(run)
    parts = run.split(pairs)
    if not parts["train"]:
        raise InsufficientData("no comparison pairs in the training split")
    model, trace = tuner.train_reward(parts["train"], run.cfg.train_config())
    if parts["validation"]:
        trace.append({"stage": "reward", "split": "validation",
                      "loss": tuner.reward_loss(model, parts["validation"]),
                      "accuracy": tuner.ranking_accuracy(model, parts["validation"])})
    tuner.save_reward_model(run.artifact("reward_model.bin"), model)
    _write_trace(run, "reward", trace)
    return {"train": len(parts["train"]), "validation": len(parts["validation"])}


def cmd_train_ppo(run: Run) -> dict:
    cands = _candidates(run)
    sft = tuner.load_policy(run.path("policy", "@out/policy_sft.bin"), cands)
    reward = tuner.load_reward_model(run.path("reward", "@out/reward_model.bin"))
    windows = [w for w, _ in run.windows("train")]
    policy, trace = tuner.train_ppo(sft, windows, reward, run.cfg.train_config())
    trace.append({"stage": "ppo", "split": "train", "sft_expected_reward": tuner.expected_reward(sft, windows, reward),
                  "expected_reward": tuner.expected_reward(policy, windows, reward)})
    tuner.save_policy(run.artifact("policy.bin"), policy)
    _write_trace(run, "ppo", trace)
    return {"windows": len(windows)}


def cmd_predict(run: Run) -> dict:
    reward = tuner.load_reward_model(run.path("reward", "@out/reward_model.bin"))
    if run.paths.get("source") == "backend":
        source = run.backend
    else:
        source = tuner.load_policy(run.path("policy", "@out/policy.bin"), _candidates(run))
    split = "all" if (run.cfg.start or run.cfg.end) else "test"
    episodes = run.windows(split)
    conf = run.cfg.sampler_config()
    fn = lambda e: {**sampler.predict(source, reward, e[0], conf), "eve_informative": e[0].eve.informative}  # noqa: E731
    preds = [fn(e) for e in episodes] if isinstance(source, tuner.Policy) else _pool(run, fn, episodes)
    records.write_jsonl(run.artifact("predictions.jsonl"), preds)
    return {"predictions": len(preds)}


def _truths(run: Run, key: str = "truth") -> dict[tuple[str, str], tuple[MovementLabel, float]]:
    bars = [records.price_from_dict(d) for d in records.read_jsonl(run.path(key, run.cfg.prices))]
    series = defaultdict(list)
    for b in bars:
        series[b.stock.ticker].append(b)
    out = {}
    for t, bs in series.items():
        bs.sort(key=lambda b: b.day)
        for prev, nxt in zip(bs, bs[1:]):
            r = daily_return(prev, nxt)
            out[(t, nxt.day.isoformat())] = (MovementLabel.POSITIVE if r > 0 else MovementLabel.NEGATIVE, r)
    return out


def cmd_evaluate(run: Run) -> dict:
    preds = list(records.read_jsonl(run.path("pred", "@out/predictions.jsonl")))
    truths = _truths(run)
    rows = []
    for p in preds:
        key = (p["stock"], p["date"])
        if key not in truths:
            raise DataError(f"no price movement for {key[0]} on {key[1]}")
        rows.append((PredictedLabel(p["label"]), truths[key][0], bool(p.get("eve_informative", True))))

    def block(subset, name):
        if not subset:
            return {"accuracy": None, "mcc": None, "counts": evalkit.ConfusionCounts().to_dict(),
                    "n_samples": 0, "filter": name}
        return evalkit.metric_report([r[0] for r in subset], [r[1] for r in subset], name, run.cfg.non_decisive)

    if not rows:
        raise InsufficientData("no predictions to evaluate")
    runs = {"all": block(rows, "all"), "informative": block([r for r in rows if r[2]], "informative")}
    report = {**runs[run.cfg.filter], "runs": runs}
    records.write_json(run.artifact("report.json"), report)
    return {k: report[k] for k in ("accuracy", "mcc", "n_samples", "filter")}


def cmd_portfolio(run: Run) -> dict:
    preds = list(records.read_jsonl(run.path("pred", "@out/predictions.jsonl")))
    truths = _truths(run, "prices")
    by_day = defaultdict(dict)
    for p in preds:
        by_day[p["date"]][p["stock"]] = PredictionResponse.canonical(p["label"], p["explanation"])
    weights, pairs = [], []
    for day in sorted(by_day):
        d = as_day(day)
        positives = folio.select_positive(by_day[day])
        if not positives:
            weights.append(folio.PortfolioWeights(d).to_dict())
            continue
        outlooks = {t: by_day[day][t].explanation for t in positives}
        first = folio.generate_weights(run.backend, d, outlooks, max_tokens=run.cfg.max_tokens)
        returns = {t: truths[(t, day)][1] for t in positives if (t, day) in truths}
        weights.append(first.to_dict())
        if len(returns) == len(positives):
            rnd = folio.profit_reflect_pair(run.backend, outlooks, first, returns, max_tokens=run.cfg.max_tokens)
            if rnd.pair:
                pairs.append({"date": day, "winner": rnd.pair.winner.weights, "loser": rnd.pair.loser.weights,
                              "winner_profit": rnd.pair.winner_profit, "loser_profit": rnd.pair.loser_profit,
                              "reflection": rnd.reflection})
    records.write_jsonl(run.artifact("weights.jsonl"), weights)
    records.write_jsonl(run.artifact("weight_pairs.jsonl"), pairs)
    return {"days": len(weights), "pairs": len(pairs)}


def cmd_backtest(run: Run) -> dict:
    rows = list(records.read_jsonl(run.path("weights", "@out/weights.jsonl")))
    truths = _truths(run, "prices")
    returns_on = defaultdict(dict)
    for (t, day), (_, r) in truths.items():
        returns_on[day][t] = r
    series = [(folio.PortfolioWeights(as_day(w["date"]), w["weights"]), returns_on[w["date"]]) for w in rows]
    report = folio.backtest(series).to_dict()
    baselines = {}
    pred_path = run.path("pred", "@out/predictions.jsonl")
    if pred_path.exists():
        preds = defaultdict(dict)
        for p in records.read_jsonl(pred_path):
            preds[p["date"]][p["stock"]] = PredictionResponse.canonical(p["label"], p["explanation"])
        for kind in folio.BaselineKind:
            s = [(folio.baseline_weights(kind, sorted(preds[w["date"]]), as_day(w["date"]), preds[w["date"]]),
                  returns_on[w["date"]]) for w in rows]
            baselines[kind.value] = folio.backtest(s).to_dict()
    records.write_json(run.artifact("backtest_report.json"), {**report, "baselines": baselines})
    return {k: report[k] for k in ("overall", "cumulative", "sharpe")}


COMMANDS: dict[str, Callable[[Run], dict]] = {
    "cluster": cmd_cluster,
    "summarize": cmd_summarize,
    "explain": cmd_explain,
    "train-sft": cmd_train_sft,
    "train-reward": cmd_train_reward,
    "train-ppo": cmd_train_ppo,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "portfolio": cmd_portfolio,
    "backtest": cmd_backtest,
}

PATH_FLAGS = ("tweets", "prices", "summaries", "demos", "pairs", "policy", "reward", "pred", "truth", "weights")


# -- runlog and replay ----------------------------------------------------------

def _portable(value: str | None, out: Path) -> str | None:
    if value is None:
        return None
    p = Path(value).resolve()
    try:
        return OUT_TOKEN + "/" + p.relative_to(out.resolve()).as_posix()
    except ValueError:
        return str(p)


def _log_run(run: Run, command: str) -> None:
    cfg = run.cfg.to_dict()
    cfg.update(out=OUT_TOKEN, tweets=_portable(cfg["tweets"], run.out), prices=_portable(cfg["prices"], run.out),
               script=None)
    entry = {"command": command, "config": cfg,
             "paths": {k: _portable(v, run.out) if k in PATH_FLAGS else v for k, v in run.paths.items() if v is not None}}
    path = run.artifact("runlog.jsonl")
    old = list(records.read_jsonl(path)) if path.exists() else []
    records.write_jsonl(path, [e for e in old if e != entry] + [entry])


def replay(journal: str | Path, out: str | Path) -> list[dict]:
    """Re-run a journaled directory's runlog into ``out`` with a mock seeded from the journal."""
    journal = Path(journal)
    runlog = journal.parent / "runlog.jsonl"
    if not runlog.exists():
        raise DataError(f"no runlog.jsonl next to {journal}")
    mock = ScriptedBackend.from_file(journal)
    results = []
    for entry in records.read_jsonl(runlog):
        cfg = RunConfig(**{**entry["config"], "out": str(out)})
        for key in ("tweets", "prices"):
            v = getattr(cfg, key)
            if v and v.startswith(OUT_TOKEN):
                setattr(cfg, key, str(Path(out) / v[len(OUT_TOKEN):].lstrip("/")))
        run = Run(cfg.validate(), dict(entry["paths"]), backend=mock)
        results.append({"command": entry["command"], **COMMANDS[entry["command"]](run)})
    return results


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sep", description="Summarize, explain and predict stock moves from tweets.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of RunConfig fields")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--backend", choices=("mock", "rules", "openai"))
    common.add_argument("--model")
    common.add_argument("--script", help="scripted replies for --backend mock")
    common.add_argument("--from", dest="start", help="first target date (ISO)")
    common.add_argument("--to", dest="end", help="last target date (ISO)")
    common.add_argument("--stocks", help="comma-separated tickers")
    common.add_argument("--max-iters", type=int)
    common.add_argument("--max-tokens", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--temperature", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--filter", choices=("all", "informative"))
    for flag in PATH_FLAGS:
        common.add_argument(f"--{flag}")

    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "predict":
            p.add_argument("--source", choices=("policy", "backend"), default="policy")
    rp = sub.add_parser("replay", help="rebuild a run from its journal")
    rp.add_argument("--journal", required=True)
    rp.add_argument("--out", required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for key in ("out", "seed", "jobs", "backend", "model", "script", "start", "end", "max_iters", "max_tokens",
                "n", "temperature", "filter", "tweets", "prices"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.stocks:
        cfg.stocks = [s.strip().upper() for s in args.stocks.split(",") if s.strip()]
    if args.beta is not None:
        cfg.train = {**cfg.train, "beta": args.beta}
    return cfg.validate()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        if args.command == "replay":
            result = {"replayed": replay(args.journal, args.out)}
        else:
            cfg = config_from_args(args)
            paths = {k: getattr(args, k) for k in PATH_FLAGS if k not in ("tweets", "prices")}
            paths["source"] = getattr(args, "source", None)
            run = Run(cfg, paths)
            result = COMMANDS[args.command](run)
            _log_run(run, args.command)
    except SEPError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}),
              file=sys.stderr)
        return exc.exit_code
    result["seconds"] = round(time.perf_counter() - started, 3)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
