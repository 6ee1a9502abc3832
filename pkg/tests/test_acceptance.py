"""End-to-end acceptance checks, one group per numbered criterion.

The terminal summary prints one PASS/FAIL line per criterion (see conftest).
"""

import json
import math
import time
from collections import Counter, defaultdict
from fractions import Fraction

import numpy as np
import pytest

from sep import cli, records, synthetic
from sep.core import ComparisonPair, DailyCorpus, MovementLabel, PredictedLabel, PredictionResponse, UNIVERSE
from sep.corpus import (
    ClusterParams,
    HashingEmbedder,
    auto_eps,
    cluster_density,
    reduce_dims,
    representative_tweets,
    select_representatives,
)
from sep.evalkit import ConfusionCounts, accuracy, confusion, mcc
from sep.folio import PortfolioWeights, daily_profit, generate_weights, profit_metrics
from sep.llmio import ScriptedBackend
from sep.sampler import SamplerConfig, best_of_n, generate_candidates
from sep.tuner import (
    HASH_SIZE,
    Policy,
    RewardModel,
    TrainConfig,
    canonical_candidates,
    expected_reward,
    grad_check,
    max_abs_log_ratio,
    ppo_objective,
    ppo_objective_grad,
    pair_diffs,
    ranking_accuracy,
    reward_score,
    reward_loss,
    reward_loss_grad,
    save_policy,
    save_reward_model,
    sft_train,
    train_ppo,
    train_reward,
)

import oracles
from conftest import AAPL, D0, window

C1 = "equation oracles on >= 1000 fixtures each at 1e-12, < 10 s"
C2 = "pairwise-loss and PPO gradients match central differences < 1e-5 on 20 points each"
C3 = "closed-form anchors: log 2 at zero margin, zero KL at the reference, MCC 1 when perfect"
C4 = "scripted flip mock: exactly 45 pairs, no calls after initially-correct episodes"
C5 = "marker task: ranking accuracy >= 0.95 and PPO beats SFT on 10 seeds, < 60 s"
C6 = "best-of-4 beats best-of-1 over 1000 draws and always equals the brute-force argmax"
C7 = "representatives equal brute-force c-TF-IDF argmax; 469-tweet day gives 8-24"
C8 = "backtest arithmetic, Sharpe scale invariance, 500-reply weight fuzz"
C9 = "replay is byte-identical and training is bitwise reproducible"
C10 = "end-to-end smoke on 5 stocks x 30 days with the scripted mock in < 2 minutes"

VOCAB = ("apple beats revenue growth guidance cut miss supply chain demand record lawsuit "
         "upgrade downgrade margin cloud chips recall probe strong weak shares rally slump").split()
TICKERS = [t for group in UNIVERSE.values() for t in group]


def rand_text(rng, lo=1, hi=12):
    return " ".join(rng.choice(VOCAB, size=int(rng.integers(lo, hi))))


def rand_window(rng):
    facts = tuple(tuple(rand_text(rng) for _ in range(int(rng.integers(0, 3)))) for _ in range(5))
    return window(facts, start=int(rng.integers(0, 200)))


def rand_response(rng, label=None):
    label = label or rng.choice(["Positive", "Negative"])
    return PredictionResponse.canonical(label, rand_text(rng) + f" v{int(rng.integers(1 << 30))}")


def sparse_weights(rng, k=400, scale=0.3):
    w = np.zeros(HASH_SIZE)
    w[rng.integers(HASH_SIZE, size=k)] = rng.normal(scale=scale, size=k)
    return w


def oracle_feats(window, response):
    return oracles.features([f for s in window.summaries for f in s.facts], response.raw)


def rel_ok(got, want, tol=1e-12):
    return got == want or abs(got - want) <= tol * max(abs(got), abs(want))


# -- 1 -----------------------------------------------------------------------

@pytest.mark.criterion(1, C1)
def test_equation_oracles():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 1000

    # reward_loss: features and loss rebuilt by the oracle
    for _ in range(n):
        w = sparse_weights(rng)
        pairs = []
        for _ in range(int(rng.integers(1, 4))):
            win = rand_window(rng)
            pairs.append(ComparisonPair(win, MovementLabel.POSITIVE, rand_response(rng, "Positive"),
                                        rand_response(rng, "Negative"), 1))
        bias = float(rng.normal())
        got = reward_loss(RewardModel(w, bias), pairs)
        deltas = [oracles.dense_dot(w, oracle_feats(p.window, p.winner)) - oracles.dense_dot(w, oracle_feats(p.window, p.loser))
                  for p in pairs]
        want = oracles.pair_loss(deltas)
        assert rel_ok(got, want), (got, want)

    # ppo_objective on a random finite candidate set
    for _ in range(n):
        win = rand_window(rng)
        cands = [rand_response(rng) for _ in range(int(rng.integers(2, 6)))]
        gen = lambda _w, c=cands: c  # noqa: E731
        pol, sft = Policy(sparse_weights(rng), gen, float(rng.uniform(0.5, 2))), Policy(sparse_weights(rng), gen)
        rm = RewardModel(sparse_weights(rng), float(rng.normal()))
        beta = float(rng.uniform(0, 1))
        k = int(rng.integers(len(cands)))
        got = ppo_objective(pol, sft, rm, win, cands[k], beta)
        feats = [oracle_feats(win, c) for c in cands]
        lp = oracles.log_softmax([oracles.dense_dot(pol.weights, f) / pol.temperature for f in feats], k)
        lp_sft = oracles.log_softmax([oracles.dense_dot(sft.weights, f) for f in feats], k)
        want = oracles.ppo_value(oracles.dense_dot(rm.weights, feats[k]) + rm.bias, lp, lp_sft, beta)
        assert rel_ok(got, want), (got, want)

    # confusion-based metrics
    labels = list(PredictedLabel)
    for _ in range(n):
        m = int(rng.integers(1, 80))
        preds = [labels[i] for i in rng.integers(len(labels), size=m)]
        truths = [MovementLabel.POSITIVE if b else MovementLabel.NEGATIVE for b in rng.integers(2, size=m)]
        c = confusion(preds, truths)
        cells = oracles.tabulate([p.value for p in preds], [t.value for t in truths])
        assert c.to_dict() == cells
        assert rel_ok(accuracy(c), oracles.accuracy(cells))
        assert rel_ok(mcc(c), oracles.mcc(cells)) or abs(mcc(c) - oracles.mcc(cells)) < 1e-15

    # daily_profit
    for _ in range(n):
        k = int(rng.integers(1, 12))
        names = list(rng.choice(TICKERS, size=k, replace=False))
        raw = rng.random(k)
        weights = dict(zip(names, raw / raw.sum()))
        pw = PortfolioWeights(D0, weights)
        rets = {t: float(r) for t, r in zip(TICKERS, rng.normal(scale=0.03, size=len(TICKERS)))}
        got = daily_profit(pw, rets)
        want = oracles.profit(dict(pw.weights), rets)
        assert rel_ok(got, want), (got, want)

    # backtest summary statistics
    for _ in range(n):
        p = [float(x) for x in rng.normal(0.001, 0.02, size=int(rng.integers(2, 120)))]
        got = profit_metrics(p)
        want = oracles.backtest(p)
        for key in ("overall", "cumulative", "std_dev", "sharpe"):
            assert rel_ok(getattr(got, key), want[key]), (key, getattr(got, key), want[key])

    elapsed = time.perf_counter() - started
    print(f"oracle fixtures: {5 * n} in {elapsed:.2f}s")
    assert elapsed < 10.0


# -- 2 -----------------------------------------------------------------------

@pytest.mark.criterion(2, C2)
def test_gradient_checks():
    task = synthetic.marker_task(n_windows=12, seed=11)
    rng = np.random.default_rng(5)
    worst_r = worst_p = 0.0
    for point in range(20):
        w = rng.normal(scale=0.1, size=HASH_SIZE)
        diffs = pair_diffs(task.pairs)
        worst_r = max(worst_r, grad_check(lambda x: reward_loss_grad(x, diffs), w, seed=point))

        sft = Policy(rng.normal(scale=0.1, size=HASH_SIZE), task)
        pol_w = rng.normal(scale=0.1, size=HASH_SIZE)
        rm = RewardModel(rng.normal(scale=0.1, size=HASH_SIZE))
        samples = [(win, task(win)[int(rng.integers(4))]) for win in task.windows]
        beta = float(rng.uniform(0.05, 1.0))
        obj = lambda x: ppo_objective_grad(x, Policy(x, task), sft, rm, samples, beta)  # noqa: E731
        worst_p = max(worst_p, grad_check(obj, pol_w, seed=point))
    print(f"max relative gradient error: reward {worst_r:.2e}, ppo {worst_p:.2e}")
    assert worst_r < 1e-5 and worst_p < 1e-5


# -- 3 -----------------------------------------------------------------------

@pytest.mark.criterion(3, C3)
def test_closed_form_anchors():
    rng = np.random.default_rng(3)
    win = rand_window(rng)
    pair = ComparisonPair(win, MovementLabel.POSITIVE, rand_response(rng, "Positive"), rand_response(rng, "Negative"), 1)
    assert abs(reward_loss(RewardModel(), [pair]) - math.log(2)) <= 1e-12

    cands = canonical_candidates(win)
    sft = Policy(sparse_weights(rng), canonical_candidates)
    rm = RewardModel(sparse_weights(rng), 0.3)
    for c in cands:
        assert ppo_objective(sft.copy(), sft, rm, win, c, 0.7) == -reward_score(rm, win, c)
    assert max_abs_log_ratio(sft.copy(), sft, [win]) == 0.0

    truths = [MovementLabel.POSITIVE, MovementLabel.NEGATIVE] * 5
    perfect = [PredictedLabel(t.value) for t in truths]
    assert mcc(confusion(perfect, truths)) == 1.0
    assert mcc(ConfusionCounts(7, 0, 3, 0)) == 1.0


# -- 4 -----------------------------------------------------------------------

@pytest.mark.criterion(4, C4)
def test_flip_mock_harvest(tmp_path, capsys):
    paths = synthetic.write_flip_fixture(tmp_path)
    out = tmp_path / "run"
    code = cli.main(["explain", "--backend", "mock", "--script", str(paths["script"]), "--summaries",
                     str(paths["summaries"]), "--prices", str(paths["prices"]), "--out", str(out), "--jobs", "1"])
    res = json.loads(capsys.readouterr().out)
    assert code == 0
    assert res["pairs"] == 45 and res["demos"] == 40 and res["unresolved"] == 15

    per_episode = defaultdict(list)
    for e in records.read_jsonl(out / "sessions.jsonl"):
        meta = e["request"]["meta"]
        per_episode[(meta["stock"], meta["date"])].append(e["template"])
    demos = [(d["window"]["stock"], d["window"]["target_date"]) for d in records.read_jsonl(out / "demos.jsonl")]
    assert len(demos) == 40
    for key in demos:
        assert per_episode[key] == ["explain"], key
    by_len = Counter(len(v) for v in per_episode.values())
    assert by_len == {1: 40, 3: 15, 5: 15, 7: 30}
    assert sum(len(v) for v in per_episode.values()) == 370
    # every scripted reply was consumed
    assert ScriptedBackend.from_file(paths["script"]).remaining() == 370


# -- 5 -----------------------------------------------------------------------

@pytest.mark.criterion(5, C5)
def test_marker_task_training():
    started = time.perf_counter()
    rows = []
    for seed in range(10):
        task = synthetic.marker_task(seed=seed)
        cfg = TrainConfig(seed=seed)
        assert (cfg.reward_epochs, cfg.reward_lr) == (1, 2e-4)
        rm, _ = train_reward(task.pairs, cfg)
        acc = ranking_accuracy(rm, task.pairs)
        sft, _ = sft_train(task.demos, task, cfg)
        pol, _ = train_ppo(sft, task.windows, rm, cfg)
        before, after = expected_reward(sft, task.windows, rm), expected_reward(pol, task.windows, rm)
        rows.append((seed, acc, before, after))
        print(f"seed {seed}: ranking accuracy {acc:.3f}, expected reward {before:.6e} -> {after:.6e}")
    elapsed = time.perf_counter() - started
    print(f"marker task: {elapsed:.1f}s")
    assert all(acc >= 0.95 for _, acc, _, _ in rows)
    assert all(after > before for *_, before, after in rows)
    assert elapsed < 60.0


# -- 6 -----------------------------------------------------------------------

@pytest.mark.criterion(6, C6)
def test_best_of_n_dominance():
    rng = np.random.default_rng(6)
    win = rand_window(rng)
    cands = [rand_response(rng) for _ in range(8)]
    policy = Policy(sparse_weights(rng, scale=0.5), lambda _w: cands, 1.0)
    rm = RewardModel(sparse_weights(rng, scale=0.5))
    oracle_score = {c.raw: oracles.dense_dot(rm.weights, oracle_feats(win, c)) for c in cands}
    means = {}
    for n in (1, 4):
        total = 0.0
        for draw in range(1000):
            got = generate_candidates(policy, win, SamplerConfig(n=n, seed=draw))
            idx, best = best_of_n(rm, win, got)
            scores = [oracle_score[c.raw] for c in got]
            want = 0
            for i in range(1, len(scores)):
                if scores[i] > scores[want]:
                    want = i
            assert idx == want
            total += oracle_score[best.raw]
        means[n] = total / 1000
    print(f"mean selected reward: n=1 {means[1]:.4f}, n=4 {means[4]:.4f}")
    assert means[4] > means[1]


# -- 7 -----------------------------------------------------------------------

def brute_force_representatives(tweets, params=ClusterParams()):
    emb = HashingEmbedder()
    low = reduce_dims(emb.embed([t.text for t in tweets]), params.target_dim)
    eps = params.eps if params.eps is not None else auto_eps(low, params.eps_percentile, params.min_cluster_size)
    labels = cluster_density(low, params.min_cluster_size, eps).labels
    groups = defaultdict(list)
    for i, lab in enumerate(labels):
        if lab >= 0:
            groups[lab].append(i)
    weights = oracles.ctfidf({c: [w for i in idx for w in oracles.words(tweets[i].text)] for c, idx in groups.items()})
    out = []
    for c in sorted(groups):
        idx = groups[c]
        k = oracles.best_member([tweets[i].text for i in idx], [tweets[i].shares for i in idx],
                                [tweets[i].id for i in idx], weights[c])
        out.append(tweets[idx[k]])
    return out


@pytest.mark.criterion(7, C7)
@pytest.mark.parametrize("seed", range(8))
def test_clustering_oracle_small_corpora(seed):
    rng = np.random.default_rng(seed)
    n_topics = int(rng.integers(2, 5))
    tweets, _ = synthetic.topic_day(n_topics=n_topics, topic_size=int(rng.integers(12, 22)),
                                    total=int(rng.integers(n_topics * 22, 101)), seed=seed)
    assert len(tweets) <= 100
    picked = [t for t, _ in select_representatives(DailyCorpus(AAPL, tweets[0].day, tuple(tweets)), HashingEmbedder())]
    assert picked == brute_force_representatives(tweets)


@pytest.mark.criterion(7, C7)
@pytest.mark.parametrize("seed", range(3))
def test_busy_day_reduction(seed):
    tweets, _ = synthetic.topic_day(seed=seed)
    assert len(tweets) == 469
    out = representative_tweets(DailyCorpus(AAPL, tweets[0].day, tuple(tweets)), HashingEmbedder())
    print(f"seed {seed}: 469 tweets -> {len(out)} representatives")
    assert 8 <= len(out) <= 24


# -- 8 -----------------------------------------------------------------------

def fuzz_reply(rng, tickers):
    lines = []
    for _ in range(int(rng.integers(0, 9))):
        kind = int(rng.integers(7))
        t = str(rng.choice(tickers + ["ZZZ", "aapl", "$MSFT"]))
        if kind == 0:
            lines.append(f"{t}: {rng.uniform(-1, 2):.4f}")
        elif kind == 1:
            lines.append(f"- **{t}** = {rng.choice(['nan', 'inf', '-inf', '1e308', '0', '-0.01', '.5'])}")
        elif kind == 2:
            lines.append(f"{t} weight {rng.random():.2f}")
        elif kind == 3:
            lines.append(rand_text(rng))
        elif kind == 4:
            lines.append(f"{t}:{int(rng.integers(0, 100))}%")
        elif kind == 5:
            lines.append("".join(chr(int(c)) for c in rng.integers(32, 127, size=int(rng.integers(0, 40)))))
        else:
            lines.append(f"  * {t} : {rng.uniform(0, 1e-300):.3e}")
    return "\n".join(lines)


@pytest.mark.criterion(8, C8)
def test_backtest_arithmetic_and_weight_fuzz():
    r = profit_metrics([0.1, -0.05])
    assert r.overall == 0.05
    # 0.045 has no exact double: the compounded gain of the stored inputs, rounded once,
    # is the neighbouring double, and nothing looser than that is accepted
    exact = (Fraction(1) + Fraction(0.1)) * (Fraction(1) + Fraction(-0.05)) - 1
    assert r.cumulative == float(exact)
    assert abs(r.cumulative - 0.045) <= math.ulp(0.045)

    rng = np.random.default_rng(8)
    for _ in range(500):
        p = rng.normal(0.001, 0.02, size=int(rng.integers(2, 80)))
        k = float(10 ** rng.uniform(-3, 3))
        a, b = profit_metrics(p.tolist()), profit_metrics((k * p).tolist())
        assert a.sharpe_defined and b.sharpe_defined
        assert abs(a.sharpe - b.sharpe) <= 1e-12 * abs(a.sharpe)

    tech = list(UNIVERSE["Technology"])
    backend = ScriptedBackend()
    replies = [fuzz_reply(rng, tech) for _ in range(500)]
    for reply in replies:
        backend.push("portfolio", reply)
    for i in range(500):
        stocks = list(rng.choice(tech, size=int(rng.integers(1, len(tech) + 1)), replace=False))
        w = generate_weights(backend, D0, {s: "outlook" for s in stocks})
        vals = list(w.weights.values())
        assert sorted(w.weights) == sorted(stocks)
        assert all(v >= 0 and math.isfinite(v) for v in vals)
        assert abs(math.fsum(vals) - 1.0) <= 1e-9


# -- 9 and 10 ------------------------------------------------------------------

CHAIN = ["cluster", "summarize", "explain", "train-sft", "train-reward", "train-ppo", "predict", "evaluate",
         "portfolio", "backtest"]
TRAIN = {"sft_lr": 0.5, "reward_lr": 0.05, "reward_epochs": 3, "ppo_lr": 0.05, "ppo_batch_size": 16}


def run_chain(out, tweets, prices, capsys, *extra):
    results = {}
    for cmd in CHAIN:
        argv = [cmd, "--out", str(out), "--tweets", str(tweets), "--prices", str(prices), "--jobs", "1", *extra]
        code = cli.main(argv)
        captured = capsys.readouterr()
        assert code == 0, (cmd, captured.err)
        results[cmd] = json.loads(captured.out)
    return results


def artifacts(directory):
    skip = {"runlog.jsonl", "sessions.jsonl"}
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def market(tmp_path_factory):
    d = tmp_path_factory.mktemp("market")
    tweets, prices = synthetic.write_market(d, n_days=30, seed=4)
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"train": TRAIN}))
    return tweets, prices, cfg


@pytest.mark.criterion(9, C9)
def test_replay_is_byte_identical(tmp_path, capsys, market):
    tweets, prices, cfg = market
    first = tmp_path / "first"
    run_chain(first, tweets, prices, capsys, "--config", str(cfg))
    again = tmp_path / "again"
    assert cli.main(["replay", "--journal", str(first / "sessions.jsonl"), "--out", str(again)]) == 0
    capsys.readouterr()
    a, b = artifacts(first), artifacts(again)
    assert sorted(a) == sorted(b)
    assert {"predictions.jsonl", "report.json", "backtest_report.json", "policy.bin", "reward_model.bin"} <= set(a)
    for name in a:
        assert a[name] == b[name], name


@pytest.mark.criterion(9, C9)
def test_training_bitwise_reproducible(tmp_path):
    task = synthetic.marker_task(n_windows=30, seed=9)
    cfg = TrainConfig(seed=9, ppo_batch_size=16, ppo_lr=0.05, sft_lr=0.5)
    blobs = []
    for k in range(2):
        rm, _ = train_reward(task.pairs, cfg)
        sft, _ = sft_train(task.demos, task, cfg)
        pol, _ = train_ppo(sft, task.windows, rm, cfg)
        save_reward_model(tmp_path / f"rm{k}.bin", rm)
        save_policy(tmp_path / f"sft{k}.bin", sft)
        save_policy(tmp_path / f"pol{k}.bin", pol)
        blobs.append([(tmp_path / f"{n}{k}.bin").read_bytes() for n in ("rm", "sft", "pol")])
    assert blobs[0] == blobs[1]
    other = train_ppo(sft, task.windows, rm, TrainConfig(seed=10, ppo_batch_size=16, ppo_lr=0.05))[0]
    assert not np.array_equal(other.weights, pol.weights)


@pytest.mark.criterion(10, C10)
def test_end_to_end_scripted_mock(tmp_path, capsys, market):
    tweets, prices, cfg = market
    # record the replies once, then drive the whole chain from that script
    recorded = tmp_path / "recorded"
    run_chain(recorded, tweets, prices, capsys, "--config", str(cfg))
    script = tmp_path / "script.jsonl"
    script.write_bytes((recorded / "sessions.jsonl").read_bytes())

    started = time.perf_counter()
    out = tmp_path / "e2e"
    res = run_chain(out, tweets, prices, capsys, "--config", str(cfg), "--backend", "mock", "--script", str(script))
    elapsed = time.perf_counter() - started
    print(f"end-to-end with the scripted mock: {elapsed:.1f}s, {json.dumps(res['explain'])}")
    assert elapsed < 120.0

    n_stocks = len({json.loads(line)["stock"] for line in prices.read_text().splitlines()})
    assert n_stocks == 5
    report = json.loads((out / "report.json").read_text())
    assert report["n_samples"] == res["predict"]["predictions"] > 0
    assert sum(report["counts"].values()) == report["n_samples"]
    assert 0.0 <= report["accuracy"] <= 1.0 and -1.0 <= report["mcc"] <= 1.0
    assert set(report["runs"]) == {"all", "informative"}
    bt = json.loads((out / "backtest_report.json").read_text())
    for key in ("overall", "cumulative", "std_dev", "sharpe"):
        assert math.isfinite(bt[key])
    assert set(bt["baselines"]) == {"equal_1_over_N", "positive_only"}
    assert artifacts(out) == artifacts(recorded)
