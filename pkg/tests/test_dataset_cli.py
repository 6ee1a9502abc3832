import datetime as dt
import json

import pytest
from hypothesis import given, settings, strategies as st

from sep import cli, records
from sep.core import FactSummary, MovementLabel, PriceBar, StockSymbol
from sep.dataset import build_windows, split_dataset, split_days
from sep.errors import InsufficientData, InvalidValue
from sep.synthetic import trading_days, write_flip_fixture

from conftest import AAPL, day

MSFT = StockSymbol.lookup("MSFT")


def bars(stock, closes, start=0):
    return [PriceBar(stock, day(start + k), c, c, c, c, c, 1) for k, c in enumerate(closes)]


def test_split_days_floor():
    days = trading_days(dt.date(2014, 1, 2), 757)
    train, test = split_days(days)
    assert (len(train), len(test)) == (605, 152)
    assert max(train) < min(test)
    with pytest.raises(InsufficientData):
        split_days(days[:1])
    with pytest.raises(InvalidValue):
        split_days(days, 1.0)


class S:
    def __init__(self, d, t="AAPL"):
        self.d, self.t = d, t


def test_split_dataset_ten_days():
    samples = [S(day(k)) for k in range(10)]
    train, val, test = split_dataset(samples, day_of=lambda s: s.d, tiebreak=lambda s: s.t)
    assert [len(train), len(val), len(test)] == [7, 1, 2]
    assert val[0].d == day(7) and all(s.d <= day(6) for s in train)


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(30))))
def test_split_ignores_input_order(perm):
    samples = [S(day(k // 3), "ABC"[k % 3]) for k in range(30)]
    shuffled = [samples[i] for i in perm]
    kw = dict(day_of=lambda s: s.d, tiebreak=lambda s: s.t)
    assert split_dataset(shuffled, **kw) == split_dataset(samples, **kw)
    train, val, test = split_dataset(samples, **kw)
    assert max(s.d for s in train + val) < min(s.d for s in test)


def test_build_windows():
    s = [FactSummary(AAPL, day(1), ("beat",), True)]
    eps = build_windows(s, bars(AAPL, [10, 11, 12, 11]) + bars(MSFT, [5, 5, 6, 7]), T=2)
    assert [(w.stock.ticker, w.target_day) for w, _ in eps] == [
        ("AAPL", day(2)), ("MSFT", day(2)), ("AAPL", day(3)), ("MSFT", day(3))]
    w, truth = eps[0]
    assert [x.day for x in w.summaries] == [day(0), day(1)] and w.eve.facts == ("beat",)
    assert truth is MovementLabel.POSITIVE and eps[2][1] is MovementLabel.NEGATIVE
    assert eps[1][1] is MovementLabel.POSITIVE
    assert len(build_windows(s, bars(AAPL, [10, 11, 12, 11]), T=2, stocks=["MSFT"])) == 0
    assert len(build_windows(s, bars(AAPL, [10, 11, 12, 11]), T=2, start=day(3))) == 1


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err.strip().splitlines()[-1]) if err.strip() else None)


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"ratio": 0.8, "colour": "red"}))
    code, _, err = run_cli(capsys, "evaluate", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert code == 2 and err["error"] == "ConfigError" and "colour" in err["message"]
    bad.write_text(json.dumps({"ratio": 1.5}))
    assert run_cli(capsys, "evaluate", "--config", str(bad), "--out", str(tmp_path / "o"))[0] == 2
    fx = write_flip_fixture(tmp_path / "fx")
    code, _, err = run_cli(capsys, "explain", "--backend", "mock", "--out", str(tmp_path / "o"),
                           "--prices", str(fx["prices"]), "--summaries", str(fx["summaries"]))
    assert code == 2 and "--script" in err["message"]
    assert run_cli(capsys, "explain", "--out", str(tmp_path / "o"), "--from", "someday")[0] == 2


def test_missing_input_exit_3(tmp_path, capsys):
    code, _, err = run_cli(capsys, "evaluate", "--out", str(tmp_path), "--pred", str(tmp_path / "none.jsonl"),
                           "--prices", str(tmp_path / "none.jsonl"))
    assert code == 3 and err["error"] == "DataError"


def test_evaluate_report(tmp_path, capsys):
    prices = bars(AAPL, [10, 11, 10, 10, 12])
    records.write_jsonl(tmp_path / "prices.jsonl", map(records.price_to_dict, prices))
    preds = [
        {"stock": "AAPL", "date": day(1).isoformat(), "label": "Positive", "eve_informative": True},
        {"stock": "AAPL", "date": day(2).isoformat(), "label": "Positive", "eve_informative": False},
        {"stock": "AAPL", "date": day(3).isoformat(), "label": "Neutral", "eve_informative": True},
        {"stock": "AAPL", "date": day(4).isoformat(), "label": "Positive", "eve_informative": True},
    ]
    records.write_jsonl(tmp_path / "pred.jsonl", preds)
    out = tmp_path / "run"
    code, res, _ = run_cli(capsys, "evaluate", "--out", str(out), "--pred", str(tmp_path / "pred.jsonl"),
                           "--prices", str(tmp_path / "prices.jsonl"))
    assert code == 0 and res["n_samples"] == 4 and res["accuracy"] == 0.5
    report = json.loads((out / "report.json").read_text())
    assert report["counts"] == {"tp": 2, "fp": 2, "tn": 0, "fn": 0}
    assert report["runs"]["informative"]["n_samples"] == 3
    assert (out / "runlog.jsonl").exists()


def test_explain_flip_fixture_pairs(tmp_path, capsys):
    paths = write_flip_fixture(tmp_path)
    out = tmp_path / "run"
    code, res, _ = run_cli(capsys, "explain", "--backend", "mock", "--script", str(paths["script"]),
                           "--summaries", str(paths["summaries"]), "--prices", str(paths["prices"]),
                           "--out", str(out), "--jobs", "1")
    assert code == 0
    assert res["episodes"] == 100 and res["demos"] == 40 and res["pairs"] == 45 and res["unresolved"] == 15
    pairs = list(records.read_jsonl(out / "pairs.jsonl"))
    assert sorted({p["resolved_iteration"] for p in pairs}) == [1, 2, 3]
    assert sum(1 for _ in records.read_jsonl(out / "sessions.jsonl")) == 370
