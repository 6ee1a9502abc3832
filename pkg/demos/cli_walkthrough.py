"""
The command line, end to end
============================

Every stage is a ``sep`` subcommand that reads and writes JSONL files in one
output directory. Here the rule-based backend stands in for a chat model, so
the whole chain runs offline in a few seconds. ``sep replay`` then rebuilds
every artifact from the recorded session alone.
"""

# %%
import json
import tempfile
from pathlib import Path

from sep import cli
from sep.synthetic import write_market

root = Path(tempfile.mkdtemp())
tweets, prices = write_market(root, n_days=30, seed=4)
cfg = root / "config.json"
cfg.write_text(json.dumps({"train": {"sft_lr": 0.5, "reward_lr": 0.05, "reward_epochs": 3,
                                     "ppo_lr": 0.05, "ppo_batch_size": 16}}))

out = root / "run"
for cmd in ("cluster", "summarize", "explain", "train-sft", "train-reward", "train-ppo", "predict",
            "evaluate", "portfolio", "backtest"):
    assert cli.main([cmd, "--out", str(out), "--tweets", str(tweets), "--prices", str(prices),
                     "--config", str(cfg), "--jobs", "1"]) == 0

# %%
report = json.loads((out / "report.json").read_text())
print({k: report[k] for k in ("accuracy", "mcc", "n_samples")})
print(json.loads((out / "backtest_report.json").read_text())["sharpe"])

# %%
again = root / "again"
cli.main(["replay", "--journal", str(out / "sessions.jsonl"), "--out", str(again)])
same = all((out / p.name).read_bytes() == p.read_bytes() for p in again.iterdir())
print("replay identical:", same)
