"""Train a reduced MassNet on synthetic frames and set it against the baselines.

Uses the settings in ``configs/synthetic_smoke.toml`` (depth 2, halved
widths, 64x64 input, 20 epochs). About a minute and a half on one CPU core.
"""

import logging
import time
from pathlib import Path

from massnet.config import load_config
from massnet.evaluation import LinearFitBaseline, StatisticalFeatureRegressor, evaluate_report, render_table
from massnet.network import count_parameters
from massnet.synthetic import generate_dataset
from massnet.training import MassNetRegressor

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "synthetic_smoke.toml")
ds = generate_dataset(50, 6, sensor="saturating", seed=3)
train, val, test = cfg.split.apply(ds).resolve(ds)
print(f"{len(train)} train / {len(val)} val / {len(test)} test frames, subject-disjoint")
print(f"model: {count_parameters(cfg.model) / 1e6:.2f}M parameters")

rows = []
for reg in (LinearFitBaseline(), StatisticalFeatureRegressor()):
    rows.append((reg.name, evaluate_report(reg.fit(train, val), test)))

t0 = time.time()
net = MassNetRegressor(cfg.model, cfg.train, cfg.preprocess).fit(train, val)
print(f"trained {net.state.epoch} epochs in {time.time() - t0:.0f}s, best epoch {net.state.best_epoch}")
report = evaluate_report(net, test)
rows.append(("MassNet (reduced)", report))

print()
print(render_table(rows))
print()
print(report.render("MassNet by posture"))

# the embedding loss should have fallen along with the regression loss
first, last = net.state.history[0], net.state.history[-1]
print(f"\nl_mae {first['l_mae']:.2f} -> {last['l_mae']:.2f},  l_con {first['l_con']:.2f} -> {last['l_con']:.2f}")
