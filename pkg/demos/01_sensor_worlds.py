"""Why summing a pressure frame is not enough.

On an ideal mat every cell reports its share of the load, so a frame's sum
is the body weight and a straight line fits perfectly. Real mats saturate,
disagree from cell to cell and add noise; the same line then misses by
kilograms. Run with ``python demos/01_sensor_worlds.py``.
"""

import numpy as np

from massnet.data import split_weight_binned
from massnet.evaluation import LinearFitBaseline, evaluate_report
from massnet.synthetic import generate_dataset

# %% two worlds from the same bodies (same seed, same subjects)
ideal = generate_dataset(50, 6, sensor="ideal", seed=3)
real = generate_dataset(50, 6, sensor="saturating", seed=3)

s = ideal[0]
print(f"subject {s.subject_id}: {s.weight_kg:.2f} kg, frame sum {s.frame.values.sum():.6f}")
print(f"same pose on the saturating mat: frame sum {real[0].frame.values.sum():.3f}")

# %% the linear baseline on each
for name, ds in (("ideal", ideal), ("saturating", real)):
    spec = split_weight_binned(ds, n_bins=5, seed=0, n_val=5, n_test=10)
    train, _, test = spec.resolve(ds)
    report = evaluate_report(LinearFitBaseline().fit(train), test)
    print(f"\n{name} sensor")
    print(report.render())

# %% saturation severity: lower caps lose more of the heavy subjects' load
print("\ncap percentile -> linear MAE (no noise, no gain spread)")
for pct in (95, 90, 80, 70, 50):
    ds = generate_dataset(50, 6, sensor="saturating", cap_percentile=pct, noise_sigma=0.0,
                          gain_spread=0.0, seed=3)
    spec = split_weight_binned(ds, n_bins=5, seed=0, n_val=5, n_test=10)
    train, _, test = spec.resolve(ds)
    mae = evaluate_report(LinearFitBaseline().fit(train), test).mae_mean
    print(f"  {pct:3d}  {mae:6.3f} kg")

sums = np.array([x.frame.values.sum() for x in real])
w = np.array([x.weight_kg for x in real])
print(f"\ncorrelation of frame sum and weight on the saturating mat: {np.corrcoef(sums, w)[0, 1]:.4f}")
