"""Kernelized Stein discrepancy as a distribution-shift meter: a classifier is
closest (in KSD) to the data it was trained on; rigidly shifting the features
away from the training distribution raises the discrepancy.

Run from the repository root:  python3 demos/distribution_shift.py
"""

from hdexplain import (
    RBFKernel,
    TrainConfig,
    build_cache,
    gen_two_moons,
    ksd_shift_experiment,
    median_heuristic_gamma,
    train,
)

data = gen_two_moons(500, noise_std=0.1, seed=3)
model = train(data, TrainConfig(seed=3))
cache = build_cache(model, data, variant="raw")
kernel = RBFKernel(median_heuristic_gamma(cache.z))

shifts = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0]
results = ksd_shift_experiment(model, data, shifts, kernel)

print("feature shift (per coordinate) vs KSD V-statistic")
print(f"{'shift':>6} {'ksd':>10}  ")
baseline = results[0][1]
for shift, value in results:
    bar = "#" * int(40 * value / results[-1][1])
    print(f"{float(shift):>6.2f} {value:>10.2f}  {bar}")
peak = results[-1][1]
print(f"\ntraining data sits near the minimum ({baseline:.2f}); displacing the "
      f"features grows the discrepancy, to {peak / baseline:.1f}x at shift 1.0.")
