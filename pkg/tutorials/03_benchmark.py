"""
A small prediction benchmark
============================

The experiment harness simulates training and validation fleets, fits the
nonparametric prior and a fixed-basis baseline to the same data, and
scores predictions of validation units truncated at fractions of their
actual life. The same experiment is available as ``fdadegrade benchmark``.
"""

import io

import numpy as np

from fdadegrade.simulation import ExperimentConfig, run_experiment

# %%
# Model 2 has two components, a linear and a quadratic one. The baseline
# assumes the one-function t^2 form of Model 1, so it is misspecified here.
# Five replications with 200 bootstrap draws keep the run to about a minute.
config = ExperimentConfig(
    model_id=2,
    scenario="sparse",
    sampling="nonuniform",
    replications=5,
    n_bootstrap=200,
    methods=("fpca", "baseline"),
    baseline_basis="square",
    seed=11,
)
result = run_experiment(config)

# %%
# Median relative error of the predicted total life, in percent, at each
# degradation percentile.
print("percentile   fpca   baseline")
for p, a, b in zip(config.percentiles, result.summary("fpca"), result.summary("baseline")):
    print(f"   {p:.0%}      {100 * a:5.2f}   {100 * b:6.2f}")

# %%
# Coverage of the 90% bootstrap intervals and their mean length.
cov = result.summary("fpca", "coverage")
length = result.summary("fpca", "ci_length")
print("coverage:", np.round(cov, 2))
print("mean interval length:", np.round(length, 3))

# %%
# The per-replication table is plain CSV, one row per method, percentile
# and replication; the manifest records the full configuration.
buf = io.StringIO()
result.write_table(buf)
print(buf.getvalue().splitlines()[0])
print("components chosen per replication:", result.manifest()["num_components"])
