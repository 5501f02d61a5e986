# %% [markdown]
# # Forecasting the DC motor
#
# Simulate a few recordings, check the power balance and compare a plain
# linear forecaster with one fed by the encoder. The settings here are kept
# small so the script runs in about a minute; the acceptance suite runs the
# full protocol.

# %%
import numpy as np

from nbge.dcmotor import MotorParams, energy_audit, simulate
from nbge.experiment import ExperimentConfig, format_table, make_dataset, run_experiment
from nbge.training import Scenario

rec = simulate(MotorParams(), fs=1000, duration=60, seed=1)
audit = energy_audit(rec)
print({k: round(float(v), 4) for k, v in audit.items()})

# %%
cfg = ExperimentConfig(n_recordings=2, n_samples=120, epochs=15, runs=4, keep=2)
ds = make_dataset(cfg)
sc = Scenario(100, 500)
print(ds.windows.shape, {k: len(v) for k, v in ds.split.items()})

# %%
summaries = []
for informed in (False, True):
    res, best = run_experiment(cfg, sc, "linear", informed=informed, dataset=ds, with_sdtw=False)
    summaries.append(res.summary())
print(format_table(summaries, "md"))

# %% [markdown]
# The voltage channel is an independently drawn square wave, so no model can
# predict far beyond its current level. Most of what the encoder gains comes
# from the speed channel.

# %%
x, y = sc.split(ds.part("test"))
pred = best.predict(x)
print("per-channel MSE:", np.mean((pred - y) ** 2, axis=(0, 2)).round(3), "target variance:", y.var(axis=(0, 2)).round(3))
