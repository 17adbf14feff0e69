# %% [markdown]
# # Toy data: points on random circles
#
# Each set puts N points on one circle with a random center and radius.
# The points sit at equal angular spacing plus noise, so a model that
# captures within-set dependence should reproduce the spacing of 2 pi / N.
# This script trains briefly; the acceptance suite trains for 200k sets.

# %%
import numpy as np

from setflow import ModelConfig, SetFlowModel, TrainConfig, reported_per_entity_ll, sample_sets, train
from setflow.data import CircleSource, find_circular_peaks, gen_circle_set, peak_spacings, phase_histogram

rng = np.random.default_rng(0)
pts, spec = gen_circle_set(3, rng)
print(spec)
print(pts)

# %% [markdown]
# Train the default toy model for a short while.

# %%
model = SetFlowModel(ModelConfig(), 0)
test_sets = [gen_circle_set(s, np.random.default_rng(100 + s))[0] for s in (3, 4, 5, 6)]
print("identity", reported_per_entity_ll(model, test_sets).mean)
state = train(model, CircleSource(), TrainConfig(steps=500, log_interval=100), np.random.default_rng(0))
for row in state.log:
    print(row.step, round(row.per_entity_ll, 3))
print("trained", reported_per_entity_ll(model, test_sets).mean)

# %% [markdown]
# Fit a circle to each sampled 3-point set, rotate so phases line up,
# and look for peaks in the histogram of aligned phases.

# %%
X, _ = sample_sets(model, 2000, 3, rng=1)
hist = phase_histogram(X)
peaks = find_circular_peaks(hist.counts, hist.edges)
print("peaks", peaks, "spacings", peak_spacings(peaks))
