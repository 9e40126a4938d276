# %% [markdown]
# # Capacity against rank
#
# Train one model per rank until the train Logloss reaches a common target and
# record the parameter count next to the norm sum that drives the bound.

# %%
from fieldwise import TrainConfig, bound_trend_experiment
from fieldwise.synth import PlantedSpec, generate_planted

spec = PlantedSpec(cardinalities=(12,) * 4, rank=3, weight_scale=0.5, noise=0.1, seed=0)
data, _, bayes = generate_planted(spec, 10_000)
target = bayes + 0.05
print("bayes %.4f  target %.4f" % (bayes, target))

# %%
cfg = TrainConfig(learning_rate=0.3, batch_size=256, max_epochs=100)
table = bound_trend_experiment(data, cfg, [1, 2, 3, 4, 6, 8], target,
                               progress=lambda row: print("rank %d done after %d epochs" % (row.rank, row.epochs)))

# %%
for line in table.lines():
    print(line)

# %% [markdown]
# Parameter count grows linearly with rank. The norm sum need not: extra
# rank can let the fit reach the same loss with smaller weights, and very
# large ranks can push it back up.
