# %% [markdown]
# # Recovering a planted field-wise model
#
# Draw labelled data from a known low-rank field-wise model, fit a fresh one
# with Adagrad and compare it with the generator.

# %%
import numpy as np

from fieldwise import RankPolicy, TrainConfig, evaluate, init_model, train
from fieldwise.synth import PlantedSpec, generate_planted, planted_auc

spec = PlantedSpec(cardinalities=(10, 12, 8, 15), rank=2, weight_scale=0.6, noise=0.05, seed=1)
train_set, planted, bayes_train = generate_planted(spec, 20_000)
val_set, _, _ = generate_planted(spec, 2_000, seed_offset=1)
test_set, _, bayes_test = generate_planted(spec, 2_000, seed_offset=2)
print("fields:", train_set.vocab.names, "cardinalities:", train_set.vocab.dims)
print("positive rate: %.3f" % np.mean(train_set.labels > 0))

# %% [markdown]
# The planted model is the best any predictor can do. Its mean label entropy
# on the test draw is the Logloss floor.

# %%
print("bayes logloss (test): %.4f" % bayes_test)
print("planted auc   (test): %.4f" % planted_auc(planted, test_set))

# %%
model = init_model(train_set.vocab, RankPolicy.constant(2), init_scale=0.1, seed=0)
print("parameters:", model.n_params, "ranks:", model.ranks)

cfg = TrainConfig(learning_rate=0.1, batch_size=256, reg_period=1, reg_lambda=1e-5, max_epochs=30, patience=3)
trained, history = train(model, train_set, val_set, cfg)
for line in history.lines():
    print(line)
print("best epoch:", history.best_epoch)

# %%
report = evaluate(trained, test_set)
print(report.format())
print("excess logloss over bayes: %.4f" % (report.logloss - bayes_test))
