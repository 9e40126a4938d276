import numpy as np
import pytest

from conftest import random_indices, random_small_model
from fieldwise.schema import read_delimited, encode_rows, write_delimited
from fieldwise.synth import (
    PlantedSpec, generate_planted, oracle_dense_predict, oracle_lr, planted_auc, planted_model, relative_error,
)


def test_zero_planted_model_gives_fair_coins():
    data, model, bayes = generate_planted(PlantedSpec((5, 6, 7), weight_scale=0.0), 10000)
    assert 0.45 <= np.mean(data.labels > 0) <= 0.55
    assert bayes == pytest.approx(np.log(2))


def test_huge_scores_are_deterministic():
    data, model, bayes = generate_planted(PlantedSpec((3, 3), rank=2, weight_scale=1e3), 500)
    scores = model.scores(data.indices)
    assert bayes < 1e-6
    big = np.abs(scores) > 50
    assert np.all(np.sign(scores[big]) == data.labels[big])


def test_noise_raises_bayes():
    spec = PlantedSpec((4, 4), rank=2, weight_scale=2.0)
    _, _, clean = generate_planted(spec, 2000)
    _, _, noisy = generate_planted(PlantedSpec((4, 4), rank=2, weight_scale=2.0, noise=0.2), 2000)
    assert noisy > clean


def test_deterministic_and_offsets_independent():
    spec = PlantedSpec((3, 4, 5), seed=9)
    a, _, _ = generate_planted(spec, 300)
    b, _, _ = generate_planted(spec, 300)
    c, _, _ = generate_planted(spec, 300, seed_offset=1)
    assert a.indices.tobytes() == b.indices.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert not np.array_equal(a.indices, c.indices)
    assert planted_model(spec).to_bytes() == generate_planted(spec, 1, seed_offset=4)[1].to_bytes()


def test_planted_ranks_capped():
    assert planted_model(PlantedSpec((2, 5), rank=3)).ranks == (2, 3)


@pytest.mark.parametrize("kwargs", [dict(cardinalities=(0, 2)), dict(cardinalities=(2,), noise=0.5),
                                    dict(cardinalities=(2,), rank=-1)])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        PlantedSpec(**kwargs)


def test_written_data_round_trips(tmp_path):
    data, _, _ = generate_planted(PlantedSpec((3, 4)), 50)
    write_delimited(tmp_path / "d.tsv", data)
    rows, _ = read_delimited(tmp_path / "d.tsv", "\t", False)
    again = encode_rows(rows, data.vocab)
    assert np.array_equal(again.indices, data.indices)
    assert np.array_equal(again.labels, data.labels)


def test_dense_predict_agrees_on_many_models(rng):
    for _ in range(1000):
        model = random_small_model(rng)
        x = random_indices(rng, model.dims, 1)[0]
        assert abs(model.predict_score(x) - oracle_dense_predict(model, x)) <= 1e-10


def test_relative_error_metric():
    assert relative_error([0.5], [0.5 + 1e-7]) == pytest.approx(1e-7)
    assert relative_error([100.0], [101.0]) == pytest.approx(1 / 101)
    assert relative_error([], []) == 0.0


def test_oracle_lr_reduces_loss():
    data, _, _ = generate_planted(PlantedSpec((3, 4), weight_scale=1.5), 400)
    w, train_ll, val_ll = oracle_lr(data, 1e-2, val=data)
    assert train_ll < np.log(2)
    assert val_ll == pytest.approx(train_ll)
    assert w.shape == (7,)


def test_planted_auc_above_chance():
    data, model, _ = generate_planted(PlantedSpec((5, 5, 5), weight_scale=1.0), 2000)
    assert planted_auc(model, data) > 0.6
