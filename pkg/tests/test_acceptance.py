"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible in
plain ``pytest -v`` output) and then asserts at the stated tolerance.
The two long synthetic experiments (criteria 4 and 8) share one planted
dataset built once per session.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_indices, random_model, random_small_model
from fieldwise.analysis import bound_trend_experiment, eq8_bound, field_importance, rademacher_bound
from fieldwise.cli import main
from fieldwise.metrics import auc, evaluate, mean_logloss
from fieldwise.model import RankPolicy, init_model
from fieldwise.schema import (
    Vocabulary, build_vocabulary, encode_instance, encode_rows, log_transform_numeric, make_specs,
)
from fieldwise.synth import (
    PlantedSpec, generate_planted, oracle_auc, oracle_dense_norms, oracle_dense_predict, oracle_finite_diff,
    oracle_lr, planted_auc, relative_error,
)
from fieldwise.training import TrainConfig, add_dense, loss_gradients, reg_gradients, train


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return report


# shared planted data for criteria 4 and 8
PLANTED = PlantedSpec(cardinalities=(20,) * 5, rank=3, weight_scale=0.5, noise=0.1, seed=0)
N_TRAIN, N_VAL, N_TEST = 50_000, 5_000, 5_000


@pytest.fixture(scope="module")
def planted_sets():
    train_set, planted, train_bayes = generate_planted(PLANTED, N_TRAIN, seed_offset=0)
    val_set, _, _ = generate_planted(PLANTED, N_VAL, seed_offset=1)
    test_set, _, test_bayes = generate_planted(PLANTED, N_TEST, seed_offset=2)
    return dict(train=train_set, val=val_set, test=test_set, planted=planted,
                train_bayes=train_bayes, test_bayes=test_bayes)


def test_criterion_01_gradient_oracle(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    configs = 0
    # every (m, r, lambda) combination twice, with fresh random cardinalities
    grid = [(m, r, lam) for m in (2, 3, 4) for r in (1, 2, 3) for lam in (0.0, 0.1)] * 2
    for m, r, lam in grid:
        dims = tuple(int(x) for x in rng.integers(1, 7, size=m))
        model = random_model(rng, dims, r, scale=0.7)
        X = random_indices(rng, dims, 4)
        y = rng.choice([-1.0, 1.0], 4)
        grads, _ = loss_gradients(model, X, y)
        grads = add_dense(model, grads, reg_gradients(model, lam))
        numeric = oracle_finite_diff(model, X, y, lam, step=1e-6)
        analytic = [a for g in grads for a in (g.u, g.v, g.b)]
        worst = max(worst, max(relative_error(a, f) for a, f in zip(analytic, numeric)))
        configs += 1
    elapsed = time.perf_counter() - start
    ok = configs >= 20 and worst <= 1e-5 and elapsed < 60
    verdict(1, ok, f"configs={configs} max_rel_err={worst:.2e} (<=1e-5) time={elapsed:.1f}s")
    assert ok


def test_criterion_02_factored_vs_dense(verdict):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = {"predict": 0.0, "norms": 0.0, "rademacher": 0.0, "importance": 0.0}

    def gap(a, b):
        return abs(a - b) / max(1.0, abs(b))

    for _ in range(1000):
        model = random_small_model(rng)
        x = random_indices(rng, model.dims, 1)[0]
        worst["predict"] = max(worst["predict"], gap(model.predict_score(x), oracle_dense_predict(model, x)))
        dense = [oracle_dense_norms(model, i) for i in range(model.m)]
        for i, fn in enumerate(model.all_field_norms()):
            worst["norms"] = max(worst["norms"], gap(fn.variance_norm, dense[i][0]), gap(fn.mean_norm, dense[i][1]))
        n = int(rng.integers(1, 10_000))
        dense_rad = math.sqrt(model.m / n) * sum(a + b for a, b in dense)
        worst["rademacher"] = max(worst["rademacher"], gap(rademacher_bound(model, n), dense_rad))
        scores = field_importance(model).scores
        for i in range(model.m):
            worst["importance"] = max(worst["importance"], gap(scores[i], dense[i][0] / model.dims[i]))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-10 and elapsed < 60
    verdict(2, ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" (<=1e-10) time={elapsed:.1f}s")
    assert ok


def test_criterion_03_rank_zero_is_logistic_regression(verdict):
    start = time.perf_counter()
    data = generate_planted(PlantedSpec((4, 5, 6, 3), rank=2, weight_scale=0.8, noise=0.1, seed=3), 1000)[0]
    l2 = 1e-3
    _, oracle_ll, _ = oracle_lr(data, l2)
    model = init_model(data.vocab, RankPolicy.constant(0))
    # weight decay wd * theta is exactly the gradient of (wd / 2) ||theta||^2
    cfg = TrainConfig(learning_rate=0.5, weight_decay=l2, batch_size=data.n, max_epochs=500)
    _, hist = train(model, data, None, cfg)
    diff = abs(hist.records[-1].train_logloss - oracle_ll)
    elapsed = time.perf_counter() - start
    ok = diff <= 1e-3 and elapsed < 60
    verdict(3, ok, f"rank0={hist.records[-1].train_logloss:.6f} lr_oracle={oracle_ll:.6f} "
                   f"gap={diff:.1e} (<=1e-3) time={elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_04_planted_recovery(verdict, planted_sets):
    start = time.perf_counter()
    base = TrainConfig(learning_rate=0.1, batch_size=512, reg_period=1, max_epochs=60, patience=3, seed=0)
    best = None
    # lambda picked on the validation set, as a user would
    for lam in (0.0, 1e-6, 1e-5, 1e-4):
        model = init_model(planted_sets["train"].vocab, RankPolicy.constant(3), 0.1, 0)
        trained, hist = train(model, planted_sets["train"], planted_sets["val"], base.replace(reg_lambda=lam))
        val_ll = min(r.val_logloss for r in hist.records)
        if best is None or val_ll < best[0]:
            best = (val_ll, lam, trained)
    _, lam, trained = best
    report = evaluate(trained, planted_sets["test"])
    planted_test_auc = planted_auc(planted_sets["planted"], planted_sets["test"])
    d_ll = report.logloss - planted_sets["test_bayes"]
    d_auc = abs(report.auc - planted_test_auc)
    elapsed = time.perf_counter() - start
    ok = abs(d_ll) <= 0.02 and d_auc <= 0.01 and elapsed < 300
    verdict(4, ok, f"lambda={lam:g} test_logloss={report.logloss:.4f} bayes={planted_sets['test_bayes']:.4f} "
                   f"gap={d_ll:.4f} (<=0.02) test_auc={report.auc:.4f} planted_auc={planted_test_auc:.4f} "
                   f"gap={d_auc:.4f} (<=0.01) time={elapsed:.0f}s")
    assert ok


def test_criterion_05_regularizer_semantics(verdict):
    start = time.perf_counter()
    data = generate_planted(PlantedSpec((3, 4, 5), rank=2, weight_scale=1.0, seed=4), 60)[0]
    model = init_model(data.vocab, RankPolicy.constant(2), 1.0, 0)
    before = model.all_field_norms()
    snapshots = {}
    cfg = TrainConfig(learning_rate=0.01, reg_lambda=1e3, reg_period=1, batch_size=10, max_epochs=10)
    train(model, data, None, cfg, callback=lambda epoch, m: snapshots.__setitem__(epoch, m.all_field_norms()))
    after = snapshots[10]
    shrunk = all(a.variance_norm < b.variance_norm and a.mean_norm < b.mean_norm for a, b in zip(after, before))
    # lambda = 0 only has to run; the regularizer may move either way
    train(model, data, None, cfg.replace(reg_lambda=0.0))
    elapsed = time.perf_counter() - start
    ok = shrunk and elapsed < 60
    ratio = max(max(a.variance_norm / b.variance_norm, a.mean_norm / b.mean_norm) for a, b in zip(after, before))
    verdict(5, ok, f"every N1/N2 decreased={shrunk} worst after/before={ratio:.3f} time={elapsed:.1f}s")
    assert ok


def test_criterion_06_metric_correctness(verdict):
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    worst = 0.0
    trials = 0
    while trials < 500:
        n = int(rng.integers(2, 13))
        labels = rng.choice([-1, 1], n)
        if len(set(labels.tolist())) < 2:
            continue
        # few distinct values so ties are common
        scores = rng.integers(0, 4, n) * 0.5
        worst = max(worst, abs(auc(scores, labels) - oracle_auc(scores, labels)))
        trials += 1
    vocab = Vocabulary.synthetic((3, 4))
    zero = init_model(vocab, RankPolicy.constant(0))
    X = random_indices(rng, vocab.dims, 200)
    ll_gap = abs(mean_logloss(zero.scores(X), rng.choice([-1.0, 1.0], 200)) - math.log(2))
    elapsed = time.perf_counter() - start
    ok = worst == 0.0 and ll_gap <= 1e-12 and elapsed < 60
    verdict(6, ok, f"auc_trials={trials} max_diff={worst:.1e} zero_model_logloss_gap={ll_gap:.1e} (<=1e-12)")
    assert ok


def test_criterion_07_bound_arithmetic(verdict):
    vocab = Vocabulary.synthetic((1, 1, 1, 1))
    model = init_model(vocab, RankPolicy.constant(0))
    for b in model.b:
        b[:] = 0.5  # each field: N1 = 0, N2 = 0.5, so the sum is 2
    rad = rademacher_bound(model, 100)
    eq8 = eq8_bound(0.5, 0.1, 1.0, 0.05, 10_000)
    eq8_hand = 0.5 + 0.2 + 3 * math.sqrt(math.log(40) / 20_000)
    zero_limit = eq8_bound(0.0, 0.0, 0.0, 0.05, 10)
    rng = np.random.default_rng(1)
    halves = all(rademacher_bound(m, 4 * n) == rademacher_bound(m, n) / 2
                 for m, n in ((random_small_model(rng), int(rng.integers(1, 10**6))) for _ in range(200)))
    ok = abs(rad - 0.4) <= 1e-12 and abs(eq8 - eq8_hand) <= 1e-12 and abs(eq8 - 0.7407430454722186) <= 1e-12 \
        and zero_limit == 0.0 and halves
    verdict(7, ok, f"rademacher={rad!r} (0.4) eq8={eq8!r} (~0.7407) n->4n halves={halves}")
    assert ok


@pytest.mark.slow
def test_criterion_08_trend_experiment(verdict, planted_sets, capsys):
    start = time.perf_counter()
    target = planted_sets["train_bayes"] + 0.05
    cfg = TrainConfig(learning_rate=0.3, batch_size=512, max_epochs=200, seed=0)
    table = bound_trend_experiment(planted_sets["train"], cfg, [1, 2, 3, 4, 6, 8], target, init_scale=0.1)
    elapsed = time.perf_counter() - start
    params = [r.n_params for r in table.rows]
    reached = all(r.reached for r in table.rows)
    increasing = all(a < b for a, b in zip(params, params[1:]))
    nonneg = all(r.norm_sum >= 0 for r in table.rows)
    with capsys.disabled():
        print()
        for line in table.lines():
            print("    " + line)
    ok = reached and increasing and nonneg and elapsed < 900
    verdict(8, ok, f"target={target:.5f} all_reached={reached} params_increasing={increasing} "
                   f"norm_sums_nonneg={nonneg} time={elapsed:.0f}s")
    assert ok


def test_criterion_09_determinism(verdict, tmp_path):
    assert main(["synth", "--out-dir", str(tmp_path / "s"), "--cards", "4,5,6", "--n", "600", "--seed", "2"]) == 0
    args = ["train", "--data", str(tmp_path / "s" / "data.tsv"), "--rank-log-base", "1.6", "--batch-size", "32",
            "--max-epochs", "4", "--lambda", "1e-4", "--reg-period", "3", "--weight-decay", "1e-5",
            "--seed", "5"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    same_model = (tmp_path / "a" / "model.fwm").read_bytes() == (tmp_path / "b" / "model.fwm").read_bytes()

    def history(run):
        # the trailing column is wall-clock seconds
        return [line.rsplit("\t", 1)[0] for line in (tmp_path / run / "history.tsv").read_text().splitlines()]

    same_history = history("a") == history("b") and len(history("a")) > 0
    ok = same_model and same_history
    verdict(9, ok, f"model_bytes_identical={same_model} history_lines_identical={same_history}")
    assert ok


def test_criterion_10_ingestion(verdict):
    checks = {}
    checks["missing"] = log_transform_numeric(None) == "MISSING"
    checks["v=1"] = log_transform_numeric(1) == "1"
    checks["v=100"] = log_transform_numeric(100) == "21"
    specs = make_specs(["Gender"])
    corpus = [("1", "Male"), ("0", "Female"), ("1", "Male")]
    v1 = build_vocabulary(corpus, specs, 1)
    v2 = build_vocabulary(corpus, specs, 2)
    checks["min_count=1"] = v1.dims == (3,) and v1.index(0, "Male") == 0 and v1.index(0, "Female") == 1
    checks["min_count=2"] = v2.dims == (2,) and v2.index(0, "Female") == v2.rare_index(0)
    checks["one-hot"] = (encode_instance(("1", "Male"), v1).active[0] == 0
                         and encode_instance(("0", "Female"), v1).active[0] == 1)
    checks["oov"] = encode_instance(("1", "Other"), v1).active[0] == v1.rare_index(0)

    rng = np.random.default_rng(10)
    names = ["site", "device", "hour", "price"]
    rows = []
    for _ in range(2000):
        rows.append(("1" if rng.random() < 0.3 else "0",
                     f"s{int(rng.zipf(1.6)) % 200}", rng.choice(["ios", "android", "web", "tv"]),
                     str(int(rng.integers(0, 24))), None if rng.random() < 0.1 else float(rng.lognormal(3, 2))))
    vocab = build_vocabulary(rows, make_specs(names, ["price"]), [5, 1, 1, 3])
    round_trip = True
    for i in range(vocab.m):
        for k in range(vocab.dims[i]):
            if k == vocab.rare_index(i):
                continue
            round_trip &= vocab.index(i, vocab.token(i, k)) == k
    checks["round-trip"] = round_trip
    checks["rebuild-identical"] = build_vocabulary(rows, make_specs(names, ["price"]), [5, 1, 1, 3]) == vocab
    data = encode_rows(rows, vocab)
    checks["one-per-field"] = data.indices.shape == (2000, 4) and bool(np.all(data.indices < np.array(vocab.dims)))
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    verdict(10, ok, f"{len(checks)} checks" + (f" failed={failed}" if failed else " all exact"))
    assert ok
