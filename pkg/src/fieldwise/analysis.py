"""Generalization-bound quantities and field importance for trained models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .metrics import logloss
from .model import FieldNorms, FieldWiseModel, RankPolicy, init_model
from .training import TrainConfig, train


def norm_sum(model: FieldWiseModel) -> float:
    """``sum_i (N1_i + N2_i)`` with the norms read off the trained parameters."""
    return sum(fn.variance_norm + fn.mean_norm for fn in model.all_field_norms())


def rademacher_bound(model: FieldWiseModel, n: int) -> float:
    """Upper bound ``sqrt(m / n) * sum_i (N1_i + N2_i)`` on the empirical Rademacher complexity."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.sqrt(model.m / n) * norm_sum(model)


def eq8_bound(empirical_risk: float, rademacher: float, c: float, delta: float, n: int,
              lipschitz: float = 1.0) -> float:
    """Risk bound ``R_hat + 2 L rademacher + 3 c sqrt(ln(2/delta) / (2n))``.

    ``lipschitz`` defaults to 1, the Lipschitz constant of Logloss in the
    score; ``c`` caps the loss.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if c < 0:
        raise ValueError("loss cap c must be non-negative")
    if n < 1:
        raise ValueError("n must be >= 1")
    return empirical_risk + 2.0 * lipschitz * rademacher + 3.0 * c * math.sqrt(math.log(2.0 / delta) / (2.0 * n))


@dataclass
class BoundReport:
    names: list[str]
    norms: list[FieldNorms]
    n: int
    m: int
    n_params: int
    rademacher_bound: float
    empirical_risk: float | None = None
    loss_cap: float | None = None
    delta: float | None = None
    risk_bound: float | None = None

    def lines(self) -> list[str]:
        out = ["field\tvariance_norm\tmean_norm"]
        for name, fn in zip(self.names, self.norms):
            out.append(f"{name}\t{fn.variance_norm!r}\t{fn.mean_norm!r}")
        out.append(f"# n\t{self.n}")
        out.append(f"# m\t{self.m}")
        out.append(f"# n_params\t{self.n_params}")
        out.append(f"# norm_sum\t{sum(f.variance_norm + f.mean_norm for f in self.norms)!r}")
        out.append(f"# rademacher_bound\t{self.rademacher_bound!r}")
        if self.risk_bound is not None:
            out.append(f"# empirical_risk\t{self.empirical_risk!r}")
            out.append(f"# loss_cap\t{self.loss_cap!r}")
            out.append(f"# delta\t{self.delta!r}")
            out.append(f"# risk_bound\t{self.risk_bound!r}")
        return out

    def write(self, path) -> None:
        _write_lines(path, self.lines())


def bound_report(model: FieldWiseModel, n: int | None = None, data=None, delta: float = 0.05,
                 loss_cap: float | None = None, lipschitz: float = 1.0) -> BoundReport:
    """Collect the bound quantities.

    With ``data`` the empirical risk is its mean Logloss, ``n`` defaults to its
    size and the loss cap defaults to the largest per-instance Logloss.
    """
    if n is None:
        if data is None:
            raise ValueError("need n or data")
        n = data.n
    norms = model.all_field_norms()
    rb = rademacher_bound(model, n)
    report = BoundReport(list(model.names), norms, n, model.m, model.n_params, rb)
    if data is not None:
        losses = logloss(model.scores(data.indices), data.labels)
        risk = float(np.mean(losses))
        cap = float(np.max(losses)) if loss_cap is None else loss_cap
        report.empirical_risk, report.loss_cap, report.delta = risk, cap, delta
        report.risk_bound = eq8_bound(risk, rb, cap, delta, n, lipschitz)
    return report


@dataclass
class ImportanceReport:
    names: list[str]
    scores: list[float]
    order: list[int]

    def ranked(self) -> list[tuple[str, float]]:
        return [(self.names[i], self.scores[i]) for i in self.order]

    def lines(self) -> list[str]:
        return ["field\timportance"] + [f"{name}\t{score!r}" for name, score in self.ranked()]

    def write(self, path) -> None:
        _write_lines(path, self.lines())


def field_importance(model: FieldWiseModel) -> ImportanceReport:
    """Per-field column spread of ``W_b`` divided by the field cardinality.

    Fields are listed from most to least important; equal scores keep field
    order.
    """
    scores = [model.field_norms(i).variance_norm / model.dims[i] for i in range(model.m)]
    order = sorted(range(model.m), key=lambda i: -scores[i])
    return ImportanceReport(list(model.names), scores, order)


@dataclass
class TrendRow:
    rank: int
    n_params: int
    norm_sum: float
    train_logloss: float
    epochs: int
    reached: bool

    @property
    def status(self) -> str:
        return "ok" if self.reached else "target_not_reached"


@dataclass
class TrendTable:
    target: float
    rows: list[TrendRow] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = ["rank\tn_params\tnorm_sum\ttrain_logloss\tepochs\tstatus"]
        for r in self.rows:
            out.append(f"{r.rank}\t{r.n_params}\t{r.norm_sum!r}\t{r.train_logloss!r}\t{r.epochs}\t{r.status}")
        return out

    def write(self, path) -> None:
        _write_lines(path, self.lines())


def bound_trend_experiment(train_data, base_config: TrainConfig, ranks: Sequence[int], target: float,
                           init_scale: float = 0.1, init_seed: int = 0, progress=None) -> TrendTable:
    """Train one model per constant rank until train Logloss drops to ``target``.

    Everything except the rank is held fixed. Each row records the parameter
    count and ``sum_i (N1_i + N2_i)`` of the model at the stopping epoch.
    """
    if not ranks:
        raise ValueError("rank list is empty")
    cfg = base_config.replace(target_train_logloss=target)
    table = TrendTable(target)
    for r in ranks:
        model = init_model(train_data.vocab, RankPolicy.constant(r), init_scale, init_seed)
        trained, hist = train(model, train_data, None, cfg)
        row = TrendRow(r, trained.n_params, norm_sum(trained), hist.records[-1].train_logloss,
                       hist.stop_epoch, hist.reached_target)
        table.rows.append(row)
        if progress is not None:
            progress(row)
    return table


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))
