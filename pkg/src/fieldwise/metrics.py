"""Logloss and AUC for click-prediction style evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def logloss(score, y):
    """``log(1 + exp(-score * y))`` for labels in {-1, +1}, elementwise.

    ``np.logaddexp`` branches on the sign of its arguments, so very large
    margins neither overflow nor lose the small tail.
    """
    return np.logaddexp(0.0, -np.asarray(score, dtype=np.float64) * y)


def mean_logloss(scores, labels) -> float:
    return float(np.mean(logloss(scores, labels)))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores get average ranks, which counts a tied positive/negative pair
    as half a correct ordering.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalReport:
    logloss: float
    auc: float | None  # None when the data holds a single class
    n: int

    def format(self) -> str:
        auc_text = "undefined" if self.auc is None else f"{self.auc:.10g}"
        return f"logloss={self.logloss:.10g} auc={auc_text} n={self.n}"

    def as_lines(self) -> list[str]:
        auc_text = "undefined" if self.auc is None else repr(self.auc)
        return [f"logloss\t{self.logloss!r}", f"auc\t{auc_text}", f"n\t{self.n}"]


def evaluate(model, data) -> EvalReport:
    scores = model.scores(data.indices)
    labels = data.labels
    ll = mean_logloss(scores, labels)
    has_both = (labels > 0).any() and (labels < 0).any()
    return EvalReport(ll, auc(scores, labels) if has_both else None, data.n)
