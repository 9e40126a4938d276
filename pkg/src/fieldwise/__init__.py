"""Field-wise learning for multi-field categorical data."""

from .analysis import (
    BoundReport,
    ImportanceReport,
    TrendTable,
    bound_report,
    bound_trend_experiment,
    eq8_bound,
    field_importance,
    norm_sum,
    rademacher_bound,
)
from .metrics import EvalReport, auc, evaluate, logloss, mean_logloss
from .model import FieldNorms, FieldWiseModel, RankPolicy, init_model, predict_proba, rank_for_field
from .schema import (
    Dataset,
    EncodedInstance,
    EncodingError,
    FieldSpec,
    Vocabulary,
    build_vocabulary,
    encode_instance,
    encode_rows,
    log_transform_numeric,
    read_delimited,
    split_dataset,
    write_delimited,
)
from .training import (
    AdagradState,
    TrainConfig,
    TrainHistory,
    TrainingDiverged,
    adagrad_step,
    loss_gradients,
    reg_gradients,
    train,
)

__version__ = "0.1.0"
