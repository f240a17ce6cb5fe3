"""Joint dialog sentiment classification and dialog act recognition via
relation-typed temporal graphs and recurrent dual-task reasoning."""

from .autodiff import Tape, Tensor, backward, finite_diff_check, no_grad
from .data import (
    ConfigError,
    CorpusError,
    Dialog,
    LabelVocab,
    TokenVocab,
    Utterance,
    build_token_vocab,
    gen_synthetic,
    load_corpus,
    split_corpus,
    validate_corpus,
    validate_dialog,
    write_corpus,
)
from .estimator import DarerClassifier
from .graphs import RelGraph, build_drtg, build_satg, drtg_relation, export_dot, satg_relation
from .model import (
    CheckpointError,
    DarerConfig,
    DarerModel,
    ForwardTrace,
    ModelState,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import (
    LossReport,
    constraint_loss,
    estimate_loss,
    margin_loss,
    prediction_loss,
    total_loss,
)
from .training import (
    Adam,
    DivergenceError,
    Metrics,
    TaskMetrics,
    TrainConfig,
    TrainResult,
    evaluate,
    ignore_neutral_weighted_metrics,
    macro_prf,
    macro_prf_excluding,
    prevalence_weighted_prf,
    train,
)

__version__ = "0.1.0"
