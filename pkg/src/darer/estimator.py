"""scikit-learn style wrapper around the joint sentiment/act tagger.

X is a list of Dialog objects carrying gold label ids; the label vocabulary
that interprets those ids is passed to fit() once and stored. All estimator
hyperparameters mirror DarerConfig/TrainConfig, so the model composes with
sklearn tooling (get_params/set_params/clone, CV over dialog lists).
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .data import ConfigError, Dialog, LabelVocab, build_token_vocab, split_corpus, validate_corpus
from .model import DarerConfig, DarerModel
from .training import TrainConfig, evaluate, macro_prf, train


class DarerClassifier(BaseEstimator):
    """Joint per-utterance sentiment and act classifier over whole dialogs."""

    def __init__(self, hidden_dim=32, steps=2, gamma=1.0, dropout=0.2, embed_dim=None,
                 n_speakers=2, use_label_embeddings=True, use_constraint_loss=True,
                 use_sat_rsgt=True, use_dtr_rsgt=True, use_ts_bilstms=True,
                 temporal_relations_in_satg=True, temporal_relations_in_drtg=True,
                 lr=1e-3, batch_size=16, epochs=50, seed=0, eval_convention="macro",
                 min_count=1, validation_fraction=0.15):
        self.hidden_dim = hidden_dim
        self.steps = steps
        self.gamma = gamma
        self.dropout = dropout
        self.embed_dim = embed_dim
        self.n_speakers = n_speakers
        self.use_label_embeddings = use_label_embeddings
        self.use_constraint_loss = use_constraint_loss
        self.use_sat_rsgt = use_sat_rsgt
        self.use_dtr_rsgt = use_dtr_rsgt
        self.use_ts_bilstms = use_ts_bilstms
        self.temporal_relations_in_satg = temporal_relations_in_satg
        self.temporal_relations_in_drtg = temporal_relations_in_drtg
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.eval_convention = eval_convention
        self.min_count = min_count
        self.validation_fraction = validation_fraction

    def _model_config(self) -> DarerConfig:
        return DarerConfig(
            hidden_dim=self.hidden_dim,
            steps=self.steps,
            gamma=self.gamma,
            dropout=self.dropout,
            n_speakers=self.n_speakers,
            embed_dim=self.embed_dim,
            use_label_embeddings=self.use_label_embeddings,
            use_constraint_loss=self.use_constraint_loss,
            use_sat_rsgt=self.use_sat_rsgt,
            use_dtr_rsgt=self.use_dtr_rsgt,
            use_ts_bilstms=self.use_ts_bilstms,
            temporal_relations_in_satg=self.temporal_relations_in_satg,
            temporal_relations_in_drtg=self.temporal_relations_in_drtg,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            eval_convention=self.eval_convention,
        )

    def fit(self, X, y=None, label_vocab: LabelVocab | None = None, validation=None):
        """Train on dialogs X (gold labels embedded); y is ignored.

        `validation` may be a separate dialog list; otherwise a seeded
        validation_fraction split of X selects the best epoch.
        """
        if label_vocab is None:
            raise ConfigError("fit() needs the LabelVocab that defines the dialog label ids")
        dialogs = list(X)
        if not dialogs:
            raise ValueError("X must contain at least one dialog")
        validate_corpus(dialogs, label_vocab, self.n_speakers)
        if validation is not None:
            train_dialogs, valid_dialogs = dialogs, list(validation)
            validate_corpus(valid_dialogs, label_vocab, self.n_speakers)
        else:
            if not (0.0 < self.validation_fraction < 1.0):
                raise ConfigError("validation_fraction must be in (0, 1)")
            valid_dialogs, train_dialogs = split_corpus(
                dialogs, (self.validation_fraction, 1.0 - self.validation_fraction), self.seed
            )
            if not valid_dialogs or not train_dialogs:
                raise ValueError("X is too small for the requested validation split")

        self.label_vocab_ = label_vocab
        self.token_vocab_ = build_token_vocab(train_dialogs, self.min_count)
        self.model_ = DarerModel(self._model_config(), self.token_vocab_, label_vocab, seed=self.seed)
        result = train(self.model_, train_dialogs, valid_dialogs, self._train_config())
        self.best_epoch_ = result.best_epoch
        self.best_metric_ = result.best_metric
        self.history_ = result.log
        self.sentiment_classes_ = list(label_vocab.sentiment_names)
        self.act_classes_ = list(label_vocab.act_names)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise RuntimeError("this DarerClassifier instance is not fitted yet")

    def predict(self, X) -> list[tuple[list[int], list[int]]]:
        """Per dialog: (sentiment label ids, act label ids), one id per utterance."""
        self._check_fitted()
        return [self.model_.predict(dialog) for dialog in X]

    def predict_labels(self, X) -> list[tuple[list[str], list[str]]]:
        """Like predict(), with label names instead of ids."""
        out = []
        for sent_ids, act_ids in self.predict(X):
            out.append((
                [self.sentiment_classes_[i] for i in sent_ids],
                [self.act_classes_[i] for i in act_ids],
            ))
        return out

    def score(self, X, y=None) -> float:
        """Mean of the two tasks' macro F1 over the dialogs in X."""
        self._check_fitted()
        dialogs = list(X)
        preds = self.predict(dialogs)
        preds_s = [label for ps, _ in preds for label in ps]
        preds_a = [label for _, pa in preds for label in pa]
        golds_s = [u.sentiment for d in dialogs for u in d.utterances]
        golds_a = [u.act for d in dialogs for u in d.utterances]
        f_s = macro_prf(preds_s, golds_s, self.label_vocab_.n_sentiments).f1
        f_a = macro_prf(preds_a, golds_a, self.label_vocab_.n_acts).f1
        return 0.5 * (f_s + f_a)

    def evaluate(self, X, convention: str | None = None):
        """Full Metrics under the configured (or given) evaluation convention."""
        self._check_fitted()
        return evaluate(self.model_, list(X), convention or self.eval_convention)
