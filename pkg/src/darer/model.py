"""The three-stage pipeline: dialog understanding over the speaker graph,
initial estimation, then recurrent dual-task reasoning over the dual-task
graph with label-distribution feedback between steps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import layers, objectives
from .autodiff import Tensor
from .data import ConfigError, Dialog, LabelVocab, TokenVocab
from .graphs import RelGraph, build_drtg, build_satg, disjoint_union

CHECKPOINT_FORMAT = "darer-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class DarerConfig:
    hidden_dim: int = 32
    steps: int = 2                     # recurrent reasoning iterations; 0 = initial estimation only
    gamma: float = 1.0                 # margin-loss weight inside the constraint loss
    dropout: float = 0.2
    n_speakers: int = 2
    embed_dim: int | None = None       # token embedding width; defaults to hidden_dim
    use_label_embeddings: bool = True
    use_constraint_loss: bool = True
    use_sat_rsgt: bool = True
    use_dtr_rsgt: bool = True
    use_ts_bilstms: bool = True
    temporal_relations_in_satg: bool = True
    temporal_relations_in_drtg: bool = True
    share_ts_bilstms: bool = True      # one task BiLSTM reused across steps
    share_decoders: bool = True        # decoders reused across all stages

    def validate(self) -> None:
        if self.hidden_dim < 2 or self.hidden_dim % 2 != 0:
            raise ConfigError(f"hidden_dim must be an even integer >= 2, got {self.hidden_dim}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_speakers < 1:
            raise ConfigError(f"n_speakers must be >= 1, got {self.n_speakers}")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")

    @property
    def token_dim(self) -> int:
        return self.hidden_dim if self.embed_dim is None else self.embed_dim


@dataclass
class ModelState:
    """Per-step hidden states and label distributions for both tasks."""

    step: int
    h_sentiment: Tensor    # (N, d)
    h_act: Tensor          # (N, d)
    p_sentiment: Tensor    # (N, |C_s|), rows are distributions
    p_act: Tensor          # (N, |C_a|)


@dataclass
class ForwardTrace:
    """States for steps 0..T, all retained for the loss."""

    states: list[ModelState] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final(self) -> ModelState:
        return self.states[-1]


class DarerModel:
    """Joint sentiment/act tagger; owns parameters, vocabularies and caches."""

    def __init__(self, config: DarerConfig, token_vocab: TokenVocab,
                 label_vocab: LabelVocab, seed: int = 0):
        config.validate()
        if label_vocab.n_sentiments < 1 or label_vocab.n_acts < 1:
            raise ConfigError("label vocabulary must name at least one class per task")
        self.config = config
        self.token_vocab = token_vocab
        self.label_vocab = label_vocab
        self.training = False
        self._dropout_rng = np.random.default_rng(seed)
        self._satg_cache: dict[tuple[int, ...], object] = {}
        self._drtg_cache: dict[int, object] = {}

        d = config.hidden_dim
        half = d // 2
        s = config.n_speakers
        rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

        self.embed = ad.parameter(
            rng.uniform(-1.0 / np.sqrt(config.token_dim), 1.0 / np.sqrt(config.token_dim),
                        size=(len(token_vocab), config.token_dim))
        )
        self._register({"embed.table": self.embed})

        self.utt_enc = layers.init_bilstm(rng, config.token_dim, half)
        self._register(self.utt_enc.named("utt_enc"))

        if config.use_sat_rsgt:
            n_rel = 2 * s * s if config.temporal_relations_in_satg else s * s
            self.sat_rsgt = layers.init_rsgt(rng, d, n_rel)
            self._register(self.sat_rsgt.named("sat_rsgt"))
        else:
            self.sat_rsgt = None

        self.init_s = layers.init_bilstm(rng, d, half)
        self.init_a = layers.init_bilstm(rng, d, half)
        self._register(self.init_s.named("init_s"))
        self._register(self.init_a.named("init_a"))

        if config.use_dtr_rsgt:
            n_rel = 12 if config.temporal_relations_in_drtg else 4
            self.dtr_rsgt = layers.init_rsgt(rng, d, n_rel)
            self._register(self.dtr_rsgt.named("dtr_rsgt"))
        else:
            self.dtr_rsgt = None

        if config.use_ts_bilstms:
            n_sets = 1 if config.share_ts_bilstms else max(config.steps, 1)
            self.ts_s = [layers.init_bilstm(rng, d, half) for _ in range(n_sets)]
            self.ts_a = [layers.init_bilstm(rng, d, half) for _ in range(n_sets)]
            for k, (ps, pa) in enumerate(zip(self.ts_s, self.ts_a), start=1):
                suffix = "" if config.share_ts_bilstms else f".step{k}"
                self._register(ps.named(f"ts_s{suffix}"))
                self._register(pa.named(f"ts_a{suffix}"))
        else:
            self.ts_s = self.ts_a = None

        n_stages = 1 if config.share_decoders else config.steps + 1
        self.dec_s = [layers.init_decoder(rng, d, label_vocab.n_sentiments) for _ in range(n_stages)]
        self.dec_a = [layers.init_decoder(rng, d, label_vocab.n_acts) for _ in range(n_stages)]
        for k, (ps, pa) in enumerate(zip(self.dec_s, self.dec_a)):
            suffix = "" if config.share_decoders else f".stage{k}"
            self._register(ps.named(f"dec_s{suffix}"))
            self._register(pa.named(f"dec_a{suffix}"))

        if config.use_label_embeddings:
            bound = 1.0 / np.sqrt(d)
            self.label_emb_s = ad.parameter(
                rng.uniform(-bound, bound, size=(label_vocab.n_sentiments, d)))
            self.label_emb_a = ad.parameter(
                rng.uniform(-bound, bound, size=(label_vocab.n_acts, d)))
            self._register({"label_emb.s": self.label_emb_s, "label_emb.a": self.label_emb_a})
        else:
            self.label_emb_s = self.label_emb_a = None

    # --- parameter registry ---

    def _register(self, named: dict[str, Tensor]) -> None:
        for name, tensor in named.items():
            if name in self._params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._params[name] = tensor

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def set_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._params):
            missing = set(self._params) ^ set(arrays)
            raise CheckpointError(f"parameter name mismatch: {sorted(missing)}")
        for name, arr in arrays.items():
            target = self._params[name]
            if arr.shape != target.data.shape:
                raise CheckpointError(
                    f"parameter {name!r}: shape {arr.shape} != expected {target.data.shape}"
                )
            target.data[...] = arr

    def reseed_dropout(self, seed: int) -> None:
        self._dropout_rng = np.random.default_rng(seed)

    # --- graph caches ---

    def _satg(self, dialog: Dialog):
        key = tuple(dialog.speakers)
        if key not in self._satg_cache:
            self._satg_cache[key] = build_satg(
                dialog, self.config.n_speakers, temporal=self.config.temporal_relations_in_satg
            )
        return self._satg_cache[key]

    def _drtg(self, n: int):
        if n not in self._drtg_cache:
            self._drtg_cache[n] = build_drtg(n, temporal=self.config.temporal_relations_in_drtg)
        return self._drtg_cache[n]

    def _batch_satg(self, dialogs: list[Dialog]):
        return disjoint_union([self._satg(d) for d in dialogs])

    def _batch_drtg(self, lengths: list[int]):
        """Per-dialog dual-task graphs merged to match packed row order:
        all dialogs' sentiment rows first, then all act rows."""
        total = sum(lengths)
        n_relations = 12 if self.config.temporal_relations_in_drtg else 4
        union = RelGraph(2 * total, n_relations)
        offset = 0
        for n in lengths:
            def remap(node: int) -> int:
                return offset + node if node < n else total + offset + (node - n)

            for source, target, r in self._drtg(n).edges():
                union.add_edge(remap(source), remap(target), r)
            offset += n
        return union

    def _decoder(self, task: str, stage: int) -> layers.DecoderParams:
        decoders = self.dec_s if task == "s" else self.dec_a
        if self.config.share_decoders:
            return decoders[0]
        if stage >= len(decoders):
            raise ConfigError(f"no decoder for stage {stage}; model was built with steps={self.config.steps}")
        return decoders[stage]

    def _ts_bilstm(self, task: str, step: int) -> layers.BiLstmParams:
        sets = self.ts_s if task == "s" else self.ts_a
        if self.config.share_ts_bilstms:
            return sets[0]
        if step > len(sets):
            raise ConfigError(f"no task BiLSTM for step {step}; model was built with steps={self.config.steps}")
        return sets[step - 1]

    # --- pipeline stages ---

    def dialog_understanding(self, dialog: Dialog, training: bool | None = None) -> Tensor:
        """Encode every utterance, then aggregate over the speaker graph."""
        training = self.training if training is None else training
        h = layers.encode_utterances(
            self.embed, self.utt_enc,
            [self.token_vocab.encode(u.tokens) for u in dialog.utterances],
        )
        if self.config.use_sat_rsgt:
            h = layers.rsgt_forward(self.sat_rsgt, self._satg(dialog), h)
        return layers.dropout(h, self.config.dropout, training, self._dropout_rng)

    @staticmethod
    def _apply_bilstm(params, h, lengths):
        if lengths is None:
            return layers.bilstm_forward(params, h)
        return layers.bilstm_forward_packed(params, h, lengths)

    def initial_estimation(self, h_hat: Tensor, lengths: list[int] | None = None) -> ModelState:
        """Task-specific re-encoding of the utterance sequence plus first decode."""
        h_s = self._apply_bilstm(self.init_s, h_hat, lengths)
        h_a = self._apply_bilstm(self.init_a, h_hat, lengths)
        return ModelState(
            step=0,
            h_sentiment=h_s,
            h_act=h_a,
            p_sentiment=layers.decode(self._decoder("s", 0), h_s),
            p_act=layers.decode(self._decoder("a", 0), h_a),
        )

    def reasoning_step(self, drtg, state: ModelState, training: bool | None = None,
                       lengths: list[int] | None = None) -> ModelState:
        """One reasoning iteration: label feedback, dual-task graph transform,
        task re-encoding, decode."""
        training = self.training if training is None else training
        cfg = self.config
        t = state.step + 1
        n = state.h_sentiment.data.shape[0]

        if cfg.use_label_embeddings:
            e_s = layers.project_labels(self.label_emb_s, state.p_sentiment)
            e_a = layers.project_labels(self.label_emb_a, state.p_act)
            h_s_in = layers.superimpose(state.h_sentiment, e_s, e_a)
            h_a_in = layers.superimpose(state.h_act, e_s, e_a)
        else:
            h_s_in, h_a_in = state.h_sentiment, state.h_act

        stacked = ad.vstack([h_s_in, h_a_in])  # sentiment block, then act block
        if cfg.use_dtr_rsgt:
            stacked = layers.rsgt_forward(self.dtr_rsgt, drtg, stacked)
        stacked = layers.dropout(stacked, cfg.dropout, training, self._dropout_rng)
        h_s_bar = ad.rows(stacked, 0, n)
        h_a_bar = ad.rows(stacked, n, 2 * n)

        if cfg.use_ts_bilstms:
            h_s = self._apply_bilstm(self._ts_bilstm("s", t), h_s_bar, lengths)
            h_a = self._apply_bilstm(self._ts_bilstm("a", t), h_a_bar, lengths)
        else:
            h_s, h_a = h_s_bar, h_a_bar

        return ModelState(
            step=t,
            h_sentiment=h_s,
            h_act=h_a,
            p_sentiment=layers.decode(self._decoder("s", t), h_s),
            p_act=layers.decode(self._decoder("a", t), h_a),
        )

    def forward(self, dialog: Dialog, training: bool | None = None,
                steps: int | None = None) -> ForwardTrace:
        """Full pipeline; the trace holds the T+1 states, step T is final."""
        training = self.training if training is None else training
        steps = self.config.steps if steps is None else steps
        state = self.initial_estimation(self.dialog_understanding(dialog, training))
        states = [state]
        drtg = self._drtg(len(dialog)) if steps > 0 and self.config.use_dtr_rsgt else None
        for _ in range(steps):
            state = self.reasoning_step(drtg, state, training)
            states.append(state)
        return ForwardTrace(states)

    def predict(self, dialog: Dialog, steps: int | None = None) -> tuple[list[int], list[int]]:
        """Final-step argmax labels for both tasks (ties break to the lower id)."""
        with ad.no_grad():
            final = self.forward(dialog, training=False, steps=steps).final
        return (
            final.p_sentiment.data.argmax(axis=1).tolist(),
            final.p_act.data.argmax(axis=1).tolist(),
        )

    def loss(self, dialog: Dialog, training: bool | None = None):
        """Grand training objective on one dialog; returns (tensor, LossReport)."""
        trace = self.forward(dialog, training)
        gold_s = [u.sentiment for u in dialog.utterances]
        gold_a = [u.act for u in dialog.utterances]
        return objectives.total_loss(
            trace, gold_s, gold_a, self.config.gamma, self.config.use_constraint_loss
        )

    # --- packed fast path over several dialogs (same math, fewer ops) ---

    def forward_batch(self, dialogs: list[Dialog], training: bool | None = None,
                      steps: int | None = None) -> ForwardTrace:
        """Like forward() per dialog, but with all dialogs' utterances packed
        into one row block; state tensors hold sum(len(d)) rows. Equivalent to
        the per-dialog pipeline up to floating-point reassociation."""
        if not dialogs:
            raise ValueError("forward_batch needs at least one dialog")
        training = self.training if training is None else training
        steps = self.config.steps if steps is None else steps
        lengths = [len(d) for d in dialogs]

        h = layers.encode_utterances(
            self.embed, self.utt_enc,
            [self.token_vocab.encode(u.tokens) for d in dialogs for u in d.utterances],
        )
        if self.config.use_sat_rsgt:
            h = layers.rsgt_forward(self.sat_rsgt, self._batch_satg(dialogs), h)
        h = layers.dropout(h, self.config.dropout, training, self._dropout_rng)

        state = self.initial_estimation(h, lengths)
        states = [state]
        drtg = self._batch_drtg(lengths) if steps > 0 and self.config.use_dtr_rsgt else None
        for _ in range(steps):
            state = self.reasoning_step(drtg, state, training, lengths)
            states.append(state)
        return ForwardTrace(states)

    def batch_loss(self, dialogs: list[Dialog], training: bool | None = None):
        """Sum of the per-dialog objectives; returns (tensor, batch LossReport)."""
        trace = self.forward_batch(dialogs, training)
        gold_s = [u.sentiment for d in dialogs for u in d.utterances]
        gold_a = [u.act for d in dialogs for u in d.utterances]
        return objectives.total_loss(
            trace, gold_s, gold_a, self.config.gamma, self.config.use_constraint_loss
        )

    def predict_batch(self, dialogs: list[Dialog],
                      steps: int | None = None) -> list[tuple[list[int], list[int]]]:
        """predict() for several dialogs in one packed forward pass."""
        with ad.no_grad():
            final = self.forward_batch(dialogs, training=False, steps=steps).final
        sent = final.p_sentiment.data.argmax(axis=1)
        act = final.p_act.data.argmax(axis=1)
        out, offset = [], 0
        for d in dialogs:
            n = len(d)
            out.append((sent[offset:offset + n].tolist(), act[offset:offset + n].tolist()))
            offset += n
        return out


# --- checkpoint container: one JSON header line, then raw little-endian float64 ---

def save_checkpoint(model: DarerModel, path) -> None:
    params = model.parameters()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "label_vocab": model.label_vocab.header(),
        "token_vocab": model.token_vocab.tokens,
        "params": [[name, list(t.data.shape)] for name, t in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> DarerModel:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a model checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")

        known = {f.name for f in fields(DarerConfig)}
        unknown = set(header["config"]) - known
        if unknown:
            raise CheckpointError(f"unknown config keys in checkpoint: {sorted(unknown)}")
        config = DarerConfig(**header["config"])
        tokens = header["token_vocab"]
        if tokens[:2] != ["<pad>", "<unk>"]:
            raise CheckpointError("token vocabulary lost its reserved entries")
        model = DarerModel(
            config,
            TokenVocab(tokens[2:]),
            LabelVocab.from_header(header["label_vocab"]),
            seed=0,
        )

        params = model.parameters()
        names = [name for name, _ in header["params"]]
        if names != list(params):
            raise CheckpointError("checkpoint parameter names do not match the configuration")
        for name, shape in header["params"]:
            expected = params[name].data.shape
            if tuple(shape) != expected:
                raise CheckpointError(f"parameter {name!r}: shape {shape} != expected {list(expected)}")
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise CheckpointError(f"checkpoint truncated while reading {name!r}")
            params[name].data[...] = np.frombuffer(buf, dtype="<f8").reshape(shape)
    return model
