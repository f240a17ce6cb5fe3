"""Neural building blocks: embeddings, BiLSTM, relation-specific graph
transformation (RSGT), decoders, label-distribution projection, dropout.

Weight layout convention: row vectors on the left, so a linear map stores its
matrix as (d_in, d_out) and applies H @ W. Matrices are initialized uniformly
in +-1/sqrt(d_in); biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import RelGraph


def init_matrix(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    bound = 1.0 / np.sqrt(d_in)
    return ad.parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))


@dataclass
class LstmDirection:
    w_x: Tensor   # (d_in, 4*d_h), gate order [input, forget, candidate, output]
    w_h: Tensor   # (d_h, 4*d_h)
    b: Tensor     # (4*d_h,)


@dataclass
class BiLstmParams:
    fw: LstmDirection
    bw: LstmDirection
    d_in: int
    d_h: int      # per direction; output dim is 2*d_h

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for tag, direction in (("fw", self.fw), ("bw", self.bw)):
            out[f"{prefix}.{tag}.w_x"] = direction.w_x
            out[f"{prefix}.{tag}.w_h"] = direction.w_h
            out[f"{prefix}.{tag}.b"] = direction.b
        return out


def init_bilstm(rng: np.random.Generator, d_in: int, d_h: int) -> BiLstmParams:
    def direction() -> LstmDirection:
        return LstmDirection(
            w_x=init_matrix(rng, d_in, 4 * d_h),
            w_h=init_matrix(rng, d_h, 4 * d_h),
            b=ad.parameter(np.zeros(4 * d_h)),
        )

    return BiLstmParams(direction(), direction(), d_in, d_h)


def _lstm_scan(direction: LstmDirection, seq: Tensor, order: range, d_h: int) -> list[Tensor]:
    # one projection of the whole sequence, then the recurrence
    xp = ad.add(ad.matmul(seq, direction.w_x), direction.b)
    h = Tensor(np.zeros((1, d_h)))
    c = Tensor(np.zeros((1, d_h)))
    states: list[Tensor] = []
    for t in order:
        z = ad.add(ad.rows(xp, t, t + 1), ad.matmul(h, direction.w_h))
        i = ad.sigmoid(ad.cols(z, 0, d_h))
        f = ad.sigmoid(ad.cols(z, d_h, 2 * d_h))
        g = ad.tanh(ad.cols(z, 2 * d_h, 3 * d_h))
        o = ad.sigmoid(ad.cols(z, 3 * d_h, 4 * d_h))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        states.append(h)
    return states


def bilstm_forward(params: BiLstmParams, seq: Tensor) -> Tensor:
    """(L, d_in) -> (L, 2*d_h); row t is [forward state t || backward state t]."""
    if seq.data.ndim != 2 or seq.data.shape[0] == 0:
        raise ValueError(f"bilstm_forward needs a non-empty sequence, got shape {seq.data.shape}")
    if seq.data.shape[1] != params.d_in:
        raise ValueError(f"input dim {seq.data.shape[1]} != expected {params.d_in}")
    length = seq.data.shape[0]
    fw = _lstm_scan(params.fw, seq, range(length), params.d_h)
    bw = _lstm_scan(params.bw, seq, range(length - 1, -1, -1), params.d_h)
    bw.reverse()
    return ad.concat_cols(ad.vstack(fw), ad.vstack(bw))


def encode_utterance(embed_table: Tensor, bilstm: BiLstmParams, token_ids: list[int]) -> Tensor:
    """Token embeddings -> BiLSTM -> columnwise max pool; returns a (2*d_h,) vector."""
    if not token_ids:
        raise ValueError("cannot encode an utterance with no tokens")
    embedded = ad.take_rows(embed_table, token_ids)
    return ad.max_pool_rows(bilstm_forward(bilstm, embedded))


def _batched_scan(direction: LstmDirection, embed_table: Tensor, ids, masks,
                  d_h: int, mask_states: bool) -> list[Tensor]:
    # ids/masks are time-major numpy arrays: ids (L, N), masks (L, N, 1).
    # mask_states zeroes h/c on padded steps (needed when padding precedes the
    # real tokens, i.e. the reversed scan); otherwise padded states are junk
    # that the pooling penalty later discards.
    n = ids.shape[1]
    h = Tensor(np.zeros((n, d_h)))
    c = Tensor(np.zeros((n, d_h)))
    states = []
    for t in range(ids.shape[0]):
        x = ad.take_rows(embed_table, ids[t])
        z = ad.add(ad.add(ad.matmul(x, direction.w_x), direction.b), ad.matmul(h, direction.w_h))
        i = ad.sigmoid(ad.cols(z, 0, d_h))
        f = ad.sigmoid(ad.cols(z, d_h, 2 * d_h))
        g = ad.tanh(ad.cols(z, 2 * d_h, 3 * d_h))
        o = ad.sigmoid(ad.cols(z, 3 * d_h, 4 * d_h))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        if mask_states:
            mask = Tensor(masks[t])
            c = ad.mul(c, mask)
            h = ad.mul(h, mask)
        states.append(h)
    return states


def _penalized_max(states: list[Tensor], masks) -> Tensor:
    # Running elementwise max over time; padded rows get -1e30 so they never
    # win (every utterance has at least one unpadded step).
    acc = None
    for t, state in enumerate(states):
        if not masks[t].all():
            state = ad.add(state, Tensor((masks[t] - 1.0) * 1e30))
        acc = state if acc is None else ad.maximum(acc, state)
    return acc


def bilstm_forward_packed(params: BiLstmParams, h_all: Tensor, lengths: list[int]) -> Tensor:
    """BiLSTM over several sequences packed row-wise into one matrix.

    h_all holds the sequences back to back: rows [0:lengths[0]] are sequence 0
    and so on. Each sequence is scanned independently (masked, time-major), and
    the output keeps the packed row order. Equivalent to bilstm_forward per
    sequence up to floating-point reassociation.
    """
    if h_all.data.ndim != 2 or h_all.data.shape[0] != sum(lengths):
        raise ValueError(f"packed input {h_all.data.shape} does not match lengths {lengths}")
    if not lengths or min(lengths) < 1:
        raise ValueError("every packed sequence needs at least one row")
    n_seq = len(lengths)
    max_len = max(lengths)
    offsets = np.concatenate([[0], np.cumsum(lengths[:-1])]).astype(np.int64)

    gather = np.zeros((max_len, n_seq), dtype=np.int64)
    masks = np.zeros((max_len, n_seq, 1))
    for b, n in enumerate(lengths):
        gather[:n, b] = offsets[b] + np.arange(n)
        masks[:n, b, 0] = 1.0

    def scan(direction: LstmDirection, reverse: bool) -> Tensor:
        xp = ad.add(ad.matmul(h_all, direction.w_x), direction.b)
        order = range(max_len - 1, -1, -1) if reverse else range(max_len)
        h = Tensor(np.zeros((n_seq, params.d_h)))
        c = Tensor(np.zeros((n_seq, params.d_h)))
        states: dict[int, Tensor] = {}
        for t in order:
            z = ad.add(ad.take_rows(xp, gather[t]), ad.matmul(h, direction.w_h))
            i = ad.sigmoid(ad.cols(z, 0, params.d_h))
            f = ad.sigmoid(ad.cols(z, params.d_h, 2 * params.d_h))
            g = ad.tanh(ad.cols(z, 2 * params.d_h, 3 * params.d_h))
            o = ad.sigmoid(ad.cols(z, 3 * params.d_h, 4 * params.d_h))
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            if reverse and not masks[t].all():
                # padding precedes the data in the reversed scan; hold zeros
                mask = Tensor(masks[t])
                c = ad.mul(c, mask)
                h = ad.mul(h, mask)
            states[t] = h
        stacked = ad.vstack([states[t] for t in range(max_len)])
        # row t*n_seq + b of `stacked` is sequence b at position t; put back
        # into packed order
        perm = np.concatenate(
            [np.arange(n) * n_seq + b for b, n in enumerate(lengths)]
        )
        return ad.take_rows(stacked, perm)

    return ad.concat_cols(scan(params.fw, False), scan(params.bw, True))


def encode_utterances(embed_table: Tensor, bilstm: BiLstmParams,
                      token_id_lists: list[list[int]], pad_id: int = 0) -> Tensor:
    """All utterances of a dialog encoded in one time-major scan; returns the
    (N, 2*d_h) matrix of pooled representations. Matches encode_utterance per
    row up to floating-point reassociation."""
    if not token_id_lists or any(not ids for ids in token_id_lists):
        raise ValueError("every utterance needs at least one token")
    n = len(token_id_lists)
    length = max(len(ids) for ids in token_id_lists)
    ids = np.full((length, n), pad_id, dtype=np.int64)
    masks = np.zeros((length, n, 1))
    for i, tokens in enumerate(token_id_lists):
        ids[:len(tokens), i] = tokens
        masks[:len(tokens), i, 0] = 1.0
    fw = _penalized_max(_batched_scan(bilstm.fw, embed_table, ids, masks, bilstm.d_h, False), masks)
    bw_states = _batched_scan(
        bilstm.bw, embed_table, ids[::-1], masks[::-1], bilstm.d_h, True
    )
    bw = _penalized_max(bw_states, masks[::-1])
    return ad.concat_cols(fw, bw)


@dataclass
class RsgtParams:
    """Self-transformation plus one matrix per relation type."""

    w_self: Tensor
    w_rel: list[Tensor]

    @property
    def n_relations(self) -> int:
        return len(self.w_rel)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.self": self.w_self}
        for r, w in enumerate(self.w_rel, start=1):
            out[f"{prefix}.rel{r}"] = w
        return out


def init_rsgt(rng: np.random.Generator, d: int, n_relations: int) -> RsgtParams:
    return RsgtParams(
        w_self=init_matrix(rng, d, d),
        w_rel=[init_matrix(rng, d, d) for _ in range(n_relations)],
    )


def rsgt_forward(params: RsgtParams, graph: RelGraph, h: Tensor) -> Tensor:
    """Per node: self term plus, for each relation, the relation-transformed
    mean of its in-neighbors. Empty neighborhoods contribute zero."""
    if h.data.ndim != 2 or h.data.shape[0] != graph.n_nodes:
        raise ValueError(f"node features {h.data.shape} do not match {graph.n_nodes} nodes")
    if params.n_relations != graph.n_relations:
        raise ValueError(
            f"params carry {params.n_relations} relation matrices, graph has {graph.n_relations}"
        )
    out = ad.matmul(h, params.w_self)
    for r, w in enumerate(params.w_rel, start=1):
        mean = graph.mean_matrix(r)
        if mean is None:
            continue
        out = ad.add(out, ad.matmul(ad.matmul(Tensor(mean), h), w))
    return out


@dataclass
class DecoderParams:
    w: Tensor   # (d, n_classes)
    b: Tensor   # (n_classes,)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def init_decoder(rng: np.random.Generator, d: int, n_classes: int) -> DecoderParams:
    return DecoderParams(init_matrix(rng, d, n_classes), ad.parameter(np.zeros(n_classes)))


def decode(params: DecoderParams, h: Tensor) -> Tensor:
    """Row i -> softmax(h_i @ W + b); every output row is a distribution."""
    if h.data.ndim != 2 or h.data.shape[1] != params.w.data.shape[0]:
        raise ValueError(f"decoder expects (*, {params.w.data.shape[0]}), got {h.data.shape}")
    return ad.softmax(ad.add(ad.matmul(h, params.w), params.b))


def project_labels(label_embedding: Tensor, p: Tensor) -> Tensor:
    """Expected label embedding per row: (N, C) distributions @ (C, d) matrix."""
    if p.data.ndim != 2 or p.data.shape[1] != label_embedding.data.shape[0]:
        raise ValueError(
            f"distributions {p.data.shape} do not match embedding {label_embedding.data.shape}"
        )
    row_sums = p.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValueError("label distributions must row-sum to 1 (upstream decoder bug?)")
    return ad.matmul(p, label_embedding)


def superimpose(h: Tensor, e_sent: Tensor, e_act: Tensor) -> Tensor:
    """Add both tasks' label representations onto a hidden state."""
    if not (h.data.shape == e_sent.data.shape == e_act.data.shape):
        raise ValueError(
            f"superimpose shape mismatch: {h.data.shape}, {e_sent.data.shape}, {e_act.data.shape}"
        )
    return ad.add(ad.add(h, e_sent), e_act)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout while training; exact identity otherwise."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, Tensor(mask))
