import numpy as np
import numpy.testing as npt
import pytest

import darer.autodiff as ad
from darer.autodiff import Tape, Tensor, backward, finite_diff_check
from darer.graphs import RelGraph, build_satg
from darer.layers import (
    BiLstmParams,
    DecoderParams,
    LstmDirection,
    RsgtParams,
    bilstm_forward,
    bilstm_forward_packed,
    decode,
    dropout,
    encode_utterance,
    encode_utterances,
    init_bilstm,
    init_decoder,
    init_rsgt,
    project_labels,
    rsgt_forward,
    superimpose,
)


def zero_bilstm(d_in, d_h):
    def direction():
        return LstmDirection(
            w_x=ad.parameter(np.zeros((d_in, 4 * d_h))),
            w_h=ad.parameter(np.zeros((d_h, 4 * d_h))),
            b=ad.parameter(np.zeros(4 * d_h)),
        )

    return BiLstmParams(direction(), direction(), d_in, d_h)


def scalar_lstm_states(w_x, w_h, b, seq):
    """Plain-numpy LSTM reference, one gate at a time."""
    d_h = w_h.shape[0]
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    out = []
    for x in seq:
        z = x @ w_x + h @ w_h + b
        i = 1 / (1 + np.exp(-z[:d_h]))
        f = 1 / (1 + np.exp(-z[d_h:2 * d_h]))
        g = np.tanh(z[2 * d_h:3 * d_h])
        o = 1 / (1 + np.exp(-z[3 * d_h:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h.copy())
    return np.asarray(out)


def scalar_bilstm(params, seq):
    fw = scalar_lstm_states(params.fw.w_x.data, params.fw.w_h.data, params.fw.b.data, seq)
    bw = scalar_lstm_states(params.bw.w_x.data, params.bw.w_h.data, params.bw.b.data, seq[::-1])[::-1]
    return np.hstack([fw, bw])


class TestBiLstm:
    def test_zero_parameters_give_zero_outputs(self, rng):
        params = zero_bilstm(3, 2)
        out = bilstm_forward(params, Tensor(rng.normal(size=(5, 3))))
        npt.assert_array_equal(out.data, np.zeros((5, 4)))

    def test_single_step_shape(self, rng):
        params = init_bilstm(rng, 3, 4)
        assert bilstm_forward(params, Tensor(rng.normal(size=(1, 3)))).data.shape == (1, 8)

    def test_matches_scalar_reference(self, rng):
        params = init_bilstm(rng, 4, 3)
        seq = rng.normal(size=(6, 4))
        out = bilstm_forward(params, Tensor(seq))
        npt.assert_allclose(out.data, scalar_bilstm(params, seq), atol=1e-12)

    def test_empty_sequence_rejected(self, rng):
        params = init_bilstm(rng, 3, 2)
        with pytest.raises(ValueError):
            bilstm_forward(params, Tensor(np.zeros((0, 3))))

    def test_gradients_match_finite_differences(self, rng):
        params = init_bilstm(rng, 3, 2)
        seq = Tensor(rng.normal(size=(4, 3)))
        tensors = list(params.named("x").values())
        err = finite_diff_check(
            lambda: ad.sum_all(ad.mul(bilstm_forward(params, seq), 0.5)), tensors, step=1e-5
        )
        assert err <= 1e-4

    def test_packed_matches_per_sequence(self, rng):
        params = init_bilstm(rng, 4, 3)
        chunks = [rng.normal(size=(n, 4)) for n in (3, 1, 5, 2)]
        packed = bilstm_forward_packed(params, Tensor(np.vstack(chunks)), [3, 1, 5, 2])
        separate = np.vstack([bilstm_forward(params, Tensor(c)).data for c in chunks])
        npt.assert_allclose(packed.data, separate, atol=1e-12)

    def test_packed_gradients_match(self, rng):
        params = init_bilstm(rng, 3, 2)
        chunks = [rng.normal(size=(n, 3)) for n in (2, 4, 1)]
        stacked = np.vstack(chunks)
        tensors = list(params.named("x").values())

        def run(fn):
            for p in tensors:
                p.zero_grad()
            with Tape():
                backward(ad.sum_all(ad.tanh(fn())))
            return [p.grad.copy() for p in tensors]

        packed = run(lambda: bilstm_forward_packed(params, Tensor(stacked), [2, 4, 1]))
        separate = run(lambda: ad.vstack([bilstm_forward(params, Tensor(c)) for c in chunks]))
        for a, b in zip(packed, separate):
            npt.assert_allclose(a, b, atol=1e-12)


class TestEncodeUtterance:
    def test_single_token_equals_its_state(self, rng):
        embed = ad.parameter(rng.normal(size=(9, 4)))
        params = init_bilstm(rng, 4, 3)
        pooled = encode_utterance(embed, params, [5])
        state = bilstm_forward(params, ad.take_rows(embed, [5]))
        npt.assert_array_equal(pooled.data, state.data[0])

    def test_order_sensitivity(self, rng):
        embed = ad.parameter(rng.normal(size=(9, 4)))
        params = init_bilstm(rng, 4, 3)
        a = encode_utterance(embed, params, [1, 2, 3])
        b = encode_utterance(embed, params, [3, 2, 1])
        assert np.abs(a.data - b.data).max() > 1e-8

    def test_unknown_tokens_encode_identically(self, rng):
        embed = ad.parameter(rng.normal(size=(9, 4)))
        params = init_bilstm(rng, 4, 3)
        a = encode_utterance(embed, params, [1, 1, 1])
        b = encode_utterance(embed, params, [1, 1, 1])
        npt.assert_array_equal(a.data, b.data)

    def test_out_of_range_token_rejected(self, rng):
        embed = ad.parameter(rng.normal(size=(9, 4)))
        params = init_bilstm(rng, 4, 3)
        with pytest.raises(IndexError):
            encode_utterance(embed, params, [9])

    def test_empty_rejected(self, rng):
        embed = ad.parameter(rng.normal(size=(9, 4)))
        params = init_bilstm(rng, 4, 3)
        with pytest.raises(ValueError):
            encode_utterance(embed, params, [])

    def test_batched_matches_single(self, rng):
        embed = ad.parameter(rng.normal(size=(12, 4)))
        params = init_bilstm(rng, 4, 3)
        lists = [[3, 4, 5], [2], [7, 8, 9, 10], [1, 1]]
        batched = encode_utterances(embed, params, lists)
        single = np.vstack([encode_utterance(embed, params, ids).data for ids in lists])
        npt.assert_allclose(batched.data, single, atol=1e-12)


def scalar_rsgt(w_self, w_rel, graph, h):
    """Direct per-node evaluation of the relational update."""
    out = np.zeros_like(h)
    for i in range(graph.n_nodes):
        acc = h[i] @ w_self
        for r in range(1, graph.n_relations + 1):
            sources = graph.neighbors(i, r)
            if sources:
                mean = sum(h[j] for j in sources) / len(sources)
                acc = acc + mean @ w_rel[r - 1]
        out[i] = acc
    return out


class TestRsgt:
    def test_identity_self_path(self, rng):
        graph = build_satg([1, 2, 1], 2)
        params = RsgtParams(
            w_self=ad.parameter(np.eye(4)),
            w_rel=[ad.parameter(np.zeros((4, 4))) for _ in range(8)],
        )
        h = Tensor(rng.normal(size=(3, 4)))
        npt.assert_array_equal(rsgt_forward(params, graph, h).data, h.data)

    def test_all_zero_parameters(self, rng):
        graph = build_satg([1, 2], 2)
        params = RsgtParams(
            w_self=ad.parameter(np.zeros((4, 4))),
            w_rel=[ad.parameter(np.zeros((4, 4))) for _ in range(8)],
        )
        out = rsgt_forward(params, graph, Tensor(rng.normal(size=(2, 4))))
        npt.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_two_node_hand_computed(self):
        graph = RelGraph(2, 1)
        graph.add_edge(0, 1, 1)
        graph.add_edge(1, 0, 1)
        w_self = np.array([[1.0, 2.0], [0.0, 1.0]])
        w_rel = np.array([[0.5, 0.0], [1.0, -1.0]])
        params = RsgtParams(ad.parameter(w_self), [ad.parameter(w_rel)])
        h = np.array([[1.0, 1.0], [2.0, 0.0]])
        out = rsgt_forward(params, graph, Tensor(h))
        npt.assert_allclose(out.data, scalar_rsgt(w_self, [w_rel], graph, h), atol=1e-15)
        # row 0: [1,1]@w_self + [2,0]@w_rel = [1,3] + [1,0] = [2,3]
        npt.assert_allclose(out.data[0], [2.0, 3.0], atol=1e-15)

    def test_matches_scalar_oracle_on_random_graphs(self, rng):
        for _ in range(10):
            speakers = rng.integers(1, 3, size=int(rng.integers(1, 8))).tolist()
            graph = build_satg(speakers, 2)
            params = init_rsgt(rng, 5, graph.n_relations)
            h = rng.normal(size=(len(speakers), 5))
            out = rsgt_forward(params, graph, Tensor(h))
            oracle = scalar_rsgt(params.w_self.data, [w.data for w in params.w_rel], graph, h)
            npt.assert_allclose(out.data, oracle, atol=1e-12)

    def test_additivity_in_node_features(self, rng):
        graph = build_satg([1, 2, 1, 2, 2, 1], 2)
        params = init_rsgt(rng, 4, 8)
        h1 = rng.normal(size=(6, 4))
        h2 = rng.normal(size=(6, 4))
        combined = rsgt_forward(params, graph, Tensor(h1 + h2)).data
        separate = rsgt_forward(params, graph, Tensor(h1)).data + rsgt_forward(params, graph, Tensor(h2)).data
        npt.assert_allclose(combined, separate, atol=1e-9)

    def test_permutation_equivariance(self, rng):
        # relabel nodes: new node k is old node perm[k]
        def permute_graph(graph, perm):
            inverse = np.argsort(perm)
            out = RelGraph(graph.n_nodes, graph.n_relations)
            for src, tgt, r in graph.edges():
                out.add_edge(int(inverse[src]), int(inverse[tgt]), r)
            return out

        graph = build_satg([1, 2, 2, 1, 2, 1], 2)
        params = init_rsgt(rng, 4, 8)
        h = rng.normal(size=(6, 4))
        for _ in range(5):
            perm = rng.permutation(6)
            out = rsgt_forward(params, graph, Tensor(h)).data
            out_perm = rsgt_forward(params, permute_graph(graph, perm), Tensor(h[perm])).data
            npt.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_dimension_mismatches_rejected(self, rng):
        graph = build_satg([1, 2], 2)
        params = init_rsgt(rng, 4, 8)
        with pytest.raises(ValueError):
            rsgt_forward(params, graph, Tensor(np.zeros((3, 4))))
        bad = init_rsgt(rng, 4, 5)
        with pytest.raises(ValueError):
            rsgt_forward(bad, graph, Tensor(np.zeros((2, 4))))

    def test_gradients(self, rng):
        graph = build_satg([1, 2, 1], 2)
        params = init_rsgt(rng, 3, 8)
        h = ad.parameter(rng.normal(size=(3, 3)))
        tensors = [h, params.w_self] + params.w_rel

        def f():
            return ad.sum_all(ad.tanh(rsgt_forward(params, graph, h)))

        assert finite_diff_check(f, tensors, step=1e-5) <= 1e-4


class TestDecode:
    def test_zero_parameters_give_uniform(self, rng):
        params = DecoderParams(ad.parameter(np.zeros((4, 3))), ad.parameter(np.zeros(3)))
        out = decode(params, Tensor(rng.normal(size=(5, 4))))
        npt.assert_allclose(out.data, np.full((5, 3), 1 / 3), atol=1e-15)

    def test_rows_are_distributions(self, rng):
        params = init_decoder(rng, 6, 4)
        out = decode(params, Tensor(rng.normal(size=(7, 6)) * 3))
        npt.assert_allclose(out.data.sum(axis=1), np.ones(7), atol=1e-12)
        assert (out.data > 0).all()

    def test_argmax_matches_logits(self, rng):
        params = init_decoder(rng, 6, 4)
        h = rng.normal(size=(7, 6))
        logits = h @ params.w.data + params.b.data
        out = decode(params, Tensor(h))
        npt.assert_array_equal(out.data.argmax(axis=1), logits.argmax(axis=1))

    def test_dim_mismatch(self, rng):
        params = init_decoder(rng, 6, 4)
        with pytest.raises(ValueError):
            decode(params, Tensor(np.zeros((2, 5))))


class TestProjectLabels:
    def test_one_hot_selects_row(self):
        m = Tensor(np.arange(12.0).reshape(3, 4))
        p = Tensor(np.array([[0.0, 1.0, 0.0]]))
        npt.assert_array_equal(project_labels(m, p).data, m.data[1:2])

    def test_uniform_mix(self):
        m = Tensor(np.eye(2))
        p = Tensor(np.array([[0.5, 0.5]]))
        npt.assert_allclose(project_labels(m, p).data, [[0.5, 0.5]], atol=1e-15)

    def test_linear_combination(self):
        m = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        p = Tensor(np.array([[0.3, 0.7]]))
        npt.assert_allclose(project_labels(m, p).data, [[0.3, 0.7]], atol=1e-15)

    def test_rejects_non_distribution(self):
        m = Tensor(np.eye(2))
        with pytest.raises(ValueError, match="row-sum"):
            project_labels(m, Tensor(np.array([[0.9, 0.3]])))

    def test_output_in_convex_hull(self, rng):
        m = Tensor(rng.normal(size=(4, 6)))
        raw = rng.random((10, 4))
        p = Tensor(raw / raw.sum(axis=1, keepdims=True))
        out = project_labels(m, p).data
        lo, hi = m.data.min(axis=0), m.data.max(axis=0)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


class TestSuperimpose:
    def test_zero_embeddings_identity(self, rng):
        h = Tensor(rng.normal(size=(3, 4)))
        zero = Tensor(np.zeros((3, 4)))
        npt.assert_array_equal(superimpose(h, zero, zero).data, h.data)

    def test_zero_hidden(self, rng):
        e1 = Tensor(rng.normal(size=(2, 4)))
        e2 = Tensor(rng.normal(size=(2, 4)))
        out = superimpose(Tensor(np.zeros((2, 4))), e1, e2)
        npt.assert_allclose(out.data, e1.data + e2.data, atol=1e-15)

    def test_commutative_in_label_terms(self, rng):
        h = Tensor(rng.normal(size=(2, 4)))
        e1 = Tensor(rng.normal(size=(2, 4)))
        e2 = Tensor(rng.normal(size=(2, 4)))
        npt.assert_allclose(superimpose(h, e1, e2).data, superimpose(h, e2, e1).data, atol=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            superimpose(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestDropout:
    def test_eval_mode_is_same_object(self, rng):
        x = Tensor(rng.normal(size=(5, 5)))
        assert dropout(x, 0.4, False, np.random.default_rng(0)) is x

    def test_zero_rate_identity(self, rng):
        x = Tensor(rng.normal(size=(5, 5)))
        assert dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_inverted_scaling_preserves_mean(self):
        x = Tensor(np.ones((300, 300)))
        out = dropout(x, 0.5, True, np.random.default_rng(7))
        assert abs(out.data.mean() - 1.0) < 0.05

    def test_rate_validated(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.zeros(3)), 1.0, True, np.random.default_rng(0))
