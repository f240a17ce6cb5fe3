import re

import numpy as np
import pytest

from darer.data import Dialog, Utterance
from darer.graphs import (
    RelGraph,
    build_drtg,
    build_satg,
    disjoint_union,
    drtg_relation,
    export_dot,
    satg_relation,
)

# Independent oracle: the two relation tables written out row by row,
# keyed by the raw (source attr, target attr, order) triple.
SATG_TABLE = {
    (1, 1, ">"): 1, (1, 1, "<="): 2,
    (1, 2, ">"): 3, (1, 2, "<="): 4,
    (2, 1, ">"): 5, (2, 1, "<="): 6,
    (2, 2, ">"): 7, (2, 2, "<="): 8,
}
DRTG_TABLE = {
    ("S", "S", "<"): 1, ("S", "S", "="): 2, ("S", "S", ">"): 3,
    ("S", "A", "<"): 4, ("S", "A", "="): 5, ("S", "A", ">"): 6,
    ("A", "S", "<"): 7, ("A", "S", "="): 8, ("A", "S", ">"): 9,
    ("A", "A", "<"): 10, ("A", "A", "="): 11, ("A", "A", ">"): 12,
}


def oracle_satg_relation(spk_src, spk_tgt, idx_src, idx_tgt):
    return SATG_TABLE[(spk_src, spk_tgt, ">" if idx_src > idx_tgt else "<=")]


def oracle_drtg_relation(task_src, task_tgt, utt_src, utt_tgt):
    order = "<" if utt_src < utt_tgt else ("=" if utt_src == utt_tgt else ">")
    return DRTG_TABLE[(task_src, task_tgt, order)]


def dialog_from_speakers(speakers):
    utts = [Utterance(s, ["tok"], 0, 0) for s in speakers]
    return Dialog("d", utts)


class TestSatgRelation:
    def test_reproduces_two_speaker_table(self):
        for (si, sj, order), expected in SATG_TABLE.items():
            idx_i, idx_j = (4, 2) if order == ">" else (2, 4)
            assert satg_relation(si, sj, idx_i, idx_j, 2) == expected

    def test_spec_cases(self):
        assert satg_relation(1, 1, 4, 2, 2) == 1
        assert satg_relation(2, 1, 1, 3, 2) == 6

    def test_equal_positions_fall_in_le_bucket(self):
        assert satg_relation(1, 1, 3, 3, 2) == 2

    def test_speaker_out_of_range(self):
        with pytest.raises(ValueError):
            satg_relation(3, 1, 1, 2, 2)
        with pytest.raises(ValueError):
            satg_relation(1, 0, 1, 2, 2)

    def test_three_speaker_ids_partition(self):
        seen = set()
        for si in (1, 2, 3):
            for sj in (1, 2, 3):
                for idx in ((2, 1), (1, 2)):
                    seen.add(satg_relation(si, sj, idx[0], idx[1], 3))
        assert seen == set(range(1, 19))  # 2 * 3^2 relations, all hit


class TestBuildSatg:
    def test_single_utterance_has_no_edges(self):
        graph = build_satg(dialog_from_speakers([1]), 2)
        assert graph.n_edges() == 0

    def test_spec_five_utterance_neighborhoods(self):
        # speakers [1,2,1,2,1]; in-neighborhood of the third utterance
        graph = build_satg(dialog_from_speakers([1, 2, 1, 2, 1]), 2)
        node = 2
        assert graph.neighbors(node, 1) == [4]
        assert graph.neighbors(node, 2) == [0]
        assert graph.neighbors(node, 5) == [3]
        assert graph.neighbors(node, 6) == [1]
        for r in (3, 4, 7, 8):
            assert graph.neighbors(node, r) == []

    @pytest.mark.parametrize("n", [1, 2, 5, 9])
    def test_complete_digraph_edge_count(self, n, rng):
        speakers = (rng.integers(1, 3, size=n)).tolist()
        graph = build_satg(dialog_from_speakers(speakers), 2)
        assert graph.n_edges() == n * (n - 1)

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 11))
            n_speakers = int(rng.integers(2, 4))
            speakers = rng.integers(1, n_speakers + 1, size=n).tolist()
            graph = build_satg(dialog_from_speakers(speakers), n_speakers)
            for tgt in range(n):
                for src in range(n):
                    if src == tgt:
                        continue
                    if n_speakers == 2:
                        r = oracle_satg_relation(speakers[src], speakers[tgt], src + 1, tgt + 1)
                    else:
                        r = satg_relation(speakers[src], speakers[tgt], src + 1, tgt + 1, n_speakers)
                    assert src in graph.neighbors(tgt, r)

    def test_partition_no_duplicates(self, rng):
        speakers = rng.integers(1, 3, size=12).tolist()
        graph = build_satg(dialog_from_speakers(speakers), 2)
        for tgt in range(12):
            merged = [s for r in range(1, 9) for s in graph.neighbors(tgt, r)]
            assert sorted(merged) == [s for s in range(12) if s != tgt]

    def test_temporal_collapse_halves_relations(self):
        graph = build_satg(dialog_from_speakers([1, 2, 1]), 2, temporal=False)
        assert graph.n_relations == 4
        assert graph.n_edges() == 6

    def test_accepts_plain_speaker_list(self):
        graph = build_satg([1, 2], 2)
        assert graph.n_nodes == 2


class TestDrtgRelation:
    def test_reproduces_table(self):
        for (ti, tj, order), expected in DRTG_TABLE.items():
            utt_i, utt_j = {"<": (1, 2), "=": (2, 2), ">": (2, 1)}[order]
            assert drtg_relation(ti, tj, utt_i, utt_j) == expected

    def test_spec_cases(self):
        assert drtg_relation("S", "S", 1, 2) == 1
        assert drtg_relation("A", "A", 2, 1) == 12
        assert drtg_relation("S", "A", 2, 2) == 5
        assert drtg_relation("A", "S", 2, 2) == 8


class TestBuildDrtg:
    def test_single_utterance_has_only_dual_edges(self):
        graph = build_drtg(1)
        assert graph.n_edges() == 2
        assert graph.neighbors(0, 8) == [1]   # act node feeds the sentiment node
        assert graph.neighbors(1, 5) == [0]   # sentiment node feeds the act node

    def test_two_utterances_complete(self):
        assert build_drtg(2).n_edges() == 4 * 3

    def test_sentiment_chain_relation(self):
        graph = build_drtg(3)
        assert 0 in graph.neighbors(2, 1)  # first sentiment node into the third, same task, earlier

    def test_same_task_equal_relations_structurally_empty(self):
        graph = build_drtg(4)
        for node in range(8):
            assert graph.neighbors(node, 2) == []
            assert graph.neighbors(node, 11) == []
        assert graph.mean_matrix(2) is None
        assert graph.mean_matrix(11) is None

    def test_matches_pairwise_oracle(self):
        for n in range(1, 8):
            graph = build_drtg(n)
            for tgt in range(2 * n):
                for src in range(2 * n):
                    if src == tgt:
                        continue
                    r = oracle_drtg_relation(
                        "S" if src < n else "A",
                        "S" if tgt < n else "A",
                        src % n,
                        tgt % n,
                    )
                    assert src in graph.neighbors(tgt, r)

    def test_partition_no_duplicates(self):
        n = 6
        graph = build_drtg(n)
        for tgt in range(2 * n):
            merged = [s for r in range(1, 13) for s in graph.neighbors(tgt, r)]
            assert sorted(merged) == [s for s in range(2 * n) if s != tgt]

    def test_temporal_collapse(self):
        graph = build_drtg(3, temporal=False)
        assert graph.n_relations == 4
        assert graph.n_edges() == 6 * 5

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            build_drtg(0)


class TestRelGraph:
    def test_mean_matrix_rows_average(self):
        graph = build_satg(dialog_from_speakers([1, 2, 1, 2, 1]), 2)
        m = graph.mean_matrix(2)  # same speaker, earlier-or-equal sources
        row = m[4]
        assert row[0] == 0.5 and row[2] == 0.5 and row.sum() == 1.0

    def test_relation_id_bounds(self):
        graph = RelGraph(2, 3)
        with pytest.raises(ValueError):
            graph.add_edge(0, 1, 4)

    def test_disjoint_union_shifts_nodes(self):
        a = build_satg([1, 2], 2)
        b = build_satg([1, 1, 2], 2)
        u = disjoint_union([a, b])
        assert u.n_nodes == 5
        assert u.n_edges() == a.n_edges() + b.n_edges()
        assert u.neighbors(2, 2) == []  # no cross-block edges
        for src, tgt, r in b.edges():
            assert (src + 2) in u.neighbors(tgt + 2, r)

    def test_disjoint_union_rejects_mixed_relation_counts(self):
        with pytest.raises(ValueError):
            disjoint_union([RelGraph(1, 2), RelGraph(1, 3)])


EDGE_RE = re.compile(r'^  n(\d+) -> n(\d+) \[label="r(\d+)"\];$')
NODE_RE = re.compile(r'^  n(\d+) \[label="([^"]*)"\];$')


def parse_dot(text):
    """Minimal DOT reader for the exported digraph dialect."""
    lines = text.strip().splitlines()
    assert lines[0] == "digraph relgraph {" and lines[-1] == "}"
    nodes, edges = {}, []
    for line in lines[1:-1]:
        if (m := NODE_RE.match(line)) is not None:
            nodes[int(m.group(1))] = m.group(2)
        elif (m := EDGE_RE.match(line)) is not None:
            edges.append((int(m.group(1)), int(m.group(2)), int(m.group(3))))
        else:
            raise AssertionError(f"unparseable DOT line: {line!r}")
    return nodes, edges


class TestExportDot:
    def test_edgeless_graph_lists_nodes_only(self):
        graph = build_satg([1], 2)
        nodes, edges = parse_dot(export_dot(graph, ["u1"]))
        assert nodes == {0: "u1"} and edges == []

    def test_two_node_graph_has_two_edge_lines(self):
        graph = build_satg([1, 2], 2)
        _, edges = parse_dot(export_dot(graph, ["u1", "u2"]))
        assert len(edges) == 2

    def test_round_trip_matches_graph(self):
        graph = build_drtg(3)
        labels = [f"s{i}" for i in range(1, 4)] + [f"a{i}" for i in range(1, 4)]
        nodes, edges = parse_dot(export_dot(graph, labels))
        assert [nodes[i] for i in range(6)] == labels
        assert sorted(edges) == sorted(graph.edges())

    def test_label_count_checked(self):
        with pytest.raises(ValueError):
            export_dot(build_drtg(2), ["only-one"])

    def test_deterministic_output(self):
        graph = build_satg([1, 2, 1], 2)
        assert export_dot(graph, list("abc")) == export_dot(graph, list("abc"))
