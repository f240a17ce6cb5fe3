"""Relation-typed temporal graphs over dialogs.

Two complete digraphs drive the model:

* SATG — one node per utterance; the relation of an edge encodes
  (source speaker, target speaker, temporal order), where temporal order
  compares the source position against the target position and equality
  falls into the '<=' bucket. For two speakers the ids are::

      r        1    2    3    4    5    6    7    8
      src spk  1    1    1    1    2    2    2    2
      tgt spk  1    1    2    2    1    1    2    2
      order    >    <=   >    <=   >    <=   >    <=

* DRTG — two nodes per utterance (a sentiment node and an act node); the
  relation encodes (source task, target task, temporal order) with '='
  kept distinct so the dual node of an utterance is reachable through its
  own relation::

      r     1  2  3  4  5  6  7  8  9  10 11 12
      src   S  S  S  S  S  S  A  A  A  A  A  A
      tgt   S  S  S  A  A  A  S  S  S  A  A  A
      order <  =  >  <  =  >  <  =  >  <  =  >

Node numbering in DRTG: sentiment node of utterance k (0-based) is k, its
act node is N+k. Self-edges are excluded in both graphs (the transform
layers carry a separate self term), so the same-task '=' relations of DRTG
are structurally empty.
"""

from __future__ import annotations

import numpy as np

SENTIMENT_TASK = "S"
ACT_TASK = "A"


class RelGraph:
    """Per-node, per-relation in-neighborhood lists of a relation-typed digraph."""

    def __init__(self, n_nodes: int, n_relations: int):
        self.n_nodes = n_nodes
        self.n_relations = n_relations
        self.in_neighbors: list[list[list[int]]] = [
            [[] for _ in range(n_relations)] for _ in range(n_nodes)
        ]
        self._mean_cache: dict[int, np.ndarray | None] = {}

    def add_edge(self, source: int, target: int, relation: int) -> None:
        if not (1 <= relation <= self.n_relations):
            raise ValueError(f"relation {relation} outside 1..{self.n_relations}")
        self.in_neighbors[target][relation - 1].append(source)

    def neighbors(self, node: int, relation: int) -> list[int]:
        """The list of sources aggregated into `node` under `relation` (1-based)."""
        return self.in_neighbors[node][relation - 1]

    def edges(self):
        """All (source, target, relation) triples in deterministic order."""
        for target in range(self.n_nodes):
            for r in range(1, self.n_relations + 1):
                for source in self.in_neighbors[target][r - 1]:
                    yield source, target, r

    def n_edges(self) -> int:
        return sum(1 for _ in self.edges())

    def relation_counts(self) -> list[int]:
        counts = [0] * self.n_relations
        for _, _, r in self.edges():
            counts[r - 1] += 1
        return counts

    def mean_matrix(self, relation: int) -> np.ndarray | None:
        """Dense matrix M with M[i, j] = 1/|N_i^r| for j in N_i^r; None if the
        relation is empty at every node."""
        if relation not in self._mean_cache:
            m = np.zeros((self.n_nodes, self.n_nodes))
            any_edge = False
            for i in range(self.n_nodes):
                sources = self.in_neighbors[i][relation - 1]
                if sources:
                    any_edge = True
                    m[i, sources] = 1.0 / len(sources)
            self._mean_cache[relation] = m if any_edge else None
        return self._mean_cache[relation]


def satg_relation(speaker_i: int, speaker_j: int, idx_i: int, idx_j: int, n_speakers: int) -> int:
    """Relation id of the edge aggregating utterance i (source) into j (target)."""
    for s in (speaker_i, speaker_j):
        if not (1 <= s <= n_speakers):
            raise ValueError(f"speaker {s} outside 1..{n_speakers}")
    pair = (speaker_i - 1) * n_speakers + (speaker_j - 1)
    return pair * 2 + (1 if idx_i > idx_j else 2)


def build_satg(dialog, n_speakers: int, temporal: bool = True) -> RelGraph:
    """Speaker-aware temporal graph of a dialog (complete digraph, no self-edges).

    `dialog` may be a Dialog or a plain sequence of 1-based speaker ids. With
    temporal=False the order component is dropped and relations collapse to
    (source speaker, target speaker) pairs.
    """
    speakers = list(dialog.speakers) if hasattr(dialog, "speakers") else list(dialog)
    n = len(speakers)
    n_relations = 2 * n_speakers * n_speakers if temporal else n_speakers * n_speakers
    graph = RelGraph(n, n_relations)
    for target in range(n):
        for source in range(n):
            if source == target:
                continue
            if temporal:
                r = satg_relation(
                    speakers[source], speakers[target], source + 1, target + 1, n_speakers
                )
            else:
                r = (speakers[source] - 1) * n_speakers + (speakers[target] - 1) + 1
            graph.add_edge(source, target, r)
    return graph


_DRTG_BASE = {
    (SENTIMENT_TASK, SENTIMENT_TASK): 0,
    (SENTIMENT_TASK, ACT_TASK): 3,
    (ACT_TASK, SENTIMENT_TASK): 6,
    (ACT_TASK, ACT_TASK): 9,
}


def drtg_relation(task_i: str, task_j: str, utt_i: int, utt_j: int) -> int:
    """Relation id of the edge from task node (task_i, utt_i) into (task_j, utt_j)."""
    base = _DRTG_BASE[(task_i, task_j)]
    if utt_i < utt_j:
        return base + 1
    if utt_i == utt_j:
        return base + 2
    return base + 3


def build_drtg(n_utterances: int, temporal: bool = True) -> RelGraph:
    """Dual-task reasoning temporal graph over 2N task nodes.

    All ordered node pairs except a node with itself; in particular the two
    dual nodes of one utterance are connected both ways. With temporal=False
    relations collapse to (source task, target task) pairs.
    """
    if n_utterances < 1:
        raise ValueError("n_utterances must be >= 1")
    n = n_utterances
    graph = RelGraph(2 * n, 12 if temporal else 4)

    def task_of(node: int) -> str:
        return SENTIMENT_TASK if node < n else ACT_TASK

    def utt_of(node: int) -> int:
        return node if node < n else node - n

    for target in range(2 * n):
        for source in range(2 * n):
            if source == target:
                continue
            src_task, tgt_task = task_of(source), task_of(target)
            if temporal:
                r = drtg_relation(src_task, tgt_task, utt_of(source), utt_of(target))
            else:
                r = _DRTG_BASE[(src_task, tgt_task)] // 3 + 1
            graph.add_edge(source, target, r)
    return graph


def disjoint_union(graphs: list[RelGraph]) -> RelGraph:
    """Stack graphs into one block-diagonal graph (shared relation ids)."""
    if not graphs:
        raise ValueError("disjoint_union of zero graphs")
    n_relations = graphs[0].n_relations
    if any(g.n_relations != n_relations for g in graphs):
        raise ValueError("graphs carry different relation inventories")
    union = RelGraph(sum(g.n_nodes for g in graphs), n_relations)
    offset = 0
    for g in graphs:
        for source, target, r in g.edges():
            union.add_edge(offset + source, offset + target, r)
        offset += g.n_nodes
    return union


def export_dot(graph: RelGraph, labels: list[str]) -> str:
    """Graphviz DOT text; edges are annotated with their relation ids."""
    if len(labels) != graph.n_nodes:
        raise ValueError(f"need {graph.n_nodes} labels, got {len(labels)}")
    lines = ["digraph relgraph {"]
    for i, label in enumerate(labels):
        lines.append(f'  n{i} [label="{label}"];')
    for source, target, r in graph.edges():
        lines.append(f'  n{source} -> n{target} [label="r{r}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
