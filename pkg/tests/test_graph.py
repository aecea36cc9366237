"""Tests for graphs, paths and d-separation."""

from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from causalvote_src.graph import (
    CausalGraph,
    CycleError,
    GraphError,
    Path,
    Skeleton,
    blocks,
    complete_skeleton,
    d_separates,
    export_graph,
    import_graph,
    is_collider,
    moral_graph_separated,
    random_dag,
    simple_paths,
)
from causalvote_src.ground_truth import load_ground_truth


@pytest.fixture
def collider():
    """B -> A <- C."""
    return CausalGraph.from_names(["A", "B", "C"], [("B", "A"), ("C", "A")])


@pytest.fixture
def asia():
    return load_ground_truth("ASIA").graph


class TestGraphConstruction:
    """Test graph validation."""

    def test_duplicate_names_rejected(self):
        """Test that repeated variable names are refused."""
        with pytest.raises(GraphError, match="Duplicate"):
            CausalGraph.from_names(["A", "A"])

    def test_unknown_endpoint_rejected(self):
        """Test that edges must name declared variables."""
        with pytest.raises(GraphError, match="'Z'"):
            Skeleton.from_names(["A", "B"], [("A", "Z")])

    def test_self_loop_rejected(self):
        """Test that self-loops are refused."""
        with pytest.raises(GraphError, match="Self-loop"):
            CausalGraph.from_names(["A", "B"], [("A", "A")])

    def test_cycle_rejected(self):
        """Test that a directed cycle raises CycleError."""
        with pytest.raises(CycleError):
            CausalGraph.from_names(["A", "B", "C"], [("A", "B"), ("B", "C"), ("C", "A")])

    def test_with_edge_returns_new_graph(self, collider):
        """Test that adding an edge leaves the original untouched."""
        bigger = collider.with_edge("B", "C")
        assert bigger.has_edge("B", "C")
        assert not collider.has_edge("B", "C")

    def test_with_edge_refuses_cycle(self):
        """Test that an edge closing a cycle is refused."""
        chain = CausalGraph.from_names(["A", "B"], [("A", "B")])
        with pytest.raises(CycleError):
            chain.with_edge("B", "A")

    def test_random_insertions_stay_acyclic(self):
        """Test that an insertion raises CycleError exactly when it would close a cycle."""
        rng = np.random.default_rng(11)
        for _ in range(50):
            graph = CausalGraph.from_names([f"V{k}" for k in range(7)])
            for _ in range(30):
                a, b = (int(v) for v in rng.choice(7, size=2, replace=False))
                closes_cycle = nx.has_path(graph.to_networkx(), b, a)
                try:
                    graph = graph.with_edge(a, b)
                except CycleError:
                    assert closes_cycle
                    continue
                assert not closes_cycle
                assert nx.is_directed_acyclic_graph(graph.to_networkx())

    def test_skeleton_edges_are_canonical(self):
        """Test that skeleton edges are stored smaller index first."""
        skeleton = Skeleton.from_names(["A", "B", "C"], [("C", "A"), ("A", "C")])
        assert skeleton.edges == frozenset({(0, 2)})
        assert skeleton.adjacent("C", "A")

    def test_skeleton_of_directed_graph(self, collider):
        """Test dropping directions."""
        assert collider.skeleton().edge_names() == [("A", "B"), ("A", "C")]

    def test_index_resolution(self, collider):
        """Test resolving names, indices and variable ids."""
        assert collider.index_of("C") == 2
        assert collider.index_of(1) == 1
        assert collider.index_of(collider.variable("B")) == 1
        with pytest.raises(GraphError):
            collider.index_of(7)
        with pytest.raises(GraphError):
            collider.index_of("D")

    def test_complete_skeleton(self):
        """Test the complete skeleton has n(n-1)/2 edges."""
        skeleton = complete_skeleton(["A", "B", "C", "D"])
        assert len(skeleton.edges) == 6
        with pytest.raises(GraphError):
            complete_skeleton(["A"])


class TestPaths:
    """Test paths and colliders."""

    def test_simple_paths_ignore_direction(self, collider):
        """Test that paths follow the skeleton."""
        paths = simple_paths(collider, "B", "C")
        assert [p.names(collider) for p in paths] == [["B", "A", "C"]]

    def test_simple_paths_match_networkx(self):
        """Test that path enumeration finds every simple path networkx finds, once each."""
        for k in range(60):
            n = 3 + k % 5
            graph = random_dag(n, 0.5, seed=900 + k)
            undirected = graph.to_networkx().to_undirected()
            for a, b in combinations(range(n), 2):
                ours = sorted(p.nodes for p in simple_paths(graph, a, b))
                expected = sorted(tuple(p) for p in nx.all_simple_paths(undirected, a, b))
                assert ours == expected
                assert len(set(ours)) == len(ours)

    def test_path_must_follow_edges(self, collider):
        """Test that a path stepping over a non-edge is refused."""
        with pytest.raises(GraphError, match="not an edge"):
            Path.of(collider, "B", "C")

    def test_path_cannot_repeat_nodes(self):
        """Test that repeated nodes are refused."""
        with pytest.raises(GraphError):
            Path((0, 1, 0))

    def test_is_collider(self, collider):
        """Test collider detection on B -> A <- C."""
        path = Path.of(collider, "B", "A", "C")
        assert is_collider(collider, path, 1)

    def test_chain_is_not_collider(self):
        """Test that a chain middle node is not a collider."""
        chain = CausalGraph.from_names(["A", "B", "C"], [("A", "B"), ("B", "C")])
        assert not is_collider(chain, Path.of(chain, "A", "B", "C"), 1)

    def test_collider_position_must_be_interior(self, collider):
        """Test that endpoints are not valid collider positions."""
        path = Path.of(collider, "B", "A", "C")
        with pytest.raises(GraphError, match="interior"):
            is_collider(collider, path, 0)
        with pytest.raises(GraphError):
            is_collider(collider, path, 2)

    def test_blocks(self, collider):
        """Test blocking by an unobserved collider and unblocking by observing it."""
        path = Path.of(collider, "B", "A", "C")
        assert blocks(collider, path, [])
        assert not blocks(collider, path, ["A"])

    def test_descendant_of_collider_unblocks(self):
        """Test that conditioning on a collider's descendant opens the path."""
        graph = CausalGraph.from_names(["A", "B", "C", "D"], [("B", "A"), ("C", "A"), ("A", "D")])
        path = Path.of(graph, "B", "A", "C")
        assert not blocks(graph, path, ["D"])


class TestDSeparation:
    """Test d-separation against known structures and the moral-graph criterion."""

    def test_collider_structure(self, collider):
        """Test marginal independence and dependence given the collider."""
        assert d_separates(collider, "B", "C", [])
        assert not d_separates(collider, "B", "C", ["A"])

    def test_adjacent_never_separated(self, collider):
        """Test that adjacent variables are never d-separated."""
        assert not d_separates(collider, "A", "B", ["C"])

    def test_conditioning_on_endpoint_rejected(self, collider):
        """Test that the conditioning set cannot contain a queried variable."""
        with pytest.raises(GraphError):
            d_separates(collider, "B", "C", ["B"])

    def test_asia_facts(self, asia):
        """Test well-known ASIA independences."""
        assert d_separates(asia, "Visit to Asia", "Smoking")
        assert not d_separates(asia, "Visit to Asia", "Smoking", ["Tuberculosis or Lung Cancer"])
        assert not d_separates(asia, "Visit to Asia", "Smoking", ["Dyspnoea"])
        assert d_separates(asia, "Tuberculosis", "Positive X-ray", ["Tuberculosis or Lung Cancer"]) is True
        assert d_separates(asia, "Lung Cancer", "Bronchitis", ["Smoking"])

    def test_agrees_with_moral_graph_on_random_dags(self):
        """Test path enumeration against the ancestral moral-graph criterion."""
        disagreements = 0
        queries = 0
        for k in range(200):
            n = 3 + k % 5
            graph = random_dag(n, 0.4, seed=k)
            for a, b in combinations(range(n), 2):
                rest = [v for v in range(n) if v not in (a, b)]
                for size in range(0, min(3, len(rest)) + 1):
                    for z in combinations(rest, size):
                        queries += 1
                        if d_separates(graph, a, b, z) != moral_graph_separated(graph, a, b, z):
                            disagreements += 1
        assert queries > 10000
        assert disagreements == 0

    def test_symmetric_on_random_dags(self):
        """Test that swapping the queried variables never changes the answer."""
        for k in range(100):
            n = 3 + k % 5
            graph = random_dag(n, 0.5, seed=500 + k)
            for a, b in combinations(range(n), 2):
                rest = [v for v in range(n) if v not in (a, b)]
                for size in range(0, min(2, len(rest)) + 1):
                    for z in combinations(rest, size):
                        assert d_separates(graph, a, b, z) == d_separates(graph, b, a, z)

    def test_asia_exhaustive_against_moral_graph(self, asia):
        """Test every ASIA pair and conditioning set of up to three variables."""
        n = asia.n
        queries = 0
        for a, b in combinations(range(n), 2):
            rest = [v for v in range(n) if v not in (a, b)]
            for size in range(0, 4):
                for z in combinations(rest, size):
                    queries += 1
                    assert d_separates(asia, a, b, z) == moral_graph_separated(asia, a, b, z), (a, b, z)
        # 28 pairs, each with 1 + 6 + 15 + 20 conditioning sets
        assert queries == 28 * 42

    def test_random_dag_is_seeded(self):
        """Test that a fixed seed reproduces the same DAG."""
        assert random_dag(6, 0.5, seed=3).edges == random_dag(6, 0.5, seed=3).edges


class TestExport:
    """Test DOT and JSON export."""

    def test_dot_quotes_names_with_spaces(self, asia):
        """Test DOT output for names that need quoting."""
        dot = export_graph(asia, "dot")
        assert dot.startswith("digraph G {\n")
        assert '  "Visit to Asia" -> Tuberculosis;\n' in dot
        assert dot.endswith("}\n")

    def test_skeleton_dot_is_undirected(self, collider):
        """Test that skeletons export as undirected DOT."""
        dot = export_graph(collider.skeleton(), "dot")
        assert dot.startswith("graph G {")
        assert "A -- B;" in dot

    def test_import_inverts_export(self, asia):
        """Test that exported text imports to an equal graph."""
        for fmt in ("dot", "json"):
            restored = import_graph(export_graph(asia, fmt))
            assert restored.names == asia.names
            assert restored.edges == asia.edges

    def test_unknown_format(self, collider):
        """Test that unsupported formats raise ValueError."""
        with pytest.raises(ValueError):
            export_graph(collider, "graphml")
