"""Tests for the PC skeleton search and collider orientation."""

import numpy as np
import pytest

from causalvote_src.citest import CategoricalDataset, sample_selection_bias
from causalvote_src.graph import CausalGraph, Skeleton
from causalvote_src.ground_truth import load_ground_truth
from causalvote_src.pc import (
    DSeparationOracle,
    PcResult,
    ScriptedOracle,
    as_oracle,
    pc_orient_colliders,
    pc_skeleton,
    pc_vote,
)

NAMES = ["A", "B", "C"]


@pytest.fixture
def collider_distribution():
    """A associated with B and with C at every order; B and C marginally independent."""
    return ScriptedOracle(NAMES, {("B", "C", ()): True})


@pytest.fixture
def chain_distribution():
    """Every pair associated marginally; B and C independent given A."""
    return ScriptedOracle(NAMES, {("B", "C", ("A",)): True})


class TestPcSkeleton:
    """Test the edge-deletion sweep."""

    def test_collider_distribution(self, collider_distribution):
        """Test that the marginally independent pair is removed with an empty sepset."""
        result = pc_skeleton(collider_distribution)
        assert result.skeleton.edge_names() == [("A", "B"), ("A", "C")]
        assert result.sepsets == {(1, 2): frozenset()}

    def test_chain_distribution(self, chain_distribution):
        """Test that the pair separated by A is removed at order one."""
        result = pc_skeleton(chain_distribution)
        assert result.skeleton.edge_names() == [("A", "B"), ("A", "C")]
        assert result.sepsets == {(1, 2): frozenset({0})}
        assert result.sepset_names() == {"B|C": ["A"]}

    def test_max_order_zero_stops_early(self, chain_distribution):
        """Test that order-one separations are not found at max order zero."""
        result = pc_skeleton(chain_distribution, max_order=0)
        assert len(result.skeleton.edges) == 3
        assert result.sepsets == {}

    def test_negative_max_order(self, collider_distribution):
        """Test that a negative max order is refused."""
        with pytest.raises(ValueError):
            pc_skeleton(collider_distribution, max_order=-1)

    def test_perfect_oracle_recovers_asia(self):
        """Test that PC on d-separation recovers the ASIA skeleton."""
        truth = load_ground_truth("ASIA").graph
        result = pc_skeleton(DSeparationOracle(truth))
        assert result.skeleton.edges == truth.skeleton().edges
        for (a, b), z in result.sepsets.items():
            assert a not in z and b not in z
            assert not result.skeleton.adjacent(a, b)

    def test_graph_source_becomes_oracle(self):
        """Test that a CausalGraph is accepted directly."""
        graph = CausalGraph.from_names(NAMES, [("B", "A"), ("C", "A")])
        assert isinstance(as_oracle(graph), DSeparationOracle)
        assert pc_skeleton(graph).skeleton.edge_names() == [("A", "B"), ("A", "C")]

    def test_unsupported_source(self):
        """Test that unknown sources raise TypeError."""
        with pytest.raises(TypeError):
            as_oracle("not data")

    def test_additive_collider_data(self):
        """Test PC on data from B -> A <- C with A = B + C."""
        rng = np.random.default_rng(7)
        b = rng.integers(0, 2, size=10000)
        c = rng.integers(0, 2, size=10000)
        data = CategoricalDataset(("A", "B", "C"), (3, 2, 2), np.column_stack([b + c, b, c]))
        result = pc_skeleton(data, alpha=0.001)
        assert result.skeleton.edge_names() == [("A", "B"), ("A", "C")]

    def test_deterministic(self):
        """Test that the same data gives the same skeleton and sepsets."""
        data = sample_selection_bias(3000, seed=5)
        first, second = pc_skeleton(data), pc_skeleton(data)
        assert first.skeleton.edges == second.skeleton.edges
        assert first.sepsets == second.sepsets

    def test_to_dict(self, chain_distribution):
        """Test the serialized summary."""
        payload = pc_skeleton(chain_distribution).to_dict()
        assert payload["edges"] == [["A", "B"], ["A", "C"]]
        assert payload["sepsets"] == {"B|C": ["A"]}
        assert payload["tests_run"] > 0


class TestSelectionBias:
    """Test the age-filter demonstration."""

    def test_filtered_data_drops_gender_age(self):
        """Test that filtering to under-60s removes the Gender - Age adjacency."""
        dropped = 0
        for seed in range(100):
            data = sample_selection_bias(20000, seed=seed, under_60_only=True)
            if not pc_vote(pc_skeleton(data), "Age", "Gender") > 0:
                dropped += 1
        assert dropped >= 95

    def test_unfiltered_data_keeps_gender_age(self):
        """Test that the full population keeps the Gender - Age adjacency."""
        kept = 0
        for seed in range(100):
            data = sample_selection_bias(20000, seed=1000 + seed)
            kept += int(pc_vote(pc_skeleton(data), "Age", "Gender") == 1)
        assert kept >= 95


class TestColliders:
    """Test collider orientation."""

    def test_collider_oriented(self, collider_distribution):
        """Test that B -> A <- C is oriented when A is outside sepset(B, C)."""
        result = pc_skeleton(collider_distribution)
        orientation = pc_orient_colliders(result.skeleton, result.sepsets)
        assert orientation.graph.edge_names() == [("B", "A"), ("C", "A")]
        assert orientation.undirected == []
        assert orientation.conflicts == []

    def test_chain_left_unoriented(self, chain_distribution):
        """Test that nothing is oriented when A separates B and C."""
        result = pc_skeleton(chain_distribution)
        orientation = pc_orient_colliders(result.skeleton, result.sepsets)
        assert orientation.graph.edges == frozenset()
        assert orientation.undirected_names() == [("A", "B"), ("A", "C")]

    def test_conflicting_colliders_reported(self):
        """Test that a triple reversing an existing arrow is reported, not applied."""
        skeleton = Skeleton.from_names(["X", "Y", "Z", "W"], [("X", "Y"), ("Y", "Z"), ("Z", "W")])
        sepsets = {(0, 2): frozenset(), (1, 3): frozenset(), (0, 3): frozenset()}
        orientation = pc_orient_colliders(skeleton, sepsets)
        assert orientation.graph.has_edge("X", "Y")
        assert orientation.graph.has_edge("Z", "Y")
        assert orientation.conflict_names() == [("Y", "Z", "W")]

    def test_sepset_for_kept_edge_rejected(self):
        """Test that sepsets must belong to removed pairs."""
        skeleton = Skeleton.from_names(NAMES, [("A", "B")])
        with pytest.raises(ValueError):
            pc_orient_colliders(skeleton, {(0, 1): frozenset()})


class TestPcVote:
    """Test the PC vote."""

    def test_votes(self, collider_distribution):
        """Test +1 for kept pairs and -1 for removed ones."""
        result = pc_skeleton(collider_distribution)
        assert pc_vote(result, "A", "B") == 1
        assert pc_vote(result, "B", "C") == -1
        assert pc_vote(result.skeleton, 1, 0) == 1

    def test_complete_output_votes_plus_everywhere(self):
        """Test that a complete PC output votes +1 on every pair."""
        result = pc_skeleton(ScriptedOracle(NAMES, {}))
        assert isinstance(result, PcResult)
        assert all(pc_vote(result, a, b) == 1 for a, b in [(0, 1), (0, 2), (1, 2)])
