"""PC skeleton search and collider orientation.

The search runs against anything that answers conditional-independence
queries: a categorical dataset (G² test), a ground-truth DAG (d-separation)
or a hand-written table.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Mapping, Protocol, Sequence, Tuple, Union, runtime_checkable

from .citest import CategoricalDataset, CiResult, ci_test
from .graph import CausalGraph, CycleError, Edge, Skeleton, complete_skeleton, d_separates
from .utils import canonical_pair

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
DEFAULT_MAX_ORDER = 3

SepSetMap = Dict[Edge, FrozenSet[int]]


@runtime_checkable
class IndependenceOracle(Protocol):
    """Answers "is i independent of j given z" over a fixed variable list."""

    names: Sequence[str]

    def independent(self, i: int, j: int, z: Tuple[int, ...]) -> CiResult:
        ...


class DatasetOracle:
    """G² tests on a categorical dataset."""

    def __init__(self, data: CategoricalDataset, alpha: float = DEFAULT_ALPHA):
        self.data = data
        self.alpha = alpha
        self.names = list(data.names)

    def independent(self, i: int, j: int, z: Tuple[int, ...]) -> CiResult:
        return ci_test(self.data, i, j, z, alpha=self.alpha)


def _oracle_result(names: Sequence[str], i: int, j: int, z: Tuple[int, ...], independent: bool) -> CiResult:
    return CiResult(
        x=names[i],
        y=names[j],
        conditioning=tuple(names[k] for k in sorted(z)),
        statistic=0.0,
        degrees_of_freedom=0,
        p_value=1.0 if independent else 0.0,
        alpha=DEFAULT_ALPHA,
        independent=independent,
    )


class DSeparationOracle:
    """Independence read off a DAG by d-separation (a perfect CI test)."""

    def __init__(self, graph: CausalGraph):
        self.graph = graph
        self.names = graph.names

    def independent(self, i: int, j: int, z: Tuple[int, ...]) -> CiResult:
        return _oracle_result(self.names, i, j, z, d_separates(self.graph, i, j, z))


class ScriptedOracle:
    """Independence answers from a table keyed by (pair, conditioning set).

    Keys are ``(a, b, z)`` with variable names and ``z`` any iterable of
    names; queries missing from the table are answered with ``default``.
    """

    def __init__(self, names: Sequence[str], table: Mapping[Tuple[str, str, Iterable[str]], bool],
                 default: bool = False):
        self.names = list(names)
        self.default = default
        self._table: Dict[Tuple[FrozenSet[str], FrozenSet[str]], bool] = {}
        for (a, b, z), independent in table.items():
            for name in (a, b, *z):
                if name not in self.names:
                    raise ValueError(f"Unknown variable in oracle table: {name!r}")
            self._table[(frozenset((a, b)), frozenset(z))] = bool(independent)

    def independent(self, i: int, j: int, z: Tuple[int, ...]) -> CiResult:
        key = (frozenset((self.names[i], self.names[j])), frozenset(self.names[k] for k in z))
        return _oracle_result(self.names, i, j, z, self._table.get(key, self.default))


IndependenceSource = Union[CategoricalDataset, IndependenceOracle]


def as_oracle(source: IndependenceSource, alpha: float = DEFAULT_ALPHA) -> IndependenceOracle:
    if isinstance(source, CategoricalDataset):
        return DatasetOracle(source, alpha=alpha)
    if isinstance(source, CausalGraph):
        return DSeparationOracle(source)
    if isinstance(source, IndependenceOracle):
        return source
    raise TypeError(f"Cannot run PC on {type(source).__name__}")


@dataclass
class PcResult:
    """Skeleton, separating sets and the tests that produced them."""

    skeleton: Skeleton
    sepsets: SepSetMap = field(default_factory=dict)
    tests: List[CiResult] = field(default_factory=list)
    alpha: float = DEFAULT_ALPHA
    max_order: int = DEFAULT_MAX_ORDER

    @property
    def degenerate_tests(self) -> List[CiResult]:
        return [t for t in self.tests if t.degenerate]

    @property
    def sparse_tests(self) -> List[CiResult]:
        return [t for t in self.tests if t.sparse_strata]

    def sepset_names(self) -> Dict[str, List[str]]:
        names = self.skeleton.names
        return {
            f"{names[a]}|{names[b]}": [names[k] for k in sorted(z)]
            for (a, b), z in sorted(self.sepsets.items())
        }

    def to_dict(self) -> Dict[str, object]:
        return {
            "alpha": self.alpha,
            "max_order": self.max_order,
            "edges": [list(e) for e in self.skeleton.edge_names()],
            "sepsets": self.sepset_names(),
            "tests_run": len(self.tests),
            "degenerate_tests": [t.to_dict() for t in self.degenerate_tests],
            "sparse_tests": len(self.sparse_tests),
        }


def pc_skeleton(source: IndependenceSource, alpha: float = DEFAULT_ALPHA,
                max_order: int = DEFAULT_MAX_ORDER) -> PcResult:
    """Edge-deletion sweep starting from the complete skeleton.

    Order ``k`` tests every remaining pair against every ``k``-subset of the
    current neighbors of either endpoint, in index order. Adjacencies are
    frozen at the start of each order so the result does not depend on the
    order in which edges are removed.
    """
    if max_order < 0:
        raise ValueError(f"max_order must be >= 0, got {max_order}")
    oracle = as_oracle(source, alpha)
    names = list(oracle.names)
    skeleton = complete_skeleton(names)
    edges = set(skeleton.edges)
    sepsets: SepSetMap = {}
    tests: List[CiResult] = []

    def neighbors(node: int, current: Iterable[Edge]) -> List[int]:
        return sorted({b if a == node else a for a, b in current if node in (a, b)})

    for order in range(max_order + 1):
        frozen = set(edges)
        candidates = [e for e in sorted(frozen) if max(len(neighbors(e[0], frozen)), len(neighbors(e[1], frozen))) - 1 >= order]
        if not candidates:
            break
        for i, j in candidates:
            if (i, j) not in edges:
                continue
            pools = []
            for endpoint, other in ((i, j), (j, i)):
                pool = [k for k in neighbors(endpoint, frozen) if k != other]
                if len(pool) >= order:
                    pools.append(pool)
            tried = set()
            for pool in pools:
                for z in combinations(pool, order):
                    if z in tried:
                        continue
                    tried.add(z)
                    result = oracle.independent(i, j, z)
                    tests.append(result)
                    if result.independent:
                        edges.discard((i, j))
                        sepsets[(i, j)] = frozenset(z)
                        logger.debug(f"PC removed {names[i]} - {names[j]} given {[names[k] for k in z]}")
                        break
                if (i, j) not in edges:
                    break

    degenerate = sum(1 for t in tests if t.degenerate)
    if degenerate:
        logger.warning(f"PC ran {degenerate} degenerate independence tests (no degrees of freedom)")
    logger.info(f"PC kept {len(edges)} of {len(skeleton.edges)} adjacencies after {len(tests)} tests")
    return PcResult(Skeleton(skeleton.variables, frozenset(edges)), sepsets, tests, alpha, max_order)


@dataclass
class ColliderOrientation:
    """Partially directed result of collider orientation."""

    graph: CausalGraph
    undirected: List[Edge] = field(default_factory=list)
    conflicts: List[Tuple[int, int, int]] = field(default_factory=list)

    def undirected_names(self) -> List[Tuple[str, str]]:
        return [(self.graph.name_of(a), self.graph.name_of(b)) for a, b in self.undirected]

    def conflict_names(self) -> List[Tuple[str, str, str]]:
        return [tuple(self.graph.name_of(k) for k in triple) for triple in self.conflicts]


def pc_orient_colliders(skeleton: Skeleton, sepsets: SepSetMap) -> ColliderOrientation:
    """Orient i→k←j for every unshielded triple whose middle is outside sepset(i, j).

    A triple that would reverse an arrow already placed by another triple,
    or close a directed cycle, is reported as a conflict and left as is.
    """
    for (a, b), z in sepsets.items():
        if skeleton.adjacent(a, b):
            raise ValueError(f"Separating set recorded for kept edge {skeleton.name_of(a)} - {skeleton.name_of(b)}")
        if a in z or b in z:
            raise ValueError("A separating set must not contain its own pair")

    arrows: Dict[Edge, Tuple[int, int]] = {}
    conflicts: List[Tuple[int, int, int]] = []
    for k in range(skeleton.n):
        for i, j in combinations(sorted(skeleton.neighbors(k)), 2):
            if skeleton.adjacent(i, j):
                continue
            if k in sepsets.get(canonical_pair(i, j), frozenset()):
                continue
            wanted = [(i, k), (j, k)]
            clash = [arc for arc in wanted if arrows.get(canonical_pair(*arc), arc) != arc]
            if clash:
                conflicts.append((i, k, j))
                logger.warning(
                    f"Collider {skeleton.name_of(i)} -> {skeleton.name_of(k)} <- {skeleton.name_of(j)} "
                    f"conflicts with an existing orientation"
                )
                continue
            trial = dict(arrows)
            for arc in wanted:
                trial[canonical_pair(*arc)] = arc
            try:
                CausalGraph(skeleton.variables, frozenset(trial.values()))
            except CycleError:
                conflicts.append((i, k, j))
                logger.warning(f"Collider at {skeleton.name_of(k)} would close a directed cycle")
                continue
            arrows = trial

    undirected = sorted(e for e in skeleton.edges if e not in arrows)
    return ColliderOrientation(CausalGraph(skeleton.variables, frozenset(arrows.values())), undirected, conflicts)


def pc_vote(result: Union[PcResult, Skeleton], i, j) -> int:
    """+1 if the PC skeleton kept the pair, -1 otherwise."""
    skeleton = result.skeleton if isinstance(result, PcResult) else result
    a, b = skeleton.index_of(i), skeleton.index_of(j)
    if a == b:
        raise ValueError("pc_vote needs two distinct variables")
    return 1 if skeleton.adjacent(a, b) else -1

