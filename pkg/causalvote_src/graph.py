"""Causal graphs, skeletons, paths and d-separation.

Graphs are immutable values. Every constructor validates its input (unique
names, existing endpoints, no self-loops and, for directed graphs, no cycles)
and every "mutation" returns a new graph.

d-separation is decided by enumerating the simple paths between two
variables and checking each one for a blocking node, which keeps the code in
step with the textbook definition. ``moral_graph_separated`` implements the
ancestral moral-graph criterion independently and is used to cross-check it.
"""

import re
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import networkx as nx
import numpy as np

from .utils import canonical_pair

logger = logging.getLogger(__name__)

VariableKey = Union[int, str, "VariableId"]
Edge = Tuple[int, int]


class GraphError(ValueError):
    """Invalid use of a graph: unknown variable, bad path, bad position."""


class CycleError(GraphError):
    """A directed graph would contain a cycle."""


@dataclass(frozen=True, order=True)
class VariableId:
    index: int
    name: str


def _make_variables(names: Sequence[str]) -> Tuple[VariableId, ...]:
    seen: Set[str] = set()
    duplicates = []
    for name in names:
        if name in seen:
            duplicates.append(name)
        seen.add(name)
    if duplicates:
        raise GraphError(f"Duplicate variable names: {', '.join(sorted(set(duplicates)))}")
    return tuple(VariableId(index, name) for index, name in enumerate(names))


class _VariableLookup:
    """Name/index resolution shared by CausalGraph and Skeleton."""

    variables: Tuple[VariableId, ...]

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> List[str]:
        return [v.name for v in self.variables]

    @cached_property
    def _index_by_name(self) -> Dict[str, int]:
        return {v.name: v.index for v in self.variables}

    def index_of(self, key: VariableKey) -> int:
        """Resolve a name, index or VariableId to an index."""
        if isinstance(key, VariableId):
            if key.index >= self.n or self.variables[key.index] != key:
                raise GraphError(f"Unknown variable: {key.name!r}")
            return key.index
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
            if not 0 <= int(key) < self.n:
                raise GraphError(f"Variable index out of range: {key}")
            return int(key)
        if isinstance(key, str):
            try:
                return self._index_by_name[key]
            except KeyError:
                raise GraphError(f"Unknown variable: {key!r}") from None
        raise GraphError(f"Cannot resolve variable from {key!r}")

    def variable(self, key: VariableKey) -> VariableId:
        return self.variables[self.index_of(key)]

    def name_of(self, index: int) -> str:
        return self.variables[index].name


@dataclass(frozen=True)
class Skeleton(_VariableLookup):
    """Undirected graph; edges stored as (smaller index, larger index)."""

    variables: Tuple[VariableId, ...]
    edges: FrozenSet[Edge] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        canonical = set()
        for a, b in self.edges:
            for endpoint in (a, b):
                if not 0 <= endpoint < len(self.variables):
                    raise GraphError(f"Edge endpoint does not exist: {endpoint}")
            if a == b:
                raise GraphError(f"Self-loop on {self.variables[a].name!r}")
            canonical.add(canonical_pair(a, b))
        object.__setattr__(self, "edges", frozenset(canonical))

    @classmethod
    def from_names(cls, names: Sequence[str], edges: Iterable[Tuple[str, str]] = ()) -> "Skeleton":
        variables = _make_variables(names)
        lookup = {v.name: v.index for v in variables}
        try:
            resolved = frozenset((lookup[a], lookup[b]) for a, b in edges)
        except KeyError as e:
            raise GraphError(f"Unknown variable in edge list: {e.args[0]!r}") from None
        return cls(variables, resolved)

    @property
    def directed(self) -> bool:
        return False

    @cached_property
    def _adjacency(self) -> Dict[int, FrozenSet[int]]:
        adjacency: Dict[int, Set[int]] = {v.index: set() for v in self.variables}
        for a, b in self.edges:
            adjacency[a].add(b)
            adjacency[b].add(a)
        return {k: frozenset(v) for k, v in adjacency.items()}

    def neighbors(self, key: VariableKey) -> FrozenSet[int]:
        return self._adjacency[self.index_of(key)]

    def adjacent(self, a: VariableKey, b: VariableKey) -> bool:
        i, j = self.index_of(a), self.index_of(b)
        return i != j and canonical_pair(i, j) in self.edges

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges)

    def edge_names(self) -> List[Tuple[str, str]]:
        return [(self.name_of(a), self.name_of(b)) for a, b in self.sorted_edges()]

    def with_edge(self, a: VariableKey, b: VariableKey) -> "Skeleton":
        return Skeleton(self.variables, self.edges | {canonical_pair(self.index_of(a), self.index_of(b))})

    def without_edge(self, a: VariableKey, b: VariableKey) -> "Skeleton":
        return Skeleton(self.variables, self.edges - {canonical_pair(self.index_of(a), self.index_of(b))})

    def skeleton(self) -> "Skeleton":
        return self


@dataclass(frozen=True)
class CausalGraph(_VariableLookup):
    """Directed acyclic graph over named variables."""

    variables: Tuple[VariableId, ...]
    edges: FrozenSet[Edge] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", frozenset(self.edges))
        for a, b in self.edges:
            for endpoint in (a, b):
                if not 0 <= endpoint < len(self.variables):
                    raise GraphError(f"Edge endpoint does not exist: {endpoint}")
            if a == b:
                raise GraphError(f"Self-loop on {self.variables[a].name!r}")
        digraph = self.to_networkx()
        if not nx.is_directed_acyclic_graph(digraph):
            cycle = nx.find_cycle(digraph)
            names = " -> ".join(self.variables[a].name for a, _ in cycle)
            raise CycleError(f"Graph contains a cycle: {names}")

    @classmethod
    def from_names(cls, names: Sequence[str], edges: Iterable[Tuple[str, str]] = ()) -> "CausalGraph":
        variables = _make_variables(names)
        lookup = {v.name: v.index for v in variables}
        try:
            resolved = frozenset((lookup[a], lookup[b]) for a, b in edges)
        except KeyError as e:
            raise GraphError(f"Unknown variable in edge list: {e.args[0]!r}") from None
        return cls(variables, resolved)

    @property
    def directed(self) -> bool:
        return True

    def to_networkx(self) -> nx.DiGraph:
        digraph = nx.DiGraph()
        digraph.add_nodes_from(range(len(self.variables)))
        digraph.add_edges_from(self.edges)
        return digraph

    @cached_property
    def _parents(self) -> Dict[int, FrozenSet[int]]:
        parents: Dict[int, Set[int]] = {v.index: set() for v in self.variables}
        for a, b in self.edges:
            parents[b].add(a)
        return {k: frozenset(v) for k, v in parents.items()}

    @cached_property
    def _children(self) -> Dict[int, FrozenSet[int]]:
        children: Dict[int, Set[int]] = {v.index: set() for v in self.variables}
        for a, b in self.edges:
            children[a].add(b)
        return {k: frozenset(v) for k, v in children.items()}

    @cached_property
    def _descendants(self) -> Dict[int, FrozenSet[int]]:
        digraph = self.to_networkx()
        return {v.index: frozenset(nx.descendants(digraph, v.index)) for v in self.variables}

    @cached_property
    def _path_memo(self) -> Dict[Edge, List["Path"]]:
        return {}

    def parents(self, key: VariableKey) -> FrozenSet[int]:
        return self._parents[self.index_of(key)]

    def children(self, key: VariableKey) -> FrozenSet[int]:
        return self._children[self.index_of(key)]

    def descendants(self, key: VariableKey) -> FrozenSet[int]:
        """Proper descendants (the node itself excluded)."""
        return self._descendants[self.index_of(key)]

    def has_edge(self, a: VariableKey, b: VariableKey) -> bool:
        return (self.index_of(a), self.index_of(b)) in self.edges

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges)

    def edge_names(self) -> List[Tuple[str, str]]:
        return [(self.name_of(a), self.name_of(b)) for a, b in self.sorted_edges()]

    def with_edge(self, a: VariableKey, b: VariableKey) -> "CausalGraph":
        return CausalGraph(self.variables, self.edges | {(self.index_of(a), self.index_of(b))})

    def without_edge(self, a: VariableKey, b: VariableKey) -> "CausalGraph":
        return CausalGraph(self.variables, self.edges - {(self.index_of(a), self.index_of(b))})

    def skeleton(self) -> Skeleton:
        return Skeleton(self.variables, frozenset(canonical_pair(a, b) for a, b in self.edges))


GraphLike = Union[CausalGraph, Skeleton]


@dataclass(frozen=True)
class Path:
    """Sequence of distinct variable indices, consecutive ones adjacent."""

    nodes: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(self.nodes) < 2:
            raise GraphError("A path needs at least two nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphError(f"Path repeats a node: {self.nodes}")

    @classmethod
    def of(cls, graph: GraphLike, *keys: VariableKey) -> "Path":
        path = cls(tuple(graph.index_of(k) for k in keys))
        validate_path(graph, path)
        return path

    def __len__(self) -> int:
        return len(self.nodes)

    def names(self, graph: GraphLike) -> List[str]:
        return [graph.name_of(i) for i in self.nodes]


@dataclass(frozen=True)
class ConditioningSet:
    members: FrozenSet[int] = field(default_factory=frozenset)

    @classmethod
    def of(cls, graph: GraphLike, keys: Iterable[VariableKey] = ()) -> "ConditioningSet":
        return cls(frozenset(graph.index_of(k) for k in keys))

    def __contains__(self, index: object) -> bool:
        return index in self.members

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)


ConditioningLike = Union[ConditioningSet, Iterable[VariableKey], None]


def _resolve_conditioning(graph: GraphLike, z: ConditioningLike) -> ConditioningSet:
    if isinstance(z, ConditioningSet):
        for member in z.members:
            graph.index_of(member)
        return z
    return ConditioningSet.of(graph, z or ())


def _adjacent(graph: GraphLike, a: int, b: int) -> bool:
    if isinstance(graph, CausalGraph):
        return (a, b) in graph.edges or (b, a) in graph.edges
    return canonical_pair(a, b) in graph.edges


def validate_path(graph: GraphLike, path: Path) -> None:
    for node in path.nodes:
        graph.index_of(node)
    for a, b in zip(path.nodes, path.nodes[1:]):
        if not _adjacent(graph, a, b):
            raise GraphError(
                f"Path step {graph.name_of(a)!r} - {graph.name_of(b)!r} is not an edge"
            )


def _is_collider_at(graph: CausalGraph, nodes: Tuple[int, ...], position: int) -> bool:
    middle = nodes[position]
    return (nodes[position - 1], middle) in graph.edges and (nodes[position + 1], middle) in graph.edges


def is_collider(graph: CausalGraph, path: Path, position: int) -> bool:
    """True iff both path neighbours of ``path.nodes[position]`` point into it."""
    if not 0 < position < len(path) - 1:
        raise GraphError(
            f"Collider position must be an interior index in (0, {len(path) - 1}), got {position}"
        )
    validate_path(graph, path)
    return _is_collider_at(graph, path.nodes, position)


def _path_blocked(graph: CausalGraph, nodes: Tuple[int, ...], z: FrozenSet[int]) -> bool:
    for position in range(1, len(nodes) - 1):
        node = nodes[position]
        if _is_collider_at(graph, nodes, position):
            if node not in z and not (graph._descendants[node] & z):
                return True
        elif node in z:
            return True
    return False


def blocks(graph: CausalGraph, path: Path, z: ConditioningLike) -> bool:
    """True iff ``z`` blocks ``path``.

    A path is blocked when an arrow-emitting interior node is in ``z``, or a
    collider on it is outside ``z`` and has no descendant in ``z``.
    """
    validate_path(graph, path)
    conditioning = _resolve_conditioning(graph, z)
    return _path_blocked(graph, path.nodes, conditioning.members)


def _enumerate_paths(adjacency: Dict[int, FrozenSet[int]], start: int, end: int) -> List[Tuple[int, ...]]:
    found: List[Tuple[int, ...]] = []
    stack: List[Tuple[int, Tuple[int, ...]]] = [(start, (start,))]
    while stack:
        node, trail = stack.pop()
        for nxt in sorted(adjacency[node], reverse=True):
            if nxt == end:
                found.append(trail + (end,))
            elif nxt not in trail:
                stack.append((nxt, trail + (nxt,)))
    return found


def simple_paths(graph: GraphLike, a: VariableKey, b: VariableKey) -> List[Path]:
    """All simple paths between two variables in the graph's skeleton."""
    i, j = graph.index_of(a), graph.index_of(b)
    if i == j:
        raise GraphError("Paths need two distinct endpoints")
    if isinstance(graph, CausalGraph):
        memo = graph._path_memo
        if (i, j) not in memo:
            adjacency = graph.skeleton()._adjacency
            memo[(i, j)] = [Path(p) for p in _enumerate_paths(adjacency, i, j)]
        return memo[(i, j)]
    return [Path(p) for p in _enumerate_paths(graph._adjacency, i, j)]


def d_separates(graph: CausalGraph, a: VariableKey, b: VariableKey, z: ConditioningLike = None) -> bool:
    """True iff ``z`` blocks every path between ``a`` and ``b``."""
    i, j = graph.index_of(a), graph.index_of(b)
    if i == j:
        raise GraphError("d-separation needs two distinct variables")
    conditioning = _resolve_conditioning(graph, z)
    if i in conditioning or j in conditioning:
        raise GraphError("The conditioning set must not contain the queried variables")
    members = conditioning.members
    return all(_path_blocked(graph, path.nodes, members) for path in simple_paths(graph, i, j))


def moral_graph_separated(graph: CausalGraph, a: VariableKey, b: VariableKey, z: ConditioningLike = None) -> bool:
    """d-separation through the moralized ancestral graph.

    Restrict to the ancestors of {a, b} ∪ z, moralize, drop z, and test
    whether a and b are disconnected.
    """
    i, j = graph.index_of(a), graph.index_of(b)
    conditioning = _resolve_conditioning(graph, z).members
    digraph = graph.to_networkx()
    relevant = {i, j} | set(conditioning)
    ancestral = set(relevant)
    for node in relevant:
        ancestral |= nx.ancestors(digraph, node)
    moral = nx.moral_graph(digraph.subgraph(ancestral))
    moral.remove_nodes_from(conditioning)
    return not nx.has_path(moral, i, j)


def complete_skeleton(variables: Sequence[str]) -> Skeleton:
    """Skeleton with an edge between every pair of ``variables``."""
    if len(variables) < 2:
        raise GraphError("A complete skeleton needs at least two variables")
    names = [v.name if isinstance(v, VariableId) else v for v in variables]
    base = Skeleton(_make_variables(names))
    n = len(names)
    return Skeleton(base.variables, frozenset((a, b) for a in range(n) for b in range(a + 1, n)))


def random_dag(n: int, edge_probability: float, seed: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> CausalGraph:
    """Random DAG over ``V0..V{n-1}``: each forward pair of a random order is an edge w.p. ``edge_probability``."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    order = rng.permutation(n)
    edges = set()
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < edge_probability:
                edges.add((int(order[a]), int(order[b])))
    return CausalGraph(_make_variables([f"V{k}" for k in range(n)]), frozenset(edges))


_DOT_BARE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _dot_id(name: str) -> str:
    if _DOT_BARE.match(name):
        return name
    escaped = name.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def export_graph(graph: GraphLike, fmt: str = "json") -> str:
    """Serialize a graph or skeleton as DOT or JSON (deterministic)."""
    fmt = fmt.lower()
    if fmt == "json":
        payload = {
            "variables": graph.names,
            "directed": graph.directed,
            "edges": [[a, b] for a, b in graph.edge_names()],
        }
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "dot":
        keyword, arrow = ("digraph", "->") if graph.directed else ("graph", "--")
        lines = [f"{keyword} G {{"]
        lines.extend(f"  {_dot_id(name)};" for name in graph.names)
        lines.extend(f"  {_dot_id(a)} {arrow} {_dot_id(b)};" for a, b in graph.edge_names())
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"Unsupported graph format: {fmt!r} (expected 'dot' or 'json')")


_DOT_TOKEN = r'(?:[A-Za-z_][A-Za-z0-9_]*|"(?:[^"\\]|\\.)*")'
_DOT_NODE = re.compile(rf"^\s*({_DOT_TOKEN})\s*;\s*$")
_DOT_EDGE = re.compile(rf"^\s*({_DOT_TOKEN})\s*(->|--)\s*({_DOT_TOKEN})\s*;\s*$")


def _dot_unquote(token: str) -> str:
    if token.startswith('"'):
        return re.sub(r'\\(.)', r'\1', token[1:-1])
    return token


def import_graph(text: str) -> GraphLike:
    """Inverse of ``export_graph`` for both formats."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        payload = json.loads(text)
        edges = [tuple(edge) for edge in payload.get("edges", [])]
        cls = CausalGraph if payload.get("directed", True) else Skeleton
        return cls.from_names(payload["variables"], edges)

    header = stripped.split("{", 1)[0].strip().split()
    if not header or header[0] not in ("digraph", "graph"):
        raise ValueError("Unrecognized graph text: expected JSON or a DOT graph")
    directed = header[0] == "digraph"
    names: List[str] = []
    edges: List[Tuple[str, str]] = []
    body = stripped.split("{", 1)[1].rsplit("}", 1)[0]
    for line in body.splitlines():
        if not line.strip():
            continue
        edge_match = _DOT_EDGE.match(line)
        if edge_match:
            edges.append((_dot_unquote(edge_match.group(1)), _dot_unquote(edge_match.group(3))))
            continue
        node_match = _DOT_NODE.match(line)
        if node_match:
            names.append(_dot_unquote(node_match.group(1)))
            continue
        raise ValueError(f"Unrecognized DOT line: {line.strip()!r}")
    cls = CausalGraph if directed else Skeleton
    return cls.from_names(names, edges)
