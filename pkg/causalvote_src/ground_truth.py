"""Registry of shipped ground-truth graphs.

Each entry is a JSON file ``<name>.<variant>.json`` under ``data/ground_truth``
holding the graph in the exported graph format plus metadata (domains,
two-way pairs, notes).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

from .graph import CausalGraph, GraphLike, Skeleton
from .utils import read_json

logger = logging.getLogger(__name__)

DEFAULT_GROUND_TRUTH_DIR = Path(__file__).parent / "data" / "ground_truth"


class GroundTruthNotFound(LookupError):
    """No registry entry for the requested dataset and variant."""


@dataclass(frozen=True)
class GroundTruthEntry:
    name: str
    variant: str
    graph: GraphLike
    domains: Tuple[str, ...]
    factors: Tuple[str, ...]
    drawn_edges: Tuple[Tuple[str, str], ...] = ()
    two_way_pairs: Tuple[Tuple[str, str], ...] = ()
    source: str = ""
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def directed(self) -> bool:
        return self.graph.directed

    @property
    def skeleton(self) -> Skeleton:
        return self.graph.skeleton()

    @property
    def label(self) -> str:
        return f"{self.name}:{self.variant}"

    def domain_text(self) -> str:
        """Domains as prose: "medical, biology, and social science"."""
        domains = list(self.domains)
        if len(domains) <= 1:
            return "".join(domains)
        if len(domains) == 2:
            return f"{domains[0]} and {domains[1]}"
        return ", ".join(domains[:-1]) + f", and {domains[-1]}"


def _entry_path(name: str, variant: str, directory: Path) -> Path:
    return directory / f"{name.lower()}.{variant.lower()}.json"


def available_ground_truths(directory: Optional[Union[str, Path]] = None) -> List[Tuple[str, str]]:
    """(NAME, variant) for every registry file, sorted."""
    base = Path(directory) if directory else DEFAULT_GROUND_TRUTH_DIR
    entries = []
    for path in sorted(base.glob("*.*.json")):
        name, variant = path.name[: -len(".json")].split(".", 1)
        entries.append((name.upper(), variant))
    return entries


def load_ground_truth(name: str, variant: str = "original",
                      directory: Optional[Union[str, Path]] = None) -> GroundTruthEntry:
    """Load a ground-truth graph from the registry."""
    base = Path(directory) if directory else DEFAULT_GROUND_TRUTH_DIR
    path = _entry_path(name, variant, base)
    if not path.exists():
        known = ", ".join(f"{n}:{v}" for n, v in available_ground_truths(base))
        raise GroundTruthNotFound(f"No ground truth {name}:{variant} (available: {known})")

    payload = read_json(path)
    variables = payload["variables"]
    drawn = tuple((a, b) for a, b in payload["edges"])
    two_way = tuple((a, b) for a, b in payload.get("two_way_pairs", []))

    graph: GraphLike
    if payload.get("directed", True):
        # The reverse arrow of a two-way pair cannot live in an acyclic graph.
        dropped = {(b, a) for a, b in two_way}
        edges = [edge for edge in drawn if edge not in dropped]
        if dropped:
            logger.info(f"{name}:{variant} draws two-way arrows {sorted(dropped)}; keeping one direction each")
        graph = CausalGraph.from_names(variables, edges)
    else:
        graph = Skeleton.from_names(variables, drawn)

    return GroundTruthEntry(
        name=payload.get("name", name.upper()),
        variant=payload.get("variant", variant),
        graph=graph,
        domains=tuple(payload.get("domains", [])),
        factors=tuple(variables),
        drawn_edges=drawn,
        two_way_pairs=two_way,
        source=payload.get("source", ""),
        notes=tuple(payload.get("notes", [])),
    )
