"""Skeleton recovery by voting and edge orientation.

Every knowledge base classifies every pair; its verdict becomes a vote
(+1 edge, -1 no edge, 0 unusable) and the optional PC run adds one more.
An edge survives only with a strictly positive score. Orientation asks each
knowledge base for the direction of every surviving edge and takes the
majority, with the background answer breaking ties.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
from tqdm import tqdm

from .cache import CachedChatClient, ResponseCache
from .chains import (
    ChainSettings,
    Direction,
    KnowledgeBase,
    OrientationVerdict,
    Verdict,
    VerdictValue,
    cc_chain,
    orientation_chain,
)
from .citest import CategoricalDataset, load_dataset
from .graph import CausalGraph, Edge, Skeleton, complete_skeleton, export_graph
from .ground_truth import GroundTruthEntry, load_ground_truth
from .llm import ChatClient, build_client
from .pc import IndependenceSource, PcResult, pc_skeleton, pc_vote
from .retrieval import load_pair_documents
from .utils import create_directory, read_json, write_json

if TYPE_CHECKING:
    from .config import Config

logger = logging.getLogger(__name__)

PC_SOURCE = "PC"
FLAG_DEFAULT_BIAS = "decided-by-default-bias"
FLAG_NO_DOCUMENTS = "no-documents"
FLAG_TASK_ERROR = "task-error"

STATUS_COMPLETE = "complete"
STATUS_PARTIAL = "partial"
STATUS_FAILED = "failed"

_FAILURE_FLAGS = ("client-error", "parse-failure", FLAG_TASK_ERROR)


def verdict_to_zeta(verdict: Union[Verdict, VerdictValue]) -> Optional[int]:
    """Edge-existence bit implied by a verdict; None for unusable ones."""
    value = verdict.value if isinstance(verdict, Verdict) else verdict
    if value is VerdictValue.DIRECTLY_ASSOCIATED:
        return 1
    if value in (VerdictValue.INDEPENDENT, VerdictValue.INDIRECTLY_ASSOCIATED):
        return 0
    return None


def zeta_to_vote(zeta: Optional[int]) -> int:
    if zeta is None:
        return 0
    return 1 if zeta == 1 else -1


def keep_edge(score):
    """An edge survives only with a strictly positive score; works on arrays."""
    return score > 0


@dataclass(frozen=True)
class Vote:
    source: str
    value: int
    provenance: str = ""
    weight: int = 1

    def __post_init__(self) -> None:
        if self.value not in (-1, 0, 1):
            raise ValueError(f"Vote value must be -1, 0 or +1, got {self.value}")
        if self.weight < 1:
            raise ValueError(f"Vote weight must be >= 1, got {self.weight}")

    @classmethod
    def from_verdict(cls, source: str, verdict: Verdict) -> "Vote":
        return cls(source, zeta_to_vote(verdict_to_zeta(verdict)), verdict.value.value)

    @property
    def points(self) -> int:
        return self.value * self.weight

    def to_dict(self) -> dict:
        payload = {"source": self.source, "value": self.value, "provenance": self.provenance}
        if self.weight != 1:
            payload["weight"] = self.weight
        return payload


@dataclass
class PairLedger:
    factor_a: str
    factor_b: str
    votes: List[Vote] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @property
    def score(self) -> int:
        return sum(v.points for v in self.votes)

    @property
    def kept(self) -> bool:
        return bool(keep_edge(self.score))

    def add_flag(self, flag: str) -> None:
        if flag not in self.flags:
            self.flags.append(flag)

    def to_dict(self) -> dict:
        return {
            "factors": [self.factor_a, self.factor_b],
            "score": self.score,
            "kept": self.kept,
            "votes": [v.to_dict() for v in self.votes],
            "flags": sorted(self.flags),
        }


@dataclass
class ScoreLedger:
    pairs: Dict[Edge, PairLedger] = field(default_factory=dict)

    def score(self, i: int, j: int) -> int:
        return self.pairs[(min(i, j), max(i, j))].score

    def flagged(self) -> Dict[Edge, List[str]]:
        return {edge: entry.flags for edge, entry in sorted(self.pairs.items()) if entry.flags}

    def to_dict(self) -> dict:
        return {f"{e.factor_a}|{e.factor_b}": e.to_dict() for _, e in sorted(self.pairs.items())}


def aggregate_votes(names: Sequence[str], votes_by_pair: Mapping[Edge, Sequence[Vote]]) -> Tuple[Skeleton, ScoreLedger]:
    """Start from the complete skeleton and drop every pair whose score is <= 0.

    Pairs absent from ``votes_by_pair`` were never queried: they are dropped
    and left out of the ledger.
    """
    skeleton = complete_skeleton(names)
    ledger = ScoreLedger()
    kept = set()
    for edge in sorted(votes_by_pair):
        i, j = edge
        if i >= j:
            raise ValueError(f"Pairs must be in canonical order, got {edge}")
        entry = PairLedger(names[i], names[j], list(votes_by_pair[edge]))
        if all(v.value == 0 for v in entry.votes):
            entry.add_flag(FLAG_DEFAULT_BIAS)
        ledger.pairs[edge] = entry
        if entry.kept:
            kept.add(edge)
    return Skeleton(skeleton.variables, frozenset(kept)), ledger


@dataclass(frozen=True)
class RecoveryConfig:
    """Knowledge-base roster and chain parameters for one recovery."""

    dataset: str
    use_background: bool = True
    use_documents: bool = False
    use_pc: bool = False
    max_documents: int = 10
    pc_alpha: float = 0.05
    pc_max_order: int = 3
    pc_weight: int = 1
    chain: ChainSettings = field(default_factory=ChainSettings)
    domains: str = ""
    max_workers: int = 4

    def __post_init__(self) -> None:
        if not (self.use_background or self.use_documents or self.use_pc):
            raise ValueError("At least one knowledge base must be enabled")
        if self.max_documents < 1:
            raise ValueError("max_documents must be >= 1")

    @classmethod
    def from_config(cls, config: "Config", domains: str = "") -> "RecoveryConfig":
        return cls(
            dataset=config.dataset,
            use_background=config.use_background,
            use_documents=config.use_documents,
            use_pc=config.use_pc,
            max_documents=config.max_documents,
            pc_alpha=config.pc_alpha,
            pc_max_order=config.pc_max_order,
            pc_weight=config.pc_weight,
            chain=ChainSettings(
                model=config.model,
                temperature=config.temperature,
                max_tokens=config.max_output_tokens,
                max_document_chars=config.max_document_chars,
            ),
            domains=domains,
            max_workers=config.max_workers,
        )


def _knowledge_bases(rconfig: RecoveryConfig, documents: Sequence[KnowledgeBase]) -> List[KnowledgeBase]:
    roster = [KnowledgeBase.background()] if rconfig.use_background else []
    if rconfig.use_documents:
        roster.extend(list(documents)[: rconfig.max_documents])
    return roster


def _run_tasks(tasks: List[Tuple], worker, max_workers: int, desc: str, progress: bool,
               on_error: Optional[Callable[[Exception], object]] = None) -> List:
    """Run ``worker(*task)`` for every task; results come back in task order.

    A task that raises is logged and replaced by ``on_error(exc)``.
    """
    results: List = [None] * len(tasks)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        futures = [executor.submit(worker, *task) for task in tasks]
        with tqdm(total=len(tasks), desc=desc, disable=not progress) as progress_bar:
            for position, future in enumerate(futures):
                try:
                    results[position] = future.result()
                except Exception as e:
                    if on_error is None:
                        raise
                    logger.error(f"{desc} task {tasks[position][0]} failed: {e}")
                    results[position] = on_error(e)
                progress_bar.update(1)
    return results


def _failed_verdict(error: Exception) -> Verdict:
    return Verdict(VerdictValue.UNKNOWN, flags=(FLAG_TASK_ERROR,), error=str(error))


def _failed_orientation(error: Exception) -> OrientationVerdict:
    return OrientationVerdict(Direction.UNKNOWN, flags=(FLAG_TASK_ERROR,), error=str(error))


def recover_skeleton(names: Sequence[str], documents_by_pair: Mapping[Edge, Sequence[KnowledgeBase]],
                     client: ChatClient, rconfig: RecoveryConfig, pc_result: Optional[PcResult] = None,
                     progress: bool = False) -> Tuple[Skeleton, ScoreLedger, Dict[Edge, List[Tuple[str, Verdict]]]]:
    """Query every knowledge base about every pair and aggregate the votes."""
    if rconfig.use_pc != (pc_result is not None):
        raise ValueError("A PC result must be given exactly when PC voting is enabled")
    pairs = [(i, j) for i in range(len(names)) for j in range(i + 1, len(names))]
    rosters = {pair: _knowledge_bases(rconfig, documents_by_pair.get(pair, ())) for pair in pairs}

    tasks = [(pair, kb) for pair in pairs for kb in rosters[pair]]

    def classify(pair: Edge, kb: KnowledgeBase) -> Verdict:
        return cc_chain(client, kb, (names[pair[0]], names[pair[1]]), names, rconfig.domains, rconfig.chain)

    verdicts = _run_tasks(tasks, classify, rconfig.max_workers, "Association", progress,
                          on_error=_failed_verdict)

    verdicts_by_pair: Dict[Edge, List[Tuple[str, Verdict]]] = {pair: [] for pair in pairs}
    for (pair, kb), verdict in zip(tasks, verdicts):
        verdicts_by_pair[pair].append((kb.kb_id, verdict))

    votes_by_pair: Dict[Edge, List[Vote]] = {}
    for pair in pairs:
        votes = [Vote.from_verdict(kb_id, verdict) for kb_id, verdict in verdicts_by_pair[pair]]
        if pc_result is not None:
            value = pc_vote(pc_result, *pair)
            votes.append(Vote(PC_SOURCE, value, "pc-kept" if value > 0 else "pc-removed", rconfig.pc_weight))
        votes_by_pair[pair] = votes

    skeleton, ledger = aggregate_votes(names, votes_by_pair)
    for pair in pairs:
        entry = ledger.pairs[pair]
        if rconfig.use_documents and not any(kb.is_document for kb in rosters[pair]):
            entry.add_flag(FLAG_NO_DOCUMENTS)
        for _, verdict in verdicts_by_pair[pair]:
            for flag in verdict.flags:
                entry.add_flag(flag)
        if FLAG_DEFAULT_BIAS in entry.flags:
            logger.debug(f"{entry.factor_a} / {entry.factor_b} had no usable votes; removed by default")
    logger.info(f"Kept {len(skeleton.edges)} of {len(pairs)} pairs")
    return skeleton, ledger, verdicts_by_pair


@dataclass
class OrientationTally:
    factor_a: str
    factor_b: str
    a_to_b: int = 0
    b_to_a: int = 0
    unknown: int = 0
    background: Direction = Direction.UNKNOWN
    decision: Direction = Direction.UNKNOWN
    demoted: bool = False

    @property
    def margin(self) -> int:
        return abs(self.a_to_b - self.b_to_a)

    def add(self, source: str, verdict: OrientationVerdict) -> None:
        if verdict.value is Direction.A_CAUSES_B:
            self.a_to_b += 1
        elif verdict.value is Direction.B_CAUSES_A:
            self.b_to_a += 1
        else:
            self.unknown += 1
        if source == "background":
            self.background = verdict.value

    def decide(self) -> Direction:
        if self.a_to_b > self.b_to_a:
            self.decision = Direction.A_CAUSES_B
        elif self.b_to_a > self.a_to_b:
            self.decision = Direction.B_CAUSES_A
        else:
            self.decision = self.background if self.a_to_b else Direction.UNKNOWN
        return self.decision

    def to_dict(self) -> dict:
        return {
            "factors": [self.factor_a, self.factor_b],
            "a_to_b": self.a_to_b,
            "b_to_a": self.b_to_a,
            "unknown": self.unknown,
            "margin": self.margin,
            "decision": self.decision.value,
            "demoted": self.demoted,
        }


@dataclass
class OrientationOutcome:
    graph: CausalGraph
    unresolved: List[Edge] = field(default_factory=list)
    tallies: Dict[Edge, OrientationTally] = field(default_factory=dict)
    demoted: List[Edge] = field(default_factory=list)


def resolve_orientations(skeleton: Skeleton, tallies: Dict[Edge, OrientationTally]) -> OrientationOutcome:
    """Accept each tally's decision, then break cycles.

    While the accepted arrows contain a directed cycle, the arrow on that
    cycle with the smallest margin (ties: the later pair) is demoted to
    unresolved.
    """
    arrows: Dict[Edge, Edge] = {}
    unresolved = []
    for edge in sorted(skeleton.edges):
        tally = tallies[edge]
        decision = tally.decide()
        if decision is Direction.A_CAUSES_B:
            arrows[edge] = edge
        elif decision is Direction.B_CAUSES_A:
            arrows[edge] = (edge[1], edge[0])
        else:
            unresolved.append(edge)

    demoted = []
    while True:
        digraph = nx.DiGraph(list(arrows.values()))
        try:
            cycle = nx.find_cycle(digraph)
        except nx.NetworkXNoCycle:
            break
        in_cycle = [(min(a, b), max(a, b)) for a, b in cycle]
        victim = min(in_cycle, key=lambda e: (tallies[e].margin, tuple(-k for k in e)))
        del arrows[victim]
        tallies[victim].demoted = True
        demoted.append(victim)
        unresolved.append(victim)
        names = " -> ".join(skeleton.name_of(a) for a, _ in cycle)
        logger.warning(f"Orientations form a cycle ({names}); leaving "
                       f"{skeleton.name_of(victim[0])} - {skeleton.name_of(victim[1])} unresolved")

    graph = CausalGraph(skeleton.variables, frozenset(arrows.values()))
    return OrientationOutcome(graph, sorted(unresolved), tallies, demoted)


def orient_edges(skeleton: Skeleton, documents_by_pair: Mapping[Edge, Sequence[KnowledgeBase]],
                 client: ChatClient, rconfig: RecoveryConfig, progress: bool = False) -> OrientationOutcome:
    """Ask every text knowledge base for the direction of every kept edge."""
    names = skeleton.names
    edges = sorted(skeleton.edges)
    tasks = [(edge, kb) for edge in edges for kb in _knowledge_bases(rconfig, documents_by_pair.get(edge, ()))]

    def ask(edge: Edge, kb: KnowledgeBase) -> OrientationVerdict:
        return orientation_chain(client, kb, (names[edge[0]], names[edge[1]]), rconfig.domains, rconfig.chain)

    verdicts = _run_tasks(tasks, ask, rconfig.max_workers, "Orientation", progress,
                          on_error=_failed_orientation)
    tallies = {edge: OrientationTally(names[edge[0]], names[edge[1]]) for edge in edges}
    for (edge, kb), verdict in zip(tasks, verdicts):
        tallies[edge].add(kb.kb_id, verdict)
    return resolve_orientations(skeleton, tallies)


@dataclass
class RecoveryReport:
    dataset: str
    variables: List[str]
    skeleton: Skeleton
    graph: CausalGraph
    ledger: ScoreLedger
    tallies: Dict[Edge, OrientationTally] = field(default_factory=dict)
    unresolved: List[Edge] = field(default_factory=list)
    demoted: List[Edge] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)
    pc: Optional[PcResult] = None

    @property
    def status(self) -> str:
        failing = [e for e in self.ledger.pairs.values() if any(f in e.flags for f in _FAILURE_FLAGS)]
        if not failing:
            return STATUS_COMPLETE
        if len(failing) == len(self.ledger.pairs):
            return STATUS_FAILED
        return STATUS_PARTIAL

    def edge_names(self, edges: Sequence[Edge]) -> List[List[str]]:
        return [[self.variables[a], self.variables[b]] for a, b in edges]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "status": self.status,
            "variables": list(self.variables),
            "skeleton": self.edge_names(sorted(self.skeleton.edges)),
            "oriented": self.edge_names(sorted(self.graph.edges)),
            "unresolved": self.edge_names(self.unresolved),
            "demoted": self.edge_names(self.demoted),
            "orientation": [self.tallies[e].to_dict() for e in sorted(self.tallies)],
            "flags": {f"{self.variables[a]}|{self.variables[b]}": sorted(flags)
                      for (a, b), flags in self.ledger.flagged().items()},
            "pc": self.pc.to_dict() if self.pc else None,
            "metadata": self.metadata,
        }

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> "RecoveryReport":
        """Rebuild the graph parts of a persisted report (ledger votes excluded)."""
        payload = read_json(Path(run_dir) / "report.json")
        variables = payload["variables"]
        skeleton = Skeleton.from_names(variables, [tuple(e) for e in payload["skeleton"]])
        graph = CausalGraph.from_names(variables, [tuple(e) for e in payload["oriented"]])
        index = {name: k for k, name in enumerate(variables)}
        ledger = ScoreLedger()
        for key, flags in payload.get("flags", {}).items():
            a, b = key.split("|", 1)
            edge = (min(index[a], index[b]), max(index[a], index[b]))
            ledger.pairs[edge] = PairLedger(a, b, flags=list(flags))
        unresolved = [(index[a], index[b]) for a, b in payload.get("unresolved", [])]
        return cls(payload["dataset"], variables, skeleton, graph, ledger, unresolved=unresolved,
                   metadata=payload.get("metadata", {}))


def _pairs_for(names: Sequence[str]) -> List[Edge]:
    return [(i, j) for i in range(len(names)) for j in range(i + 1, len(names))]


def _align_dataset(data: CategoricalDataset, names: Sequence[str]) -> CategoricalDataset:
    missing = [n for n in names if n not in data.names]
    if missing:
        raise ValueError(f"Dataset lacks columns for: {', '.join(missing)}")
    columns = [data.column_index(n) for n in names]
    labels = tuple(data.labels[k] for k in columns) if data.labels else None
    return CategoricalDataset(tuple(names), tuple(data.arities[k] for k in columns), data.data[:, columns], labels)


def _write_config_snapshot(config: "Config", run_dir: Path) -> None:
    snapshot = run_dir / "config.yaml"
    current = config.to_yaml()
    if snapshot.exists():
        if snapshot.read_text(encoding="utf-8") != current:
            raise ValueError(f"{run_dir} already holds a run with a different configuration")
        return
    snapshot.write_text(current, encoding="utf-8")


def run_pipeline(config: "Config", client: Optional[ChatClient] = None,
                 independence_source: Optional[IndependenceSource] = None,
                 truth: Optional[GroundTruthEntry] = None, progress: bool = False,
                 skeleton_only: bool = False) -> RecoveryReport:
    """Recover and orient the graph for ``config.dataset`` and persist the run."""
    truth = truth or load_ground_truth(config.dataset, config.truth_variant)
    names = list(truth.factors)
    domains = config.domains.get(truth.name.upper()) or config.domains.get(truth.name) or truth.domain_text()
    rconfig = RecoveryConfig.from_config(config, domains)

    run_dir = Path(config.output_dir)
    create_directory(run_dir)
    _write_config_snapshot(config, run_dir)

    cache = ResponseCache(run_dir / "cache.jsonl")
    base_client = client or build_client(config, truth)
    cached_client = CachedChatClient(base_client, cache)

    pc_result = None
    if rconfig.use_pc:
        source = independence_source
        if source is None:
            if not config.dataset_path:
                raise ValueError("PC voting needs dataset_path")
            source = _align_dataset(load_dataset(config.dataset_path), names)
        pc_result = pc_skeleton(source, alpha=rconfig.pc_alpha, max_order=rconfig.pc_max_order)

    documents_by_pair: Dict[Edge, List[KnowledgeBase]] = {}
    if rconfig.use_documents:
        corpus_dir = Path(config.corpus_dir)
        if not (corpus_dir / "manifest.json").exists():
            raise ValueError(f"No corpus at {corpus_dir}; run fetch-docs first")
        for pair in _pairs_for(names):
            documents_by_pair[pair] = load_pair_documents(corpus_dir, (names[pair[0]], names[pair[1]]))

    skeleton, ledger, _ = recover_skeleton(names, documents_by_pair, cached_client, rconfig, pc_result, progress)
    if not skeleton_only and (rconfig.use_background or rconfig.use_documents):
        outcome = orient_edges(skeleton, documents_by_pair, cached_client, rconfig, progress)
    else:
        outcome = OrientationOutcome(CausalGraph(skeleton.variables), sorted(skeleton.edges), {})

    report = RecoveryReport(
        dataset=truth.name,
        variables=names,
        skeleton=skeleton,
        graph=outcome.graph,
        ledger=ledger,
        tallies=outcome.tallies,
        unresolved=outcome.unresolved,
        demoted=outcome.demoted,
        metadata={
            "model": config.model,
            "temperature": config.temperature,
            "knowledge_bases": {
                "background": rconfig.use_background,
                "documents": rconfig.use_documents,
                "pc": rconfig.use_pc,
            },
            "max_documents": rconfig.max_documents,
            "pc_alpha": rconfig.pc_alpha,
            "pc_max_order": rconfig.pc_max_order,
            "skeleton_only": skeleton_only,
            "domains": domains,
        },
        pc=pc_result,
    )

    write_json(run_dir / "report.json", report.to_dict())
    write_json(run_dir / "ledger.json", ledger.to_dict())
    (run_dir / "skeleton.dot").write_text(export_graph(skeleton, "dot"), encoding="utf-8")
    (run_dir / "graph.dot").write_text(export_graph(outcome.graph, "dot"), encoding="utf-8")
    write_json(run_dir / "stats.json", {
        "client_calls": cached_client.client_calls,
        "cache": cache.stats(),
    })
    logger.info(f"Run {report.status}: {len(skeleton.edges)} edges, {len(outcome.graph.edges)} oriented, "
                f"{len(outcome.unresolved)} unresolved -> {run_dir}")
    return report

