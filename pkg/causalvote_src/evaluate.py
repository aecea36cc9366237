"""Skeleton and orientation metrics, comparison reports and the voting simulator."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from rich.table import Table
from scipy import stats

from .graph import CausalGraph, GraphLike, Skeleton
from .ground_truth import GroundTruthEntry
from .recover import RecoveryReport, keep_edge

logger = logging.getLogger(__name__)

UNDEFINED = "—"
NHD_LABEL = "NHD (a.k.a. SHD)"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"Counts must be non-negative: {self}")

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class SkeletonMetrics:
    """Adjacency precision/recall/F1 (None when undefined) and NHD."""

    ap: Optional[float]
    ar: Optional[float]
    f1: Optional[float]
    nhd: float

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {"ap": self.ap, "ar": self.ar, "f1": self.f1, "nhd": self.nhd}


@dataclass(frozen=True)
class OrientationMetrics:
    tea: Optional[float]
    correct: int
    total: int

    def to_dict(self) -> dict:
        return {"tea": self.tea, "correct": self.correct, "total": self.total}


def _edge_names(graph: GraphLike) -> set:
    return {frozenset(pair) for pair in graph.skeleton().edge_names()}


def skeleton_confusion(predicted: GraphLike, truth: GraphLike) -> ConfusionCounts:
    """Compare unordered edges; both graphs must share the variable set."""
    extra = sorted(set(predicted.names) - set(truth.names))
    missing = sorted(set(truth.names) - set(predicted.names))
    if extra or missing:
        raise ValueError(f"Variable sets differ: not in truth {extra}, missing from prediction {missing}")
    predicted_edges = _edge_names(predicted)
    truth_edges = _edge_names(truth)
    return ConfusionCounts(
        tp=len(predicted_edges & truth_edges),
        fp=len(predicted_edges - truth_edges),
        fn=len(truth_edges - predicted_edges),
    )


def skeleton_metrics(counts: ConfusionCounts, n: int) -> SkeletonMetrics:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    ap = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else None
    ar = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    # Equals the harmonic mean of AP and AR whenever both exist, and 0 when TP = 0
    denominator = 2 * counts.tp + counts.fp + counts.fn
    f1 = 2 * counts.tp / denominator if denominator else None
    nhd = (counts.fp + counts.fn) / (n * n)
    return SkeletonMetrics(ap, ar, f1, nhd)


def tea(predicted: CausalGraph, truth: CausalGraph, tp_edges: Iterable[Tuple[str, str]],
        two_way_pairs: Sequence[Tuple[str, str]] = ()) -> OrientationMetrics:
    """Share of true-positive edges whose recovered direction matches the truth.

    An edge left unoriented counts as wrong; either direction of a two-way
    pair counts as right.
    """
    two_way = {frozenset(p) for p in two_way_pairs}
    edges = sorted({tuple(sorted(e)) for e in tp_edges})
    correct = 0
    for a, b in edges:
        if frozenset((a, b)) in two_way:
            correct += int(predicted.has_edge(a, b) or predicted.has_edge(b, a))
        elif truth.has_edge(a, b):
            correct += int(predicted.has_edge(a, b))
        elif truth.has_edge(b, a):
            correct += int(predicted.has_edge(b, a))
        else:
            raise ValueError(f"{a} - {b} is not an edge of the true graph")
    if not edges:
        return OrientationMetrics(None, 0, 0)
    return OrientationMetrics(correct / len(edges), correct, len(edges))


def majority_accuracy(p: float, voters: int) -> float:
    """Probability that a strict majority of independent voters of accuracy p is right."""
    return float(stats.binom.sf(voters // 2, voters, p))


@dataclass(frozen=True)
class SimulationRow:
    voters: int
    mean_f1: float
    std_error: float
    pair_accuracy: float
    analytic_accuracy: float

    def to_dict(self) -> dict:
        return {
            "voters": self.voters,
            "mean_f1": self.mean_f1,
            "std_error": self.std_error,
            "pair_accuracy": self.pair_accuracy,
            "analytic_accuracy": self.analytic_accuracy,
        }


def simulate_majority_accuracy(truth: Skeleton, voter_accuracy: float, voter_counts: Sequence[int],
                               trials: int, seed: int = 0) -> List[SimulationRow]:
    """Mean skeleton F1 when independent voters of a given accuracy vote on every pair.

    Each voter reports the true adjacency of a pair with probability
    ``voter_accuracy``; votes are combined with the recovery keep rule.
    Every (voter count, trial) gets its own random stream spawned from
    ``seed``.
    """
    if not 0.5 < voter_accuracy <= 1:
        raise ValueError(f"Voter accuracy must lie in (0.5, 1], got {voter_accuracy}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for count in voter_counts:
        if count < 1 or count % 2 == 0:
            raise ValueError(f"Voter counts must be odd and positive, got {count}")

    n = truth.n
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    adjacent = np.array([truth.adjacent(i, j) for i, j in pairs], dtype=bool)
    n_true = int(adjacent.sum())

    streams = np.random.SeedSequence(seed).spawn(len(voter_counts))
    rows = []
    for count, stream in zip(voter_counts, streams):
        f1_values = np.empty(trials)
        correct_pairs = 0
        for trial, trial_seed in enumerate(stream.spawn(trials)):
            rng = np.random.default_rng(trial_seed)
            correct_voters = rng.binomial(count, voter_accuracy, size=len(pairs))
            wrong_voters = count - correct_voters
            plus = np.where(adjacent, correct_voters, wrong_voters)
            minus = count - plus
            kept = keep_edge(plus - minus)
            correct_pairs += int(np.sum(kept == adjacent))
            tp = int(np.sum(kept & adjacent))
            fp = int(np.sum(kept & ~adjacent))
            fn = n_true - tp
            denominator = 2 * tp + fp + fn
            f1_values[trial] = 2 * tp / denominator if denominator else 1.0
        std_error = float(f1_values.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        rows.append(SimulationRow(
            voters=count,
            mean_f1=float(f1_values.mean()),
            std_error=std_error,
            pair_accuracy=correct_pairs / (trials * len(pairs)),
            analytic_accuracy=majority_accuracy(voter_accuracy, count),
        ))
        logger.debug(f"{count} voters: mean F1 {rows[-1].mean_f1:.4f}")
    return rows


def simulation_table(rows: Sequence[SimulationRow], voter_accuracy: float) -> Table:
    table = Table(title=f"Majority voting, voter accuracy {voter_accuracy}")
    for column in ("Voters", "Mean F1", "Std. error", "Pair accuracy", "Analytic"):
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(str(row.voters), f"{row.mean_f1:.4f}", f"{row.std_error:.4f}",
                      f"{row.pair_accuracy:.4f}", f"{row.analytic_accuracy:.4f}")
    return table


@dataclass
class EvaluationRow:
    truth: str
    counts: ConfusionCounts
    skeleton: SkeletonMetrics
    orientation: Optional[OrientationMetrics] = None
    footnotes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "truth": self.truth,
            "counts": self.counts.to_dict(),
            "metrics": self.skeleton.to_dict(),
            "orientation": self.orientation.to_dict() if self.orientation else None,
            "footnotes": self.footnotes,
        }


@dataclass
class EvaluationReport:
    dataset: str
    rows: List[EvaluationRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "nhd_definition": "(FP + FN) / n^2",
                "rows": [row.to_dict() for row in self.rows]}

    def to_table(self) -> Table:
        table = Table(title=f"{self.dataset} recovery")
        table.add_column("Truth")
        for column in ("AP", "AR", "F1", NHD_LABEL, "TEA"):
            table.add_column(column, justify="right")
        table.add_column("Footnotes")
        for row in self.rows:
            tea_value = row.orientation.tea if row.orientation else None
            table.add_row(
                row.truth,
                _fmt(row.skeleton.ap),
                _fmt(row.skeleton.ar),
                _fmt(row.skeleton.f1),
                _fmt(row.skeleton.nhd),
                _fmt(tea_value),
                "; ".join(row.footnotes),
            )
        return table


def _fmt(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f"{value:.3f}"


def _footnotes(recovery: RecoveryReport) -> List[str]:
    counts: Dict[str, int] = {}
    for flags in recovery.ledger.flagged().values():
        for flag in flags:
            counts[flag] = counts.get(flag, 0) + 1
    notes = [f"{flag}: {count} pair{'s' if count != 1 else ''}" for flag, count in sorted(counts.items())]
    if recovery.unresolved:
        notes.append(f"unresolved orientations: {len(recovery.unresolved)}")
    return notes


def report(recovery: RecoveryReport, truths: Sequence[GroundTruthEntry]) -> EvaluationReport:
    """One comparison row per ground-truth entry."""
    result = EvaluationReport(recovery.dataset)
    notes = _footnotes(recovery)
    for truth in truths:
        counts = skeleton_confusion(recovery.skeleton, truth.graph)
        metrics = skeleton_metrics(counts, len(truth.factors))
        logger.debug(f"{truth.label}: NHD = ({counts.fp} + {counts.fn}) / {len(truth.factors)}^2, "
                     f"printed as SHD in published tables")
        orientation = None
        if isinstance(truth.graph, CausalGraph):
            tp_edges = [tuple(e) for e in
                        {frozenset(p) for p in recovery.skeleton.edge_names()} & _edge_names(truth.graph)]
            orientation = tea(recovery.graph, truth.graph, tp_edges, truth.two_way_pairs)
        result.rows.append(EvaluationRow(truth.label, counts, metrics, orientation, list(notes)))
        logger.info(f"{truth.label}: TP={counts.tp} FP={counts.fp} FN={counts.fn}")
    return result
