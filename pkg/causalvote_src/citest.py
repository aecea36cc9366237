"""Categorical datasets and the stratified G² conditional-independence test."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from scipy import stats

from .utils import read_json

logger = logging.getLogger(__name__)

# Strata with fewer observations than this are still pooled into the
# statistic but counted as sparse in the result.
SPARSE_STRATUM_COUNT = 5

ColumnKey = Union[int, str]


@dataclass(frozen=True, eq=False)
class CategoricalDataset:
    """Rows of small-integer codes, one column per variable."""

    names: Tuple[str, ...]
    arities: Tuple[int, ...]
    data: np.ndarray
    labels: Optional[Tuple[Tuple[str, ...], ...]] = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.int64)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "arities", tuple(int(a) for a in self.arities))
        if data.ndim != 2:
            raise ValueError(f"Dataset rows must form a 2-D array, got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("Dataset is empty: at least one row is required")
        if data.shape[1] != len(self.names):
            raise ValueError(f"Row width {data.shape[1]} does not match {len(self.names)} variables")
        if len(self.arities) != len(self.names):
            raise ValueError("One arity per variable is required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("Variable names must be unique")
        if data.min() < 0:
            raise ValueError("Category codes must be non-negative")
        over = data.max(axis=0) >= np.asarray(self.arities)
        if over.any():
            bad = [self.names[k] for k in np.flatnonzero(over)]
            raise ValueError(f"Codes exceed declared arity for: {', '.join(bad)}")

    @classmethod
    def from_rows(cls, names: Sequence[str], rows: Sequence[Sequence[int]],
                  arities: Optional[Sequence[int]] = None) -> "CategoricalDataset":
        data = np.asarray(rows, dtype=np.int64).reshape(len(rows), len(names))
        if arities is None:
            arities = (data.max(axis=0) + 1).tolist() if len(rows) else [0] * len(names)
        return cls(tuple(names), tuple(arities), data)

    @property
    def n_rows(self) -> int:
        return int(self.data.shape[0])

    def column_index(self, key: ColumnKey) -> int:
        if isinstance(key, str):
            try:
                return self.names.index(key)
            except ValueError:
                raise ValueError(f"Unknown variable: {key!r}") from None
        if not 0 <= int(key) < len(self.names):
            raise ValueError(f"Variable index out of range: {key}")
        return int(key)

    def filter_rows(self, mask: np.ndarray) -> "CategoricalDataset":
        """Keep the rows where ``mask`` is true; arities are unchanged."""
        return CategoricalDataset(self.names, self.arities, self.data[np.asarray(mask, dtype=bool)], self.labels)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.data, columns=list(self.names))
        if self.labels:
            for name, labels in zip(self.names, self.labels):
                frame[name] = [labels[code] for code in frame[name]]
        return frame

    def to_csv(self, path: Union[str, Path], with_sidecar: bool = True) -> None:
        """Write codes (or labels when known) as CSV, plus an arity sidecar."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        if with_sidecar:
            sidecar = {"arities": dict(zip(self.names, self.arities))}
            if self.labels:
                sidecar["labels"] = {name: list(labels) for name, labels in zip(self.names, self.labels)}
            path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_dataset(path: Union[str, Path], sidecar_path: Optional[Union[str, Path]] = None) -> CategoricalDataset:
    """Read a headered CSV of category codes or labels.

    A sidecar JSON (``<csv>.json`` by default) may declare ``arities`` and
    ``labels`` per column; otherwise integer columns get ``max + 1`` levels and
    label columns are coded in sorted label order.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if frame.empty:
        raise ValueError(f"Dataset is empty: {path}")

    sidecar_file = Path(sidecar_path) if sidecar_path else path.with_suffix(path.suffix + ".json")
    sidecar: Dict[str, Dict] = read_json(sidecar_file) if sidecar_file.exists() else {}
    declared_arities: Mapping[str, int] = sidecar.get("arities", {})
    declared_labels: Mapping[str, List[str]] = sidecar.get("labels", {})

    columns = []
    arities = []
    labels: List[Tuple[str, ...]] = []
    for name in frame.columns:
        values = frame[name].str.strip()
        if name in declared_labels:
            known = list(declared_labels[name])
            unknown = sorted(set(values) - set(known))
            if unknown:
                raise ValueError(f"Column {name!r} has undeclared labels: {', '.join(unknown)}")
            lookup = {label: code for code, label in enumerate(known)}
            codes = values.map(lookup).to_numpy(dtype=np.int64)
            column_labels = tuple(known)
        elif values.str.fullmatch(r"\d+").all():
            codes = values.astype(np.int64).to_numpy()
            column_labels = tuple(str(k) for k in range(int(codes.max()) + 1))
        else:
            ordered = sorted(set(values))
            lookup = {label: code for code, label in enumerate(ordered)}
            codes = values.map(lookup).to_numpy(dtype=np.int64)
            column_labels = tuple(ordered)
        arity = int(declared_arities.get(name, len(column_labels)))
        columns.append(codes)
        arities.append(max(arity, int(codes.max()) + 1))
        labels.append(column_labels + tuple(str(k) for k in range(len(column_labels), arities[-1])))

    data = np.column_stack(columns)
    logger.info(f"Loaded {data.shape[0]} rows x {data.shape[1]} variables from {path}")
    return CategoricalDataset(tuple(frame.columns), tuple(arities), data, tuple(labels))


@dataclass(frozen=True)
class CiResult:
    """Outcome of one conditional-independence test."""

    x: str
    y: str
    conditioning: Tuple[str, ...]
    statistic: float
    degrees_of_freedom: int
    p_value: float
    alpha: float
    independent: bool
    n_rows: int = 0
    sparse_strata: int = 0
    degenerate: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            "x": self.x,
            "y": self.y,
            "conditioning": list(self.conditioning),
            "statistic": round(self.statistic, 6),
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": round(self.p_value, 6),
            "alpha": self.alpha,
            "independent": self.independent,
            "sparse_strata": self.sparse_strata,
            "degenerate": self.degenerate,
        }


def g_statistic(table: np.ndarray) -> Tuple[float, int]:
    """G² and degrees of freedom for one two-way table.

    Degrees of freedom follow the declared arities, (rows - 1)(cols - 1),
    whichever levels happen to be observed. An empty table contributes nothing.
    """
    table = np.asarray(table, dtype=float)
    total = table.sum()
    if total <= 0:
        return 0.0, 0
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    expected = np.outer(rows, cols) / total
    observed = table > 0
    statistic = 2.0 * float(np.sum(table[observed] * np.log(table[observed] / expected[observed])))
    dof = (table.shape[0] - 1) * (table.shape[1] - 1)
    return max(statistic, 0.0), dof


def ci_test(data: CategoricalDataset, i: ColumnKey, j: ColumnKey,
            z: Iterable[ColumnKey] = (), alpha: float = 0.05) -> CiResult:
    """Stratified G² test of ``i`` ⟂ ``j`` | ``z``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if data.n_rows == 0:
        raise ValueError("Cannot test independence on an empty dataset")
    xi, yi = data.column_index(i), data.column_index(j)
    if xi == yi:
        raise ValueError("Independence test needs two distinct variables")
    zi = sorted({data.column_index(k) for k in z})
    if xi in zi or yi in zi:
        raise ValueError("The conditioning set must not contain the tested variables")

    rx, ry = data.arities[xi], data.arities[yi]
    if zi:
        strata = np.ravel_multi_index(tuple(data.data[:, k] for k in zi), tuple(data.arities[k] for k in zi))
        _, stratum_index = np.unique(strata, return_inverse=True)
        n_strata = int(stratum_index.max()) + 1
    else:
        stratum_index = np.zeros(data.n_rows, dtype=np.int64)
        n_strata = 1
    flat = stratum_index * (rx * ry) + data.data[:, xi] * ry + data.data[:, yi]
    tables = np.bincount(flat, minlength=n_strata * rx * ry).reshape(n_strata, rx, ry)

    statistic = 0.0
    dof = 0
    sparse = 0
    for table in tables:
        count = table.sum()
        if count == 0:
            continue
        if count < SPARSE_STRATUM_COUNT:
            sparse += 1
        g, d = g_statistic(table)
        statistic += g
        dof += d

    names = (data.names[xi], data.names[yi], tuple(data.names[k] for k in zi))
    if dof == 0:
        logger.warning(f"Degenerate test {names[0]} vs {names[1]} | {list(names[2])}: no degrees of freedom")
        return CiResult(*names, statistic=0.0, degrees_of_freedom=0, p_value=1.0, alpha=alpha,
                        independent=True, n_rows=data.n_rows, sparse_strata=sparse, degenerate=True)

    p_value = float(min(1.0, max(0.0, stats.chi2.sf(statistic, dof))))
    return CiResult(*names, statistic=statistic, degrees_of_freedom=dof, p_value=p_value, alpha=alpha,
                    independent=p_value > alpha, n_rows=data.n_rows, sparse_strata=sparse)


def _topological_order(network: Mapping[str, Mapping]) -> List[str]:
    digraph = nx.DiGraph()
    digraph.add_nodes_from(network)
    for name, spec in network.items():
        for parent in spec.get("parents", []):
            digraph.add_edge(parent, name)
    return list(nx.lexicographical_topological_sort(digraph))


def sample_network(network: Union[Mapping, str, Path], n: int, seed: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> CategoricalDataset:
    """Ancestral sampling from a conditional-probability-table description.

    ``network`` maps each variable to ``{"states": [...], "parents": [...],
    "cpt": [[...], ...]}``; CPT rows follow the parents' configurations in
    row-major order (last parent varies fastest). A top-level ``variables``
    key may wrap the mapping, and ``order`` fixes the column order.
    """
    if isinstance(network, (str, Path)):
        network = read_json(Path(network))
    column_order = network.get("order")
    spec = network.get("variables", network)
    rng = rng if rng is not None else np.random.default_rng(seed)

    values: Dict[str, np.ndarray] = {}
    for name in _topological_order(spec):
        node = spec[name]
        states = node["states"]
        cpt = np.asarray(node["cpt"], dtype=float)
        parents = node.get("parents", [])
        if parents:
            shape = tuple(len(spec[p]["states"]) for p in parents)
            config = np.ravel_multi_index(tuple(values[p] for p in parents), shape)
        else:
            config = np.zeros(n, dtype=np.int64)
        if cpt.ndim == 1:
            cpt = cpt.reshape(1, -1)
        if not np.allclose(cpt.sum(axis=1), 1.0):
            raise ValueError(f"CPT rows for {name!r} must sum to 1")
        cumulative = np.cumsum(cpt[config], axis=1)
        draws = rng.random(n)[:, None]
        values[name] = np.minimum((draws > cumulative).sum(axis=1), len(states) - 1)

    names = list(column_order) if column_order else list(spec)
    data = np.column_stack([values[name] for name in names])
    return CategoricalDataset(
        tuple(names),
        tuple(len(spec[name]["states"]) for name in names),
        data,
        tuple(tuple(spec[name]["states"]) for name in names),
    )


AGE_BANDS = ("under 30", "30-59", "60-74", "75 and over")
ELDERLY_BANDS = (2, 3)


def selection_bias_network(gender_shift: float = 0.15, disease_base: Sequence[float] = (0.05, 0.12, 0.25, 0.35),
                           male_excess: float = 0.08) -> Dict[str, Dict]:
    """Age → Gender, Age → Disease, Gender → Disease with the age–gender link only above 60."""
    female = [0.5, 0.5, 0.5 + gender_shift, 0.5 + 1.5 * gender_shift]
    disease_rows = []
    for age in range(len(AGE_BANDS)):
        for gender in ("male", "female"):
            risk = disease_base[age] + (male_excess if gender == "male" else 0.0)
            disease_rows.append([1.0 - risk, risk])
    return {
        "order": ["Age", "Gender", "Disease"],
        "variables": {
            "Age": {"states": list(AGE_BANDS), "parents": [], "cpt": [[0.3, 0.35, 0.2, 0.15]]},
            "Gender": {"states": ["male", "female"], "parents": ["Age"],
                       "cpt": [[1.0 - f, f] for f in female]},
            "Disease": {"states": ["no", "yes"], "parents": ["Age", "Gender"], "cpt": disease_rows},
        },
    }


def sample_selection_bias(n: int, seed: Optional[int] = None, under_60_only: bool = False) -> CategoricalDataset:
    """Sample the age/gender/disease population, optionally keeping only people under 60."""
    dataset = sample_network(selection_bias_network(), n, seed=seed)
    if not under_60_only:
        return dataset
    age = dataset.data[:, dataset.column_index("Age")]
    return dataset.filter_rows(~np.isin(age, ELDERLY_BANDS))
