"""Dyadic samples: storage, edge-list ingestion and network summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

MISSING_TOKENS = {"", "na", "nan", "-inf"}


class DyadicInputError(ValueError):
    """Malformed dyadic input (duplicates, self-loops, bad values)."""


class DegenerateInputError(ValueError):
    """Input is well-formed but too small or too flat to estimate from."""


def pair_index(i: int, j: int, n: int) -> int:
    """Slot of the unordered pair (i, j), 0-based, in row-major upper-triangular order."""
    if i > j:
        i, j = j, i
    return i * n - i * (i + 1) // 2 + (j - i - 1)


@dataclass(frozen=True)
class DyadicDataset:
    """n nodes with one (possibly missing) real value per unordered pair.

    ``values`` and ``present`` are laid out like ``np.triu_indices(n, 1)``.
    Missing slots hold NaN in ``values``.
    """

    n: int
    values: np.ndarray
    present: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        if self.n < 2:
            raise DyadicInputError("a dyadic dataset needs at least two nodes")
        values = np.array(self.values, dtype=float)
        present = np.array(self.present, dtype=bool)
        n_pairs = self.n * (self.n - 1) // 2
        if values.shape != (n_pairs,) or present.shape != (n_pairs,):
            raise DyadicInputError(
                f"expected {n_pairs} pair slots for n={self.n}, got {values.shape}"
            )
        if not np.all(np.isfinite(values[present])):
            raise DyadicInputError("present edge values must be finite")
        values[~present] = np.nan
        values.setflags(write=False)
        present.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "present", present)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(1, self.n + 1)))
        elif len(self.labels) != self.n:
            raise DyadicInputError("one label per node required")

    @classmethod
    def complete(cls, n: int, values: Sequence[float], labels: tuple = ()) -> "DyadicDataset":
        values = np.asarray(values, dtype=float)
        return cls(n, values, np.ones(values.shape, dtype=bool), labels)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "DyadicDataset":
        """Build from a symmetric n x n array; NaN or -inf entries are missing."""
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0]
        iu = np.triu_indices(n, 1)
        vals = matrix[iu]
        present = np.isfinite(vals)
        if np.any(np.isposinf(vals)):
            raise DyadicInputError("+inf edge value")
        return cls(n, np.where(present, vals, np.nan), present)

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def n_present(self) -> int:
        return int(self.present.sum())

    @property
    def mixture_weight(self) -> float:
        """Fraction of pairs carrying a finite value."""
        return self.n_present / self.n_pairs

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """0-based (i, j) node indices of every pair slot."""
        return np.triu_indices(self.n, 1)

    def present_values(self) -> np.ndarray:
        return self.values[self.present]

    def relabel(self, perm: Sequence[int]) -> "DyadicDataset":
        """Dataset in which old node ``k`` becomes node ``perm[k]``."""
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise DyadicInputError("perm must be a permutation of range(n)")
        i, j = self.pairs()
        new_i, new_j = perm[i], perm[j]
        lo, hi = np.minimum(new_i, new_j), np.maximum(new_i, new_j)
        slots = lo * self.n - lo * (lo + 1) // 2 + (hi - lo - 1)
        values = np.full(self.n_pairs, np.nan)
        present = np.zeros(self.n_pairs, dtype=bool)
        values[slots] = self.values
        present[slots] = self.present
        labels = [None] * self.n
        for old, new in enumerate(perm):
            labels[new] = self.labels[old]
        return DyadicDataset(self.n, values, present, tuple(labels))


@dataclass(frozen=True)
class NetworkSummary:
    nodes: int
    edges: int
    edge_density: float
    average_degree: float
    clustering_coefficient: float


def _is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, str):
        return value.strip().lower() in MISSING_TOKENS
    value = float(value)
    return math.isnan(value) or value == -math.inf


def from_edge_list(
    records: Iterable[tuple[Hashable, Hashable, object]],
    nodes: int | Sequence[Hashable] | None = None,
) -> DyadicDataset:
    """Build a dataset from undirected ``(i, j, value)`` records.

    Node ids are densified in first-seen order. ``nodes`` pre-registers ids
    (an int ``n`` means ids ``1..n``), which is how isolated nodes enter.
    A value of None, NaN, -inf, ``""`` or ``"NA"`` marks the pair missing;
    pairs with no record are missing too.
    """
    index: dict = {}
    if isinstance(nodes, int):
        nodes = range(1, nodes + 1)
    for node in nodes or ():
        index.setdefault(node, len(index))

    entries = []
    for rec in records:
        i, j, value = rec
        if i == j:
            raise DyadicInputError(f"self-loop on node {i!r}")
        a = index.setdefault(i, len(index))
        b = index.setdefault(j, len(index))
        if _is_missing(value):
            entries.append((a, b, None))
            continue
        value = float(value)
        if not math.isfinite(value):
            raise DyadicInputError(f"non-finite value {value} for pair ({i!r}, {j!r})")
        entries.append((a, b, value))

    n = len(index)
    if n < 2:
        raise DyadicInputError("edge list names fewer than two nodes")
    values = np.full(n * (n - 1) // 2, np.nan)
    present = np.zeros(n * (n - 1) // 2, dtype=bool)
    seen = np.zeros(n * (n - 1) // 2, dtype=bool)
    labels = tuple(index)
    for a, b, value in entries:
        slot = pair_index(a, b, n)
        if seen[slot]:
            raise DyadicInputError(
                f"duplicate record for pair ({labels[a]!r}, {labels[b]!r})"
            )
        seen[slot] = True
        if value is not None:
            values[slot] = value
            present[slot] = True
    return DyadicDataset(n, values, present, labels)


def trade_volume(flow_ij: float, flow_ji: float) -> float | None:
    """Log of the total bilateral flow; None (missing) when nothing was traded."""
    if flow_ij < 0 or flow_ji < 0:
        raise DyadicInputError("trade flows must be non-negative")
    total = flow_ij + flow_ji
    if total == 0:
        return None
    return math.log(total)


def finite_subsample(dataset: DyadicDataset) -> DyadicDataset:
    """Same network keeping only present edges.

    Estimators already skip missing slots, so this mostly validates that
    something is left to estimate from.
    """
    if dataset.n_present < 1:
        raise DegenerateInputError("no present edges")
    return DyadicDataset(dataset.n, dataset.values, dataset.present, dataset.labels)


def adjacency(dataset: DyadicDataset) -> np.ndarray:
    adj = np.zeros((dataset.n, dataset.n))
    i, j = dataset.pairs()
    adj[i[dataset.present], j[dataset.present]] = 1.0
    return adj + adj.T


def summary(dataset: DyadicDataset) -> NetworkSummary:
    n = dataset.n
    edges = dataset.n_present
    adj = adjacency(dataset)
    deg = adj.sum(axis=1)
    triples = float(np.sum(deg * (deg - 1)))
    if n < 3 or triples == 0:
        clustering = 0.0
    else:
        # sum((A A) * A) counts every triangle six times; triples counts
        # each connected triple twice, hence 3 * triangles / triples.
        closed = float(np.sum((adj @ adj) * adj))
        clustering = closed / triples
    return NetworkSummary(
        nodes=n,
        edges=edges,
        edge_density=2 * edges / (n * (n - 1)),
        average_degree=2 * edges / n,
        clustering_coefficient=clustering,
    )


def read_edge_csv(path, trade: bool = False) -> DyadicDataset:
    """Read ``i,j,w`` (or ``i,j,flow_ij,flow_ji`` with ``trade=True``)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in reader.fieldnames or []]
        expected = ["i", "j", "flow_ij", "flow_ji"] if trade else ["i", "j", "w"]
        if header[: len(expected)] != expected:
            raise DyadicInputError(f"{path}: expected header {','.join(expected)}, got {header}")
        records = []
        for row in reader:
            i, j = row["i"].strip(), row["j"].strip()
            if trade:
                try:
                    value = trade_volume(float(row["flow_ij"]), float(row["flow_ji"]))
                except ValueError as exc:
                    raise DyadicInputError(f"{path}: bad flow on pair ({i}, {j}): {exc}") from exc
            else:
                value = row["w"].strip()
                if not _is_missing(value):
                    try:
                        value = float(value)
                    except ValueError as exc:
                        raise DyadicInputError(f"{path}: bad value {value!r}") from exc
            records.append((i, j, value))
    return from_edge_list(records)


def write_edge_csv(dataset: DyadicDataset, path) -> None:
    i, j = dataset.pairs()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "w"])
        for a, b, v, ok in zip(i, j, dataset.values, dataset.present):
            writer.writerow([dataset.labels[a], dataset.labels[b], repr(float(v)) if ok else "NA"])
