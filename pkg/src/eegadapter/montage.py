"""Sensor montage geometry: 10-20 positions, geodesic weights, propagation.

The head is modeled as a unit sphere. Edge weights are an affine inversion
of geodesic distance, w = 1 - d/pi, so that closer sensors weigh more
(aggregation semantics need closeness-increasing weights; a flag restores
raw distances for ablation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

# Canonical 19-channel order; node index in the graph is position in this list.
CANONICAL_1020 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz",
    "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
)

_UNIT_NORM_TOL = 1e-6


class MontageError(ValueError):
    """Bad electrode geometry or graph construction input."""


@dataclass(frozen=True)
class ElectrodePosition:
    name: str
    xyz: np.ndarray

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64)
        object.__setattr__(self, "xyz", xyz)
        if xyz.shape != (3,):
            raise MontageError(f"{self.name}: position must be a 3-vector, got {xyz.shape}")
        if abs(np.linalg.norm(xyz) - 1.0) > _UNIT_NORM_TOL:
            raise MontageError(f"{self.name}: position not on the unit sphere (norm {np.linalg.norm(xyz):.8f})")


def builtin_positions() -> list[ElectrodePosition]:
    """The shipped 10-20 coordinate table, in canonical order."""
    path = resources.files("eegadapter.data").joinpath("electrodes_1020_v1.json")
    table = json.loads(path.read_text())["positions"]
    return [ElectrodePosition(name, np.array(table[name])) for name in CANONICAL_1020]


def load_positions(path) -> list[ElectrodePosition]:
    """Positions from a JSON override file {name: [x, y, z], ...}."""
    with open(path) as fh:
        table = json.load(fh)
    if isinstance(table, dict) and "positions" in table:
        table = table["positions"]
    return [ElectrodePosition(name, np.asarray(xyz, dtype=np.float64))
            for name, xyz in table.items()]


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Arc length in radians between two unit vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for v in (a, b):
        if abs(np.linalg.norm(v) - 1.0) > _UNIT_NORM_TOL:
            raise MontageError(f"geodesic_distance: input not unit norm ({np.linalg.norm(v):.8f})")
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


@dataclass
class MontageGraph:
    """Fully connected weighted sensor graph with a GCN propagation matrix.

    ``weights`` is symmetric with zero diagonal; ``propagation`` is the
    symmetric normalization D^(-1/2) (W + I) D^(-1/2) (self-loops included
    unless built with ``self_loops=False``).
    """

    node_order: tuple[str, ...]
    weights: np.ndarray
    propagation: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        self.n = len(self.node_order)

    def neighbors(self, i: int) -> np.ndarray:
        """Indices j with a positive edge weight to node i (excludes i)."""
        return np.flatnonzero(self.weights[i] > 0)


def _propagation_matrix(weights: np.ndarray, self_loops: bool) -> np.ndarray:
    a = weights + np.eye(len(weights)) if self_loops else weights.copy()
    deg = a.sum(axis=1)
    with np.errstate(divide="ignore"):
        d_inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    return d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]


def graph_from_weights(weights: np.ndarray, node_order=None,
                       self_loops: bool = True) -> MontageGraph:
    """Wrap an arbitrary symmetric weight matrix (used for small test graphs)."""
    weights = np.asarray(weights, dtype=np.float64)
    n = len(weights)
    if weights.shape != (n, n):
        raise MontageError(f"weights must be square, got {weights.shape}")
    if not np.allclose(weights, weights.T):
        raise MontageError("weights must be symmetric")
    if node_order is None:
        node_order = tuple(f"n{i}" for i in range(n))
    return MontageGraph(tuple(node_order), weights,
                        _propagation_matrix(weights, self_loops))


def build_graph(positions: list[ElectrodePosition], *,
                raw_distance_weights: bool = False,
                self_loops: bool = True) -> MontageGraph:
    """Fully connected weighted graph over the 19 canonical electrodes.

    w[i][j] = 1 - d(i,j)/pi for i != j (or the raw distance d(i,j) with
    ``raw_distance_weights``); diagonal zero. Propagation is the symmetric
    GCN normalization; ``self_loops=False`` reproduces the strict
    neighbours-only aggregation reading.
    """
    names = [p.name for p in positions]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise MontageError(f"duplicate electrode names: {dupes}")
    missing = [n for n in CANONICAL_1020 if n not in names]
    if missing:
        raise MontageError(f"missing canonical electrodes: {missing}")
    by_name = {p.name: p for p in positions}
    ordered = [by_name[n] for n in CANONICAL_1020]
    n = len(ordered)
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = geodesic_distance(ordered[i].xyz, ordered[j].xyz)
            w[i, j] = w[j, i] = d if raw_distance_weights else 1.0 - d / np.pi
    return MontageGraph(CANONICAL_1020, w, _propagation_matrix(w, self_loops))


def default_graph(**kwargs) -> MontageGraph:
    """Graph over the shipped coordinate table."""
    return build_graph(builtin_positions(), **kwargs)
