"""Trainable graph adapter inserted in front of the frozen backbone.

The adapter length-normalizes the raw signal, runs two GNN layers over the
sensor graph (GCN, GraphSAGE, or GAT flavor), and projects the hidden node
features back to signal length. The projection is zero-initialized and
added through a residual connection, so a freshly built adapter is an
exact identity map and fine-tuning starts from the backbone's unperturbed
behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tensor
from .montage import MontageGraph

VARIANTS = ("gcn", "sage", "gat")


@dataclass
class AdapterConfig:
    variant: str = "gcn"
    hidden: int = 64
    n_layers: int = 2
    gat_heads: int = 1
    input_len: int | None = None    # L the backbone expects; set at build time
    raw_len: int | None = None      # incoming segment length; defaults to input_len
    residual: bool = True
    sage_sample_k: int | None = None
    sage_weighted_mean: bool = False
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.hidden < 1:
            raise ValueError("hidden size must be positive")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.gat_heads != 1:
            raise ValueError("only single-head attention is supported")


def glorot(rng: np.random.Generator, shape: tuple[int, ...],
           fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear-interpolation resize map; the length adapter starts as a resampler."""
    m = np.zeros((n_in, n_out))
    if n_in == 1:
        m[0, :] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1, n_out)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m[lo, np.arange(n_out)] += 1.0 - frac
    m[hi, np.arange(n_out)] += frac
    return m


# ---------------------------------------------------------------------------
# layer primitives (functional; params passed in, reused by the dense oracles)
# ---------------------------------------------------------------------------

def length_adapt(x: Tensor, weight: Tensor | None = None,
                 bias: Tensor | None = None) -> Tensor:
    """Shared per-channel dense map to the backbone length; identity if no weight."""
    if weight is None:
        return x
    out = x @ weight
    return out + bias if bias is not None else out


def gcn_layer(h: Tensor, propagation: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """relu(S @ H @ W + b) with S the normalized propagation matrix."""
    return ad.relu((propagation @ h) @ weight + bias)


def neighbor_mean_matrix(graph: MontageGraph, sample_k: int | None = None,
                         rng: np.random.Generator | None = None,
                         weighted: bool = False) -> np.ndarray:
    """Row-stochastic neighbor averaging matrix for GraphSAGE.

    Without ``sample_k`` every neighbor participates; with it, ``sample_k``
    neighbors are drawn uniformly without replacement per node (``rng``
    required). ``weighted`` switches the mean to edge-weight proportions.
    """
    n = graph.n
    m = np.zeros((n, n))
    for i in range(n):
        nbrs = graph.neighbors(i)
        if len(nbrs) == 0:
            continue
        if sample_k is not None:
            if sample_k > n - 1:
                raise ValueError(f"sample_k={sample_k} exceeds {n - 1} potential neighbors")
            if rng is None:
                raise ValueError("neighbor sampling needs an rng")
            if sample_k < len(nbrs):
                nbrs = np.sort(rng.choice(nbrs, size=sample_k, replace=False))
        if weighted:
            w = graph.weights[i, nbrs]
            m[i, nbrs] = w / w.sum()
        else:
            m[i, nbrs] = 1.0 / len(nbrs)
    return m


def sage_layer(h: Tensor, graph: MontageGraph, w_self: Tensor, w_neigh: Tensor,
               bias: Tensor, sample_k: int | None = None,
               seed: int | None = None, weighted_mean: bool = False) -> Tensor:
    """relu(H W_self + mean(H[neighbors]) W_neigh + b), self and neighbors split."""
    rng = None if seed is None else np.random.default_rng(seed)
    mean_mat = Tensor(neighbor_mean_matrix(graph, sample_k, rng, weighted_mean))
    return ad.relu(h @ w_self + (mean_mat @ h) @ w_neigh + bias)


_MASK_OFF = -1e30


def gat_layer(h: Tensor, graph: MontageGraph, weight: Tensor, att_src: Tensor,
              att_dst: Tensor, bias: Tensor, leaky_slope: float = 0.2,
              return_attention: bool = False):
    """Single-head graph attention over neighbors(i) + {i}.

    Scores e_ij = leaky_relu(a_src . (W^T h_i) + a_dst . (W^T h_j)) are
    softmax-normalized per row over the attended set; non-edges are masked
    with a large negative constant before the softmax.
    """
    d_out = weight.shape[1]
    wh = h @ weight
    e_src = wh @ att_src.reshape(d_out, 1)          # (n, 1)
    e_dst = (wh @ att_dst.reshape(d_out, 1)).T      # (1, n)
    scores = ad.leaky_relu(e_src + e_dst, leaky_slope)
    allowed = (graph.weights > 0) | np.eye(graph.n, dtype=bool)
    mask = Tensor(np.where(allowed, 0.0, _MASK_OFF))
    alpha = ad.softmax(scores + mask, axis=1)
    out = ad.relu(alpha @ wh + bias)
    return (out, alpha) if return_attention else out


class GraphAdapter:
    """Length adapter + stacked GNN layers + zero-init output projection."""

    def __init__(self, config: AdapterConfig, graph: MontageGraph,
                 rng: np.random.Generator):
        if config.input_len is None:
            raise ValueError("AdapterConfig.input_len must be set before building")
        self.config = config
        self.graph = graph
        self._propagation = Tensor(graph.propagation)
        self._sample_rng = np.random.default_rng(rng.integers(2**63))
        L = config.input_len
        raw = config.raw_len if config.raw_len is not None else L
        self._params: dict[str, Tensor] = {}

        def param(name, data):
            t = Tensor(data, requires_grad=True)
            self._params[name] = t
            return t

        if raw != L:
            param("length_adapter.weight", interp_matrix(raw, L))
            param("length_adapter.bias", np.zeros(L))
        for i in range(config.n_layers):
            d_in = L if i == 0 else config.hidden
            d_out = config.hidden
            pfx = f"gnn{i}"
            if config.variant == "gcn":
                param(f"{pfx}.weight", glorot(rng, (d_in, d_out)))
            elif config.variant == "sage":
                param(f"{pfx}.self_weight", glorot(rng, (d_in, d_out)))
                param(f"{pfx}.neigh_weight", glorot(rng, (d_in, d_out)))
            else:  # gat
                param(f"{pfx}.weight", glorot(rng, (d_in, d_out)))
                param(f"{pfx}.att_src", glorot(rng, (d_out,), fan_in=d_out, fan_out=1))
                param(f"{pfx}.att_dst", glorot(rng, (d_out,), fan_in=d_out, fan_out=1))
            param(f"{pfx}.bias", np.zeros(d_out))
        if config.n_layers > 0:
            param("out_proj.weight", np.zeros((config.hidden, L)))
            param("out_proj.bias", np.zeros(L))

    @classmethod
    def from_params(cls, config: AdapterConfig, graph: MontageGraph,
                    params: dict[str, Tensor]) -> "GraphAdapter":
        adapter = cls(config, graph, np.random.default_rng(0))
        if set(params) != set(adapter._params):
            raise ValueError(
                f"parameter names do not match the config: "
                f"{sorted(set(params) ^ set(adapter._params))}")
        adapter._params = dict(params)
        return adapter

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def _layer(self, i: int, h: Tensor) -> Tensor:
        cfg = self.config
        p = self._params
        pfx = f"gnn{i}"
        if cfg.variant == "gcn":
            return gcn_layer(h, self._propagation, p[f"{pfx}.weight"], p[f"{pfx}.bias"])
        if cfg.variant == "sage":
            seed = None
            if cfg.sage_sample_k is not None:
                seed = int(self._sample_rng.integers(2**63))
            return sage_layer(h, self.graph, p[f"{pfx}.self_weight"],
                              p[f"{pfx}.neigh_weight"], p[f"{pfx}.bias"],
                              sample_k=cfg.sage_sample_k, seed=seed,
                              weighted_mean=cfg.sage_weighted_mean)
        return gat_layer(h, self.graph, p[f"{pfx}.weight"], p[f"{pfx}.att_src"],
                         p[f"{pfx}.att_dst"], p[f"{pfx}.bias"], cfg.leaky_slope)

    def forward(self, x: Tensor) -> Tensor:
        """Adapted signal, same node count, backbone input length."""
        if x.ndim != 2 or x.shape[0] != self.graph.n:
            raise ShapeMismatchError(
                f"adapter expects ({self.graph.n}, L) input, got {x.shape}")
        base = length_adapt(x, self._params.get("length_adapter.weight"),
                            self._params.get("length_adapter.bias"))
        if self.config.n_layers == 0:
            return base
        h = base
        for i in range(self.config.n_layers):
            h = self._layer(i, h)
        delta = h @ self._params["out_proj.weight"] + self._params["out_proj.bias"]
        return base + delta if self.config.residual else delta
