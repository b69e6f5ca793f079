"""Finite-difference verification of every differentiable layer.

Each named check builds a small random instance, wraps one argument as the
checked tensor, and compares analytic gradients against central
differences. Backs both the ``gradcheck`` CLI subcommand and the
acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .adapter import gat_layer, gcn_layer, sage_layer
from .autodiff import Tensor, grad_check
from .heads import ClassifierHead, aggregate, cross_entropy
from .montage import MontageGraph, graph_from_weights

GRADIENT_TOLERANCE = 1e-4


def random_graph(rng: np.random.Generator, n: int, edge_prob: float = 0.8) -> MontageGraph:
    w = rng.uniform(0.1, 1.0, size=(n, n))
    keep = rng.uniform(size=(n, n)) < edge_prob
    w = np.triu(w * keep, k=1)
    w = w + w.T
    return graph_from_weights(w)


def _attention_block(x, wq, wk, wv, wo):
    d = x.shape[1]
    q, k, v = x @ wq, x @ wk, x @ wv
    scores = (q @ k.T) * (1.0 / np.sqrt(d))
    return (ad.softmax(scores, axis=1) @ v) @ wo


def _checks_for_seed(seed: int):
    """(name, scalar function, checked tensor) triples at small shapes."""
    rng = np.random.default_rng(seed)
    checks = []

    # conv1d, both arguments
    x0 = rng.normal(size=(2, 12))
    w0 = rng.normal(size=(3, 2, 3))
    probe_c = Tensor(rng.normal(size=(3, 5)))
    checks.append(("conv1d/input",
                   lambda x: ad.mul(ad.conv1d(x, Tensor(w0), 2), probe_c).sum(),
                   Tensor(x0)))
    checks.append(("conv1d/kernel",
                   lambda w: ad.mul(ad.conv1d(Tensor(x0), w.reshape(3, 2, 3), 2), probe_c).sum(),
                   Tensor(w0.reshape(-1))))

    # group norm, all arguments
    gx = rng.normal(size=(4, 5))
    gg = rng.uniform(0.5, 1.5, size=4)
    gb = rng.normal(size=4)
    probe_g = Tensor(rng.normal(size=(4, 5)))
    checks.append(("group_norm/input",
                   lambda x: ad.mul(ad.group_norm(x, Tensor(gg), Tensor(gb), 2), probe_g).sum(),
                   Tensor(gx)))
    checks.append(("group_norm/gamma",
                   lambda g: ad.mul(ad.group_norm(Tensor(gx), g, Tensor(gb), 2), probe_g).sum(),
                   Tensor(gg)))
    checks.append(("group_norm/beta",
                   lambda b: ad.mul(ad.group_norm(Tensor(gx), Tensor(gg), b, 2), probe_g).sum(),
                   Tensor(gb)))

    # GNN layers on a random 5-node graph
    graph = random_graph(rng, 5)
    h0 = rng.normal(size=(5, 4))
    w_gcn = rng.normal(size=(4, 3))
    b3 = rng.normal(size=3)
    prop = Tensor(graph.propagation)
    probe_n = Tensor(rng.normal(size=(5, 3)))
    checks.append(("gcn/input",
                   lambda h: ad.mul(gcn_layer(h, prop, Tensor(w_gcn), Tensor(b3)), probe_n).sum(),
                   Tensor(h0)))
    checks.append(("gcn/weight",
                   lambda w: ad.mul(gcn_layer(Tensor(h0), prop, w, Tensor(b3)), probe_n).sum(),
                   Tensor(w_gcn)))

    w_self = rng.normal(size=(4, 3))
    w_neigh = rng.normal(size=(4, 3))
    checks.append(("sage/input",
                   lambda h: ad.mul(sage_layer(h, graph, Tensor(w_self), Tensor(w_neigh), Tensor(b3)),
                                    probe_n).sum(),
                   Tensor(h0)))
    checks.append(("sage/self_weight",
                   lambda w: ad.mul(sage_layer(Tensor(h0), graph, w, Tensor(w_neigh), Tensor(b3)),
                                    probe_n).sum(),
                   Tensor(w_self)))
    checks.append(("sage/neigh_weight",
                   lambda w: ad.mul(sage_layer(Tensor(h0), graph, Tensor(w_self), w, Tensor(b3)),
                                    probe_n).sum(),
                   Tensor(w_neigh)))

    w_gat = rng.normal(size=(4, 3))
    a_src = rng.normal(size=3)
    a_dst = rng.normal(size=3)
    checks.append(("gat/input",
                   lambda h: ad.mul(gat_layer(h, graph, Tensor(w_gat), Tensor(a_src),
                                              Tensor(a_dst), Tensor(b3)), probe_n).sum(),
                   Tensor(h0)))
    checks.append(("gat/weight",
                   lambda w: ad.mul(gat_layer(Tensor(h0), graph, w, Tensor(a_src),
                                              Tensor(a_dst), Tensor(b3)), probe_n).sum(),
                   Tensor(w_gat)))
    checks.append(("gat/attention",
                   lambda a: ad.mul(gat_layer(Tensor(h0), graph, Tensor(w_gat), a[:3],
                                              a[3:], Tensor(b3)), probe_n).sum(),
                   Tensor(np.concatenate([a_src, a_dst]))))

    # transformer self-attention
    tx = rng.normal(size=(5, 4))
    wq, wk, wv, wo = (rng.normal(size=(4, 4)) * 0.5 for _ in range(4))
    probe_t = Tensor(rng.normal(size=(5, 4)))
    checks.append(("attention/input",
                   lambda x: ad.mul(_attention_block(x, Tensor(wq), Tensor(wk), Tensor(wv),
                                                     Tensor(wo)), probe_t).sum(),
                   Tensor(tx)))
    checks.append(("attention/query_weight",
                   lambda w: ad.mul(_attention_block(Tensor(tx), w, Tensor(wk), Tensor(wv),
                                                     Tensor(wo)), probe_t).sum(),
                   Tensor(wq)))

    # aggregator + head + cross-entropy
    emb = rng.normal(size=(3, 9))
    probe_a = Tensor(rng.normal(size=12))
    checks.append(("aggregator",
                   lambda e: ad.mul(aggregate(e), probe_a).sum(),
                   Tensor(emb)))
    head = ClassifierHead(3, 2, rng)
    label = int(rng.integers(2))
    checks.append(("head_cross_entropy",
                   lambda e: cross_entropy(head.logits(aggregate(e)), label),
                   Tensor(emb)))
    logits0 = rng.normal(size=4)
    checks.append(("cross_entropy/logits",
                   lambda z: cross_entropy(z, 2),
                   Tensor(logits0)))
    return checks


def run_gradient_suite(n_seeds: int = 10, h: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per named layer across seeds."""
    worst: dict[str, float] = {}
    for seed in range(n_seeds):
        for name, fn, x in _checks_for_seed(seed):
            err = grad_check(fn, x, h=h)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
