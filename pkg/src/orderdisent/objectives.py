"""Loss terms and the per-batch loss graph.

Every loss is expressed with the autodiff primitives, so the scalar helpers
below and the batched training graph share one code path.

Routing (which parameter groups a loss may update) is declared in
:data:`DISCRIMINATOR_GROUPS` and :data:`MAIN_GROUPS` and enforced by the
trainer through the ``wrt`` set of :func:`~orderdisent.autodiff.gradients`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, evaluate
from .net import ParamSet, build_forward

DISCRIMINATOR_GROUPS = frozenset({"D_u", "D_loc"})
MAIN_GROUPS = frozenset({"E", "B_u", "B_loc", "C_u", "C_loc"})
TERMS = ("L_c_u", "L_c_loc", "L_d_u", "L_d_loc", "L_adv_u", "L_adv_loc", "L_seq")


@dataclass(frozen=True)
class LossWeights:
    adv: float = 0.1
    seq: float = 1.0
    margin: float = 0.5
    # minimise +sum_j log d_j literally, instead of uniform-target cross-entropy
    log_sum_adversarial: bool = False

    def __post_init__(self):
        if self.adv < 0 or self.seq < 0 or self.margin < 0:
            raise ValueError(f"loss weights and margin must be non-negative: {self}")


@dataclass
class LossBundle:
    values: dict[str, float] = field(default_factory=lambda: dict.fromkeys(TERMS, 0.0))
    counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(TERMS, 0))

    def __getitem__(self, term):
        return self.values[term]


@dataclass
class Batch:
    """Rows of one or more contiguous sequence fragments.

    ``uc`` holds -1 where the UC label is hidden.  ``triples`` are row indices
    ``(t, t+1, t+2)`` of consecutive frames inside one fragment.
    """

    x: np.ndarray
    loc: np.ndarray
    uc: np.ndarray
    triples: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))

    def __len__(self):
        return len(self.x)

    @property
    def labeled(self) -> np.ndarray:
        return self.uc >= 0


def _onehot(y, k, mask=None):
    out = np.zeros((len(y), k))
    rows = np.arange(len(y)) if mask is None else np.flatnonzero(mask)
    out[rows, np.asarray(y)[rows]] = 1.0
    return out


def _selector(idx, n):
    s = np.zeros((len(idx), n))
    s[np.arange(len(idx)), idx] = 1.0
    return s


def cross_entropy_node(g: Graph, prob: int, target: int, count: int) -> int:
    """-(1/count) * sum(target * log prob); zero when ``count`` is 0."""
    total = g.sum(g.mul(target, g.log(prob)))
    return g.scale(total, -1.0 / count if count else 0.0)


def ordinal_node(g: Graph, z_t: int, z_t1: int, z_t2: int, margin: int) -> int:
    """Per-triple hinge ``[|z_t - z_t1|^2 - |z_t - z_t2|^2 + margin]_+``."""
    gap = g.sub(g.sqdist(z_t, z_t1), g.sqdist(z_t, z_t2))
    return g.hinge(g.add(gap, margin))


def _eval_single(build, **inputs) -> float:
    g = Graph()
    leaves = {k: g.input(k) for k in inputs}
    out = build(g, leaves)
    return float(evaluate(g, inputs)[out])


def _check_prob(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"not a probability vector: {p}")
    return p


def _check_index(p, y):
    if not 0 <= int(y) < len(p):
        raise IndexError(f"class index {y} out of range for {len(p)} classes")


def classification_loss(p, y: int) -> float:
    p = _check_prob(p)
    _check_index(p, y)
    t = np.eye(len(p))[int(y)]
    return _eval_single(lambda g, n: cross_entropy_node(g, n["p"], n["t"], 1), p=p, t=t)


def discriminative_loss(d, y: int) -> float:
    """Cross-entropy of a discriminator's prediction against the nuisance label."""
    return classification_loss(d, y)


def adversarial_loss(d, log_sum: bool = False) -> float:
    """Cross-entropy against the uniform distribution, ``-(1/K) sum_j log d_j``.

    With ``log_sum=True`` returns ``+sum_j log d_j`` instead.
    """
    d = _check_prob(d)
    k = len(d)
    if log_sum:
        return _eval_single(lambda g, n: g.sum(g.log(n["d"])), d=d)
    return _eval_single(lambda g, n: cross_entropy_node(g, n["d"], n["t"], 1), d=d, t=np.full(k, 1.0 / k))


def ordinal_loss(z_t, z_t1, z_t2, margin: float) -> float:
    z_t, z_t1, z_t2 = (np.asarray(z, dtype=np.float64) for z in (z_t, z_t1, z_t2))
    if not (z_t.shape == z_t1.shape == z_t2.shape):
        raise ValueError(f"shape mismatch: {z_t.shape}, {z_t1.shape}, {z_t2.shape}")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return _eval_single(
        lambda g, n: ordinal_node(g, n["a"], n["b"], n["c"], n["m"]),
        a=z_t, b=z_t1, c=z_t2, m=np.asarray(float(margin)),
    )


@dataclass
class BatchGraph:
    graph: Graph
    bindings: dict[str, np.ndarray]
    terms: dict[str, int]
    counts: dict[str, int]
    outputs: dict[str, int]

    def weighted(self, pairs) -> int:
        """Node for sum of ``weight * term`` over ``pairs``; zero weights are left out."""
        g = self.graph
        total = None
        for w, term in pairs:
            if w == 0:
                continue
            node = self.terms[term] if w == 1 else g.scale(self.terms[term], w)
            total = node if total is None else g.add(total, node)
        if total is None:
            total = g.scale(self.terms["L_c_u"], 0.0)
        return total


def build_batch_graph(params: ParamSet, batch: Batch, weights: LossWeights) -> BatchGraph:
    """Forward network plus all seven loss terms for ``batch``."""
    cfg = params.config
    n = len(batch)
    if n == 0 or batch.loc is None or len(batch.loc) != n:
        raise ValueError("batch has no location labels")
    mask = batch.labeled
    n_lab = int(mask.sum())
    m = len(batch.triples)

    g = Graph()
    out = build_forward(g, cfg, g.input("x"))
    data = {
        "x": batch.x,
        "uc_onehot": _onehot(batch.uc, cfg.n_uc, mask),
        "loc_onehot": _onehot(batch.loc, cfg.n_loc),
    }
    if weights.log_sum_adversarial:
        data["uc_adv"] = np.repeat(mask[:, None].astype(float), cfg.n_uc, axis=1)
        data["loc_adv"] = np.ones((n, cfg.n_loc))
        adv = lambda prob, tgt, cnt: g.scale(g.sum(g.mul(g.input(tgt), g.log(prob))), 1.0 / cnt if cnt else 0.0)  # noqa: E731
    else:
        data["uc_adv"] = np.repeat(mask[:, None] / cfg.n_uc, cfg.n_uc, axis=1)
        data["loc_adv"] = np.full((n, cfg.n_loc), 1.0 / cfg.n_loc)
        adv = lambda prob, tgt, cnt: cross_entropy_node(g, prob, g.input(tgt), cnt)  # noqa: E731

    terms = {
        "L_c_u": cross_entropy_node(g, out["p_u"], g.input("uc_onehot"), n_lab),
        "L_c_loc": cross_entropy_node(g, out["p_loc"], g.input("loc_onehot"), n),
        "L_d_u": cross_entropy_node(g, out["d_u"], g.input("uc_onehot"), n_lab),
        "L_d_loc": cross_entropy_node(g, out["d_loc"], g.input("loc_onehot"), n),
        "L_adv_u": adv(out["d_u"], "uc_adv", n_lab),
        "L_adv_loc": adv(out["d_loc"], "loc_adv", n),
    }
    if m:
        t = batch.triples
        sel = [g.affine(g.input(f"sel{j}"), out["z_u"]) for j in range(3)]
        for j in range(3):
            data[f"sel{j}"] = _selector(t[:, j], n)
        data["margin"] = np.asarray(float(weights.margin))
        terms["L_seq"] = g.mean(ordinal_node(g, *sel, g.input("margin")))
    else:
        terms["L_seq"] = g.scale(terms["L_c_u"], 0.0)

    counts = {"L_c_u": n_lab, "L_d_u": n_lab, "L_adv_u": n_lab,
              "L_c_loc": n, "L_d_loc": n, "L_adv_loc": n, "L_seq": m}
    return BatchGraph(g, {**params.tensors, **data}, terms, counts, out)


def discriminator_loss(bg: BatchGraph) -> int:
    return bg.weighted([(1.0, "L_d_u"), (1.0, "L_d_loc")])


def main_loss(bg: BatchGraph, weights: LossWeights) -> int:
    return bg.weighted([
        (1.0, "L_c_u"), (1.0, "L_c_loc"),
        (weights.adv, "L_adv_u"), (weights.adv, "L_adv_loc"),
        (weights.seq, "L_seq"),
    ])


def bundle_from_values(bg: BatchGraph, values) -> LossBundle:
    b = LossBundle()
    for term, node in bg.terms.items():
        b.values[term] = float(values[node]) if bg.counts[term] else 0.0
        b.counts[term] = bg.counts[term]
    return b


def batch_losses(params: ParamSet, batch: Batch, weights: LossWeights = LossWeights()) -> LossBundle:
    bg = build_batch_graph(params, batch, weights)
    return bundle_from_values(bg, evaluate(bg.graph, bg.bindings))
