"""Randomised finite-difference audit of the full training graph.

Each case draws a small network, a batch of sequence fragments with partial
UC labels, and loss weights, then compares analytic gradients against central
differences for both routed objectives: the discriminator loss w.r.t. the D
groups and the main loss (adversarial + ordinal terms included) w.r.t. the
encoder/branch/head groups with D frozen.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import evaluate, finite_difference_check, gradients
from .net import NetworkConfig, group_params, init_params
from .objectives import (
    DISCRIMINATOR_GROUPS, MAIN_GROUPS, Batch, LossWeights,
    build_batch_graph, discriminator_loss, main_loss,
)


@dataclass
class GradcheckReport:
    cases: int
    max_rel_error: float
    worst_case: int
    routing_violations: int
    seconds: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol and self.routing_violations == 0


def random_case(rng: np.random.Generator):
    cfg = NetworkConfig(
        input_dim=int(rng.integers(3, 6)),
        encoder_widths=(int(rng.integers(3, 6)),),
        branch_widths=(int(rng.integers(2, 5)),),
        z_dim=int(rng.integers(2, 4)),
    )
    params = init_params(cfg, int(rng.integers(2**31)))
    # nonzero biases keep dead rows off the exact ReLU kink
    params = params.replace({k: rng.uniform(-0.1, 0.1, v.shape) for k, v in params.tensors.items() if ".b" in k})
    lengths = rng.integers(1, 6, size=int(rng.integers(1, 3)))
    n = int(lengths.sum())
    uc = rng.integers(0, 2, n)
    uc[rng.random(n) < 0.5] = -1
    triples, off = [], 0
    for L in lengths:
        triples += [(off + k, off + k + 1, off + k + 2) for k in range(L - 2)]
        off += L
    batch = Batch(rng.standard_normal((n, cfg.input_dim)), rng.integers(0, 3, n), uc,
                  np.array(triples, dtype=int).reshape(-1, 3))
    weights = LossWeights(adv=float(rng.uniform(0.05, 1.0)), seq=float(rng.uniform(0.1, 2.0)),
                          margin=float(rng.uniform(0.0, 1.0)))
    return params, batch, weights


def _min_kink_distance(bg) -> float:
    values = evaluate(bg.graph, bg.bindings)
    gaps = [np.abs(values[n.inputs[0]]).min() for n in bg.graph.nodes
            if n.op in ("relu", "hinge") and values[n.inputs[0]].size]
    return min(gaps, default=np.inf)


def run_gradcheck(n_cases: int = 100, seed: int = 0, h: float = 1e-5, kink_margin: float = 1e-3) -> GradcheckReport:
    """Cases whose ReLU/hinge inputs come within ``kink_margin`` of 0 are redrawn."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst, worst_case, violations = 0.0, -1, 0
    for case in range(n_cases):
        while True:
            params, batch, weights = random_case(rng)
            bg = build_batch_graph(params, batch, weights)
            if _min_kink_distance(bg) > kink_margin:
                break
        d_wrt = group_params(params, DISCRIMINATOR_GROUPS)
        m_wrt = group_params(params, MAIN_GROUPS)
        for node, wrt in ((discriminator_loss(bg), d_wrt), (main_loss(bg, weights), m_wrt)):
            if set(gradients(bg.graph, node, bg.bindings, wrt)) != wrt:
                violations += 1
            err = finite_difference_check(bg.graph, node, bg.bindings, h=h, wrt=wrt)
            if err > worst:
                worst, worst_case = err, case
    return GradcheckReport(n_cases, worst, worst_case, violations, time.perf_counter() - start)
