"""Training loops: the routed disentangling method, its ablations, and the baselines.

All methods share fragment batching and validation-accuracy model selection.
The disentangling family (``proposed``, ``proposed_no_order``,
``location_multitask``) takes two routed SGD steps per batch:

1. discriminator step on ``L_d_u + L_d_loc`` w.r.t. ``D_u``/``D_loc`` only;
2. main step on classification + adversarial + ordinal terms w.r.t.
   ``E``/``B_*``/``C_*`` only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .autodiff import Graph, value_and_gradients
from .metrics import MetricsReport, evaluate_predictions
from .net import NetworkConfig, ParamSet, build_forward, forward, group_params, init_params
from .objectives import (
    DISCRIMINATOR_GROUPS, MAIN_GROUPS, TERMS, Batch, LossBundle, LossWeights,
    build_batch_graph, bundle_from_values, cross_entropy_node, discriminator_loss, main_loss,
)
from .seqgen import DatasetManifest, SequenceData

log = logging.getLogger(__name__)

METHODS = ("supervised", "pseudo_label", "fixmatch_lite", "proposed", "proposed_no_order", "location_multitask")
SUPERVISED_GROUPS = frozenset({"E", "B_u", "C_u"})


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "proposed"
    epochs: int = 100
    batch_fragments: int = 16
    fragment_length: int = 8
    lr: float = 0.05
    momentum: float = 0.0
    weights: LossWeights = LossWeights()
    pl_threshold: float = 0.95
    pl_warmup: int = 10
    pl_ramp: float = 0.3
    fm_threshold: float = 0.95
    fm_weak_noise: float = 0.1
    fm_strong_noise: float = 0.5
    fm_dropout: float = 0.1
    fm_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.epochs < 0 or self.batch_fragments < 1 or self.fragment_length < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_fragments >= 1, fragment_length >= 1 and lr > 0 required")
        if not (0 < self.pl_threshold <= 1 and 0 < self.fm_threshold <= 1):
            raise ValueError("confidence thresholds must lie in (0, 1]")

    def effective_weights(self) -> LossWeights:
        """Loss weights after applying the ablation implied by ``method``."""
        if self.method == "proposed_no_order":
            return replace(self.weights, seq=0.0)
        if self.method == "location_multitask":
            return replace(self.weights, adv=0.0, seq=0.0)
        return self.weights


@dataclass
class TrainResult:
    params: ParamSet
    history: list[LossBundle] = field(default_factory=list)
    val_metrics: list[MetricsReport] = field(default_factory=list)
    selected_epoch: int = 0
    pseudo_counts: list[int] = field(default_factory=list)
    initial_params: ParamSet | None = None

    @property
    def val_accuracy(self) -> list[float]:
        return [m.accuracy or 0.0 for m in self.val_metrics]


# callback(kind, before, after) is invoked around each routed update
StepCallback = Callable[[str, ParamSet, ParamSet], None]


def make_fragments(records: SequenceData, batch_size: int, seed, fragment_length: int = 8) -> list[list[np.ndarray]]:
    """Cut every sequence into contiguous fragments, shuffle them, group ``batch_size`` per batch.

    ``seed`` may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    frags = []
    for rows in records.sequences().values():
        frags.extend(rows[k:k + fragment_length] for k in range(0, len(rows), fragment_length))
    order = rng.permutation(len(frags))
    frags = [frags[i] for i in order]
    return [frags[k:k + batch_size] for k in range(0, len(frags), batch_size)]


def fragment_triples(frags: list[np.ndarray]) -> np.ndarray:
    """Batch-row indices (t, t+1, t+2) of consecutive frames inside each fragment."""
    out, offset = [], 0
    for f in frags:
        out.extend((offset + k, offset + k + 1, offset + k + 2) for k in range(len(f) - 2))
        offset += len(f)
    return np.array(out, dtype=int).reshape(-1, 3)


def _batch(records: SequenceData, visible_uc: np.ndarray, frags: list[np.ndarray]) -> Batch:
    rows = np.concatenate(frags)
    return Batch(records.x[rows], records.location[rows], visible_uc[rows], fragment_triples(frags))


class _SGD:
    def __init__(self, lr: float, momentum: float):
        self.lr, self.momentum, self.velocity = lr, momentum, {}

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> ParamSet:
        updates = {}
        for name in sorted(grads):
            g = grads[name]
            if self.momentum:
                v = self.momentum * self.velocity.get(name, 0.0) + g
                self.velocity[name] = v
                g = v
            updates[name] = params[name] - self.lr * g
        return params.replace(updates)


def predict_proba(params: ParamSet, x: np.ndarray) -> np.ndarray:
    return forward(params, x).p_u


def _validate(params: ParamSet, val: SequenceData | None) -> MetricsReport | None:
    if val is None or len(val) == 0:
        return None
    pred = predict_proba(params, val.x).argmax(axis=1)
    return evaluate_predictions(pred, val.uc)


def _mean_bundle(bundles: list[LossBundle]) -> LossBundle:
    out = LossBundle()
    for term in TERMS:
        tot = sum(b.counts[term] for b in bundles)
        out.counts[term] = tot
        if tot:
            out.values[term] = sum(b.values[term] * b.counts[term] for b in bundles) / tot
    return out


class _Selector:
    """Tracks the first epoch with maximal validation accuracy."""

    def __init__(self, result: TrainResult):
        self.result, self.best = result, -np.inf

    def update(self, epoch: int, params: ParamSet, report: MetricsReport | None):
        res = self.result
        if report is not None:
            res.val_metrics.append(report)
        acc = -1.0 if report is None else (report.accuracy or 0.0)
        # without validation data the last epoch wins
        if acc > self.best or report is None:
            self.best = acc
            res.params = params
            res.selected_epoch = epoch


def _check_finite(bundle: LossBundle):
    if not all(np.isfinite(v) for v in bundle.values.values()):
        raise FloatingPointError("non-finite loss")


def _train_disentangled(train, visible_uc, val, net_config, cfg, callback):
    weights = cfg.effective_weights()
    params = init_params(net_config, cfg.seed)
    result = TrainResult(params=params, initial_params=params)
    sel = _Selector(result)
    rng = np.random.default_rng(cfg.seed)
    d_opt, m_opt = _SGD(cfg.lr, cfg.momentum), _SGD(cfg.lr, cfg.momentum)
    d_wrt = group_params(params, DISCRIMINATOR_GROUPS)
    m_wrt = group_params(params, MAIN_GROUPS)
    for epoch in range(1, cfg.epochs + 1):
        bundles = []
        for frags in make_fragments(train, cfg.batch_fragments, rng, cfg.fragment_length):
            batch = _batch(train, visible_uc, frags)
            bg = build_batch_graph(params, batch, weights)
            d_node, m_node = discriminator_loss(bg), main_loss(bg, weights)
            values, grads = value_and_gradients(bg.graph, d_node, bg.bindings, d_wrt)
            bundle = bundle_from_values(bg, values)
            _check_finite(bundle)
            bundles.append(bundle)
            new = d_opt.step(params, grads)
            if callback:
                callback("discriminator", params, new)
            params = new
            bg.bindings.update(params.tensors)
            _, grads = value_and_gradients(bg.graph, m_node, bg.bindings, m_wrt)
            new = m_opt.step(params, grads)
            if callback:
                callback("main", params, new)
            params = new
        result.history.append(_mean_bundle(bundles))
        sel.update(epoch, params, _validate(params, val))
    return result


def _self_training_step(params, opt, x_lab, y_lab, x_un, y_un, un_weight, un_count, wrt):
    """One SGD step on CE(labeled) + un_weight * sum CE(unlabeled targets) / un_count."""
    g = Graph()
    n_lab = len(x_lab)
    use_un = un_weight > 0 and len(x_un) > 0
    x = np.concatenate([x_lab, x_un]) if use_un else x_lab
    out = build_forward(g, params.config, g.input("x"))
    k = params.config.n_uc
    tgt = np.zeros((len(x), k))
    tgt[np.arange(n_lab), y_lab] = 1.0
    loss = cross_entropy_node(g, out["p_u"], g.input("lab"), n_lab)
    bindings = {**params.tensors, "x": x, "lab": tgt}
    if use_un:
        un_tgt = np.zeros((len(x), k))
        un_tgt[n_lab + np.arange(len(x_un)), y_un] = 1.0
        bindings["un"] = un_tgt
        un = cross_entropy_node(g, out["p_u"], g.input("un"), un_count)
        loss = g.add(loss, g.scale(un, un_weight))
    values, grads = value_and_gradients(g, loss, bindings, wrt)
    bundle = LossBundle()
    bundle.values["L_c_u"] = float(values[loss])
    bundle.counts["L_c_u"] = n_lab
    _check_finite(bundle)
    return opt.step(params, grads), bundle


def pseudo_label_weight(epoch_index: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> 1 over ``pl_ramp`` of the epochs, starting after the warm-up."""
    ramp = max(1, int(round(cfg.pl_ramp * cfg.epochs)))
    return float(np.clip((epoch_index - cfg.pl_warmup) / ramp, 0.0, 1.0))


def confident(probs: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """(mask, argmax) where the clamped max probability reaches ``threshold``."""
    conf = np.clip(probs.max(axis=1), 1e-7, 1 - 1e-7)
    return conf >= threshold, probs.argmax(axis=1)


def augment(x: np.ndarray, noise: float, dropout: float, rng: np.random.Generator) -> np.ndarray:
    """Additive gaussian noise then coordinate dropout; identity when both are 0."""
    out = x
    if noise > 0:
        out = out + noise * rng.standard_normal(x.shape)
    if dropout > 0:
        out = out * (rng.random(x.shape) >= dropout)
    return out


def _train_self(train, visible_uc, val, net_config, cfg, callback):
    params = init_params(net_config, cfg.seed)
    result = TrainResult(params=params, initial_params=params)
    sel = _Selector(result)
    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    opt = _SGD(cfg.lr, cfg.momentum)
    wrt = group_params(params, SUPERVISED_GROUPS)
    unlabeled = visible_uc < 0
    pseudo = np.full(len(train), -1)
    for e in range(cfg.epochs):
        alpha = 0.0
        if cfg.method == "pseudo_label":
            alpha = pseudo_label_weight(e, cfg)
            pseudo[:] = -1
            if alpha > 0 and unlabeled.any():
                mask, arg = confident(predict_proba(params, train.x[unlabeled]), cfg.pl_threshold)
                idx = np.flatnonzero(unlabeled)[mask]
                pseudo[idx] = arg[mask]
            result.pseudo_counts.append(int((pseudo >= 0).sum()))
        bundles = []
        for frags in make_fragments(train, cfg.batch_fragments, rng, cfg.fragment_length):
            rows = np.concatenate(frags)
            lab = rows[visible_uc[rows] >= 0]
            x_un, y_un, un_count, weight = np.zeros((0, train.x.shape[1])), np.zeros(0, int), 0, 0.0
            if cfg.method == "pseudo_label" and alpha > 0:
                pl = rows[pseudo[rows] >= 0]
                x_un, y_un, un_count, weight = train.x[pl], pseudo[pl], len(pl), alpha
            elif cfg.method == "fixmatch_lite":
                un = rows[unlabeled[rows]]
                if len(un):
                    weak = augment(train.x[un], cfg.fm_weak_noise, 0.0, aug_rng)
                    strong = augment(train.x[un], cfg.fm_strong_noise, cfg.fm_dropout, aug_rng)
                    mask, arg = confident(predict_proba(params, weak), cfg.fm_threshold)
                    x_un, y_un, un_count, weight = strong[mask], arg[mask], len(un), cfg.fm_weight
            if len(lab) == 0 and len(x_un) == 0:
                continue
            new, bundle = _self_training_step(params, opt, train.x[lab], visible_uc[lab],
                                              x_un, y_un, weight, un_count, wrt)
            if callback:
                callback("main", params, new)
            params = new
            bundles.append(bundle)
        result.history.append(_mean_bundle(bundles))
        sel.update(e + 1, params, _validate(params, val))
    return result


def train(
    train: SequenceData,
    visible_uc: np.ndarray,
    val: SequenceData | None = None,
    net_config: NetworkConfig = NetworkConfig(),
    config: TrainConfig = TrainConfig(),
    callback: StepCallback | None = None,
) -> TrainResult:
    """Train ``config.method`` on ``train`` records whose UC labels are ``visible_uc`` (-1 = hidden)."""
    visible_uc = np.asarray(visible_uc, dtype=int)
    if len(visible_uc) != len(train):
        raise ValueError("visible_uc must have one entry per training record")
    if not (visible_uc >= 0).any():
        raise TrainingError(f"method {config.method!r} needs at least one UC-labeled record")
    if train.x.shape[1] != net_config.input_dim:
        raise ValueError(f"records have {train.x.shape[1]} features, network expects {net_config.input_dim}")
    log.debug("training %s for %d epochs (seed %d)", config.method, config.epochs, config.seed)
    if config.method in ("proposed", "proposed_no_order", "location_multitask"):
        return _train_disentangled(train, visible_uc, val, net_config, config, callback)
    return _train_self(train, visible_uc, val, net_config, config, callback)


def _from_manifest(data: SequenceData, manifest: DatasetManifest, net_config, config, callback):
    tr = data.subset(manifest.split_rows(data, "train"))
    va = data.subset(manifest.split_rows(data, "val"))
    return train(tr, manifest.visible_uc(tr), va, net_config, config, callback)


def train_proposed(data, manifest, net_config=NetworkConfig(), config=TrainConfig(), callback=None):
    if config.method not in ("proposed", "proposed_no_order", "location_multitask"):
        config = replace(config, method="proposed")
    return _from_manifest(data, manifest, net_config, config, callback)


def train_supervised(data, manifest, net_config=NetworkConfig(), config=TrainConfig(), callback=None):
    return _from_manifest(data, manifest, net_config, replace(config, method="supervised"), callback)


def train_pseudo_label(data, manifest, net_config=NetworkConfig(), config=TrainConfig(), callback=None):
    return _from_manifest(data, manifest, net_config, replace(config, method="pseudo_label"), callback)


def train_fixmatch_lite(data, manifest, net_config=NetworkConfig(), config=TrainConfig(), callback=None):
    return _from_manifest(data, manifest, net_config, replace(config, method="fixmatch_lite"), callback)


def adjacent_distance(params: ParamSet, records: SequenceData) -> float:
    """Mean ``|z_u(t) - z_u(t+1)|^2`` over consecutive frames of every sequence."""
    z = forward(params, records.x).z_u
    dists = []
    for rows in records.sequences().values():
        if len(rows) > 1:
            d = z[rows[1:]] - z[rows[:-1]]
            dists.append((d * d).sum(axis=1))
    return float(np.concatenate(dists).mean()) if dists else 0.0
