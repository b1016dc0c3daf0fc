"""Experiment drivers: method comparison, ablation grid, linear probes, prediction strips."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Graph, value_and_gradients
from .metrics import METRIC_NAMES, MetricsReport, evaluate_predictions
from .net import NetworkConfig, ParamSet, forward
from .objectives import cross_entropy_node
from .seqgen import DatasetManifest, SequenceData, mask_labels
from .trainer import TrainConfig, TrainResult, predict_proba, train

COLORS = {1: "#d62728", 0: "#1f77b4", -1: "#9e9e9e"}  # UC red, normal blue, unlabeled gray


@dataclass(frozen=True)
class RowSpec:
    label: str
    method: str
    ratio: float | None = None  # None: the manifest's own labeled set
    flags: tuple[bool, bool, bool] | None = None  # (location, disentangle, order)
    weights: dict = field(default_factory=dict)


COMPARISON_ROWS = (
    RowSpec("Supervised learning", "supervised", ratio=1.0),
    RowSpec("Supervised learning", "supervised"),
    RowSpec("Pseudo-Label", "pseudo_label"),
    RowSpec("FixMatch (lite)", "fixmatch_lite"),
    RowSpec("Proposed", "proposed"),
)

ABLATION_ROWS = (
    RowSpec("baseline", "supervised", flags=(False, False, False)),
    RowSpec("+location", "location_multitask", flags=(True, False, False)),
    RowSpec("+location+disentangle", "proposed_no_order", flags=(True, True, False)),
    RowSpec("+location+disentangle+order", "proposed", flags=(True, True, True)),
)


@dataclass
class ResultTable:
    rows: list[RowSpec]
    reports: list[list[MetricsReport]]  # per row, per seed
    ratios: list[float]
    seeds: list[int]

    def mean(self, row: int, metric: str) -> float | None:
        vals = [getattr(r, metric) for r in self.reports[row]]
        return None if any(v is None for v in vals) else float(np.mean(vals))

    def std(self, row: int, metric: str) -> float | None:
        vals = [getattr(r, metric) for r in self.reports[row]]
        return None if any(v is None for v in vals) else float(np.std(vals))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        has_flags = any(r.flags for r in self.rows)
        head = ["method"] + (["location", "disentangle", "order"] if has_flags else []) + ["R"]
        for m in METRIC_NAMES:
            head += [f"{m}_mean", f"{m}_std"]
        w.writerow(head)
        for i, spec in enumerate(self.rows):
            line = [spec.label]
            if has_flags:
                line += ["x" if f else "" for f in spec.flags]
            line.append(f"{self.ratios[i]:.2f}")
            for m in METRIC_NAMES:
                mu, sd = self.mean(i, m), self.std(i, m)
                line += ["" if mu is None else f"{mu:.2f}", "" if sd is None else f"{sd:.2f}"]
            w.writerow(line)
        return buf.getvalue()

    def render(self) -> str:
        """Fixed-width text table with mean ± std per metric."""
        lines = [f"{'method':32s} {'R':>5s} " + " ".join(f"{m:>15s}" for m in METRIC_NAMES)]
        for i, spec in enumerate(self.rows):
            cells = []
            for m in METRIC_NAMES:
                mu, sd = self.mean(i, m), self.std(i, m)
                cells.append(f"{'—':>15s}" if mu is None else f"{mu:7.2f} ± {sd:5.2f}")
            lines.append(f"{spec.label:32s} {self.ratios[i]:5.2f} " + " ".join(cells))
        return "\n".join(lines)


class Experiment:
    """One dataset plus a cache of trained runs keyed by (method, ratio, weights, seed)."""

    def __init__(self, data: SequenceData, manifest: DatasetManifest,
                 net_config: NetworkConfig | None = None, train_config: TrainConfig = TrainConfig()):
        self.data, self.manifest = data, manifest
        self.net_config = net_config or NetworkConfig(input_dim=data.x.shape[1])
        self.train_config = train_config
        self.train_set = data.subset(manifest.split_rows(data, "train"))
        self.val_set = data.subset(manifest.split_rows(data, "val"))
        self.test_set = data.subset(manifest.split_rows(data, "test"))
        self._cache: dict = {}

    def visible(self, ratio: float | None, seed: int) -> np.ndarray:
        m = self.manifest
        if ratio is not None and ratio != m.labeled_ratio:
            m = mask_labels(m, ratio, seed)
        return m.visible_uc(self.train_set)

    def run(self, spec: RowSpec, seed: int) -> TrainResult:
        key = (spec.method, spec.ratio, tuple(sorted(spec.weights.items())), seed)
        if key not in self._cache:
            cfg = self.train_config
            cfg = replace(cfg, method=spec.method, seed=seed, weights=replace(cfg.weights, **spec.weights))
            self._cache[key] = train(self.train_set, self.visible(spec.ratio, seed), self.val_set,
                                     self.net_config, cfg)
        return self._cache[key]

    def test_report(self, params: ParamSet) -> MetricsReport:
        pred = predict_proba(params, self.test_set.x).argmax(axis=1)
        return evaluate_predictions(pred, self.test_set.uc)

    def table(self, rows, seeds) -> ResultTable:
        seeds = sorted(int(s) for s in seeds)
        reports = [[self.test_report(self.run(spec, s).params) for s in seeds] for spec in rows]
        ratios = [self.manifest.labeled_ratio if r.ratio is None else r.ratio for r in rows]
        return ResultTable(list(rows), reports, ratios, seeds)


def run_comparison(data, manifest, seeds, net_config=None, train_config=TrainConfig(), experiment=None) -> ResultTable:
    exp = experiment or Experiment(data, manifest, net_config, train_config)
    return exp.table(COMPARISON_ROWS, seeds)


def run_ablation(data, manifest, seeds, net_config=None, train_config=TrainConfig(), experiment=None) -> ResultTable:
    exp = experiment or Experiment(data, manifest, net_config, train_config)
    return exp.table(ABLATION_ROWS, seeds)


def probe_disentanglement(features, labels, seed: int = 0, test_features=None, test_labels=None,
                          epochs: int = 200, lr: float = 0.1) -> float:
    """Held-out accuracy of a fresh affine+softmax probe trained on frozen features.

    Features are standardised with training statistics.  Without an explicit
    test set a seeded 70/30 split is used.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if len(np.unique(y)) < 2:
        raise ValueError("probe needs at least two classes")
    if test_features is None:
        perm = np.random.default_rng(seed).permutation(len(x))
        cut = int(round(0.7 * len(x)))
        x, y, xt, yt = x[perm[:cut]], y[perm[:cut]], x[perm[cut:]], y[perm[cut:]]
    else:
        xt, yt = np.asarray(test_features, dtype=np.float64), np.asarray(test_labels, dtype=int)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    x, xt = (x - mu) / sd, (xt - mu) / sd
    k = int(max(y.max(), yt.max())) + 1

    g = Graph()
    logits = g.affine(g.input("x"), g.param("W"), g.param("b"))
    loss = cross_entropy_node(g, g.softmax(logits), g.input("y"), len(x))
    rng = np.random.default_rng(seed)
    params = {"W": rng.uniform(-0.01, 0.01, (x.shape[1], k)), "b": np.zeros(k)}
    onehot = np.eye(k)[y]
    for _ in range(epochs):
        _, grads = value_and_gradients(g, loss, {**params, "x": x, "y": onehot}, {"W", "b"})
        params = {n: params[n] - lr * grads[n] for n in params}
    pred = (xt @ params["W"] + params["b"]).argmax(axis=1)
    return float((pred == yt).mean())


def location_probe(params: ParamSet, exp: Experiment, seed: int = 0, feature: str = "z_u") -> float:
    """Probe location from a frozen feature: fit on train records, score on validation records."""
    ztr = getattr(forward(params, exp.train_set.x), feature)
    zva = getattr(forward(params, exp.val_set.x), feature)
    return probe_disentanglement(ztr, exp.train_set.location, seed, zva, exp.val_set.location)


@dataclass
class StripReport:
    tracks: dict[int, dict[str, np.ndarray]]
    csv_path: Path
    svg_path: Path


TRACKS = ("truth", "train_label", "pred_order", "pred_no_order")


def sequence_strips(params_order: ParamSet, params_no_order: ParamSet, data: SequenceData,
                    manifest: DatasetManifest, sequence_ids, out_dir) -> StripReport:
    """Per-sequence label tracks as CSV and SVG (red UC, blue normal, gray unlabeled)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seqs = data.sequences()
    visible = manifest.visible_uc(data)
    tracks = {}
    for sid in sequence_ids:
        if int(sid) not in seqs:
            raise KeyError(f"unknown sequence id {sid}")
        rows = seqs[int(sid)]
        x = data.x[rows]
        tracks[int(sid)] = {
            "truth": data.uc[rows].copy(),
            "train_label": visible[rows],
            "pred_order": predict_proba(params_order, x).argmax(axis=1),
            "pred_no_order": predict_proba(params_no_order, x).argmax(axis=1),
        }
    csv_path, svg_path = out_dir / "strips.csv", out_dir / "strips.svg"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "t", *TRACKS])
        for sid, tr in tracks.items():
            for t in range(len(tr["truth"])):
                w.writerow([sid, t, *(int(tr[name][t]) for name in TRACKS)])
    svg_path.write_text(_strips_svg(tracks))
    return StripReport(tracks, csv_path, svg_path)


def _strips_svg(tracks, cell=6, bar=10, gap=4, label_w=110) -> str:
    width = label_w + cell * max((len(t["truth"]) for t in tracks.values()), default=0) + 10
    block = len(TRACKS) * (bar + 2) + gap * 3
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{block * len(tracks) + 10}" '
             f'font-family="monospace" font-size="8">']
    for i, (sid, tr) in enumerate(tracks.items()):
        y0 = 5 + i * block
        parts.append(f'<text x="2" y="{y0 + 8}">sequence {sid}</text>')
        for j, name in enumerate(TRACKS):
            y = y0 + gap * 2 + j * (bar + 2)
            parts.append(f'<g data-sequence="{sid}" data-track="{name}">')
            parts.append(f'<text x="2" y="{y + bar - 2}">{name}</text>')
            for t, v in enumerate(tr[name]):
                parts.append(f'<rect x="{label_w + t * cell}" y="{y}" width="{cell}" height="{bar}" '
                             f'fill="{COLORS[int(v)]}" data-label="{int(v)}"/>')
            parts.append("</g>")
    parts.append("</svg>\n")
    return "\n".join(parts)
