"""Synthetic endoscopic-style sequence benchmark.

Each sequence walks through three colon locations in order (right colon,
left colon, rectum).  Appearance is dominated by a per-location mean; the
disease (UC) state follows a two-state Markov chain, so positives come in
contiguous runs, and adds a weaker texture component orthogonal to the
location geometry.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

LOCATIONS = ("right_colon", "left_colon", "rectum")
SPLITS = ("train", "val", "test")
RECORDS_FORMAT = "orderdisent-records"
FORMAT_VERSION = 1
DECIMALS = 8


class DatasetError(ValueError):
    pass


class IntegrityError(DatasetError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_sequences: int = 120
    min_length: int = 20
    max_length: int = 40
    input_dim: int = 32
    loc_separation: float = 4.0
    uc_signal: float = 4.0
    # "shift": UC adds +uc_signal along one texture direction
    # "local": as "shift", but each location has its own texture direction
    # "phase": UC adds +-uc_signal with a random sign per frame, so the UC cue is
    #          invisible to a linear read-out but learnable by an MLP
    texture: str = "phase"
    noise: float = 1.0
    drift: float = 1.0
    # per-frame nuisance (illumination, viewpoint): extra iid std in nuisance_dims directions
    nuisance: float = 0.0
    nuisance_dims: int = 8
    uc_stay: float = 0.9
    uc_prior: float = 0.65
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)
    labeled_ratio: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))
        if self.n_sequences < 1 or not 1 <= self.min_length <= self.max_length:
            raise ValueError("need n_sequences >= 1 and 1 <= min_length <= max_length")
        if self.input_dim < 9 + self.nuisance_dims or self.nuisance_dims < 0:
            raise ValueError("input_dim must be at least 9 + nuisance_dims")
        if self.nuisance < 0:
            raise ValueError("nuisance must be non-negative")
        if not (0 <= self.uc_stay <= 1 and 0 <= self.uc_prior <= 1):
            raise ValueError("uc_stay and uc_prior must lie in [0, 1]")
        # uc_signal = 0 is allowed as the signal-removed control
        if min(self.noise, self.loc_separation) <= 0 or self.uc_signal < 0 or self.drift < 0:
            raise ValueError("noise and loc_separation must be positive, uc_signal and drift non-negative")
        if self.texture not in ("shift", "local", "phase"):
            raise ValueError(f"texture must be 'shift', 'local' or 'phase', got {self.texture!r}")
        _check_ratios(self.split)
        _check_ratio(self.labeled_ratio)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: int
    t: int
    x: np.ndarray
    location: int
    uc: int | None


@dataclass
class SequenceData:
    """Column store of records, sorted by (sequence_id, t)."""

    sequence_id: np.ndarray
    t: np.ndarray
    location: np.ndarray
    uc: np.ndarray
    x: np.ndarray

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[SequenceRecord]:
        for k in range(len(self)):
            yield SequenceRecord(int(self.sequence_id[k]), int(self.t[k]), self.x[k],
                                 int(self.location[k]), int(self.uc[k]))

    def subset(self, rows) -> "SequenceData":
        rows = np.asarray(rows)
        return SequenceData(self.sequence_id[rows], self.t[rows], self.location[rows], self.uc[rows], self.x[rows])

    def sequences(self) -> dict[int, np.ndarray]:
        """Row indices of every sequence, in time order."""
        return {int(s): np.flatnonzero(self.sequence_id == s) for s in dict.fromkeys(self.sequence_id.tolist())}

    def equals(self, other: "SequenceData") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("sequence_id", "t", "location", "uc", "x"))


@dataclass
class DatasetManifest:
    n_sequences: int
    lengths: list[int]
    splits: list[str]
    labeled: list[tuple[int, int]]
    labeled_ratio: float
    seed: int
    config: dict
    config_hash: str
    records_hash: str = ""
    version: int = FORMAT_VERSION

    def split_ids(self, name: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == name]

    def split_rows(self, data: SequenceData, name: str) -> np.ndarray:
        return np.flatnonzero(np.isin(data.sequence_id, self.split_ids(name)))

    def visible_uc(self, data: SequenceData) -> np.ndarray:
        """UC labels as seen by a learner: -1 outside the labeled set."""
        vis = np.full(len(data), -1, dtype=int)
        if self.labeled:
            lab = {(int(i), int(t)) for i, t in self.labeled}
            keep = np.array([(int(i), int(t)) in lab for i, t in zip(data.sequence_id, data.t)])
            vis[keep] = data.uc[keep]
        return vis


def _check_ratio(r):
    if not 0 < r <= 1:
        raise ValueError(f"labeled ratio must be in (0, 1], got {r}")


def _check_ratios(ratios):
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")


def _geometry(cfg: GeneratorConfig, rng: np.random.Generator):
    """Location means, per-location texture and drift directions, nuisance basis."""
    q, _ = np.linalg.qr(rng.standard_normal((cfg.input_dim, cfg.input_dim)))
    q = q.T  # rows orthonormal
    # equilateral triangle with side loc_separation in span(q0, q1)
    r = cfg.loc_separation / np.sqrt(3.0)
    angles = np.pi / 2 + 2 * np.pi * np.arange(3) / 3
    means = r * (np.cos(angles)[:, None] * q[0] + np.sin(angles)[:, None] * q[1])
    texture = q[2:5] if cfg.texture == "local" else q[2:3].repeat(3, axis=0)
    drift_dirs = q[5:8]
    nuisance = q[8:8 + cfg.nuisance_dims]
    return means, texture, drift_dirs, nuisance


def _transition_probs(stay: float, prior: float) -> tuple[float, float]:
    """Leave-probabilities (from negative, from positive) with stationary ``prior``.

    Mean run length over both states equals 1 / (1 - stay).
    """
    if prior in (0.0, 1.0):
        return (1.0, 0.0) if prior == 1.0 else (0.0, 1.0)
    c = (1.0 - stay) / (2.0 * prior * (1.0 - prior))
    return min(1.0, c * prior), min(1.0, c * (1.0 - prior))


def _segment_bounds(length: int, rng) -> np.ndarray:
    """Location index per frame: three contiguous non-empty segments when possible."""
    if length < 3:
        return np.sort(rng.integers(0, 3, size=length))
    cuts = np.sort(rng.choice(np.arange(1, length), size=2, replace=False))
    loc = np.zeros(length, dtype=int)
    loc[cuts[0]:] = 1
    loc[cuts[1]:] = 2
    return loc


def _one_sequence(cfg, ss, geom):
    means, texture, drift_dirs, nuisance_dirs = geom
    rng = np.random.default_rng(ss)
    length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
    loc = _segment_bounds(length, rng)
    leave0, leave1 = _transition_probs(cfg.uc_stay, cfg.uc_prior)
    uc = np.empty(length, dtype=int)
    uc[0] = rng.random() < cfg.uc_prior
    for k in range(1, length):
        leave = leave1 if uc[k - 1] else leave0
        uc[k] = 1 - uc[k - 1] if rng.random() < leave else uc[k - 1]
    # drift: linear ramp inside each segment along that location's drift direction
    drift = np.zeros((length, cfg.input_dim))
    for l in range(3):
        rows = np.flatnonzero(loc == l)
        if len(rows):
            ramp = np.linspace(-0.5, 0.5, len(rows)) if len(rows) > 1 else np.zeros(1)
            drift[rows] = cfg.drift * cfg.noise * ramp[:, None] * drift_dirs[l]
    noise = cfg.noise * rng.standard_normal((length, cfg.input_dim))
    if len(nuisance_dirs):
        noise += cfg.nuisance * cfg.noise * rng.standard_normal((length, len(nuisance_dirs))) @ nuisance_dirs
    amp = cfg.uc_signal * cfg.noise * uc
    if cfg.texture == "phase":
        amp = amp * rng.choice((-1.0, 1.0), size=length)
    x = means[loc] + drift + amp[:, None] * texture[loc] + noise
    return loc, uc, np.round(x, DECIMALS)


def generate(config: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> tuple[SequenceData, DatasetManifest]:
    """Generate records, split them by sequence and hide UC labels outside the labeled set."""
    root = np.random.SeedSequence(seed)
    geom_ss, seq_ss, split_ss, mask_ss = root.spawn(4)
    geom = _geometry(config, np.random.default_rng(geom_ss))
    parts = [_one_sequence(config, ss, geom) for ss in seq_ss.spawn(config.n_sequences)]
    lengths = [len(p[0]) for p in parts]
    data = SequenceData(
        sequence_id=np.repeat(np.arange(config.n_sequences), lengths),
        t=np.concatenate([np.arange(n) for n in lengths]),
        location=np.concatenate([p[0] for p in parts]),
        uc=np.concatenate([p[1] for p in parts]),
        x=np.concatenate([p[2] for p in parts]),
    )
    manifest = DatasetManifest(
        n_sequences=config.n_sequences, lengths=lengths, splits=["train"] * config.n_sequences,
        labeled=[], labeled_ratio=config.labeled_ratio, seed=seed,
        config=_config_dict(config), config_hash=config.config_hash(),
    )
    manifest = split_by_sequence(manifest, config.split, int(split_ss.generate_state(1)[0]))
    manifest = mask_labels(manifest, config.labeled_ratio, int(mask_ss.generate_state(1)[0]))
    manifest.records_hash = records_hash(data)
    return data, manifest


def _config_dict(cfg):
    d = asdict(cfg)
    d["split"] = list(d["split"])
    return d


def split_by_sequence(manifest: DatasetManifest, ratios, seed: int) -> DatasetManifest:
    """Assign whole sequences to train/val/test so record proportions track ``ratios``."""
    _check_ratios(tuple(ratios))
    n = manifest.n_sequences
    if n < sum(r > 0 for r in ratios):
        raise DatasetError(f"{n} sequences cannot fill {sum(r > 0 for r in ratios)} splits")
    order = np.random.default_rng(seed).permutation(n)
    lengths = np.asarray(manifest.lengths)[order]
    total = lengths.sum()
    mids = (np.cumsum(lengths) - lengths / 2.0) / total
    edges = np.cumsum(ratios)
    splits = [""] * n
    for seq, mid in zip(order, mids):
        k = int(np.searchsorted(edges, mid, side="right"))
        k = min(k, 2)
        while ratios[k] == 0:  # never land in an empty split
            k = k - 1 if k > 0 and any(ratios[:k]) else k + 1
        splits[int(seq)] = SPLITS[k]
    # every non-empty split gets at least one sequence
    for k, name in enumerate(SPLITS):
        if ratios[k] > 0 and name not in splits:
            donor = max(SPLITS, key=splits.count)
            idx = [i for i in order if splits[i] == donor][-1]
            splits[int(idx)] = name
    return replace(manifest, splits=splits, labeled=[])


def mask_labels(manifest: DatasetManifest, ratio: float, seed: int) -> DatasetManifest:
    """Sample ``floor(ratio * n_train)`` train records whose UC label stays visible."""
    _check_ratio(ratio)
    train = [(i, t) for i in manifest.split_ids("train") for t in range(manifest.lengths[i])]
    k = int(np.floor(ratio * len(train) + 1e-9))
    pick = np.sort(np.random.default_rng(seed).choice(len(train), size=k, replace=False))
    return replace(manifest, labeled=[train[j] for j in pick], labeled_ratio=ratio)


def records_hash(data: SequenceData) -> str:
    h = hashlib.sha256()
    for line in _record_lines(data):
        h.update(line.encode())
    return h.hexdigest()[:16]


def _record_lines(data: SequenceData):
    # field order: sequence_id, t, l, u, x
    for k in range(len(data)):
        feats = ",".join(f"{v:.{DECIMALS}f}" for v in data.x[k])
        yield (f'{{"sequence_id": {int(data.sequence_id[k])}, "t": {int(data.t[k])}, '
               f'"l": {int(data.location[k])}, "u": {int(data.uc[k])}, "x": [{feats}]}}\n')


def save(data: SequenceData, manifest: DatasetManifest, path) -> None:
    """Write ``<path>/records.jsonl`` and ``<path>/manifest.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"format": RECORDS_FORMAT, "version": FORMAT_VERSION, "count": len(data)})
    with open(path / "records.jsonl", "w") as fh:
        fh.write(header + "\n")
        fh.writelines(_record_lines(data))
    m = asdict(manifest)
    m["labeled"] = [list(p) for p in manifest.labeled]
    m["counts"] = {s: int(sum(manifest.lengths[i] for i in manifest.split_ids(s))) for s in SPLITS}
    (path / "manifest.json").write_text(json.dumps(m, indent=1) + "\n")


def load(path) -> tuple[SequenceData, DatasetManifest]:
    path = Path(path)
    try:
        lines = (path / "records.jsonl").read_text().splitlines()
        header = json.loads(lines[0])
        m = json.loads((path / "manifest.json").read_text())
    except (OSError, IndexError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset at {path}: {exc}") from exc
    if header.get("format") != RECORDS_FORMAT or header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported records header {header}")
    if m.get("version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported manifest version {m.get('version')}")
    body = lines[1:]
    if len(body) != header["count"]:
        raise DatasetError(f"corrupt records file: expected {header['count']} records, found {len(body)}")
    try:
        rows = [json.loads(line) for line in body]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt records file: {exc}") from exc
    data = SequenceData(
        sequence_id=np.array([r["sequence_id"] for r in rows], dtype=int),
        t=np.array([r["t"] for r in rows], dtype=int),
        location=np.array([r["l"] for r in rows], dtype=int),
        uc=np.array([r["u"] for r in rows], dtype=int),
        x=np.array([r["x"] for r in rows], dtype=np.float64).reshape(len(rows), -1),
    )
    m.pop("counts", None)
    m["labeled"] = [tuple(p) for p in m["labeled"]]
    manifest = DatasetManifest(**m)
    if records_hash(data) != manifest.records_hash:
        raise IntegrityError("records do not match the manifest hash")
    return data, manifest
