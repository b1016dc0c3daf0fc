"""Hierarchical disentangling network.

Shared encoder ``E`` feeds two branches, ``B_u`` (UC feature ``z_u``) and
``B_loc`` (location feature ``z_loc``).  Each feature has a task head
(``C_u``, ``C_loc``) and a cross-wired discriminator: ``D_loc`` reads ``z_u``
and ``D_u`` reads ``z_loc``.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .autodiff import Graph, evaluate

GROUPS = ("E", "B_u", "B_loc", "C_u", "C_loc", "D_u", "D_loc")
CHECKPOINT_FORMAT = "orderdisent-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 32
    encoder_widths: tuple[int, ...] = (64,)
    branch_widths: tuple[int, ...] = (32,)
    z_dim: int = 16
    n_uc: int = 2
    n_loc: int = 3

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "branch_widths", tuple(int(w) for w in self.branch_widths))
        widths = (self.input_dim, *self.encoder_widths, *self.branch_widths, self.z_dim, self.n_uc, self.n_loc)
        if any(int(w) < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")

    def layer_shapes(self) -> dict[str, list[tuple[int, int]]]:
        """(fan_in, fan_out) of every affine layer, per group."""
        enc = [self.input_dim, *self.encoder_widths]
        br = [enc[-1], *self.branch_widths, self.z_dim]
        chain = lambda ws: list(zip(ws[:-1], ws[1:]))  # noqa: E731
        return {
            "E": chain(enc),
            "B_u": chain(br),
            "B_loc": chain(br),
            "C_u": [(self.z_dim, self.n_uc)],
            "C_loc": [(self.z_dim, self.n_loc)],
            "D_u": [(self.z_dim, self.n_uc)],
            "D_loc": [(self.z_dim, self.n_loc)],
        }


@dataclass(frozen=True)
class ParamSet:
    """Named parameter tensors, ``"<group>.W<k>"`` / ``"<group>.b<k>"``.

    Treated as an immutable snapshot; :meth:`replace` returns a new one.
    """

    config: NetworkConfig
    tensors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self, groups: Iterable[str] = GROUPS) -> list[str]:
        return sorted(group_params(self, groups))

    def group(self, name: str) -> list[np.ndarray]:
        return [self.tensors[k] for k in sorted(group_params(self, {name}))]

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParamSet":
        new = dict(self.tensors)
        for k, v in updates.items():
            if k not in new:
                raise KeyError(k)
            new[k] = v
        return ParamSet(self.config, new)

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def equal(self, other: "ParamSet", groups: Iterable[str] = GROUPS) -> bool:
        """Bitwise equality over the given groups."""
        return all(np.array_equal(self.tensors[k], other.tensors[k]) for k in group_params(self, groups))


@dataclass(frozen=True)
class ForwardOutputs:
    z_u: np.ndarray
    z_loc: np.ndarray
    p_u: np.ndarray
    p_loc: np.ndarray
    d_u: np.ndarray
    d_loc: np.ndarray


def init_params(config: NetworkConfig, seed: int = 0) -> ParamSet:
    """Fan-in scaled uniform weights, zero biases. Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for group in GROUPS:
        for k, (fan_in, fan_out) in enumerate(config.layer_shapes()[group]):
            limit = np.sqrt(6.0 / fan_in)
            tensors[f"{group}.W{k}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            tensors[f"{group}.b{k}"] = np.zeros(fan_out)
    return ParamSet(config, tensors)


def group_params(params: ParamSet, groups: Iterable[str]) -> set[str]:
    groups = set(groups)
    unknown = groups - set(GROUPS)
    if unknown:
        raise KeyError(f"unknown parameter groups: {sorted(unknown)}")
    return {name for name in params.tensors if name.split(".", 1)[0] in groups}


def _mlp(g: Graph, h: int, group: str, n_layers: int, last_relu: bool) -> int:
    for k in range(n_layers):
        h = g.affine(h, g.param(f"{group}.W{k}"), g.param(f"{group}.b{k}"))
        if k < n_layers - 1 or last_relu:
            h = g.relu(h)
    return h


def build_forward(g: Graph, config: NetworkConfig, x: int) -> dict[str, int]:
    """Add the network to ``g`` on input node ``x``; returns node ids by output name."""
    shapes = config.layer_shapes()
    h = _mlp(g, x, "E", len(shapes["E"]), last_relu=True)
    z_u = _mlp(g, h, "B_u", len(shapes["B_u"]), last_relu=False)
    z_loc = _mlp(g, h, "B_loc", len(shapes["B_loc"]), last_relu=False)
    head = lambda z, grp: g.softmax(_mlp(g, z, grp, 1, last_relu=False))  # noqa: E731
    return {
        "z_u": z_u,
        "z_loc": z_loc,
        "p_u": head(z_u, "C_u"),
        "p_loc": head(z_loc, "C_loc"),
        "d_loc": head(z_u, "D_loc"),
        "d_u": head(z_loc, "D_u"),
    }


def forward(params: ParamSet, x) -> ForwardOutputs:
    """Run the network on one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (params.config.input_dim,):
        raise ValueError(f"expected trailing dimension {params.config.input_dim}, got shape {x.shape}")
    g = Graph()
    nodes = build_forward(g, params.config, g.input("x"))
    values = evaluate(g, {**params.tensors, "x": x})
    return ForwardOutputs(**{k: values[i] for k, i in nodes.items()})


def save_checkpoint(params: ParamSet, path) -> None:
    """Write an ``.npz`` archive: header, config JSON, one array per named tensor."""
    header = np.array(f"{CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}")
    cfg = np.array(json.dumps(asdict(params.config)))
    with open(path, "wb") as fh:
        np.savez(fh, __header__=header, __config__=cfg, **params.tensors)


def load_checkpoint(path) -> ParamSet:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = str(data["__header__"])
            config = NetworkConfig(**json.loads(str(data["__config__"])))
            tensors = {k: data[k].astype(np.float64) for k in data.files if not k.startswith("__")}
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header != f"{CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"unsupported checkpoint header {header!r}")
    expected = set(init_params(config, 0).tensors)
    if set(tensors) != expected:
        raise CheckpointError("checkpoint tensors do not match its network config")
    return ParamSet(config, tensors)
