"""The classification backbone: three spatial-temporal blocks and a head.

Each block is one spatial multiscale graph convolution (SMGC) followed by
three temporal multiscale convolution (TMC) units. The SMGC runs K
parallel branches; branch k applies (row-normalized k-hop reachability +
learnable mask) over the joint axis, then a 1x1 channel map; branch
outputs are summed and passed through relu. The TMC concatenates six
branches of C_out/6 channels each — four 1x1+dilated depthwise 3x1
convolutions, one plain 1x1, one 1x1+3x1 max-pool — and adds a residual
path (identity, or a 1x1 projection when widths differ) before a final
relu. The head is global average pooling and a fully connected layer;
softmax lives at the loss/prediction boundary so raw logits stay
available for ensembling.

The K learnable masks are shared by the three blocks: each mask belongs
to its GraphOperator, of which the model owns a single set.

Checkpoint format "ANGM1": magic ``41 4E 47 4D 31 00``, version u32, a
length-prefixed config JSON block (including the skeleton schema), a
length-prefixed metadata JSON block, then one section per parameter in
registry order: name (u32 length + UTF-8), rank u32, dims u32 each, the
value and its momentum buffer as float64 little-endian. Unlike ANGK1
feature files, parameters are stored at full 64-bit precision so resuming
from a checkpoint is bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from . import nn_core as nn
from .core_types import SkeletonTopology
from .graph_ops import GraphOperator, build_operators
from .nn_core import Node, ParamRegistry

CHECKPOINT_MAGIC = b"ANGM1\x00"
CHECKPOINT_VERSION = 1

TMC_BRANCHES = 6  # four dilated + one 1x1 + one max-pool


class CheckpointError(ValueError):
    """Malformed ANGM1 checkpoint stream."""


@dataclass
class AngNetConfig:
    in_channels: int
    num_classes: int
    topology: SkeletonTopology
    num_scales: int = 4
    stb_channels: tuple[int, int, int] = (24, 48, 96)
    tmc_dilations: tuple[int, int, int, int] = (1, 2, 3, 4)
    seed: int = 0

    def __post_init__(self) -> None:
        self.stb_channels = tuple(self.stb_channels)
        self.tmc_dilations = tuple(self.tmc_dilations)
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.stb_channels) != 3:
            raise ValueError("stb_channels must list three widths")
        for width in self.stb_channels:
            if width % TMC_BRANCHES != 0:
                raise ValueError(f"channel width {width} not divisible by {TMC_BRANCHES}")
        if len(self.tmc_dilations) != 4 or len(set(self.tmc_dilations)) != 4:
            raise ValueError("tmc_dilations must be four distinct values")
        if min(self.tmc_dilations) < 1:
            raise ValueError("dilations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "num_scales": self.num_scales,
            "stb_channels": list(self.stb_channels),
            "tmc_dilations": list(self.tmc_dilations),
            "seed": self.seed,
            "topology": self.topology.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "AngNetConfig":
        return AngNetConfig(
            in_channels=d["in_channels"],
            num_classes=d["num_classes"],
            topology=SkeletonTopology.from_dict(d["topology"]),
            num_scales=d["num_scales"],
            stb_channels=tuple(d["stb_channels"]),
            tmc_dilations=tuple(d["tmc_dilations"]),
            seed=d["seed"],
        )


class SMGCUnit:
    """Spatial multiscale graph convolution over shared graph operators."""

    def __init__(
        self,
        registry: ParamRegistry,
        name: str,
        in_channels: int,
        out_channels: int,
        operators: list[GraphOperator],
        masks: list[Node],
        rng: np.random.Generator,
    ):
        self.operators = operators
        self.masks = masks
        self.weights = []
        self.biases = []
        for k in range(len(operators)):
            w = registry.register(
                f"{name}.scale{k}.w",
                nn.glorot_uniform(rng, (out_channels, in_channels), in_channels, out_channels),
            )
            b = registry.register(f"{name}.scale{k}.b", np.zeros(out_channels))
            self.weights.append(w)
            self.biases.append(b)

    def forward(self, x: Node) -> Node:
        out = None
        for op, mask, w, b in zip(self.operators, self.masks, self.weights, self.biases):
            effective = nn.add(nn.constant(op.normalized), mask)
            h = nn.conv_1x1(nn.joint_transform(effective, x), w, b)
            out = h if out is None else nn.add(out, h)
        return nn.relu(out)


class TMCUnit:
    """Temporal multiscale convolution: six branches, residual, relu.

    The final weight tensor of every branch starts at zero, so a fresh
    unit is the identity on non-negative input: with no normalization
    layers in the backbone, letting the branch signal grow from zero is
    what keeps a 12-unit stack of additive residuals from blowing up the
    activation scale (the branch convolutions themselves keep the usual
    uniform fan-based init and start learning as soon as the zero layers
    move off zero).
    """

    def __init__(
        self,
        registry: ParamRegistry,
        name: str,
        in_channels: int,
        out_channels: int,
        dilations: tuple[int, ...],
        rng: np.random.Generator,
    ):
        if out_channels % TMC_BRANCHES != 0:
            raise ValueError(f"out_channels {out_channels} not divisible by {TMC_BRANCHES}")
        slim = out_channels // TMC_BRANCHES
        self.dilations = dilations
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.branch_w = []
        self.branch_b = []
        for i in range(TMC_BRANCHES):
            if i >= len(dilations):
                init = np.zeros((slim, in_channels))  # branch output layer
            else:
                init = nn.glorot_uniform(rng, (slim, in_channels), in_channels, slim)
            self.branch_w.append(registry.register(f"{name}.branch{i}.w", init))
            self.branch_b.append(registry.register(f"{name}.branch{i}.b", np.zeros(slim)))
        self.temporal_w = [
            registry.register(f"{name}.branch{i}.wt", np.zeros((slim, 3)))
            for i in range(len(dilations))
        ]
        if in_channels != out_channels:
            self.res_w = registry.register(
                f"{name}.res.w",
                nn.glorot_uniform(rng, (out_channels, in_channels), in_channels, out_channels),
            )
            self.res_b = registry.register(f"{name}.res.b", np.zeros(out_channels))
        else:
            self.res_w = None
            self.res_b = None

    def forward(self, x: Node) -> Node:
        branches = []
        for i, d in enumerate(self.dilations):
            h = nn.conv_1x1(x, self.branch_w[i], self.branch_b[i])
            branches.append(nn.temporal_conv_3x1(h, self.temporal_w[i], dilation=d))
        k = len(self.dilations)
        branches.append(nn.conv_1x1(x, self.branch_w[k], self.branch_b[k]))
        pooled = nn.conv_1x1(x, self.branch_w[k + 1], self.branch_b[k + 1])
        branches.append(nn.temporal_maxpool_3x1(pooled))
        out = nn.concat_channels(branches)
        residual = x if self.res_w is None else nn.conv_1x1(x, self.res_w, self.res_b)
        return nn.relu(nn.add(out, residual))


class AngNet:
    """Three STBs (SMGC + 3 TMC each), global average pooling, FC head."""

    def __init__(self, config: AngNetConfig):
        self.config = config
        self.params = ParamRegistry()
        self.operators = build_operators(config.topology, config.num_scales)
        rng = np.random.default_rng(config.seed)

        self.masks = []
        for k, op in enumerate(self.operators):
            node = self.params.register(f"graph.mask{k}", op.mask)
            op.mask = node.value  # optimizer updates flow back to the operator
            self.masks.append(node)

        self.layers: list[SMGCUnit | TMCUnit] = []
        c_in = config.in_channels
        for i, c_out in enumerate(config.stb_channels):
            self.layers.append(SMGCUnit(
                self.params, f"stb{i}.smgc", c_in, c_out,
                self.operators, self.masks, rng,
            ))
            for j in range(3):
                self.layers.append(TMCUnit(
                    self.params, f"stb{i}.tmc{j}", c_out, c_out,
                    config.tmc_dilations, rng,
                ))
            c_in = c_out

        self.head_w = self.params.register(
            "head.w",
            nn.glorot_uniform(rng, (config.num_classes, c_in), c_in, config.num_classes),
        )
        self.head_b = self.params.register("head.b", np.zeros(config.num_classes))

    def forward(self, features: np.ndarray) -> Node:
        """Logits for one sample of shape (C, T, V, M)."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 4:
            raise ValueError(f"expected a (C,T,V,M) sample, got shape {features.shape}")
        if features.shape[0] != self.config.in_channels:
            raise ValueError(
                f"channel mismatch: expected C={self.config.in_channels}, "
                f"got C={features.shape[0]}"
            )
        if features.shape[2] != self.config.topology.num_joints:
            raise ValueError(
                f"joint-count mismatch: expected V={self.config.topology.num_joints}, "
                f"got V={features.shape[2]}"
            )
        x = nn.constant(features)
        for layer in self.layers:
            x = layer.forward(x)
        return nn.add(nn.matmul(self.head_w, nn.global_avg_pool(x)), self.head_b)

    def forward_cols(self, batch: np.ndarray) -> Node:
        """Column-batched logits for a (B, C, T, V, M) stack of samples.

        Samples ride the person axis, which every layer op broadcasts
        over, so one graph serves the whole batch; returns (num_classes,
        B) logits equal to per-sample ``forward`` up to float rounding.
        """
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 5:
            raise ValueError(f"expected a (B,C,T,V,M) batch, got shape {batch.shape}")
        b, c, t, v, m = batch.shape
        if c != self.config.in_channels:
            raise ValueError(
                f"channel mismatch: expected C={self.config.in_channels}, got C={c}"
            )
        cols = np.moveaxis(batch, 0, 3).reshape(c, t, v, b * m)
        x = nn.constant(cols)
        for layer in self.layers:
            x = layer.forward(x)
        pooled = nn.sample_avg_pool(x, persons=m)
        return nn.add_col_bias(nn.matmul(self.head_w, pooled), self.head_b)

    def predict_probs(self, features: np.ndarray) -> np.ndarray:
        return nn.softmax(self.forward(features).value)

    def predict(self, features: np.ndarray) -> int:
        return int(np.argmax(self.predict_probs(features)))

    def num_params(self) -> int:
        return self.params.num_values()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class CheckpointMeta:
    epoch: int = 0
    seed: int = 0
    history: list[dict] = field(default_factory=list)


def _write_block(sink: BinaryIO, payload: bytes) -> None:
    sink.write(struct.pack("<I", len(payload)))
    sink.write(payload)


def _read_block(source: BinaryIO, what: str) -> bytes:
    raw = source.read(4)
    if len(raw) != 4:
        raise CheckpointError(f"truncated stream while reading {what} length")
    (n,) = struct.unpack("<I", raw)
    payload = source.read(n)
    if len(payload) != n:
        raise CheckpointError(f"truncated stream while reading {what}")
    return payload


def save_checkpoint(model: AngNet, path: str | Path, meta: CheckpointMeta | None = None) -> None:
    meta = meta or CheckpointMeta(seed=model.config.seed)
    with open(path, "wb") as sink:
        sink.write(CHECKPOINT_MAGIC)
        sink.write(struct.pack("<I", CHECKPOINT_VERSION))
        _write_block(sink, json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8"))
        meta_doc = {"epoch": meta.epoch, "seed": meta.seed, "history": meta.history}
        _write_block(sink, json.dumps(meta_doc, sort_keys=True).encode("utf-8"))
        sink.write(struct.pack("<I", len(model.params)))
        for name, entry in model.params.items():
            _write_block(sink, name.encode("utf-8"))
            value = entry.node.value
            sink.write(struct.pack("<I", value.ndim))
            sink.write(struct.pack(f"<{value.ndim}I", *value.shape))
            sink.write(value.astype("<f8").tobytes())
            sink.write(entry.momentum.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[AngNet, CheckpointMeta]:
    """Rebuild the model and restore every parameter and momentum buffer."""
    with open(path, "rb") as source:
        magic = source.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        raw = source.read(4)
        if len(raw) != 4:
            raise CheckpointError("truncated stream while reading version")
        (version,) = struct.unpack("<I", raw)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported version {version}")
        try:
            config = AngNetConfig.from_dict(json.loads(_read_block(source, "config")))
            meta_doc = json.loads(_read_block(source, "metadata"))
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"malformed header block: {exc}") from None
        meta = CheckpointMeta(
            epoch=meta_doc["epoch"], seed=meta_doc["seed"], history=meta_doc["history"]
        )
        model = AngNet(config)
        raw = source.read(4)
        if len(raw) != 4:
            raise CheckpointError("truncated stream while reading parameter count")
        (count,) = struct.unpack("<I", raw)
        if count != len(model.params):
            raise CheckpointError(
                f"checkpoint has {count} parameters, model expects {len(model.params)}"
            )
        for _ in range(count):
            name = _read_block(source, "parameter name").decode("utf-8")
            if name not in model.params:
                raise CheckpointError(f"unknown parameter '{name}'")
            entry = model.params[name]
            raw = source.read(4)
            if len(raw) != 4:
                raise CheckpointError("truncated stream while reading rank")
            (ndim,) = struct.unpack("<I", raw)
            raw = source.read(4 * ndim)
            if len(raw) != 4 * ndim:
                raise CheckpointError("truncated stream while reading dims")
            shape = struct.unpack(f"<{ndim}I", raw)
            if shape != entry.node.value.shape:
                raise CheckpointError(
                    f"shape mismatch for '{name}': {shape} vs {entry.node.value.shape}"
                )
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            for target in (entry.node.value, entry.momentum):
                payload = source.read(nbytes)
                if len(payload) != nbytes:
                    raise CheckpointError(f"truncated payload for '{name}'")
                target[...] = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return model, meta
