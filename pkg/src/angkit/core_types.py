"""Core data types: skeleton schemas, clips, and dense feature tensors.

A skeleton schema is data, not code: it is loaded from a small key/value
text file (see ``load_schema``) so alternate skeletons need no rebuild.
The bundled ``kinect25`` schema matches the 25-joint Kinect V2 capture
device used by the NTU recordings.

Schema file grammar (one statement per line, ``#`` starts a comment):

    num_joints = 25
    edges = 0-1, 1-20, ...            # unordered joint pairs (bones)
    center_pair = 20, 0               # neck index, pelvis index
    bone_parent = -1, 0, 20, ...      # per joint; -1 marks the tree root
    endpoint_pairs = hands:7-11 elbows:5-9 knees:13-17 feet:15-19
    finger_pairs = left:21-22 right:23-24      # optional; (hand tip, thumb)
    adjacent_pairs = 0:12-16, 1:0-20, ...      # local-angle endpoint table
    angle local                       # angle-table entries, in channel order
    angle center_unfixed
    angle center_fixed
    angle pair hands
    angle finger left

Zero-sets for each angle channel are derived from the statement: joints
missing from ``adjacent_pairs`` for ``local``, the two center joints for
the ``center_*`` kinds, and the two endpoints for ``pair``/``finger``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

ANGLE_KINDS = ("local", "center_unfixed", "center_fixed", "pair", "finger")

PAIR_NAMES = ("hands", "elbows", "knees", "feet")
FINGER_NAMES = ("left", "right")


class SchemaError(ValueError):
    """Raised when a skeleton schema file or topology is invalid."""


@dataclass(frozen=True)
class AngleDef:
    """One angular channel: vertex rule, endpoint rule, and zero-set.

    ``fixed_vertex is None`` means the vertex is the target joint itself;
    ``fixed_endpoints is None`` means the endpoints come from the kind
    (the per-joint adjacent-pair table for ``local``, the center pair for
    ``center_unfixed``, neck + target for ``center_fixed``).
    """

    name: str
    kind: str
    fixed_vertex: int | None = None
    fixed_endpoints: tuple[int, int] | None = None
    adjacent_pairs: tuple[tuple[int, int] | None, ...] | None = None
    zero_joints: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.kind not in ANGLE_KINDS:
            raise SchemaError(f"unknown angle kind '{self.kind}'")
        if self.kind == "local" and self.adjacent_pairs is None:
            raise SchemaError("local angle requires an adjacent-pair table")


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint count, bone tree, and curated angle definitions for a skeleton.

    Immutable after construction; safe to share across threads.
    """

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    center_pair: tuple[int, int]  # (neck, pelvis)
    bone_parent: tuple[int | None, ...]
    angle_table: tuple[AngleDef, ...]
    endpoint_pairs: tuple[tuple[int, int], ...]
    finger_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        v = self.num_joints
        if v < 1:
            raise SchemaError("num_joints must be >= 1")
        for i, j in self.edges:
            if not (0 <= i < v and 0 <= j < v):
                raise SchemaError(f"edge ({i},{j}) out of range for {v} joints")
            if i == j:
                raise SchemaError(f"self-edge at joint {i}")
        if len(self.edges) != v - 1:
            raise SchemaError(
                f"{len(self.edges)} edges cannot form a tree over {v} joints"
            )
        if not self._connected():
            raise SchemaError("edge list is not connected")
        roots = [j for j, p in enumerate(self.bone_parent) if p is None]
        if len(self.bone_parent) != v or len(roots) != 1:
            raise SchemaError("bone_parent must mark exactly one root")
        neighbors = self.neighbor_sets()
        for j, p in enumerate(self.bone_parent):
            if p is not None and p not in neighbors[j]:
                raise SchemaError(f"bone_parent[{j}]={p} is not a tree neighbor")
        for pair in self.center_pair, *self.endpoint_pairs, *self.finger_pairs:
            for j in pair:
                if not 0 <= j < v:
                    raise SchemaError(f"joint index {j} out of range")
        expected = 9 if self.finger_pairs else 7
        if len(self.angle_table) != expected:
            raise SchemaError(
                f"angle table has {len(self.angle_table)} entries, expected {expected}"
            )
        for adef in self.angle_table:
            if adef.kind == "local":
                self._check_local(adef, neighbors)

    def _check_local(self, adef: AngleDef, neighbors: list[set[int]]) -> None:
        assert adef.adjacent_pairs is not None
        if len(adef.adjacent_pairs) != self.num_joints:
            raise SchemaError("adjacent-pair table must cover every joint")
        for j, pair in enumerate(adef.adjacent_pairs):
            if pair is None:
                if j not in adef.zero_joints:
                    raise SchemaError(f"joint {j} has no local pair but is not zeroed")
                continue
            w1, w2 = pair
            if w1 not in neighbors[j] or w2 not in neighbors[j]:
                raise SchemaError(
                    f"local pair {pair} for joint {j} must use tree neighbors"
                )

    def _connected(self) -> bool:
        seen = {0}
        stack = [0]
        adj = self.neighbor_sets()
        while stack:
            for n in adj[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == self.num_joints

    def neighbor_sets(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.num_joints)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    @property
    def neck(self) -> int:
        return self.center_pair[0]

    @property
    def pelvis(self) -> int:
        return self.center_pair[1]

    def to_dict(self) -> dict:
        """Plain-data form, used by checkpoint serialization."""
        return {
            "num_joints": self.num_joints,
            "edges": [list(e) for e in self.edges],
            "center_pair": list(self.center_pair),
            "bone_parent": [-1 if p is None else p for p in self.bone_parent],
            "endpoint_pairs": [list(p) for p in self.endpoint_pairs],
            "finger_pairs": [list(p) for p in self.finger_pairs],
            "angle_table": [
                {
                    "name": a.name,
                    "kind": a.kind,
                    "fixed_vertex": a.fixed_vertex,
                    "fixed_endpoints": None
                    if a.fixed_endpoints is None
                    else list(a.fixed_endpoints),
                    "adjacent_pairs": None
                    if a.adjacent_pairs is None
                    else [None if p is None else list(p) for p in a.adjacent_pairs],
                    "zero_joints": sorted(a.zero_joints),
                }
                for a in self.angle_table
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "SkeletonTopology":
        table = tuple(
            AngleDef(
                name=a["name"],
                kind=a["kind"],
                fixed_vertex=a["fixed_vertex"],
                fixed_endpoints=None
                if a["fixed_endpoints"] is None
                else tuple(a["fixed_endpoints"]),
                adjacent_pairs=None
                if a["adjacent_pairs"] is None
                else tuple(None if p is None else tuple(p) for p in a["adjacent_pairs"]),
                zero_joints=frozenset(a["zero_joints"]),
            )
            for a in d["angle_table"]
        )
        return SkeletonTopology(
            num_joints=d["num_joints"],
            edges=tuple(tuple(e) for e in d["edges"]),
            center_pair=tuple(d["center_pair"]),
            bone_parent=tuple(None if p < 0 else p for p in d["bone_parent"]),
            angle_table=table,
            endpoint_pairs=tuple(tuple(p) for p in d["endpoint_pairs"]),
            finger_pairs=tuple(tuple(p) for p in d["finger_pairs"]),
        )


@dataclass
class Clip:
    """One action instance: per-frame, per-person 3D joint coordinates.

    ``coords`` has shape (T, V, M, 3) in meters. ``valid_frames`` counts
    the non-padded leading frames. Treated as immutable after construction.
    """

    coords: np.ndarray
    valid_frames: int
    label: int | None = None

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 4 or self.coords.shape[-1] != 3:
            raise ValueError(f"coords must be (T,V,M,3), got {self.coords.shape}")
        if not 1 <= self.valid_frames <= self.coords.shape[0]:
            raise ValueError(
                f"valid_frames={self.valid_frames} outside 1..{self.coords.shape[0]}"
            )
        if not np.isfinite(self.coords).all():
            raise ValueError("clip coordinates contain NaN/Inf")

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def num_joints(self) -> int:
        return self.coords.shape[1]

    @property
    def persons(self) -> int:
        return self.coords.shape[2]


@dataclass
class FeatureTensor:
    """Dense rank-4 feature array, layout (C, T, V, M), C outermost.

    Row-major with channels outermost, so one channel is a contiguous
    block and encoders can write channel-at-a-time.
    """

    data: np.ndarray
    channel_names: list[str]

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ValueError(f"feature tensor must be rank 4, got {self.data.shape}")
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.channel_names)} channel names for C={self.data.shape[0]}"
            )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise KeyError(f"no channel '{name}'; have {self.channel_names}") from None


def flatten_index(
    shape: tuple[int, int, int, int], c: int, t: int, v: int, m: int
) -> int:
    """Linear index of (c,t,v,m) in the C-outermost row-major layout."""
    C, T, V, M = shape
    for idx, dim, label in ((c, C, "c"), (t, T, "t"), (v, V, "v"), (m, M, "m")):
        if not 0 <= idx < dim:
            raise IndexError(f"{label}={idx} out of range for dim {dim}")
    return ((c * T + t) * V + v) * M + m


# ---------------------------------------------------------------------------
# Schema file parsing
# ---------------------------------------------------------------------------


def _parse_pair(token: str, where: str) -> tuple[int, int]:
    parts = token.split("-")
    if len(parts) != 2:
        raise SchemaError(f"{where}: expected 'a-b' pair, got '{token}'")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise SchemaError(f"{where}: non-integer pair '{token}'") from None


def _parse_named_pairs(value: str, where: str) -> dict[str, tuple[int, int]]:
    out: dict[str, tuple[int, int]] = {}
    for token in value.replace(",", " ").split():
        if ":" not in token:
            raise SchemaError(f"{where}: expected 'name:a-b', got '{token}'")
        name, pair = token.split(":", 1)
        out[name] = _parse_pair(pair, where)
    return out


def parse_schema(text: str) -> SkeletonTopology:
    """Parse the schema grammar documented in the module docstring."""
    keys: dict[str, str] = {}
    angle_lines: list[tuple[str, str | None]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("angle "):
            parts = line.split()
            if len(parts) not in (2, 3):
                raise SchemaError(f"line {lineno}: malformed angle statement '{line}'")
            angle_lines.append((parts[1], parts[2] if len(parts) == 3 else None))
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in keys:
            raise SchemaError(f"line {lineno}: duplicate key '{key}'")
        keys[key] = value

    for required in ("num_joints", "edges", "center_pair", "bone_parent"):
        if required not in keys:
            raise SchemaError(f"schema is missing '{required}'")

    try:
        num_joints = int(keys["num_joints"])
    except ValueError:
        raise SchemaError("num_joints must be an integer") from None
    edges = tuple(
        _parse_pair(tok, "edges") for tok in keys["edges"].replace(",", " ").split()
    )
    cp = keys["center_pair"].replace(",", " ").split()
    if len(cp) != 2:
        raise SchemaError("center_pair must list two joint indices")
    center_pair = (int(cp[0]), int(cp[1]))
    try:
        bone_parent = tuple(
            None if int(tok) < 0 else int(tok)
            for tok in keys["bone_parent"].replace(",", " ").split()
        )
    except ValueError:
        raise SchemaError("bone_parent must be a list of integers") from None

    endpoint_named = _parse_named_pairs(keys.get("endpoint_pairs", ""), "endpoint_pairs")
    if endpoint_named and tuple(endpoint_named) != PAIR_NAMES:
        raise SchemaError(f"endpoint_pairs must name {PAIR_NAMES} in order")
    finger_named = _parse_named_pairs(keys.get("finger_pairs", ""), "finger_pairs")
    if finger_named and tuple(finger_named) != FINGER_NAMES:
        raise SchemaError(f"finger_pairs must name {FINGER_NAMES} in order")

    adjacent: dict[int, tuple[int, int]] = {}
    if "adjacent_pairs" in keys:
        for joint, pair in _parse_named_pairs(keys["adjacent_pairs"], "adjacent_pairs").items():
            adjacent[int(joint)] = pair

    table = tuple(
        _build_angle_def(kind, arg, num_joints, center_pair, endpoint_named,
                         finger_named, adjacent)
        for kind, arg in angle_lines
    )
    return SkeletonTopology(
        num_joints=num_joints,
        edges=edges,
        center_pair=center_pair,
        bone_parent=bone_parent,
        angle_table=table,
        endpoint_pairs=tuple(endpoint_named.values()),
        finger_pairs=tuple(finger_named.values()),
    )


def _build_angle_def(
    kind: str,
    arg: str | None,
    num_joints: int,
    center_pair: tuple[int, int],
    endpoint_named: dict[str, tuple[int, int]],
    finger_named: dict[str, tuple[int, int]],
    adjacent: dict[int, tuple[int, int]],
) -> AngleDef:
    neck, pelvis = center_pair
    if kind == "local":
        pairs = tuple(adjacent.get(j) for j in range(num_joints))
        zero = frozenset(j for j in range(num_joints) if j not in adjacent)
        return AngleDef("ang_local", "local", adjacent_pairs=pairs, zero_joints=zero)
    if kind == "center_unfixed":
        return AngleDef(
            "ang_ctr_unfixed", kind,
            fixed_endpoints=(neck, pelvis), zero_joints=frozenset({neck, pelvis}),
        )
    if kind == "center_fixed":
        return AngleDef(
            "ang_ctr_fixed", kind,
            fixed_vertex=pelvis, fixed_endpoints=(neck, pelvis),
            zero_joints=frozenset({neck, pelvis}),
        )
    if kind == "pair":
        if arg not in endpoint_named:
            raise SchemaError(f"pair angle needs one of {sorted(endpoint_named)}, got '{arg}'")
        pair = endpoint_named[arg]
        return AngleDef(
            f"ang_pair_{arg}", kind,
            fixed_endpoints=pair, zero_joints=frozenset(pair),
        )
    if kind == "finger":
        if arg not in finger_named:
            raise SchemaError(f"finger angle needs one of {sorted(finger_named)}, got '{arg}'")
        pair = finger_named[arg]
        return AngleDef(
            f"ang_finger_{arg}", kind,
            fixed_endpoints=pair, zero_joints=frozenset(pair),
        )
    raise SchemaError(f"unknown angle kind '{kind}'")


def load_schema(path: str | Path) -> SkeletonTopology:
    """Load a skeleton schema from a text file."""
    return parse_schema(Path(path).read_text(encoding="utf-8"))


_KINECT25: SkeletonTopology | None = None


def kinect25() -> SkeletonTopology:
    """The bundled 25-joint Kinect V2 / NTU skeleton schema."""
    global _KINECT25
    if _KINECT25 is None:
        text = resources.files("angkit").joinpath("schemas/kinect25.txt").read_text("utf-8")
        _KINECT25 = parse_schema(text)
    return _KINECT25
