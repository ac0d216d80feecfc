"""Skeleton capture-file parsing, clip normalization, and tensor I/O.

Capture text format (the de-facto layout of the NTU device files):
line 1 is the frame count N; then per frame: a body count B; per body,
one header line of 10 whitespace-separated values (tracking id first,
remainder ignored), one line with the joint count J, then J lines of at
least 3 whitespace-separated reals (x y z first; remaining columns are
ignored).

Binary tensor format "ANGK1": magic ``41 4E 47 4B 31 00``; C, T, V, M as
unsigned 32-bit little-endian; a 32-bit channel-name block length and
that many bytes of newline-separated names; then C*T*V*M IEEE-754 32-bit
little-endian floats in (C,T,V,M) row-major order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .core_types import Clip, FeatureTensor, SkeletonTopology

TENSOR_MAGIC = b"ANGK1\x00"

DEFAULT_TARGET_FRAMES = 300
DEFAULT_MAX_PERSONS = 2

_BODY_HEADER_FIELDS = 10


class ParseError(ValueError):
    """Malformed capture file; message carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class TensorFormatError(ValueError):
    """Malformed ANGK1 stream."""


@dataclass
class RawBody:
    tracking_id: int
    joints: np.ndarray  # (V, 3)


@dataclass
class RawSequence:
    """Parsed capture file: per frame, a list of tracked bodies."""

    frames: list[list[RawBody]]


class _Lines:
    """Line cursor with 1-based numbering for error reporting."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what: str) -> tuple[int, str]:
        while self.pos < len(self.lines):
            self.pos += 1
            line = self.lines[self.pos - 1].strip()
            if line:
                return self.pos, line
        raise ParseError(self.pos + 1, f"file ended while reading {what}")

    def remainder_blank(self) -> bool:
        return all(not line.strip() for line in self.lines[self.pos:])


def _read_count(cursor: _Lines, what: str, minimum: int = 0) -> int:
    lineno, line = cursor.next(what)
    try:
        value = int(line)
    except ValueError:
        raise ParseError(lineno, f"expected {what}, got '{line}'") from None
    if value < minimum:
        raise ParseError(lineno, f"{what} must be >= {minimum}, got {value}")
    return value


def parse_skeleton_file(data: bytes | str, topology: SkeletonTopology) -> RawSequence:
    """Parse a skeleton capture file into a RawSequence.

    Never raises anything but ParseError on malformed input, whatever the
    bytes contain; auxiliary columns are discarded.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    cursor = _Lines(data)
    num_frames = _read_count(cursor, "frame count", minimum=1)
    frames: list[list[RawBody]] = []
    for _ in range(num_frames):
        num_bodies = _read_count(cursor, "body count", minimum=0)
        bodies = [_parse_body(cursor, topology.num_joints) for _ in range(num_bodies)]
        frames.append(bodies)
    if not cursor.remainder_blank():
        lineno, _ = cursor.next("end of file")
        raise ParseError(lineno, "trailing data after declared frames")
    return RawSequence(frames=frames)


def _parse_body(cursor: _Lines, num_joints: int) -> RawBody:
    lineno, header = cursor.next("body header")
    fields = header.split()
    if len(fields) != _BODY_HEADER_FIELDS:
        raise ParseError(
            lineno, f"body header has {len(fields)} fields, expected {_BODY_HEADER_FIELDS}"
        )
    try:
        tracking_id = int(fields[0])
    except ValueError:
        raise ParseError(lineno, f"non-integer tracking id '{fields[0]}'") from None
    joint_count = _read_count(cursor, "joint count", minimum=0)
    if joint_count != num_joints:
        raise ParseError(cursor.pos, f"body has {joint_count} joints, schema expects {num_joints}")
    joints = np.empty((num_joints, 3), dtype=np.float64)
    for j in range(num_joints):
        lineno, line = cursor.next("joint record")
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(lineno, f"joint record has {len(fields)} fields, need >= 3")
        try:
            xyz = [float(f) for f in fields[:3]]
        except ValueError:
            raise ParseError(lineno, f"non-numeric coordinate in '{line}'") from None
        if not all(np.isfinite(xyz)):
            raise ParseError(lineno, "non-finite coordinate")
        joints[j] = xyz
    return RawBody(tracking_id=tracking_id, joints=joints)


def normalize_clip(
    raw: RawSequence,
    topology: SkeletonTopology,
    target_frames: int = DEFAULT_TARGET_FRAMES,
    max_persons: int = DEFAULT_MAX_PERSONS,
) -> Clip:
    """Retain, translate, and pad a raw sequence into a fixed-size Clip.

    Up to ``max_persons`` bodies are kept per frame in ascending tracking
    id order; absent slots stay zero-filled so downstream bone vectors and
    zero-set angles vanish. All retained bodies are translated by one
    offset, chosen so the first frame's person-0 pelvis lands at the
    origin. The clip is then padded to ``target_frames`` by cyclically
    repeating the valid frames (and truncated if longer).
    """
    if not raw.frames:
        raise ValueError("cannot normalize a sequence with zero frames")
    if target_frames < 1:
        raise ValueError("target_frames must be >= 1")
    v = topology.num_joints
    valid = min(len(raw.frames), target_frames)
    coords = np.zeros((valid, v, max_persons, 3), dtype=np.float64)
    present = np.zeros((valid, max_persons), dtype=bool)
    for t, bodies in enumerate(raw.frames[:valid]):
        for m, body in enumerate(sorted(bodies, key=lambda b: b.tracking_id)[:max_persons]):
            coords[t, :, m, :] = body.joints
            present[t, m] = True

    offset = coords[0, topology.pelvis, 0, :].copy()
    for t in range(valid):
        for m in range(max_persons):
            if present[t, m]:
                coords[t, :, m, :] -= offset

    reps = np.arange(target_frames) % valid
    return Clip(coords=coords[reps], valid_frames=valid)


# ---------------------------------------------------------------------------
# ANGK1 tensor format
# ---------------------------------------------------------------------------


def write_tensor(tensor: FeatureTensor, sink: BinaryIO) -> int:
    """Serialize a FeatureTensor; returns the number of bytes written.

    Data is stored as 32-bit floats; this is the only place precision is
    reduced from the 64-bit in-memory representation.
    """
    c, t, v, m = tensor.shape
    if min(c, t, v, m) < 1:
        raise TensorFormatError(f"all dims must be >= 1, got {tensor.shape}")
    for name in tensor.channel_names:
        if "\n" in name:
            raise TensorFormatError(f"channel name {name!r} contains a newline")
    names = "\n".join(tensor.channel_names).encode("utf-8")
    payload = tensor.data.astype("<f4").tobytes()
    blob = b"".join([
        TENSOR_MAGIC,
        struct.pack("<4I", c, t, v, m),
        struct.pack("<I", len(names)),
        names,
        payload,
    ])
    sink.write(blob)
    return len(blob)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise TensorFormatError(f"truncated stream while reading {what}")
    return data


def read_tensor(source: BinaryIO) -> FeatureTensor:
    """Read one ANGK1 tensor from a binary stream."""
    magic = source.read(len(TENSOR_MAGIC))
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    c, t, v, m = struct.unpack("<4I", _read_exact(source, 16, "dimensions"))
    if min(c, t, v, m) < 1:
        raise TensorFormatError(f"zero dimension in shape ({c},{t},{v},{m})")
    (name_len,) = struct.unpack("<I", _read_exact(source, 4, "name block length"))
    try:
        names = _read_exact(source, name_len, "channel names").decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise TensorFormatError(f"channel-name block is not UTF-8: {exc}") from None
    if len(names) != c:
        raise TensorFormatError(f"{len(names)} channel names for C={c}")
    count = c * t * v * m
    payload = _read_exact(source, 4 * count, "payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(c, t, v, m)
    return FeatureTensor(data=data, channel_names=names)


def clip_to_tensor(clip: Clip) -> FeatureTensor:
    """Coordinate tensor (C=3, channels jnt_x/y/z) for archiving a clip."""
    return FeatureTensor(
        data=np.transpose(clip.coords, (3, 0, 1, 2)),
        channel_names=["jnt_x", "jnt_y", "jnt_z"],
    )


def tensor_to_clip(tensor: FeatureTensor, valid_frames: int, label: int | None = None) -> Clip:
    """Inverse of clip_to_tensor."""
    if tensor.shape[0] != 3:
        raise TensorFormatError(f"coordinate tensor must have C=3, got {tensor.shape[0]}")
    return Clip(
        coords=np.transpose(tensor.data, (1, 2, 3, 0)),
        valid_frames=valid_frames,
        label=label,
    )
