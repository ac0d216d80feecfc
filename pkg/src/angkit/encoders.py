"""Joint, bone, and angular feature encoders plus stream/fusion helpers.

All encoders are pure functions of a Clip and a SkeletonTopology and are
safe to run concurrently over many clips.

The angular value at a vertex joint u with endpoint joints w1, w2 is
``1 - cos(theta)``, theta being the angle between the vectors u->w1 and
u->w2. Degenerate geometry (a vanishing vector, which includes u
coinciding with an endpoint) maps to 0, so zero-filled padded persons
never produce NaNs. The value grows monotonically with theta on [0, pi]
and is invariant to uniform scaling and rigid motion of the skeleton.
"""
from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .core_types import AngleDef, Clip, FeatureTensor, SkeletonTopology

# Vector norms below this are treated as degenerate (feature value 0).
NORM_EPS = 1e-8

JOINT_CHANNELS = ["jnt_x", "jnt_y", "jnt_z"]
BONE_CHANNELS = ["bone_x", "bone_y", "bone_z"]

FEATURE_SETS = ("joint", "bone", "angular")
STREAMS = ("static", "velocity")


def joint_features(clip: Clip) -> FeatureTensor:
    """Raw (x, y, z) coordinates of each joint, C=3."""
    return FeatureTensor(
        data=np.transpose(clip.coords, (3, 0, 1, 2)),
        channel_names=list(JOINT_CHANNELS),
    )


def bone_features(clip: Clip, topology: SkeletonTopology) -> FeatureTensor:
    """Vector from each joint to its neighbor closer to the body center.

    The root joint, having no such neighbor, gets (0, 0, 0).
    """
    parent = np.array(
        [v if p is None else p for v, p in enumerate(topology.bone_parent)]
    )
    diff = clip.coords[:, parent, :, :] - clip.coords
    return FeatureTensor(
        data=np.transpose(diff, (3, 0, 1, 2)),
        channel_names=list(BONE_CHANNELS),
    )


def static_angle(u: Sequence[float], w1: Sequence[float], w2: Sequence[float]) -> float:
    """Scalar 1 - cos(theta) at vertex u subtended by w1 and w2.

    Returns 0 for degenerate geometry: either endpoint coinciding with u,
    or either vector norm below NORM_EPS. The cosine is clamped to
    [-1, 1] before the mapping, so the result lies in [0, 2].
    """
    ux, uy, uz = float(u[0]), float(u[1]), float(u[2])
    b1 = (float(w1[0]) - ux, float(w1[1]) - uy, float(w1[2]) - uz)
    b2 = (float(w2[0]) - ux, float(w2[1]) - uy, float(w2[2]) - uz)
    n1 = math.sqrt(b1[0] * b1[0] + b1[1] * b1[1] + b1[2] * b1[2])
    n2 = math.sqrt(b2[0] * b2[0] + b2[1] * b2[1] + b2[2] * b2[2])
    if n1 < NORM_EPS or n2 < NORM_EPS:
        return 0.0
    cos = (b1[0] * b2[0] + b1[1] * b2[1] + b1[2] * b2[2]) / (n1 * n2)
    return 1.0 - max(-1.0, min(1.0, cos))


def _angle_indices(adef: AngleDef, num_joints: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-target-joint (vertex, w1, w2) index arrays for one channel.

    Joints without usable endpoints point at themselves, which the
    degenerate-geometry rule maps to 0.
    """
    targets = np.arange(num_joints)
    if adef.kind == "local":
        assert adef.adjacent_pairs is not None
        w1 = targets.copy()
        w2 = targets.copy()
        for j, pair in enumerate(adef.adjacent_pairs):
            if pair is not None:
                w1[j], w2[j] = pair
        return targets, w1, w2
    if adef.kind == "center_unfixed":
        assert adef.fixed_endpoints is not None
        neck, pelvis = adef.fixed_endpoints
        return targets, np.full(num_joints, neck), np.full(num_joints, pelvis)
    if adef.kind == "center_fixed":
        assert adef.fixed_vertex is not None and adef.fixed_endpoints is not None
        pelvis = adef.fixed_vertex
        neck = adef.fixed_endpoints[0]
        return np.full(num_joints, pelvis), np.full(num_joints, neck), targets
    # pair / finger: fixed endpoints, vertex is the target joint
    assert adef.fixed_endpoints is not None
    a, b = adef.fixed_endpoints
    return targets, np.full(num_joints, a), np.full(num_joints, b)


def angle_channel(clip: Clip, adef: AngleDef) -> np.ndarray:
    """Evaluate one angular channel over all (t, v, m); shape (T, V, M)."""
    coords = clip.coords
    vtx, w1, w2 = _angle_indices(adef, clip.num_joints)
    u = coords[:, vtx, :, :]
    b1 = coords[:, w1, :, :] - u
    b2 = coords[:, w2, :, :] - u
    n1 = np.linalg.norm(b1, axis=-1)
    n2 = np.linalg.norm(b2, axis=-1)
    ok = (n1 >= NORM_EPS) & (n2 >= NORM_EPS)
    dot = np.einsum("tvmk,tvmk->tvm", b1, b2)
    cos = np.divide(dot, n1 * n2, out=np.zeros_like(dot), where=ok)
    values = np.where(ok, 1.0 - np.clip(cos, -1.0, 1.0), 0.0)
    if adef.zero_joints:
        values[:, sorted(adef.zero_joints), :] = 0.0
    return values


def angular_features(clip: Clip, topology: SkeletonTopology) -> FeatureTensor:
    """All curated angular channels of the topology, C = 7 or 9."""
    channels = [angle_channel(clip, adef) for adef in topology.angle_table]
    return FeatureTensor(
        data=np.stack(channels, axis=0),
        channel_names=[adef.name for adef in topology.angle_table],
    )


def temporal_difference(tensor: FeatureTensor) -> FeatureTensor:
    """Frame-to-frame difference; frame 0 is defined as 0.

    Channel names get a ``vel_`` prefix, marking the velocity stream.
    """
    out = np.zeros_like(tensor.data)
    out[:, 1:] = tensor.data[:, 1:] - tensor.data[:, :-1]
    return FeatureTensor(
        data=out,
        channel_names=[f"vel_{name}" for name in tensor.channel_names],
    )


def fuse_concat(parts: Sequence[FeatureTensor]) -> FeatureTensor:
    """Stack feature tensors along the channel axis, in argument order."""
    if not parts:
        raise ValueError("fuse_concat needs at least one part")
    base = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != base:
            raise ValueError(f"(T,V,M) mismatch: {p.shape[1:]} vs {base}")
    return FeatureTensor(
        data=np.concatenate([p.data for p in parts], axis=0),
        channel_names=[name for p in parts for name in p.channel_names],
    )


def encode_features(
    clip: Clip,
    topology: SkeletonTopology,
    features: Sequence[str] = FEATURE_SETS,
    stream: str = "static",
) -> FeatureTensor:
    """Encode a clip into the selected feature sets, fused by concatenation."""
    if stream not in STREAMS:
        raise ValueError(f"unknown stream '{stream}'; choose from {STREAMS}")
    parts = []
    for name in features:
        if name == "joint":
            parts.append(joint_features(clip))
        elif name == "bone":
            parts.append(bone_features(clip, topology))
        elif name == "angular":
            parts.append(angular_features(clip, topology))
        else:
            raise ValueError(f"unknown feature set '{name}'; choose from {FEATURE_SETS}")
    fused = fuse_concat(parts)
    if stream == "velocity":
        fused = temporal_difference(fused)
    return fused
