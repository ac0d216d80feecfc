"""Optimizer, LR schedule, synthetic data generation, and train/eval loops.

Synthetic clips are produced by forward kinematics on the bundled
kinect25 tree: a motion class animates hinge rotations at named joints
with sinusoidal angle trajectories, then each sample gets a random
uniform subject scale, a random rotation about the vertical axis, and
additive coordinate noise. Two classes that differ only in their elbow
trajectory give a pair of actions with near-identical gross motion,
separable by angle but confusable in raw coordinates once subject size
and orientation are randomized.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .angnet import AngNet
from .core_types import Clip, SkeletonTopology, kinect25
from .encoders import encode_features
from .nn_core import ParamRegistry


class TrainingError(RuntimeError):
    """Raised when optimization hits NaNs or diverges."""


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-size recipe (base_lr 0.1, decays at
    35/45/55, 300 frames) remains expressible through the same fields."""

    base_lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 40
    decay_epochs: tuple[int, ...] = (20, 30)
    decay_factor: float = 0.1
    batch_size: int = 8
    seed: int = 0
    stream: str = "static"
    features: tuple[str, ...] = ("joint", "bone", "angular")
    # Without normalization layers the backbone's activations compound
    # over depth, and one saturated sample can emit a runaway gradient;
    # clipping the global gradient norm before each step keeps training
    # stable. None disables clipping.
    clip_norm: float | None = 5.0

    def __post_init__(self) -> None:
        self.decay_epochs = tuple(self.decay_epochs)
        self.features = tuple(self.features)
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if any(b >= a for a, b in zip(self.decay_epochs[1:], self.decay_epochs)):
            raise ValueError("decay_epochs must be strictly increasing")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (or None)")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """base_lr scaled by decay_factor once per decay epoch already reached."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.base_lr * cfg.decay_factor ** bisect_right(cfg.decay_epochs, epoch)


def sgd_step(params: ParamRegistry, lr: float, momentum: float) -> None:
    """Momentum-SGD update; gradients are consumed (zeroed) by the step.

    buffer <- momentum * buffer + grad; value <- value - lr * buffer.
    """
    for name, entry in params.items():
        grad = entry.node.grad
        if grad is not None and not np.isfinite(grad).all():
            raise TrainingError(f"NaN/Inf gradient in parameter '{name}'")
        entry.momentum *= momentum
        if grad is not None:
            entry.momentum += grad
        entry.node.value -= lr * entry.momentum
    params.zero_grads()


def clip_gradients(params: ParamRegistry, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for _, entry in params.items():
        if entry.node.grad is not None:
            total += float(np.sum(entry.node.grad ** 2))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, entry in params.items():
            if entry.node.grad is not None:
                entry.node.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# Synthetic clips via forward kinematics
# ---------------------------------------------------------------------------

# kinect25 joint indices (see schemas/kinect25.txt)
PELVIS, SPINE_MID, HEAD_BASE, HEAD = 0, 1, 2, 3
SHOULDER_L, ELBOW_L, WRIST_L, HAND_L = 4, 5, 6, 7
SHOULDER_R, ELBOW_R, WRIST_R, HAND_R = 8, 9, 10, 11
HIP_L, KNEE_L, ANKLE_L, FOOT_L = 12, 13, 14, 15
HIP_R, KNEE_R, ANKLE_R, FOOT_R = 16, 17, 18, 19
NECK = 20
HAND_TIP_L, THUMB_L, HAND_TIP_R, THUMB_R = 21, 22, 23, 24

# Rest-pose offset of each joint from its bone parent, meters. Standing
# subject, y up, x to the subject's left, z forward; arms hang down.
KINECT25_REST_OFFSETS = np.array([
    [0.00, 0.00, 0.00],    # 0 pelvis (root, absolute)
    [0.00, 0.22, 0.00],    # 1 spine_mid
    [0.00, 0.09, 0.00],    # 2 head_base
    [0.00, 0.14, 0.00],    # 3 head
    [0.19, -0.02, 0.00],   # 4 shoulder_l
    [0.03, -0.28, 0.00],   # 5 elbow_l
    [0.01, -0.25, 0.00],   # 6 wrist_l
    [0.00, -0.08, 0.01],   # 7 hand_l
    [-0.19, -0.02, 0.00],  # 8 shoulder_r
    [-0.03, -0.28, 0.00],  # 9 elbow_r
    [-0.01, -0.25, 0.00],  # 10 wrist_r
    [0.00, -0.08, 0.01],   # 11 hand_r
    [0.09, -0.06, 0.00],   # 12 hip_l
    [0.01, -0.40, 0.00],   # 13 knee_l
    [0.00, -0.38, 0.00],   # 14 ankle_l
    [0.00, -0.05, 0.13],   # 15 foot_l
    [-0.09, -0.06, 0.00],  # 16 hip_r
    [-0.01, -0.40, 0.00],  # 17 knee_r
    [0.00, -0.38, 0.00],   # 18 ankle_r
    [0.00, -0.05, 0.13],   # 19 foot_r
    [0.00, 0.22, 0.00],    # 20 neck
    [0.00, -0.07, 0.01],   # 21 hand_tip_l
    [0.04, -0.02, 0.03],   # 22 thumb_l
    [0.00, -0.07, 0.01],   # 23 hand_tip_r
    [-0.04, -0.02, 0.03],  # 24 thumb_r
])


@dataclass(frozen=True)
class JointWave:
    """Sinusoidal hinge-angle trajectory at one joint.

    theta(t) = baseline + amplitude * sin(2*pi*frequency*t/T + phase),
    where the per-sample phase is drawn by the generator. A non-None
    ``baseline_range`` replaces the fixed baseline with a per-sample
    uniform draw: class-shared pose variation that masks coordinate
    cues without touching the angle channels of other joints.
    """

    joint: int
    axis: tuple[float, float, float]
    baseline: float
    amplitude: float
    frequency: float = 1.0
    baseline_range: tuple[float, float] | None = None


@dataclass(frozen=True)
class MotionClass:
    name: str
    waves: tuple[JointWave, ...]


@dataclass
class SynthSpec:
    classes: tuple[MotionClass, ...]
    scale_range: tuple[float, float] = (0.8, 1.2)
    yaw_range: tuple[float, float] = (-math.pi, math.pi)
    noise_sigma: float = 0.01
    frames: int = 32
    persons: int = 1

    def __post_init__(self) -> None:
        self.classes = tuple(self.classes)
        if len(self.classes) < 2:
            raise ValueError("need at least 2 motion classes")
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")
        if self.frames < 1 or self.persons < 1:
            raise ValueError("frames and persons must be >= 1")


def _axis_rotation(axis: tuple[float, float, float], angle: float) -> np.ndarray:
    """Rotation matrix about a (normalized) axis, Rodrigues form."""
    ax = np.asarray(axis, dtype=np.float64)
    ax = ax / np.linalg.norm(ax)
    x, y, z = ax
    c, s = math.cos(angle), math.sin(angle)
    cross = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(ax, ax)


def _traversal_order(topology: SkeletonTopology) -> list[int]:
    children: list[list[int]] = [[] for _ in range(topology.num_joints)]
    root = 0
    for j, p in enumerate(topology.bone_parent):
        if p is None:
            root = j
        else:
            children[p].append(j)
    order = []
    queue = [root]
    while queue:
        j = queue.pop(0)
        order.append(j)
        queue.extend(children[j])
    return order


def _pose_positions(
    topology: SkeletonTopology,
    offsets: np.ndarray,
    rotations: dict[int, np.ndarray],
) -> np.ndarray:
    """Forward kinematics: accumulate rotations down the bone tree."""
    v = topology.num_joints
    pos = np.zeros((v, 3))
    acc = [np.eye(3)] * v
    for j in _traversal_order(topology):
        parent = topology.bone_parent[j]
        if parent is None:
            pos[j] = offsets[j]
        else:
            pos[j] = pos[parent] + acc[parent] @ offsets[j]
            acc[j] = acc[parent]
        if j in rotations:
            acc[j] = acc[j] @ rotations[j]
    return pos


def generate_synthetic(spec: SynthSpec, n_per_class: int, seed: int) -> list[Clip]:
    """Labeled clips, deterministic for a fixed seed.

    Per-sample draw order is scale, yaw, phase, then the noise block, so
    two specs differing only in a range still yield the same latent poses
    for the same seed.
    """
    topology = kinect25()
    rng = np.random.default_rng(seed)
    clips = []
    for label, cdef in enumerate(spec.classes):
        for _ in range(n_per_class):
            scale = rng.uniform(*spec.scale_range)
            yaw = rng.uniform(*spec.yaw_range)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            baselines = [
                wave.baseline if wave.baseline_range is None
                else rng.uniform(*wave.baseline_range)
                for wave in cdef.waves
            ]
            frames = np.empty((spec.frames, topology.num_joints, 3))
            for t in range(spec.frames):
                rotations: dict[int, np.ndarray] = {}
                for wave, baseline in zip(cdef.waves, baselines):
                    theta = baseline + wave.amplitude * math.sin(
                        2.0 * math.pi * wave.frequency * t / spec.frames + phase
                    )
                    rot = _axis_rotation(wave.axis, theta)
                    rotations[wave.joint] = (
                        rotations[wave.joint] @ rot if wave.joint in rotations else rot
                    )
                frames[t] = _pose_positions(topology, KINECT25_REST_OFFSETS, rotations)
            coords = (scale * frames) @ _axis_rotation((0.0, 1.0, 0.0), yaw).T
            coords = coords[:, :, None, :]  # single person
            if spec.persons > 1:
                pad = np.zeros((spec.frames, topology.num_joints, spec.persons - 1, 3))
                coords = np.concatenate([coords, pad], axis=2)
            coords = coords + rng.normal(0.0, spec.noise_sigma, size=coords.shape)
            clips.append(Clip(coords=coords, valid_frames=spec.frames, label=label))
    return clips


def confusable_pair_spec(
    frames: int = 32,
    noise_sigma: float = 0.01,
    scale_range: tuple[float, float] = (0.8, 1.2),
    yaw_range: tuple[float, float] = (-math.pi, math.pi),
) -> SynthSpec:
    """Two arm motions whose class definitions differ only in the elbow
    trajectory (near-straight reach vs deep curl).

    The shared shoulder swing draws its per-sample baseline from a wide
    range, so hand and wrist coordinates vary far more within a class
    than between classes; together with the random subject scale and
    orientation this leaves the elbow-angle channel as the one clean
    discriminator.
    """
    swing = JointWave(SHOULDER_R, axis=(1.0, 0.0, 0.0), baseline=0.7, amplitude=0.5,
                      baseline_range=(0.2, 1.2))
    reach = JointWave(ELBOW_R, axis=(1.0, 0.0, 0.0), baseline=0.25, amplitude=0.15)
    curl = JointWave(ELBOW_R, axis=(1.0, 0.0, 0.0), baseline=0.85, amplitude=0.35)
    return SynthSpec(
        classes=(
            MotionClass("arm-reach", (swing, reach)),
            MotionClass("arm-curl", (swing, curl)),
        ),
        scale_range=scale_range,
        yaw_range=yaw_range,
        noise_sigma=noise_sigma,
        frames=frames,
    )


def encode_dataset(
    clips: list[Clip],
    topology: SkeletonTopology,
    features: tuple[str, ...] = ("joint", "bone", "angular"),
    stream: str = "static",
) -> list[tuple[np.ndarray, int]]:
    """Encode labeled clips into (sample, label) pairs for the loops."""
    dataset = []
    for clip in clips:
        if clip.label is None:
            raise ValueError("dataset clips must be labeled")
        dataset.append((encode_features(clip, topology, features, stream).data, clip.label))
    return dataset


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------


def train(
    model: AngNet,
    dataset: list[tuple[np.ndarray, int]],
    cfg: TrainConfig,
) -> list[dict]:
    """Epochs of seeded-shuffle mini-batches with momentum SGD.

    Batch gradients are averaged, not summed, so the learning rate is
    decoupled from the batch size. Returns one record per epoch with
    epoch, lr, mean loss, and training accuracy.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    shuffle_rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = shuffle_rng.permutation(len(dataset))
        losses: list[float] = []
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            stack = np.stack([dataset[i][0] for i in batch])
            labels = np.array([dataset[i][1] for i in batch])
            loss_sum, probs = nn.softmax_cross_entropy_cols(
                model.forward_cols(stack), labels
            )
            if not np.isfinite(loss_sum.value):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            nn.backward(nn.mul_scalar(loss_sum, 1.0 / len(batch)))
            losses.extend(
                -np.log(np.maximum(probs[labels, np.arange(len(batch))], 1e-300))
            )
            correct += int(np.sum(probs.argmax(axis=0) == labels))
            if cfg.clip_norm is not None:
                clip_gradients(model.params, cfg.clip_norm)
            sgd_step(model.params, lr, cfg.momentum)
        history.append({
            "epoch": epoch,
            "lr": lr,
            "loss": float(np.mean(losses)),
            "accuracy": correct / len(dataset),
        })
    return history


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray      # accuracy per true class
    confusion: np.ndarray      # [true, predicted] counts

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]


def evaluate(
    model: AngNet, dataset: list[tuple[np.ndarray, int]], chunk: int = 32
) -> EvalResult:
    """Argmax predictions against labels; confusion[i][j] counts true-i
    samples predicted j."""
    n = model.config.num_classes
    confusion = np.zeros((n, n), dtype=np.int64)
    for start in range(0, len(dataset), chunk):
        part = dataset[start:start + chunk]
        logits = model.forward_cols(np.stack([s for s, _ in part])).value
        for (_, label), pred in zip(part, logits.argmax(axis=0)):
            confusion[label, pred] += 1
    totals = confusion.sum(axis=1)
    per_class = np.divide(
        np.diag(confusion), totals,
        out=np.zeros(n, dtype=np.float64), where=totals > 0,
    )
    return EvalResult(
        accuracy=float(np.trace(confusion) / max(1, confusion.sum())),
        per_class=per_class,
        confusion=confusion,
    )


def ensemble_probs(models: list[AngNet], sample) -> np.ndarray:
    """Arithmetic mean of the members' softmax probability vectors.

    ``sample`` is either one feature array shared by every member, or a
    sequence with one array per member (members trained on different
    feature sets see their own encoding of the same clip).
    """
    if not models:
        raise ValueError("ensemble needs at least one model")
    n = models[0].config.num_classes
    for m in models[1:]:
        if m.config.num_classes != n:
            raise ValueError("ensemble members disagree on num_classes")
    if isinstance(sample, np.ndarray):
        inputs = [sample] * len(models)
    else:
        inputs = list(sample)
        if len(inputs) != len(models):
            raise ValueError(f"{len(inputs)} inputs for {len(models)} members")
    return np.mean([m.predict_probs(x) for m, x in zip(models, inputs)], axis=0)


def ensemble_predict(models: list[AngNet], sample) -> int:
    """Argmax of the mean probabilities; ties go to the lowest class index."""
    return int(np.argmax(ensemble_probs(models, sample)))


def evaluate_ensemble(models: list[AngNet], dataset: list[tuple]) -> float:
    correct = sum(ensemble_predict(models, s) == y for s, y in dataset)
    return correct / len(dataset)
