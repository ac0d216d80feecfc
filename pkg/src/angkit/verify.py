"""Finite-difference gradient checks for every differentiable primitive
and for the full network end to end.

The numeric side only ever calls forward functions: central differences
with h = 1e-5 at 64-bit precision, so it stays independent of the
backward rules it is checking. Relative error is measured against
max(|analytic|, |numeric|, 1).
"""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .angnet import AngNet, AngNetConfig
from .core_types import SkeletonTopology, parse_schema
from .nn_core import Node

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_gradient(
    forward: Callable[[], float], value: np.ndarray, h: float = FD_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar forward wrt an array it reads."""
    grad = np.zeros_like(value)
    flat = value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = forward()
        flat[i] = orig - h
        f_minus = forward()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def check_op(
    name: str,
    build: Callable[[list[Node]], Node],
    inputs: list[np.ndarray],
    tolerance: float = 1e-4,
) -> CheckResult:
    """Compare analytic and numeric gradients of sum(build(inputs)).

    ``build`` maps leaf nodes to an output node; the scalarized loss is
    the sum of the output entries.
    """
    leaves = [Node(x.copy()) for x in inputs]
    loss = nn.sum_all(build(leaves))
    nn.backward(loss)
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)

        def forward(leaf_value: np.ndarray = leaf.value) -> float:
            cleared = [Node(l.value) for l in leaves]
            return float(nn.sum_all(build(cleared)).value)

        # numeric gradient perturbs the live leaf arrays in place
        numeric = numeric_gradient(forward, leaf.value)
        worst = max(worst, rel_error(analytic, numeric))
    return CheckResult(name=name, max_rel_error=worst, tolerance=tolerance)


def primitive_checks(seed: int = 0, tolerance: float = 1e-4) -> list[CheckResult]:
    """Gradient checks for each primitive on seeded random instances."""
    rng = np.random.default_rng(seed)
    x4 = rng.normal(size=(3, 6, 4, 2))
    results = [
        check_op("add", lambda l: nn.add(l[0], l[1]),
                 [rng.normal(size=(4, 5)), rng.normal(size=(4, 5))], tolerance),
        check_op("mul_scalar", lambda l: nn.mul_scalar(l[0], -1.7),
                 [rng.normal(size=(3, 4))], tolerance),
        check_op("matmul_2d", lambda l: nn.matmul(l[0], l[1]),
                 [rng.normal(size=(4, 3)), rng.normal(size=(3, 5))], tolerance),
        check_op("matmul_vec", lambda l: nn.matmul(l[0], l[1]),
                 [rng.normal(size=(4, 3)), rng.normal(size=3)], tolerance),
        check_op("relu", lambda l: nn.relu(l[0]),
                 [rng.normal(size=(5, 5)) + 0.05], tolerance),
        check_op("reshape", lambda l: nn.reshape(l[0], (6, 4)),
                 [rng.normal(size=(2, 3, 4))], tolerance),
        check_op("slice_channels", lambda l: nn.slice_channels(l[0], 1, 3),
                 [x4.copy()], tolerance),
        check_op("concat_channels", lambda l: nn.concat_channels(l),
                 [rng.normal(size=(2, 3, 2, 1)), rng.normal(size=(4, 3, 2, 1))], tolerance),
        check_op("joint_transform", lambda l: nn.joint_transform(l[0], l[1]),
                 [rng.normal(size=(4, 4)), rng.normal(size=(2, 3, 4, 2))], tolerance),
        check_op("conv_1x1", lambda l: nn.conv_1x1(l[0], l[1], l[2]),
                 [x4.copy(), rng.normal(size=(5, 3)), rng.normal(size=5)], tolerance),
    ]
    for d in (1, 2):
        results.append(check_op(
            f"temporal_conv_3x1_d{d}",
            lambda l, d=d: nn.temporal_conv_3x1(l[0], l[1], dilation=d),
            [x4.copy(), rng.normal(size=(3, 3))], tolerance,
        ))
    results.append(check_op(
        "temporal_maxpool_3x1", lambda l: nn.temporal_maxpool_3x1(l[0]),
        [rng.normal(size=(2, 7, 3, 1))], tolerance,
    ))
    results.append(check_op(
        "global_avg_pool", lambda l: nn.global_avg_pool(l[0]), [x4.copy()], tolerance,
    ))
    results.append(check_op(
        "softmax_cross_entropy",
        lambda l: nn.softmax_cross_entropy(l[0], 1)[0],
        [rng.normal(size=5)], tolerance,
    ))
    return results


TINY_SCHEMA = """
num_joints = 5
edges = 0-1, 1-2, 1-3, 0-4
center_pair = 1, 0
bone_parent = -1, 0, 1, 1, 0
adjacent_pairs = 0:1-4, 1:2-3
angle local
angle center_unfixed
angle center_fixed
angle pair hands
angle pair elbows
angle pair knees
angle pair feet
endpoint_pairs = hands:2-3 elbows:2-4 knees:3-4 feet:2-3
"""


def tiny_topology() -> SkeletonTopology:
    """Five-joint tree used by the small end-to-end checks."""
    return parse_schema(TINY_SCHEMA)


def tiny_config(seed: int = 0, in_channels: int = 4, num_classes: int = 2) -> AngNetConfig:
    return AngNetConfig(
        in_channels=in_channels,
        num_classes=num_classes,
        topology=tiny_topology(),
        num_scales=2,
        stb_channels=(6, 6, 6),
        tmc_dilations=(1, 2, 3, 4),
        seed=seed,
    )


def end_to_end_check(seed: int = 0, tolerance: float = 1e-3) -> CheckResult:
    """Finite-difference check of every parameter of a tiny network
    against the cross-entropy loss on a fixed 2-class batch.

    Parameters are jittered off their initial values first: a fresh
    model sits exactly on max-pool tie surfaces (zero-started branch
    layers), where one-sided subgradients and central differences
    legitimately disagree. A generic point avoids the ties without
    weakening the check.
    """
    model = AngNet(tiny_config(seed=seed))
    rng = np.random.default_rng(seed + 1000)
    for _, entry in model.params.items():
        entry.node.value[...] += rng.uniform(-0.4, 0.4, size=entry.node.value.shape)
    batch = [
        (rng.normal(size=(4, 8, 5, 1)), 0),
        (rng.normal(size=(4, 8, 5, 1)), 1),
    ]

    def total_loss() -> float:
        return sum(
            float(nn.softmax_cross_entropy(model.forward(x), y)[0].value)
            for x, y in batch
        )

    model.params.zero_grads()
    for x, y in batch:
        nn.backward(nn.softmax_cross_entropy(model.forward(x), y)[0])
    worst = 0.0
    for name, entry in model.params.items():
        analytic = entry.node.grad
        assert analytic is not None
        numeric = numeric_gradient(total_loss, entry.node.value)
        worst = max(worst, rel_error(analytic, numeric))
    model.params.zero_grads()
    return CheckResult(name=f"angnet_end_to_end_seed{seed}", max_rel_error=worst,
                       tolerance=tolerance)


def full_suite(seeds: tuple[int, ...] = (0,)) -> list[CheckResult]:
    """Primitive checks plus one end-to-end check per seed."""
    results = primitive_checks(seed=0)
    for seed in seeds:
        results.append(end_to_end_check(seed=seed))
    return results
