"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Values and gradients are float64 numpy arrays of rank <= 4. Each Node
records its parents and a backward closure; ``backward`` walks the graph
in reverse topological order and accumulates gradients additively, so
fan-out just works. A computation graph belongs to one thread; parameter
nodes may be shared across successive graphs, with their gradients
accumulating until the optimizer zeroes them.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "name")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Node", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 4:
            raise ValueError(f"rank {self.value.ndim} tensors are not supported")
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    def accum_grad(self, term: np.ndarray, fresh: bool = False) -> None:
        """Add a gradient contribution.

        ``fresh=True`` promises the caller will not reuse ``term``, so it
        can be adopted directly on first write instead of copied.
        """
        if self.grad is None:
            self.grad = term if fresh else term.copy()
        else:
            self.grad += term

    def __repr__(self) -> str:
        tag = f" '{self.name}'" if self.name else ""
        return f"Node({self.op}{tag}, shape={self.value.shape})"


def constant(value: np.ndarray) -> Node:
    return Node(value, op="const")


def _require_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        a.accum_grad(g)
        b.accum_grad(g)

    return Node(a.value + b.value, (a, b), backward, "add")


def mul_scalar(a: Node, s: float) -> Node:
    def backward(g: np.ndarray) -> None:
        a.accum_grad(s * g, fresh=True)

    return Node(a.value * s, (a,), backward, "mul_scalar")


def matmul(a: Node, b: Node) -> Node:
    """2-D @ 2-D or 2-D @ 1-D matrix product."""
    if a.value.ndim != 2 or b.value.ndim not in (1, 2):
        raise ValueError(
            f"matmul: unsupported ranks {a.value.ndim} @ {b.value.ndim}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: inner dims {a.value.shape} @ {b.value.shape}")

    def backward(g: np.ndarray) -> None:
        if b.value.ndim == 1:
            a.accum_grad(np.outer(g, b.value), fresh=True)
        else:
            a.accum_grad(g @ b.value.T, fresh=True)
        b.accum_grad(a.value.T @ g, fresh=True)

    return Node(a.value @ b.value, (a, b), backward, "matmul")


def relu(a: Node) -> Node:
    out = np.maximum(a.value, 0.0)

    def backward(g: np.ndarray) -> None:
        a.accum_grad(g * (a.value > 0), fresh=True)

    return Node(out, (a,), backward, "relu")


def reshape(a: Node, shape: tuple[int, ...]) -> Node:
    old = a.value.shape

    def backward(g: np.ndarray) -> None:
        a.accum_grad(g.reshape(old))

    return Node(a.value.reshape(shape), (a,), backward, "reshape")


def slice_channels(a: Node, start: int, stop: int) -> Node:
    """Slice [start:stop] along the leading (channel) axis."""
    if not 0 <= start < stop <= a.value.shape[0]:
        raise ValueError(f"slice [{start}:{stop}] outside C={a.value.shape[0]}")

    def backward(g: np.ndarray) -> None:
        a.ensure_grad()[start:stop] += g

    return Node(a.value[start:stop].copy(), (a,), backward, "slice_channels")


def concat_channels(parts: Sequence[Node]) -> Node:
    """Concatenate along the leading (channel) axis."""
    if not parts:
        raise ValueError("concat_channels needs at least one input")
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.accum_grad(g[lo:hi])

    return Node(
        np.concatenate([p.value for p in parts], axis=0),
        tuple(parts), backward, "concat_channels",
    )


def _flatten_joint_axis(x: np.ndarray) -> np.ndarray:
    """(C,T,V,M) -> (V, C*T*M) copy, joints leading."""
    return np.ascontiguousarray(np.moveaxis(x, 2, 0)).reshape(x.shape[2], -1)


def joint_transform(a: Node, x: Node) -> Node:
    """Apply a (V,V) matrix over the joint axis of a (C,T,V,M) tensor:
    out[c,t,v,m] = sum_j a[v,j] * x[c,t,j,m]."""
    v = x.value.shape[2]
    if a.value.shape != (v, v):
        raise ValueError(f"operator shape {a.value.shape} does not match V={v}")

    def backward(g: np.ndarray) -> None:
        a.accum_grad(_flatten_joint_axis(g) @ _flatten_joint_axis(x.value).T, fresh=True)
        x.accum_grad(np.matmul(a.value.T, g), fresh=True)

    # matmul broadcasts (V,V) over the leading (C,T) axes of (C,T,V,M)
    return Node(np.matmul(a.value, x.value), (a, x), backward, "joint_transform")


def conv_1x1(x: Node, w: Node, bias: Node) -> Node:
    """Per-site linear map across channels: (C_in,T,V,M) -> (C_out,T,V,M)."""
    c_out, c_in = w.value.shape
    if x.value.shape[0] != c_in:
        raise ValueError(f"conv_1x1: input C={x.value.shape[0]}, weight expects {c_in}")
    if bias.value.shape != (c_out,):
        raise ValueError(f"conv_1x1: bias shape {bias.value.shape} != ({c_out},)")
    sites = x.value.shape[1:]
    x2 = x.value.reshape(c_in, -1)

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(c_out, -1)
        w.accum_grad(g2 @ x2.T, fresh=True)
        bias.accum_grad(g2.sum(axis=1), fresh=True)
        x.accum_grad((w.value.T @ g2).reshape(c_in, *sites), fresh=True)

    out = (w.value @ x2).reshape(c_out, *sites) + bias.value[:, None, None, None]
    return Node(out, (x, w, bias), backward, "conv_1x1")


def _pad_time(x: np.ndarray, before: int, after: int) -> np.ndarray:
    """Zero-pad along the T axis of a (C,T,V,M) array."""
    c, t, v, m = x.shape
    out = np.zeros((c, t + before + after, v, m))
    out[:, before:before + t] = x
    return out


def temporal_conv_3x1(x: Node, w: Node, dilation: int = 1) -> Node:
    """Depthwise width-3 convolution along T, zero padded, stride 1:
    out[c,t] = sum_i w[c,i] * x[c, t + (i-1)*dilation]."""
    c, t = x.value.shape[0], x.value.shape[1]
    if w.value.shape != (c, 3):
        raise ValueError(f"temporal_conv_3x1: weight shape {w.value.shape} != ({c}, 3)")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    d = dilation
    pad = _pad_time(x.value, d, d)
    taps = [pad[:, i * d:i * d + t] for i in range(3)]

    def backward(g: np.ndarray) -> None:
        dw = np.empty((c, 3))
        for i in range(3):
            dw[:, i] = (g * taps[i]).sum(axis=(1, 2, 3))
        w.accum_grad(dw, fresh=True)
        gpad = np.zeros_like(pad)
        for i in range(3):
            gpad[:, i * d:i * d + t] += w.value[:, i, None, None, None] * g
        x.accum_grad(gpad[:, d:d + t], fresh=True)

    out = w.value[:, 0, None, None, None] * taps[0]
    out += w.value[:, 1, None, None, None] * taps[1]
    out += w.value[:, 2, None, None, None] * taps[2]
    return Node(out, (x, w), backward, "temporal_conv_3x1")


def temporal_maxpool_3x1(x: Node) -> Node:
    """Sliding max over a width-3 window along T, zero padded, stride 1.

    Backward routes the gradient to the window's first maximal tap; a
    gradient landing on a padding tap (all real values negative) is
    dropped.
    """
    t = x.value.shape[1]
    pad = _pad_time(x.value, 1, 1)
    stack = np.stack([pad[:, i:i + t] for i in range(3)], axis=0)  # (3,C,T,V,M)
    argmax = stack.argmax(axis=0)

    def backward(g: np.ndarray) -> None:
        gpad = np.zeros_like(pad)
        for i in range(3):
            gpad[:, i:i + t] += np.where(argmax == i, g, 0.0)
        x.accum_grad(gpad[:, 1:1 + t], fresh=True)

    return Node(stack.max(axis=0), (x,), backward, "temporal_maxpool_3x1")


def global_avg_pool(x: Node) -> Node:
    """Mean over (T, V, M) per channel: (C,T,V,M) -> (C,)."""
    _, t, v, m = x.value.shape
    scale = 1.0 / (t * v * m)

    def backward(g: np.ndarray) -> None:
        x.accum_grad(np.broadcast_to(g[:, None, None, None] * scale, x.value.shape))

    return Node(x.value.mean(axis=(1, 2, 3)), (x,), backward, "global_avg_pool")


def sample_avg_pool(x: Node, persons: int) -> Node:
    """Per-sample global average pooling for column-batched tensors.

    The last axis of x packs B samples of ``persons`` columns each;
    output (C, B) is the mean over (T, V) and the sample's own columns,
    matching global_avg_pool applied to each sample.
    """
    c, t, v, bm = x.value.shape
    if bm % persons != 0:
        raise ValueError(f"batch axis {bm} not divisible by persons={persons}")
    b = bm // persons
    scale = 1.0 / (t * v * persons)

    def backward(g: np.ndarray) -> None:
        spread = np.repeat(g, persons, axis=1) * scale
        x.accum_grad(np.broadcast_to(spread[:, None, None, :], x.value.shape))

    out = x.value.reshape(c, t, v, b, persons).mean(axis=(1, 2, 4))
    return Node(out, (x,), backward, "sample_avg_pool")


def add_col_bias(x: Node, bias: Node) -> Node:
    """Add a per-row bias to every column of a 2-D tensor."""
    if x.value.ndim != 2 or bias.value.shape != (x.value.shape[0],):
        raise ValueError(f"add_col_bias: {x.value.shape} with bias {bias.value.shape}")

    def backward(g: np.ndarray) -> None:
        x.accum_grad(g)
        bias.accum_grad(g.sum(axis=1), fresh=True)

    return Node(x.value + bias.value[:, None], (x, bias), backward, "add_col_bias")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Shift-stabilized softmax of a 1-D array."""
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def softmax_cross_entropy(logits: Node, label: int) -> tuple[Node, np.ndarray]:
    """Scalar cross-entropy loss and the softmax probabilities."""
    n = logits.value.shape[0]
    if logits.value.ndim != 1 or n < 2:
        raise ValueError(f"logits must be 1-D with >= 2 classes, got {logits.value.shape}")
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    probs = softmax(logits.value)

    def backward(g: np.ndarray) -> None:
        logits.ensure_grad()
        delta = probs.copy()
        delta[label] -= 1.0
        logits.grad += float(g) * delta

    # log(probs[label]) computed from the shifted logits for stability
    shifted = logits.value - logits.value.max()
    loss = float(np.log(np.exp(shifted).sum()) - shifted[label])
    return Node(np.asarray(loss), (logits,), backward, "softmax_cross_entropy"), probs


def softmax_cross_entropy_cols(
    logits: Node, labels: Sequence[int]
) -> tuple[Node, np.ndarray]:
    """Summed cross-entropy over the columns of a (classes, B) tensor.

    Column b is one sample's logits with label labels[b]. Returns the
    scalar sum of the per-sample losses and the (classes, B) softmax
    probabilities; per-sample losses are recoverable as
    -log(probs[labels[b], b]).
    """
    k, b = logits.value.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ValueError(f"{labels.shape[0]} labels for batch of {b}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    shifted = logits.value - logits.value.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=0, keepdims=True)
    cols = np.arange(b)

    def backward(g: np.ndarray) -> None:
        logits.ensure_grad()
        delta = probs.copy()
        delta[labels, cols] -= 1.0
        logits.grad += float(g) * delta

    losses = np.log(exp.sum(axis=0)) - shifted[labels, cols]
    return Node(np.asarray(losses.sum()), (logits,), backward, "softmax_cross_entropy_cols"), probs


def sum_all(x: Node) -> Node:
    """Scalar sum of all entries (mainly for tests and gradient checks)."""

    def backward(g: np.ndarray) -> None:
        x.ensure_grad()
        x.grad += float(g) * np.ones_like(x.value)

    return Node(np.asarray(x.value.sum()), (x,), backward, "sum_all")


def topo_order(root: Node) -> list[Node]:
    """Parents-first topological order of the graph below ``root``.

    Iterative DFS; raises on a cycle (impossible for graphs built from
    the ops above, but guarded nonetheless).
    """
    order: list[Node] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 2
            order.append(node)
            continue
        mark = state.get(id(node))
        if mark == 2:
            continue
        if mark == 1:
            raise ValueError("cycle detected in computation graph")
        state[id(node)] = 1
        stack.append((node, True))
        for parent in node.parents:
            if state.get(id(parent)) == 1:
                raise ValueError("cycle detected in computation graph")
            if state.get(id(parent)) != 2:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate gradients of every node reachable from a scalar loss."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = topo_order(loss)
    loss.ensure_grad()
    loss.grad += np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is not None:
            node.backward_fn(node.grad if node.grad is not None else np.zeros_like(node.value))


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class ParamEntry:
    node: Node
    momentum: np.ndarray


class ParamRegistry:
    """Flat registry of named parameter tensors with momentum buffers."""

    def __init__(self) -> None:
        self._entries: dict[str, ParamEntry] = {}

    def register(self, name: str, value: np.ndarray) -> Node:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name '{name}'")
        node = Node(value, op="param", name=name)
        self._entries[name] = ParamEntry(node=node, momentum=np.zeros_like(node.value))
        return node

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> ParamEntry:
        return self._entries[name]

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def zero_grads(self) -> None:
        for entry in self._entries.values():
            if entry.node.grad is not None:
                entry.node.grad[...] = 0.0

    def num_values(self) -> int:
        return sum(e.node.value.size for e in self._entries.values())


def glorot_uniform(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int
) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
