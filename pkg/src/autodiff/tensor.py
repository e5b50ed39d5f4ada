# src/autodiff/tensor.py
"""
Rank-4 differentiable tensor and the reverse-mode graph.

Every value is a (batch, channels, height, width) array. Scalars are (1, 1, 1, 1).
Tensors reference the Function that produced them; functions reference their
inputs but never their output, so a graph is acyclic and is freed as soon as
the loss goes out of scope.

Gradients accumulate: calling backward twice without zero_grad() sums both.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ShapeError, UsageError

SCALAR_SHAPE = (1, 1, 1, 1)


class Function:
    """Base class for a differentiable op: forward on arrays, backward returns one grad per input."""

    kind = "op"

    def __init__(self, *tensors: "Tensor"):
        self.inputs = tensors

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("backward pass not implemented for this function")

    def branch(self) -> Optional[np.ndarray]:
        """Piecewise branch taken in the last forward (None for smooth ops)."""
        return None

    def context(self) -> Dict[str, Any]:
        """Saved forward state (everything but the inputs)."""
        return {k: v for k, v in vars(self).items() if k != "inputs"}

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum over the axes that were broadcast from size 1 up to grad's size."""
        if grad.shape == shape:
            return grad
        axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
        return grad.sum(axis=axes, keepdims=True)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, creator: Function = None, name: str = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(SCALAR_SHAPE)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor must be rank 4 (batch, channels, height, width), got shape {arr.shape}")
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"Tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.creator = creator
        self.name = name

    # -------------------------
    # Properties
    # -------------------------
    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def item(self) -> float:
        if self.shape != SCALAR_SHAPE:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def backward(self, graph: "Graph" = None):
        backward(self, graph)

    # -------------------------
    # Arithmetic (delegates to ops; imported lazily to keep this module free of op definitions)
    # -------------------------
    def _const(self, value) -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(np.full(SCALAR_SHAPE, value, dtype=self.dtype))

    def __add__(self, other):
        from src.autodiff import ops
        return ops.add(self, self._const(other))

    def __radd__(self, other):
        from src.autodiff import ops
        return ops.add(self._const(other), self)

    def __sub__(self, other):
        from src.autodiff import ops
        return ops.sub(self, self._const(other))

    def __rsub__(self, other):
        from src.autodiff import ops
        return ops.sub(self._const(other), self)

    def __mul__(self, other):
        from src.autodiff import ops
        return ops.mul(self, self._const(other))

    def __rmul__(self, other):
        from src.autodiff import ops
        return ops.mul(self._const(other), self)

    def __neg__(self):
        from src.autodiff import ops
        return ops.mul(self, self._const(-1.0))

    def __repr__(self):
        op = self.creator.kind if self.creator is not None else "leaf"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={op}, requires_grad={self.requires_grad})"


@dataclass
class GraphNode:
    kind: str
    input_ids: Tuple[int, ...]
    output_id: int
    fn: Function = field(repr=False)

    @property
    def saved(self) -> Dict[str, Any]:
        return self.fn.context()


class Graph:
    """Topologically ordered op nodes that produced a tensor; leaves are tensors without a creator."""

    def __init__(self, nodes: List[GraphNode], tensors: Dict[int, Tensor]):
        self.nodes = nodes
        self.tensors = tensors

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        tensors: Dict[int, Tensor] = {id(out): out}
        nodes: List[GraphNode] = []
        visited = set()
        # iterative post-order DFS; input order is preserved so the ordering is deterministic
        stack: List[Tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            tid = id(t)
            if expanded:
                fn = t.creator
                nodes.append(GraphNode(fn.kind, tuple(id(i) for i in fn.inputs), tid, fn))
                continue
            if tid in visited:
                continue
            visited.add(tid)
            tensors[tid] = t
            if t.creator is None:
                continue
            stack.append((t, True))
            for inp in reversed(t.creator.inputs):
                if id(inp) not in visited:
                    stack.append((inp, False))
        return cls(nodes, tensors)

    @property
    def leaves(self) -> List[Tensor]:
        return [t for t in self.tensors.values() if t.is_leaf]

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, graph: Graph = None):
    """Accumulate dLoss/dT into .grad of every tensor in the graph that requires grad."""
    if loss.shape != SCALAR_SHAPE:
        raise UsageError(f"backward() needs a scalar loss of shape {SCALAR_SHAPE}, got {loss.shape}")
    if graph is None:
        graph = Graph.from_output(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.get(node.output_id)
        if g is None:
            continue
        in_grads = node.fn.backward(g)
        for inp, ig in zip(node.fn.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    for key, g in grads.items():
        t = graph.tensors.get(key)
        if t is None or not t.requires_grad:
            continue
        g = g.astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


def as_tensor(value, like: Tensor = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=like.dtype if like is not None else None)
    return Tensor(arr)


def parameter(data: np.ndarray, name: str = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def stack_batch(tensors: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(t) for t in tensors], axis=0)
