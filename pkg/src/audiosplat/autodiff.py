"""Recorded-computation reverse-mode differentiation over dense numpy arrays.

Every trainable path in the package is expressed through the `Tensor` ops in
this module.  A forward pass builds a tape (each Tensor remembers its parent
Tensors and a backward closure); `Tensor.backward()` walks the tape in reverse
topological order and accumulates gradients into every reachable leaf with
`requires_grad=True`.

Conventions:
  * arrays are row-major float arrays; tests run at float64, trained models
    may store parameters at float32 (compute promotes to the widest dtype),
  * softmax subtracts the row max before exponentiating, so symmetric inputs
    produce exact results,
  * `backward()` is only defined for scalar outputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ParameterStore",
    "ShapeError",
    "constant",
    "concat",
    "stack",
    "gather_rows",
    "filter2d_valid",
    "finite_diff",
    "set_grad_fault",
]

# Test hook: when set to an op name, that op's input gradient is scaled by
# GRAD_FAULT_SCALE during backward.  Used to prove the verification suites
# actually detect a broken analytic gradient.
_GRAD_FAULT_OP: str | None = None
GRAD_FAULT_SCALE = 1.001


def set_grad_fault(op_name: str | None) -> None:
    global _GRAD_FAULT_OP
    _GRAD_FAULT_OP = op_name


class ShapeError(ValueError):
    """Raised when an op's input shapes do not satisfy its signature."""


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the recorded computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(p for p in parents if p.requires_grad)
        self._backward = backward
        self.op = op

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph execution ---------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape} from op '{self.op}'")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        # iterative DFS; graphs can be thousands of nodes deep
        while stack:
            node = stack[-1]
            if id(node) in seen:
                stack.pop()
                continue
            unvisited = [p for p in node._parents if id(p) not in seen]
            if unvisited:
                stack.extend(unvisited)
            else:
                seen.add(id(node))
                order.append(node)
                stack.pop()
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free intermediate gradients eagerly; leaves keep theirs
            if node._backward is not None:
                node.grad = None if node is not self else node.grad

    def _send(self, parent: "Tensor", g: np.ndarray) -> None:
        if not parent.requires_grad:
            return
        if _GRAD_FAULT_OP is not None and self.op == _GRAD_FAULT_OP:
            g = g * GRAD_FAULT_SCALE
        parent._accumulate(g)

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = _wrap(other)
        out_data = self.data + other.data
        out = Tensor(out_data, parents=(self, other), op="add")
        if out.requires_grad:
            def back(g, a=self, b=other, out=out):
                out._send(a, _unbroadcast(g, a.data.shape))
                out._send(b, _unbroadcast(g, b.data.shape))
            out._backward = back
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        out = Tensor(self.data - other.data, parents=(self, other), op="sub")
        if out.requires_grad:
            def back(g, a=self, b=other, out=out):
                out._send(a, _unbroadcast(g, a.data.shape))
                out._send(b, _unbroadcast(-g, b.data.shape))
            out._backward = back
        return out

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, parents=(self, other), op="mul")
        if out.requires_grad:
            def back(g, a=self, b=other, out=out):
                out._send(a, _unbroadcast(g * b.data, a.data.shape))
                out._send(b, _unbroadcast(g * a.data, b.data.shape))
            out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        out = Tensor(self.data / other.data, parents=(self, other), op="div")
        if out.requires_grad:
            def back(g, a=self, b=other, out=out):
                out._send(a, _unbroadcast(g / b.data, a.data.shape))
                out._send(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
            out._backward = back
        return out

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,), op="neg")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, -g)
            out._backward = back
        return out

    def __matmul__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        if a.ndim < 1 or b.ndim < 2:
            raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
        out = Tensor(a @ b, parents=(self, other), op="matmul")
        if out.requires_grad:
            def back(g, A=self, B=other, out=out):
                ga = g @ np.swapaxes(B.data, -1, -2)
                gb = np.swapaxes(A.data, -1, -2) @ g
                out._send(A, _unbroadcast(ga, A.data.shape))
                out._send(B, _unbroadcast(gb, B.data.shape))
            out._backward = back
        return out

    # -- elementwise functions ----------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y, parents=(self,), op="exp")
        if out.requires_grad:
            def back(g, a=self, y=y, out=out):
                out._send(a, g * y)
            out._backward = back
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,), op="log")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, g / a.data)
            out._backward = back
        return out

    def sin(self):
        out = Tensor(np.sin(self.data), parents=(self,), op="sin")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, g * np.cos(a.data))
            out._backward = back
        return out

    def cos(self):
        out = Tensor(np.cos(self.data), parents=(self,), op="cos")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, -g * np.sin(a.data))
            out._backward = back
        return out

    def sqrt(self):
        y = np.sqrt(self.data)
        out = Tensor(y, parents=(self,), op="sqrt")
        if out.requires_grad:
            def back(g, a=self, y=y, out=out):
                out._send(a, g * (0.5 / y))
            out._backward = back
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), parents=(self,), op="abs")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, g * np.sign(a.data))
            out._backward = back
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), parents=(self,), op="relu")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, g * (a.data > 0.0))
            out._backward = back
        return out

    def sigmoid(self):
        y = _stable_sigmoid(self.data)
        out = Tensor(y, parents=(self,), op="sigmoid")
        if out.requires_grad:
            def back(g, a=self, y=y, out=out):
                out._send(a, g * y * (1.0 - y))
            out._backward = back
        return out

    def silu(self):
        """Smooth base activation x * sigmoid(x)."""
        s = _stable_sigmoid(self.data)
        out = Tensor(self.data * s, parents=(self,), op="silu")
        if out.requires_grad:
            def back(g, a=self, s=s, out=out):
                out._send(a, g * (s + a.data * s * (1.0 - s)))
            out._backward = back
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes through strictly inside [lo, hi]."""
        out = Tensor(np.clip(self.data, lo, hi), parents=(self,), op="clip")
        if out.requires_grad:
            inside = (self.data > lo) & (self.data < hi)
            def back(g, a=self, inside=inside, out=out):
                out._send(a, g * inside)
            out._backward = back
        return out

    def softmax(self, axis: int = -1):
        """Row-wise softmax with max subtraction for stability."""
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, parents=(self,), op="softmax")
        if out.requires_grad:
            def back(g, a=self, y=y, axis=axis, out=out):
                dot = (g * y).sum(axis=axis, keepdims=True)
                out._send(a, y * (g - dot))
            out._backward = back
        return out

    # -- reductions ----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), op="sum")
        if out.requires_grad:
            def back(g, a=self, axis=axis, keepdims=keepdims, out=out):
                if axis is None:
                    out._send(a, np.broadcast_to(g, a.data.shape).copy())
                else:
                    if not keepdims:
                        g = np.expand_dims(g, axis)
                    out._send(a, np.broadcast_to(g, a.data.shape).copy())
            out._backward = back
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- structural ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), parents=(self,), op="reshape")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, g.reshape(a.data.shape))
            out._backward = back
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.data.ndim)))
        out = Tensor(self.data.transpose(axes), parents=(self,), op="transpose")
        if out.requires_grad:
            inv = np.argsort(axes)
            def back(g, a=self, inv=inv, out=out):
                out._send(a, g.transpose(inv))
            out._backward = back
        return out

    @property
    def T(self):
        return self.transpose()

    def broadcast_to(self, shape):
        out = Tensor(np.broadcast_to(self.data, shape).copy(), parents=(self,), op="broadcast")
        if out.requires_grad:
            def back(g, a=self, out=out):
                out._send(a, _unbroadcast(g, a.data.shape))
            out._backward = back
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], parents=(self,), op="slice")
        if out.requires_grad:
            def back(g, a=self, key=key, out=out):
                full = np.zeros_like(a.data)
                np.add.at(full, key, g)
                out._send(a, full)
            out._backward = back
        return out

    def item(self) -> float:
        return float(self.data.reshape(()))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors), op="concat")
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def back(g, parts=tensors, offsets=offsets, axis=axis, out=out):
            for i, t in enumerate(parts):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offsets[i], offsets[i + 1])
                out._send(t, g[tuple(idx)])
        out._backward = back
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: empty input list")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), parents=tuple(tensors), op="stack")
    if out.requires_grad:
        def back(g, parts=tensors, axis=axis, out=out):
            for i, t in enumerate(parts):
                out._send(t, np.take(g, i, axis=axis))
        out._backward = back
    return out


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows `idx` from a 2D table; backward scatter-adds into the table."""
    idx = np.asarray(idx)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2D, got {table.data.shape}")
    out = Tensor(table.data[idx], parents=(table,), op="gather_rows")
    if out.requires_grad:
        def back(g, t=table, idx=idx, out=out):
            full = np.zeros_like(t.data, dtype=np.float64)
            np.add.at(full, idx, g)
            out._send(t, full)
        out._backward = back
    return out


def filter2d_valid(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Valid-mode cross-correlation of a 2D image with a fixed (non-trainable) kernel."""
    from scipy.signal import correlate2d, convolve2d

    if x.data.ndim != 2:
        raise ShapeError(f"filter2d_valid: image must be 2D, got {x.data.shape}")
    kh, kw = kernel.shape
    if x.data.shape[0] < kh or x.data.shape[1] < kw:
        raise ShapeError(f"filter2d_valid: image {x.data.shape} smaller than kernel {kernel.shape}")
    out = Tensor(correlate2d(x.data, kernel, mode="valid"), parents=(x,), op="filter2d")
    if out.requires_grad:
        def back(g, a=x, kernel=kernel, out=out):
            out._send(a, convolve2d(g, kernel, mode="full"))
        out._backward = back
    return out


class Parameter(Tensor):
    """Named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=np.float64):
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True)
        self.op = "param"
        self.name = name


class ParameterStore:
    """Flat registry of named trainable arrays.

    Updates require exclusive access; evaluation over a frozen store is safe
    from concurrent contexts.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = dtype
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"parameter '{name}' already registered")
        p = Parameter(name, data, dtype=self.dtype)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return sorted(self._params.items())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def gradients(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Run backward from a scalar loss; return gradients per parameter name.

        Parameters not reachable from the loss get zero gradients of matching
        shape, so optimizers can treat the result uniformly.
        """
        self.zero_grad()
        loss.backward()
        out = {}
        for name, p in self._params.items():
            out[name] = p.grad if p.grad is not None else np.zeros_like(p.data, dtype=np.float64)
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ShapeError(f"parameter '{name}': shape {arr.shape} != expected {p.data.shape}")
            p.data = np.asarray(arr, dtype=p.data.dtype).copy()


def finite_diff(fn, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at `point`.

    Independent verification oracle; kept free of any Tensor machinery.
    """
    point = np.asarray(point, dtype=np.float64)
    if step <= 0:
        raise ValueError("finite_diff: step must be positive")
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn(point))
        flat[i] = orig - step
        f_minus = float(fn(point))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"finite_diff: non-finite function value at coordinate {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad
