"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape: every operation records its parents and a
closure that pushes gradients back to them. ``backward()`` on a scalar
walks the tape in reverse topological order. Leaf gradients accumulate
across repeated ``backward()`` calls; call ``zero_grad()`` between
optimizer steps.

Conventions fixed here so results are reproducible to the bit:
  - everything is float64, row-major;
  - relu'(0) := 0;
  - broadcasting is limited to python scalars (no array broadcasting).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    SerializationError,
)


def _accum(t: "Tensor", g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tensor:
    """N-d float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op="leaf"):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = None
        self._op = _op

    # ---------------------------------------------------------------- basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, op={self._op!r}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------ arithmetic

    def _check_same_shape(self, other: "Tensor", op: str) -> None:
        if self.data.shape != other.data.shape:
            raise DimensionError(f"{op}: operand shapes differ: {self.shape} vs {other.shape}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = Tensor(self.data + float(other), _parents=(self,), _op="add_scalar")

            def back():
                if self.requires_grad:
                    _accum(self, out.grad)

            out._backward = back
            return out
        self._check_same_shape(other, "add")
        out = Tensor(self.data + other.data, _parents=(self, other), _op="add")

        def back():
            if self.requires_grad:
                _accum(self, out.grad)
            if other.requires_grad:
                _accum(other, out.grad)

        out._backward = back
        return out

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-float(other))
        self._check_same_shape(other, "sub")
        out = Tensor(self.data - other.data, _parents=(self, other), _op="sub")

        def back():
            if self.requires_grad:
                _accum(self, out.grad)
            if other.requires_grad:
                _accum(other, -out.grad)

        out._backward = back
        return out

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            s = float(other)
            out = Tensor(self.data * s, _parents=(self,), _op="scale")

            def back():
                if self.requires_grad:
                    _accum(self, out.grad * s)

            out._backward = back
            return out
        self._check_same_shape(other, "mul")
        out = Tensor(self.data * other.data, _parents=(self, other), _op="mul")

        def back():
            if self.requires_grad:
                _accum(self, out.grad * other.data)
            if other.requires_grad:
                _accum(other, out.grad * self.data)

        out._backward = back
        return out

    __rmul__ = __mul__

    def scale(self, s: float) -> "Tensor":
        """Multiply by a python scalar (the only broadcasting supported)."""
        return self * float(s)

    def __neg__(self):
        return self * -1.0

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            if float(other) == 0.0:
                raise DomainError("div: scalar divisor is zero")
            return self * (1.0 / float(other))
        self._check_same_shape(other, "div")
        if np.any(other.data == 0.0):
            raise DomainError("div: divisor contains zero entries")
        out = Tensor(self.data / other.data, _parents=(self, other), _op="div")

        def back():
            if self.requires_grad:
                _accum(self, out.grad / other.data)
            if other.requires_grad:
                _accum(other, -out.grad * self.data / (other.data * other.data))

        out._backward = back
        return out

    # ----------------------------------------------------------- elementwise

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,), _op="relu")
        mask = (self.data > 0.0).astype(np.float64)  # relu'(0) := 0

        def back():
            if self.requires_grad:
                _accum(self, out.grad * mask)

        out._backward = back
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(s, _parents=(self,), _op="sigmoid")

        def back():
            if self.requires_grad:
                _accum(self, out.grad * s * (1.0 - s))

        out._backward = back
        return out

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), _parents=(self,), _op="exp")

        def back():
            if self.requires_grad:
                _accum(self, out.grad * out.data)

        out._backward = back
        return out

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("log: input has non-positive entries")
        out = Tensor(np.log(self.data), _parents=(self,), _op="log")

        def back():
            if self.requires_grad:
                _accum(self, out.grad / self.data)

        out._backward = back
        return out

    # -------------------------------------------------------- linear algebra

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError(
                f"matmul: operands must be 2-d, got {self.shape} @ {other.shape}")
        if self.data.shape[1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul: inner dimensions disagree: {self.shape} @ {other.shape}")
        out = Tensor(self.data @ other.data, _parents=(self, other), _op="matmul")

        def back():
            if self.requires_grad:
                _accum(self, out.grad @ other.data.T)
            if other.requires_grad:
                _accum(other, self.data.T @ out.grad)

        out._backward = back
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        return self @ other

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise DimensionError(f"transpose: needs a 2-d tensor, got shape {self.shape}")
        out = Tensor(self.data.T, _parents=(self,), _op="transpose")

        def back():
            if self.requires_grad:
                _accum(self, out.grad.T)

        out._backward = back
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        if int(np.prod(shape)) != self.data.size:
            raise DimensionError(f"reshape: cannot view {self.shape} as {tuple(shape)}")
        out = Tensor(self.data.reshape(shape), _parents=(self,), _op="reshape")

        def back():
            if self.requires_grad:
                _accum(self, out.grad.reshape(self.data.shape))

        out._backward = back
        return out

    def slice(self, start: int, stop: int, axis: int = 1) -> "Tensor":
        """Contiguous slab along one axis; gradient scatters back into place."""
        if axis < 0 or axis >= self.data.ndim:
            raise DimensionError(f"slice: axis {axis} out of range for shape {self.shape}")
        index = [np.s_[:]] * self.data.ndim
        index[axis] = np.s_[start:stop]
        index = tuple(index)
        out = Tensor(self.data[index].copy(), _parents=(self,), _op="slice")

        def back():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                g[index] = out.grad
                _accum(self, g)

        out._backward = back
        return out

    # -------------------------------------------------------------- reduce

    def sum(self, axis: int | None = None) -> "Tensor":
        if axis is not None and (axis < 0 or axis >= self.data.ndim):
            raise DimensionError(f"sum: axis {axis} out of range for shape {self.shape}")
        out = Tensor(np.sum(self.data, axis=axis), _parents=(self,), _op="sum")

        def back():
            if self.requires_grad:
                if axis is None:
                    _accum(self, np.full_like(self.data, float(out.grad)))
                else:
                    _accum(self, np.broadcast_to(
                        np.expand_dims(out.grad, axis), self.data.shape).copy())

        out._backward = back
        return out

    def l2_norm(self, axis: int | None = None) -> "Tensor":
        """Euclidean norm, totally or along one axis. Gradient is x / ||x||."""
        if axis is not None and (axis < 0 or axis >= self.data.ndim):
            raise DimensionError(f"l2_norm: axis {axis} out of range for shape {self.shape}")
        sq = np.sum(self.data * self.data, axis=axis)
        norms = np.sqrt(sq)
        if self.requires_grad and np.any(np.asarray(norms) == 0.0):
            where = "input" if axis is None else f"axis-{axis} component {int(np.argmin(np.asarray(norms)))}"
            raise DegenerateInputError(
                f"l2_norm: zero-norm {where}; the gradient x/||x|| is undefined")
        out = Tensor(norms, _parents=(self,), _op="l2_norm")

        def back():
            if self.requires_grad:
                if axis is None:
                    _accum(self, float(out.grad) * self.data / float(norms))
                else:
                    g = np.expand_dims(out.grad / norms, axis)
                    _accum(self, g * self.data)

        out._backward = back
        return out

    # ------------------------------------------------------------- backward

    def backward(self) -> None:
        """Reverse-mode pass from a scalar.

        Gradients of interior nodes are reset on every call; gradients of
        leaves accumulate until ``zero_grad()``.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward: loss must be a scalar, got shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in topo:
            if node._parents:  # interior: fresh gradient per pass
                node.grad = np.zeros_like(node.data)
        if self._parents:
            self.grad = np.ones_like(self.data)
        else:
            _accum(self, np.ones_like(self.data))

        for node in reversed(topo):
            if node._backward is not None and node.requires_grad:
                node._backward()


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    """Join two 2-d tensors along ``axis``; gradient splits back to the inputs."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"concat: operands must be 2-d, got {a.shape} and {b.shape}")
    if axis not in (0, 1):
        raise DimensionError(f"concat: axis must be 0 or 1, got {axis}")
    other = 1 - axis
    if a.data.shape[other] != b.data.shape[other]:
        what = "row" if other == 0 else "column"
        raise DimensionError(
            f"concat: {what}-count mismatch: {a.shape} vs {b.shape} on axis {axis}")
    out = Tensor(np.concatenate([a.data, b.data], axis=axis), _parents=(a, b), _op="concat")
    split = a.data.shape[axis]

    def back():
        if axis == 1:
            ga, gb = out.grad[:, :split], out.grad[:, split:]
        else:
            ga, gb = out.grad[:split, :], out.grad[split:, :]
        if a.requires_grad:
            _accum(a, ga)
        if b.requires_grad:
            _accum(b, gb)

    out._backward = back
    return out


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of scalar-valued ``f`` at ``x`` against
    central finite differences.

    Returns max over components of |analytic - numeric| /
    max(|analytic|, |numeric|, 1e-8).
    """
    if not (0.0 < eps <= 1e-2):
        raise ContractError(f"grad_check: eps must be in (0, 1e-2], got {eps}")

    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check: f must return a scalar tensor")
    out.backward()
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(x.data)

    flat = x.data.copy().reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig - eps
        lo = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(x.data.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ------------------------------------------------------------- serialization
#
# On-disk layout (little-endian): [rank: u32][dims: u32 x rank][f64 x prod(dims)]
# in row-major order. Round-trips are bit-exact.

def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def tensor_from_buffer(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one serialized tensor starting at ``offset``; returns (tensor, next offset)."""
    if offset + 4 > len(buf):
        raise SerializationError("tensor record truncated before rank field")
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if rank > 32:
        raise SerializationError(f"implausible tensor rank {rank}")
    if offset + 4 * rank > len(buf):
        raise SerializationError("tensor record truncated inside dims header")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    nbytes = 8 * count
    if offset + nbytes > len(buf):
        raise SerializationError(
            f"tensor record truncated: expected {nbytes} data bytes for shape {dims}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims)
    return Tensor(data.copy()), offset + nbytes


def save_tensor(t: Tensor | np.ndarray, path) -> None:
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = tensor_from_buffer(buf)
    if end != len(buf):
        raise SerializationError(f"{path}: {len(buf) - end} trailing bytes after tensor record")
    return t
