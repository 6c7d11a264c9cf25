"""Tape-based reverse-mode automatic differentiation on numpy arrays.

A `Tape` records one pullback per executed op, in execution order; `backward`
replays them in exact reverse order, accumulating gradients into `.grad` (so a
tensor used twice receives the sum of both contributions). Ops are methods on
the tape: constructing a tape with ``record=False`` gives a zero-overhead
forward-only mode for decoding.

Values are float32 by default; building parameters and inputs as float64 and
running the same graph gives the high-precision mode used by gradient checks.

Checkpoint file layout (little-endian):

    magic   4 bytes  b"OPCK"
    u32     format version (currently 1)
    u32     number of arrays
    per array, sorted by name:
        u32     name length, then that many UTF-8 bytes
        u8      rank, then rank * u32 dims
        f32[n]  values, C order
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np

from .errors import DataError, NumericError, ShapeError

CHECKPOINT_MAGIC = b"OPCK"
CHECKPOINT_FORMAT_VERSION = 1
DEFAULT_DTYPE = np.float32


class Tensor:
    """A numpy array plus an accumulated gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def param(data, name: str) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Records pullbacks as ops execute; backward runs them reversed."""

    def __init__(self, record: bool = True):
        self.record = record
        self._ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self):
        return len(self._ops)

    def _push(self, out: Tensor, pullback: Callable[[np.ndarray], None]) -> None:
        if self.record:
            self._ops.append((out, pullback))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.record:
            raise NumericError("cannot backpropagate through a non-recording tape")
        loss.grad = np.ones_like(loss.data)
        for out, pullback in reversed(self._ops):
            if out.grad is not None:
                pullback(out.grad)

    # -- construction ------------------------------------------------------

    def const(self, data, dtype=None) -> Tensor:
        return Tensor(np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data))

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)

        def pullback(g):
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)

        self._push(out, pullback)
        return out

    def transpose(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.T)
        self._push(out, lambda g: a.accumulate(g.T))
        return out

    def reshape(self, a: Tensor, shape) -> Tensor:
        out = Tensor(a.data.reshape(shape))
        self._push(out, lambda g: a.accumulate(g.reshape(a.data.shape)))
        return out

    # -- arithmetic --------------------------------------------------------

    def _binary(self, name, a: Tensor, b: Tensor, fwd, da, db) -> Tensor:
        try:
            value = fwd(a.data, b.data)
        except ValueError:
            raise ShapeError(f"{name}: {a.shape} vs {b.shape}") from None

        def pullback(g):
            a.accumulate(_unbroadcast(da(g), a.data.shape))
            b.accumulate(_unbroadcast(db(g), b.data.shape))

        out = Tensor(value)
        self._push(out, pullback)
        return out

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        return self._binary("add", a, b, np.add, lambda g: g, lambda g: g)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self._binary("sub", a, b, np.subtract, lambda g: g, lambda g: -g)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        return self._binary(
            "mul", a, b, np.multiply, lambda g: g * b.data, lambda g: g * a.data
        )

    def minimum(self, a: Tensor, b: Tensor) -> Tensor:
        # ties send the gradient to the first argument
        return self._binary(
            "minimum",
            a,
            b,
            np.minimum,
            lambda g: g * (a.data <= b.data),
            lambda g: g * (a.data > b.data),
        )

    def add_scalar(self, a: Tensor, s: float) -> Tensor:
        out = Tensor(a.data + s)
        self._push(out, lambda g: a.accumulate(g))
        return out

    def mul_scalar(self, a: Tensor, s: float) -> Tensor:
        out = Tensor(a.data * s)
        self._push(out, lambda g: a.accumulate(g * s))
        return out

    # -- elementwise nonlinearities -----------------------------------------

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.data)
        out = Tensor(y)
        self._push(out, lambda g: a.accumulate(g * (1.0 - y * y)))
        return out

    def sigmoid(self, a: Tensor) -> Tensor:
        x = a.data
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        y = y.astype(x.dtype)
        out = Tensor(y)
        self._push(out, lambda g: a.accumulate(g * y * (1.0 - y)))
        return out

    def exp(self, a: Tensor) -> Tensor:
        y = np.exp(a.data)
        out = Tensor(y)
        self._push(out, lambda g: a.accumulate(g * y))
        return out

    def log(self, a: Tensor) -> Tensor:
        out = Tensor(np.log(a.data))
        self._push(out, lambda g: a.accumulate(g / a.data))
        return out

    def clip_min(self, a: Tensor, lo: float) -> Tensor:
        out = Tensor(np.maximum(a.data, lo))
        self._push(out, lambda g: a.accumulate(g * (a.data >= lo)))
        return out

    def softmax(self, a: Tensor, axis: int = -1) -> Tensor:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y)

        def pullback(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate(y * (g - dot))

        self._push(out, pullback)
        return out

    # -- shape surgery -------------------------------------------------------

    def concat(self, tensors, axis: int = 0) -> Tensor:
        tensors = list(tensors)
        try:
            value = np.concatenate([t.data for t in tensors], axis=axis)
        except ValueError:
            raise ShapeError(
                f"concat axis {axis}: {[t.shape for t in tensors]}"
            ) from None
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def pullback(g):
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                t.accumulate(g[tuple(index)])

        out = Tensor(value)
        self._push(out, pullback)
        return out

    def narrow(self, a: Tensor, axis: int, start: int, length: int) -> Tensor:
        if not 0 <= start <= start + length <= a.data.shape[axis]:
            raise ShapeError(
                f"narrow axis {axis} [{start}:{start + length}] of {a.shape}"
            )
        index = [slice(None)] * a.data.ndim
        index[axis] = slice(start, start + length)
        index = tuple(index)
        out = Tensor(a.data[index])

        def pullback(g):
            full = np.zeros_like(a.data)
            full[index] = g
            a.accumulate(full)

        self._push(out, pullback)
        return out

    def take_rows(self, a: Tensor, indices) -> Tensor:
        """Gather rows of a 2-D tensor; the embedding lookup."""
        idx = np.asarray(indices, dtype=np.int64)
        if a.data.ndim != 2:
            raise ShapeError(f"take_rows expects a matrix, got {a.shape}")
        out = Tensor(a.data[idx])

        def pullback(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

        self._push(out, pullback)
        return out

    def scatter_cols(self, values: Tensor, col_indices, width: int) -> Tensor:
        """Rows of `values` scattered into `width` columns, summing collisions.

        values is (B, S); col_indices is length S, shared by every row. Used to
        project attention weights onto extended-vocabulary slots.
        """
        idx = np.asarray(col_indices, dtype=np.int64)
        b, s = values.data.shape
        if idx.shape != (s,):
            raise ShapeError(f"scatter_cols: {values.shape} with {idx.shape} indices")
        if idx.size and (idx.min() < 0 or idx.max() >= width):
            raise ShapeError(f"scatter_cols: index out of range for width {width}")
        value = np.zeros((b, width), dtype=values.data.dtype)
        np.add.at(value, (np.arange(b)[:, None], idx[None, :]), values.data)
        out = Tensor(value)
        self._push(out, lambda g: values.accumulate(g[:, idx]))
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
        out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

        def pullback(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())

        self._push(out, pullback)
        return out

    def mean(self, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
        n = a.data.size if axis is None else a.data.shape[axis]
        out = Tensor(np.mean(a.data, axis=axis, keepdims=keepdims))

        def pullback(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.data.shape) / n)

        self._push(out, pullback)
        return out

    # -- stochastic ----------------------------------------------------------

    def dropout(self, a: Tensor, rate: float, rng) -> Tensor:
        """Inverted dropout with an explicit mask drawn from `rng`."""
        if not 0.0 <= rate < 1.0:
            raise NumericError(f"dropout rate must be in [0, 1), got {rate}")
        if rate == 0.0:
            return a
        keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
        keep = keep.astype(a.data.dtype)
        out = Tensor(a.data * keep)
        self._push(out, lambda g: a.accumulate(g * keep))
        return out


# -- scalar reductions used by every loss ------------------------------------


def scalar(tape: Tape, t: Tensor) -> Tensor:
    """Reduce to a genuine scalar-shaped tensor (sums all elements)."""
    return tape.sum(t)


# -- initialization -----------------------------------------------------------


def uniform_init(rng, shape, scale: float = 0.08, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def glorot_init(rng, fan_in: int, fan_out: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


# -- gradient checking ---------------------------------------------------------


def gradcheck(fn, tensors, epsilon: float | None = None) -> float:
    """Max relative error between backward and central finite differences.

    `fn(tape)` must rebuild the graph and return a scalar loss tensor; the
    checked `tensors` are closed over and perturbed in place. Relative error
    is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    tensors = list(tensors)
    if epsilon is None:
        epsilon = 1e-4 if tensors[0].dtype == np.float32 else 1e-5
    zero_grads(tensors)
    tape = Tape()
    loss = fn(tape)
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, a_grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = fn(Tape(record=False)).item()
            flat[i] = orig - epsilon
            down = fn(Tape(record=False)).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


# -- checkpointing --------------------------------------------------------------


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_FORMAT_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError("not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {version}")
    off = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arrays[name] = (
            np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        )
        off += 4 * n
    if off != len(blob):
        raise DataError("trailing bytes in checkpoint file")
    return arrays
