"""Dense float64 tensors and a reverse-mode tape.

Operations in :mod:`blocksurgeon.ops` record themselves on the innermost
active :class:`Tape`. Gradients are computed by :func:`backward`, which
replays the tape in reverse recording order (recording order is already a
topological order, since an op can only consume tensors that exist).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(ArithmeticError):
    """Raised when a gradient or curvature computation is not finite."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class Tensor:
    """A dense row-major array of 64-bit floats.

    Identity matters: gradients are keyed by the tensor object, so the same
    numbers held by two tensors are two distinct tape entries.
    """

    __slots__ = ("data", "name", "__weakref__")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


@dataclass
class SliceGrad:
    """Gradient that is non-zero only on a contiguous flat range."""

    start: int
    values: np.ndarray


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | SliceGrad | None]]


_local = threading.local()


def _stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded. Tapes are per-thread and never shared.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def record(self, output: Tensor, inputs: Sequence[Tensor], vjp) -> None:
        self.nodes.append(Node(output, tuple(inputs), vjp))
        self._produced.add(id(output))

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def __len__(self) -> int:
        return len(self.nodes)


def record(output: Tensor, inputs: Sequence[Tensor], vjp) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(output, inputs, vjp)
    return output


class Gradients:
    """Gradient map keyed by tensor identity.

    Looking up a tensor the loss does not depend on returns exact zeros.
    """

    def __init__(self) -> None:
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}
        self._owned: set[int] = set()

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.shape)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def get(self, t: Tensor) -> np.ndarray | None:
        return self._grads.get(id(t))

    def accumulate(self, t: Tensor, g) -> None:
        key = id(t)
        if isinstance(g, SliceGrad):
            cur = self._grads.get(key)
            if cur is None:
                cur = np.zeros(t.shape)
            elif key not in self._owned:
                cur = cur.copy()
            flat = cur.reshape(-1)
            flat[g.start:g.start + g.values.size] += g.values.reshape(-1)
            self._owned.add(key)
        else:
            if g.shape != t.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match tensor {t.shape}")
            cur = self._grads.get(key)
            if cur is None:
                cur = g
                self._owned.discard(key)
            else:
                cur = cur + g
                self._owned.add(key)
        self._grads[key] = cur
        self._tensors[key] = t


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse-mode sweep from a scalar ``loss`` over everything on ``tape``."""
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss not in tape:
        raise ValueError("loss was not produced on this tape")
    grads = Gradients()
    grads.accumulate(loss, np.ones(loss.shape))
    for node in reversed(tape.nodes):
        gout = grads.get(node.output)
        if gout is None:
            continue
        for inp, g in zip(node.inputs, node.vjp(gout)):
            if g is not None:
                grads.accumulate(inp, g)
    return grads


def grad_of(loss_fn: Callable[[Tensor], Tensor], theta: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss value and gradient of ``loss_fn`` at the flat point ``theta``."""
    leaf = Tensor(theta)
    with Tape() as tape:
        loss = loss_fn(leaf)
    grads = backward(tape, loss)
    return loss.item(), grads[leaf].reshape(-1).copy()


def hvp(loss_fn: Callable[[Tensor], Tensor], theta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian-vector product by central differences of the gradient.

    ``loss_fn`` maps a flat parameter tensor to a scalar loss. The step is
    ``1e-4 / max(1, max|v|)`` along ``v``.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != theta.shape:
        raise ShapeError(f"direction has {v.size} entries, parameters have {theta.size}")
    if not np.any(v):
        return np.zeros_like(theta)
    eps = 1e-4 / max(1.0, float(np.max(np.abs(v))))
    _, g_plus = grad_of(loss_fn, theta + eps * v)
    _, g_minus = grad_of(loss_fn, theta - eps * v)
    out = (g_plus - g_minus) / (2.0 * eps)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise GradientError(f"Hessian-vector product not finite at parameter {bad[0]}", int(bad[0]))
    return out


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    out = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (float(loss_fn(up)) - float(loss_fn(dn))) / (2.0 * h)
    return out
