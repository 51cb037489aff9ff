"""Dense float32 tensors and a tape for reverse-mode differentiation.

Operations in :mod:`siamshift.backbone.ops` record themselves on the
innermost active :class:`Tape` whenever one of their inputs requires a
gradient. :func:`backward` replays the records in reverse.

    >>> from siamshift.backbone import ops
    >>> w = Parameter("w", np.ones(3))
    >>> with Tape() as tape:
    ...     loss = ops.sum(w)
    >>> backward(loss, tape)
    >>> w.grad
    array([1., 1., 1.], dtype=float32)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericalError

DTYPE = np.float32

_local = threading.local()


class Tensor:
    """An n-dimensional float32 array that may carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A named trainable tensor.

    ``role`` is ``"weight"`` for kernels and fully-connected matrices and
    ``"bias"`` for offsets; only weights are L2-penalised.
    """

    __slots__ = ("name", "role")

    def __init__(self, name: str, data, role: str = "weight"):
        super().__init__(data, requires_grad=True)
        if role not in ("weight", "bias"):
            raise ValueError(f"unknown parameter role {role!r}")
        self.name = name
        self.role = role

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    # maps the output cotangent to one cotangent (or None) per input
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered log of differentiable operations.

    Used as a context manager; tapes nest per thread, and an operation is
    recorded only on the innermost one.
    """

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op} produced non-finite values")
    return arr


def make_result(data: np.ndarray, op: str, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap an op's output and record it if any input needs a gradient."""
    out = Tensor(check_finite(np.asarray(data, dtype=DTYPE), op))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(Record(out, tuple(inputs), vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Leaf gradients accumulate across calls until cleared, so a parameter
    used several times (e.g. by both branches of a Siamese network)
    receives the sum of all its contributions.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(r.output) for r in tape.records}
    if id(loss) not in produced:
        raise ContractError("loss was not computed under this tape")
    cot: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for rec in reversed(tape.records):
        g = cot.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                cot[key] = cot[key] + gi if key in cot else gi
            else:
                gi = np.asarray(gi, dtype=DTYPE).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
