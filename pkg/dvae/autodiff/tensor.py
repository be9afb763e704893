from __future__ import annotations
from typing import Callable, List, Optional, Sequence, Tuple
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
import numpy as np
from dvae import errors as err

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_PRECISION: ContextVar[np.dtype] = ContextVar("precision", default=np.dtype(np.float32))
_TAPE: ContextVar[Optional["Tape"]] = ContextVar("tape", default=None)


def default_dtype() -> np.dtype:
    """dtype new tensors are created with"""

    return _PRECISION.get()


@contextmanager
def precision(name: str):
    """
    switch the dtype of newly created tensors. float64 is what gradient checks
    run under; training runs float32
    """

    dtype = np.dtype(name)

    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise err.ContractViolation(f"unsupported precision {name}")

    token = _PRECISION.set(dtype)

    try:
        yield dtype
    finally:
        _PRECISION.reset(token)


def current_tape() -> Optional["Tape"]:
    """tape ops record onto, if any"""

    return _TAPE.get()


class Tensor:
    """n-dimensional real array with an optional gradient"""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional[Tape] = None

    @classmethod
    def wrap(cls, data: np.ndarray, requires_grad: bool = False) -> Tensor:
        """no-copy constructor used by primitives"""

        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.tape = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """not produced by a recorded primitive"""

        return self.tape is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        """same values, cut from the graph"""

        return Tensor.wrap(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Record:
    """one primitive application on the tape"""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    ordered log of primitive applications. backward walks it in exact reverse
    order of recording and can only run once
    """

    def __init__(self):
        self.records: List[Record] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> Tape:
        self._token = _TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _TAPE.reset(self._token)
        self._token = None

    def __len__(self):
        return len(self.records)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn):
        """append a primitive application"""

        if self.consumed:
            raise err.TapeError("tape already consumed by backward")

        output.tape = self
        self.records.append(Record(op=op, inputs=tuple(inputs), output=output, backward=backward))

    def backward(self, loss: Tensor):
        """populate .grad on everything on the tape that requires grad"""

        if self.consumed:
            raise err.TapeError("backward already ran on this tape, re-record the forward pass")
        if loss.size != 1:
            raise err.ContractViolation(f"loss must be scalar, got shape {loss.shape}")
        if loss.tape is not self and loss.requires_grad:
            raise err.TapeError("loss was not recorded on this tape")

        self.consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}

        if loss.is_leaf:
            leaves[id(loss)] = loss

        for rec in reversed(self.records):
            grad = grads.pop(id(rec.output), None)

            if grad is None:
                continue

            rec.output.grad = grad

            for tensor, in_grad in zip(rec.inputs, rec.backward(grad)):
                if in_grad is None or not tensor.requires_grad:
                    continue

                key = id(tensor)
                grads[key] = grads[key] + in_grad if key in grads else in_grad

                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            grad = grads[key]
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def backward(loss: Tensor):
    """run backward on the tape that recorded loss"""

    if loss.tape is None:
        raise err.TapeError("nothing was recorded for this loss")

    loss.tape.backward(loss)
