"""Dense float32 tensor arithmetic with strict shape checking.

Tensors are numpy float32 arrays in row-major order. Broadcasting is limited
to scalar-against-tensor; anything else is a shape error. Sum/mean reductions
accumulate in float64 before casting back to keep drift bounded.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32


def as_tensor(values, dtype=DTYPE) -> np.ndarray:
    return np.asarray(values, dtype=dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}

_UNARY = {
    "sigmoid": sigmoid,
    "exp": np.exp,
    "log": np.log,
    "max0": lambda x: np.maximum(x, 0),
}


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Pointwise arithmetic. b may be a scalar or a tensor of a's exact shape."""
    a = as_tensor(a)
    if op in _UNARY:
        return as_tensor(_UNARY[op](a))
    if op == "scale":
        if b is None or np.ndim(b) != 0:
            raise ValueError("scale expects a scalar second operand")
        return as_tensor(a * DTYPE(b))
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} expects a second operand")
        if np.ndim(b) != 0:
            b = as_tensor(b)
            if b.shape != a.shape:
                raise ValueError(f"shape mismatch: {list(a.shape)} vs {list(b.shape)}")
        return as_tensor(_BINARY[op](a, b))
    raise ValueError(f"unknown elementwise op {op!r}")


def reduce(op: str, a: np.ndarray, axis: int) -> np.ndarray:
    """Reduce one axis away. sum/mean accumulate in float64."""
    a = as_tensor(a)
    if not 0 <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for rank {a.ndim}")
    if op == "sum":
        return np.sum(a, axis=axis, dtype=np.float64).astype(DTYPE)
    if op == "mean":
        return np.mean(a, axis=axis, dtype=np.float64).astype(DTYPE)
    if op == "max":
        return np.max(a, axis=axis)
    raise ValueError(f"unknown reduce op {op!r}")
