"""Central finite-difference verification of every layer kind's backward
pass, in float64. Step size is 1e-2 scaled by the entry's magnitude.

Piecewise-linear activations (relu, prelu, max pooling) are checked at inputs
nudged away from their kinks so the numeric quotient measures the true local
derivative rather than a kink crossing.
"""

from __future__ import annotations

import numpy as np

from .layers import BatchNorm, Conv1d, Conv2d, Conv3d, Linear, MaxPool2d, PReLU, ReLU, \
    SpatialMean, TemporalMean
from .rng import Rng
from .training import bce_loss, ce_loss

H_SCALE = 1e-2
TOLERANCE = 1e-3


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def numeric_grad(loss_fn, arr: np.ndarray) -> np.ndarray:
    out = np.zeros_like(arr)
    flat = arr.ravel()
    grad = out.ravel()
    for i in range(flat.size):
        orig = flat[i]
        h = H_SCALE * max(1.0, abs(orig))
        flat[i] = orig + h
        hi = loss_fn()
        flat[i] = orig - h
        lo = loss_fn()
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * h)
    return out


def _uniform(rng: Rng, shape, lo=-1.0, hi=1.0) -> np.ndarray:
    return (rng.uniform(shape).astype(np.float64) * (hi - lo)) + lo


def _nudged(rng: Rng, shape, margin=0.06) -> np.ndarray:
    """Values bounded away from zero so +-h never crosses a kink."""
    x = _uniform(rng, shape)
    return x + margin * np.sign(np.where(x == 0, 1.0, x))


def _spread(rng: Rng, shape) -> np.ndarray:
    """Well-separated values (gap >= 0.4) for max-pool argmax stability."""
    n = int(np.prod(shape))
    base = np.arange(n, dtype=np.float64) * 0.5
    base = base[rng.permutation(n)] + _uniform(rng, (n,), -0.05, 0.05)
    return (base - base.mean()).reshape(shape)


def _check_instance(layer, x, train_kwargs=None) -> float:
    """Compare layer.backward against finite differences of sum(y * r)."""
    kwargs = train_kwargs or {}
    y = layer.forward(x, train=True, **kwargs)
    r = _uniform(Rng(1234), y.shape)

    def loss():
        return float(np.sum(layer.forward(x, train=True, **kwargs) * r))

    dx = layer.backward(r)
    worst = 0.0
    num_dx = numeric_grad(loss, x)
    worst = max(worst, float(np.max(np.abs(dx - num_dx) /
                                    np.maximum(np.maximum(np.abs(dx), np.abs(num_dx)), 1e-6))))
    for name, param in layer.params().items():
        num = numeric_grad(loss, param)
        ana = layer.grads[name]
        worst = max(worst, float(np.max(np.abs(ana - num) /
                                        np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6))))
    return worst


def check_conv1d(rep: int) -> float:
    rng = Rng(100 + rep)
    c_in, c_out = rng.integer(3) + 1, rng.integer(3) + 1
    k = (3, 5)[rng.integer(2)]
    dil = rng.integer(2) + 1
    layer = Conv1d(c_in, c_out, k, dil, bias=True, rng=rng.substream("w"), dtype=np.float64)
    x = _uniform(rng.substream("x"), (2, 6, c_in))
    return _check_instance(layer, x)


def check_conv2d(rep: int) -> float:
    rng = Rng(200 + rep)
    c_in, c_out = rng.integer(2) + 1, rng.integer(3) + 1
    k = rng.integer(3) + 1
    stride = rng.integer(2) + 1
    pad = rng.integer(2)
    layer = Conv2d(c_in, c_out, k, stride, pad, bias=True, rng=rng.substream("w"),
                   dtype=np.float64)
    x = _uniform(rng.substream("x"), (2, 5, 5, c_in))
    return _check_instance(layer, x)


def check_conv3d(rep: int) -> float:
    rng = Rng(300 + rep)
    c_in, c_out = rng.integer(2) + 1, rng.integer(2) + 1
    k = (rng.integer(3) + 1, rng.integer(2) + 1, rng.integer(2) + 1)
    stride = (1, rng.integer(2) + 1, 1)
    pad = (rng.integer(2), rng.integer(2), 0)
    layer = Conv3d(c_in, c_out, k, stride, pad, bias=True, rng=rng.substream("w"),
                   dtype=np.float64)
    x = _uniform(rng.substream("x"), (1, 4, 4, 4, c_in))
    return _check_instance(layer, x)


def check_batchnorm_train(rep: int) -> float:
    rng = Rng(400 + rep)
    c = rng.integer(3) + 1
    layer = BatchNorm(c, dtype=np.float64)
    layer.gamma[...] = _uniform(rng.substream("g"), (c,), 0.5, 1.5)
    layer.beta[...] = _uniform(rng.substream("b"), (c,))
    x = _uniform(rng.substream("x"), (3, 4, c)) * 2.0
    return _check_instance(layer, x)


def check_batchnorm_eval(rep: int) -> float:
    rng = Rng(500 + rep)
    c = rng.integer(3) + 1

    class EvalBN(BatchNorm):
        def forward(self, x, train=False, rng=None):  # force eval-mode stats
            return super().forward(x, train=False)

    layer = EvalBN(c, dtype=np.float64)
    layer.gamma[...] = _uniform(rng.substream("g"), (c,), 0.5, 1.5)
    layer.beta[...] = _uniform(rng.substream("b"), (c,))
    layer.running_mean[...] = _uniform(rng.substream("m"), (c,))
    layer.running_var[...] = _uniform(rng.substream("v"), (c,), 0.5, 1.5)
    x = _uniform(rng.substream("x"), (3, 4, c))
    return _check_instance(layer, x)


def check_prelu(rep: int) -> float:
    rng = Rng(600 + rep)
    c = rng.integer(4) + 1
    layer = PReLU(c, dtype=np.float64)
    layer.alpha[...] = _uniform(rng.substream("a"), (c,), 0.05, 0.5)
    x = _nudged(rng.substream("x"), (3, 5, c))
    return _check_instance(layer, x)


def check_relu(rep: int) -> float:
    rng = Rng(650 + rep)
    layer = ReLU()
    x = _nudged(rng.substream("x"), (3, 4, 2))
    return _check_instance(layer, x)


def check_linear(rep: int) -> float:
    rng = Rng(700 + rep)
    c_in, c_out = rng.integer(5) + 1, rng.integer(5) + 1
    layer = Linear(c_in, c_out, rng=rng.substream("w"), dtype=np.float64)
    x = _uniform(rng.substream("x"), (4, c_in))
    return _check_instance(layer, x)


def check_maxpool(rep: int) -> float:
    rng = Rng(800 + rep)
    layer = MaxPool2d(3, 2, 1)
    x = _spread(rng.substream("x"), (2, 5, 5, 2))
    return _check_instance(layer, x)


def check_avgpool_spatial(rep: int) -> float:
    rng = Rng(850 + rep)
    layer = SpatialMean()
    x = _uniform(rng.substream("x"), (2, 4, 3, 3))
    return _check_instance(layer, x)


def check_avgpool_temporal(rep: int) -> float:
    rng = Rng(870 + rep)
    layer = TemporalMean()
    x = _uniform(rng.substream("x"), (3, 5, 4))
    return _check_instance(layer, x)


class _ResidualAdd:
    """The residual junction: y = a + b."""

    def forward(self, ab, train=False):
        a, b = ab
        return a + b

    def backward(self, dy):
        return dy, dy


class _Concat:
    """The channel-concat junction with its slice-split backward."""

    def __init__(self, widths):
        self.widths = widths

    def forward(self, parts, train=False):
        return np.concatenate(parts, axis=-1)

    def backward(self, dy):
        outs, at = [], 0
        for w in self.widths:
            outs.append(dy[..., at : at + w].copy())
            at += w
        return outs


def check_residual_add(rep: int) -> float:
    rng = Rng(900 + rep)
    a = _uniform(rng.substream("a"), (2, 4, 3))
    b = _uniform(rng.substream("b"), (2, 4, 3))
    op = _ResidualAdd()
    r = _uniform(Rng(77), a.shape)

    def loss():
        return float(np.sum(op.forward((a, b)) * r))

    da, db = op.backward(r)
    worst = 0.0
    for arr, ana in ((a, da), (b, db)):
        num = numeric_grad(loss, arr)
        worst = max(worst, float(np.max(np.abs(ana - num) /
                                        np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6))))
    return worst


def check_concat(rep: int) -> float:
    rng = Rng(950 + rep)
    widths = (rng.integer(3) + 1, rng.integer(3) + 1)
    parts = [_uniform(rng.substream(f"p{i}"), (2, 3, w)) for i, w in enumerate(widths)]
    op = _Concat(widths)
    r = _uniform(Rng(88), (2, 3, sum(widths)))

    def loss():
        return float(np.sum(op.forward(parts) * r))

    danas = op.backward(r)
    worst = 0.0
    for arr, ana in zip(parts, danas):
        num = numeric_grad(loss, arr)
        worst = max(worst, float(np.max(np.abs(ana - num) /
                                        np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6))))
    return worst


def check_ce(rep: int) -> float:
    rng = Rng(1000 + rep)
    n_classes = rng.integer(5) + 2
    logits = _uniform(rng.substream("x"), (n_classes,)) * 3.0
    label = rng.integer(n_classes)

    def loss():
        return ce_loss(logits, label)[0]

    _, ana = ce_loss(logits, label)
    num = numeric_grad(loss, logits)
    return float(np.max(np.abs(ana - num) /
                        np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)))


def check_bce(rep: int) -> float:
    rng = Rng(1100 + rep)
    logits = _uniform(rng.substream("x"), (4,)) * 3.0
    labels = (rng.substream("y").uniform((4,)) < 0.5).astype(np.float64)

    def loss():
        return bce_loss(logits, labels)[0]

    _, ana = bce_loss(logits, labels)
    num = numeric_grad(loss, logits)
    return float(np.max(np.abs(np.asarray(ana, dtype=np.float64) - num) /
                        np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)))


CHECKS = {
    "conv1d": check_conv1d,
    "conv2d": check_conv2d,
    "conv3d": check_conv3d,
    "batchnorm_train": check_batchnorm_train,
    "batchnorm_eval": check_batchnorm_eval,
    "prelu": check_prelu,
    "relu": check_relu,
    "linear": check_linear,
    "maxpool": check_maxpool,
    "avgpool_spatial": check_avgpool_spatial,
    "avgpool_temporal": check_avgpool_temporal,
    "residual_add": check_residual_add,
    "concat": check_concat,
    "ce_loss": check_ce,
    "bce_loss": check_bce,
}


def run_all(reps: int = 20, tolerance: float = TOLERANCE) -> list:
    """Every layer kind, `reps` random instances each.
    Returns [(kind, worst_rel_err, passed)]."""
    results = []
    for kind, fn in CHECKS.items():
        worst = max(fn(rep) for rep in range(reps))
        results.append((kind, worst, worst <= tolerance))
    return results
