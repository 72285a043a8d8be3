"""Central-difference gradient verification for every differentiable op.

Each check builds a small 64-bit computation, projects the op output to a
scalar with a fixed random weighting, and compares tape gradients against
central differences (h = 1e-3). Inputs are constructed away from ReLU /
maxpool / |.| kinks so the comparison is well posed.

The error measure is max over coordinates of |analytic - numeric| divided
by max(|analytic| + |numeric|, 1), i.e. relative for O(1) gradients and
absolute below that.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .rng import Rng

H_STEP = 1e-3
OP_THRESHOLD = 1e-6
NETWORK_THRESHOLD = 1e-5


def numeric_gradients(f: Callable[[Sequence[np.ndarray]], float],
                      arrays: Sequence[np.ndarray], h: float = H_STEP) -> list[np.ndarray]:
    """Central differences of a scalar function, per input coordinate."""
    grads = []
    arrays = [a.copy() for a in arrays]
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: Sequence[np.ndarray],
                       numeric: Sequence[np.ndarray]) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1.0)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_op(build: Callable[..., T.Tensor], arrays: Sequence[np.ndarray],
             h: float = H_STEP) -> float:
    """Max relative error of tape gradients vs central differences.

    ``build`` maps input Tensors to the op output; the scalar objective is
    a fixed random projection of that output.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    probe = build(*[T.Tensor(a, np.float64) for a in arrays])
    proj = Rng(4242).normal(probe.data.size).reshape(probe.shape)

    def scalar(arrs) -> float:
        out = build(*[T.Tensor(a, np.float64) for a in arrs])
        return float((out.data * proj).sum())

    tensors = [T.Tensor(a, np.float64) for a in arrays]
    with T.Tape() as tape:
        out = build(*tensors)
        loss = T.tensor_sum(T.mul(out, T.Tensor(proj, np.float64)))
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_gradients(scalar, arrays, h)
    return max_relative_error(analytic, numeric)


def _off_kink_normal(rng: Rng, n: int, margin: float = 0.1) -> np.ndarray:
    """Normal draws pushed away from zero by ``margin``."""
    x = rng.normal(n)
    return x + margin * np.sign(x)


def _op_check_suite() -> list[tuple[str, Callable[[], float]]]:
    def elementwise_case(kind):
        def run():
            rng = Rng(11)
            a = rng.normal(24).reshape(2, 3, 4)
            b = rng.normal(24).reshape(2, 3, 4)
            return check_op(lambda x, y: T.elementwise(kind, x, y), [a, b])
        return run

    def broadcast_add():
        rng = Rng(12)
        a = rng.normal(24).reshape(2, 3, 4)
        b = rng.normal(4)
        return check_op(T.add, [a, b])

    def conv():
        rng = Rng(13)
        x = rng.normal(2 * 3 * 5 * 5).reshape(2, 3, 5, 5)
        w = rng.normal(4 * 3 * 3 * 3).reshape(4, 3, 3, 3)
        b = rng.normal(4)
        return check_op(lambda x_, w_, b_: T.conv2d(x_, w_, b_, stride=1, pad=1),
                        [x, w, b])

    def conv_strided():
        rng = Rng(14)
        x = rng.normal(1 * 2 * 6 * 7).reshape(1, 2, 6, 7)
        w = rng.normal(3 * 2 * 3 * 3).reshape(3, 2, 3, 3)
        b = rng.normal(3)
        return check_op(lambda x_, w_, b_: T.conv2d(x_, w_, b_, stride=2, pad=1),
                        [x, w, b])

    def depthwise():
        rng = Rng(15)
        x = rng.normal(2 * 3 * 5 * 6).reshape(2, 3, 5, 6)
        w = rng.normal(3 * 9).reshape(3, 1, 3, 3)
        return check_op(lambda x_, w_: T.depthwise_conv2d(x_, w_, stride=1, pad=1),
                        [x, w])

    def relu_check():
        rng = Rng(16)
        x = _off_kink_normal(rng, 24).reshape(2, 3, 4)
        return check_op(T.relu, [x])

    def batchnorm():
        rng = Rng(17)
        x = rng.normal(2 * 3 * 4 * 4).reshape(2, 3, 4, 4)
        gamma = 1.0 + 0.1 * rng.normal(3)
        beta = 0.1 * rng.normal(3)

        def build(x_, g_, b_):
            state = T.RunningStats(3, dtype=np.float64)
            return T.batchnorm2d(x_, g_, b_, state, mode="train")
        return check_op(build, [x, gamma, beta])

    def maxpool():
        # 3x scale keeps window maxima separated well beyond the step size
        rng = Rng(18)
        x = 3.0 * rng.normal(2 * 2 * 6 * 6).reshape(2, 2, 6, 6)
        return check_op(lambda x_: T.maxpool2d(x_, 2, 2), [x])

    def maxpool_overlap():
        rng = Rng(19)
        x = 3.0 * rng.normal(1 * 2 * 5 * 5).reshape(1, 2, 5, 5)
        return check_op(lambda x_: T.maxpool2d(x_, 3, 1, 1), [x])

    def gap():
        rng = Rng(20)
        x = rng.normal(2 * 3 * 4 * 5).reshape(2, 3, 4, 5)
        return check_op(T.global_avg_pool, [x])

    def dense_check():
        rng = Rng(21)
        x = rng.normal(2 * 3).reshape(2, 3)
        w = rng.normal(4 * 3).reshape(4, 3)
        b = rng.normal(4)
        return check_op(T.dense, [x, w, b])

    def concat():
        rng = Rng(22)
        a = rng.normal(2 * 2 * 3 * 3).reshape(2, 2, 3, 3)
        b = rng.normal(2 * 3 * 3 * 3).reshape(2, 3, 3, 3)
        return check_op(lambda a_, b_: T.concat_channels([a_, b_]), [a, b])

    def residual():
        rng = Rng(23)
        a = rng.normal(2 * 3 * 2 * 2).reshape(2, 3, 2, 2)
        b = rng.normal(2 * 3 * 2 * 2).reshape(2, 3, 2, 2)
        return check_op(T.residual_add, [a, b])

    def mae():
        rng = Rng(24)
        pred = rng.normal(4 * 27).reshape(4, 27)
        target = pred + _off_kink_normal(rng, 4 * 27, margin=0.2).reshape(4, 27)
        return check_op(lambda p, t: T.mae_loss(p, t), [pred, target])

    def sum_check():
        rng = Rng(25)
        x = rng.normal(30).reshape(5, 6)
        return check_op(T.tensor_sum, [x])

    return [
        ("elementwise_add", elementwise_case("add")),
        ("elementwise_sub", elementwise_case("sub")),
        ("elementwise_mul", elementwise_case("mul")),
        ("broadcast_add", broadcast_add),
        ("conv2d", conv),
        ("conv2d_strided", conv_strided),
        ("depthwise_conv2d", depthwise),
        ("relu", relu_check),
        ("batchnorm2d", batchnorm),
        ("maxpool2d", maxpool),
        ("maxpool2d_overlap", maxpool_overlap),
        ("global_avg_pool", gap),
        ("dense", dense_check),
        ("concat_channels", concat),
        ("residual_add", residual),
        ("mae_loss", mae),
        ("sum", sum_check),
    ]


def check_mini_network() -> float:
    """End-to-end check of a ~200-parameter network touching every op."""
    rng = Rng(99)

    def p(*shape):
        return rng.normal(int(np.prod(shape))).reshape(shape) * 0.5

    params = [
        p(4, 2, 3, 3), p(4),        # conv1 w, b
        1.0 + 0.1 * p(4), 0.1 * p(4),  # bn gamma, beta
        p(4, 1, 3, 3),              # depthwise w
        p(4, 4, 1, 1), p(4),        # pointwise w, b
        p(8, 8), p(8),              # fc1
        p(3, 8), p(3),              # fc2
    ]
    x_in = rng.normal(1 * 2 * 8 * 8).reshape(1, 2, 8, 8)
    target = np.abs(rng.normal(3)).reshape(1, 3) + 0.5

    def build(*ts):
        (cw, cb, gamma, beta, dww, pww, pwb, w1, b1, w2, b2) = ts
        x = T.Tensor(x_in, np.float64)
        state = T.RunningStats(4, dtype=np.float64)
        y = T.conv2d(x, cw, cb, stride=1, pad=1)
        y = T.relu(T.batchnorm2d(y, gamma, beta, state, mode="train"))
        z = T.conv2d(T.depthwise_conv2d(y, dww, stride=1, pad=1), pww, pwb)
        y = T.residual_add(y, z)
        y = T.maxpool2d(y, 2, 2)
        y = T.concat_channels([y, y])
        feats = T.global_avg_pool(y)
        h = T.relu(T.dense(feats, w1, b1))
        out = T.relu(T.dense(h, w2, b2))
        return T.mae_loss(out, T.Tensor(target, np.float64), k=3)

    def scalar(arrs) -> float:
        return build(*[T.Tensor(a, np.float64) for a in arrs]).item()

    tensors = [T.Tensor(a, np.float64) for a in params]
    with T.Tape() as tape:
        loss = build(*tensors)
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_gradients(scalar, params)
    return max_relative_error(analytic, numeric)


def run_all(checks=None) -> list[tuple[str, float, float, bool]]:
    """Run the suite; returns (name, max_rel_err, threshold, passed) rows."""
    if checks is None:
        checks = [(name, fn, OP_THRESHOLD) for name, fn in _op_check_suite()]
        checks.append(("mini_network_end_to_end", check_mini_network, NETWORK_THRESHOLD))
    results = []
    for name, fn, threshold in checks:
        err = fn()
        results.append((name, err, threshold, err < threshold))
    return results
