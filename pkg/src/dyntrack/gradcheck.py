"""Finite-difference verification of every backward pass.

Each component check builds a random double-precision instance, compares its
analytic gradients against central differences (h = 1e-5), and reports the
worst elementwise error |a - b| / max(|a|, |b|, 1). Inputs for kinked
operations (ReLU, max pooling, the max reduction in the RoI operators) are
generated with value gaps far larger than h so the finite differences never
cross a kink.
"""

import zlib

import numpy as np

from .nn import FC, LRN, Conv2D, MaxPool2D, ReLU, softmax_cross_entropy
from .roi import (roialign_backward, roialign_forward, roipool_backward,
                  roipool_forward)

FD_STEP = 1e-5
TOLERANCE = 1e-4


def central_diff(f, x, h=FD_STEP):
    """Central finite differences of scalar f w.r.t. every element of x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def worst_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _gapped(rng, shape, gap=1e-3):
    """Values with pairwise distance >= gap, in random order and sign."""
    n = int(np.prod(shape))
    vals = (np.arange(n, dtype=np.float64) - n / 2) * gap * 3.0
    vals += rng.uniform(0.3, 0.7)
    return rng.permutation(vals).reshape(shape)


def check_conv(rng):
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    x = rng.standard_normal((1, 2, 6, 6))
    conv = Conv2D(2, 3, 3, stride=stride, pad=pad, rng=rng, dtype=np.float64)
    proj = rng.standard_normal(conv.forward(x).shape)

    def loss():
        return float((conv.forward(x) * proj).sum())

    conv.forward(x)
    gx = conv.backward(proj)
    return max(worst_error(gx, central_diff(loss, x)),
               worst_error(conv.weight.grad, central_diff(loss, conv.weight.value)),
               worst_error(conv.bias.grad, central_diff(loss, conv.bias.value)))


def check_relu(rng):
    x = _gapped(rng, (2, 3, 4, 4))
    relu = ReLU()
    proj = rng.standard_normal(x.shape)

    def loss():
        return float((relu.forward(x) * proj).sum())

    relu.forward(x)
    return worst_error(relu.backward(proj), central_diff(loss, x))


def check_lrn(rng):
    x = rng.standard_normal((1, 6, 3, 3))
    lrn = LRN(n=5, k=2.0, alpha=5e-4, beta=0.75)
    proj = rng.standard_normal(x.shape)

    def loss():
        return float((lrn.forward(x) * proj).sum())

    lrn.forward(x)
    return worst_error(lrn.backward(proj), central_diff(loss, x))


def check_maxpool(rng):
    x = _gapped(rng, (1, 2, 7, 7))
    pool = MaxPool2D(3, 2)
    proj = rng.standard_normal(pool.forward(x).shape)

    def loss():
        return float((pool.forward(x) * proj).sum())

    pool.forward(x)
    return worst_error(pool.backward(proj), central_diff(loss, x))


def check_fc(rng):
    fc = FC(6, 4, rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 6))
    proj = rng.standard_normal((3, 4))

    def loss():
        return float((fc.forward(x) * proj).sum())

    fc.forward(x)
    gx = fc.backward(proj)
    return max(worst_error(gx, central_diff(loss, x)),
               worst_error(fc.weight.grad, central_diff(loss, fc.weight.value)),
               worst_error(fc.bias.grad, central_diff(loss, fc.bias.value)))


def check_softmax_ce(rng):
    logits = rng.standard_normal((6, 2))
    labels = rng.integers(0, 2, size=6)

    def loss():
        return softmax_cross_entropy(logits, labels)[0]

    _, grad = softmax_cross_entropy(logits, labels)
    return worst_error(grad, central_diff(loss, logits))


def _random_roi(rng, h, w):
    x1 = rng.uniform(0.0, w - 3.0)
    y1 = rng.uniform(0.0, h - 3.0)
    return np.array([x1, y1, x1 + rng.uniform(2.0, w - 1 - x1),
                     y1 + rng.uniform(2.0, h - 1 - y1)])


def check_roialign(rng):
    fm = _gapped(rng, (2, 6, 6))
    roi = _random_roi(rng, 6, 6)
    pooled, cache = roialign_forward(fm, roi[None])
    proj = rng.standard_normal(pooled.shape)

    def loss():
        return float((roialign_forward(fm, roi[None])[0] * proj).sum())

    grad_fm = roialign_backward(proj, cache)
    return worst_error(grad_fm, central_diff(loss, fm))


def check_roipool(rng):
    fm = _gapped(rng, (2, 7, 7))
    roi = _random_roi(rng, 7, 7)
    pooled, cache = roipool_forward(fm, roi[None])
    proj = rng.standard_normal(pooled.shape)

    def loss():
        return float((roipool_forward(fm, roi[None])[0] * proj).sum())

    grad_fm = roipool_backward(proj, cache)
    return worst_error(grad_fm, central_diff(loss, fm))


def check_fc_pipeline(rng):
    """End-to-end FC path: pooled features -> fc -> relu -> fc -> head -> CE,
    the exact stack updated during online tracking."""
    fc4 = FC(12, 8, rng=rng, dtype=np.float64)
    fc5 = FC(8, 8, rng=rng, dtype=np.float64)
    head = FC(8, 2, rng=rng, dtype=np.float64)
    relu4, relu5 = ReLU(), ReLU()
    feats = rng.standard_normal((3, 12))
    labels = rng.integers(0, 2, size=3)

    def forward():
        h = relu4.forward(fc4.forward(feats))
        h = relu5.forward(fc5.forward(h))
        return softmax_cross_entropy(head.forward(h), labels)

    def loss():
        return forward()[0]

    _, grad = forward()
    g = head.backward(grad)
    g = fc5.backward(relu5.backward(g))
    fc4.backward(relu4.backward(g))
    worst = 0.0
    for layer in (fc4, fc5, head):
        worst = max(worst,
                    worst_error(layer.weight.grad,
                                central_diff(loss, layer.weight.value)),
                    worst_error(layer.bias.grad,
                                central_diff(loss, layer.bias.value)))
    return worst


COMPONENTS = {
    "conv2d": check_conv,
    "relu": check_relu,
    "lrn": check_lrn,
    "maxpool": check_maxpool,
    "fc": check_fc,
    "softmax_ce": check_softmax_ce,
    "roialign": check_roialign,
    "roipool": check_roipool,
    "fc_pipeline": check_fc_pipeline,
}


def run_all(seed=0, instances=20, tolerance=TOLERANCE):
    """Worst finite-difference error per component over `instances` random
    instances each. Returns (results dict, all_passed flag)."""
    results = {}
    for name, check in COMPONENTS.items():
        rng = np.random.default_rng((seed, zlib.crc32(name.encode())))
        results[name] = max(check(rng) for _ in range(instances))
    return results, all(err < tolerance for err in results.values())
