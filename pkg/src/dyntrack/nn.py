"""Minimal deterministic CNN engine: layers with exact forward/backward, loss, SGD.

All feature maps are NCHW float arrays. Every layer caches what its backward
pass needs during forward; one forward/backward pair is in flight per layer
instance at a time. dtype (float32 default, float64 for gradient checking) is
fixed per layer at construction.
"""

import numpy as np


class Param:
    """A trainable tensor: value plus same-shaped gradient accumulator."""

    def __init__(self, value, learnable=True):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.learnable = learnable

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def he_init(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


class Conv2D:
    """2D convolution, NCHW, square kernel, symmetric zero padding."""

    def __init__(self, in_channels, out_channels, ksize, stride=1, pad=0,
                 rng=None, dtype=np.float32):
        if stride < 1 or pad < 0:
            raise ValueError(f"conv2d: stride {stride} / pad {pad} invalid")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.ksize = ksize
        self.stride = stride
        self.pad = pad
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * ksize * ksize
        self.weight = Param(he_init(rng, (out_channels, in_channels, ksize, ksize),
                                    fan_in, dtype))
        self.bias = Param(np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def _windows(self, x_padded, out_h, out_w):
        n, c = x_padded.shape[:2]
        sn, sc, sh, sw = x_padded.strides
        shape = (n, c, out_h, out_w, self.ksize, self.ksize)
        strides = (sn, sc, self.stride * sh, self.stride * sw, sh, sw)
        return np.lib.stride_tricks.as_strided(x_padded, shape, strides)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(
                f"conv2d: input has {c} channels, weights expect {self.in_channels}")
        out_h = _out_size(h, self.ksize, self.stride, self.pad)
        out_w = _out_size(w, self.ksize, self.stride, self.pad)
        if out_h < 1 or out_w < 1:
            raise ValueError(f"conv2d: input {h}x{w} too small for kernel "
                             f"{self.ksize} stride {self.stride} pad {self.pad}")
        if self.pad > 0:
            xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        else:
            xp = x
        windows = self._windows(xp, out_h, out_w)
        out = np.einsum("nchwkl,ockl->nohw", windows, self.weight.value,
                        optimize=True)
        out += self.bias.value[None, :, None, None]
        self._cache = (x.shape, windows)
        return out

    def backward(self, grad_out):
        x_shape, windows = self._cache
        n, c, h, w = x_shape
        out_h, out_w = grad_out.shape[2:]
        self.bias.grad += grad_out.sum(axis=(0, 2, 3))
        self.weight.grad += np.einsum("nchwkl,nohw->ockl", windows, grad_out,
                                      optimize=True)
        # scatter-add per kernel offset; exact for any stride/pad
        gx_pad = np.zeros((n, c, h + 2 * self.pad, w + 2 * self.pad),
                          dtype=grad_out.dtype)
        s = self.stride
        for kh in range(self.ksize):
            for kw in range(self.ksize):
                patch = np.einsum("nohw,oc->nchw", grad_out,
                                  self.weight.value[:, :, kh, kw], optimize=True)
                gx_pad[:, :, kh:kh + s * out_h:s, kw:kw + s * out_w:s] += patch
        if self.pad > 0:
            return gx_pad[:, :, self.pad:self.pad + h, self.pad:self.pad + w]
        return gx_pad


class ReLU:
    """Elementwise max(0, x); subgradient at 0 is 0."""

    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out):
        return grad_out * self._mask


class LRN:
    """Cross-channel local response normalization.

    out_c = in_c * (k + (alpha/n) * sum_{c' in window(c)} in_{c'}^2)^(-beta)
    with window(c) the n channels centered on c, clipped at the edges.
    """

    def __init__(self, n=5, k=2.0, alpha=5e-4, beta=0.75):
        if n < 1 or n % 2 == 0:
            raise ValueError(f"lrn: window size {n} must be odd and >= 1")
        if k <= 0:
            raise ValueError(f"lrn: k must be > 0, got {k}")
        self.n = n
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self._cache = None

    def params(self):
        return []

    def _window_sum(self, t):
        """Sum t over the channel window, per channel."""
        out = np.zeros_like(t)
        half = (self.n - 1) // 2
        channels = t.shape[1]
        for off in range(-half, half + 1):
            lo = max(0, -off)
            hi = min(channels, channels - off)
            out[:, lo:hi] += t[:, lo + off:hi + off]
        return out

    def forward(self, x):
        scale = self.k + (self.alpha / self.n) * self._window_sum(x * x)
        pow_term = scale ** (-self.beta)
        self._cache = (x, scale, pow_term)
        return x * pow_term

    def backward(self, grad_out):
        x, scale, pow_term = self._cache
        inner = grad_out * x * scale ** (-self.beta - 1.0)
        return (grad_out * pow_term
                - 2.0 * self.beta * (self.alpha / self.n) * x * self._window_sum(inner))


class MaxPool2D:
    """Max pooling; gradient routes to the argmax of each window.

    Ties break to the first element in row-major window order.
    """

    def __init__(self, ksize, stride):
        self.ksize = ksize
        self.stride = stride
        self._cache = None

    def params(self):
        return []

    def forward(self, x):
        n, c, h, w = x.shape
        if self.ksize > h or self.ksize > w:
            raise ValueError(f"maxpool: window {self.ksize} exceeds input {h}x{w}")
        out_h = _out_size(h, self.ksize, self.stride, 0)
        out_w = _out_size(w, self.ksize, self.stride, 0)
        sn, sc, sh, sw = x.strides
        shape = (n, c, out_h, out_w, self.ksize, self.ksize)
        strides = (sn, sc, self.stride * sh, self.stride * sw, sh, sw)
        windows = np.lib.stride_tricks.as_strided(x, shape, strides)
        flat = windows.reshape(n, c, out_h, out_w, -1)
        arg = flat.argmax(axis=-1)  # first occurrence wins on ties
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg, out_h, out_w)
        return out

    def backward(self, grad_out):
        x_shape, arg, out_h, out_w = self._cache
        n, c, h, w = x_shape
        grad_in = np.zeros(x_shape, dtype=grad_out.dtype)
        oh, ow = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
        rows = oh[None, None] * self.stride + arg // self.ksize
        cols = ow[None, None] * self.stride + arg % self.ksize
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(grad_in, (ni, ci, rows, cols), grad_out)
        return grad_in


class FC:
    """Fully-connected layer: y = x @ W.T + b over row-vector batches."""

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32,
                 init_std=None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        if init_std is None:
            w = he_init(rng, (out_dim, in_dim), in_dim, dtype)
        else:
            w = (rng.standard_normal((out_dim, in_dim)) * init_std).astype(dtype)
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_dim, dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"fc: input shape {x.shape} does not match weight in_dim {self.in_dim}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out):
        self.weight.grad += grad_out.T @ self._x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value


class Dropout:
    """Inverted dropout: train mode zeroes with probability `rate` and scales
    survivors by 1/(1-rate); inference is the identity."""

    def __init__(self, rate=0.5):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout: rate {rate} outside [0, 1)")
        self.rate = rate
        self._mask = None

    def params(self):
        return []

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout: train mode needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a (n, 2) batch of target/background logits.

    labels holds the true class index per row (1 = target, 0 = background).
    Returns (loss, grad_logits) with grad = (softmax - onehot) / n.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError(f"softmax_cross_entropy: expected (n, 2) logits, got {logits.shape}")
    n = logits.shape[0]
    if n == 0:
        raise ValueError("softmax_cross_entropy: empty batch")
    labels = np.asarray(labels, dtype=np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(probs[rows, labels], 1e-30)).mean())
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / n


class SGD:
    """Classical-momentum SGD with L2 weight decay.

    v <- momentum * v + grad + weight_decay * value
    value <- value - lr * v
    Gradients are zeroed after each step.
    """

    def __init__(self, lr, weight_decay=0.0, momentum=0.9):
        self.lr = lr
        self.weight_decay = weight_decay
        self.momentum = momentum
        self._velocity = {}

    def step(self, params):
        for p in params:
            if not p.learnable:
                continue
            v = self._velocity.get(id(p))
            if v is None:
                v = np.zeros_like(p.value)
                self._velocity[id(p)] = v
            v *= self.momentum
            v += p.grad + self.weight_decay * p.value
            p.value -= self.lr * v
            p.zero_grad()
