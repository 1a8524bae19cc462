"""Layer set used by every model in the package.

Each layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``self.grads`` during ``backward``.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import kernels

LAYER_KINDS = ("dense", "conv2d", "maxpool2x2", "upsample2x2", "relu", "sigmoid", "flatten", "reshape")


class ShapeError(ValueError):
    pass


class NoForwardError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """Architecture entry. ``sizes`` holds the kind-specific integers.

    dense: (in, out); conv2d: (in_channels, filters, kernel); reshape: target
    per-sample shape; the remaining kinds take no sizes.
    """

    kind: str
    sizes: tuple = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and self.sizes[2] % 2 == 0:
            raise ValueError(f"conv2d kernel must be odd-sized, got {self.sizes[2]}")

    def to_json(self):
        return {"kind": self.kind, "sizes": list(self.sizes)}

    @classmethod
    def from_json(cls, d):
        return cls(d["kind"], tuple(d["sizes"]))


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    spec: LayerSpec
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def _pop_cache(self):
        if self._cache is None:
            raise NoForwardError(f"{self.spec.kind}: backward called without a forward pass")
        cache, self._cache = self._cache, None
        return cache

    def infer_shape(self, shape):
        return shape


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("dense", (n_in, n_out))
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=True):
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise ShapeError(f"dense: input shape {x.shape} does not conform to weight shape {W.shape}")
        if train:
            self._cache = x
        return x @ W + b

    def backward(self, dy):
        x = self._pop_cache()
        self.grads["W"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T

    def infer_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.spec.sizes[0]:
            raise ShapeError(f"dense: input shape {shape} does not conform to weight shape {self.params['W'].shape}")
        return (self.spec.sizes[1],)


class Conv2D(Layer):
    """Stride-1 cross-correlation with 'same' zero padding."""

    def __init__(self, in_channels, filters, kernel, rng=None, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("conv2d", (in_channels, filters, kernel))
        rng = rng if rng is not None else np.random.default_rng(0)
        rf = kernel * kernel
        self.params["W"] = glorot_uniform(rng, (filters, in_channels, kernel, kernel),
                                          in_channels * rf, filters * rf, dtype)
        self.params["b"] = np.zeros(filters, dtype=dtype)

    def forward(self, x, train=True):
        W = self.params["W"]
        if x.ndim != 4 or x.shape[1] != W.shape[1]:
            raise ShapeError(f"conv2d: input shape {x.shape} does not conform to filter shape {W.shape}")
        x = np.ascontiguousarray(x)
        if train:
            self._cache = x
        return kernels.conv2d_forward(x, W, self.params["b"])

    def backward(self, dy):
        x = self._pop_cache()
        dx, dw, db = kernels.conv2d_backward(x, self.params["W"], np.ascontiguousarray(dy))
        self.grads["W"] = dw
        self.grads["b"] = db
        return dx

    def infer_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.spec.sizes[0]:
            raise ShapeError(f"conv2d: input shape {shape} does not conform to filter shape {self.params['W'].shape}")
        return (self.spec.sizes[1],) + tuple(shape[1:])


class MaxPool2x2(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("maxpool2x2")

    def forward(self, x, train=True):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"maxpool2x2: spatial dims must be even, got {x.shape[2:]}")
        out, idx = kernels.maxpool2x2_forward(np.ascontiguousarray(x))
        if train:
            self._cache = idx
        return out

    def backward(self, dy):
        idx = self._pop_cache()
        return kernels.maxpool2x2_backward(np.ascontiguousarray(dy), idx)

    def infer_shape(self, shape):
        c, h, w = shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2: spatial dims must be even, got {(h, w)}")
        return (c, h // 2, w // 2)


class Upsample2x2(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("upsample2x2")

    def forward(self, x, train=True):
        if train:
            self._cache = True
        return kernels.upsample2x2_forward(np.ascontiguousarray(x))

    def backward(self, dy):
        self._pop_cache()
        return kernels.upsample2x2_backward(np.ascontiguousarray(dy))

    def infer_shape(self, shape):
        c, h, w = shape
        return (c, 2 * h, 2 * w)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("relu")

    def forward(self, x, train=True):
        mask = x > 0
        if train:
            self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._pop_cache()


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0)


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("sigmoid")

    def forward(self, x, train=True):
        y = sigmoid(x)
        if train:
            self._cache = y
        return y

    def backward(self, dy):
        y = self._pop_cache()
        return dy * y * (1 - y)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec("flatten")

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._pop_cache())

    def infer_shape(self, shape):
        return (int(np.prod(shape)),)


class Reshape(Layer):
    def __init__(self, *shape):
        super().__init__()
        self.spec = LayerSpec("reshape", tuple(shape))

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.reshape((x.shape[0],) + self.spec.sizes)

    def backward(self, dy):
        return dy.reshape(self._pop_cache())

    def infer_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.spec.sizes)):
            raise ShapeError(f"reshape: cannot view {shape} as {self.spec.sizes}")
        return self.spec.sizes


def make_layer(spec, rng=None, dtype=np.float32):
    if spec.kind == "dense":
        return Dense(*spec.sizes, rng=rng, dtype=dtype)
    if spec.kind == "conv2d":
        return Conv2D(*spec.sizes, rng=rng, dtype=dtype)
    simple = {"maxpool2x2": MaxPool2x2, "upsample2x2": Upsample2x2, "relu": ReLU,
              "sigmoid": Sigmoid, "flatten": Flatten}
    if spec.kind == "reshape":
        return Reshape(*spec.sizes)
    return simple[spec.kind]()


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def dense_forward(x, W, b):
    """y = xW + b, no activation."""
    x, W, b = np.asarray(x), np.asarray(W), np.asarray(b)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: input shape {x.shape} does not conform to weight shape {W.shape} "
                         f"(bias {b.shape})")
    return x @ W + b


def conv2d_forward(x, filters, bias):
    if filters.shape[2] % 2 == 0:
        raise ValueError("conv2d kernel must be odd-sized")
    if x.shape[1] != filters.shape[1]:
        raise ShapeError(f"conv2d: input shape {x.shape} does not conform to filter shape {filters.shape}")
    return kernels.conv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(filters), bias)


def maxpool2x2(x):
    x = np.asarray(x)
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"maxpool2x2: spatial dims must be even, got {x.shape[-2:]}")
    x4 = x.reshape((-1, 1) + x.shape[-2:])
    out, _ = kernels.maxpool2x2_forward(np.ascontiguousarray(x4))
    return out.reshape(x.shape[:-2] + out.shape[-2:])


def upsample2x2(x):
    x = np.asarray(x)
    x4 = x.reshape((-1, 1) + x.shape[-2:])
    out = kernels.upsample2x2_forward(np.ascontiguousarray(x4))
    return out.reshape(x.shape[:-2] + out.shape[-2:])
