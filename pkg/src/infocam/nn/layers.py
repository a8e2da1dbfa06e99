"""Network layers with explicit forward/backward passes.

Every layer consumes and produces batched arrays: ``(B, D)`` for vector
data, ``(B, C, H, W)`` for images.  ``backward`` accumulates parameter
gradients into ``self.grads`` and returns the gradient with respect to the
layer input.  Layers cache whatever the backward pass needs, so a single
layer instance must not be shared between concurrently running networks.
"""

import numpy as np


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def config(self):
        """Shape-defining constructor arguments, for checkpoints."""
        return {}

    def zero_grad(self):
        for k in self.grads:
            self.grads[k][...] = 0.0

    def init_params(self, rng):
        """Xavier-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero bias."""


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, bias=True):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.bias = bias
        self.params = {"w": np.zeros((n_out, n_in))}
        if bias:
            self.params["b"] = np.zeros(n_out)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def init_params(self, rng):
        self.params["w"][...] = _xavier(
            rng, (self.n_out, self.n_in), self.n_in, self.n_out)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(
                f"dense layer expects (B, {self.n_in}) input, got {x.shape}")
        self._x = x
        out = x @ self.params["w"].T
        if self.bias:
            out += self.params["b"]
        return out

    def backward(self, grad):
        self.grads["w"] += grad.T @ self._x
        if self.bias:
            self.grads["b"] += grad.sum(axis=0)
        return grad @ self.params["w"]

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out, "bias": self.bias}


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, c_in, c_out, kernel_size):
        super().__init__()
        self.c_in = c_in
        self.c_out = c_out
        self.k = kernel_size
        self.params = {
            "w": np.zeros((c_out, c_in, self.k, self.k)),
            "b": np.zeros(c_out),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.skip_input_grad = False   # set for a network's first layer
        self._cols = None
        self._in_shape = None

    def init_params(self, rng):
        fan_in = self.c_in * self.k * self.k
        fan_out = self.c_out * self.k * self.k
        self.params["w"][...] = _xavier(
            rng, self.params["w"].shape, fan_in, fan_out)

    def _im2col(self, x):
        # (B, C, H, W) -> (B, oh*ow, C*k*k), valid padding, stride 1
        k = self.k
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        b, c, oh, ow = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)
        return np.ascontiguousarray(cols), oh, ow

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(
                f"conv layer expects (B, {self.c_in}, H, W) input, "
                f"got {x.shape}")
        if x.shape[2] < self.k or x.shape[3] < self.k:
            raise ValueError(
                f"conv kernel {self.k} larger than input {x.shape[2:]}")
        cols, oh, ow = self._im2col(x)
        self._cols = cols
        self._in_shape = x.shape
        wmat = self.params["w"].reshape(self.c_out, -1)
        out = cols.reshape(-1, wmat.shape[1]) @ wmat.T + self.params["b"]
        return out.reshape(x.shape[0], oh, ow, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, grad):
        b, _, oh, ow = grad.shape
        k = self.k
        patch_len = self.c_in * k * k
        gcols = grad.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        cols_flat = self._cols.reshape(-1, patch_len)
        wmat = self.params["w"].reshape(self.c_out, -1)
        self.grads["w"] += (gcols.T @ cols_flat).reshape(
            self.params["w"].shape)
        self.grads["b"] += grad.sum(axis=(0, 2, 3))
        if self.skip_input_grad:
            return None
        gx_cols = (gcols @ wmat).reshape(b, oh, ow, self.c_in, k, k)
        gx = np.zeros(self._in_shape)
        for di in range(k):
            for dj in range(k):
                gx[:, :, di:di + oh, dj:dj + ow] += \
                    gx_cols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        return gx

    def config(self):
        return {"c_in": self.c_in, "c_out": self.c_out,
                "kernel_size": self.k}


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, size):
        super().__init__()
        self.size = size
        self._argmax = None
        self._in_shape = None

    def forward(self, x):
        s = self.size
        b, c, h, w = x.shape
        if h % s or w % s:
            raise ValueError(
                f"maxpool size {s} does not divide spatial dims {(h, w)}")
        oh, ow = h // s, w // s
        windows = np.ascontiguousarray(
            x.reshape(b, c, oh, s, ow, s).transpose(0, 1, 2, 4, 3, 5))
        flat = windows.reshape(-1, s * s)
        self._argmax = flat.argmax(axis=1)  # first max wins ties
        self._in_shape = x.shape
        return flat[np.arange(flat.shape[0]), self._argmax].reshape(
            b, c, oh, ow)

    def backward(self, grad):
        s = self.size
        b, c, oh, ow = grad.shape
        flat = np.zeros((b * c * oh * ow, s * s))
        flat[np.arange(flat.shape[0]), self._argmax] = grad.reshape(-1)
        windows = flat.reshape(b, c, oh, ow, s, s).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(windows).reshape(self._in_shape)

    def config(self):
        return {"size": self.size}


class GlobalAvgPool(Layer):
    """Spatial mean over each feature map: (B, K, H, W) -> (B, K).

    The input to this layer is what the CAM machinery consumes as the
    final feature maps.
    """

    kind = "gap"

    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x):
        if x.ndim != 4:
            raise ValueError(f"GAP expects (B, K, H, W) input, got {x.shape}")
        self._in_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        b, k, h, w = self._in_shape
        return np.broadcast_to(
            grad[:, :, None, None], self._in_shape) / (h * w)


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._in_shape)


LAYER_KINDS = {cls.kind: cls for cls in
               (Dense, ReLU, Conv2d, MaxPool2d, GlobalAvgPool, Flatten)}
