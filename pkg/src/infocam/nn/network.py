"""Sequential network container, checkpoints, and architecture parsing.

A network is an ordered layer stack ending in a dense classification layer.
Localization-capable networks place a :class:`GlobalAvgPool` directly before
that final dense layer; the final dense layer never carries a bias, so the
class logit equals the weighted sum of pooled feature maps and the CAM
full-grid sum identity holds exactly.
"""

import io
import json

import numpy as np

from .layers import (LAYER_KINDS, Conv2d, Dense, Flatten, GlobalAvgPool,
                     MaxPool2d, ReLU)

CHECKPOINT_VERSION = 1


class Network:
    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self._forward_done = False
        dense = [l for l in self.layers if isinstance(l, Dense)]
        if not dense:
            raise ValueError("network must end in a dense layer")
        if self.layers[-1] is not dense[-1]:
            raise ValueError("last layer must be the classification dense layer")
        if dense[-1].bias:
            raise ValueError("final dense layer must not carry a bias term")
        self._gap_index = next(
            (i for i, l in enumerate(self.layers)
             if isinstance(l, GlobalAvgPool)), None)
        if isinstance(self.layers[0], Conv2d):
            self.layers[0].skip_input_grad = True
        self._fmaps = None

    @property
    def num_classes(self):
        return self.layers[-1].n_out

    @property
    def final_weights(self):
        """Weight matrix of the classification layer, shape (M, K)."""
        return self.layers[-1].params["w"]

    @property
    def has_gap_head(self):
        return (self._gap_index is not None
                and self._gap_index == len(self.layers) - 2)

    def init_params(self, seed):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        for layer in self.layers:
            layer.init_params(rng)
        return self

    def forward_batch(self, x):
        """Run the stack on a batch; returns (logits, feature_maps or None).

        Feature maps are the activations entering the GAP layer, shape
        (B, K, H, W).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(
                f"input shape {x.shape[1:]} does not match network input "
                f"shape {self.input_shape}")
        self._fmaps = None
        for i, layer in enumerate(self.layers):
            if i == self._gap_index:
                self._fmaps = x
            try:
                x = layer.forward(x)
            except ValueError as exc:
                raise ValueError(
                    f"layer {i} ({layer.kind}): {exc}") from exc
        self._forward_done = True
        return x, self._fmaps

    def backward_batch(self, loss_grad):
        """Reverse pass filling parameter gradients, from d(loss)/d(logits)."""
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        g = np.asarray(loss_grad, dtype=np.float64)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def param_items(self):
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield f"layer{i}.{name}", layer.params[name], layer.grads[name]

    def descriptors(self):
        return [{"kind": l.kind, **l.config()} for l in self.layers]

    def copy(self):
        clone = build_network(self.descriptors(), self.input_shape)
        for (_, dst, _), (_, src, _) in zip(clone.param_items(),
                                            self.param_items()):
            dst[...] = src
        return clone


def forward(net, x):
    """Single-sample forward pass: returns (logits (M,), fmaps (K,H,W)|None)."""
    x = np.asarray(x, dtype=np.float64)
    logits, fmaps = net.forward_batch(x[None])
    return logits[0], None if fmaps is None else fmaps[0]


def backward(net, x, loss_grad):
    """Single-sample reverse pass; forward(net, x) must have run first."""
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (net.num_classes,):
        raise ValueError(
            f"loss_grad shape {loss_grad.shape} does not match logits "
            f"shape ({net.num_classes},)")
    return net.backward_batch(loss_grad[None])


def build_network(descriptors, input_shape, seed=None):
    """Construct a network from layer descriptors (dicts or a spec string).

    String specs are comma-separated: ``conv:16x3`` (16 filters, 3x3),
    ``pool:2``, ``relu``, ``gap``, ``flatten``, ``dense:64``,
    ``dense:10:nobias``.  The final dense layer is always bias-free
    regardless of spelling.  Dense/conv input widths are inferred from
    ``input_shape``.
    """
    if isinstance(descriptors, str):
        descriptors = parse_arch(descriptors)
    layers = []
    shape = tuple(input_shape)
    for i, d in enumerate(descriptors):
        kind = d["kind"]
        is_last = i == len(descriptors) - 1
        if kind == "dense":
            if len(shape) != 1:
                raise ValueError(
                    f"dense layer {i} needs flat input, got shape {shape}; "
                    f"insert flatten or gap")
            n_in = d.get("n_in", shape[0])
            bias = d.get("bias", not is_last)
            if is_last:
                bias = False
            layers.append(Dense(n_in, d["n_out"], bias=bias))
            shape = (d["n_out"],)
        elif kind == "conv":
            if len(shape) != 3:
                raise ValueError(
                    f"conv layer {i} needs (C, H, W) input, got shape {shape}")
            c_in = d.get("c_in", shape[0])
            k = d["kernel_size"]
            layers.append(Conv2d(c_in, d["c_out"], k))
            shape = (d["c_out"], shape[1] - k + 1, shape[2] - k + 1)
        elif kind == "maxpool":
            s = d["size"]
            layers.append(MaxPool2d(s))
            shape = (shape[0], shape[1] // s, shape[2] // s)
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "gap":
            layers.append(GlobalAvgPool())
            shape = (shape[0],)
        elif kind == "flatten":
            layers.append(Flatten())
            shape = (int(np.prod(shape)),)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    net = Network(layers, input_shape)
    if seed is not None:
        net.init_params(seed)
    return net


def parse_arch(spec):
    descriptors = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        parts = token.split(":")
        name = parts[0]
        if name == "dense":
            d = {"kind": "dense", "n_out": int(parts[1])}
            if len(parts) > 2 and parts[2] == "nobias":
                d["bias"] = False
            descriptors.append(d)
        elif name == "conv":
            c_out, k = parts[1].split("x")
            descriptors.append({"kind": "conv", "c_out": int(c_out),
                                "kernel_size": int(k)})
        elif name == "pool":
            descriptors.append({"kind": "maxpool", "size": int(parts[1])})
        elif name in ("relu", "gap", "flatten"):
            descriptors.append({"kind": name})
        else:
            raise ValueError(f"unknown architecture token {token!r}")
    return descriptors


def save_checkpoint(net, path):
    """Versioned checkpoint: JSON metadata + exact float64 parameter dump."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": net.descriptors(),
    }
    arrays = {name: p for name, p, _ in net.param_items()}
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta['version']}")
        net = build_network(meta["layers"], tuple(meta["input_shape"]))
        for name, p, _ in net.param_items():
            p[...] = z[name]
    return net
