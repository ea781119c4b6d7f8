"""A small trainable convolutional network, built on numpy.

One engine serves three roles: the patch-confidence scorer, the
fine-grained classifier, and the feature extractor for part patches.
Training is plain SGD with momentum, fully deterministic for a fixed seed;
the backward pass is validated against central finite differences.

Layout conventions: images and activations are NHWC, conv kernels are
(kh, kw, c_in, c_out), fc weights are (d_in, d_out). All float64. Pixel
inputs are centered with to_net_input before they reach a network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import softmax_rows

__all__ = [
    "Conv",
    "Relu",
    "MaxPool",
    "Fc",
    "Softmax",
    "NetworkSpec",
    "Network",
    "ForwardTrace",
    "TrainConfig",
    "mini_domainnet_spec",
    "small_filternet_spec",
    "init_network",
    "zero_network",
    "to_net_input",
    "forward",
    "forward_batch",
    "predict_batch",
    "loss_and_gradients",
    "train",
    "extract_feature",
    "extract_features_batch",
    "pack_params",
    "unpack_params",
    "save_net",
    "load_net",
]

MAGIC = b"TLAN1"


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class Fc:
    out_units: int


@dataclass(frozen=True)
class Softmax:
    pass


Layer = Conv | Relu | MaxPool | Fc | Softmax


@dataclass(frozen=True)
class NetworkSpec:
    """Layer list plus input dims; shapes are propagated and checked eagerly.

    part_layer designates the conv layer whose filters the part-level
    attention clusters; it defaults to the last conv layer.
    """

    input_shape: tuple[int, int, int]  # (H, W, C)
    layers: tuple[Layer, ...]
    part_layer: int | None = None
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shapes = []
        shape = tuple(self.input_shape)
        if len(shape) != 3 or any(d < 1 for d in shape):
            raise ValueError(f"bad input shape {shape}")
        conv_indices = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv needs a spatial input")
                h, w, _ = shape
                oh = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
                ow = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
                if oh < 1 or ow < 1:
                    raise ValueError(f"layer {i}: conv output collapses to {oh}x{ow}")
                shape = (oh, ow, layer.out_channels)
                conv_indices.append(i)
            elif isinstance(layer, Relu):
                pass
            elif isinstance(layer, MaxPool):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: maxpool needs a spatial input")
                h, w, c = shape
                if h < layer.kernel or w < layer.kernel:
                    raise ValueError(f"layer {i}: pool kernel exceeds input {h}x{w}")
                oh = (h - layer.kernel) // layer.stride + 1
                ow = (w - layer.kernel) // layer.stride + 1
                shape = (oh, ow, c)
            elif isinstance(layer, Fc):
                shape = (layer.out_units,)
            elif isinstance(layer, Softmax):
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: softmax needs a flat input")
                if i != len(self.layers) - 1:
                    raise ValueError("softmax must be the last layer")
            else:
                raise ValueError(f"layer {i}: unknown layer {layer!r}")
            shapes.append(shape)
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ValueError("spec must end with exactly one softmax layer")
        if sum(isinstance(l, Softmax) for l in self.layers) != 1:
            raise ValueError("spec must contain exactly one softmax layer")
        if not conv_indices:
            raise ValueError("spec needs at least one conv layer")
        part = self.part_layer if self.part_layer is not None else conv_indices[-1]
        if part not in conv_indices:
            raise ValueError(f"part_layer {part} is not a conv layer")
        object.__setattr__(self, "part_layer", part)
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def class_count(self) -> int:
        return self.shapes[-1][0]

    def fan_in(self, i: int) -> int:
        prev = self.input_shape if i == 0 else self.shapes[i - 1]
        layer = self.layers[i]
        if isinstance(layer, Conv):
            return layer.kernel * layer.kernel * prev[2]
        if isinstance(layer, Fc):
            return int(np.prod(prev))
        raise ValueError("fan_in only defined for conv/fc")


@dataclass
class Network:
    spec: NetworkSpec
    weights: list  # per layer: (kernel, bias) for conv, (W, b) for fc, else None


@dataclass
class ForwardTrace:
    """Per-layer activations for a single input; the last one is the softmax."""

    activations: list

    @property
    def probs(self) -> np.ndarray:
        return self.activations[-1]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 10
    batch: int = 32
    seed: int = 0
    weight_decay: float = 0.0


def mini_domainnet_spec(classes: int, input_size: int = 64) -> NetworkSpec:
    """Desk-scale classifier: four conv stages, two fc, square color input.

    The third conv layer is the designated part layer; it is mid-depth with a
    receptive field that covers a recognizable chunk of the input, which is
    what part-level clustering needs.
    """
    layers = (
        Conv(16, 3, 1, 1),
        Relu(),
        MaxPool(2, 2),
        Conv(16, 3, 1, 1),
        Relu(),
        MaxPool(2, 2),
        Conv(32, 3, 1, 1),  # part layer
        Relu(),
        Conv(32, 3, 1, 1),
        Relu(),
        MaxPool(2, 2),
        Fc(64),
        Relu(),
        Fc(classes),
        Softmax(),
    )
    return NetworkSpec((input_size, input_size, 3), layers, part_layer=6)


def small_filternet_spec(classes: int, input_size: int = 32) -> NetworkSpec:
    """Light patch scorer used for object-level selection."""
    layers = (
        Conv(8, 3, 1, 1),
        Relu(),
        MaxPool(2, 2),
        Conv(16, 3, 1, 1),
        Relu(),
        MaxPool(2, 2),
        Conv(16, 3, 1, 1),
        Relu(),
        MaxPool(2, 2),
        Fc(32),
        Relu(),
        Fc(classes),
        Softmax(),
    )
    return NetworkSpec((input_size, input_size, 3), layers)


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """He-normal kernels, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    weights = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            prev_c = (spec.input_shape if i == 0 else spec.shapes[i - 1])[2]
            std = np.sqrt(2.0 / spec.fan_in(i))
            k = rng.normal(0.0, std, (layer.kernel, layer.kernel, prev_c, layer.out_channels))
            weights.append((k, np.zeros(layer.out_channels)))
        elif isinstance(layer, Fc):
            d_in = spec.fan_in(i)
            std = np.sqrt(2.0 / d_in)
            w = rng.normal(0.0, std, (d_in, layer.out_units))
            weights.append((w, np.zeros(layer.out_units)))
        else:
            weights.append(None)
    return Network(spec, weights)


def zero_network(spec: NetworkSpec) -> Network:
    weights = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            prev_c = (spec.input_shape if i == 0 else spec.shapes[i - 1])[2]
            weights.append(
                (
                    np.zeros((layer.kernel, layer.kernel, prev_c, layer.out_channels)),
                    np.zeros(layer.out_channels),
                )
            )
        elif isinstance(layer, Fc):
            weights.append((np.zeros((spec.fan_in(i), layer.out_units)), np.zeros(layer.out_units)))
        else:
            weights.append(None)
    return Network(spec, weights)


def to_net_input(pixels) -> np.ndarray:
    """Map 8-bit-range pixel values to the centered range the nets train on.

    Inputs live in [-0.5, 0.5]; centering keeps the early relu layers from
    dying on all-positive images, which otherwise traps small nets at the
    uniform-prediction plateau.
    """
    return np.asarray(pixels, dtype=np.float64) / 255.0 - 0.5


def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    # (N, OH, OW, C, k, k) view, strided; caller reshapes
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    return win[:, ::stride, ::stride]


def _conv_forward(x, layer: Conv, kernel, bias):
    n = x.shape[0]
    k, s = layer.kernel, layer.stride
    win = _im2col(x, k, s, layer.pad)
    oh, ow = win.shape[1], win.shape[2]
    cols = win.reshape(n * oh * ow, -1)  # window layout (C, kh, kw)
    kmat = kernel.transpose(2, 0, 1, 3).reshape(cols.shape[1], -1)
    out = cols @ kmat + bias
    return out.reshape(n, oh, ow, -1), cols


def _conv_backward(dout, x_shape, layer: Conv, kernel, cols):
    n, h, w, c = x_shape
    k, s, p = layer.kernel, layer.stride, layer.pad
    oh, ow = dout.shape[1], dout.shape[2]
    dflat = dout.reshape(n * oh * ow, -1)
    kmat = kernel.transpose(2, 0, 1, 3).reshape(cols.shape[1], -1)
    dkmat = cols.T @ dflat
    dkernel = dkmat.reshape(c, k, k, -1).transpose(1, 2, 0, 3)
    dbias = dflat.sum(axis=0)
    dcols = (dflat @ kmat.T).reshape(n, oh, ow, c, k, k)
    dpad = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for ki in range(k):
        for kj in range(k):
            dpad[:, ki : ki + s * (oh - 1) + 1 : s, kj : kj + s * (ow - 1) + 1 : s] += dcols[
                :, :, :, :, ki, kj
            ]
    dx = dpad[:, p : p + h, p : p + w] if p else dpad
    return dx, dkernel, dbias


def _pool_forward(x, layer: MaxPool):
    n, h, w, c = x.shape
    k, s = layer.kernel, layer.stride
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    oh, ow = win.shape[1], win.shape[2]
    flat = win.reshape(n, oh, ow, c, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, x_shape, layer: MaxPool, idx):
    n, h, w, c = x_shape
    k, s = layer.kernel, layer.stride
    oh, ow = dout.shape[1], dout.shape[2]
    dflat = np.zeros((n, oh, ow, c, k * k))
    np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
    dwin = dflat.reshape(n, oh, ow, c, k, k)
    dx = np.zeros(x_shape)
    for ki in range(k):
        for kj in range(k):
            dx[:, ki : ki + s * (oh - 1) + 1 : s, kj : kj + s * (ow - 1) + 1 : s] += dwin[
                :, :, :, :, ki, kj
            ]
    return dx


def _check_input(net: Network, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 3:
        xs = xs[None]
    if xs.shape[1:] != net.spec.input_shape:
        raise ValueError(
            f"input shape {xs.shape[1:]} does not match spec input {net.spec.input_shape}"
        )
    return xs


def forward_batch(net: Network, xs, upto_layer: int | None = None) -> np.ndarray:
    """Run a batch through the net, returning the output of upto_layer
    (default: the final softmax probabilities)."""
    xs = _check_input(net, xs)
    last = len(net.spec.layers) - 1 if upto_layer is None else upto_layer
    x = xs
    for i, layer in enumerate(net.spec.layers[: last + 1]):
        if isinstance(layer, Conv):
            x, _ = _conv_forward(x, layer, *net.weights[i])
        elif isinstance(layer, Relu):
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool):
            x, _ = _pool_forward(x, layer)
        elif isinstance(layer, Fc):
            w, b = net.weights[i]
            x = x.reshape(x.shape[0], -1) @ w + b
        elif isinstance(layer, Softmax):
            x = softmax_rows(x)
    return x


def predict_batch(net: Network, xs) -> np.ndarray:
    return forward_batch(net, xs)


def forward(net: Network, img) -> ForwardTrace:
    """Full per-layer trace for one image."""
    xs = _check_input(net, img)
    if xs.shape[0] != 1:
        raise ValueError("forward takes a single image; use forward_batch")
    acts = []
    x = xs
    for i, layer in enumerate(net.spec.layers):
        if isinstance(layer, Conv):
            x, _ = _conv_forward(x, layer, *net.weights[i])
        elif isinstance(layer, Relu):
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool):
            x, _ = _pool_forward(x, layer)
        elif isinstance(layer, Fc):
            w, b = net.weights[i]
            x = x.reshape(x.shape[0], -1) @ w + b
        elif isinstance(layer, Softmax):
            x = softmax_rows(x)
        acts.append(x[0])
    return ForwardTrace(activations=acts)


def loss_and_gradients(net: Network, xs, ys):
    """Mean cross-entropy over the batch plus backprop gradients.

    Returns (loss, grads) where grads mirrors net.weights layer by layer.
    """
    xs = _check_input(net, xs)
    ys = np.asarray(ys, dtype=np.int64)
    n = xs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if ys.shape != (n,):
        raise ValueError("labels must match batch size")
    classes = net.spec.class_count
    if ys.min() < 0 or ys.max() >= classes:
        raise ValueError(f"label out of range for {classes} classes")

    x = xs
    inputs = []
    caches = []
    for i, layer in enumerate(net.spec.layers):
        inputs.append(x)
        if isinstance(layer, Conv):
            x, cols = _conv_forward(x, layer, *net.weights[i])
            caches.append(cols)
        elif isinstance(layer, Relu):
            x = np.maximum(x, 0.0)
            caches.append(None)
        elif isinstance(layer, MaxPool):
            x, idx = _pool_forward(x, layer)
            caches.append(idx)
        elif isinstance(layer, Fc):
            w, b = net.weights[i]
            x = x.reshape(n, -1) @ w + b
            caches.append(None)
        elif isinstance(layer, Softmax):
            x = softmax_rows(x)
            caches.append(None)

    probs = x
    loss = float(-np.log(np.maximum(probs[np.arange(n), ys], 1e-300)).mean())

    grads = [None] * len(net.spec.layers)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), ys] = 1.0
    d = (probs - onehot) / n  # gradient at the softmax input
    for i in range(len(net.spec.layers) - 2, -1, -1):
        layer = net.spec.layers[i]
        if isinstance(layer, Conv):
            kernel, _ = net.weights[i]
            d, dk, db = _conv_backward(d, inputs[i].shape, layer, kernel, caches[i])
            grads[i] = (dk, db)
        elif isinstance(layer, Relu):
            d = d * (inputs[i] > 0)
        elif isinstance(layer, MaxPool):
            d = _pool_backward(d, inputs[i].shape, layer, caches[i])
        elif isinstance(layer, Fc):
            w, _ = net.weights[i]
            xf = inputs[i].reshape(n, -1)
            grads[i] = (xf.T @ d, d.sum(axis=0))
            d = (d @ w.T).reshape(inputs[i].shape)
    return loss, grads


def train(net: Network, xs, ys, cfg: TrainConfig):
    """SGD with momentum; deterministic given the seed.

    Returns (trained network, per-epoch mean losses). The input network is
    left untouched.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.ndim == 3:
        xs = xs[None]
    n = xs.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if cfg.epochs < 0 or cfg.batch < 1:
        raise ValueError("bad train config")

    out = Network(
        net.spec,
        [None if w is None else (w[0].copy(), w[1].copy()) for w in net.weights],
    )
    vel = [None if w is None else (np.zeros_like(w[0]), np.zeros_like(w[1])) for w in out.weights]
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            sel = perm[start : start + cfg.batch]
            loss, grads = loss_and_gradients(out, xs[sel], ys[sel])
            total += loss * len(sel)
            for i, g in enumerate(grads):
                if g is None:
                    continue
                w, b = out.weights[i]
                gw, gb = g
                if cfg.weight_decay:
                    gw = gw + cfg.weight_decay * w
                vw, vb = vel[i]
                vw *= cfg.momentum
                vw -= cfg.lr * gw
                vb *= cfg.momentum
                vb -= cfg.lr * gb
                w += vw
                b += vb
        losses.append(total / n)
    return out, losses


def _first_fc_index(spec: NetworkSpec) -> int:
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Fc):
            return i
    raise ValueError("network has no fc layer")


def extract_feature(net: Network, img) -> np.ndarray:
    """Post-activation output of the first fully-connected layer."""
    return extract_features_batch(net, np.asarray(img, dtype=np.float64)[None])[0]


def extract_features_batch(net: Network, xs) -> np.ndarray:
    i = _first_fc_index(net.spec)
    if i + 1 < len(net.spec.layers) and isinstance(net.spec.layers[i + 1], Relu):
        i += 1
    return forward_batch(net, xs, upto_layer=i)


def pack_params(net: Network) -> np.ndarray:
    """All trainable parameters flattened into one vector (layer order,
    kernel before bias); inverse of unpack_params."""
    chunks = []
    for w in net.weights:
        if w is not None:
            chunks.append(w[0].ravel())
            chunks.append(w[1].ravel())
    return np.concatenate(chunks)


def unpack_params(net: Network, vec: np.ndarray) -> Network:
    vec = np.asarray(vec, dtype=np.float64)
    weights = []
    pos = 0
    for w in net.weights:
        if w is None:
            weights.append(None)
            continue
        arrs = []
        for ref in w:
            arrs.append(vec[pos : pos + ref.size].reshape(ref.shape).copy())
            pos += ref.size
        weights.append(tuple(arrs))
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size - pos} extra entries")
    return Network(net.spec, weights)


def _spec_to_json(spec: NetworkSpec) -> str:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            layers.append(
                {
                    "type": "conv",
                    "out": layer.out_channels,
                    "kernel": layer.kernel,
                    "stride": layer.stride,
                    "pad": layer.pad,
                }
            )
        elif isinstance(layer, Relu):
            layers.append({"type": "relu"})
        elif isinstance(layer, MaxPool):
            layers.append({"type": "maxpool", "kernel": layer.kernel, "stride": layer.stride})
        elif isinstance(layer, Fc):
            layers.append({"type": "fc", "out": layer.out_units})
        elif isinstance(layer, Softmax):
            layers.append({"type": "softmax"})
    doc = {"input": list(spec.input_shape), "part_layer": spec.part_layer, "layers": layers}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _spec_from_json(text: str) -> NetworkSpec:
    doc = json.loads(text)
    layers = []
    for entry in doc["layers"]:
        t = entry["type"]
        if t == "conv":
            layers.append(Conv(entry["out"], entry["kernel"], entry["stride"], entry["pad"]))
        elif t == "relu":
            layers.append(Relu())
        elif t == "maxpool":
            layers.append(MaxPool(entry["kernel"], entry["stride"]))
        elif t == "fc":
            layers.append(Fc(entry["out"]))
        elif t == "softmax":
            layers.append(Softmax())
        else:
            raise ValueError(f"unknown layer type {t!r}")
    return NetworkSpec(tuple(doc["input"]), tuple(layers), part_layer=doc["part_layer"])


def save_net(net: Network) -> bytes:
    """Bit-exact model bytes: magic, length-prefixed spec text, raw float64 weights."""
    spec_text = _spec_to_json(net.spec).encode()
    parts = [MAGIC, len(spec_text).to_bytes(4, "little"), spec_text]
    for w in net.weights:
        if w is not None:
            parts.append(np.ascontiguousarray(w[0], dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(w[1], dtype="<f8").tobytes())
    return b"".join(parts)


def load_net(data: bytes) -> Network:
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"bad magic {data[:5]!r}")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise ValueError("truncated header")
    spec_len = int.from_bytes(data[pos : pos + 4], "little")
    pos += 4
    if len(data) < pos + spec_len:
        raise ValueError("truncated spec text")
    spec = _spec_from_json(data[pos : pos + spec_len].decode())
    pos += spec_len

    template = zero_network(spec)
    weights = []
    for w in template.weights:
        if w is None:
            weights.append(None)
            continue
        arrs = []
        for ref in w:
            nbytes = ref.size * 8
            if len(data) < pos + nbytes:
                raise ValueError(f"truncated weights at byte {pos}")
            arrs.append(np.frombuffer(data[pos : pos + nbytes], dtype="<f8").reshape(ref.shape).copy())
            pos += nbytes
        weights.append(tuple(arrs))
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes")
    return Network(spec, weights)
