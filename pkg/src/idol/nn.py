"""Small deterministic CNN engine with hand-written backward passes.

Tensors are plain float64 numpy arrays laid out as ``(batch, channels,
height, width)`` for image layers and ``(batch, features)`` for dense
layers. A :class:`Model` owns a flat parameter vector; each layer reads
its weight and bias as views into that vector.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = ("dense", "conv3x3", "conv1x1", "downsample2x", "upsample2x", "relu", "sigmoid")
PARAMETRIC = ("dense", "conv3x3", "conv1x1", "downsample2x", "upsample2x")
LOSS_KINDS = ("mse", "bce")

BCE_EPS = 1e-7
# Loss reached by bce when prediction equals a 0/1 target: -ln(1 - BCE_EPS).
BCE_FLOOR = -np.log1p(-BCE_EPS)

_KERNEL = {"conv3x3": 3, "conv1x1": 1, "downsample2x": 3, "upsample2x": 3}
_STRIDE = {"conv3x3": 1, "conv1x1": 1, "downsample2x": 2, "upsample2x": 1}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer. For ``dense`` the channel counts are feature counts."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.kind in PARAMETRIC and (self.in_channels < 1 or self.out_channels < 1):
            raise ValueError(f"{self.kind} needs positive channel counts")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.out_channels, self.in_channels)
        if self.kind in _KERNEL:
            k = _KERNEL[self.kind]
            return (self.out_channels, self.in_channels, k, k)
        return ()

    @property
    def n_params(self) -> int:
        # dense: out*in + out; kxk conv: out*in*k*k + out; activations: 0
        if self.kind not in PARAMETRIC:
            return 0
        return int(np.prod(self.weight_shape)) + self.out_channels

    def to_dict(self) -> dict:
        return asdict(self)


def layer_output_shape(spec: LayerSpec, shape: tuple[int, ...], index: int = 0) -> tuple[int, ...]:
    """Per-sample output shape of ``spec`` applied to per-sample ``shape``."""
    where = f"layer {index} ({spec.kind})"
    if spec.kind in ("relu", "sigmoid"):
        return tuple(shape)
    if spec.kind == "dense":
        n = int(np.prod(shape))
        if n != spec.in_channels:
            raise ShapeError(f"{where}: expected {spec.in_channels} input features, got shape {tuple(shape)}")
        return (spec.out_channels,)
    if len(shape) != 3:
        raise ShapeError(f"{where}: expected (channels, height, width) input, got {tuple(shape)}")
    c, h, w = shape
    if c != spec.in_channels:
        raise ShapeError(f"{where}: expected {spec.in_channels} channels, got {c}")
    if spec.kind == "downsample2x":
        return (spec.out_channels, (h + 1) // 2, (w + 1) // 2)
    if spec.kind == "upsample2x":
        return (spec.out_channels, 2 * h, 2 * w)
    return (spec.out_channels, h, w)


def encoder_decoder(head: str = "linear", width: int = 8, in_channels: int = 1) -> list[LayerSpec]:
    """The fixed encoder-decoder used for every task.

    conv3x3(1->w)+relu, downsample2x(w->2w)+relu, conv3x3(2w->2w)+relu,
    upsample2x(2w->w)+relu, conv1x1(w->1), then an optional sigmoid.
    """
    if head not in ("linear", "sigmoid"):
        raise ValueError("head must be 'linear' or 'sigmoid'")
    w2 = 2 * width
    layers = [
        LayerSpec("conv3x3", in_channels, width), LayerSpec("relu"),
        LayerSpec("downsample2x", width, w2), LayerSpec("relu"),
        LayerSpec("conv3x3", w2, w2), LayerSpec("relu"),
        LayerSpec("upsample2x", w2, width), LayerSpec("relu"),
        LayerSpec("conv1x1", width, 1),
    ]
    if head == "sigmoid":
        layers.append(LayerSpec("sigmoid"))
    return layers


# -- convolution helpers ----------------------------------------------------
# Image activations are carried internally as (batch, height, width,
# channels) so im2col columns and matmul outputs need no transposes.
# Weights keep the (out, in, k, k) layout in the parameter vector.

def _im2col(x, k, stride):
    p = k // 2
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    b, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, k * k * c)
    return cols, (b, ho, wo)


def _conv_forward(x, w, bias, stride):
    o, _, k, _ = w.shape
    cols, (b, ho, wo) = _im2col(x, k, stride)
    out = cols @ w.transpose(0, 2, 3, 1).reshape(o, -1).T + bias
    return out.reshape(b, ho, wo, o), cols


def _conv_backward(dout, x_shape, w, cols, stride, need_dx=True):
    o, c, k, _ = w.shape
    b, ho, wo, _ = dout.shape
    dm = dout.reshape(-1, o)
    dw = (dm.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    db = dm.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dm @ w.transpose(0, 2, 3, 1).reshape(o, -1)).reshape(b, ho, wo, k, k, c)
    p = k // 2
    h, wd = x_shape[1], x_shape[2]
    if k == 1 and stride == 1:
        return dcols.reshape(b, ho, wo, c), dw, db
    dxp = np.zeros((b, h + 2 * p, wd + 2 * p, c))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
    return dxp[:, p:p + h, p:p + wd], dw, db


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _flatten_nchw(x):
    # dense layers see features in (channels, height, width) order
    if x.ndim == 4:
        x = x.transpose(0, 3, 1, 2)
    return x.reshape(x.shape[0], -1)


def _layer_forward(spec, w, b, x):
    kind = spec.kind
    if kind == "relu":
        return np.maximum(x, 0.0), x
    if kind == "sigmoid":
        y = _sigmoid(x)
        return y, y
    if kind == "dense":
        xf = _flatten_nchw(x)
        return xf @ w.T + b, (xf, x.shape)
    if kind == "upsample2x":
        up = x.repeat(2, axis=1).repeat(2, axis=2)
        out, cols = _conv_forward(up, w, b, 1)
        return out, (up.shape, cols)
    out, cols = _conv_forward(x, w, b, _STRIDE[kind])
    return out, (x.shape, cols)


def _layer_backward(spec, w, cache, dout, need_dx=True):
    kind = spec.kind
    if kind == "relu":
        return dout * (cache > 0), None, None
    if kind == "sigmoid":
        return dout * cache * (1.0 - cache), None, None
    if kind == "dense":
        xf, shape = cache
        dx = dout @ w
        if len(shape) == 4:
            bsz, h, wd, c = shape
            dx = dx.reshape(bsz, c, h, wd).transpose(0, 2, 3, 1)
        return dx.reshape(shape), dout.T @ xf, dout.sum(axis=0)
    x_shape, cols = cache
    if kind == "upsample2x":
        dup, dw, db = _conv_backward(dout, x_shape, w, cols, 1, need_dx)
        if dup is None:
            return None, dw, db
        bsz, h2, w2, c = dup.shape
        dx = dup.reshape(bsz, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))
        return dx, dw, db
    return _conv_backward(dout, x_shape, w, cols, _STRIDE[kind], need_dx)


# -- losses -----------------------------------------------------------------

def _check_pair(prediction, target):
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    return prediction, target


def loss_and_dpred(kind: str, prediction, target) -> tuple[float, np.ndarray]:
    """Mean loss over all elements and its gradient w.r.t. ``prediction``."""
    p, t = _check_pair(prediction, target)
    n = p.size
    if kind == "mse":
        r = p - t
        return float(np.mean(r * r)), 2.0 * r / n
    if kind == "bce":
        if np.any((t < 0) | (t > 1)):
            raise ValueError("bce targets must lie in [0, 1]")
        pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
        value = -np.mean(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
        inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
        grad = np.where(inside, (pc - t) / (pc * (1.0 - pc)), 0.0) / n
        return float(value), grad
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def loss(kind: str, prediction, target) -> float:
    """Mean ``mse`` or ``bce`` loss. bce at an exact 0/1 match returns ``BCE_FLOOR``."""
    return loss_and_dpred(kind, prediction, target)[0]


# -- model ------------------------------------------------------------------

class Model:
    """Ordered layers plus one flat parameter vector ``params``."""

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int],
                 params=None, topology: str = "custom", seed: int = 0):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.topology = topology
        self.seed = seed
        shapes = [self.input_shape]
        for i, spec in enumerate(self.layers):
            shapes.append(layer_output_shape(spec, shapes[-1], i))
        self.shapes = shapes
        self.offsets = np.cumsum([0] + [s.n_params for s in self.layers]).tolist()
        if params is None:
            params = self.init_params(np.random.default_rng(seed))
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params

    @property
    def n_params(self) -> int:
        return self.offsets[-1]

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for i, spec in enumerate(self.layers):
            if spec.kind not in PARAMETRIC:
                continue
            ws = spec.weight_shape
            rf = int(np.prod(ws[2:])) if len(ws) == 4 else 1
            limit = np.sqrt(6.0 / (spec.in_channels * rf + spec.out_channels * rf))
            nw = int(np.prod(ws))
            theta[self.offsets[i]:self.offsets[i] + nw] = rng.uniform(-limit, limit, nw)
        return theta

    def copy(self) -> "Model":
        return Model(self.layers, self.input_shape, self.params.copy(), self.topology, self.seed)

    def _unpack(self, i, theta):
        spec = self.layers[i]
        if spec.kind not in PARAMETRIC:
            return None, None
        lo = self.offsets[i]
        nw = int(np.prod(spec.weight_shape))
        w = theta[lo:lo + nw].reshape(spec.weight_shape)
        b = theta[lo + nw:self.offsets[i + 1]]
        return w, b

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None], True
        if x.shape[1:] != self.input_shape:
            # locate the first layer that rejects this shape for the diagnostic
            shape = x.shape[1:] if x.ndim > len(self.input_shape) else x.shape
            for i, spec in enumerate(self.layers):
                shape = layer_output_shape(spec, shape, i)
            raise ShapeError(f"input shape {x.shape} does not match model input {self.input_shape}")
        return x, False

    def _run(self, x, theta):
        if x.ndim == 4:
            x = x.transpose(0, 2, 3, 1)
        caches = []
        for i, spec in enumerate(self.layers):
            w, b = self._unpack(i, theta)
            x, cache = _layer_forward(spec, w, b, x)
            caches.append(cache)
        if x.ndim == 4:
            x = x.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(x), caches

    def forward(self, x, params=None) -> np.ndarray:
        """Apply the network to one sample or a batch."""
        xb, single = self._as_batch(x)
        theta = self.params if params is None else params
        out, _ = self._run(xb, theta)
        return out[0] if single else out

    def preactivations(self, x) -> list[np.ndarray]:
        """Inputs seen by every relu layer, for kink checks."""
        xb, _ = self._as_batch(x)
        if xb.ndim == 4:
            xb = xb.transpose(0, 2, 3, 1)
        seen = []
        for i, spec in enumerate(self.layers):
            if spec.kind == "relu":
                seen.append(xb)
            w, b = self._unpack(i, self.params)
            xb, _ = _layer_forward(spec, w, b, xb)
        return seen

    def loss_and_grad(self, x, target, kind: str, params=None) -> tuple[float, np.ndarray]:
        """Scalar loss and its analytic gradient w.r.t. the flat parameters."""
        xb, single = self._as_batch(x)
        theta = self.params if params is None else params
        tb = np.asarray(target, dtype=np.float64)
        if single:
            tb = tb[None]
        out, caches = self._run(xb, theta)
        value, d = loss_and_dpred(kind, out, tb)
        if d.ndim == 4:
            d = d.transpose(0, 2, 3, 1)
        grad = np.zeros(self.n_params)
        for i in range(len(self.layers) - 1, -1, -1):
            spec = self.layers[i]
            w, _ = self._unpack(i, theta)
            d, dw, db = _layer_backward(spec, w, caches[i], d, need_dx=i > 0)
            if dw is not None:
                lo = self.offsets[i]
                nw = dw.size
                grad[lo:lo + nw] = dw.ravel()
                grad[lo + nw:self.offsets[i + 1]] = db
        return value, grad

    def evaluate(self, x, target, kind: str) -> float:
        return loss(kind, self.forward(x), target)

    def header(self) -> dict:
        return {
            "topology": self.topology,
            "layers": [s.to_dict() for s in self.layers],
            "input_shape": list(self.input_shape),
            "n_params": self.n_params,
            "seed": self.seed,
        }


def forward(model: Model, x) -> np.ndarray:
    return model.forward(x)


def backward(model: Model, x, target, kind: str) -> np.ndarray:
    """Gradient of the mean loss w.r.t. every parameter of ``model``."""
    return model.loss_and_grad(x, target, kind)[1]


def build_model(task_head: str, resolution: int, seed: int, width: int = 8) -> Model:
    layers = encoder_decoder(task_head, width)
    return Model(layers, (1, resolution, resolution), topology=f"encdec-w{width}-{task_head}", seed=seed)
