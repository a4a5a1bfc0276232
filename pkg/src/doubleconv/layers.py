"""Network layers with forward and reverse-mode backward passes.

Layers cache whatever their backward pass needs during forward. A
:class:`Network` instance is single-owner while training (forward and
backward mutate cached state); evaluation-mode forward on a fixed network
is side-effect free except for nothing at all, so it may be shared across
threads.
"""

from __future__ import annotations

import numpy as np

from .convops import PadSpec, _dots, _im2col, pad_spatial, pool_grid
from .dconv import MetaFilterBank, expand_meta_filters
from .errors import ParameterError, ShapeError, StateError

__all__ = [
    "BatchNormLayer",
    "ChannelMaxLayer",
    "ConvLayer",
    "DoubleConvLayer",
    "DropoutLayer",
    "GlobalAvgPoolLayer",
    "Layer",
    "MaxPoolLayer",
    "Network",
    "ReLULayer",
    "SoftmaxXentLayer",
    "softmax_cross_entropy",
]


class Layer:
    """Base layer: parameter/gradient dicts plus forward/backward hooks."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}

    def forward(self, x, training, rng):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def out_channels(self, c_in):
        """Channel count produced from *c_in* input channels (spatial layers)."""
        return c_in


def _require_4d(x, kind):
    if x.ndim != 4:
        raise ShapeError(f"{kind} expects [b, c, h, w], got {x.shape}")


# ------------------------------------------------------------------
# shared conv machinery
# ------------------------------------------------------------------


def _conv_cols(xp, z):
    """im2col over a padded batch: [b*h'*w', c*z*z] plus output dims."""
    b, c, hp, wp = xp.shape
    h_out, w_out = hp - z + 1, wp - z + 1
    cols = _im2col(xp, z).reshape(b * h_out * w_out, c * z * z)
    return cols, h_out, w_out


def _conv_apply(cols, fmat, b, h_out, w_out):
    out = _dots(fmat, cols)  # [F, b*h'*w']
    out = out.reshape(fmat.shape[0], b, h_out, w_out)
    return np.ascontiguousarray(np.moveaxis(out, 0, 1))


def _conv_grads(dconv, cols, fmat, xp_shape, z):
    """Filter and input gradients of a conv given d(conv output).

    ``dconv`` is [b, F, h', w']. Returns (dW [F, K], dx_padded).
    """
    b, c, hp, wp = xp_shape
    h_out, w_out = hp - z + 1, wp - z + 1
    dmat = np.moveaxis(dconv, 1, 0).reshape(fmat.shape[0], b * h_out * w_out)
    dw = dmat @ cols
    dcols = dmat.T @ fmat  # [b*h'*w', K]
    dcols = dcols.reshape(b, h_out, w_out, c, z, z)
    dxp = np.zeros(xp_shape, dtype=dconv.dtype)
    for a in range(z):
        for bb in range(z):
            dxp[:, :, a : a + h_out, bb : bb + w_out] += dcols[:, :, :, :, a, bb].transpose(
                0, 3, 1, 2
            )
    return dw, dxp


def _unpad(dxp, p):
    if p == 0:
        return dxp
    return dxp[:, :, p:-p, p:-p]


class ConvLayer(Layer):
    """Standard convolution (correlation, no bias) with a [c_out, c_in, z, z] bank."""

    kind = "conv"

    def __init__(self, weights, pad=PadSpec.same()):
        super().__init__()
        if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
            raise ShapeError(f"conv weights must be [c_out, c_in, z, z], got {weights.shape}")
        self.params["weights"] = weights
        self.pad = pad
        self._cache = None

    @property
    def z(self):
        return self.params["weights"].shape[2]

    def out_channels(self, c_in):
        return self.params["weights"].shape[0]

    def forward(self, x, training, rng):
        _require_4d(x, self.kind)
        w = self.params["weights"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"input has {x.shape[1]} channels, filters expect {w.shape[1]}")
        p = self.pad.padding_for(self.z)
        xp = pad_spatial(x, p)
        if xp.shape[2] < self.z or xp.shape[3] < self.z:
            raise ShapeError("spatial dims smaller than kernel after padding")
        cols, h_out, w_out = _conv_cols(xp, self.z)
        self._cache = (xp.shape, p)
        self._xp = xp
        return _conv_apply(cols, w.reshape(w.shape[0], -1), x.shape[0], h_out, w_out)

    def backward(self, dout):
        if self._cache is None:
            raise StateError("conv backward before forward")
        xp_shape, p = self._cache
        w = self.params["weights"]
        cols, _, _ = _conv_cols(self._xp, self.z)
        dw, dxp = _conv_grads(dout, cols, w.reshape(w.shape[0], -1), xp_shape, self.z)
        self.grads["weights"] = dw.reshape(w.shape)
        return _unpad(dxp, p)


class DoubleConvLayer(Layer):
    """Doubly convolutional layer over a :class:`MetaFilterBank`.

    ``path`` selects the forward implementation: "twostep" (expand the meta
    filters and run one convolution) or "reference" (per-patch definition).
    Both produce bitwise-identical float64 outputs; the backward pass is
    shared and accumulates meta-filter gradients over all sub-filter
    positions selected by pooling.
    """

    kind = "double_conv"

    def __init__(self, bank: MetaFilterBank, pad=PadSpec.same(), path="twostep"):
        super().__init__()
        if path not in ("twostep", "reference"):
            raise ParameterError(f"unknown double-conv path {path!r}")
        self.spec = bank.spec
        self.params["weights"] = bank.weights
        self.pad = pad
        self.path = path
        self._cache = None

    @property
    def bank(self):
        return MetaFilterBank(self.spec, self.params["weights"])

    def out_channels(self, c_in):
        return self.spec.c_out * self.spec.channel_multiplier

    def forward(self, x, training, rng):
        _require_4d(x, self.kind)
        spec = self.spec
        if x.shape[1] != self.params["weights"].shape[1]:
            raise ShapeError(
                f"input has {x.shape[1]} channels, meta filters expect "
                f"{self.params['weights'].shape[1]}"
            )
        z = spec.z_eff
        p = self.pad.padding_for(z)
        xp = pad_spatial(x, p)
        if xp.shape[2] < z or xp.shape[3] < z:
            raise ShapeError("spatial dims smaller than effective filter after padding")
        self._xp = xp
        self._pad_amount = p
        if self.path == "reference":
            from .dconv import double_conv_reference

            out = np.stack([double_conv_reference(xi, self.bank, self.pad) for xi in x])
            self._cache = ("reference",)
            return out
        conv, h_out, w_out = self._conv_grid(xp)
        out, route = _pool_response_grid(conv, spec)
        self._cache = ("twostep", route)
        return out

    def _conv_grid(self, xp):
        spec = self.spec
        expanded = expand_meta_filters(self.bank)
        cols, h_out, w_out = _conv_cols(xp, spec.z_eff)
        conv = _conv_apply(cols, expanded.reshape(expanded.shape[0], -1), xp.shape[0], h_out, w_out)
        return conv, h_out, w_out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("double-conv backward before forward")
        spec = self.spec
        if self._cache[0] == "reference":
            # Rebuild the response grid; it is bitwise-identical to what the
            # reference forward produced, so pooling routes the same way.
            conv, _, _ = self._conv_grid(self._xp)
            _, route = _pool_response_grid(conv, spec)
        else:
            route = self._cache[1]
        dconv = _pool_response_grid_backward(dout, route, spec)
        expanded = expand_meta_filters(self.bank)
        fmat = expanded.reshape(expanded.shape[0], -1)
        cols, _, _ = _conv_cols(self._xp, spec.z_eff)
        dexp, dxp = _conv_grads(dconv, cols, fmat, self._xp.shape, spec.z_eff)
        self.grads["weights"] = _fold_expanded_grads(dexp, self.params["weights"].shape, spec)
        return _unpad(dxp, self._pad_amount)


def _pool_response_grid(conv, spec):
    """Pool the (u, v) response axes of an expanded conv output.

    ``conv`` is [b, c_out*m*m, h, w] with channel index (k, u, v) in
    row-major order. Returns the [b, n*c_out, h, w] output plus the state
    backward needs to route gradients (argmax indices for max pooling).
    """
    m, s, n = spec.window_span, spec.s, spec.channel_multiplier
    b, _, h, w = conv.shape
    grid = conv.reshape(b, spec.c_out, m // s, s, m // s, s, h, w)
    # windows last: [b, c_out, m/s, m/s, h, w, s(u), s(v)]
    grid = np.ascontiguousarray(grid.transpose(0, 1, 2, 4, 6, 7, 3, 5))
    if spec.pool_kind == "max":
        flat = grid.reshape(b, spec.c_out, m // s, m // s, h, w, s * s)
        idx = flat.argmax(axis=-1)  # ties resolve to first in row-major order
        pooled = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        route = (conv.shape, idx)
    else:
        # Same nesting as pool_grid: sum the v axis, then the u axis.
        pooled = grid.sum(axis=-1).sum(axis=-1) / (s * s)
        route = (conv.shape, None)
    out = pooled.reshape(b, spec.c_out * n, h, w)
    return out, route


def _pool_response_grid_backward(dout, route, spec):
    """Scatter d(output) back onto the expanded conv output."""
    conv_shape, idx = route
    m, s, n = spec.window_span, spec.s, spec.channel_multiplier
    b, _, h, w = conv_shape
    dpooled = dout.reshape(b, spec.c_out, m // s, m // s, h, w)
    dflat = np.zeros((b, spec.c_out, m // s, m // s, h, w, s * s), dtype=dout.dtype)
    if spec.pool_kind == "max":
        np.put_along_axis(dflat, idx[..., None], dpooled[..., None], axis=-1)
    else:
        dflat[:] = (dpooled / (s * s))[..., None]
    dgrid = dflat.reshape(b, spec.c_out, m // s, m // s, h, w, s, s)
    dgrid = dgrid.transpose(0, 1, 2, 6, 3, 7, 4, 5)  # -> [b, c_out, m/s, s, m/s, s, h, w]
    return np.ascontiguousarray(dgrid).reshape(conv_shape)


def _fold_expanded_grads(dexp, meta_shape, spec):
    """Sum expanded-filter gradients back onto the meta filter positions."""
    c_out, c_in, zm, _ = meta_shape
    z, m = spec.z_eff, spec.window_span
    dexp = dexp.reshape(c_out, m, m, c_in, z, z)
    dmeta = np.zeros(meta_shape, dtype=dexp.dtype)
    for u in range(m):
        for v in range(m):
            dmeta[:, :, u : u + z, v : v + z] += dexp[:, u, v]
    return dmeta


class BatchNormLayer(Layer):
    """Per-channel batch normalization over batch and spatial positions."""

    kind = "batch_norm"

    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.stats["running_mean"] = np.zeros(channels, dtype=dtype)
        self.stats["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, training, rng):
        _require_4d(x, self.kind)
        c = self.params["gamma"].shape[0]
        if x.shape[1] != c:
            raise ShapeError(f"input has {x.shape[1]} channels, batch norm expects {c}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if training:
            b, _, h, w = x.shape
            if b * h * w < 2:
                raise ShapeError("batch norm needs at least 2 values per channel in training")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
            mom = self.momentum
            self.stats["running_mean"] = mom * self.stats["running_mean"] + (1 - mom) * mean
            self.stats["running_var"] = mom * self.stats["running_var"] + (1 - mom) * var
            self._cache = ("train", xhat, inv_std, b * h * w)
        else:
            inv_std = 1.0 / np.sqrt(self.stats["running_var"] + self.eps)
            xhat = (x - self.stats["running_mean"][None, :, None, None]) * inv_std[
                None, :, None, None
            ]
            self._cache = ("eval", xhat, inv_std, None)
        return gamma * xhat + beta

    def backward(self, dout):
        if self._cache is None:
            raise StateError("batch-norm backward before forward")
        mode, xhat, inv_std, count = self._cache
        gamma = self.params["gamma"]
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * gamma[None, :, None, None]
        if mode == "eval":
            return dxhat * inv_std[None, :, None, None]
        sum_d = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[None, :, None, None] / count) * (
            count * dxhat - sum_d - xhat * sum_dx
        )


class ReLULayer(Layer):
    kind = "relu"

    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, training, rng):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dout):
        if self._mask is None:
            raise StateError("relu backward before forward")
        return np.where(self._mask, dout, 0)


class DropoutLayer(Layer):
    """Inverted dropout; identity in evaluation mode."""

    kind = "dropout"

    def __init__(self, rate=0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training, rng):
        if not training or self.rate == 0:
            self._mask = None
            return x
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep
        return np.where(keep, x / (1 - self.rate), 0)

    def backward(self, dout):
        if self._mask is None:
            return dout
        return np.where(self._mask, dout / (1 - self.rate), 0)


class MaxPoolLayer(Layer):
    """Non-overlapping spatial max pooling with window and stride s."""

    kind = "max_pool"

    def __init__(self, s):
        super().__init__()
        if s < 1:
            raise ParameterError(f"pooling size must be >= 1, got {s}")
        self.s = s
        self._cache = None

    def forward(self, x, training, rng):
        _require_4d(x, self.kind)
        b, c, h, w = x.shape
        s = self.s
        if h % s or w % s:
            raise ShapeError(f"spatial dims {h}x{w} not divisible by pooling size {s}")
        win = x.reshape(b, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
        flat = np.ascontiguousarray(win).reshape(b, c, h // s, w // s, s * s)
        idx = flat.argmax(axis=-1)  # first max wins on ties
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("max-pool backward before forward")
        (b, c, h, w), idx = self._cache
        s = self.s
        dflat = np.zeros((b, c, h // s, w // s, s * s), dtype=dout.dtype)
        np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
        dwin = dflat.reshape(b, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(dwin).reshape(b, c, h, w)


class GlobalAvgPoolLayer(Layer):
    kind = "global_avg_pool"

    def __init__(self):
        super().__init__()
        self._spatial = None

    def forward(self, x, training, rng):
        _require_4d(x, self.kind)
        self._spatial = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        if self._spatial is None:
            raise StateError("global-avg-pool backward before forward")
        h, w = self._spatial
        return np.broadcast_to(dout[:, :, None, None], dout.shape + (h, w)).copy() / (h * w)


class ChannelMaxLayer(Layer):
    """Max over groups of k consecutive channels (c -> c/k)."""

    kind = "channel_max"

    def __init__(self, k):
        super().__init__()
        if k < 1:
            raise ParameterError(f"feature-pooling stride must be >= 1, got {k}")
        self.k = k
        self._cache = None

    def out_channels(self, c_in):
        if c_in % self.k:
            raise ShapeError(f"{c_in} channels not divisible by pooling stride {self.k}")
        return c_in // self.k

    def forward(self, x, training, rng):
        _require_4d(x, self.kind)
        b, c, h, w = x.shape
        k = self.k
        if c % k:
            raise ShapeError(f"{c} channels not divisible by pooling stride {k}")
        grouped = x.reshape(b, c // k, k, h, w)
        idx = grouped.argmax(axis=2)
        out = np.take_along_axis(grouped, idx[:, :, None], axis=2)[:, :, 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("channel-max backward before forward")
        (b, c, h, w), idx = self._cache
        dgrouped = np.zeros((b, c // self.k, self.k, h, w), dtype=dout.dtype)
        np.put_along_axis(dgrouped, idx[:, :, None], dout[:, :, None], axis=2)
        return dgrouped.reshape(b, c, h, w)


class SoftmaxXentLayer(Layer):
    """Linear classifier producing logits; pairs with softmax cross-entropy."""

    kind = "softmax_xent"

    def __init__(self, weights):
        super().__init__()
        if weights.ndim != 2:
            raise ShapeError(f"classifier weights must be [classes, features], got {weights.shape}")
        self.params["weights"] = weights
        self._x = None

    @property
    def classes(self):
        return self.params["weights"].shape[0]

    def forward(self, x, training, rng):
        if x.ndim != 2:
            raise ShapeError(f"classifier expects [b, features], got {x.shape}")
        w = self.params["weights"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"input has {x.shape[1]} features, classifier expects {w.shape[1]}")
        self._x = x
        return x @ w.T

    def backward(self, dlogits):
        if self._x is None:
            raise StateError("classifier backward before forward")
        w = self.params["weights"]
        self.grads["weights"] = dlogits.T @ self._x
        return dlogits @ w


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Labels are integer class indices. Uses log-sum-exp stabilization.
    Returns (loss, dlogits, probs).
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [b, classes], got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ShapeError("label index out of range")
    b = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    loss = float(-log_probs[np.arange(b), labels].mean())
    probs = np.exp(log_probs)
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return loss, dlogits, probs


class Network:
    """Ordered layer stack with a training/evaluation mode flag.

    The dropout generator is owned by the network so that a fixed seed and
    layer order give a reproducible mask stream.
    """

    def __init__(self, layers, rng=None):
        self.layers = list(layers)
        self.training = True
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._logits = None

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def forward(self, batch):
        x = batch
        for idx, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, self.training, self.rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {idx} ({layer.kind}): {exc}") from exc
        self._logits = x
        return x

    def loss(self, labels):
        """Mean softmax cross-entropy of the most recent forward pass."""
        if self._logits is None:
            raise StateError("loss requires a prior forward pass")
        loss, _, _ = softmax_cross_entropy(self._logits, labels)
        return loss

    def backward(self, labels):
        """Backpropagate from softmax cross-entropy; returns (loss, input grad)."""
        if self._logits is None:
            raise StateError("backward requires a prior forward pass")
        if not self.training:
            raise StateError("backward requires training mode")
        loss, d, _ = softmax_cross_entropy(self._logits, labels)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return loss, d

    def parameters(self):
        """All learnable parameters as (layer_index, name, array) triples."""
        out = []
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out.append((idx, name, arr))
        return out

    def gradients(self):
        """Gradients matching :meth:`parameters` order (after backward)."""
        out = []
        for idx, layer in enumerate(self.layers):
            for name in layer.params:
                if name not in layer.grads:
                    raise StateError(f"layer {idx} has no gradient for {name!r}")
                out.append((idx, name, layer.grads[name]))
        return out

    def predict(self, batch):
        """Argmax class indices for a batch (uses the current mode)."""
        return np.argmax(self.forward(batch), axis=1)
