"""Small convolutional networks in plain numpy with exact reverse-mode gradients.

Tensors are laid out as (batch, channels, height, width).  A network is a list
of layers applied in order; ``Concat(source)`` appends the output of an earlier
layer (``source=-1`` is the network input) along the channel axis, which is how
U-shaped skip connections are expressed.  All parameters live in one flat
vector so they can be handed to Adam and serialized as a single tensor.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from .inversion import AdamState, adaptive_update


@dataclass(frozen=True)
class Conv:
    cin: int
    cout: int
    k: int = 3
    bias: bool = True


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class AvgPool:
    fy: int = 2
    fx: int = 2


@dataclass(frozen=True)
class Upsample:
    fy: int = 2
    fx: int = 2


@dataclass(frozen=True)
class Concat:
    source: int


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Reshape:
    shape: tuple[int, ...]


Layer = Union[Conv, ReLU, AvgPool, Upsample, Concat, Dense, Reshape]
LAYER_TYPES = {cls.__name__: cls for cls in (Conv, ReLU, AvgPool, Upsample, Concat, Dense, Reshape)}


def layer_to_dict(layer) -> dict:
    return {"type": type(layer).__name__, **asdict(layer)}


def layer_from_dict(spec: dict):
    spec = dict(spec)
    cls = LAYER_TYPES[spec.pop("type")]
    if cls is Reshape:
        spec["shape"] = tuple(spec["shape"])
    return cls(**spec)


def _param_sizes(layer) -> tuple[int, int]:
    if isinstance(layer, Conv):
        return layer.cout * layer.cin * layer.k * layer.k, layer.cout if layer.bias else 0
    if isinstance(layer, Dense):
        return layer.n_out * layer.n_in, layer.n_out
    return 0, 0


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Columns (C*k*k, B*H*W) of the zero-padded k x k neighbourhoods of x (B, C, H, W)."""
    B, C, H, W = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((C, k, k, B, H, W), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, :, dy:dy + H, dx:dx + W].transpose(1, 0, 2, 3)
    return cols.reshape(C * k * k, B * H * W)


def conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 cross-correlation, x (B, C, H, W), w (O, C, k, k)."""
    B, _, H, W = x.shape
    out = w.reshape(w.shape[0], -1) @ _im2col(x, w.shape[-1])
    return np.ascontiguousarray(out.reshape(-1, B, H, W).transpose(1, 0, 2, 3))


def _conv_weight_grad(x: np.ndarray, gout: np.ndarray, k: int) -> np.ndarray:
    g = gout.transpose(1, 0, 2, 3).reshape(gout.shape[1], -1)
    return g @ _im2col(x, k).T


@dataclass
class Network:
    """Layer chain with an optional residual connection.

    Args:
        layers: layer list.
        residual: if set, the output is added to these input channels
            (``residual = (start, stop)``), so a zero last layer gives the identity.
    """

    layers: list
    residual: tuple[int, int] | None = None
    offsets: list = field(init=False, repr=False)
    n_params: int = field(init=False)

    def __post_init__(self):
        offsets, pos = [], 0
        for layer in self.layers:
            nw, nb = _param_sizes(layer)
            offsets.append((pos, pos + nw, pos + nw + nb))
            pos += nw + nb
        self.offsets = offsets
        self.n_params = pos

    def _unpack(self, params, i):
        layer = self.layers[i]
        a, b, c = self.offsets[i]
        if isinstance(layer, Conv):
            w = params[a:b].reshape(layer.cout, layer.cin, layer.k, layer.k)
        else:
            w = params[a:b].reshape(layer.n_out, layer.n_in)
        return w, (params[b:c] if c > b else None)

    def init_params(self, seed: int, zero_last: bool = False) -> np.ndarray:
        """He-normal weights, zero biases; optionally zero the last parametrised layer."""
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params)
        last = max((i for i, l in enumerate(self.layers) if _param_sizes(l)[0]), default=None)
        for i, layer in enumerate(self.layers):
            a, b, _ = self.offsets[i]
            if b == a or (zero_last and i == last):
                continue
            fan_in = layer.cin * layer.k**2 if isinstance(layer, Conv) else layer.n_in
            params[a:b] = rng.standard_normal(b - a) * np.sqrt(2.0 / fan_in)
        return params

    def forward(self, params: np.ndarray, x: np.ndarray, keep: bool = False):
        """Network output; with ``keep=True`` also returns the activations needed by :meth:`backward`."""
        params = np.asarray(params, dtype=x.dtype)
        if len(params) != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {len(params)}")
        outs = []
        h = x
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if h.ndim != 4 or h.shape[1] != layer.cin:
                    raise ValueError(f"layer {i}: expected {layer.cin} channels, got shape {h.shape}")
                w, bias = self._unpack(params, i)
                h = conv2d(h, w)
                if bias is not None:
                    h = h + bias[None, :, None, None]
            elif isinstance(layer, ReLU):
                h = np.maximum(h, 0)
            elif isinstance(layer, AvgPool):
                B, C, H, W = h.shape
                if H % layer.fy or W % layer.fx:
                    raise ValueError(f"layer {i}: {H}x{W} not divisible by pool {layer.fy}x{layer.fx}")
                h = h.reshape(B, C, H // layer.fy, layer.fy, W // layer.fx, layer.fx).mean(axis=(3, 5))
            elif isinstance(layer, Upsample):
                h = np.repeat(np.repeat(h, layer.fy, axis=2), layer.fx, axis=3)
            elif isinstance(layer, Concat):
                skip = x if layer.source == -1 else outs[layer.source]
                if skip.shape[2:] != h.shape[2:]:
                    raise ValueError(f"layer {i}: cannot concat {skip.shape} with {h.shape}")
                h = np.concatenate([h, skip], axis=1)
            elif isinstance(layer, Dense):
                flat = h.reshape(h.shape[0], -1)
                if flat.shape[1] != layer.n_in:
                    raise ValueError(f"layer {i}: expected {layer.n_in} inputs, got {flat.shape[1]}")
                w, bias = self._unpack(params, i)
                h = flat @ w.T + bias
            elif isinstance(layer, Reshape):
                h = h.reshape((h.shape[0],) + tuple(layer.shape))
            outs.append(h)
        if self.residual is not None:
            a, b = self.residual
            h = h + x[:, a:b]
        return (h, outs) if keep else h

    def backward(self, params: np.ndarray, x: np.ndarray, outs: list, gout: np.ndarray):
        """Gradients ``(d loss/d params, d loss/d x)`` given ``gout = d loss/d output``."""
        params = np.asarray(params, dtype=x.dtype)
        grad = np.zeros(self.n_params, dtype=x.dtype)
        gx = np.zeros_like(x)
        if self.residual is not None:
            a, b = self.residual
            gx[:, a:b] += gout
        g_outs: list = [None] * len(self.layers)
        g_outs[-1] = gout
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = g_outs[i]
            if g is None:
                g = np.zeros_like(outs[i])
            h_in = x if i == 0 else outs[i - 1]
            if isinstance(layer, Conv):
                w, bias = self._unpack(params, i)
                a, b, c = self.offsets[i]
                grad[a:b] = _conv_weight_grad(h_in, g, layer.k).ravel()
                if bias is not None:
                    grad[b:c] = g.sum(axis=(0, 2, 3))
                g_in = conv2d(g, np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)))
            elif isinstance(layer, ReLU):
                g_in = g * (h_in > 0)
            elif isinstance(layer, AvgPool):
                g_in = np.repeat(np.repeat(g, layer.fy, axis=2), layer.fx, axis=3) / (layer.fy * layer.fx)
            elif isinstance(layer, Upsample):
                B, C, H, W = g.shape
                g_in = g.reshape(B, C, H // layer.fy, layer.fy, W // layer.fx, layer.fx).sum(axis=(3, 5))
            elif isinstance(layer, Concat):
                n = h_in.shape[1]
                g_in = g[:, :n]
                g_skip = g[:, n:]
                if layer.source == -1:
                    gx += g_skip
                else:
                    g_outs[layer.source] = g_skip if g_outs[layer.source] is None else g_outs[layer.source] + g_skip
            elif isinstance(layer, Dense):
                w, _ = self._unpack(params, i)
                a, b, c = self.offsets[i]
                flat = h_in.reshape(h_in.shape[0], -1)
                grad[a:b] = (g.T @ flat).ravel()
                grad[b:c] = g.sum(axis=0)
                g_in = (g @ w).reshape(h_in.shape)
            elif isinstance(layer, Reshape):
                g_in = g.reshape(h_in.shape)
            if i == 0:
                gx += g_in
            else:
                g_outs[i - 1] = g_in if g_outs[i - 1] is None else g_outs[i - 1] + g_in
        return grad, gx


def unet(cin: int, cout: int, width: int = 8, levels: int = 2, residual: bool = False,
         pool: tuple[int, int] = (2, 2)) -> Network:
    """U-shaped network: ``levels`` poolings, channel width doubling per level, skip concatenations."""
    layers: list = []
    skips = []
    ch_in, ch = cin, width
    for _ in range(levels):
        layers += [Conv(ch_in, ch), ReLU(), Conv(ch, ch), ReLU()]
        skips.append((len(layers) - 1, ch))
        layers.append(AvgPool(*pool))
        ch_in, ch = ch, ch * 2
    layers += [Conv(ch_in, ch), ReLU(), Conv(ch, ch), ReLU()]
    for skip_id, skip_ch in reversed(skips):
        layers += [Upsample(*pool), Conv(ch, skip_ch), ReLU(), Concat(skip_id),
                   Conv(2 * skip_ch, skip_ch), ReLU()]
        ch = skip_ch
    layers.append(Conv(ch, cout))
    return Network(layers, (0, cout) if residual else None)


def encoder_decoder(cin: int, in_shape: tuple[int, int], out_size: int, width: int = 8,
                    pools: tuple[tuple[int, int], ...] = ((4, 2), (4, 2)), base: int = 5,
                    ) -> Network:
    """Trace-stack-to-image network: pooled conv encoder, dense bottleneck, upsampling decoder.

    The decoder starts from ``base x base`` and doubles until ``out_size``.
    """
    n_up = 0
    while base * 2**n_up < out_size:
        n_up += 1
    if base * 2**n_up != out_size:
        raise ValueError(f"out_size {out_size} is not base {base} times a power of two")
    layers: list = []
    H, W = in_shape
    ch_in, ch = cin, width
    for fy, fx in pools:
        layers += [Conv(ch_in, ch), ReLU(), AvgPool(fy, fx)]
        H, W = H // fy, W // fx
        ch_in, ch = ch, ch * 2
    dec = width * 2
    layers += [Dense(ch_in * H * W, dec * base * base), ReLU(), Reshape((dec, base, base))]
    for _ in range(n_up):
        layers += [Upsample(), Conv(dec, width), ReLU()]
        dec = width
    layers.append(Conv(dec, 1))
    return Network(layers)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """``0.5 * sum((pred - target)^2) / batch`` and its gradient."""
    diff = pred - target
    n = pred.shape[0]
    return 0.5 * float(np.sum(diff * diff)) / n, diff / n


def bce_logits_loss(logits: np.ndarray, target: np.ndarray, pos_weight: float = 1.0):
    """Pixel-mean weighted binary cross-entropy on logits, and its gradient."""
    sp_pos = np.logaddexp(0, -logits)  # -log sigmoid(z)
    sp_neg = np.logaddexp(0, logits)   # -log(1 - sigmoid(z))
    loss = pos_weight * target * sp_pos + (1 - target) * sp_neg
    sig = 0.5 * (1 + np.tanh(0.5 * logits))
    grad = pos_weight * target * (sig - 1) + (1 - target) * sig
    n = logits.size
    return float(np.sum(loss)) / n, grad / n


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0
    loss: str = "mse"
    pos_weight: float = 1.0
    dtype: str = "float32"


@dataclass
class TrainLog:
    train_loss: list
    val_loss: list
    seed: int
    best_epoch: int

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def _loss(cfg: TrainConfig, pred, target):
    if cfg.loss == "mse":
        return mse_loss(pred, target)
    if cfg.loss == "bce":
        return bce_logits_loss(pred, target, cfg.pos_weight)
    raise ValueError(f"unknown loss {cfg.loss!r}")


def evaluate(net: Network, params: np.ndarray, inputs: np.ndarray, batch: int = 16) -> np.ndarray:
    outs = [net.forward(params, inputs[i:i + batch]) for i in range(0, len(inputs), batch)]
    return np.concatenate(outs, axis=0)


def train_network(net: Network, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
                  params: np.ndarray | None = None) -> tuple[np.ndarray, TrainLog]:
    """Mini-batch Adam on ``cfg.loss``; returns the best-validation parameters.

    The last ``val_fraction`` of a seeded permutation is held out (at least one
    example when more than one is available; otherwise the training loss is
    used for checkpointing).
    """
    if len(inputs) != len(targets):
        raise ValueError("inputs and targets differ in length")
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    n = len(inputs)
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n > 1 else 0
    if cfg.val_fraction > 0 and n > 1:
        n_val = max(n_val, 1)
    tr_idx, val_idx = perm[: n - n_val], perm[n - n_val:]
    X = np.asarray(inputs, dtype=dtype)
    Y = np.asarray(targets, dtype=dtype)
    theta = net.init_params(cfg.seed, zero_last=net.residual is not None) if params is None else np.array(params, float)
    state = AdamState.zeros_like(theta)
    best, best_loss, best_epoch = theta.copy(), np.inf, -1
    train_hist, val_hist = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(tr_idx)
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            pred, outs = net.forward(theta, X[idx], keep=True)
            loss, g = _loss(cfg, pred, Y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            grad, _ = net.backward(theta, X[idx], outs, g)
            state, delta = adaptive_update(state, grad.astype(float), cfg.learning_rate)
            theta = theta + delta
            total += loss * len(idx)
        train_hist.append(total / max(len(tr_idx), 1))
        if len(val_idx):
            pred = evaluate(net, theta, X[val_idx])
            val = _loss(cfg, pred, Y[val_idx])[0]
        else:
            val = train_hist[-1]
        val_hist.append(float(val))
        if val < best_loss:
            best, best_loss, best_epoch = theta.copy(), val, epoch
    return best, TrainLog(train_hist, val_hist, cfg.seed, best_epoch)
