"""Small trainable classification heads with hand-written gradients.

Two heads are provided: a linear probe over a ``d``-vector and a temporal
convolutional network ("tcn-v1") over a ``K x d`` snippet sequence. Both
expose their parameters as a name -> array mapping so the optimiser and the
gradient checker can treat them uniformly. Everything runs in float64 with
batch size 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Union

import numpy as np

from .errors import DimMismatch, InvalidArgument

Params = Dict[str, np.ndarray]

TCN_ARCH = "tcn-v1"


@dataclass
class LinearHead:
    weight: np.ndarray  # num_classes x d
    bias: np.ndarray  # num_classes

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def params(self) -> Params:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class ConvLayer:
    kernel: np.ndarray  # ch_out x ch_in x kw
    bias: np.ndarray  # ch_out
    dilation: int


@dataclass
class TcnHead:
    layers: list[ConvLayer]
    output: LinearHead

    @property
    def in_dim(self) -> int:
        return self.layers[0].kernel.shape[1]

    def params(self) -> Params:
        out: Params = {}
        for n, layer in enumerate(self.layers):
            out[f"conv{n}.kernel"] = layer.kernel
            out[f"conv{n}.bias"] = layer.bias
        out["out.weight"] = self.output.weight
        out["out.bias"] = self.output.bias
        return out


Head = Union[LinearHead, TcnHead]


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(in_dim: int, num_classes: int = 2, rng: np.random.Generator | None = None) -> LinearHead:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) init; all zeros when ``rng`` is None."""
    if rng is None:
        return LinearHead(np.zeros((num_classes, in_dim)), np.zeros(num_classes))
    return LinearHead(_uniform(rng, in_dim, (num_classes, in_dim)), _uniform(rng, in_dim, num_classes))


def init_tcn(
    in_dim: int,
    channels: int = 64,
    dilations: Sequence[int] = (1, 2, 4),
    kernel_width: int = 3,
    num_classes: int = 2,
    rng: np.random.Generator | None = None,
) -> TcnHead:
    dilations = tuple(int(x) for x in dilations)
    if not dilations:
        raise InvalidArgument("a TCN needs at least one layer")
    if any(x < 1 or x & (x - 1) for x in dilations) or any(b <= a for a, b in zip(dilations, dilations[1:])):
        raise InvalidArgument(f"dilations must be strictly increasing powers of 2, got {dilations}")
    if kernel_width < 1 or kernel_width % 2 == 0:
        raise InvalidArgument(f"kernel width must be odd, got {kernel_width}")
    layers = []
    ch_in = in_dim
    for dil in dilations:
        shape = (channels, ch_in, kernel_width)
        if rng is None:
            kernel, bias = np.zeros(shape), np.zeros(channels)
        else:
            fan_in = ch_in * kernel_width
            kernel, bias = _uniform(rng, fan_in, shape), _uniform(rng, fan_in, channels)
        layers.append(ConvLayer(kernel, bias, dil))
        ch_in = channels
    return TcnHead(layers, init_linear(channels, num_classes, rng))


def _as_input(head: Head, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if isinstance(head, LinearHead):
        if x.ndim != 1 or x.shape[0] != head.in_dim:
            raise DimMismatch(f"linear head expects a {head.in_dim}-vector, got shape {x.shape}")
    else:
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != head.in_dim:
            raise DimMismatch(f"TCN expects a K x {head.in_dim} sequence, got shape {x.shape}")
    return x


def linear_forward(head: LinearHead, x) -> np.ndarray:
    x = _as_input(head, x)
    return head.weight @ x + head.bias


def _taps(K: int, kw: int, dilation: int):
    """(kernel tap, output rows, input rows) for every tap that overlaps the sequence."""
    for k in range(kw):
        s = (k - kw // 2) * dilation
        if abs(s) >= K:
            continue
        if s >= 0:
            yield k, slice(0, K - s), slice(s, K)
        else:
            yield k, slice(-s, K), slice(0, K + s)


def conv1d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, dilation: int) -> np.ndarray:
    """Dilated 'same' convolution with zero padding; ``x`` is ``K x ch_in``.

    Tap ``k`` of a width-``kw`` kernel reads ``x[t + (k - kw // 2) * dilation]``.
    """
    K = x.shape[0]
    z = np.zeros((K, kernel.shape[0]), dtype=np.result_type(x, kernel))
    z += bias
    for k, out_rows, in_rows in _taps(K, kernel.shape[2], dilation):
        z[out_rows] += x[in_rows] @ kernel[:, :, k].T
    return z


def _tcn_forward(head: TcnHead, x: np.ndarray):
    hs = [x]
    zs = []
    h = x
    for layer in head.layers:
        z = conv1d(h, layer.kernel, layer.bias, layer.dilation)
        a = np.maximum(z, 0.0)
        h = a + h if a.shape == h.shape else a
        zs.append(z)
        hs.append(h)
    pooled = h.mean(axis=0)
    logits = head.output.weight @ pooled + head.output.bias
    return logits, (hs, zs, pooled)


def tcn_forward(head: TcnHead, x, return_conv: bool = False):
    """Logits for a ``K x d`` sequence.

    With ``return_conv`` the pre-activation output of every convolution is
    returned as well.
    """
    x = _as_input(head, x)
    logits, (_, zs, _) = _tcn_forward(head, x)
    if return_conv:
        return logits, zs
    return logits


def forward(head: Head, x) -> np.ndarray:
    if isinstance(head, LinearHead):
        return linear_forward(head, x)
    return tcn_forward(head, x)


def _nll(z: np.ndarray, label: int):
    shifted = z - z.max()
    lse = np.log(np.exp(shifted).sum())
    return lse - shifted[label], shifted, lse


def ce_loss(logits, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient with respect to the logits."""
    loss, shifted, lse = _nll(np.asarray(logits, dtype=np.float64), label)
    grad = np.exp(shifted - lse)
    grad[label] -= 1.0
    return float(loss), grad


def backward(head: Head, x, label: int) -> tuple[float, Params]:
    """Loss and exact gradients of ``ce_loss(forward(head, x), label)``."""
    x = _as_input(head, x)
    if isinstance(head, LinearHead):
        loss, dlogits = ce_loss(head.weight @ x + head.bias, label)
        return loss, {"weight": np.outer(dlogits, x), "bias": dlogits}

    logits, (hs, zs, pooled) = _tcn_forward(head, x)
    loss, dlogits = ce_loss(logits, label)
    grads: Params = {
        "out.weight": np.outer(dlogits, pooled),
        "out.bias": dlogits,
    }
    K = x.shape[0]
    dh = np.tile(head.output.weight.T @ dlogits / K, (K, 1))
    for n in range(len(head.layers) - 1, -1, -1):
        layer = head.layers[n]
        h_in, z = hs[n], zs[n]
        dz = dh * (z > 0)
        dkernel = np.zeros_like(layer.kernel)
        dh_in = np.zeros_like(h_in)
        for k, out_rows, in_rows in _taps(K, layer.kernel.shape[2], layer.dilation):
            dkernel[:, :, k] = dz[out_rows].T @ h_in[in_rows]
            dh_in[in_rows] += dz[out_rows] @ layer.kernel[:, :, k]
        grads[f"conv{n}.kernel"] = dkernel
        grads[f"conv{n}.bias"] = dz.sum(axis=0)
        # residual path
        if z.shape == h_in.shape:
            dh_in = dh_in + dh
        dh = dh_in
    return loss, grads


def loss_value(head: Head, x, label: int) -> float:
    return ce_loss(forward(head, x), label)[0]


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    no_decay: frozenset = frozenset()
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def bias_names(params: Params) -> frozenset:
    return frozenset(k for k in params if k == "bias" or k.endswith(".bias"))


def adamw_step(state: OptimizerState, params: Params, grads: Params, lr: float | None = None) -> Params:
    """One AdamW update, in place on ``params``.

    ``param -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)``;
    names listed in ``state.no_decay`` skip the decay term.
    """
    lr = state.lr if lr is None else lr
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimMismatch(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and name not in state.no_decay:
            update = update + state.weight_decay * p
        p -= lr * update
    return params


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    if total_epochs < 1:
        raise InvalidArgument(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise InvalidArgument(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def _cast(head: Head, dtype) -> Head:
    if isinstance(head, LinearHead):
        return LinearHead(head.weight.astype(dtype), head.bias.astype(dtype))
    layers = [ConvLayer(l.kernel.astype(dtype), l.bias.astype(dtype), l.dilation) for l in head.layers]
    return TcnHead(layers, _cast(head.output, dtype))


def _loss_in(head: Head, x: np.ndarray, label: int):
    if isinstance(head, LinearHead):
        z = head.weight @ x + head.bias
    else:
        z = _tcn_forward(head, x)[0]
    return _nll(z, label)[0]


def grad_check(head: Head, x, label: int, h: float = 1e-5) -> float:
    """Worst relative error between ``backward`` and central differences.

    The denominator is ``max(|analytic|, |numeric|, 1e-8)``. Perturbed losses
    are evaluated on an extended-precision copy of the head where the
    platform has one: with float64 losses near 1 the cancellation error of
    the difference quotient is ~1e-11, the same order as the 1e-8 floor
    times the tolerance.
    """
    if not h > 0:
        raise InvalidArgument(f"step h must be positive, got {h}")
    x = _as_input(head, x)
    _, grads = backward(head, x, label)
    wide = _cast(head, np.longdouble)
    xw = x.astype(np.longdouble)
    hw = np.longdouble(h)
    worst = 0.0
    for name, p in wide.params().items():
        g = grads[name].reshape(-1)
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + hw
            up = _loss_in(wide, xw, label)
            flat[idx] = orig - hw
            down = _loss_in(wide, xw, label)
            flat[idx] = orig
            num = float((up - down) / (2 * hw))
            ana = g[idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst
