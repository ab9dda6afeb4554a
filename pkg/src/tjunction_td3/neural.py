"""Dense ReLU networks with hand-written backprop, Adam and Polyak averaging.

Parameters of a network live in one flat float64 vector; per-layer weight
matrices (shape ``(n_in, n_out)``, applied as ``x @ W + b``) and bias vectors
are views into it, so optimizer and target updates are single vector ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class Activation(str, Enum):
    TANH = "tanh"
    IDENTITY = "identity"


class ShapeError(ValueError):
    pass


def _layout(sizes: Sequence[int]) -> list[tuple[int, int, int, int]]:
    """(weight offset, n_in, n_out, bias offset) per layer."""
    out, off = [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        out.append((off, n_in, n_out, off + n_in * n_out))
        off += n_in * n_out + n_out
    return out


def parameter_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _views(flat: np.ndarray, sizes: Sequence[int]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    ws, bs = [], []
    for w_off, n_in, n_out, b_off in _layout(sizes):
        ws.append(flat[w_off:w_off + n_in * n_out].reshape(n_in, n_out))
        bs.append(flat[b_off:b_off + n_out])
    return ws, bs


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    output_activation: Activation
    params: np.ndarray
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        self.output_activation = Activation(self.output_activation)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"invalid layer sizes {self.layer_sizes}")
        expected = parameter_count(self.layer_sizes)
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (expected,):
            raise ShapeError(f"expected {expected} parameters for {self.layer_sizes}, got {self.params.shape}")
        self.weights, self.biases = _views(self.params, self.layer_sizes)

    @classmethod
    def from_layers(cls, weights, biases, output_activation=Activation.IDENTITY) -> "Mlp":
        sizes = [np.shape(weights[0])[0]] + [np.shape(w)[1] for w in weights]
        for k, (w, b) in enumerate(zip(weights, biases)):
            if np.shape(w) != (sizes[k], sizes[k + 1]) or np.shape(b) != (sizes[k + 1],):
                raise ShapeError(f"layer {k}: weight {np.shape(w)} / bias {np.shape(b)} do not chain")
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in zip(weights, biases)])
        return cls(tuple(sizes), output_activation, flat)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.output_activation, self.params.copy())


def init_mlp(sizes: Sequence[int], output_activation: Activation | str, rng: np.random.Generator,
             final_scale: float = 1.0) -> Mlp:
    """Uniform(+-1/sqrt(fan_in)) weights and biases; the last layer is scaled by ``final_scale``."""
    net = Mlp(tuple(sizes), Activation(output_activation), np.zeros(parameter_count(sizes)))
    n_layers = len(net.weights)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        bound = 1.0 / math.sqrt(w.shape[0])
        if k == n_layers - 1:
            bound *= final_scale
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


@dataclass
class Gradients:
    """Partials of a scalar loss w.r.t. every parameter (flat, with views) and the input."""

    layer_sizes: tuple[int, ...]
    params: np.ndarray
    input: np.ndarray
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.weights, self.biases = _views(self.params, self.layer_sizes)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]   # input of every layer
    hidden: list[np.ndarray]   # post-ReLU activations (same objects as inputs[1:])
    output: np.ndarray
    squeeze: bool


def _check_input(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x[None, :] if squeeze else x
    if x2.ndim != 2 or x2.shape[1] != net.n_in:
        raise ShapeError(f"input has shape {x.shape}, network expects {net.n_in} features")
    return x2, squeeze


def forward_cache(net: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    x2, squeeze = _check_input(net, x)
    inputs = [x2]
    a = x2
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w
        z += b
        if k < last:
            np.maximum(z, 0.0, out=z)
            inputs.append(z)
        a = z
    if net.output_activation is Activation.TANH:
        np.tanh(a, out=a)
    cache = ForwardCache(inputs, inputs[1:], a, squeeze)
    return (a[0] if squeeze else a), cache


def forward(net: Mlp, x) -> np.ndarray:
    """Affine layers with ReLU between them and the configured output head."""
    return forward_cache(net, x)[0]


def backward_cache(net: Mlp, cache: ForwardCache, upstream, param_grads: bool = True) -> Gradients:
    g = np.asarray(upstream, dtype=np.float64)
    g = g[None, :] if cache.squeeze and g.ndim == 1 else g
    if g.shape != cache.output.shape:
        raise ShapeError(f"upstream has shape {np.shape(upstream)}, output is {cache.output.shape}")
    flat = np.empty_like(net.params) if param_grads else np.zeros(0)  # every entry is written below
    grads_w, grads_b = _views(flat, net.layer_sizes) if param_grads else ([], [])
    if net.output_activation is Activation.TANH:
        delta = g * (1.0 - cache.output * cache.output)
    else:
        delta = g
    for k in range(len(net.weights) - 1, -1, -1):
        a_in = cache.inputs[k]
        if param_grads:
            np.matmul(a_in.T, delta, out=grads_w[k])
            np.sum(delta, axis=0, out=grads_b[k])
        delta = delta @ net.weights[k].T
        if k > 0:
            delta *= a_in > 0.0
    gin = delta[0] if cache.squeeze else delta
    grads = Gradients.__new__(Gradients)
    grads.layer_sizes, grads.params, grads.input = net.layer_sizes, flat, gin
    grads.weights, grads.biases = grads_w, grads_b
    return grads


def backward(net: Mlp, x, upstream) -> Gradients:
    """Reverse-mode partials of <upstream, forward(net, x)> w.r.t. parameters and input.

    For a batch input the parameter partials are summed over the batch.
    """
    _, cache = forward_cache(net, x)
    return backward_cache(net, cache, upstream)


# ------------------------------------------------------------------- optimizers


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 3e-4, **kw) -> "AdamState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), lr=lr, **kw)


def adam_step(net: Mlp, grads: Gradients, opt: AdamState) -> tuple[Mlp, AdamState]:
    """Bias-corrected Adam update, in place. Returns its arguments for chaining."""
    g = grads.params
    if g.shape != net.params.shape or opt.m.shape != net.params.shape:
        raise ShapeError("gradient / optimizer state does not match the network parameters")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    tmp = np.multiply(g, 1.0 - b1)
    opt.m *= b1
    opt.m += tmp
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - b2
    opt.v *= b2
    opt.v += tmp
    np.sqrt(opt.v, out=tmp)
    tmp *= 1.0 / math.sqrt(1.0 - b2 ** opt.step)
    tmp += opt.eps
    np.divide(opt.m, tmp, out=tmp)
    tmp *= opt.lr / (1.0 - b1 ** opt.step)
    net.params -= tmp
    return net, opt


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """target <- tau * online + (1 - tau) * target, in place."""
    if target.layer_sizes != online.layer_sizes or target.output_activation != online.output_activation:
        raise ShapeError(f"architecture mismatch: {target.layer_sizes} vs {online.layer_sizes}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    target.params *= 1.0 - tau
    target.params += tau * online.params
    return target


# ---------------------------------------------------------------- gradient check

GRADCHECK_ARCHS = (
    ((3, 4, 2), Activation.IDENTITY),
    ((5, 8, 3), Activation.TANH),
    ((10, 16, 16, 3), Activation.TANH),
    ((48, 32, 32, 1), Activation.IDENTITY),
    ((45, 256, 256, 3), Activation.TANH),
)


def _forward_extended(net: Mlp, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = x
    ws, bs = _views(params, net.layer_sizes)
    for k, (w, b) in enumerate(zip(ws, bs)):
        a = a @ w + b
        if k < len(ws) - 1:
            a = np.maximum(a, 0)
    return np.tanh(a) if net.output_activation is Activation.TANH else a


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.zeros_like(scale)
    mask = scale >= floor
    err[mask] = np.abs(analytic[mask] - numeric[mask]) / scale[mask]
    return err


def finite_difference_check(net: Mlp, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5,
                            floor: float = 1e-8, recheck_above: float = 1e-6) -> float:
    """Max relative error of ``backward`` against central differences.

    Every parameter and input coordinate is perturbed by +-h and the scalar
    <upstream, forward> re-evaluated as a black box. Entries whose binary64
    difference quotient is limited by round-off (relative error above
    ``recheck_above``) are re-evaluated in extended precision. Entries where
    both magnitudes are below ``floor`` are skipped.
    """
    analytic = backward(net, x, upstream)
    up = np.asarray(upstream, dtype=np.float64)

    def f(p: np.ndarray, xx: np.ndarray) -> float:
        probe = Mlp(net.layer_sizes, net.output_activation, p)
        return float(np.dot(up, forward(probe, xx)))

    def f_ext(p: np.ndarray, xx: np.ndarray) -> np.longdouble:
        return np.sum(up.astype(np.longdouble) * _forward_extended(net, p, xx))

    p = net.params.copy()
    num_p = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        fp = f(p, x)
        p[i] = orig - h
        fm = f(p, x)
        p[i] = orig
        num_p[i] = (fp - fm) / (2 * h)
    xv = np.array(x, dtype=np.float64)
    num_x = np.empty_like(xv)
    for i in range(xv.size):
        orig = xv[i]
        xv[i] = orig + h
        fp = f(p, xv)
        xv[i] = orig - h
        fm = f(p, xv)
        xv[i] = orig
        num_x[i] = (fp - fm) / (2 * h)

    err_p = _relative_error(analytic.params, num_p, floor)
    err_x = _relative_error(analytic.input, num_x, floor)
    if np.any(err_p > recheck_above) or np.any(err_x > recheck_above):
        pl, xl, hl = p.astype(np.longdouble), xv.astype(np.longdouble), np.longdouble(h)
        for i in np.nonzero(err_p > recheck_above)[0]:
            q = pl.copy()
            q[i] += hl
            fp = f_ext(q, xl)
            q[i] -= 2 * hl
            fm = f_ext(q, xl)
            num_p[i] = float((fp - fm) / (2 * hl))
        for i in np.nonzero(err_x > recheck_above)[0]:
            q = xl.copy()
            q[i] += hl
            fp = f_ext(pl, q)
            q[i] -= 2 * hl
            fm = f_ext(pl, q)
            num_x[i] = float((fp - fm) / (2 * hl))
        err_p = _relative_error(analytic.params, num_p, floor)
        err_x = _relative_error(analytic.input, num_x, floor)
    return float(max(err_p.max(initial=0.0), err_x.max(initial=0.0)))


def gradcheck(seeds: Sequence[int] = (0, 1, 2, 3, 4), archs=GRADCHECK_ARCHS, h: float = 1e-5) -> list[dict]:
    """Run the finite-difference check on one random network per (seed, architecture) pair."""
    results = []
    for seed, (sizes, act) in zip(seeds, archs):
        rng = np.random.default_rng(seed)
        net = init_mlp(sizes, act, rng)
        x = rng.normal(size=sizes[0])
        up = rng.normal(size=sizes[-1])
        err = finite_difference_check(net, x, up, h=h)
        results.append({"seed": seed, "layer_sizes": sizes, "activation": act.value, "max_rel_error": err})
    return results
