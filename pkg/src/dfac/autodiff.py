"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run tape: every op returns a Tensor holding its value, its parent
tensors and a closure that maps the incoming gradient to parent gradients.
Covers exactly what the agent networks and mixers need (affine maps, ReLU/ELU,
element-wise products with broadcasting, reductions, softmax, gathers) plus
bias-corrected Adam.
"""

from __future__ import annotations

import math

import numpy as np


class Tensor:
    """A node in the computation graph.

    `parents` and `_backward` are empty for leaves (constants, parameters).
    `_backward(grad)` returns one gradient array (or None) per parent.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(self, value, parents=(), backward=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self._backward = backward
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"

    # operator sugar; scalars/arrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """Learnable leaf tensor; gradients accumulate into `.grad`."""

    def __init__(self, value, name):
        super().__init__(value, (), None, name)
        self.grad = np.zeros_like(self.value)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(output: Tensor, output_gradient=None) -> None:
    """Accumulate d(output)/d(param) into every reachable Parameter's `.grad`.

    `output_gradient` defaults to ones and must match the output shape.
    """
    if output_gradient is None:
        seed = np.ones_like(output.value)
    else:
        seed = np.asarray(output_gradient, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise ValueError(
                f"output_gradient shape {seed.shape} does not match "
                f"output shape {output.value.shape}"
            )

    # iterative post-order topological sort
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(output): seed}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params) -> None:
    for p in params:
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    value = a.value + b.value

    def back(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(value, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    value = a.value - b.value

    def back(g):
        return _unbroadcast(g, a.value.shape), -_unbroadcast(g, b.value.shape)

    return Tensor(value, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    value = a.value * b.value

    def back(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Tensor(value, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")
    value = av @ bv

    def back(g):
        return g @ bv.T, av.T @ g

    return Tensor(value, (a, b), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return Tensor(x.value * mask, (x,), lambda g: (g * mask,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = np.minimum(x.value, 0.0)
    value = np.where(x.value > 0, x.value, alpha * np.expm1(neg))

    def back(g):
        return (np.where(x.value > 0, g, g * alpha * np.exp(neg)),)

    return Tensor(value, (x,), back)


def absolute(x: Tensor) -> Tensor:
    return Tensor(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),))


def cosine(x: Tensor) -> Tensor:
    return Tensor(np.cos(x.value), (x,), lambda g: (-g * np.sin(x.value),))


def exp(x: Tensor) -> Tensor:
    value = np.exp(x.value)
    return Tensor(value, (x,), lambda g: (g * value,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), (x,), lambda g: (g / x.value,))


def softplus(x: Tensor) -> Tensor:
    # stable: log(1 + e^x) = max(x, 0) + log1p(e^{-|x|}); tanh-form sigmoid
    # avoids exp overflow in the gradient
    value = np.maximum(x.value, 0.0) + np.log1p(np.exp(-np.abs(x.value)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return Tensor(value, (x,), lambda g: (g * sig,))


def sigmoid(x: Tensor) -> Tensor:
    value = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return Tensor(value, (x,), lambda g: (g * value * (1.0 - value),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor(s, (x,), back)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = x.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.value.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.value.shape).copy(),)

    return Tensor(value, (x,), back)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.value.size
    else:
        n = x.value.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Max along `axis`; gradient routed to the first argmax (tie-break)."""
    idx = np.expand_dims(np.argmax(x.value, axis=axis), axis)
    value = np.take_along_axis(x.value, idx, axis=axis).squeeze(axis)

    def back(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return Tensor(value, (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.value.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(
        x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),)
    )


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows of `x` (axis 0) by integer index array."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("gather_rows: index must be 1-D")
    value = x.value[idx]
    n_rows = x.value.shape[0]

    def back(g):
        # one-hot matmul beats np.add.at for the large batches used in training
        onehot = np.zeros((idx.size, n_rows))
        onehot[np.arange(idx.size), idx] = 1.0
        flat = g.reshape(idx.size, -1)
        return ((onehot.T @ flat).reshape(x.value.shape),)

    return Tensor(value, (x,), back)


def multihead_input(x, w: Tensor, b: Tensor) -> Tensor:
    """Shared input through per-head weights: [R,I] x [H,I,O] + [H,O] -> [R,H,O]."""
    xv = np.asarray(x, dtype=np.float64)
    value = np.tensordot(xv, w.value, axes=([1], [1])) + b.value

    def back(g):
        return np.tensordot(xv, g, axes=([0], [0])).transpose(1, 0, 2), g.sum(axis=0)

    return Tensor(value, (w, b), back)


def multihead_affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-head dense layers in one op: [R,H,I] x [H,I,O] + [H,O] -> [R,H,O]."""
    xt = np.ascontiguousarray(x.value.transpose(1, 0, 2))  # [H,R,I]
    value = (xt @ w.value).transpose(1, 0, 2) + b.value

    def back(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2))    # [H,R,O]
        gx = (gt @ w.value.transpose(0, 2, 1)).transpose(1, 0, 2)
        gw = xt.transpose(0, 2, 1) @ gt
        return gx, gw, g.sum(axis=0)

    return Tensor(value, (x, w, b), back)


def stack_rows(tensors) -> Tensor:
    tensors = list(tensors)
    value = np.stack([t.value for t in tensors], axis=0)

    def back(g):
        return tuple(g[i] for i in range(len(tensors)))

    return Tensor(value, tuple(tensors), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(value, tuple(tensors), back)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def fanin_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Affine:
    """Dense layer y = x @ W + b with fan-in uniform init."""

    def __init__(self, rng, fan_in: int, fan_out: int, name: str):
        self.w = Parameter(fanin_uniform(rng, fan_in, (fan_in, fan_out)), name + ".w")
        self.b = Parameter(fanin_uniform(rng, fan_in, (fan_out,)), name + ".b")

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)

    def parameters(self):
        return [self.w, self.b]


_ACTIVATIONS = {"relu": relu, "elu": elu, "softplus": softplus, None: lambda t: t}


class MLP:
    """Stack of affine layers with an explicit activation per layer.

    `activations` has one entry per layer ("relu", "elu", "softplus" or None
    for linear); this makes torsos with a ReLU after the first layer only
    straightforward to declare.
    """

    def __init__(self, rng, sizes, activations, name: str):
        if len(activations) != len(sizes) - 1:
            raise ValueError("MLP: need one activation entry per layer")
        self.layers = [
            Affine(rng, sizes[i], sizes[i + 1], f"{name}.{i}")
            for i in range(len(sizes) - 1)
        ]
        self.activations = list(activations)

    def __call__(self, x: Tensor) -> Tensor:
        for layer, act in zip(self.layers, self.activations):
            x = _ACTIVATIONS[act](layer(x))
        return x

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam. `step()` consumes and zeroes the gradients.

    Parameter values and gradients are repointed to views into contiguous
    vectors so the whole update runs as a handful of flat array passes.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("Adam: duplicate parameter names")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        total = sum(p.value.size for p in self.params)
        self.flat_value = np.empty(total)
        self.flat_grad = np.zeros(total)
        offset = 0
        for p in self.params:
            n = p.value.size
            shape = p.value.shape
            self.flat_value[offset:offset + n] = p.value.reshape(-1)
            p.value = self.flat_value[offset:offset + n].reshape(shape)
            self.flat_grad[offset:offset + n] = p.grad.reshape(-1)
            p.grad = self.flat_grad[offset:offset + n].reshape(shape)
            offset += n
        self.m = np.zeros(total)
        self.v = np.zeros(total)
        self._scratch = np.empty(total)

    def step(self) -> None:
        g = self.flat_grad
        if not np.all(np.isfinite(g)):
            for p in self.params:
                if not np.all(np.isfinite(p.grad)):
                    raise FloatingPointError(
                        f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        self.m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=self._scratch)
        self.m += self._scratch
        self.v *= self.beta2
        np.multiply(g, g, out=self._scratch)
        self._scratch *= 1.0 - self.beta2
        self.v += self._scratch
        denom = np.sqrt(np.multiply(self.v, 1.0 / bc2, out=self._scratch),
                        out=self._scratch)
        denom += self.eps
        np.divide(self.m, denom, out=denom)
        denom *= self.lr / bc1
        self.flat_value -= denom
        g[...] = 0.0


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def gradient_check(loss_fn, params, rng: np.random.Generator,
                   n_probes: int = 20, step: float = 1e-5,
                   rtol: float = 1e-4, atol: float = 1e-7):
    """Compare backprop gradients with central finite differences.

    `loss_fn()` must rebuild the graph and return a scalar Tensor. Probes
    `n_probes` randomly chosen parameter coordinates. Returns the worst
    (relative_error, parameter_name) pair and raises on failure.
    """
    params = list(params)
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    worst = (0.0, None)
    for _ in range(n_probes):
        pi = int(rng.integers(len(params)))
        p = params[pi]
        ci = int(rng.integers(p.value.size))
        flat = p.value.reshape(-1)
        orig = flat[ci]
        flat[ci] = orig + step
        up = float(loss_fn().value)
        flat[ci] = orig - step
        down = float(loss_fn().value)
        flat[ci] = orig
        numeric = (up - down) / (2.0 * step)
        a = analytic[pi].reshape(-1)[ci]
        err = abs(a - numeric) / max(abs(a), abs(numeric), atol / rtol)
        if err > worst[0]:
            worst = (err, f"{p.name}[{ci}]")
        if err > rtol and abs(a - numeric) > atol:
            raise AssertionError(
                f"gradient mismatch at {p.name}[{ci}]: "
                f"backprop {a:.10g} vs finite-diff {numeric:.10g} (rel {err:.3g})"
            )
    return worst
