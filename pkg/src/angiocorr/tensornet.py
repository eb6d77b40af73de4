"""Minimal float64 tensor autodiff engine and the layers the models need.

Values are numpy float64 arrays wrapped in :class:`Tensor` nodes that record
their parents and a backward closure; :func:`backward` runs reverse-mode
accumulation over the topologically sorted graph. Only the operations the
correspondence models use are provided, with broadcasting limited to what
their shapes require. Everything is deterministic for fixed inputs and
parameters.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingGrad, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward_fn = backward_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        # copy on first touch: g may alias another node's buffer
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def backward(t: Tensor) -> None:
    """Reverse-mode accumulation from a scalar tensor."""
    if t.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar, got shape {t.data.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    t.grad = np.ones_like(t.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(-_unbroadcast(g, b.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def power(a: Tensor, n: int) -> Tensor:
    out = Tensor(a.data**n, parents=(a,))

    def bw(g):
        a.accumulate(g * n * a.data ** (n - 1))

    out._backward_fn = bw if out.requires_grad else None
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where unclamped."""
    mask = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi), parents=(a,))

    def bw(g):
        a.accumulate(g * mask)

    out._backward_fn = bw if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(
            f"matmul needs >=2D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate(_unbroadcast(gb, b.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), parents=(a,))

    def bw(g):
        a.accumulate(g * mask)

    out._backward_fn = bw if out.requires_grad else None
    return out


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data), parents=(a,))

    def bw(g):
        a.accumulate(g * np.cos(a.data))

    out._backward_fn = bw if out.requires_grad else None
    return out


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data), parents=(a,))

    def bw(g):
        a.accumulate(-g * np.sin(a.data))

    out._backward_fn = bw if out.requires_grad else None
    return out


# --- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def bw(g):
        a.accumulate(g.reshape(a.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), parents=(a,))

    def bw(g):
        a.accumulate(g.transpose(inv))

    out._backward_fn = bw if out.requires_grad else None
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    out._backward_fn = bw if out.requires_grad else None
    return out


def select(a: Tensor, axis: int, index: int) -> Tensor:
    """Slice out one index along an axis (the axis is dropped)."""
    out = Tensor(np.take(a.data, index, axis=axis), parents=(a,))

    def bw(g):
        full = np.zeros_like(a.data)
        idx = [slice(None)] * a.data.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        a.accumulate(full)

    out._backward_fn = bw if out.requires_grad else None
    return out


def take_along_last(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather one element per row along the last axis; indices shape = a.shape[:-1]."""
    idx = np.asarray(indices)
    if idx.shape != a.data.shape[:-1]:
        raise ShapeMismatch(f"indices {idx.shape} do not match {a.data.shape[:-1]}")
    gathered = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    out = Tensor(gathered, parents=(a,))

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        a.accumulate(full)

    out._backward_fn = bw if out.requires_grad else None
    return out


# --- reductions ----------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def bw(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward_fn = bw if out.requires_grad else None
    return out


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), as_tensor(1.0 / n))


def min_reduce(a: Tensor, axis: int) -> Tensor:
    """Minimum along an axis; gradient flows to the first argmin."""
    idx = np.argmin(a.data, axis=axis)
    out = Tensor(np.min(a.data, axis=axis), parents=(a,))

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(
            full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        a.accumulate(full)

    out._backward_fn = bw if out.requires_grad else None
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data <= b.data
    out = Tensor(np.where(mask, a.data, b.data), parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * mask, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * ~mask, b.data.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


# --- neural ops -------------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, parents=(a,))

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a.accumulate(y * (g - dot))

    out._backward_fn = bw if out.requires_grad else None
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    if gamma.data.shape != x.data.shape[-1:]:
        raise ShapeMismatch(f"gamma {gamma.data.shape} vs features {x.data.shape[-1:]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data, parents=(x, gamma, beta))
    n = x.data.shape[-1]

    def bw(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate(g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gy = g * gamma.data
            t1 = gy.mean(axis=-1, keepdims=True)
            t2 = (gy * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (gy - t1 - xhat * t2))

    out._backward_fn = bw if out.requires_grad else None
    return out


def conv2d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 1
) -> Tensor:
    """2D convolution, NCHW layout, square stride/padding."""
    n, cin, h, wd = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv2d channels: input {cin}, kernel {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    _, _, ho, wo, _, _ = win.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out_data = (cols @ wmat.T).transpose(0, 2, 1).reshape(n, cout, ho, wo)
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeMismatch(f"conv2d bias {b.data.shape} != ({cout},)")
        out_data = out_data + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(out_data, parents=parents)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, cout)
        if w.requires_grad:
            gw = g2.reshape(-1, cout).T @ cols.reshape(-1, cin * kh * kw)
            w.accumulate(gw.reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ]
            if padding:
                x.accumulate(gxp[:, :, padding : padding + h, padding : padding + wd])
            else:
                x.accumulate(gxp)

    out._backward_fn = bw if out.requires_grad else None
    return out


def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor, heads: int, proj: "AttentionParams"
) -> Tensor:
    """Scaled dot-product attention with per-head split and output projection.

    q is (Tq, C); k and v are (Tk, C). C must be divisible by ``heads``.
    """
    tq, c = q.data.shape
    tk, ck = k.data.shape
    if c % heads != 0:
        raise ShapeMismatch(f"model dim {c} not divisible by {heads} heads")
    if ck != c or v.data.shape != (tk, c):
        raise ShapeMismatch(
            f"attention operand shapes {q.data.shape}, {k.data.shape}, {v.data.shape}"
        )
    dh = c // heads

    def split(t: Tensor, length: int) -> Tensor:
        return transpose(reshape(t, (length, heads, dh)), (1, 0, 2))  # (h, T, dh)

    qh = split(proj.wq(q), tq)
    kh = split(proj.wk(k), tk)
    vh = split(proj.wv(v), tk)
    scores = mul(matmul(qh, transpose(kh, (0, 2, 1))), as_tensor(1.0 / np.sqrt(dh)))
    attn = softmax(scores)
    ctx = matmul(attn, vh)  # (h, Tq, dh)
    merged = reshape(transpose(ctx, (1, 0, 2)), (tq, c))
    return proj.wo(merged)


# --- parameters, layers, optimizer -------------------------------------------------

class ParameterStore:
    """Ordered name -> Tensor map; iteration order is insertion order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def total_size(self) -> int:
        return sum(p.data.size for p in self._params.values())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    def __init__(self, store: ParameterStore, name: str, din: int, dout: int, rng):
        self.w = store.register(name + ".w", Tensor(xavier_uniform(rng, din, dout, (din, dout))))
        self.b = store.register(name + ".b", Tensor(np.zeros(dout)))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)


class AttentionParams:
    def __init__(self, store: ParameterStore, name: str, dim: int, rng):
        self.wq = Linear(store, name + ".q", dim, dim, rng)
        self.wk = Linear(store, name + ".k", dim, dim, rng)
        self.wv = Linear(store, name + ".v", dim, dim, rng)
        self.wo = Linear(store, name + ".o", dim, dim, rng)


class LayerNormParams:
    def __init__(self, store: ParameterStore, name: str, dim: int):
        self.gamma = store.register(name + ".g", Tensor(np.ones(dim)))
        self.beta = store.register(name + ".b", Tensor(np.zeros(dim)))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class Mlp:
    """relu-separated linear stack."""

    def __init__(self, store: ParameterStore, name: str, dims: list[int], rng):
        self.layers = [
            Linear(store, f"{name}.{i}", din, dout, rng)
            for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class Conv:
    def __init__(self, store, name, cin, cout, rng, kernel=3, stride=1):
        self.stride = stride
        fan_in = cin * kernel * kernel
        fan_out = cout * kernel * kernel
        self.w = store.register(
            name + ".w", Tensor(xavier_uniform(rng, fan_in, fan_out, (cout, cin, kernel, kernel)))
        )
        self.b = store.register(name + ".b", Tensor(np.zeros(cout)))
        self.padding = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Adam:
    """Adam with two learning-rate groups split by parameter-name prefix."""

    def __init__(
        self,
        store: ParameterStore,
        lr_default: float = 1e-4,
        group_lrs: dict[str, float] | None = None,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr_default = lr_default
        self.group_lrs = group_lrs or {}
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def lr_for(self, name: str) -> float:
        for prefix, lr in self.group_lrs.items():
            if name.startswith(prefix):
                return lr
        return self.lr_default

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            if p.grad is None:
                raise MissingGrad(f"parameter {name!r} has no gradient")
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1t
            vhat = self.v[name] / b2t
            p.data -= self.lr_for(name) * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    total = 0.0
    for _, p in store.items():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for _, p in store.items():
            if p.grad is not None:
                p.grad *= scale
    return float(norm)


# --- gradient verification -----------------------------------------------------------

def grad_check(
    build_loss,
    params,
    rng: np.random.Generator,
    n_coords: int = 25,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``build_loss`` recomputes the scalar loss from the current parameter
    values; ``params`` is a ParameterStore or list of tensors. A random
    subset of coordinates per parameter is probed. Coordinates whose first
    probe disagrees are re-probed at smaller steps (h/8, h/64): a difference
    quotient straddling a kink (relu, clamp, nearest-point switches)
    converges to the one-sided analytic value as the step shrinks, while a
    wrong backward rule stays wrong at every step.
    """
    tensors = (
        [p for _, p in params.items()] if isinstance(params, ParameterStore) else list(params)
    )
    for p in tensors:
        p.grad = None
    loss = build_loss()
    backward(loss)

    def numeric_grad(flat, c, step):
        keep = flat[c]
        flat[c] = keep + step
        up = float(build_loss().data)
        flat[c] = keep - step
        down = float(build_loss().data)
        flat[c] = keep
        return (up - down) / (2.0 * step)

    worst = 0.0
    for p in tensors:
        if p.grad is None:
            raise MissingGrad("a parameter did not receive a gradient")
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for c in coords:
            analytic = gflat[c]
            best = np.inf
            for step in (h, h / 8.0, h / 64.0):
                numeric = numeric_grad(flat, c, step)
                denom = max(abs(analytic), abs(numeric), 1e-4)
                best = min(best, abs(analytic - numeric) / denom)
                if best <= tol:
                    break
            worst = max(worst, best)
    return worst
