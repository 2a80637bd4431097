"""Minimal reverse-mode differentiable core: dense layers, LSTM encoders,
a handful of elementwise/reduction ops, named parameter stores with Adam
state, and a finite-difference gradient checker.

Everything is float64 and seeded-deterministic. Layers record a backward
closure on a small tape; `backward` runs the tape in reverse topological
order and accumulates into `.grad`.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


class Tensor:
    """Value plus optional gradient buffer; interior nodes carry a backward
    closure over their parents."""

    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents: tuple["Tensor", ...] = (),
                 backward_fn: Callable[[np.ndarray], None] | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 3:
            raise ValueError(f"rank {self.value.ndim} tensor; at most 3 supported")
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if g.shape != self.value.shape:
            raise ValueError(f"gradient shape {g.shape} != value shape {self.value.shape}")
        self.grad += g


def backward(root: Tensor, seed: np.ndarray | None = None) -> None:
    """Reverse-mode sweep from `root`, accumulating into every node's grad."""
    if seed is None:
        if root.value.size != 1:
            raise ValueError("backward without a seed requires a scalar output")
        seed = np.ones_like(root.value)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.accumulate(seed)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def _apply_activation(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return pre
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "tanh":
        return np.tanh(pre)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    raise ValueError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")


def dense(x: Tensor, w: Tensor, b: Tensor, activation: str = "identity") -> Tensor:
    """act(x @ w + b) for x (B, D), w (D, M), b (M,)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or b.value.ndim != 1:
        raise ValueError("dense expects x (B, D), w (D, M), b (M,)")
    if x.value.shape[1] != w.value.shape[0] or w.value.shape[1] != b.value.shape[0]:
        raise ValueError(
            f"dense shape mismatch: x {x.value.shape}, w {w.value.shape}, b {b.value.shape}")
    pre = x.value @ w.value + b.value
    out_val = _apply_activation(pre, activation)
    out = Tensor(out_val, parents=(x, w, b))

    def bwd(g: np.ndarray) -> None:
        if activation == "identity":
            dpre = g
        elif activation == "relu":
            dpre = g * (pre > 0.0)
        elif activation == "tanh":
            dpre = g * (1.0 - out_val ** 2)
        else:  # sigmoid
            dpre = g * out_val * (1.0 - out_val)
        x.accumulate(dpre @ w.value.T)
        w.accumulate(x.value.T @ dpre)
        b.accumulate(dpre.sum(axis=0))

    out.backward_fn = bwd
    return out


def lstm(seq: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over seq (B, T, D) and return the final hidden state (B, H).

    Gate layout along the 4H axis is input, forget, candidate, output; h and c
    start at zero. Backward is exact truncated-nowhere BPTT over all T steps.
    """
    if seq.value.ndim != 3:
        raise ValueError("lstm expects seq of shape (B, T, D)")
    B, T, D = seq.value.shape
    H4 = wx.value.shape[1]
    H = H4 // 4
    if wx.value.shape != (D, H4) or wh.value.shape != (H, H4) or b.value.shape != (H4,):
        raise ValueError(
            f"lstm shape mismatch: seq {seq.value.shape}, wx {wx.value.shape}, "
            f"wh {wh.value.shape}, b {b.value.shape}")

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        x_t = seq.value[:, t, :]
        z = x_t @ wx.value + h @ wh.value + b.value
        i = 1.0 / (1.0 + np.exp(-z[:, :H]))
        f = 1.0 / (1.0 + np.exp(-z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * H:]))
        c_next = f * c + i * g
        tanh_c = np.tanh(c_next)
        cache.append((x_t, h, c, i, f, g, o, tanh_c))
        h = o * tanh_c
        c = c_next
    out = Tensor(h, parents=(seq, wx, wh, b))

    def bwd(g_out: np.ndarray) -> None:
        dwx = np.zeros_like(wx.value)
        dwh = np.zeros_like(wh.value)
        db = np.zeros_like(b.value)
        dseq = np.zeros_like(seq.value)
        dh = g_out.copy()
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, gg, o, tanh_c = cache[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c ** 2)
            di = dc * gg
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - gg ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            dwx += x_t.T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dseq[:, t, :] = dz @ wx.value.T
            dh = dz @ wh.value.T
            dc = dc * f
        seq.accumulate(dseq)
        wx.accumulate(dwx)
        wh.accumulate(dwh)
        b.accumulate(db)

    out.backward_fn = bwd
    return out


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis),
                 parents=tuple(parts))
    widths = [p.value.shape[axis] for p in parts]

    def bwd(g: np.ndarray) -> None:
        offset = 0
        for p, w in zip(parts, widths):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + w)
            p.accumulate(g[tuple(sl)])
            offset += w

    out.backward_fn = bwd
    return out


def dueling(value: Tensor, adv: Tensor) -> Tensor:
    """Q = V + (A - mean(A)) per row; value (B, 1), adv (B, n)."""
    n = adv.value.shape[1]
    q = value.value + adv.value - adv.value.mean(axis=1, keepdims=True)
    out = Tensor(q, parents=(value, adv))

    def bwd(g: np.ndarray) -> None:
        value.accumulate(g.sum(axis=1, keepdims=True))
        adv.accumulate(g - g.mean(axis=1, keepdims=True))

    out.backward_fn = bwd
    return out


def gather_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick x[i, idx[i]] per row; returns shape (B,)."""
    rows = np.arange(x.value.shape[0])
    out = Tensor(x.value[rows, idx], parents=(x,))

    def bwd(g: np.ndarray) -> None:
        full = np.zeros_like(x.value)
        np.add.at(full, (rows, idx), g)
        x.accumulate(full)

    out.backward_fn = bwd
    return out


def _binary(a: Tensor, b: Tensor, out_val, da, db) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch {a.value.shape} vs {b.value.shape}")
    out = Tensor(out_val, parents=(a, b))

    def bwd(g: np.ndarray) -> None:
        a.accumulate(da(g))
        b.accumulate(db(g))

    out.backward_fn = bwd
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.value + b.value, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.value - b.value, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.value * b.value,
                   lambda g: g * b.value, lambda g: g * a.value)


def square(x: Tensor) -> Tensor:
    out = Tensor(x.value ** 2, parents=(x,))
    out.backward_fn = lambda g: x.accumulate(2.0 * x.value * g)
    return out


def scale(x: Tensor, k: float) -> Tensor:
    out = Tensor(x.value * k, parents=(x,))
    out.backward_fn = lambda g: x.accumulate(g * k)
    return out


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(np.array(x.value.mean()), parents=(x,))
    out.backward_fn = lambda g: x.accumulate(np.full_like(x.value, g / x.value.size))
    return out


# ---------------------------------------------------------------------------
# parameters and Adam


class ParamStore:
    """Named leaf tensors in insertion order, with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64))
        self._params[name] = t
        self._m[name] = np.zeros_like(t.value)
        self._v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            raise ValueError("parameter name mismatch")
        for k, v in values.items():
            if v.shape != self._params[k].value.shape:
                raise ValueError(f"shape mismatch for {k!r}")
            self._params[k].value = np.array(v, dtype=np.float64)

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for k, t in self._params.items():
            other.add(k, t.value)
        return other


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in the store's parameter order."""
    if set(grads) != set(store.names()):
        missing = set(store.names()) ^ set(grads)
        raise ValueError(f"gradient names do not match parameters: {sorted(missing)}")
    store.step += 1
    t = store.step
    for name in store.names():
        p = store[name]
        g = grads[name]
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# initialization and gradient checking


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def lstm_bias(hidden: int) -> np.ndarray:
    # forget-gate slice starts at 1 to let early training retain state
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return b


def grad_check(fn: Callable[[], Tensor], store: ParamStore,
               step: float = 1e-5,
               param_names: list[str] | None = None) -> float:
    """Max relative error between backward gradients and central differences
    of the scalar map `fn`, taken over every coordinate of the named
    parameters (all parameters by default)."""
    names = param_names if param_names is not None else store.names()
    store.zero_grads()
    out = fn()
    backward(out)
    analytic = {k: (store[k].grad.copy() if store[k].grad is not None
                    else np.zeros_like(store[k].value)) for k in names}

    worst = 0.0
    for name in names:
        p = store[name]
        flat = p.value.reshape(-1)
        ana = analytic[name].reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            f_plus = float(fn().value)
            flat[j] = keep - step
            f_minus = float(fn().value)
            flat[j] = keep
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(ana[j] - numeric) / max(1.0, abs(ana[j]), abs(numeric))
            worst = max(worst, err)
    return worst
