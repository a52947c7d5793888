"""Minimal dense numeric core with reverse-mode differentiation.

Everything is a 2-D array. Ops record a tape through parent links on
Tensor nodes (micrograd style, but array-valued); backward() on a scalar
accumulates gradients into every reachable leaf. The op vocabulary is
fixed and small — just enough for the model and its losses.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict

import numpy as np

from .exceptions import DimensionError, NumericError


class Tensor:
    """A 2-D value node on the tape.

    Leaves (parameters, inputs) have no parents. Intermediate nodes carry
    a backward closure that scatters the incoming gradient to parents.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"expected 2-D data, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor")
        self.data = arr
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() on shape {self.shape}")
        return float(self.data.reshape(())[()])

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        for node in topo:
            if node is self or node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return Tensor(out_data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes {a.shape} vs {b.shape}")

    def bw(g):
        a.grad += g
        b.grad += g

    return Tensor(a.data + b.data, (a, b), bw)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: a is (n, c), b is (1, c)."""
    if b.shape != (1, a.shape[1]):
        raise DimensionError(f"add_bias shapes {a.shape} vs {b.shape}")

    def bw(g):
        a.grad += g
        b.grad += g.sum(axis=0, keepdims=True)

    return Tensor(a.data + b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        a.grad += c * g

    return Tensor(c * a.data, (a,), bw)


def mul_const(a: Tensor, const) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != a.shape:
        raise DimensionError(f"mul_const shapes {a.shape} vs {const.shape}")

    def bw(g):
        a.grad += g * const

    return Tensor(a.data * const, (a,), bw)


def rows_dot(a: Tensor, const) -> Tensor:
    """Per-row dot product with a constant (n, c) array -> (n, 1)."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != a.shape:
        raise DimensionError(f"rows_dot shapes {a.shape} vs {const.shape}")

    def bw(g):
        a.grad += g * const

    return Tensor((a.data * const).sum(axis=1, keepdims=True), (a,), bw)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a.grad += g * np.where(mask, 1.0, slope)

    return Tensor(np.where(mask, a.data, slope * a.data), (a,), bw)


def softmax_rows(a: Tensor, mask=None) -> Tensor:
    """Row softmax with max-shift. mask (bool, same shape): False entries
    are excluded and come out as exact zeros."""
    z = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise DimensionError(f"softmax mask shape {mask.shape} vs {a.shape}")
        if not mask.any(axis=1).all():
            raise NumericError("softmax row with no unmasked entries")
        z = np.where(mask, z, -np.inf)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        a.grad += s * (g - (g * s).sum(axis=1, keepdims=True))

    return Tensor(s, (a,), bw)


def logsumexp_rows(a: Tensor) -> Tensor:
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    out = m + np.log(e.sum(axis=1, keepdims=True))
    soft = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        a.grad += g * soft

    return Tensor(out, (a,), bw)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    n = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != n:
            raise DimensionError("concat_cols row mismatch")
    widths = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t.grad += g[:, lo:hi]

    return Tensor(np.hstack([t.data for t in tensors]), tuple(tensors), bw)


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    c = tensors[0].shape[1]
    for t in tensors:
        if t.shape[1] != c:
            raise DimensionError("concat_rows col mismatch")
    heights = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + heights)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t.grad += g[lo:hi, :]

    return Tensor(np.vstack([t.data for t in tensors]), tuple(tensors), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[1]):
        raise DimensionError(f"slice_cols [{start}:{stop}] on {a.shape}")

    def bw(g):
        a.grad[:, start:stop] += g

    return Tensor(a.data[:, start:stop].copy(), (a,), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] on {a.shape}")

    def bw(g):
        a.grad[start:stop, :] += g

    return Tensor(a.data[start:stop, :].copy(), (a,), bw)


def gather_cols(a: Tensor, idx) -> Tensor:
    """Pick one entry per row -> (n, 1)."""
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    if idx.shape[0] != a.shape[0]:
        raise DimensionError("gather_cols index length mismatch")
    if (idx < 0).any() or (idx >= a.shape[1]).any():
        raise DimensionError("gather_cols index out of range")
    rows = np.arange(a.shape[0])

    def bw(g):
        np.add.at(a.grad, (rows, idx), g[:, 0])

    return Tensor(a.data[rows, idx].reshape(-1, 1), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        a.grad += g[0, 0]

    return Tensor(np.array([[a.data.sum()]]), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size

    def bw(g):
        a.grad += g[0, 0] * inv

    return Tensor(np.array([[a.data.mean()]]), (a,), bw)


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named parameters with persistent gradient buffers."""

    def __init__(self, seed=0, meta=None):
        self.params = OrderedDict()
        self.seed = int(seed)
        self.meta = dict(meta or {})

    def add(self, name, data):
        t = Tensor(np.array(data, dtype=np.float64))
        t.grad = np.zeros_like(t.data)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grads(self):
        for t in self.params.values():
            t.grad[:] = 0.0

    def grads_finite(self):
        return all(np.all(np.isfinite(t.grad)) for t in self.params.values())

    def save(self, path):
        # repr-round-trip floats: bit-exact at 64-bit and byte-deterministic
        doc = {
            "seed": self.seed,
            "meta": self.meta,
            "params": [
                {
                    "name": name,
                    "rows": t.shape[0],
                    "cols": t.shape[1],
                    "data": t.data.reshape(-1).tolist(),
                }
                for name, t in self.params.items()
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        store = cls(seed=doc["seed"], meta=doc.get("meta", {}))
        for p in doc["params"]:
            arr = np.array(p["data"], dtype=np.float64).reshape(p["rows"], p["cols"])
            store.add(p["name"], arr)
        return store


def init_params(shapes, seed) -> ParamStore:
    """shapes: ordered mapping name -> (rows, cols, fan_in); fan_in None
    means a zero-initialized bias. Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in))."""
    rng = np.random.default_rng(seed)
    store = ParamStore(seed=seed)
    for name, (rows, cols, fan_in) in shapes.items():
        if fan_in is None:
            store.add(name, np.zeros((rows, cols)))
        else:
            bound = math.sqrt(1.0 / fan_in)
            store.add(name, rng.uniform(-bound, bound, size=(rows, cols)))
    return store


def grad_check(fn, store: ParamStore, h=1e-5, tol=1e-4, max_coords=25, seed=0):
    """Max relative error between analytic and central-difference gradients.

    fn(store) -> scalar Tensor; coordinates are subsampled per parameter.
    """
    store.zero_grads()
    loss = fn(store)
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in store.params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in store.params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + h
            up = fn(store).item()
            flat[j] = orig - h
            down = fn(store).item()
            flat[j] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"non-finite loss while checking {name}")
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[j]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
