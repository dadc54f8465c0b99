"""Minimal float64 tensor library for the fixed op set this pipeline needs.

Reverse-mode autodiff over dense numpy arrays, with scipy CSR matrices
admitted only as constants (adjacency and projection matrices are fixed and
never receive gradients). Also provides the Adam optimizer and a central
finite-difference gradient checker.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class NumericsError(ValueError):
    """Raised on shape violations, bad roots, or non-finite state."""


class Tensor:
    """A dense float64 array plus the tape metadata needed for backward().

    Leaves created with ``requires_grad=True`` accumulate into ``.grad``;
    everything else is an interior node whose adjoint lives only for the
    duration of one backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericsError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _tracks(t: Tensor) -> bool:
    # True if a gradient must flow through this node.
    return t.requires_grad or t._grad_fn is not None


def _op(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(_tracks(p) for p in parents):
        out._parents = parents
        out._grad_fn = grad_fn
    return out


# ---------------------------------------------------------------------------
# op set
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise NumericsError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def grad_fn(g):
        ga = g @ b.data.T if _tracks(a) else None
        gb = a.data.T @ g if _tracks(b) else None
        return ga, gb

    return _op(a.data @ b.data, (a, b), grad_fn)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T; passing the same tensor twice yields its similarity matrix."""
    if a.data.shape[1] != b.data.shape[1]:
        raise NumericsError(f"matmul_nt shape mismatch: {a.data.shape} vs {b.data.shape}")

    def grad_fn(g):
        ga = g @ b.data if _tracks(a) else None
        gb = g.T @ a.data if _tracks(b) else None
        return ga, gb

    return _op(a.data @ b.data.T, (a, b), grad_fn)


def similarity(x: Tensor) -> Tensor:
    """Dot-product similarity matrix x @ x.T (both adjoint paths accumulate)."""
    return matmul_nt(x, x)


def spmm(s: sp.spmatrix, x: Tensor) -> Tensor:
    """Sparse constant times dense tensor. The sparse side is never differentiated."""
    s = s.tocsr()
    if s.shape[1] != x.data.shape[0]:
        raise NumericsError(f"spmm shape mismatch: {s.shape} @ {x.data.shape}")

    def grad_fn(g):
        return ((s.T @ g) if _tracks(x) else None,)

    return _op(s @ x.data, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def grad_fn(g):
        return (g * mask,)

    return _op(np.where(mask, x.data, 0.0), (x,), grad_fn)


def row_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise L2 normalization; rows with norm < eps pass through as zeros."""
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    inv = np.where(norms > eps, 1.0 / np.where(norms > eps, norms, 1.0), 0.0)
    y = x.data * inv

    def grad_fn(g):
        dot = np.sum(y * g, axis=1, keepdims=True)
        return (inv * (g - y * dot),)

    return _op(y, (x,), grad_fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise NumericsError("concat_cols needs at least one part")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.shape[0] != rows:
            raise NumericsError("concat_cols row counts differ")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def grad_fn(g):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if _tracks(p) else None
            for i, p in enumerate(parts)
        )

    return _op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), grad_fn)


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - np.max(x.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=1, keepdims=True)

    def grad_fn(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return (y * (g - dot),)

    return _op(y, (x,), grad_fn)


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Elementwise natural log; with ``floor`` the input is clamped from below
    and clamped entries get zero gradient."""
    if floor is None:
        vals = x.data
        active = None
    else:
        vals = np.maximum(x.data, floor)
        active = x.data > floor

    def grad_fn(g):
        gx = g / vals
        if active is not None:
            gx = gx * active
        return (gx,)

    return _op(np.log(vals), (x,), grad_fn)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def grad_fn(g):
        return (g * y,)

    return _op(y, (x,), grad_fn)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise NumericsError("gather_rows index out of range")

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _op(x.data[idx], (x,), grad_fn)


def gather_cols(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[1]):
        raise NumericsError("gather_cols index out of range")

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), idx), g)
        return (gx,)

    return _op(x.data[:, idx], (x,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise NumericsError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def grad_fn(g):
        return (g if _tracks(a) else None, g if _tracks(b) else None)

    return _op(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise NumericsError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")

    def grad_fn(g):
        return (g if _tracks(a) else None, -g if _tracks(b) else None)

    return _op(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product; masks enter the graph through here."""
    if a.data.shape != b.data.shape:
        raise NumericsError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def grad_fn(g):
        ga = g * b.data if _tracks(a) else None
        gb = g * a.data if _tracks(b) else None
        return ga, gb

    return _op(a.data * b.data, (a, b), grad_fn)


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias row vector to every row of x."""
    bias = b.data.reshape(1, -1)
    if bias.shape[1] != x.data.shape[1]:
        raise NumericsError(f"add_rowvec width mismatch: {x.data.shape} + {b.data.shape}")

    def grad_fn(g):
        gx = g if _tracks(x) else None
        gb = g.sum(axis=0).reshape(b.data.shape) if _tracks(b) else None
        return gx, gb

    return _op(x.data + bias, (x, b), grad_fn)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def grad_fn(g):
        return (g,)

    return _op(x.data + float(c), (x,), grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def grad_fn(g):
        return (g * c,)

    return _op(x.data * c, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.ones_like(x.data) * g,)

    return _op(np.asarray(np.sum(x.data)), (x,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every requires_grad leaf.

    The root must be scalar. Calling twice without zeroing grads accumulates.
    """
    if root.data.size != 1:
        raise NumericsError(f"backward root must be scalar, got shape {root.data.shape}")

    # Iterative post-order topological sort; visits each node once even when
    # it appears as a parent of several ops.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment accumulators plus one shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place on every param's data."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
) -> float:
    """Max relative error between autodiff and central finite differences.

    ``loss_fn`` must be a deterministic closure over ``params``. Above
    ``max_coords`` total coordinates a seeded random subsample is checked.
    Relative error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    zero_grads(params.values())
    loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise NumericsError("loss is non-finite at the evaluation point")
    backward(loss)
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }

    coords = [(k, i) for k, p in params.items() for i in range(p.data.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picks]

    max_err = 0.0
    for name, flat in coords:
        flat_view = params[name].data.reshape(-1)
        orig = flat_view[flat]
        flat_view[flat] = orig + eps
        up = loss_fn().item()
        flat_view[flat] = orig - eps
        down = loss_fn().item()
        flat_view[flat] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericsError(f"loss non-finite while perturbing {name!r}")
        g_fd = (up - down) / (2.0 * eps)
        g_ad = analytic[name].reshape(-1)[flat]
        err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
        max_err = max(max_err, err)
    return max_err
