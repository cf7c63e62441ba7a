"""Dense tensors with reverse-mode automatic differentiation.

Minimal engine sized for the two encoders and the contrastive loss:
row-major numpy storage, f32 or f64, ops over the last axis broadcast
across any leading batch axes.  Each op records a vector-Jacobian closure;
`backward` walks the graph once in reverse topological order, accumulating
gradients across fan-out.
"""

from __future__ import annotations

import math

import numpy as np

# When true, every op rejects NaN/Inf inputs (debug builds / tests).
CHECK_FINITE = False

MASK_SENTINEL = -1e9  # additive pre-softmax value for disallowed entries


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NonFiniteInput(AutodiffError):
    pass


class NonScalarLoss(AutodiffError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False, dtype=None):
        self.value = np.asarray(value, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype})"


def constant(value, dtype=None) -> Tensor:
    return Tensor(value, dtype=dtype)


def _finite_check(*arrays: np.ndarray) -> None:
    if CHECK_FINITE:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteInput("non-finite value in op input")


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._parents


def _make(value: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(value)
    if any(_tracked(p) for p in parents):
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate gradients of scalar `loss` into every reachable tensor."""
    if loss.value.shape != ():
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    # reverse topological order, iterative to survive deep graphs
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _tracked(p):
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not _tracked(parent):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# --- elementwise and linear ops ----------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _finite_check(a.value, b.value)
    try:
        value = a.value + b.value
    except ValueError as e:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from e

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(value, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _finite_check(a.value, b.value)
    try:
        value = a.value * b.value
    except ValueError as e:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from e

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        )

    return _make(value, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    _finite_check(a.value)
    value = a.value * c

    def vjp(g):
        return (g * c,)

    return _make(value, (a,), vjp)


mul_scalar = scale


def exp(a: Tensor) -> Tensor:
    _finite_check(a.value)
    value = np.exp(a.value)

    def vjp(g):
        return (g * value,)

    return _make(value, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _finite_check(a.value, b.value)
    if a.value.shape[-1] != b.value.shape[-2 if b.value.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    if a.value.ndim > 2 and b.value.ndim == 2:
        # (..., k) @ (k, m): collapse leading axes to one fast 2-D gemm
        lead = a.value.shape[:-1]
        k, m = b.value.shape
        a2 = a.value.reshape(-1, k)
        value = (a2 @ b.value).reshape(lead + (m,))

        def vjp(g):
            g2 = g.reshape(-1, m)
            return (g2 @ b.value.T).reshape(a.value.shape), a2.T @ g2

        return _make(value, (a, b), vjp)

    value = a.value @ b.value

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(value, (a, b), vjp)


def transpose_last2(a: Tensor) -> Tensor:
    value = np.swapaxes(a.value, -1, -2)

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(value, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """GELU via the tanh approximation."""
    _finite_check(a.value)
    x = a.value
    c = math.sqrt(2.0 / math.pi)
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    value = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        dt = (1.0 - t**2) * dinner
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _make(value, (a,), vjp)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature affine."""
    _finite_check(x.value)
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    value = xhat * gain.value + bias.value
    d = v.shape[-1]

    def vjp(g):
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        gxhat = g * gain.value
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _make(value, (x, gain, bias), vjp)


def softmax_lastdim(x: Tensor, additive: Tensor | np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, with an optional additive mask/bias.

    Disallowed entries should carry MASK_SENTINEL in `additive`; their
    probability underflows to exactly zero.
    """
    if additive is not None:
        if not isinstance(additive, Tensor):
            additive = Tensor(additive)
        x = add(x, additive)
    _finite_check(x.value)
    v = x.value
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        return (value * (g - dot),)

    return _make(value, (x,), vjp)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale the last axis to unit Euclidean norm."""
    _finite_check(x.value)
    norm = np.sqrt((x.value**2).sum(axis=-1, keepdims=True)) + eps
    value = x.value / norm

    def vjp(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        return ((g - value * dot) / norm,)

    return _make(value, (x,), vjp)


l2_normalize_rows = l2_normalize


# --- lookups and reshaping ---------------------------------------------


def embedding_lookup(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; idx may have any integer shape."""
    idx = np.asarray(idx)
    value = table.value[idx]

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.value.shape[-1]))
        return (gt,)

    return _make(value, (table,), vjp)


def gather(vec: Tensor, idx: np.ndarray) -> Tensor:
    """Gather scalars from a 1-D tensor; output has idx's shape."""
    idx = np.asarray(idx)
    value = vec.value[idx]

    def vjp(g):
        gv = np.zeros_like(vec.value)
        np.add.at(gv, idx.reshape(-1), g.reshape(-1))
        return (gv,)

    return _make(value, (vec,), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    value = x.value.reshape(shape)

    def vjp(g):
        return (g.reshape(x.value.shape),)

    return _make(value, (x,), vjp)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    value = np.swapaxes(x.value, a, b)

    def vjp(g):
        return (np.swapaxes(g, a, b),)

    return _make(value, (x,), vjp)


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    value = x.value[..., start:stop]

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[..., start:stop] = g
        return (gx,)

    return _make(value, (x,), vjp)


def concat_lastdim(parts: list[Tensor]) -> Tensor:
    value = np.concatenate([p.value for p in parts], axis=-1)
    sizes = [p.value.shape[-1] for p in parts]

    def vjp(g):
        out, off = [], 0
        for s in sizes:
            out.append(g[..., off : off + s])
            off += s
        return tuple(out)

    return _make(value, tuple(parts), vjp)


def concat_rows(parts: list[Tensor]) -> Tensor:
    value = np.concatenate([p.value for p in parts], axis=0)
    sizes = [p.value.shape[0] for p in parts]

    def vjp(g):
        out, off = [], 0
        for s in sizes:
            out.append(g[off : off + s])
            off += s
        return tuple(out)

    return _make(value, tuple(parts), vjp)


def select_token(x: Tensor, t: int) -> Tensor:
    """x[:, t, :] for a (N, T, d) tensor."""
    value = x.value[:, t, :]

    def vjp(g):
        gx = np.zeros_like(x.value)
        gx[:, t, :] = g
        return (gx,)

    return _make(value, (x,), vjp)


def prepend_token(x: Tensor, tok: Tensor) -> Tensor:
    """Prepend a learned (d,) token to every sequence of a (N, T, d) tensor."""
    n = x.value.shape[0]
    row = np.broadcast_to(tok.value, (n, 1) + tok.value.shape)
    value = np.concatenate([row, x.value], axis=1)

    def vjp(g):
        return g[:, 1:, :], g[:, 0, :].sum(axis=0)

    return _make(value, (x, tok), vjp)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over axis 0."""
    value = x.value.mean(axis=0)
    n = x.value.shape[0]

    def vjp(g):
        return (np.broadcast_to(g / n, x.value.shape).copy(),)

    return _make(value, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    value = x.value.sum()

    def vjp(g):
        return (np.broadcast_to(g, x.value.shape).copy(),)

    return _make(value, (x,), vjp)


def cross_entropy_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of `targets` under row-wise softmax."""
    targets = np.asarray(targets)
    v = logits.value
    if v.ndim != 2 or targets.shape != (v.shape[0],):
        raise ShapeMismatch(f"cross_entropy rows {v.shape}, targets {targets.shape}")
    n = v.shape[0]
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + v.max(axis=-1)
    picked = v[np.arange(n), targets]
    value = (lse - picked).mean()

    def vjp(g):
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
        probs[np.arange(n), targets] -= 1.0
        return (g * probs / n,)

    return _make(np.asarray(value), (logits,), vjp)


# --- gradient verification ---------------------------------------------


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def grad_check(
    f,
    params: dict[str, Tensor],
    h: float = 1e-4,
    tol: float = 1e-5,
) -> dict:
    """Compare analytic gradients of scalar `f()` against central differences.

    `f` must recompute the loss from the current parameter values each call.
    Returns a report with per-parameter relative errors; report-only, never
    raises on failure.
    """
    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for name, p in params.items()
    }

    report: dict = {"params": {}, "pass": True, "tol": tol, "h": h}
    eps = 1e-12
    for name, p in params.items():
        flat = p.value.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().value)
            flat[i] = orig - h
            fm = float(f().value)
            flat[i] = orig
            fd[i] = (fp - fm) / (2 * h)
        fd = fd.reshape(p.value.shape)
        err = np.linalg.norm(analytic[name] - fd) / (np.linalg.norm(fd) + eps)
        ok = bool(err < tol)
        report["params"][name] = {"rel_err": float(err), "pass": ok}
        report["pass"] = report["pass"] and ok
    return report
