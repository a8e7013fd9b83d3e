"""A small reverse-mode differentiation engine over dense float64 arrays.

Operations record themselves on the active :class:`Tape` whenever one of their
inputs is tracked. ``backward`` then walks the tape once in reverse order and
accumulates vector-Jacobian products.

The primitive set is deliberately closed: every op below has a hand-written
adjoint and a finite-difference test.
"""
from __future__ import annotations

import threading

import numpy as np
from scipy import sparse

from .errors import InvalidSegment, NotScalarLoss, ShapeMismatch

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Ordered record of primitive applications; use as a context manager."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, wrt=()):
        return backward(self, loss, wrt)


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("value", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else None

    def __repr__(self):
        flag = ", tracked" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))

    def __rsub__(self, other):
        return add(other, multiply(self, -1.0))

    def __neg__(self):
        return multiply(self, -1.0)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value, parents, vjp):
    """Wrap ``value``; record on the active tape if any parent is tracked.

    ``vjp(g)`` returns one gradient (or None) per parent.
    """
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, parents, vjp))
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor, wrt=()):
    """Gradient map {tensor: array} for every tracked leaf on ``tape`` plus any
    intermediate tensors listed in ``wrt``."""
    if loss.value.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not on the tape (no tracked inputs)")
    grads = {id(loss): np.ones_like(loss.value)}
    produced = set()
    leaves = {}
    for out, parents, _ in tape.nodes:
        produced.add(id(out))
        for p in parents:
            if p.requires_grad:
                leaves.setdefault(id(p), p)
    keep = {id(w) for w in wrt}
    for out, parents, vjp in reversed(tape.nodes):
        g = grads.get(id(out)) if id(out) in keep else grads.pop(id(out), None)
        if g is None:
            continue
        for p, gp in zip(parents, vjp(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    result = {}
    for key, p in leaves.items():
        if key not in produced:
            result[p] = grads.get(key, np.zeros_like(p.value))
    for w in wrt:
        result[w] = grads.get(id(w), np.zeros_like(w.value))
    return result


# Elementwise and linear algebra ---------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None
    sa, sb = a.shape, b.shape
    ta, tb = a.requires_grad, b.requires_grad
    return _record(value, (a, b), lambda g: (_unbroadcast(g, sa) if ta else None,
                                             _unbroadcast(g, sb) if tb else None))


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeMismatch("multiply", a.shape, b.shape) from None
    av, bv = a.value, b.value
    ta, tb = a.requires_grad, b.requires_grad
    return _record(value, (a, b), lambda g: (_unbroadcast(g * bv, av.shape) if ta else None,
                                             _unbroadcast(g * av, bv.shape) if tb else None))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    ta, tb = a.requires_grad, b.requires_grad
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T if ta else None,
                                               av.T @ g if tb else None))


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *(t.shape for t in ts)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record(value, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", old, shape) from None
    return _record(value, (x,), lambda g: (g.reshape(old),))


def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    value = np.sum(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _record(value, (x,), vjp)


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    xv = x.value
    pos = xv > 0
    value = xv * slope
    np.copyto(value, xv, where=pos)

    def vjp(g):
        out = g * slope
        np.copyto(out, g, where=pos)
        return (out,)
    return _record(value, (x,), vjp)


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    return _record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def elu(x, alpha=1.0):
    x = as_tensor(x)
    neg = alpha * np.expm1(np.minimum(x.value, 0.0))
    pos = x.value > 0
    value = np.where(pos, x.value, neg)
    d = np.where(pos, 1.0, neg + alpha)
    return _record(value, (x,), lambda g: (g * d,))


def exp(x):
    x = as_tensor(x)
    value = np.exp(x.value)
    return _record(value, (x,), lambda g: (g * value,))


def log(x):
    x = as_tensor(x)
    xv = x.value
    return _record(np.log(xv), (x,), lambda g: (g / xv,))


# Segment / graph ops --------------------------------------------------------

class Segments:
    """Precomputed grouping of rows by integer id in ``[0, n_segments)``.

    Ids may be unsorted; the grouping builds a sparse indicator matrix once so
    sums and gathers-adjoints are a single sparse product.
    """

    def __init__(self, ids, n_segments=None):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size and ids.min() < 0:
            raise InvalidSegment("negative segment id")
        if n_segments is None:
            n_segments = int(ids.max()) + 1 if ids.size else 0
        if ids.size and ids.max() >= n_segments:
            raise InvalidSegment(f"segment id {ids.max()} >= n_segments {n_segments}")
        self.ids = ids
        self.n_segments = int(n_segments)
        self.counts = np.bincount(ids, minlength=self.n_segments)
        self.order = np.argsort(ids, kind="stable")
        self._starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.indicator = sparse.csr_matrix(
            (np.ones(ids.size), (ids, np.arange(ids.size))),
            shape=(self.n_segments, ids.size))

    def __len__(self):
        return self.ids.size

    def sum(self, x):
        flat = x.reshape(x.shape[0], -1)
        return np.asarray(self.indicator @ flat).reshape((self.n_segments,) + x.shape[1:])

    def max(self, x):
        if np.any(self.counts == 0):
            raise InvalidSegment("empty segment")
        return np.maximum.reduceat(x[self.order], self._starts, axis=0)


def _segments(ids, n=None):
    return ids if isinstance(ids, Segments) else Segments(ids, n)


def segment_sum(x, ids, n_segments=None):
    x = as_tensor(x)
    seg = _segments(ids, n_segments)
    if x.shape[0] != len(seg):
        raise ShapeMismatch("segment_sum", x.shape, (len(seg),))
    return _record(seg.sum(x.value), (x,), lambda g: (g[seg.ids],))


def scatter_add_rows(x, index, n_rows=None):
    """Add row k of ``x`` into output row ``index[k]``."""
    return segment_sum(x, index, n_rows)


def gather_rows(x, index):
    x = as_tensor(x)
    seg = index if isinstance(index, Segments) else None
    idx = seg.ids if seg is not None else np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeMismatch("gather_rows", x.shape, (int(idx.max()),))
    n = x.shape[0]

    def vjp(g):
        s = seg if seg is not None and seg.n_segments == n else Segments(idx, n)
        return (s.sum(g),)
    return _record(np.take(x.value, idx, axis=0), (x,), vjp)


def segment_softmax(x, ids, n_segments=None):
    """Softmax over rows sharing a segment id, independently per column."""
    x = as_tensor(x)
    seg = _segments(ids, n_segments)
    if x.shape[0] != len(seg):
        raise ShapeMismatch("segment_softmax", x.shape, (len(seg),))
    if np.any(seg.counts == 0):
        raise InvalidSegment("segment_softmax over an empty segment")
    shifted = x.value - seg.max(x.value)[seg.ids]
    e = np.exp(shifted)
    y = e / seg.sum(e)[seg.ids]

    def vjp(g):
        return (y * (g - seg.sum(g * y)[seg.ids]),)
    return _record(y, (x,), vjp)


def _complete_block_size(src: Segments, dst: Segments, n_nodes: int):
    """k if the edges are consecutive complete k-node graphs (self-loops included)
    listed target by target with sources in node order, else None. Cached."""
    key = ("complete", n_nodes)
    cache = dst.__dict__.setdefault("_layout", {})
    if key in cache and cache[key][0] is src:
        return cache[key][1]
    e = len(dst)
    k = None
    if n_nodes and e % n_nodes == 0 and (e // n_nodes) and n_nodes % (e // n_nodes) == 0:
        c = e // n_nodes
        nodes = np.arange(n_nodes)
        want_src = ((nodes // c) * c)[:, None] + np.arange(c)
        if (np.array_equal(dst.ids, np.repeat(nodes, c))
                and np.array_equal(src.ids, want_src.reshape(-1))):
            k = c
    cache[key] = (src, k)
    return k


def gatv2_scores(zd, zs, ea, we, a, src, dst, slope=0.2):
    """Fused GATv2 attention logits.

    Per edge k from ``src[k]`` to ``dst[k]`` and head h:
    ``s[k, h] = a[h] . LeakyReLU(zd[dst[k], h] + zs[src[k], h] + ea[k] * we[h])``
    where the last axis of ``zd``/``zs``/``we`` is laid out as heads x width.
    Equivalent to gather, add, leaky_relu, multiply and sum, with one pass
    over the edge-sized intermediate instead of five.
    """
    zd, zs, ea, we, a = (as_tensor(t) for t in (zd, zs, ea, we, a))
    src_seg = src if isinstance(src, Segments) else Segments(src, zs.shape[0])
    dst_seg = dst if isinstance(dst, Segments) else Segments(dst, zd.shape[0])
    heads, width = a.shape
    e = len(dst_seg)
    hd = heads * width
    if (zd.shape[1] != hd or zs.shape[1] != hd or we.shape != (1, hd)
            or ea.shape != (e, 1) or len(src_seg) != e):
        raise ShapeMismatch("gatv2_scores", zd.shape, zs.shape, ea.shape, we.shape, a.shape)
    nd, ns = zd.shape[0], zs.shape[0]
    k = _complete_block_size(src_seg, dst_seg, nd) if nd == ns else None
    if k:
        # batch of complete graphs, edges grouped by target: broadcast, no gathers
        g4 = (nd // k, k, k, hd)
        pre = (zd.value.reshape(nd // k, k, 1, hd) + zs.value.reshape(nd // k, 1, k, hd))
        pre = pre.reshape(e, hd)
    else:
        pre = np.take(zd.value, dst_seg.ids, axis=0)
        pre += np.take(zs.value, src_seg.ids, axis=0)
    pre += ea.value * we.value
    neg = pre <= 0
    lr = pre
    np.multiply(lr, slope, out=lr, where=neg)
    lr3 = lr.reshape(e, heads, width)
    av = a.value
    value = np.einsum("ehd,hd->eh", lr3, av)
    ta, tzd, tzs, tea, twe = (a.requires_grad, zd.requires_grad, zs.requires_grad,
                              ea.requires_grad, we.requires_grad)

    def vjp(g):
        da = np.einsum("ehd,eh->hd", lr3, g) if ta else None
        dpre = (g[:, :, None] * av[None]).reshape(e, hd)
        np.multiply(dpre, slope, out=dpre, where=neg)
        dzd = dzs = None
        if k:
            d4 = dpre.reshape(g4)
            dzd = d4.sum(axis=2).reshape(nd, hd) if tzd else None
            dzs = d4.sum(axis=1).reshape(ns, hd) if tzs else None
        else:
            if tzd:
                seg = dst_seg if dst_seg.n_segments == nd else Segments(dst_seg.ids, nd)
                dzd = seg.sum(dpre)
            if tzs:
                seg = src_seg if src_seg.n_segments == ns else Segments(src_seg.ids, ns)
                dzs = seg.sum(dpre)
        dea = (dpre @ we.value[0])[:, None] if tea else None
        dwe = ea.value.T @ dpre if twe else None
        return dzd, dzs, dea, dwe, da
    return _record(value, (zd, zs, ea, we, a), vjp)


def attention_aggregate(alpha, m, src, dst, n_out=None):
    """``out[i, h] = sum over edges k with dst[k] == i of alpha[k, h] * m[src[k], h]``.

    ``m`` has shape (n, heads * width). Implemented as one block-sparse product,
    which avoids materialising the per-edge messages.
    """
    alpha, m = as_tensor(alpha), as_tensor(m)
    src_ids = src.ids if isinstance(src, Segments) else np.asarray(src, dtype=np.int64)
    dst_ids = dst.ids if isinstance(dst, Segments) else np.asarray(dst, dtype=np.int64)
    if n_out is None:
        n_out = dst.n_segments if isinstance(dst, Segments) else int(dst_ids.max()) + 1
    e, heads = alpha.shape
    n = m.shape[0]
    if m.ndim != 2 or m.shape[1] % heads or len(src_ids) != e or len(dst_ids) != e:
        raise ShapeMismatch("attention_aggregate", alpha.shape, m.shape, (len(src_ids),))
    width = m.shape[1] // heads
    h = np.arange(heads)
    rows = (dst_ids[:, None] * heads + h).reshape(-1)
    cols = (src_ids[:, None] * heads + h).reshape(-1)
    mat = sparse.csr_matrix((alpha.value.reshape(-1), (rows, cols)),
                            shape=(n_out * heads, n * heads))
    mv = m.value
    value = np.asarray(mat @ mv.reshape(n * heads, width)).reshape(n_out, heads * width)
    ta, tm = alpha.requires_grad, m.requires_grad

    def vjp(g):
        g3 = g.reshape(n_out * heads, width)
        dalpha = None
        if ta:
            gd = np.take(g.reshape(n_out, heads, width), dst_ids, axis=0)
            gd *= np.take(mv.reshape(n, heads, width), src_ids, axis=0)
            dalpha = gd.sum(axis=2)
        dm = np.asarray(mat.T @ g3).reshape(n, heads * width) if tm else None
        return dalpha, dm
    return _record(value, (alpha, m), vjp)


# Normalisation and losses ---------------------------------------------------

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeMismatch("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.value.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.value.var(axis=-1, keepdims=True) + eps)
    xhat = (x.value - mu) * inv
    gv = gamma.value

    def vjp(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)
    return _record(xhat * gv + beta.value, (x, gamma, beta), vjp)


class BatchNormState:
    """Running statistics owned by one batch-norm layer."""

    def __init__(self, n_features, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.momentum = momentum
        self.eps = eps

    def copy(self):
        c = BatchNormState(self.running_mean.size, self.momentum, self.eps)
        c.running_mean = self.running_mean.copy()
        c.running_var = self.running_var.copy()
        return c


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool):
    """Normalise each column over rows.

    Training mode uses batch statistics and updates ``state`` with the
    unbiased batch variance; eval mode is the fixed affine map given by the
    running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatch("batch_norm", x.shape, gamma.shape, beta.shape)
    gv = gamma.value
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.value - state.running_mean) * inv
        return _record(xhat * gv + beta.value, (x, gamma, beta),
                       lambda g: (g * gv * inv, (g * xhat).sum(axis=0), g.sum(axis=0)))
    n = x.shape[0]
    if n < 2:
        raise ShapeMismatch("batch_norm(training) needs >= 2 rows", x.shape)
    mu = x.value.mean(axis=0)
    var = x.value.var(axis=0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.value - mu) * inv
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)

    def vjp(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    return _record(xhat * gv + beta.value, (x, gamma, beta), vjp)


def log_softmax(x):
    """Log-softmax over the last axis."""
    x = as_tensor(x)
    m = x.value.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x.value - m).sum(axis=-1, keepdims=True))
    y = x.value - lse
    sm = np.exp(y)
    return _record(y, (x,), lambda g: (g - sm * g.sum(axis=-1, keepdims=True),))


def nll_loss(logp, targets):
    """Mean negative log-likelihood of integer ``targets`` under row log-probs."""
    logp = as_tensor(logp)
    t = np.asarray(targets, dtype=np.int64)
    if logp.ndim != 2 or t.shape != (logp.shape[0],):
        raise ShapeMismatch("nll_loss", logp.shape, t.shape)
    rows = np.arange(t.size)
    value = -logp.value[rows, t].mean()

    def vjp(g):
        d = np.zeros_like(logp.value)
        d[rows, t] = -g / t.size
        return (d,)
    return _record(np.asarray(value), (logp,), vjp)


# Gradient checking ----------------------------------------------------------

def grad_check(f, point, h=1e-5, max_coords=None, seed=0):
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` maps a list of Tensors to a scalar Tensor. ``max_coords`` limits the
    check to a seeded random subset of coordinates per input.
    """
    point = [np.array(p, dtype=np.float64) for p in point]
    leaves = [Tensor(p.copy(), requires_grad=True) for p in point]
    with Tape() as tape:
        out = f(leaves)
    grads = backward(tape, out, wrt=leaves)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, p in enumerate(point):
        coords = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            coords = rng.choice(p.size, max_coords, replace=False)
        analytic = grads[leaves[k]].reshape(-1)
        for c in coords:
            args = [q.copy() for q in point]
            flat = args[k].reshape(-1)
            flat[c] = p.reshape(-1)[c] + h
            fp = f([Tensor(a) for a in args]).value.item()
            flat[c] = p.reshape(-1)[c] - h
            fm = f([Tensor(a) for a in args]).value.item()
            num = (fp - fm) / (2 * h)
            err = abs(analytic[c] - num) / max(1.0, abs(analytic[c]))
            worst = max(worst, err)
    return worst
