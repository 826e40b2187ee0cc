"""Dense 2-D tensors with reverse-mode differentiation on an explicit tape.

Everything the model needs and nothing more: plain float64 matrices,
a handful of primitives, two numerically stable losses, and a finite
difference checker.  Each primitive computes its forward value and, when
a tape is supplied, appends one record holding the output, the input
tensors, and a closure mapping the output gradient to input gradients.
``backward`` walks the records once, in reverse, accumulating gradients
out-of-place so aliased pass-through arrays are never mutated.

Hard decisions (thresholded masks, argmax pointer choices) never appear
as tape records; they are computed from ``.data`` by callers, so no
gradient flows through them by construction.

Numpy is used as the array backend; the tape, gradient rules, and
checkers are all local to this module.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation, InvalidArgument, NumericFault

_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf detection on primitive outputs; returns prior value."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return prev


class Tensor:
    """A rows x cols float64 matrix."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise InvalidArgument(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise InvalidArgument(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor({self.data.shape[0]}x{self.data.shape[1]})"


def tensor(data) -> Tensor:
    return Tensor(data)


def zeros(rows: int, cols: int) -> Tensor:
    return _wrap(np.zeros((rows, cols)))


def _wrap(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    # a single reduction: any NaN or Inf entry makes the sum non-finite
    if _CHECK_FINITE and not math.isfinite(float(arr.sum())):
        if not np.all(np.isfinite(arr)):
            raise NumericFault("non-finite values in tensor")
    return t


class Tape:
    """Recording order is topological order; backward visits it reversed."""

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []


def _emit(tape, out, inputs, bwd) -> Tensor:
    if tape is not None:
        tape.records.append((out, inputs, bwd))
    return out


class Gradients:
    """Gradient lookup for the tensors reached by one backward pass."""

    __slots__ = ("_table",)

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def of(self, t: Tensor) -> np.ndarray:
        g = self._table.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(tape: Tape, out: Tensor) -> Gradients:
    """Accumulate d(out)/d(tensor) for every tensor on the tape."""
    if out.data.shape != (1, 1):
        raise InvalidArgument("backward starts from a scalar (1x1) tensor")
    table: dict[int, np.ndarray] = {id(out): np.ones((1, 1))}
    for rec_out, inputs, bwd in reversed(tape.records):
        g = table.pop(id(rec_out), None)
        if g is None:
            continue
        for inp, ginp in zip(inputs, bwd(g)):
            if ginp is None:
                continue
            prev = table.get(id(inp))
            table[id(inp)] = ginp if prev is None else prev + ginp
    return Gradients(table)


# ---------------------------------------------------------------- primitives


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise InvalidArgument(f"matmul shapes {a.shape} x {b.shape}")
    out = _wrap(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(tape, out, (a, b), bwd)


def matmul_nt(tape, a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T, so rows of b act as keys against rows of a."""
    if a.data.shape[1] != b.data.shape[1]:
        raise InvalidArgument(f"matmul_nt shapes {a.shape} x {b.shape}")
    out = _wrap(a.data @ b.data.T)

    def bwd(g):
        return g @ b.data, g.T @ a.data

    return _emit(tape, out, (a, b), bwd)


def affine(tape, x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """x @ w + bias in one record; the workhorse for dense layers."""
    if x.data.shape[1] != w.data.shape[0]:
        raise InvalidArgument(f"affine shapes {x.shape} x {w.shape}")
    if bias.data.shape != (1, w.data.shape[1]):
        raise InvalidArgument(f"affine bias {bias.shape} for weight {w.shape}")
    out = _wrap(x.data @ w.data + bias.data)

    def bwd(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0, keepdims=True)

    return _emit(tape, out, (x, w, bias), bwd)


def add_rowwise_bias(tape, x: Tensor, bias: Tensor) -> Tensor:
    if bias.data.shape != (1, x.data.shape[1]):
        raise InvalidArgument(f"bias {bias.shape} for input {x.shape}")
    out = _wrap(x.data + bias.data)

    def bwd(g):
        return g, g.sum(axis=0, keepdims=True)

    return _emit(tape, out, (x, bias), bwd)


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise InvalidArgument(f"add shapes {a.shape} vs {b.shape}")
    out = _wrap(a.data + b.data)

    def bwd(g):
        return g, g

    return _emit(tape, out, (a, b), bwd)


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise InvalidArgument(f"mul shapes {a.shape} vs {b.shape}")
    out = _wrap(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return _emit(tape, out, (a, b), bwd)


def scale(tape, a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _wrap(a.data * c)

    def bwd(g):
        return (g * c,)

    return _emit(tape, out, (a,), bwd)


def concat_columns(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0]:
        raise InvalidArgument(f"concat rows {a.shape} vs {b.shape}")
    p = a.data.shape[1]
    out = _wrap(np.concatenate((a.data, b.data), axis=1))

    def bwd(g):
        return g[:, :p], g[:, p:]

    return _emit(tape, out, (a, b), bwd)


def relu(tape, x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = _wrap(np.where(mask, x.data, 0.0))

    def bwd(g):
        return (g * mask,)

    return _emit(tape, out, (x,), bwd)


def sigmoid(tape, x: Tensor) -> Tensor:
    # stable in both tails
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = _wrap(s)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _emit(tape, out, (x,), bwd)


def row_softmax(tape, x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = _wrap(s)

    def bwd(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _emit(tape, out, (x,), bwd)


def select_rows(tape, x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise InvalidArgument("row indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise InvalidArgument("row index out of range")
    out = _wrap(x.data[idx])

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _emit(tape, out, (x,), bwd)


def reduce_max_over_set(tape, x: Tensor, membership) -> tuple[Tensor, np.ndarray]:
    """Per output group r, the columnwise max of x over the group's rows.

    membership is either a list of 1-D row-index arrays, or a pair
    (indices, starts) where group r covers indices[starts[r]:starts[r+1]]
    (starts has one trailing entry equal to len(indices)).

    Returns (values, winners); winners[r, c] is the row of x that won
    column c for group r, ties resolved to the lowest row index.  The
    full output gradient routes to the winners.
    """
    data = x.data
    n_rows, cols = data.shape
    if isinstance(membership, tuple):
        idx, starts = membership
        idx = np.asarray(idx, dtype=np.int64)
        starts = np.asarray(starts, dtype=np.int64)
        groups = starts.shape[0] - 1
    else:
        parts = [np.asarray(rows, dtype=np.int64) for rows in membership]
        groups = len(parts)
        starts = np.zeros(groups + 1, dtype=np.int64)
        for r, part in enumerate(parts):
            starts[r + 1] = starts[r] + part.shape[0]
        idx = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    if groups < 1:
        raise InvalidArgument("need at least one reduction group")
    counts = np.diff(starts)
    if counts.min(initial=1) <= 0:
        empty = int(np.argmin(counts))
        raise ContractViolation(f"reduction group {empty} is empty")
    if idx.shape[0] != starts[-1]:
        raise InvalidArgument("membership indices and starts disagree")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise InvalidArgument("membership row index out of range")

    gathered = data[idx]
    vals = np.maximum.reduceat(gathered, starts[:-1], axis=0)
    seg = np.repeat(np.arange(groups), counts)
    is_max = gathered == vals[seg]
    cand = np.where(is_max, idx[:, None], n_rows)
    winners = np.minimum.reduceat(cand, starts[:-1], axis=0)
    out = _wrap(vals)
    col_grid = np.broadcast_to(np.arange(cols), winners.shape)

    def bwd(g):
        dx = np.zeros_like(data)
        np.add.at(dx, (winners, col_grid), g)
        return (dx,)

    return _emit(tape, out, (x,), bwd), winners


def edge_message_max(
    tape, z: Tensor, w: Tensor, bias: Tensor, receivers, senders, starts
) -> tuple[Tensor, np.ndarray]:
    """Fused per-edge messages with a per-receiver max.

    Computes, for every edge e = (recv[e], send[e]),
    relu(concat(z[recv[e]], z[send[e]]) @ w + bias) without materialising
    the concatenation (w is split row-wise into a receiver half and a
    sender half), then reduces edges to one row per group via columnwise
    max; group r covers edge rows starts[r]:starts[r+1], which must be
    nonempty.  Equivalent to composing select_rows, concat_columns,
    affine, relu, and reduce_max_over_set, but with one tape record.

    Returns (values, winners); winners[r, c] is the edge index whose
    message won column c, ties to the lowest edge index.
    """
    recv = np.asarray(receivers, dtype=np.int64)
    send = np.asarray(senders, dtype=np.int64)
    seg = np.asarray(starts, dtype=np.int64)
    n, k_in = z.data.shape
    if w.data.shape[0] != 2 * k_in:
        raise InvalidArgument(f"message weight {w.shape} for latent width {k_in}")
    k_out = w.data.shape[1]
    if bias.data.shape != (1, k_out):
        raise InvalidArgument(f"message bias {bias.shape} for weight {w.shape}")
    m = recv.shape[0]
    if send.shape[0] != m:
        raise InvalidArgument("receiver and sender lists differ in length")
    if m and (min(recv.min(), send.min()) < 0 or max(recv.max(), send.max()) >= n):
        raise InvalidArgument("edge endpoint out of range")
    groups = seg.shape[0] - 1
    if groups < 1 or seg[0] != 0 or seg[-1] != m:
        raise InvalidArgument("edge group starts must cover all edges")
    counts = np.diff(seg)
    if counts.min(initial=1) <= 0:
        raise ContractViolation(f"node {int(np.argmin(counts))} receives no messages")

    top = w.data[:k_in]
    bot = w.data[k_in:]
    p = z.data @ top
    q = z.data @ bot
    msgs = p[recv] + q[send] + bias.data
    np.maximum(msgs, 0.0, out=msgs)
    vals = np.maximum.reduceat(msgs, seg[:-1], axis=0)
    seg_of = np.repeat(np.arange(groups), counts)
    cand = np.where(msgs == vals[seg_of], np.arange(m)[:, None], m)
    winners = np.minimum.reduceat(cand, seg[:-1], axis=0)
    out = _wrap(vals)

    def bwd(g):
        # the winning message is positive exactly when the max is, so the
        # relu derivative at the winner is readable off the output
        gw = g * (vals > 0.0)
        dp = np.zeros((n, k_out))
        dq = np.zeros((n, k_out))
        cols = np.broadcast_to(np.arange(k_out), winners.shape)
        np.add.at(dp, (recv[winners], cols), gw)
        np.add.at(dq, (send[winners], cols), gw)
        dz = dp @ top.T + dq @ bot.T
        dw = np.concatenate((z.data.T @ dp, z.data.T @ dq), axis=0)
        db = gw.sum(axis=0, keepdims=True)
        return dz, dw, db

    return _emit(tape, out, (z, w, bias), bwd), winners


# -------------------------------------------------------------------- losses


def bce_with_logits(tape, logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy between logits and 0/1 targets.

    A 1x1 logit against a single bit gives the plain scalar form.
    """
    t = np.asarray(targets, dtype=np.float64).reshape(logits.data.shape)
    x = logits.data
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    count = per.size
    out = _wrap(np.array([[per.sum() / count]]))

    def bwd(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        s[~pos] = e / (1.0 + e)
        return ((g[0, 0] / count) * (s - t),)

    return _emit(tape, out, (logits,), bwd)


def softmax_cross_entropy(tape, logits: Tensor, target_indices, weights=None) -> Tensor:
    """Weighted mean over rows of -log softmax(row)[target].

    weights defaults to all ones (plain mean).  A single row with one
    target index gives the plain scalar form.  The divisor is
    max(1, sum(weights)) so an all-zero weighting yields zero loss.
    """
    idx = np.asarray(target_indices, dtype=np.int64).reshape(-1)
    n, m = logits.data.shape
    if idx.shape[0] != n:
        raise InvalidArgument(f"{idx.shape[0]} targets for {n} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise InvalidArgument("target index out of range")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise InvalidArgument(f"{w.shape[0]} weights for {n} rows")
    x = logits.data
    xmax = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - xmax).sum(axis=1)) + xmax[:, 0]
    rows = np.arange(n)
    per = lse - x[rows, idx]
    denom = max(1.0, float(w.sum()))
    out = _wrap(np.array([[float((per * w).sum() / denom)]]))

    def bwd(g):
        soft = np.exp(x - xmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[rows, idx] -= 1.0
        return (soft * (w[:, None] * (g[0, 0] / denom)),)

    return _emit(tape, out, (logits,), bwd)


# --------------------------------------------------------------- grad check


def grad_check(loss_fn, params, eps: float = 1e-6, floor: float = 1e-4) -> float:
    """Max guarded relative error between tape and central-difference grads.

    loss_fn() must rebuild the computation from the current parameter
    values and return (scalar Tensor, Tape).  Every entry of every
    parameter is perturbed by +-eps; the relative error denominator is
    floored to keep near-zero gradients from dominating.
    """
    loss, tape = loss_fn()
    grads = backward(tape, loss)
    analytic = [grads.of(p).copy() for p in params]
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = loss_fn()[0].item()
            flat[j] = orig - eps
            lo = loss_fn()[0].item()
            flat[j] = orig
            fd = (hi - lo) / (2.0 * eps)
            ad = ana.reshape(-1)[j]
            err = abs(fd - ad) / max(abs(fd), abs(ad), floor)
            if err > worst:
                worst = err
    return worst
