"""Tape-based automatic differentiation with a forward-mode time tangent.

Every node carries a (primal, tangent) pair of float64 arrays. Tangents
propagate the derivative with respect to the (normalized) time input through
every primitive, so dC/dt terms come out of the forward pass. The reverse
pass then differentiates a scalar loss with respect to all leaves, including
paths that run *through* tangents (reverse-over-forward): for a unary
primitive out = f(a),

    out.primal  = f(a.p)
    out.tangent = f'(a.p) * a.t

so the reverse rules are

    a.adj_p += f'(a.p) * out.adj_p + f''(a.p) * a.t * out.adj_t
    a.adj_t += f'(a.p) * out.adj_t

and analogously for binary ops. A tangent of None means identically zero
(saves the constant-weight half of every JVP).

Determinism: nodes are replayed strictly in reverse creation order and every
accumulation is ordinary float64 array addition, so identical graphs produce
bit-identical gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, NumericalFailureError

__all__ = ["Tape", "Node", "gradcheck"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One tape entry: primal and tangent values plus adjoint slots."""

    __slots__ = ("tape", "index", "primal", "tangent", "adj_p", "adj_t", "_back")

    def __init__(self, tape: "Tape", index: int, primal: np.ndarray,
                 tangent: np.ndarray | None):
        self.tape = tape
        self.index = index
        self.primal = primal
        self.tangent = tangent
        self.adj_p = None
        self.adj_t = None
        self._back = None

    @property
    def shape(self):
        return self.primal.shape

    # -- adjoint accumulation ------------------------------------------------

    def _acc_p(self, g):
        g = _unbroadcast(g, self.primal.shape)
        self.adj_p = g if self.adj_p is None else self.adj_p + g

    def _acc_t(self, g):
        g = _unbroadcast(g, self.primal.shape)
        self.adj_t = g if self.adj_t is None else self.adj_t + g

    # -- operator sugar (delegates to the tape) -------------------------------

    def _other(self, x):
        return x if isinstance(x, Node) else self.tape.constant(x)

    def __add__(self, other):
        return self.tape.add(self, self._other(other))

    def __radd__(self, other):
        return self.tape.add(self._other(other), self)

    def __sub__(self, other):
        return self.tape.sub(self, self._other(other))

    def __rsub__(self, other):
        return self.tape.sub(self._other(other), self)

    def __mul__(self, other):
        return self.tape.mul(self, self._other(other))

    def __rmul__(self, other):
        return self.tape.mul(self._other(other), self)

    def __truediv__(self, other):
        return self.tape.div(self, self._other(other))

    def __rtruediv__(self, other):
        return self.tape.div(self._other(other), self)

    def __neg__(self):
        return self.tape.mul(self, self.tape.constant(-1.0))


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Tape:
    """Records primitive operations; single-writer, then read-only backward."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._leaves: dict[str, Node] = {}

    # -- node constructors ----------------------------------------------------

    def _node(self, primal, tangent=None, back=None) -> Node:
        node = Node(self, len(self._nodes), _asarray(primal),
                    None if tangent is None else _asarray(tangent))
        node._back = back
        self._nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._node(value)

    def leaf(self, name: str, value: np.ndarray) -> Node:
        """Register a trainable array. The array is referenced, not copied."""
        node = self._node(value)
        self._leaves[name] = node
        return node

    def input(self, value, tangent) -> Node:
        """A non-trainable input carrying a seeded tangent (e.g. time)."""
        return self._node(value, tangent)

    # -- primitives ------------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        out = self._node(a.primal + b.primal, _tadd(a.tangent, b.tangent))

        def back():
            if out.adj_p is not None:
                a._acc_p(out.adj_p)
                b._acc_p(out.adj_p)
            if out.adj_t is not None:
                a._acc_t(out.adj_t)
                b._acc_t(out.adj_t)

        out._back = back
        return out

    def sub(self, a: Node, b: Node) -> Node:
        bt = None if b.tangent is None else -b.tangent
        out = self._node(a.primal - b.primal, _tadd(a.tangent, bt))

        def back():
            if out.adj_p is not None:
                a._acc_p(out.adj_p)
                b._acc_p(-out.adj_p)
            if out.adj_t is not None:
                a._acc_t(out.adj_t)
                b._acc_t(-out.adj_t)

        out._back = back
        return out

    def mul(self, a: Node, b: Node) -> Node:
        t = None
        if a.tangent is not None:
            t = a.tangent * b.primal
        if b.tangent is not None:
            t = _tadd(t, a.primal * b.tangent)
        out = self._node(a.primal * b.primal, t)

        def back():
            if out.adj_p is not None:
                a._acc_p(b.primal * out.adj_p)
                b._acc_p(a.primal * out.adj_p)
            if out.adj_t is not None:
                # out.t = a.t*b.p + a.p*b.t
                if b.tangent is not None:
                    a._acc_p(b.tangent * out.adj_t)
                a._acc_t(b.primal * out.adj_t)
                if a.tangent is not None:
                    b._acc_p(a.tangent * out.adj_t)
                b._acc_t(a.primal * out.adj_t)

        out._back = back
        return out

    def div(self, a: Node, b: Node) -> Node:
        if np.any(b.primal == 0.0):
            raise NumericalFailureError("division by zero in autodiff graph")
        inv = 1.0 / b.primal
        p = a.primal * inv
        t = None
        if a.tangent is not None:
            t = a.tangent * inv
        if b.tangent is not None:
            t = _tadd(t, -p * b.tangent * inv)
        out = self._node(p, t)

        def back():
            if out.adj_p is not None:
                a._acc_p(inv * out.adj_p)
                b._acc_p(-p * inv * out.adj_p)
            if out.adj_t is not None:
                # out.t = a.t/b.p - a.p*b.t/b.p^2
                a._acc_t(inv * out.adj_t)
                if b.tangent is not None:
                    a._acc_p(-b.tangent * inv * inv * out.adj_t)
                b._acc_t(-a.primal * inv * inv * out.adj_t)
                term = None
                if a.tangent is not None:
                    term = -a.tangent * inv * inv
                if b.tangent is not None:
                    term = _tadd(term, 2.0 * a.primal * b.tangent * inv ** 3)
                if term is not None:
                    b._acc_p(term * out.adj_t)

        out._back = back
        return out

    def tanh(self, a: Node) -> Node:
        y = np.tanh(a.primal)
        s = 1.0 - y * y
        out = self._node(y, None if a.tangent is None else s * a.tangent)

        def back():
            if out.adj_p is not None:
                a._acc_p(s * out.adj_p)
            if out.adj_t is not None:
                if a.tangent is not None:
                    a._acc_p(-2.0 * y * s * a.tangent * out.adj_t)
                a._acc_t(s * out.adj_t)

        out._back = back
        return out

    def exp(self, a: Node) -> Node:
        y = np.exp(a.primal)
        out = self._node(y, None if a.tangent is None else y * a.tangent)

        def back():
            if out.adj_p is not None:
                a._acc_p(y * out.adj_p)
            if out.adj_t is not None:
                if a.tangent is not None:
                    a._acc_p(y * a.tangent * out.adj_t)
                a._acc_t(y * out.adj_t)

        out._back = back
        return out

    def square(self, a: Node) -> Node:
        out = self._node(a.primal * a.primal,
                         None if a.tangent is None else 2.0 * a.primal * a.tangent)

        def back():
            if out.adj_p is not None:
                a._acc_p(2.0 * a.primal * out.adj_p)
            if out.adj_t is not None:
                if a.tangent is not None:
                    a._acc_p(2.0 * a.tangent * out.adj_t)
                a._acc_t(2.0 * a.primal * out.adj_t)

        out._back = back
        return out

    def sqrt(self, a: Node) -> Node:
        if np.any(a.primal <= 0.0):
            raise NumericalFailureError("sqrt of non-positive value in autodiff graph")
        y = np.sqrt(a.primal)
        half_inv = 0.5 / y
        out = self._node(y, None if a.tangent is None else half_inv * a.tangent)

        def back():
            if out.adj_p is not None:
                a._acc_p(half_inv * out.adj_p)
            if out.adj_t is not None:
                if a.tangent is not None:
                    a._acc_p(-0.25 * a.tangent / (y ** 3) * out.adj_t)
                a._acc_t(half_inv * out.adj_t)

        out._back = back
        return out

    def min_with_zero(self, a: Node) -> Node:
        """Elementwise min(x, 0); slope 0 on the non-negative side."""
        mask = (a.primal < 0.0).astype(np.float64)
        out = self._node(np.minimum(a.primal, 0.0),
                         None if a.tangent is None else mask * a.tangent)

        def back():
            if out.adj_p is not None:
                a._acc_p(mask * out.adj_p)
            if out.adj_t is not None:
                a._acc_t(mask * out.adj_t)

        out._back = back
        return out

    def affine_combine(self, x: Node, w: Node, b: Node) -> Node:
        """x @ w + b for a (batch, n_in) input, (n_in, n_out) weight."""
        if x.primal.ndim != 2 or w.primal.ndim != 2 or \
                x.primal.shape[1] != w.primal.shape[0]:
            raise InvalidInputError(
                f"affine shape mismatch: x {x.primal.shape}, w {w.primal.shape}")
        t = None
        if x.tangent is not None:
            t = x.tangent @ w.primal
        if w.tangent is not None:
            t = _tadd(t, x.primal @ w.tangent)
        if b.tangent is not None:
            t = _tadd(t, b.tangent)
        out = self._node(x.primal @ w.primal + b.primal, t)

        def back():
            if out.adj_p is not None:
                x._acc_p(out.adj_p @ w.primal.T)
                w._acc_p(x.primal.T @ out.adj_p)
                b._acc_p(out.adj_p.sum(axis=0))
            if out.adj_t is not None:
                x._acc_t(out.adj_t @ w.primal.T)
                w._acc_t(x.primal.T @ out.adj_t)
                b._acc_t(out.adj_t.sum(axis=0))
                if w.tangent is not None:
                    x._acc_p(out.adj_t @ w.tangent.T)
                if x.tangent is not None:
                    w._acc_p(x.tangent.T @ out.adj_t)

        out._back = back
        return out

    def mean0(self, a: Node) -> Node:
        """Mean over axis 0."""
        n = a.primal.shape[0]
        out = self._node(a.primal.mean(axis=0),
                         None if a.tangent is None else a.tangent.mean(axis=0))

        def back():
            if out.adj_p is not None:
                a._acc_p(np.broadcast_to(out.adj_p / n, a.primal.shape))
            if out.adj_t is not None:
                a._acc_t(np.broadcast_to(out.adj_t / n, a.primal.shape))

        out._back = back
        return out

    def rows(self, a: Node, i0: int, i1: int) -> Node:
        """Row slice a[i0:i1] of a 2-D node."""
        out = self._node(a.primal[i0:i1],
                         None if a.tangent is None else a.tangent[i0:i1])

        def back():
            if out.adj_p is not None:
                g = np.zeros_like(a.primal)
                g[i0:i1] = out.adj_p
                a._acc_p(g)
            if out.adj_t is not None:
                g = np.zeros_like(a.primal)
                g[i0:i1] = out.adj_t
                a._acc_t(g)

        out._back = back
        return out

    def columns(self, a: Node, j0: int, j1: int) -> Node:
        """Column slice a[:, j0:j1] of a 2-D node."""
        out = self._node(a.primal[:, j0:j1],
                         None if a.tangent is None else a.tangent[:, j0:j1])

        def back():
            if out.adj_p is not None:
                g = np.zeros_like(a.primal)
                g[:, j0:j1] = out.adj_p
                a._acc_p(g)
            if out.adj_t is not None:
                g = np.zeros_like(a.primal)
                g[:, j0:j1] = out.adj_t
                a._acc_t(g)

        out._back = back
        return out

    def reshape(self, a: Node, shape: tuple) -> Node:
        out = self._node(a.primal.reshape(shape),
                         None if a.tangent is None else a.tangent.reshape(shape))

        def back():
            if out.adj_p is not None:
                a._acc_p(out.adj_p.reshape(a.primal.shape))
            if out.adj_t is not None:
                a._acc_t(out.adj_t.reshape(a.primal.shape))

        out._back = back
        return out

    def transpose2d(self, a: Node) -> Node:
        out = self._node(a.primal.T.copy(),
                         None if a.tangent is None else a.tangent.T.copy())

        def back():
            if out.adj_p is not None:
                a._acc_p(out.adj_p.T)
            if out.adj_t is not None:
                a._acc_t(out.adj_t.T)

        out._back = back
        return out

    def batch_normalize(self, x: Node, scale: Node, shift: Node,
                        epsilon: float = 1e-5, n_reference: int | None = None) -> Node:
        """Training-mode batch normalization over axis 0 (batch statistics).

        Composed from recorded primitives, so tangent propagation and
        reverse-over-forward differentiation go through the batch statistics
        exactly. Requires batch size >= 2 and epsilon > 0.

        With n_reference set, the mean/variance are taken over the first
        n_reference rows only and applied to the whole batch. Rows outside
        the reference block then see the statistics as tangent-free
        (their time derivatives stay pointwise), while weight gradients
        still flow through the statistics.
        """
        if epsilon <= 0:
            raise InvalidInputError("batch_normalize epsilon must be > 0")
        n_rows = x.primal.shape[0]
        if n_reference is None:
            n_reference = n_rows
        if not (2 <= n_reference <= n_rows):
            raise InvalidInputError("batch_normalize needs a reference batch of >= 2 rows")
        ref = x if n_reference == n_rows else self.rows(x, 0, n_reference)
        mu = self.mean0(ref)
        var = self.mean0(self.square(self.sub(ref, mu)))
        std = self.sqrt(self.add(var, self.constant(epsilon)))
        normalized = self.div(self.sub(x, mu), std)
        return self.add(self.mul(normalized, scale), shift)

    def tangent_of(self, a: Node) -> Node:
        """Promote a node's time tangent to a primal value (dC/dt_hat).

        The result carries no tangent of its own: only first derivatives in
        time are representable.
        """
        if a.tangent is None:
            raise InvalidInputError("node carries no tangent")
        out = self._node(a.tangent, None)

        def back():
            if out.adj_p is not None:
                a._acc_t(out.adj_p)

        out._back = back
        return out

    # -- reverse pass -----------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Adjoints of a scalar loss for every leaf, in one reverse sweep."""
        if loss.tape is not self or self._nodes[loss.index] is not loss:
            raise InvalidInputError("loss node does not belong to this tape")
        if loss.primal.size != 1:
            raise InvalidInputError("loss must be a scalar")
        for node in self._nodes:
            node.adj_p = None
            node.adj_t = None
        loss.adj_p = np.ones_like(loss.primal)
        for node in reversed(self._nodes[: loss.index + 1]):
            if node._back is not None and (node.adj_p is not None or
                                           node.adj_t is not None):
                node._back()
        return {
            name: (node.adj_p if node.adj_p is not None
                   else np.zeros_like(node.primal))
            for name, node in self._leaves.items()
        }


def gradcheck(build, leaves: dict[str, np.ndarray], step: float = 1e-5) -> float:
    """Compare tape gradients against central finite differences.

    `build` must construct a fresh graph from the current leaf array values
    and return (tape, loss_node). Leaf arrays are perturbed in place. Returns
    the maximum over leaf entries of

        |analytic - central| / max(|analytic|, |central|, 1e-12)
    """
    if step <= 0:
        raise InvalidInputError("step must be > 0")
    tape, loss = build()
    grads = tape.backward(loss)
    worst = 0.0
    for name, arr in leaves.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            _, lp = build()
            flat[i] = saved - step
            _, lm = build()
            flat[i] = saved
            numeric = (float(lp.primal) - float(lm.primal)) / (2.0 * step)
            denom = max(abs(g[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(g[i] - numeric) / denom)
    return worst
