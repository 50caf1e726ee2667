"""Tape-based reverse-mode differentiation for small dense computations.

The primitive set is deliberately closed over what the denoiser network
and the two inversion losses need: elementwise add/sub/mul, scaling by
a constant, matrix-vector product, tanh, dot product, sum of squares,
square root, and the Euclidean norm. No broadcasting.

The Euclidean-norm node guards its gradient at the origin: for
``|x| <= 1e-12`` the backward pass propagates a zero gradient. This is
the subgradient choice the noise-correction step relies on (a perfect
noise estimate must stay untouched).
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError

NORM_GUARD = 1e-12


class Node:
    """One tape entry: an op, its parents, and the cached forward value."""

    __slots__ = ("tape", "index", "op", "parents", "value", "aux", "is_leaf")

    def __init__(self, tape, index, op, parents, value, aux=None, is_leaf=False):
        self.tape = tape
        self.index = index
        self.op = op
        self.parents = parents
        self.value = value
        self.aux = aux
        self.is_leaf = is_leaf


class Tape:
    """Append-only record of primitive operations, topologically ordered."""

    def __init__(self):
        self.nodes = []

    def _push(self, op, parents, value, aux=None, is_leaf=False) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced by op '{op}'")
        node = Node(self, len(self.nodes), op, parents, value, aux, is_leaf)
        self.nodes.append(node)
        return node

    # -- leaves ---------------------------------------------------------

    def leaf(self, value) -> Node:
        """A differentiable input; gradients are reported for these."""
        return self._push("leaf", (), value, is_leaf=True)

    def constant(self, value) -> Node:
        """A non-differentiable input."""
        return self._push("const", (), value)

    # -- elementwise ----------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        return self._push("add", (a, b), a.value + b.value)

    def sub(self, a: Node, b: Node) -> Node:
        return self._push("sub", (a, b), a.value - b.value)

    def mul(self, a: Node, b: Node) -> Node:
        return self._push("mul", (a, b), a.value * b.value)

    def scale(self, a: Node, c: float) -> Node:
        return self._push("scale", (a,), float(c) * a.value, aux=float(c))

    def tanh(self, a: Node) -> Node:
        return self._push("tanh", (a,), np.tanh(a.value))

    # -- contractions ---------------------------------------------------

    def matvec(self, w: Node, x: Node) -> Node:
        if w.value.ndim != 2 or x.value.ndim != 1:
            raise ContractError("matvec expects a matrix and a vector")
        return self._push("matvec", (w, x), w.value @ x.value)

    def dot(self, a: Node, b: Node) -> Node:
        return self._push("dot", (a, b), np.dot(a.value.ravel(), b.value.ravel()))

    def concat(self, parts) -> Node:
        parts = tuple(parts)
        sizes = tuple(p.value.size for p in parts)
        return self._push("concat", parts,
                          np.concatenate([p.value.ravel() for p in parts]),
                          aux=sizes)

    # -- scalar reductions ----------------------------------------------

    def sumsq(self, a: Node) -> Node:
        return self._push("sumsq", (a,), np.sum(a.value * a.value))

    def norm2(self, a: Node) -> Node:
        return self._push("norm2", (a,), np.linalg.norm(a.value.ravel()))

    def sqrt(self, a: Node) -> Node:
        return self._push("sqrt", (a,), np.sqrt(a.value))


def grad(output: Node) -> dict:
    """Reverse-mode gradients of a scalar node w.r.t. every leaf.

    Returns a dict mapping leaf nodes to arrays of the leaf's shape.
    Single backward sweep over the tape.
    """
    if output.value.ndim != 0:
        raise ContractError("grad requires a scalar output node")
    tape = output.tape
    adjoints = [None] * len(tape.nodes)
    adjoints[output.index] = np.ones(())

    def accumulate(node, contrib):
        if adjoints[node.index] is None:
            adjoints[node.index] = np.zeros_like(node.value)
        adjoints[node.index] = adjoints[node.index] + contrib

    for node in reversed(tape.nodes[: output.index + 1]):
        g = adjoints[node.index]
        if g is None:
            continue
        op, parents = node.op, node.parents
        if op in ("leaf", "const"):
            continue
        elif op == "add":
            accumulate(parents[0], g)
            accumulate(parents[1], g)
        elif op == "sub":
            accumulate(parents[0], g)
            accumulate(parents[1], -g)
        elif op == "mul":
            accumulate(parents[0], g * parents[1].value)
            accumulate(parents[1], g * parents[0].value)
        elif op == "scale":
            accumulate(parents[0], g * node.aux)
        elif op == "tanh":
            accumulate(parents[0], g * (1.0 - node.value * node.value))
        elif op == "matvec":
            w, x = parents
            accumulate(w, np.outer(g, x.value))
            accumulate(x, w.value.T @ g)
        elif op == "dot":
            a, b = parents
            accumulate(a, (g * b.value.ravel()).reshape(a.value.shape))
            accumulate(b, (g * a.value.ravel()).reshape(b.value.shape))
        elif op == "concat":
            offset = 0
            for p, size in zip(parents, node.aux):
                accumulate(p, g[offset: offset + size].reshape(p.value.shape))
                offset += size
        elif op == "sumsq":
            accumulate(parents[0], g * 2.0 * parents[0].value)
        elif op == "norm2":
            n = float(node.value)
            if n <= NORM_GUARD:
                accumulate(parents[0], np.zeros_like(parents[0].value))
            else:
                accumulate(parents[0], (g / n) * parents[0].value)
        elif op == "sqrt":
            accumulate(parents[0], g * 0.5 / np.sqrt(parents[0].value))
        else:  # pragma: no cover
            raise ContractError(f"unknown op '{op}'")

    return {node: adjoints[node.index]
            for node in tape.nodes
            if node.is_leaf and adjoints[node.index] is not None}


def finite_diff_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Independent oracle for `grad`; never routed through the tape.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += step
        xm[i] -= step
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("non-finite function value in finite differences")
        flat[i] = (fp - fm) / (2.0 * step)
    return out
