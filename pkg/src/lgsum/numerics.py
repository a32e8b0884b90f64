"""Array primitives with reverse-mode gradients, Adam and the warmup schedule.

Forward code is written once against a :class:`Tape`.  A tape created with
``record=False`` evaluates the same numpy expressions without keeping any
backward closures, so inference and training produce bit-identical values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class DegenerateAttentionError(ValueError):
    """A softmax row had every entry masked out."""

    def __init__(self) -> None:
        super().__init__("degenerate attention row")


class GradientOverflowError(ArithmeticError):
    def __init__(self, name: str = "") -> None:
        msg = "gradient overflow"
        super().__init__(f"{msg} in {name}" if name else msg)


class Node:
    __slots__ = ("value", "index", "requires_grad")

    def __init__(self, value: np.ndarray, index: int, requires_grad: bool):
        self.value = value
        self.index = index
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(#{self.index}, shape={self.value.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Ordered record of primitive operations.

    ``backward`` replays the record in reverse, accumulating vector-Jacobian
    products.  Parameters registered with :meth:`param` always receive a
    gradient entry; parameters the forward pass never touched get zeros.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._count = 0
        self._ops: list[tuple[int, tuple[Node, ...], Callable]] = []
        self._params: dict[str, Node] = {}

    # -- leaves -----------------------------------------------------------
    def _new(self, value: np.ndarray, requires_grad: bool) -> Node:
        node = Node(value, self._count, requires_grad and self.record)
        self._count += 1
        return node

    def const(self, value) -> Node:
        return self._new(np.asarray(value, dtype=DTYPE), False)

    def param(self, name: str, value: np.ndarray) -> Node:
        node = self._new(value, True)
        self._params[name] = node
        return node

    def params(self, arrays: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {name: self.param(name, arr) for name, arr in arrays.items()}

    def _emit(self, value: np.ndarray, inputs: tuple[Node, ...], backward: Callable) -> Node:
        needs = self.record and any(n.requires_grad for n in inputs)
        out = self._new(value, needs)
        if needs:
            self._ops.append((out.index, inputs, backward))
        return out

    # -- elementwise ------------------------------------------------------
    def add(self, a: Node, b: Node) -> Node:
        sa, sb = a.shape, b.shape
        return self._emit(a.value + b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        sa, sb = a.shape, b.shape
        return self._emit(a.value - b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        return self._emit(av * bv, (a, b),
                          lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def div(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        out = av / bv
        return self._emit(out, (a, b),
                          lambda g: (_unbroadcast(g / bv, av.shape),
                                     _unbroadcast(-g * out / bv, bv.shape)))

    def scale(self, a: Node, c: float) -> Node:
        return self._emit(a.value * c, (a,), lambda g: (g * c,))

    def affine(self, a: Node, mul: float, shift: float) -> Node:
        """``mul * a + shift`` for scalar constants."""
        return self._emit(a.value * mul + shift, (a,), lambda g: (g * mul,))

    def square(self, a: Node) -> Node:
        av = a.value
        return self._emit(av * av, (a,), lambda g: (2.0 * av * g,))

    def relu(self, a: Node) -> Node:
        pos = a.value > 0
        return self._emit(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))

    def sum_last(self, a: Node) -> Node:
        shape = a.shape
        return self._emit(a.value.sum(axis=-1, keepdims=True), (a,),
                          lambda g: (np.broadcast_to(g, shape).copy(),))

    def normalize_last(self, a: Node) -> Node:
        """Scale rows of the last axis to sum 1; all-zero rows stay zero."""
        s = a.value.sum(axis=-1, keepdims=True)
        safe = np.where(s == 0.0, 1.0, s)
        y = a.value / safe
        return self._emit(y, (a,),
                          lambda g: ((g - (g * y).sum(axis=-1, keepdims=True)) / safe,))

    # -- structural -------------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value

        def back(g):
            ga = g @ np.swapaxes(bv, -1, -2)
            gb = np.swapaxes(av, -1, -2) @ g
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

        return self._emit(av @ bv, (a, b), back)

    def reshape(self, a: Node, shape: tuple[int, ...]) -> Node:
        old = a.shape
        return self._emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def transpose(self, a: Node, axes: tuple[int, ...]) -> Node:
        inverse = tuple(np.argsort(axes))
        return self._emit(np.transpose(a.value, axes), (a,),
                          lambda g: (np.transpose(g, inverse),))

    def take_rows(self, table: Node, index: np.ndarray) -> Node:
        index = np.asarray(index, dtype=np.int64)
        rows = table.shape[0]

        def back(g):
            grad = np.zeros(table.shape, dtype=DTYPE)
            np.add.at(grad, index.reshape(-1), g.reshape(-1, table.shape[1]))
            return (grad,)

        if index.size and (index.min() < 0 or index.max() >= rows):
            raise IndexError(f"token index out of range for vocabulary of size {rows}")
        return self._emit(table.value[index], (table,), back)

    # -- normalisation / probabilities -----------------------------------
    def softmax(self, a: Node, mask: np.ndarray | None = None) -> Node:
        """Softmax over the last axis; ``mask`` is True where entries are kept."""
        x = a.value
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
            if not mask.any(axis=-1).all():
                raise DegenerateAttentionError()
            x = np.where(mask, x, -np.inf)
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
        return self._emit(y, (a,),
                          lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))

    def layer_norm(self, a: Node, gain: Node, bias: Node, eps: float = 1e-5) -> Node:
        x = a.value
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * inv
        gv = gain.value

        def back(g):
            dxhat = g * gv
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

        return self._emit(xhat * gv + bias.value, (a, gain, bias), back)

    def dropout(self, a: Node, rate: float, rng: np.random.Generator | None) -> Node:
        """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None."""
        if rate <= 0.0 or rng is None:
            return a
        keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
        return self._emit(a.value * keep, (a,), lambda g: (g * keep,))

    def cross_entropy_sum(self, logits: Node, targets: np.ndarray, pad_index: int,
                          smoothing: float = 0.0) -> tuple[Node, int]:
        """Summed token negative log-likelihood and the non-pad token count."""
        z = logits.value
        targets = np.asarray(targets, dtype=np.int64)
        if targets.size and targets.max() >= z.shape[-1]:
            raise IndexError("target index outside vocabulary")
        keep = targets != pad_index
        shifted = z - z.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        logp = shifted - lse
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        per_tok = -picked
        if smoothing > 0.0:
            per_tok = (1.0 - smoothing) * per_tok - smoothing * logp.mean(axis=-1)
        total = float(np.where(keep, per_tok, 0.0).sum())

        def back(g):
            probs = np.exp(logp)
            target = np.zeros_like(probs)
            np.put_along_axis(target, targets[..., None], 1.0, axis=-1)
            if smoothing > 0.0:
                target = (1.0 - smoothing) * target + smoothing / z.shape[-1]
            return ((probs - target) * keep[..., None] * g,)

        return self._emit(np.asarray(total), (logits,), back), int(keep.sum())

    # -- reverse pass -----------------------------------------------------
    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if not self.record:
            raise RuntimeError("backward on a non-recording tape")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for out_index, inputs, back in reversed(self._ops):
            g = grads.pop(out_index, None)
            if g is None:
                continue
            for node, gi in zip(inputs, back(g)):
                if not node.requires_grad:
                    continue
                if node.index in grads:
                    grads[node.index] = grads[node.index] + gi
                else:
                    grads[node.index] = gi
        return {name: np.array(grads.get(node.index, np.zeros_like(node.value)), dtype=DTYPE)
                for name, node in self._params.items()}


# ---------------------------------------------------------------------------
# Pure operations on plain arrays
# ---------------------------------------------------------------------------

_EVAL = Tape(record=False)


def softmax_rows(m, mask=None) -> np.ndarray:
    """Row-wise softmax; masked entries (mask False) come out exactly 0."""
    return _EVAL.softmax(_EVAL.const(np.atleast_2d(m)), mask).value


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    t = _EVAL
    return t.layer_norm(t.const(x), t.const(gain), t.const(bias), eps).value


def ffn(tape: Tape, x: Node, w1: Node, b1: Node, w2: Node, b2: Node) -> Node:
    """Row-vector form: ``relu(x @ w1 + b1) @ w2 + b2``."""
    h = tape.relu(tape.add(tape.matmul(x, w1), b1))
    return tape.add(tape.matmul(h, w2), b2)


def ffn_forward(x, W1, b1, W2, b2) -> np.ndarray:
    """``W2 · relu(W1 · x + b1) + b2`` with weights in (out, in) layout."""
    x, W1, W2 = (np.asarray(a, dtype=DTYPE) for a in (x, W1, W2))
    if W1.shape[1] != x.shape[-1] or W2.shape[1] != W1.shape[0]:
        raise ValueError(f"dimension mismatch: x {x.shape}, W1 {W1.shape}, W2 {W2.shape}")
    t = _EVAL
    out = ffn(t, t.const(x[None, :]), t.const(W1.T), t.const(b1), t.const(W2.T), t.const(b2))
    return out.value[0]


def cross_entropy(logits, targets, pad_index: int = -1) -> float:
    """Mean negative log-softmax probability of the non-pad targets."""
    total, count = _EVAL.cross_entropy_sum(_EVAL.const(np.atleast_2d(logits)), targets, pad_index)
    if count == 0:
        raise ValueError("all target positions are padding")
    return float(total.value) / count


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.998
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    An all-zero gradient array leaves its parameter and moments untouched, so
    parameters the forward pass never reached do not drift on stale momentum.
    """
    for name, g in grads.items():
        if name in params and np.shape(g) != params[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {np.shape(g)}, "
                             f"parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise GradientOverflowError(name)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if not g.any():
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class LrSchedule:
    base_lr: float = 1e-3
    warmup_steps: int = 8000
    decay_milestones: list[tuple[int, float]] = field(default_factory=list)


def lr_at_step(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if schedule.warmup_steps > 0 and step <= schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    lr = schedule.base_lr
    for at, factor in sorted(schedule.decay_milestones):
        if step >= at:
            lr *= factor
    return lr


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tape, dict[str, Node]], Node],
                      params: dict[str, np.ndarray], h: float = 1e-6,
                      samples_per_param: int | None = None,
                      seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, nodes)`` must build a scalar from the parameter nodes.  The
    error per coordinate is ``|g_tape - g_fd| / max(1, |g_fd|)``.  With
    ``samples_per_param`` set, that many coordinates are drawn per array
    instead of checking every one.
    """
    tape = Tape()
    loss = f(tape, tape.params(params))
    analytic = tape.backward(loss)
    rng = np.random.default_rng(seed)

    def evaluate() -> float:
        t = Tape(record=False)
        return float(f(t, t.params(params)).value)

    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if samples_per_param is not None and flat.size > samples_per_param:
            coords = rng.choice(flat.size, size=samples_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = evaluate()
            flat[c] = orig - h
            down = evaluate()
            flat[c] = orig
            g_fd = (up - down) / (2.0 * h)
            g_tape = analytic[name].reshape(-1)[c]
            worst = max(worst, abs(g_tape - g_fd) / max(1.0, abs(g_fd)))
    return worst
