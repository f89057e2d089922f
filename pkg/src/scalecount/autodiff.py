"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a ``Tensor`` holding a float64
array of shape (batch, channels, height, width).  Operations executed while
a ``Tape`` is active append one node each; ``Tape.backward`` replays the
nodes in reverse and accumulates gradients into the ``grad`` buffer of every
tensor that contributed to the loss.  With no tape active the same ops run
as plain numpy, which keeps evaluation and finite-difference probing cheap.

The tape is rebuilt on every forward pass (define-by-run), so per-iteration
randomness such as fresh mixing coefficients needs no graph surgery.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "TapeError",
    "record",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sum_all",
    "grad_check",
]


class ShapeError(ValueError):
    """An operation received tensors whose shapes it cannot combine."""


class TapeError(RuntimeError):
    """The recording tape was used outside its contract."""


class Tensor:
    """A float64 (n, c, h, w) array with an optional gradient buffer.

    ``node_id`` is the index of the node that produced this tensor on the
    active tape, or None for leaves (parameters, inputs, constants).
    """

    __slots__ = ("values", "grad", "node_id")

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (n, c, h, w); got shape {arr.shape}")
        self.values: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind, inputs, output, backward_fn) -> None:
        self.kind: str = kind
        self.inputs: tuple[Tensor, ...] = inputs
        self.output: Tensor = output
        self.backward_fn = backward_fn


_ACTIVE: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _ACTIVE[-1] if _ACTIVE else None


class Tape:
    """Ordered record of operations for one forward pass.

    Nodes are appended in execution order, so inputs always precede the node
    that consumes them; backward walks the list once, in reverse.  A tape can
    be consumed by ``backward`` exactly once.
    """

    __slots__ = ("nodes", "_consumed")

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _ACTIVE:
            raise TapeError("nested tapes are not supported")
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.pop()

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor the loss depends on.

        Tensors that appear on the tape but do not influence the loss end up
        with an all-zero gradient; gradients accumulate, so callers zero
        parameter grads between optimization steps.
        """
        if loss.shape != (1, 1, 1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise TapeError("backward on an empty tape")
        if self._consumed:
            raise TapeError("backward called twice on the same tape")
        self._consumed = True

        if loss.grad is None:
            loss.grad = np.ones((1, 1, 1, 1))
        else:
            loss.grad = loss.grad + np.ones((1, 1, 1, 1))
        for node in reversed(self.nodes):
            gout = node.output.grad
            if gout is None:
                continue
            grads = node.backward_fn(gout)
            for tensor, g in zip(node.inputs, grads):
                if g is None:
                    continue
                # First contribution may alias the op's output buffer; later
                # accumulation always allocates, so nothing is mutated.
                tensor.grad = g if tensor.grad is None else tensor.grad + g
        for node in self.nodes:
            for tensor in node.inputs:
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.values)


def record(
    kind: str,
    inputs: Sequence[Tensor],
    out_values: np.ndarray,
    backward_fn: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Wrap an op result in a Tensor and register it on the active tape.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input, in order.  When no tape is active the result is returned
    unregistered, which is the evaluation fast path.
    """
    out = Tensor(out_values)
    tape = active_tape()
    if tape is not None:
        if tape._consumed:
            raise TapeError("recording on a consumed tape; start a new forward pass")
        out.node_id = len(tape.nodes)
        tape.nodes.append(_Node(kind, tuple(inputs), out, backward_fn))
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record("add", (a, b), a.values + b.values, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python constant (not a tape input)."""
    s = float(s)
    return record("scale", (a,), a.values * s, lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    # Subgradient at exactly 0 is 0.
    mask = a.values > 0.0
    return record("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    """Reduce every element to a (1, 1, 1, 1) scalar."""
    shape = a.shape
    out = np.array(a.values.sum(), dtype=np.float64).reshape(1, 1, 1, 1)
    return record("sum", (a,), out, lambda g: (np.full(shape, float(g.reshape(()))),))


def grad_check(
    fn: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    kink_aware: bool = False,
) -> float:
    """Compare the taped gradient of a scalar-valued ``fn`` at ``x`` against
    central finite differences.

    Returns max over checked coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``.  All coordinates are
    checked unless ``max_coords`` caps them, in which case a deterministic
    random subset is probed (``rng`` defaults to a fixed seed).

    With ``kink_aware`` on, a coordinate whose one-sided slopes disagree has
    a ReLU-style kink inside the probe interval, where central differences
    estimate no derivative at all; there the analytic value is compared to
    the nearer one-sided slope instead, so a valid subgradient still passes
    and a wrong gradient still fails.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = x if isinstance(x, Tensor) else Tensor(x)
    base.zero_grad()
    with Tape() as tape:
        out = fn(base)
        if not isinstance(out, Tensor) or out.shape != (1, 1, 1, 1):
            raise ShapeError("grad_check requires a scalar (1,1,1,1) output")
        tape.backward(out)
    analytic = np.zeros_like(base.values) if base.grad is None else base.grad.copy()

    size = base.values.size
    if max_coords is not None and max_coords < size:
        if rng is None:
            rng = np.random.default_rng(0)
        coords = rng.choice(size, size=max_coords, replace=False)
    else:
        coords = np.arange(size)

    flat = base.values.reshape(-1)
    worst = 0.0
    for idx in coords:
        idx = int(idx)
        probe = flat.copy()
        probe[idx] += eps
        f_plus = fn(Tensor(probe.reshape(base.shape))).item()
        probe[idx] -= 2.0 * eps
        f_minus = fn(Tensor(probe.reshape(base.shape))).item()
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic.reshape(-1)[idx]
        err = abs(a - numeric) / max(1.0, abs(numeric))
        if kink_aware and err > worst:
            probe[idx] += eps
            f_zero = fn(Tensor(probe.reshape(base.shape))).item()
            right = (f_plus - f_zero) / eps
            left = (f_zero - f_minus) / eps
            if abs(right - left) > 1e-3 * max(1.0, abs(numeric)):
                err = min(abs(a - left), abs(a - right)) / max(1.0, abs(numeric))
        if err > worst:
            worst = err
    return worst
