"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a :class:`Tensor` wraps a numpy array
(float32 by default, float64 for the gradient-check path), and a
:class:`Tape` records executed operations in order so they can be replayed
backwards. Operations only record themselves while a tape is active and at
least one input requires gradients, so plain inference pays no autodiff
overhead.

Conventions:

* Image tensors use NCHW layout.
* Operations never mutate their input arrays; optimizers may update
  parameter data in place, but only outside an active tape.
* A tape and the tensors it references are confined to one thread.
  Independent tapes on different threads are fine, and frozen tensors may
  be shared read-only.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "Buffer",
    "Tape",
    "add",
    "sub",
    "mul",
    "tsum",
    "mean",
    "reduce_max",
    "reshape",
    "concat",
    "slice_axis",
    "backward",
    "finite_diff_oracle",
    "max_relative_error",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense N-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """The underlying array. Treat as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        """A view of the same data outside the autodiff graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.grad is not None:
            flags.append("has_grad")
        tag = f" [{', '.join(flags)}]" if flags else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"


class Parameter(Tensor):
    """A trainable tensor (counted, optimized, and serialized)."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Buffer(Tensor):
    """Non-trainable model state (e.g. batch-norm running statistics).

    Serialized alongside parameters but excluded from parameter counts and
    optimizer updates.
    """

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=False, dtype=dtype)


class _TapeNode:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed ops, replayed in reverse by :meth:`backward`.

    Use as a context manager::

        with Tape() as tape:
            loss = model_loss(...)
        grads = tape.backward(loss)
    """

    def __init__(self):
        self._nodes: list[_TapeNode] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self, "tape stack corrupted"
        stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        """Append an op. Inputs must already be on the tape or be leaves."""
        output.requires_grad = True
        self._nodes.append(_TapeNode(output, inputs, backward_fn))

    def backward(self, loss: Tensor, populate_grad: bool = True) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(tensor) through the recorded ops.

        Returns a map from every tensor touched by the tape (leaves and
        intermediates) to its gradient array. Gradients accumulate
        additively across fan-out. When ``populate_grad`` is set, each
        ``requires_grad`` tensor also receives the result in ``.grad``
        (added to any existing value).
        """
        if loss.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {loss.shape}"
            )
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        by_id: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self._nodes):
            out_grad = grads.get(id(node.output))
            if out_grad is None:
                continue
            input_grads = node.backward_fn(out_grad)
            for tensor, g in zip(node.inputs, input_grads):
                if g is None:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    by_id[key] = tensor
        result: dict[Tensor, np.ndarray] = {}
        for key, g in grads.items():
            tensor = by_id[key]
            result[tensor] = g
            if populate_grad and tensor.requires_grad:
                tensor.grad = g if tensor.grad is None else tensor.grad + g
        return result


def backward(loss: Tensor, tape: Tape, populate_grad: bool = True) -> dict[Tensor, np.ndarray]:
    """Free-function alias for :meth:`Tape.backward`."""
    return tape.backward(loss, populate_grad=populate_grad)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def record_op(
    out_data: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward_builder: Callable[[], Callable],
) -> Tensor:
    """Wrap ``out_data`` and register the op if a tape is listening.

    ``backward_builder`` is only invoked when recording actually happens, so
    tape-less forward passes never build closures or retain intermediates.
    """
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_builder())
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; singleton dimensions broadcast."""
    _check_broadcast(a, b)
    out_data = a.data + b.data

    def build():
        def bwd(g):
            return (
                unbroadcast(g, a.shape) if a.requires_grad else None,
                unbroadcast(g, b.shape) if b.requires_grad else None,
            )

        return bwd

    return record_op(out_data, (a, b), build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference; singleton dimensions broadcast."""
    _check_broadcast(a, b)
    out_data = a.data - b.data

    def build():
        def bwd(g):
            return (
                unbroadcast(g, a.shape) if a.requires_grad else None,
                unbroadcast(-g, b.shape) if b.requires_grad else None,
            )

        return bwd

    return record_op(out_data, (a, b), build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; singleton dimensions broadcast."""
    _check_broadcast(a, b)
    out_data = a.data * b.data

    def build():
        ad, bd = a.data, b.data

        def bwd(g):
            return (
                unbroadcast(g * bd, a.shape) if a.requires_grad else None,
                unbroadcast(g * ad, b.shape) if b.requires_grad else None,
            )

        return bwd

    return record_op(out_data, (a, b), build)


def _normalize_dims(dims, ndim: int) -> tuple[int, ...]:
    out = []
    for d in dims:
        d = int(d)
        if d < 0:
            d += ndim
        if not 0 <= d < ndim:
            raise ShapeError(f"dim {d} out of range for {ndim}-d tensor")
        out.append(d)
    if len(set(out)) != len(out):
        raise ShapeError(f"duplicate dims in {tuple(dims)}")
    return tuple(sorted(out))


def tsum(x: Tensor, dims: Iterable[int] | None = None) -> Tensor:
    """Sum over ``dims`` (all, when omitted), keeping reduced dims as 1."""
    if dims is None:
        dims = range(x.ndim)
    axes = _normalize_dims(dims, x.ndim)
    if not axes:
        return x
    out_data = x.data.sum(axis=axes, keepdims=True)

    def build():
        shape = x.shape

        def bwd(g):
            return (np.broadcast_to(g, shape),)

        return bwd

    return record_op(out_data, (x,), build)


def mean(x: Tensor, dims: Iterable[int] | None = None) -> Tensor:
    """Mean over ``dims`` (all, when omitted), keeping reduced dims as 1.

    An empty dim-set is a documented no-op returning the input unchanged.
    """
    if dims is None:
        dims = range(x.ndim)
    axes = _normalize_dims(dims, x.ndim)
    if not axes:
        return x
    out_data = x.data.mean(axis=axes, keepdims=True)

    def build():
        shape = x.shape
        count = 1
        for a in axes:
            count *= shape[a]
        inv = 1.0 / count

        def bwd(g):
            return (np.broadcast_to(g * inv, shape).astype(g.dtype, copy=False),)

        return bwd

    return record_op(out_data, (x,), build)


def reduce_max(x: Tensor, dims: Iterable[int] | None = None) -> Tensor:
    """Max over ``dims``, keeping reduced dims as 1.

    The argmax (first winner on ties) is recorded so the backward pass
    routes the gradient to exactly one element per reduced window. An empty
    dim-set is a documented no-op.
    """
    if dims is None:
        dims = range(x.ndim)
    axes = _normalize_dims(dims, x.ndim)
    if not axes:
        return x
    kept = tuple(a for a in range(x.ndim) if a not in axes)
    perm = kept + axes
    moved = x.data.transpose(perm)
    kept_shape = moved.shape[: len(kept)]
    flat = moved.reshape(int(np.prod(kept_shape, dtype=np.int64)) if kept_shape else 1, -1)
    arg = flat.argmax(axis=1)
    out_flat = flat[np.arange(flat.shape[0]), arg]
    out_shape = tuple(1 if a in axes else x.shape[a] for a in range(x.ndim))
    out_data = out_flat.reshape(kept_shape).reshape(out_shape)

    def build():
        in_shape = x.shape

        def bwd(g):
            gflat = g.reshape(flat.shape[0])
            dx_flat = np.zeros_like(flat)
            dx_flat[np.arange(flat.shape[0]), arg] = gflat
            dx = dx_flat.reshape(moved.shape)
            inv = np.argsort(perm)
            return (dx.transpose(inv).reshape(in_shape),)

        return bwd

    return record_op(out_data, (x,), build)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out_data = x.data.reshape(shape)

    def build():
        in_shape = x.shape

        def bwd(g):
            return (g.reshape(in_shape),)

        return bwd

    return record_op(out_data, (x,), build)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)

    def build():
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum(sizes)[:-1]
        needs = [t.requires_grad for t in tensors]

        def bwd(g):
            pieces = np.split(g, offsets, axis=axis)
            return tuple(p if need else None for p, need in zip(pieces, needs))

        return bwd

    return record_op(out_data, tuple(tensors), build)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis (used for channel splits)."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out_data = x.data[index]

    def build():
        in_shape = x.shape

        def bwd(g):
            dx = np.zeros(in_shape, dtype=g.dtype)
            dx[index] = g
            return (dx,)

        return bwd

    return record_op(out_data, (x,), build)


def finite_diff_oracle(
    f: Callable[[], float],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    workers: int = 1,
) -> dict[Tensor, np.ndarray]:
    """Central-difference gradients of a scalar function, per parameter scalar.

    ``f`` must be deterministic and read ``params`` by reference (their data
    is perturbed in place between evaluations and restored afterwards).
    Stochastic layers must be frozen (eval mode) or the results are
    meaningless. With ``workers > 1`` the parameter scalars are split across
    forked processes; only valid on platforms with fork (Linux).
    """
    if eps <= 0:
        raise ContractError("finite_diff_oracle needs eps > 0")
    if workers > 1:
        return _finite_diff_parallel(f, params, eps, workers)
    out: dict[Tensor, np.ndarray] = {}
    for p in params:
        out[p] = _finite_diff_one(f, p, eps, 0, p.size)
    return out


def _finite_diff_one(f, p: Tensor, eps: float, start: int, stop: int) -> np.ndarray:
    flat = p.data.reshape(-1)
    grad = np.zeros(stop - start, dtype=np.float64)
    for j, i in enumerate(range(start, stop)):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f()
        flat[i] = orig - eps
        f_minus = f()
        flat[i] = orig
        grad[j] = (f_plus - f_minus) / (2.0 * eps)
    if start == 0 and stop == p.size:
        return grad.reshape(p.shape)
    return grad


def _finite_diff_parallel(f, params, eps, workers) -> dict[Tensor, np.ndarray]:
    import multiprocessing as mp

    # One flat job list over (param index, scalar range); fork shares the
    # parent's model memory copy-on-write, so each worker perturbs its own copy.
    jobs = []
    chunk = 2048
    for pi, p in enumerate(params):
        for start in range(0, p.size, chunk):
            jobs.append((pi, start, min(start + chunk, p.size)))

    ctx = mp.get_context("fork")
    with ctx.Pool(processes=workers, initializer=_limit_blas_threads) as pool:
        results = pool.starmap(
            _fd_job, [(f, params, eps, pi, s, e) for pi, s, e in jobs], chunksize=1
        )
    out = {p: np.zeros(p.size, dtype=np.float64) for p in params}
    for (pi, start, stop), piece in zip(jobs, results):
        out[params[pi]][start:stop] = piece
    return {p: g.reshape(p.shape) for p, g in out.items()}


def _fd_job(f, params, eps, pi, start, stop):
    return _finite_diff_one(f, params[pi], eps, start, stop)


def _limit_blas_threads():
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except Exception:
        pass


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3
) -> float:
    """Max over elements of |a - n| / max(|a|, |n|, floor).

    The floor keeps near-zero gradients from turning finite-difference noise
    into spurious relative error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
