"""Reverse-mode automatic differentiation over numpy, plus the RAdam optimizer.

The engine is deliberately small: tensors hold numpy arrays of any float
dtype, ops build a graph, and backward() walks it in reverse topological
order. Training runs in float32; gradient checks can run the same graph in
float64 by feeding float64 leaves.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput, NonFiniteError

# Flip off to skip per-op finiteness checks (they are cheap at our sizes).
CHECK_FINITE = True


def _checked(arr: np.ndarray, op: str) -> np.ndarray:
    if CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward, op: str) -> "Tensor":
        out = Tensor(_checked(data, op))
        out._parents = tuple(p for p in parents if isinstance(p, Tensor))
        out.requires_grad = any(p.requires_grad for p in out._parents)
        if out.requires_grad:
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad.astype(self.data.dtype, copy=False)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.dtype)

        def backward(out):
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))

        return Tensor._make(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)

        def backward(out):
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-out.grad, other.shape))

        return Tensor._make(self.data - other.data, (self, other), backward, "sub")

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)

        def backward(out):
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        return Tensor._make(self.data * other.data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        def backward(out):
            if self.requires_grad:
                self._accumulate(-out.grad)

        return Tensor._make(-self.data, (self,), backward, "neg")

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        # Overflow surfaces as NonFiniteError from the post-op check.
        with np.errstate(over="ignore"):
            result = np.exp(self.data)

        def backward(out):
            if self.requires_grad:
                self._accumulate(out.grad * result)

        return Tensor._make(result, (self,), backward, "exp")

    def abs(self):
        def backward(out):
            if self.requires_grad:
                self._accumulate(out.grad * np.sign(self.data))

        return Tensor._make(np.abs(self.data), (self,), backward, "abs")

    def square(self):
        def backward(out):
            if self.requires_grad:
                self._accumulate(out.grad * (2.0 * self.data))

        return Tensor._make(self.data * self.data, (self,), backward, "square")

    # -- reductions ----------------------------------------------------------

    def sum(self):
        # Accumulate in float64 so large float32 reductions stay accurate.
        value = np.sum(self.data, dtype=np.float64).astype(self.dtype)

        def backward(out):
            if self.requires_grad:
                self._accumulate(np.full(self.shape, out.grad, dtype=self.dtype))

        return Tensor._make(value, (self,), backward, "sum")

    def mean(self):
        value = (np.sum(self.data, dtype=np.float64) / self.data.size).astype(self.dtype)

        def backward(out):
            if self.requires_grad:
                g = np.asarray(out.grad, dtype=np.float64) / self.data.size
                self._accumulate(np.full(self.shape, g).astype(self.dtype))

        return Tensor._make(value, (self,), backward, "mean")

    # -- shape ops -----------------------------------------------------------

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice along one axis."""
        if start < 0 or length < 1 or start + length > self.shape[axis]:
            raise InvalidInput(
                f"narrow({axis}, {start}, {length}) out of range for {self.shape}"
            )
        index = [slice(None)] * self.data.ndim
        index[axis] = slice(start, start + length)
        index = tuple(index)

        def backward(out):
            if self.requires_grad:
                g = np.zeros(self.shape, dtype=self.dtype)
                g[index] = out.grad
                self._accumulate(g)

        return Tensor._make(self.data[index], (self,), backward, "narrow")

    # -- backward ------------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar loss through the graph once."""
        if self.data.size != 1:
            raise InvalidInput(f"backward needs a scalar, got shape {self.shape}")
        if self._done:
            raise InvalidInput("backward was already called on this graph")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node)
            node._done = True


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape its source was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def concat(tensors: list, axis: int = 1) -> Tensor:
    """Concatenate along an axis; gradients split back at the seams."""
    if not tensors:
        raise InvalidInput("concat needs at least one tensor")
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(out):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * out.grad.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(index)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tensors, backward, "concat")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    """max(x, alpha * x); the slope at exactly zero is 1."""
    x = as_tensor(x)
    mask = x.data >= 0

    def backward(out):
        if x.requires_grad:
            slope = np.where(mask, 1.0, alpha).astype(x.dtype)
            x._accumulate(out.grad * slope)

    data = np.where(mask, x.data, x.data * np.asarray(alpha, dtype=x.dtype))
    return Tensor._make(data, (x,), backward, "leaky_relu")


def conv1d(x: Tensor, weight: Tensor, bias=None, stride: int = 1, padding=None) -> Tensor:
    """Batched 1-D convolution.

    x is (batch, in_channels, time), weight is (out_channels, in_channels,
    kernel). Default padding keeps time length at stride 1 for odd kernels.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.data.ndim != 3:
        raise InvalidInput(f"conv1d input must be (B, C, T), got {x.shape}")
    if weight.data.ndim != 3:
        raise InvalidInput(f"conv1d weight must be (O, C, K), got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise InvalidInput(
            f"channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    if stride < 1:
        raise InvalidInput("stride must be at least 1")
    kernel = weight.shape[2]
    if padding is None:
        padding = kernel // 2
    t_in = x.shape[2] + 2 * padding
    if t_in < kernel:
        raise InvalidInput(f"time axis {x.shape[2]} too short for kernel {kernel}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)
    windows = windows[:, :, ::stride]
    # optimize=True lowers these contractions onto BLAS, which is the
    # difference between milliseconds and seconds at full layer widths.
    out_data = np.einsum("bctk,ock->bot", windows, weight.data, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (weight.shape[0],):
            raise InvalidInput(f"bias must be ({weight.shape[0]},), got {bias.shape}")
        out_data = out_data + bias.data[None, :, None]
        parents.append(bias)

    t_out = out_data.shape[2]

    def backward(out):
        g = out.grad
        if weight.requires_grad:
            weight._accumulate(np.einsum("bot,bctk->ock", g, windows, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            spread = np.einsum("bot,ock->bctk", g, weight.data, optimize=True)
            for k in range(kernel):
                dxp[:, :, k : k + stride * t_out : stride] += spread[:, :, :, k]
            dx = dxp[:, :, padding : xp.shape[2] - padding] if padding else dxp
            x._accumulate(dx)

    return Tensor._make(out_data, parents, backward, "conv1d")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute error."""
    return (as_tensor(a) - as_tensor(b)).abs().mean()


# -- RAdam ---------------------------------------------------------------


def radam_step(param, grad, m, v, t, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One rectified-Adam update; returns (param, m, v) as new arrays.

    The variance rectification term kicks in once the approximated simple
    moving average length rho_t exceeds 4; before that the update falls back
    to the bias-corrected first moment alone.
    """
    if t < 1:
        raise InvalidInput("step index t starts at 1")
    grad = np.asarray(grad, dtype=np.float64)
    m = beta1 * np.asarray(m, dtype=np.float64) + (1.0 - beta1) * grad
    v = beta2 * np.asarray(v, dtype=np.float64) + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = rho_inf - 2.0 * t * beta2**t / (1.0 - beta2**t)
    if rho_t > 4.0:
        v_hat = np.sqrt(v / (1.0 - beta2**t))
        r = np.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        update = lr * r * m_hat / (v_hat + eps)
    else:
        update = lr * m_hat
    dtype = np.asarray(param).dtype
    new_param = (np.asarray(param, dtype=np.float64) - update).astype(dtype)
    return new_param, m, v


class RAdam:
    """Rectified Adam over a named parameter dict."""

    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}
        self.v = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}

    def step(self, grads: dict) -> None:
        """Apply one update using gradients for any subset of the parameters."""
        self.t += 1
        for name, grad in grads.items():
            if name not in self.params:
                raise InvalidInput(f"unknown parameter {name!r}")
            if grad is None:
                continue
            self.params[name], self.m[name], self.v[name] = radam_step(
                self.params[name],
                grad,
                self.m[name],
                self.v[name],
                self.t,
                lr=self.lr,
                beta1=self.beta1,
                beta2=self.beta2,
                eps=self.eps,
            )
