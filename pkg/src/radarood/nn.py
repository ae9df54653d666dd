"""Dense-tensor layers with reverse-mode gradients, on numpy.

Exactly the layer set the reconstruction network needs: 3x3 same-padding
convolution and transpose convolution, 1-D/2-D batch norm, ReLU, sigmoid, 2x2 max
pooling, nearest-neighbor 2x upsampling, dense, flatten/reshape.  Every layer
caches what its backward pass needs on forward; backward returns the input
gradient and accumulates parameter gradients in place.  A central-difference
gradient checker closes the loop.

Layers run in float32 for training or float64 for gradient checking; every
forward output is checked finite (disable with ``set_finite_checks`` only when
profiling).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf checks; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def _check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if _FINITE_CHECKS and not np.isfinite(arr).all():
        raise NumericError(f"{name} produced non-finite values")
    return arr


class Parameter:
    """A trainable array plus its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self) -> None:
        self.grad[...] = 0


class Layer:
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[tuple[str, Parameter]]:
        return []

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _shifts(wp: int):
    # flat offset of each kernel tap on the padded [*, n, hp, wp] grid
    return [((u, v), (u - 1) * wp + (v - 1)) for u in range(3) for v in range(3)]


def _pad_cf(x: np.ndarray) -> np.ndarray:
    """[N,C,H,W] -> zero-padded channel-first [C, N, H+2, W+2]."""
    n, c, h, wd = x.shape
    xp = np.zeros((c, n, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3)
    return xp


def _conv3x3_apply(x: np.ndarray, w: np.ndarray):
    """Same-padding 3x3 cross-correlation core. x [N,C,H,W], w [F,C,3,3].

    Channel-first on a zero-padded flat buffer, where every kernel tap is a
    constant flat offset.  Positions whose window crosses an image boundary pick
    up junk from the neighboring padded row and are sliced away; the padding
    rows also isolate adjacent batch images.  Two equivalent schedules, chosen
    by shape: with few input channels, copy the 9 shifted flat views into a
    column matrix (9C long memcpys) and run one [F, C*9] GEMM; with few output
    channels, skip the columns and accumulate one [F, C] GEMM per tap.
    Returns (out [N,F,H,W], padded_input, cols_or_None) for reuse in backward.
    """
    n, c, h, wd = x.shape
    f = w.shape[0]
    hp, wp = h + 2, wd + 2
    xp = _pad_cf(x)
    length = n * hp * wp
    xf = xp.reshape(c, length)
    lo, hi = wp + 1, length - wp - 1
    cols = None
    if c <= f:
        cols = np.empty((c, 9, hi - lo), dtype=x.dtype)
        for (u, v), shift in _shifts(wp):
            cols[:, 3 * u + v] = xf[:, lo + shift : hi + shift]
        valid = w.reshape(f, c * 9) @ cols.reshape(c * 9, hi - lo)
    else:
        valid = np.zeros((f, hi - lo), dtype=x.dtype)
        buf = np.empty((f, hi - lo), dtype=x.dtype)
        taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # strided taps stall BLAS
        for (u, v), shift in _shifts(wp):
            np.matmul(taps[u, v], xf[:, lo + shift : hi + shift], out=buf)
            valid += buf
    out_f = np.zeros((f, length), dtype=x.dtype)
    out_f[:, lo:hi] = valid
    out = out_f.reshape(f, n, hp, wp)[:, :, 1:-1, 1:-1]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), xp, cols


def _conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """Convolution plus bias; returns (out, cache) with cache reused by backward."""
    out, xp, cols = _conv3x3_apply(x, w)
    if b is not None:
        out += b[None, :, None, None]
    return out, (xp, cols)


def _adjoint_kernel(w: np.ndarray) -> np.ndarray:
    # swap in/out channels and flip spatially: correlating with this kernel is
    # the exact adjoint of correlating with w under zero 'same' padding
    return np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def _conv3x3_backward(grad: np.ndarray, cache, w: np.ndarray):
    """Gradients of _conv3x3_forward. Returns (dx, dw, db)."""
    xp, cols = cache
    n, f, h, wd = grad.shape
    c = w.shape[1]
    hp, wp = h + 2, wd + 2
    length = n * hp * wp
    lo, hi = wp + 1, length - wp - 1

    g_full = np.zeros((f, n, hp, wp), dtype=grad.dtype)
    g_full[:, :, 1:-1, 1:-1] = grad.transpose(1, 0, 2, 3)
    gv = g_full.reshape(f, length)[:, lo:hi]
    if cols is not None:
        dw = (gv @ cols.reshape(c * 9, hi - lo).T).reshape(f, c, 3, 3)
    else:
        xf = xp.reshape(c, length)
        dw = np.empty_like(w)
        for (u, v), shift in _shifts(wp):
            dw[:, :, u, v] = gv @ xf[:, lo + shift : hi + shift].T
    db = grad.sum(axis=(0, 2, 3))
    dx, _, _ = _conv3x3_apply(grad, _adjoint_kernel(w))
    return dx, dw, db


class Conv2d(Layer):
    """3x3 convolution, stride 1, same (zero) padding. Weight [out_ch, in_ch, 3, 3]."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 init: str = "he", dtype=np.float32):
        self.in_ch, self.out_ch = in_ch, out_ch
        fan_in, fan_out = in_ch * 9, out_ch * 9
        shape = (out_ch, in_ch, 3, 3)
        if init == "he":
            w = _he_uniform(rng, shape, fan_in, dtype)
        else:
            w = _glorot_uniform(rng, shape, fan_in, fan_out, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"Conv2d expects [N,{self.in_ch},H,W], got {x.shape}")
        out, self._cache = _conv3x3_forward(x, self.weight.data, self.bias.data)
        return _check_finite("Conv2d", out)

    def backward(self, grad):
        dx, dw, db = _conv3x3_backward(grad, self._cache, self.weight.data)
        self._cache = None
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class ConvTranspose2d(Layer):
    """Adjoint of Conv2d under the same padding, stride 1. Weight [in_ch, out_ch, 3, 3].

    A ConvTranspose2d whose weight tensor equals a Conv2d's weight computes that
    convolution's exact adjoint.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 init: str = "he", dtype=np.float32):
        self.in_ch, self.out_ch = in_ch, out_ch
        fan_in, fan_out = in_ch * 9, out_ch * 9
        shape = (in_ch, out_ch, 3, 3)
        if init == "he":
            w = _he_uniform(rng, shape, fan_in, dtype)
        else:
            w = _glorot_uniform(rng, shape, fan_in, fan_out, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self._cache = None

    @staticmethod
    def _effective(w: np.ndarray) -> np.ndarray:
        # flip spatially and swap channel axes: the kernel Conv2d would need
        return np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"ConvTranspose2d expects [N,{self.in_ch},H,W], got {x.shape}")
        out, self._cache = _conv3x3_forward(x, self._effective(self.weight.data), self.bias.data)
        return _check_finite("ConvTranspose2d", out)

    def backward(self, grad):
        dx, dw_eff, db = _conv3x3_backward(grad, self._cache, self._effective(self.weight.data))
        self._cache = None
        self.weight.grad += self._effective(dw_eff)  # the transform is its own inverse
        self.bias.grad += db
        return dx

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class _BatchNorm(Layer):
    def __init__(self, n_features: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.n_features = n_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(n_features, dtype=dtype))
        self.beta = Parameter(np.zeros(n_features, dtype=dtype))
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self.update_stats = True  # cleared while probing losses for gradient checks
        self._cache = None

    _axes: tuple = ()

    def _expand(self, v: np.ndarray, ndim: int) -> np.ndarray:
        shape = [1] * ndim
        shape[1] = self.n_features
        return v.reshape(shape)

    def forward(self, x, train=False):
        if x.shape[1] != self.n_features:
            raise ShapeError(f"batchnorm expects {self.n_features} channels, got {x.shape}")
        axes = self._axes
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch norm needs batch size >= 2 in train mode")
            m = float(np.prod([x.shape[a] for a in axes]))
            mean = x.mean(axis=axes)
            xm = x - self._expand(mean, x.ndim)
            var = (xm * xm).mean(axis=axes)
            istd = 1.0 / np.sqrt(var + self.eps)
            xhat = xm * self._expand(istd, x.ndim)
            if self.update_stats:
                mom = self.momentum
                unbiased = var * (m / (m - 1.0))
                self.running_mean = ((1 - mom) * self.running_mean + mom * mean).astype(x.dtype)
                self.running_var = ((1 - mom) * self.running_var + mom * unbiased).astype(x.dtype)
            self._cache = ("train", xhat, istd, m)
        else:
            istd = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self._expand(self.running_mean, x.ndim)) * self._expand(istd, x.ndim)
            self._cache = ("eval", xhat, istd, None)
        out = self._expand(self.gamma.data, x.ndim) * xhat + self._expand(self.beta.data, x.ndim)
        return _check_finite("batchnorm", out)

    def backward(self, grad):
        mode, xhat, istd, m = self._cache
        axes = self._axes
        self.gamma.grad += (grad * xhat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        dxhat = grad * self._expand(self.gamma.data, grad.ndim)
        if mode == "eval":
            return dxhat * self._expand(istd, grad.ndim)
        sum_dxhat = self._expand(dxhat.sum(axis=axes), grad.ndim)
        sum_dxhat_xhat = self._expand((dxhat * xhat).sum(axis=axes), grad.ndim)
        return (self._expand(istd, grad.ndim) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffers(self, running_mean: np.ndarray, running_var: np.ndarray) -> None:
        if (running_var < 0).any():
            raise ValueError("running variance must be >= 0")
        self.running_mean = running_mean
        self.running_var = running_var


class BatchNorm1d(_BatchNorm):
    """Per-feature normalization over the batch axis; input [N, C]."""

    _axes = (0,)


class BatchNorm2d(_BatchNorm):
    """Per-channel normalization over batch and space; input [N, C, H, W]."""

    _axes = (0, 2, 3)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask


class Sigmoid(Layer):
    def forward(self, x, train=False):
        # exp of -|x| never overflows; the two halves share it
        z = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        self._out = out
        return _check_finite("Sigmoid", out)

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; halves both spatial dims.

    Reduces columns then rows, caching which side won each pairwise max so
    backward routes every gradient to exactly one input cell (ties prefer the
    top-left).
    """

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"MaxPool2 needs even spatial dims, got {x.shape}")
        left, right = x[..., 0::2], x[..., 1::2]
        self._v_right = right > left
        m1 = np.maximum(left, right)                      # [n, c, h, w/2]
        top, bottom = m1[:, :, 0::2], m1[:, :, 1::2]
        self._u_bottom = bottom > top
        self._m1_shape = m1.shape
        self._x_shape = x.shape
        return np.maximum(top, bottom)                    # [n, c, h/2, w/2]

    def backward(self, grad):
        dm1 = np.zeros(self._m1_shape, dtype=grad.dtype)
        dm1[:, :, 0::2] = np.where(self._u_bottom, 0, grad)
        dm1[:, :, 1::2] = np.where(self._u_bottom, grad, 0)
        dx = np.zeros(self._x_shape, dtype=grad.dtype)
        dx[..., 0::2] = np.where(self._v_right, 0, dm1)
        dx[..., 1::2] = np.where(self._v_right, dm1, 0)
        return dx


class Upsample2(Layer):
    """Nearest-neighbor 2x upsampling; inverse of MaxPool2 on shapes."""

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        out = np.broadcast_to(x[:, :, :, None, :, None], (n, c, h, 2, w, 2))
        return out.reshape(n, c, 2 * h, 2 * w)

    def backward(self, grad):
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Dense(Layer):
    """Affine map [N, d_in] -> [N, d_out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 init: str = "he", dtype=np.float32):
        self.d_in, self.d_out = d_in, d_out
        if init == "he":
            w = _he_uniform(rng, (d_in, d_out), d_in, dtype)
        else:
            w = _glorot_uniform(rng, (d_in, d_out), d_in, d_out, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"Dense expects [N,{self.d_in}], got {x.shape}")
        self._x = x
        return _check_finite("Dense", x @ self.weight.data + self.bias.data)

    def backward(self, grad):
        self.weight.grad += self._x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.data.T

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reshape(Layer):
    """Reshape [N, d] -> [N, *target]; inverse of Flatten for a fixed target."""

    def __init__(self, target: tuple):
        self.target = tuple(target)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], *self.target)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Layer):
    """Named layer chain; names become parameter paths (e.g. conv1/weight)."""

    def __init__(self, layers: list[tuple[str, Layer]]):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for _, layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        out = []
        for lname, layer in self.layers:
            out.extend((f"{lname}/{pname}", p) for pname, p in layer.params())
        return out

    def buffers(self):
        out = []
        for lname, layer in self.layers:
            out.extend((f"{lname}/{bname}", b) for bname, b in layer.buffers())
        return out

    def zero_grad(self):
        for _, p in self.params():
            p.zero_grad()

    def set_update_stats(self, enabled: bool) -> None:
        for _, layer in self.layers:
            if isinstance(layer, _BatchNorm):
                layer.update_stats = enabled


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(loss_fn, arrays: dict, analytic: dict, eps: float = 1e-5,
               tol: float = 1e-4, scale_floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must re-evaluate the scalar loss from the current contents of
    ``arrays`` (name -> ndarray, probed in place, coordinate by coordinate) and be
    free of side effects.  ``analytic`` maps the same names to precomputed
    gradients.  Per tensor, the relative error is the sup-norm of the difference
    over the sup-norm of the gradients; ``scale_floor`` keeps tensors whose true
    gradient is exactly zero (e.g. a bias immediately renormalized by batch norm)
    from dividing finite-difference noise by itself.
    """
    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    for name, arr in arrays.items():
        if not arr.flags.c_contiguous:
            raise ValueError(f"grad_check probes {name} in place; it must be C-contiguous")
        a = analytic[name]
        numeric = np.zeros_like(a, dtype=np.float64)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn()
            flat[i] = orig - eps
            lm = loss_fn()
            flat[i] = orig
            nflat[i] = (lp - lm) / (2.0 * eps)
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), scale_floor)
        rel = float(np.abs(a - numeric).max(initial=0.0) / scale)
        report.per_tensor[name] = rel
        report.max_rel_error = max(report.max_rel_error, rel)
    return report
