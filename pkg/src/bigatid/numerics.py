"""Dense float64 tensor primitives: checked matmul, activations, softmax,
layer normalization, a deterministic seeded RNG stream, and the central
finite-difference gradient oracle used to validate every backward pass."""

from __future__ import annotations

import numpy as np

DEFAULT_LN_EPS = 1e-3
DEFAULT_FD_STEP = 1e-5


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check.

    a (..., m, k), b (k, n) -> (..., m, n). Summation is delegated to BLAS,
    which is run-to-run deterministic for fixed inputs and thread count.
    """
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic: exp(-softplus(-x)) is stable for any sign."""
    out = np.logaddexp(0.0, -as_f64(x))
    np.negative(out, out=out)
    np.exp(out, out=out)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_f64(x), 0.0)


_ACTIVATIONS = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "relu": relu,
}


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise nonlinearity, same shape out. kind in {sigmoid, tanh, relu}."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Last-axis softmax with max subtraction; each row sums to 1."""
    x = as_f64(x)
    e = x - x.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = DEFAULT_LN_EPS) -> np.ndarray:
    """Standardize the last axis to mean 0 / variance 1, then scale and shift.

    x (..., d), gamma (d,), beta (d,). Variance is the biased estimate.
    """
    x = as_f64(x)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * as_f64(gamma) + as_f64(beta)


def finite_diff_grad(f, x: np.ndarray, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function: (f(x+h*e_i)-f(x-h*e_i))/2h.

    This is the independent oracle every analytic backward pass is checked
    against; it never shares code with the layers it validates.
    """
    if h <= 0:
        raise ValueError("finite_diff_grad: h must be positive")
    x = as_f64(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"finite_diff_grad: non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_mismatch(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation relative to the larger gradient magnitude.

    The unit floor keeps the measure absolute for (near-)zero gradients,
    where central-difference noise would otherwise dominate the ratio.
    """
    analytic = as_f64(analytic)
    numeric = as_f64(numeric)
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1.0)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


class RngStream:
    """Deterministic random stream (PCG64): equal seeds yield equal draws
    across runs and platforms. One stream per logical task, never shared."""

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def spawn(self, *key: int) -> "RngStream":
        """Derive an independent child stream with a stable integer key path."""
        return RngStream(self.seed, self._key + tuple(int(k) for k in key))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._key})"
