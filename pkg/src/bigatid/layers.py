"""Forward and backward passes for every block in the network: dense,
layer norm, dropout, flatten/concat, GRU (reset-after, dual bias),
bidirectional GRU, LSTM, and multi-head self-attention.

Conventions: batch-first shapes, float64 throughout, parameters immutable
during a forward/backward pair. Each forward returns (output, cache); the
matching backward consumes exactly one forward's cache and returns the
input gradient plus parameter gradients carried in the same dataclass
shape as the parameters themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, ShapeError, as_f64, sigmoid, softmax_rows


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------

def glorot_uniform(rng: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(size=(fan_in, fan_out), low=-limit, high=limit)


def orthogonal(rng: RngStream, n: int) -> np.ndarray:
    """Orthogonal n x n matrix via QR with the sign fix that makes the
    distribution uniform (Haar) and the result deterministic per stream."""
    a = rng.normal(size=(n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass
class DenseParams:
    W: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)

    @classmethod
    def init(cls, rng: RngStream, fan_in: int, fan_out: int) -> "DenseParams":
        return cls(W=glorot_uniform(rng, fan_in, fan_out), b=np.zeros(fan_out))

    def tensors(self):
        return [("W", self.W), ("b", self.b)]

    def count(self) -> int:
        return self.W.size + self.b.size


@dataclass
class LayerNormParams:
    gamma: np.ndarray  # (d,)
    beta: np.ndarray   # (d,)

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(gamma=np.ones(d), beta=np.zeros(d))

    def tensors(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def count(self) -> int:
        return self.gamma.size + self.beta.size


@dataclass
class GruParams:
    """Reset-after GRU with separate input and recurrent biases.

    Gate order along the 3n axis is update (z), reset (r), candidate (h).
    Parameter count 3*(d*n + n*n + 2n): the dual-bias formulation.
    """

    W_in: np.ndarray   # (d, 3n)
    W_rec: np.ndarray  # (n, 3n)
    b_in: np.ndarray   # (3n,)
    b_rec: np.ndarray  # (3n,)

    @classmethod
    def init(cls, rng: RngStream, d: int, n: int) -> "GruParams":
        w_rec = np.concatenate([orthogonal(rng, n) for _ in range(3)], axis=1)
        return cls(
            W_in=glorot_uniform(rng, d, 3 * n),
            W_rec=w_rec,
            b_in=np.zeros(3 * n),
            b_rec=np.zeros(3 * n),
        )

    @property
    def units(self) -> int:
        return self.W_rec.shape[0]

    def tensors(self):
        return [("W_in", self.W_in), ("W_rec", self.W_rec),
                ("b_in", self.b_in), ("b_rec", self.b_rec)]

    def count(self) -> int:
        return self.W_in.size + self.W_rec.size + self.b_in.size + self.b_rec.size


@dataclass
class LstmParams:
    """LSTM with a single bias vector; gate order input, forget, candidate, output."""

    W_in: np.ndarray   # (d, 4n)
    W_rec: np.ndarray  # (n, 4n)
    b: np.ndarray      # (4n,)

    @classmethod
    def init(cls, rng: RngStream, d: int, n: int, forget_bias: float = 0.0) -> "LstmParams":
        w_rec = np.concatenate([orthogonal(rng, n) for _ in range(4)], axis=1)
        b = np.zeros(4 * n)
        b[n:2 * n] = forget_bias
        return cls(W_in=glorot_uniform(rng, d, 4 * n), W_rec=w_rec, b=b)

    @property
    def units(self) -> int:
        return self.W_rec.shape[0]

    def tensors(self):
        return [("W_in", self.W_in), ("W_rec", self.W_rec), ("b", self.b)]

    def count(self) -> int:
        return self.W_in.size + self.W_rec.size + self.b.size


@dataclass
class MhaParams:
    """Projections for multi-head self-attention; h*d_k may differ from d_model."""

    Wq: np.ndarray  # (d_model, h*d_k)
    bq: np.ndarray
    Wk: np.ndarray
    bk: np.ndarray
    Wv: np.ndarray
    bv: np.ndarray
    Wo: np.ndarray  # (h*d_k, d_model)
    bo: np.ndarray  # (d_model,)

    @classmethod
    def init(cls, rng: RngStream, d_model: int, heads: int, d_k: int) -> "MhaParams":
        hd = heads * d_k
        return cls(
            Wq=glorot_uniform(rng, d_model, hd), bq=np.zeros(hd),
            Wk=glorot_uniform(rng, d_model, hd), bk=np.zeros(hd),
            Wv=glorot_uniform(rng, d_model, hd), bv=np.zeros(hd),
            Wo=glorot_uniform(rng, hd, d_model), bo=np.zeros(d_model),
        )

    def tensors(self):
        return [("Wq", self.Wq), ("bq", self.bq), ("Wk", self.Wk), ("bk", self.bk),
                ("Wv", self.Wv), ("bv", self.bv), ("Wo", self.Wo), ("bo", self.bo)]

    def count(self) -> int:
        return sum(t.size for _, t in self.tensors())


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def dense_forward(p: DenseParams, x: np.ndarray, act: str = "none"):
    """y = act(x W + b). x (b, in) -> y (b, out); act in {none, relu, softmax}."""
    x = as_f64(x)
    if x.shape[-1] != p.W.shape[0]:
        raise ShapeError(f"dense: input width {x.shape} does not match kernel {p.W.shape}")
    z = x @ p.W
    z += p.b
    if act == "none":
        y = z
    elif act == "relu":
        y = np.maximum(z, 0.0)
    elif act == "softmax":
        y = softmax_rows(z)
    else:
        raise ValueError(f"dense: unknown activation {act!r}")
    return y, (x, z, y, act)


def dense_backward(p: DenseParams, cache, dy: np.ndarray):
    x, z, y, act = cache
    dy = as_f64(dy)
    if act == "none":
        dz = dy
    elif act == "relu":
        dz = dy * (z > 0)
    elif act == "softmax":
        dz = y * (dy - (dy * y).sum(axis=-1, keepdims=True))
    else:  # pragma: no cover - guarded at forward time
        raise ValueError(act)
    dW = x.T @ dz
    db = dz.sum(axis=0)
    dx = dz @ p.W.T
    return dx, DenseParams(W=dW, b=db)


def time_dense_forward(p: DenseParams, x: np.ndarray):
    """Width-expanding linear map applied per time step: (b, T, d) -> (b, T, out)."""
    x = as_f64(x)
    b, t, d = x.shape
    y2, cache = dense_forward(p, x.reshape(b * t, d), act="none")
    return y2.reshape(b, t, -1), (cache, (b, t, d))


def time_dense_backward(p: DenseParams, cache, dy: np.ndarray):
    inner, (b, t, d) = cache
    dx2, grads = dense_backward(p, inner, as_f64(dy).reshape(b * t, -1))
    return dx2.reshape(b, t, d), grads


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

def layer_norm_forward(p: LayerNormParams, x: np.ndarray, eps: float = 1e-3):
    x = as_f64(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = xhat * p.gamma + p.beta
    return y, (xhat, inv)


def layer_norm_backward(p: LayerNormParams, cache, dy: np.ndarray):
    xhat, inv = cache
    dy = as_f64(dy)
    reduce_axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=reduce_axes)
    dbeta = dy.sum(axis=reduce_axes)
    dxhat = dy * p.gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, LayerNormParams(gamma=dgamma, beta=dbeta)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout_apply(x: np.ndarray, rate: float, mode: str, rng: RngStream | None = None):
    """Inverted dropout: train mode zeros with probability `rate` and scales
    survivors by 1/(1-rate); eval mode is the identity. Returns (y, mask)."""
    x = as_f64(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"dropout: unknown mode {mode!r}")
    if rng is None:
        raise ValueError("dropout: train mode requires an RngStream")
    mask = rng.uniform(size=x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(mask, rate: float, dy: np.ndarray) -> np.ndarray:
    dy = as_f64(dy)
    if mask is None:
        return dy
    return dy * mask / (1.0 - rate)


# ---------------------------------------------------------------------------
# flatten / concat
# ---------------------------------------------------------------------------

def flatten(x: np.ndarray) -> np.ndarray:
    """(b, T, c) -> (b, T*c), row-major over the trailing axes."""
    x = as_f64(x)
    if x.ndim != 3:
        raise ShapeError(f"flatten: expected rank-3 input, got shape {x.shape}")
    return x.reshape(x.shape[0], -1)


def flatten_backward(shape: tuple[int, ...], dy: np.ndarray) -> np.ndarray:
    return as_f64(dy).reshape(shape)


def concat_last(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """(b, p) || (b, q) -> (b, p+q)."""
    a = as_f64(a)
    c = as_f64(c)
    if a.shape[:-1] != c.shape[:-1]:
        raise ShapeError(f"concat: leading dimensions disagree, {a.shape} vs {c.shape}")
    return np.concatenate([a, c], axis=-1)


# ---------------------------------------------------------------------------
# GRU / BiGRU
# ---------------------------------------------------------------------------

def gru_sequence_forward(p: GruParams, x: np.ndarray, reverse: bool = False):
    """Reset-after GRU over a full sequence, zero initial state.

    x (b, T, d) -> h_seq (b, T, n). Per step:
        z = sig(x W_z + bz_in + h U_z + bz_rec)
        r = sig(x W_r + br_in + h U_r + br_rec)
        hc = tanh(x W_h + bh_in + r * (h U_h + bh_rec))
        h' = (1 - z) * h + z * hc
    reverse=True runs the recurrence back in time and re-reverses the output.
    """
    x = as_f64(x)
    if x.ndim != 3 or x.shape[2] != p.W_in.shape[0]:
        raise ShapeError(f"gru: input {x.shape} does not match kernel {p.W_in.shape}")
    n = p.units
    b, t, _ = x.shape
    xs = x[:, ::-1] if reverse else x
    h = np.zeros((b, n))
    h_seq = np.empty((b, t, n))
    steps = []
    for i in range(t):
        xt = xs[:, i]
        a_in = xt @ p.W_in
        a_in += p.b_in
        a_rec = h @ p.W_rec
        a_rec += p.b_rec
        z = sigmoid(a_in[:, :n] + a_rec[:, :n])
        r = sigmoid(a_in[:, n:2 * n] + a_rec[:, n:2 * n])
        s = a_rec[:, 2 * n:]
        hc = np.tanh(a_in[:, 2 * n:] + r * s)
        steps.append((xt, h, z, r, s, hc))
        h = (1.0 - z) * h + z * hc
        h_seq[:, i] = h
    out = h_seq[:, ::-1] if reverse else h_seq
    return out, (steps, x.shape, reverse)


def gru_sequence_backward(p: GruParams, cache, dh_seq: np.ndarray):
    """BPTT over all steps. Returns (dx (b,T,d), GruParams gradients)."""
    steps, x_shape, reverse = cache
    n = p.units
    dh_seq = as_f64(dh_seq)
    ds_seq = dh_seq[:, ::-1] if reverse else dh_seq
    dW_in = np.zeros_like(p.W_in)
    dW_rec = np.zeros_like(p.W_rec)
    db_in = np.zeros_like(p.b_in)
    db_rec = np.zeros_like(p.b_rec)
    dx = np.empty(x_shape)  # filled in recurrence order, un-reversed at the end
    dh = np.zeros((x_shape[0], n))
    for i in range(len(steps) - 1, -1, -1):
        xt, h_prev, z, r, s, hc = steps[i]
        dh = dh + ds_seq[:, i]
        dz = dh * (hc - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)
        dah = dhc * (1.0 - hc * hc)
        dr = dah * s
        ds = dah * r
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        da_in = np.concatenate([daz, dar, dah], axis=1)
        da_rec = np.concatenate([daz, dar, ds], axis=1)
        dW_in += xt.T @ da_in
        db_in += da_in.sum(axis=0)
        dW_rec += h_prev.T @ da_rec
        db_rec += da_rec.sum(axis=0)
        dx[:, i] = da_in @ p.W_in.T
        dh = dh_prev + da_rec @ p.W_rec.T
    if reverse:
        dx = dx[:, ::-1]
    grads = GruParams(W_in=dW_in, W_rec=dW_rec, b_in=db_in, b_rec=db_rec)
    return dx, grads


def bigru_forward(p_fwd: GruParams, p_bwd: GruParams, x: np.ndarray):
    """Concatenation [forward || backward-in-time], output width 2n."""
    if p_fwd.W_in.shape != p_bwd.W_in.shape or p_fwd.W_rec.shape != p_bwd.W_rec.shape:
        raise ShapeError("bigru: direction parameter shapes disagree")
    h_f, cache_f = gru_sequence_forward(p_fwd, x, reverse=False)
    h_b, cache_b = gru_sequence_forward(p_bwd, x, reverse=True)
    return np.concatenate([h_f, h_b], axis=-1), (cache_f, cache_b, p_fwd.units)


def bigru_backward(p_fwd: GruParams, p_bwd: GruParams, cache, dy: np.ndarray):
    cache_f, cache_b, n = cache
    dy = as_f64(dy)
    dx_f, g_fwd = gru_sequence_backward(p_fwd, cache_f, dy[..., :n])
    dx_b, g_bwd = gru_sequence_backward(p_bwd, cache_b, dy[..., n:])
    return dx_f + dx_b, g_fwd, g_bwd


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def lstm_sequence_forward(p: LstmParams, x: np.ndarray):
    """LSTM over a full sequence, zero initial hidden and cell states.

    x (b, T, d) -> h_seq (b, T, n). Gates i, f, g, o along the 4n axis;
    c' = f*c + i*g, h' = o*tanh(c').
    """
    x = as_f64(x)
    if x.ndim != 3 or x.shape[2] != p.W_in.shape[0]:
        raise ShapeError(f"lstm: input {x.shape} does not match kernel {p.W_in.shape}")
    n = p.units
    b, t, _ = x.shape
    h = np.zeros((b, n))
    c = np.zeros((b, n))
    h_seq = np.empty((b, t, n))
    steps = []
    for idx in range(t):
        xt = x[:, idx]
        a = xt @ p.W_in
        a += h @ p.W_rec
        a += p.b
        i = sigmoid(a[:, :n])
        f = sigmoid(a[:, n:2 * n])
        g = np.tanh(a[:, 2 * n:3 * n])
        o = sigmoid(a[:, 3 * n:])
        c_new = f * c + i * g
        steps.append((xt, h, c, i, f, g, o, c_new))
        c = c_new
        h = o * np.tanh(c)
        h_seq[:, idx] = h
    return h_seq, (steps, x.shape)


def lstm_sequence_backward(p: LstmParams, cache, dh_seq: np.ndarray):
    steps, x_shape = cache
    n = p.units
    dh_seq = as_f64(dh_seq)
    dW_in = np.zeros_like(p.W_in)
    dW_rec = np.zeros_like(p.W_rec)
    db = np.zeros_like(p.b)
    dx = np.empty(x_shape)
    dh = np.zeros((x_shape[0], n))
    dc = np.zeros((x_shape[0], n))
    for idx in range(len(steps) - 1, -1, -1):
        xt, h_prev, c_prev, i, f, g, o, c = steps[idx]
        dh = dh + dh_seq[:, idx]
        tc = np.tanh(c)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc = dc * f  # carries to c_{t-1}
        da = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dW_in += xt.T @ da
        dW_rec += h_prev.T @ da
        db += da.sum(axis=0)
        dx[:, idx] = da @ p.W_in.T
        dh = da @ p.W_rec.T
    return dx, LstmParams(W_in=dW_in, W_rec=dW_rec, b=db)


def lstm_last_forward(p: LstmParams, x: np.ndarray):
    """Sequence LSTM returning only the final hidden state: (b, T, d) -> (b, n)."""
    h_seq, cache = lstm_sequence_forward(p, x)
    return h_seq[:, -1], (cache, h_seq.shape)


def lstm_last_backward(p: LstmParams, cache, dy: np.ndarray):
    inner, seq_shape = cache
    dh_seq = np.zeros(seq_shape)
    dh_seq[:, -1] = as_f64(dy)
    return lstm_sequence_backward(p, inner, dh_seq)


# ---------------------------------------------------------------------------
# multi-head self-attention
# ---------------------------------------------------------------------------

def mha_self_forward(p: MhaParams, x: np.ndarray, heads: int, d_k: int):
    """Self-attention: per head A = softmax(Q K^T / sqrt(d_k)), head = A V;
    heads concatenated then projected back to d_model. No mask, no
    positional encoding. x (b, T, d_model) -> (b, T, d_model)."""
    x = as_f64(x)
    if x.ndim != 3 or x.shape[2] != p.Wq.shape[0]:
        raise ShapeError(f"mha: input {x.shape} does not match projections {p.Wq.shape}")
    if heads * d_k != p.Wq.shape[1]:
        raise ShapeError(f"mha: heads*d_k = {heads * d_k} != projection width {p.Wq.shape[1]}")
    b, t, d_model = x.shape
    x2 = x.reshape(b * t, d_model)  # one GEMM per projection, not b small ones

    def project(w, bias):  # (b*T, d) @ (d, h*dk) + bias -> (b, h, T, dk)
        m = x2 @ w
        m += bias
        return m.reshape(b, t, heads, d_k).transpose(0, 2, 1, 3)

    q = project(p.Wq, p.bq)
    k = project(p.Wk, p.bk)
    v = project(p.Wv, p.bv)
    scores = np.matmul(q, k.transpose(0, 1, 3, 2))
    scores *= 1.0 / np.sqrt(d_k)                            # (b, h, T, T)
    attn = softmax_rows(scores)
    heads_out = np.matmul(attn, v)                          # (b, h, T, dk)
    ccat = heads_out.transpose(0, 2, 1, 3).reshape(b * t, heads * d_k)
    y = ccat @ p.Wo
    y += p.bo
    return y.reshape(b, t, d_model), (x, q, k, v, attn, ccat, heads, d_k)


def mha_self_backward(p: MhaParams, cache, dy: np.ndarray):
    x, q, k, v, attn, ccat, heads, d_k = cache
    b, t, d_model = x.shape
    dy = as_f64(dy)
    dy2 = dy.reshape(b * t, d_model)
    dWo = ccat.T @ dy2
    dbo = dy2.sum(axis=0)
    dccat = (dy2 @ p.Wo.T).reshape(b, t, heads, d_k).transpose(0, 2, 1, 3)

    dattn = np.matmul(dccat, v.transpose(0, 1, 3, 2))       # (b, h, T, T)
    dv = np.matmul(attn.transpose(0, 1, 3, 2), dccat)
    dattn -= (dattn * attn).sum(axis=-1, keepdims=True)     # softmax Jacobian, in place
    dattn *= attn
    dattn *= 1.0 / np.sqrt(d_k)
    dq = np.matmul(dattn, k)
    dk_ = np.matmul(dattn.transpose(0, 1, 3, 2), q)

    def merge(m):  # (b, h, T, dk) -> (b*T, h*dk)
        return m.transpose(0, 2, 1, 3).reshape(b * t, heads * d_k)

    x2 = x.reshape(b * t, d_model)
    dq2, dk2, dv2 = merge(dq), merge(dk_), merge(dv)
    grads = MhaParams(
        Wq=x2.T @ dq2, bq=dq2.sum(axis=0),
        Wk=x2.T @ dk2, bk=dk2.sum(axis=0),
        Wv=x2.T @ dv2, bv=dv2.sum(axis=0),
        Wo=dWo, bo=dbo,
    )
    dx = dq2 @ p.Wq.T
    dx += dk2 @ p.Wk.T
    dx += dv2 @ p.Wv.T
    return dx.reshape(b, t, d_model), grads
