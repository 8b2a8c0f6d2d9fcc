"""Layer forward/backward passes.

Every forward returns (output, cache); the matching backward consumes the
cache and returns input gradients, accumulating parameter gradients into
the owning ParamStore. Caches are read-only after creation, so modules
sharing one store can run forward passes concurrently.
"""

from __future__ import annotations

import numpy as np

from ..errors import ImageTooSmallError, ShapeMismatchError
from .params import ParamStore

_DEBUG_NAN = False


def set_debug_nan(enabled: bool) -> None:
    """Make every layer output assert finiteness (slow; for debugging)."""
    global _DEBUG_NAN
    _DEBUG_NAN = bool(enabled)


def _check_finite(arr, label):
    if _DEBUG_NAN and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {label}")
    return arr


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x W + b over the last axis."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatchError(f"linear: x {x.shape} vs W {W.shape}")
    return _check_finite(x @ W + b, "linear")


def linear_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Gradients of linear: returns (dx, dW, db)."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dW = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ W.T
    return dx, dW, db


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax: max subtraction makes it exactly shift-invariant."""
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - np.sum(dy * y, axis=axis, keepdims=True))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = 1e-8):
    """Per-token normalization over the last axis, then affine.

    eps is only a divide-by-zero guard; it is kept tiny so the normalized
    variance stays within 1e-6 of 1.
    """
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma + beta
    return _check_finite(y, "layer_norm"), (xhat, inv, gamma)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, gamma = cache
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv
    dgamma = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dgamma, dbeta


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form gaussian error linear unit."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


# ---------------------------------------------------------------------------
# parameterized modules
# ---------------------------------------------------------------------------

class Linear:
    """Dense layer bound to named parameters in a store."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 zero_init: bool = False):
        self.store = store
        self.w_name = f"{name}.w"
        self.b_name = f"{name}.b"
        # fan-in scaling: constant-std init shrinks activations by
        # ~std*sqrt(d_in) per layer and starves deep ladders of signal
        store.add(self.w_name, (d_in, d_out),
                  init="zeros" if zero_init else "trunc_normal",
                  std=(2.0 / d_in) ** 0.5)
        store.add(self.b_name, (d_out,), init="zeros")

    def forward(self, x):
        W = self.store[self.w_name]
        y = linear(x, W, self.store[self.b_name])
        return y, (x, W)

    def backward(self, dy, cache):
        x, W = cache
        dx, dW, db = linear_backward(dy, x, W)
        self.store.accumulate(self.w_name, dW.astype(self.store.dtype))
        self.store.accumulate(self.b_name, db.astype(self.store.dtype))
        return dx


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-8):
        self.store = store
        self.g_name = f"{name}.gamma"
        self.b_name = f"{name}.beta"
        self.eps = eps
        store.add(self.g_name, (dim,), init="ones")
        store.add(self.b_name, (dim,), init="zeros")

    def forward(self, x):
        return layer_norm(x, self.store[self.g_name], self.store[self.b_name],
                          self.eps)

    def backward(self, dy, cache):
        dx, dgamma, dbeta = layer_norm_backward(dy, cache)
        self.store.accumulate(self.g_name, dgamma.astype(self.store.dtype))
        self.store.accumulate(self.b_name, dbeta.astype(self.store.dtype))
        return dx


class MultiHeadAttention:
    """Scaled dot-product attention over (B, T, D) token sequences.

    Query tokens may come from a different sequence than key/value tokens,
    so the same module serves both self- and cross-attention. Heads are
    concatenated and passed through a final dense layer.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 zero_init_out: bool = True):
        if dim % heads != 0:
            raise ShapeMismatchError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.store = store
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", dim, dim)
        self.v = Linear(store, f"{name}.v", dim, dim)
        self.out = Linear(store, f"{name}.out", dim, dim, zero_init=zero_init_out)

    def _split(self, x):
        B, T, _ = x.shape
        return x.reshape(B, T, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, H, T, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, H * d)

    def forward(self, x_q, x_kv):
        if x_q.ndim != 3 or x_kv.ndim != 3:
            raise ShapeMismatchError("attention expects (B, T, D) inputs")
        if x_q.shape[-1] != self.dim or x_kv.shape[-1] != self.dim:
            raise ShapeMismatchError(
                f"attention dim {self.dim} vs inputs {x_q.shape}, {x_kv.shape}")
        Q, cq = self.q.forward(x_q)
        K, ck = self.k.forward(x_kv)
        V, cv = self.v.forward(x_kv)
        Qh, Kh, Vh = self._split(Q), self._split(K), self._split(V)
        scores = Qh @ Kh.transpose(0, 1, 3, 2) / np.sqrt(self.head_dim)
        A = softmax(scores, axis=-1)
        ctx = self._merge(A @ Vh)
        y, cout = self.out.forward(ctx)
        return _check_finite(y, "mha"), (cq, ck, cv, cout, Qh, Kh, Vh, A)

    def backward(self, dy, cache):
        cq, ck, cv, cout, Qh, Kh, Vh, A = cache
        dctx = self.out.backward(dy, cout)
        dctxh = self._split(dctx)
        dA = dctxh @ Vh.transpose(0, 1, 3, 2)
        dVh = A.transpose(0, 1, 3, 2) @ dctxh
        dscores = softmax_backward(dA, A)
        scale = 1.0 / np.sqrt(self.head_dim)
        dQh = dscores @ Kh * scale
        dKh = dscores.transpose(0, 1, 3, 2) @ Qh * scale
        dx_q = self.q.backward(self._merge(dQh), cq)
        dx_kv = self.k.backward(self._merge(dKh), ck)
        dx_kv = dx_kv + self.v.backward(self._merge(dVh), cv)
        return dx_q, dx_kv


class TransformerBlock:
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)), GELU MLP x4.

    Output projections start at zero, so a fresh block is the identity.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 mlp_ratio: int = 4):
        hidden = dim * mlp_ratio
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.fc1 = Linear(store, f"{name}.fc1", dim, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, dim, zero_init=True)

    def forward(self, x):
        n1, c_ln1 = self.ln1.forward(x)
        a, c_attn = self.attn.forward(n1, n1)
        h = x + a
        n2, c_ln2 = self.ln2.forward(h)
        m, c_fc1 = self.fc1.forward(n2)
        g = gelu(m)
        o, c_fc2 = self.fc2.forward(g)
        y = h + o
        return y, (c_ln1, c_attn, c_ln2, c_fc1, m, c_fc2)

    def backward(self, dy, cache):
        c_ln1, c_attn, c_ln2, c_fc1, m, c_fc2 = cache
        dg = self.fc2.backward(dy, c_fc2)
        dm = gelu_backward(dg, m)
        dn2 = self.fc1.backward(dm, c_fc1)
        dh = dy + self.ln2.backward(dn2, c_ln2)
        dq, dkv = self.attn.backward(dh, c_attn)
        dx = dh + self.ln1.backward(dq + dkv, c_ln1)
        return dx


class MlpBlock:
    """Attention-free variant of the block: x + MLP(LN(x)), per token."""

    def __init__(self, store: ParamStore, name: str, dim: int, mlp_ratio: int = 4):
        hidden = dim * mlp_ratio
        self.ln = LayerNorm(store, f"{name}.ln", dim)
        self.fc1 = Linear(store, f"{name}.fc1", dim, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, dim, zero_init=True)

    def forward(self, x):
        n, c_ln = self.ln.forward(x)
        m, c_fc1 = self.fc1.forward(n)
        g = gelu(m)
        o, c_fc2 = self.fc2.forward(g)
        return x + o, (c_ln, c_fc1, m, c_fc2)

    def backward(self, dy, cache):
        c_ln, c_fc1, m, c_fc2 = cache
        dg = self.fc2.backward(dy, c_fc2)
        dm = gelu_backward(dg, m)
        dn = self.fc1.backward(dm, c_fc1)
        return dy + self.ln.backward(dn, c_ln)


class Conv2d:
    """Strided 2D convolution on (B, C, H, W) via patch gathering."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int = 3, stride: int = 1, pad: int = 0):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.store = store
        self.w_name = f"{name}.w"
        self.b_name = f"{name}.b"
        store.add(self.w_name, (c_out, c_in, kernel, kernel),
                  std=(2.0 / (c_in * kernel * kernel)) ** 0.5)
        store.add(self.b_name, (c_out,), init="zeros")

    def _out_size(self, H, W):
        k, s, p = self.kernel, self.stride, self.pad
        Ho = (H + 2 * p - k) // s + 1
        Wo = (W + 2 * p - k) // s + 1
        if Ho < 1 or Wo < 1:
            raise ImageTooSmallError(
                f"{H}x{W} input too small for kernel {k} stride {s}")
        return Ho, Wo

    def _gather(self, xp, Ho, Wo):
        B, C = xp.shape[:2]
        k, s = self.kernel, self.stride
        cols = np.empty((B, C, k, k, Ho, Wo), dtype=xp.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
        return cols.reshape(B, C * k * k, Ho * Wo)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatchError(
                f"conv expects (B, {self.c_in}, H, W), got {x.shape}")
        B, _, H, W = x.shape
        Ho, Wo = self._out_size(H, W)
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = self._gather(xp, Ho, Wo)
        Wm = self.store[self.w_name].reshape(self.c_out, -1)
        y = (Wm @ cols) + self.store[self.b_name][:, None]
        y = y.reshape(B, self.c_out, Ho, Wo)
        return _check_finite(y, "conv2d"), (cols, xp.shape, (Ho, Wo))

    def backward(self, dy, cache):
        cols, xp_shape, (Ho, Wo) = cache
        B = dy.shape[0]
        k, s, p = self.kernel, self.stride, self.pad
        dy2 = dy.reshape(B, self.c_out, Ho * Wo)
        Wm = self.store[self.w_name].reshape(self.c_out, -1)
        dW = np.einsum("bot,bct->oc", dy2, cols).reshape(
            self.store[self.w_name].shape)
        db = dy2.sum(axis=(0, 2))
        dcols = (Wm.T @ dy2).reshape(B, self.c_in, k, k, Ho, Wo)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, :, i, j]
        self.store.accumulate(self.w_name, dW.astype(self.store.dtype))
        self.store.accumulate(self.b_name, db.astype(self.store.dtype))
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp
