"""Condition encoders: time-step embedding, image and point-cloud global
features, and the attention fusion that mixes the two modalities.

Most widths scale off a single feature dimension (default 512) so tests can
run the same architecture at toy size: the sinusoid uses feat/4 dims and the
image stack runs feat/16 -> feat/8 -> feat/4 -> feat. The point MLP keeps
fixed hidden widths, 3 -> 64 -> 128 -> feat (see PointEncoder for why).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ImageTooSmallError,
    InvalidConfigError,
    ShapeMismatchError,
    StepOutOfRangeError,
    WrongPointCountError,
)
from .nn.layers import (
    Conv2d,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    gelu,
    gelu_backward,
    relu,
    relu_backward,
)
from .nn.params import ParamStore


@dataclass(frozen=True)
class ConditionConfig:
    feat_dim: int = 512
    point_count: int = 1024
    min_image_size: int = 32
    heads: int = 16
    use_fusion: bool = True
    use_timestep: bool = True
    multi_token: bool = False
    token_channels: int = 32

    def __post_init__(self):
        if self.feat_dim % 16 != 0:
            raise InvalidConfigError(f"feat_dim {self.feat_dim} not divisible by 16")
        if self.multi_token and self.feat_dim % self.token_channels != 0:
            raise InvalidConfigError(
                f"feat_dim {self.feat_dim} not divisible by "
                f"token_channels {self.token_channels}")

    @property
    def cond_dim(self) -> int:
        """Length of the assembled condition vector."""
        return (3 if self.use_timestep else 2) * self.feat_dim


def timestep_features(t, dim: int, T: int) -> np.ndarray:
    """Sinusoidal features of the raw step index over a geometric
    frequency ladder (periods from 2*pi up to 2*pi*10^4)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t < 1) or np.any(t > T):
        raise StepOutOfRangeError(f"step {t} outside [1, {T}]")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class TimestepEncoder:
    """Sinusoid ladder followed by a 2-layer MLP to the feature width."""

    def __init__(self, store: ParamStore, name: str, cfg: ConditionConfig, T: int):
        self.T = T
        self.sin_dim = cfg.feat_dim // 4
        self.fc1 = Linear(store, f"{name}.fc1", self.sin_dim, cfg.feat_dim)
        self.fc2 = Linear(store, f"{name}.fc2", cfg.feat_dim, cfg.feat_dim)

    def forward(self, t):
        feats = timestep_features(t, self.sin_dim, self.T)
        h, c1 = self.fc1.forward(feats)
        g = gelu(h)
        y, c2 = self.fc2.forward(g)
        return y, (c1, h, c2)

    def backward(self, dy, cache):
        c1, h, c2 = cache
        dg = self.fc2.backward(dy, c2)
        dh = gelu_backward(dg, h)
        self.fc1.backward(dh, c1)  # step index itself has no gradient


class ImageEncoder:
    """Four stride-2 conv blocks with ReLU, then global average pooling.

    Accepts (B, H, W, 3) images, or a precomputed (B, feat) vector which
    passes through untouched.
    """

    def __init__(self, store: ParamStore, name: str, cfg: ConditionConfig):
        f = cfg.feat_dim
        self.feat_dim = f
        self.min_size = cfg.min_image_size
        chans = [3, f // 16, f // 8, f // 4, f]
        self.convs = [Conv2d(store, f"{name}.conv{i}", chans[i], chans[i + 1],
                             kernel=3, stride=2, pad=1)
                      for i in range(4)]

    def forward(self, x):
        if x.ndim == 2 and x.shape[1] == self.feat_dim:
            return x, None  # precomputed-feature passthrough
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ShapeMismatchError(f"expected (B, H, W, 3) image, got {x.shape}")
        if min(x.shape[1], x.shape[2]) < self.min_size:
            raise ImageTooSmallError(
                f"image {x.shape[1]}x{x.shape[2]} below {self.min_size} px")
        h = x.transpose(0, 3, 1, 2)
        caches = []
        for conv in self.convs:
            h, c_conv = conv.forward(h)
            caches.append((c_conv, h))
            h = relu(h)
        pooled = h.mean(axis=(2, 3))
        return pooled, (caches, h.shape)

    def backward(self, dy, cache):
        if cache is None:
            return dy  # passthrough mode
        caches, last_shape = cache
        B, C, H, W = last_shape
        dh = np.broadcast_to(dy[:, :, None, None] / (H * W), last_shape)
        for conv, (c_conv, pre) in zip(reversed(self.convs), reversed(caches)):
            dh = conv.backward(relu_backward(dh, pre), c_conv)
        return dh.transpose(0, 2, 3, 1)


class PointEncoder:
    """Shared per-point MLP with coordinate-wise max pooling.

    Points stay in raw camera coordinates: the cloud's absolute location
    is the translation evidence and must reach the feature.

    The hidden widths stay at 64/128 regardless of the pooled width: the
    first layer's row count is the number of support directions the pool
    can see, and orientation resolution degrades quickly below ~64 of
    them. Only the output width follows feat_dim.
    """

    def __init__(self, store: ParamStore, name: str, cfg: ConditionConfig):
        f = cfg.feat_dim
        self.point_count = cfg.point_count
        self.fc1 = Linear(store, f"{name}.fc1", 3, 64)
        self.fc2 = Linear(store, f"{name}.fc2", 64, 128)
        self.fc3 = Linear(store, f"{name}.fc3", 128, f)

    def forward(self, pts):
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ShapeMismatchError(f"expected (B, N, 3) points, got {pts.shape}")
        if pts.shape[1] != self.point_count:
            raise WrongPointCountError(
                f"{pts.shape[1]} points, configured {self.point_count}")
        h1, c1 = self.fc1.forward(pts)
        a1 = relu(h1)
        h2, c2 = self.fc2.forward(a1)
        a2 = relu(h2)
        h3, c3 = self.fc3.forward(a2)
        arg = np.argmax(h3, axis=1)
        pooled = np.take_along_axis(h3, arg[:, None, :], axis=1)[:, 0, :]
        return pooled, (c1, h1, c2, h2, c3, arg, h3.shape)

    def backward(self, dy, cache):
        c1, h1, c2, h2, c3, arg, h3_shape = cache
        dh3 = np.zeros(h3_shape, dtype=dy.dtype)
        np.put_along_axis(dh3, arg[:, None, :], dy[:, None, :], axis=1)
        da2 = self.fc3.backward(dh3, c3)
        dh2 = relu_backward(da2, h2)
        da1 = self.fc2.backward(dh2, c2)
        dh1 = relu_backward(da1, h1)
        return self.fc1.backward(dh1, c1)


class CrossBlock:
    """Pre-norm cross-attention block: q + MHA(LN(q), LN(kv)), then the
    usual MLP residual."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 mlp_ratio: int = 4):
        self.ln_q = LayerNorm(store, f"{name}.ln_q", dim)
        self.ln_kv = LayerNorm(store, f"{name}.ln_kv", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.fc1 = Linear(store, f"{name}.fc1", dim, dim * mlp_ratio)
        self.fc2 = Linear(store, f"{name}.fc2", dim * mlp_ratio, dim, zero_init=True)

    def forward(self, x_q, x_kv):
        nq, c_lnq = self.ln_q.forward(x_q)
        nkv, c_lnkv = self.ln_kv.forward(x_kv)
        a, c_attn = self.attn.forward(nq, nkv)
        h = x_q + a
        n2, c_ln2 = self.ln2.forward(h)
        m, c_fc1 = self.fc1.forward(n2)
        g = gelu(m)
        o, c_fc2 = self.fc2.forward(g)
        return h + o, (c_lnq, c_lnkv, c_attn, c_ln2, c_fc1, m, c_fc2)

    def backward(self, dy, cache):
        c_lnq, c_lnkv, c_attn, c_ln2, c_fc1, m, c_fc2 = cache
        dg = self.fc2.backward(dy, c_fc2)
        dm = gelu_backward(dg, m)
        dn2 = self.fc1.backward(dm, c_fc1)
        dh = dy + self.ln2.backward(dn2, c_ln2)
        dnq, dnkv = self.attn.backward(dh, c_attn)
        dx_q = dh + self.ln_q.backward(dnq, c_lnq)
        dx_kv = self.ln_kv.backward(dnkv, c_lnkv)
        return dx_q, dx_kv


class FusionModule:
    """Self-attention over the image feature, then cross-attention where
    the point feature queries the fused image feature.

    Single-token mode treats each global vector as one token of width
    feat_dim. Multi-token mode reshapes it into (feat/token_channels)
    tokens so attention has a sequence to mix over.
    """

    def __init__(self, store: ParamStore, name: str, cfg: ConditionConfig):
        from .nn.layers import TransformerBlock
        self.cfg = cfg
        if cfg.multi_token:
            self.tokens = cfg.feat_dim // cfg.token_channels
            self.dim = cfg.token_channels
            self.heads = 1
        else:
            self.tokens = 1
            self.dim = cfg.feat_dim
            self.heads = cfg.heads
        if self.dim % self.heads != 0:
            raise InvalidConfigError(
                f"token width {self.dim} not divisible by {self.heads} heads")
        self.self_block = TransformerBlock(store, f"{name}.self", self.dim,
                                           self.heads)
        self.cross_block = CrossBlock(store, f"{name}.cross", self.dim,
                                      self.heads)

    def _to_tokens(self, x):
        return x.reshape(x.shape[0], self.tokens, self.dim)

    def _from_tokens(self, x):
        return x.reshape(x.shape[0], self.tokens * self.dim)

    def forward(self, f_rgb, f_point):
        if f_rgb.shape != f_point.shape or f_rgb.shape[-1] != self.cfg.feat_dim:
            raise ShapeMismatchError(
                f"features {f_rgb.shape} / {f_point.shape} vs "
                f"feat_dim {self.cfg.feat_dim}")
        if not self.cfg.use_fusion:
            return f_rgb, f_point, None
        rgb_tok = self._to_tokens(f_rgb)
        pt_tok = self._to_tokens(f_point)
        c_rgb_tok, c_self = self.self_block.forward(rgb_tok)
        c_pt_tok, c_cross = self.cross_block.forward(pt_tok, c_rgb_tok)
        return (self._from_tokens(c_rgb_tok), self._from_tokens(c_pt_tok),
                (c_self, c_cross))

    def backward(self, d_rgb, d_point, cache):
        if cache is None:
            return d_rgb, d_point
        c_self, c_cross = cache
        dq, dkv = self.cross_block.backward(self._to_tokens(d_point), c_cross)
        d_rgb_tok = self._to_tokens(d_rgb) + dkv
        d_rgb_in = self.self_block.backward(d_rgb_tok, c_self)
        return self._from_tokens(d_rgb_in), self._from_tokens(dq)


def assemble_condition(c_timestep, c_rgb, c_point, use_timestep: bool = True):
    """Ordered concatenation [c_timestep | c_rgb | c_point]; the time part
    is omitted entirely in the time-ablation mode."""
    if c_rgb.shape != c_point.shape:
        raise ShapeMismatchError(f"c_rgb {c_rgb.shape} vs c_point {c_point.shape}")
    if not use_timestep:
        return np.concatenate([c_rgb, c_point], axis=-1)
    if c_timestep.shape != c_rgb.shape:
        raise ShapeMismatchError(
            f"c_timestep {c_timestep.shape} vs c_rgb {c_rgb.shape}")
    return np.concatenate([c_timestep, c_rgb, c_point], axis=-1)


class ConditionEncoder:
    """All condition paths bundled behind one forward/backward pair."""

    def __init__(self, store: ParamStore, cfg: ConditionConfig, T: int):
        self.cfg = cfg
        self.time_enc = TimestepEncoder(store, "cond.time", cfg, T)
        self.img_enc = ImageEncoder(store, "cond.img", cfg)
        self.pt_enc = PointEncoder(store, "cond.pt", cfg)
        self.fusion = FusionModule(store, "cond.fuse", cfg)

    def forward(self, t, image, points):
        c_t, cache_t = (None, None)
        if self.cfg.use_timestep:
            c_t, cache_t = self.time_enc.forward(t)
        f_rgb, cache_img = self.img_enc.forward(image)
        f_pt, cache_pt = self.pt_enc.forward(points)
        c_rgb, c_point, cache_fuse = self.fusion.forward(f_rgb, f_pt)
        c_d = assemble_condition(c_t, c_rgb, c_point, self.cfg.use_timestep)
        return c_d, (cache_t, cache_img, cache_pt, cache_fuse)

    def backward(self, dc_d, cache):
        cache_t, cache_img, cache_pt, cache_fuse = cache
        f = self.cfg.feat_dim
        if self.cfg.use_timestep:
            dc_t, dc_rgb, dc_point = dc_d[:, :f], dc_d[:, f:2 * f], dc_d[:, 2 * f:]
            self.time_enc.backward(dc_t, cache_t)
        else:
            dc_rgb, dc_point = dc_d[:, :f], dc_d[:, f:]
        d_rgb, d_point = self.fusion.backward(dc_rgb, dc_point, cache_fuse)
        d_img = self.img_enc.backward(d_rgb, cache_img)
        d_pts = self.pt_enc.backward(d_point, cache_pt)
        return d_img, d_pts

    def encode_static(self, image, points):
        """The timestep-independent condition parts, for reuse across a
        whole reverse-diffusion trajectory."""
        f_rgb, _ = self.img_enc.forward(image)
        f_pt, _ = self.pt_enc.forward(points)
        c_rgb, c_point, _ = self.fusion.forward(f_rgb, f_pt)
        return c_rgb, c_point

    def condition_at(self, t, static):
        """Assemble c_d for timestep t from precomputed static parts."""
        c_rgb, c_point = static
        c_t = self.time_enc.forward(t)[0] if self.cfg.use_timestep else None
        return assemble_condition(c_t, c_rgb, c_point, self.cfg.use_timestep)
