"""Transformer U-Net noise predictor over the one-dimensional denoiser
input, plus the ablation variants that swap its blocks and skips.

A level of width W is viewed as (W / token_channels) tokens of
token_channels each; its block attends over that sequence. The encoder
halves the width per level, the decoder mirrors back up, and skip
connections splice encoder activations into the decoder according to
skip_mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, ShapeMismatchError
from .nn.layers import Linear, MlpBlock, TransformerBlock, gelu, gelu_backward
from .nn.params import ParamStore

SKIP_MODES = ("concat", "residual", "none")
BLOCK_KINDS = ("transformer", "mlp")


@dataclass(frozen=True)
class DenoiserConfig:
    cond_dim: int = 1536
    pose_embed_dim: int = 512
    pose_dim: int = 15
    token_channels: int = 32
    heads: int = 16
    skip_mode: str = "concat"
    block_kind: str = "transformer"
    level_dims: tuple = field(default=None)

    def __post_init__(self):
        if self.skip_mode not in SKIP_MODES:
            raise InvalidConfigError(f"unknown skip_mode {self.skip_mode!r}")
        if self.block_kind not in BLOCK_KINDS:
            raise InvalidConfigError(f"unknown block_kind {self.block_kind!r}")
        if self.level_dims is None:
            d = self.in_dim
            object.__setattr__(self, "level_dims", (d, d // 2, d // 4))
        else:
            object.__setattr__(self, "level_dims", tuple(self.level_dims))
        dims = self.level_dims
        if dims[0] != self.in_dim:
            raise InvalidConfigError(
                f"first level {dims[0]} must equal in_dim {self.in_dim}")
        if any(a <= b for a, b in zip(dims, dims[1:])):
            raise InvalidConfigError(f"level dims must strictly decrease: {dims}")
        for d in dims:
            if d % self.token_channels != 0:
                raise InvalidConfigError(
                    f"level width {d} not divisible by "
                    f"token_channels {self.token_channels}")

    @property
    def in_dim(self) -> int:
        return self.cond_dim + self.pose_embed_dim

    @property
    def effective_heads(self) -> int:
        """Largest head count <= heads dividing the per-token width."""
        h = min(self.heads, self.token_channels)
        while self.token_channels % h != 0:
            h -= 1
        return h

    def to_dict(self) -> dict:
        return {"cond_dim": self.cond_dim, "pose_embed_dim": self.pose_embed_dim,
                "pose_dim": self.pose_dim, "token_channels": self.token_channels,
                "heads": self.heads, "skip_mode": self.skip_mode,
                "block_kind": self.block_kind, "level_dims": list(self.level_dims)}

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        allowed = {"cond_dim", "pose_embed_dim", "pose_dim", "token_channels",
                   "heads", "skip_mode", "block_kind", "level_dims"}
        for key in d:
            if key not in allowed:
                raise InvalidConfigError(f"unknown denoiser config key {key!r}")
        d = dict(d)
        if "level_dims" in d and d["level_dims"] is not None:
            d["level_dims"] = tuple(d["level_dims"])
        return DenoiserConfig(**d)


class PoseEmbed:
    """2-layer MLP lifting the 15-dim pose vector to the feature width."""

    def __init__(self, store: ParamStore, name: str, cfg: DenoiserConfig):
        hidden = cfg.pose_embed_dim // 2
        self.pose_dim = cfg.pose_dim
        self.fc1 = Linear(store, f"{name}.fc1", cfg.pose_dim, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, cfg.pose_embed_dim)

    def forward(self, p):
        if p.shape[-1] != self.pose_dim:
            raise ShapeMismatchError(f"pose vector {p.shape} vs {self.pose_dim}")
        h, c1 = self.fc1.forward(p)
        g = gelu(h)
        y, c2 = self.fc2.forward(g)
        return y, (c1, h, c2)

    def backward(self, dy, cache):
        c1, h, c2 = cache
        dg = self.fc2.backward(dy, c2)
        dh = gelu_backward(dg, h)
        return self.fc1.backward(dh, c1)


def concat_input(c_d: np.ndarray, c_p: np.ndarray) -> np.ndarray:
    """Denoiser input I_c = [c_d | c_p]."""
    if c_d.ndim != c_p.ndim or c_d.shape[:-1] != c_p.shape[:-1]:
        raise ShapeMismatchError(f"c_d {c_d.shape} vs c_p {c_p.shape}")
    return np.concatenate([c_d, c_p], axis=-1)


class _LevelBlock:
    """Width-preserving block run over the level's token layout."""

    def __init__(self, store, name, width, cfg: DenoiserConfig):
        self.tokens = width // cfg.token_channels
        self.channels = cfg.token_channels
        if cfg.block_kind == "transformer":
            self.block = TransformerBlock(store, name, cfg.token_channels,
                                          cfg.effective_heads)
        else:
            self.block = MlpBlock(store, name, cfg.token_channels)

    def forward(self, x):
        tok = x.reshape(x.shape[0], self.tokens, self.channels)
        y, cache = self.block.forward(tok)
        return y.reshape(x.shape), cache

    def backward(self, dy, cache):
        tok = dy.reshape(dy.shape[0], self.tokens, self.channels)
        dx = self.block.backward(tok, cache)
        return dx.reshape(dy.shape)


class Denoiser:
    """U-shaped noise predictor: I_c -> eps_hat (15 dims).

    The final head starts at zero, so an untrained model predicts zero
    noise and the initial loss sits at the noise's own second moment.
    """

    def __init__(self, store: ParamStore, cfg: DenoiserConfig, name: str = "den"):
        self.cfg = cfg
        dims = cfg.level_dims
        self.pose_embed = PoseEmbed(store, f"{name}.pose", cfg)
        self.enc_proj = [Linear(store, f"{name}.enc{i}", dims[i], dims[i + 1])
                         for i in range(len(dims) - 1)]
        self.enc_block = [_LevelBlock(store, f"{name}.encblk{i}", dims[i + 1], cfg)
                          for i in range(len(dims) - 1)]
        self.dec_proj = []
        self.dec_block = []
        for i in range(len(dims) - 2, -1, -1):
            d_in, d_out = dims[i + 1], dims[i]
            if cfg.skip_mode == "concat":
                d_in = d_in + d_out if i > 0 else d_in + dims[0]
            self.dec_proj.append(Linear(store, f"{name}.dec{i}", d_in, d_out))
            self.dec_block.append(_LevelBlock(store, f"{name}.decblk{i}", d_out, cfg))
        self.head = Linear(store, f"{name}.head", dims[0], cfg.pose_dim,
                           zero_init=True)

    def predict_eps(self, I_c):
        if I_c.ndim != 2 or I_c.shape[1] != self.cfg.in_dim:
            raise ShapeMismatchError(
                f"I_c {I_c.shape} vs expected (B, {self.cfg.in_dim})")
        skips = [I_c]
        h = I_c
        enc_caches = []
        for proj, block in zip(self.enc_proj, self.enc_block):
            h, c_p = proj.forward(h)
            h, c_b = block.forward(h)
            enc_caches.append((c_p, c_b))
            skips.append(h)
        skips.pop()  # bottleneck is not its own skip
        dec_caches = []
        for proj, block in zip(self.dec_proj, self.dec_block):
            skip = skips.pop()
            mode = self.cfg.skip_mode
            if mode == "concat":
                h_in = np.concatenate([h, skip], axis=-1)
                h, c_p = proj.forward(h_in)
            else:
                h, c_p = proj.forward(h)
                if mode == "residual":
                    h = h + skip
            h, c_b = block.forward(h)
            dec_caches.append((c_p, c_b))
        eps_hat, c_head = self.head.forward(h)
        return eps_hat, (enc_caches, dec_caches, c_head)

    def backward(self, d_eps, cache):
        enc_caches, dec_caches, c_head = cache
        dims = self.cfg.level_dims
        mode = self.cfg.skip_mode
        dh = self.head.backward(d_eps, c_head)
        # walk decoder stages in reverse application order; stage j took
        # [h from width dims[j+1] | skip of width dims[j]]
        dskips = []
        for j, (proj, block) in enumerate(
                zip(reversed(self.dec_proj), reversed(self.dec_block))):
            c_p, c_b = dec_caches[len(dec_caches) - 1 - j]
            dh = block.backward(dh, c_b)
            if mode == "concat":
                d_in = proj.backward(dh, c_p)
                keep = dims[j + 1]
                dh, dskip = d_in[:, :keep], d_in[:, keep:]
            elif mode == "residual":
                dskip = dh
                dh = proj.backward(dh, c_p)
            else:
                dskip = None
                dh = proj.backward(dh, c_p)
            dskips.append(dskip)  # dskips[j] pairs with encoder level j
        for i in range(len(self.enc_proj) - 1, -1, -1):
            c_p, c_b = enc_caches[i]
            if i + 1 < len(self.enc_proj) and mode != "none":
                dh = dh + dskips[i + 1]
            dh = self.enc_block[i].backward(dh, c_b)
            dh = self.enc_proj[i].backward(dh, c_p)
        if mode != "none":
            return dskips[0] + dh
        return dh


def build_variant(store: ParamStore, cfg: DenoiserConfig, name: str = "den"):
    """Instantiate the requested architecture variant; returns the model
    and its parameter count."""
    before = store.n_params
    model = Denoiser(store, cfg, name=name)
    return model, store.n_params - before
