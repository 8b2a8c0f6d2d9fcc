"""Training loop, reverse-diffusion pose sampling, and the regression baseline.

The diffusion model learns to predict the noise added to a standardized
15-dim pose vector, conditioned on the scene encoding c_d. The baseline
shares the exact same encoder and trunk but maps a fixed (zero) input
straight to the standardized pose, so the two differ only in what the
head's 15 outputs mean and how they are supervised.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .condenc import ConditionConfig, ConditionEncoder
from .data import corrupt_cloud
from .denoiser import Denoiser, DenoiserConfig
from .errors import (EmptyBatchError, InvalidCheckpointError,
                     InvalidConfigError)
from .geom import PointCloud, Pose9D, PoseStandardizer, canonical_yaw, downsample
from .nn import Adam, ParamStore, cyclic_lr, load_checkpoint, save_checkpoint
from .schedule import build_cosine_schedule, ddim_step, ddim_step_pairs, q_sample
from .shapes import SYMMETRIC

MODES = ("diffusion", "baseline")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to rebuild the model and its training loop."""

    # condition encoder
    feat_dim: int = 512
    point_count: int = 1024
    image_size: int = 32
    heads: int = 16
    use_fusion: bool = True
    use_timestep: bool = True
    multi_token: bool = False
    token_channels: int = 32
    # denoiser trunk
    pose_embed_dim: int = 512
    skip_mode: str = "concat"
    block_kind: str = "transformer"
    # diffusion
    timesteps: int = 1000
    ddim_steps: int = 50
    clip_x0: float = 3.0
    # optimization
    batch_size: int = 16
    lr_min: float = 1e-6
    lr_max: float = 1e-4
    lr_cycle: int = 20000
    # training-time sensor resampling: None, or a corruption profile name
    augment: str | None = None
    seed: int = 0

    def condition_config(self) -> ConditionConfig:
        return ConditionConfig(
            feat_dim=self.feat_dim, point_count=self.point_count,
            min_image_size=self.image_size, heads=self.heads,
            use_fusion=self.use_fusion, use_timestep=self.use_timestep,
            multi_token=self.multi_token, token_channels=self.token_channels)

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            cond_dim=self.condition_config().cond_dim,
            pose_embed_dim=self.pose_embed_dim,
            token_channels=self.token_channels, heads=self.heads,
            skip_mode=self.skip_mode, block_kind=self.block_kind)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(PipelineConfig)}
        for key in d:
            if key not in known:
                raise InvalidConfigError(f"unknown config key {key!r}")
        return PipelineConfig(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class DiffusionModel:
    """Condition encoder + denoiser sharing one parameter store."""

    def __init__(self, cfg: PipelineConfig, store: ParamStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore(seed=cfg.seed)
        self.cond = ConditionEncoder(self.store, cfg.condition_config(),
                                     T=cfg.timesteps)
        self.den = Denoiser(self.store, cfg.denoiser_config(), name="den")
        self.sched = build_cosine_schedule(cfg.timesteps)

    def forward(self, p_in, t, images, points):
        """eps_hat (or regressed pose vector) for a batch."""
        c_d, cache_c = self.cond.forward(t, images, points)
        c_p, cache_p = self.den.pose_embed.forward(p_in)
        I_c = np.concatenate([c_d, c_p], axis=-1)
        out, cache_d = self.den.predict_eps(I_c)
        return out, (cache_c, cache_p, cache_d, c_d.shape[1])

    def backward(self, dout, cache):
        cache_c, cache_p, cache_d, cond_dim = cache
        dI_c = self.den.backward(dout, cache_d)
        self.den.pose_embed.backward(dI_c[:, cond_dim:], cache_p)
        self.cond.backward(dI_c[:, :cond_dim], cache_c)


def _batch_arrays(batch):
    images = np.stack([s.image for s in batch]).astype(np.float64)
    points = np.stack([s.coarse_cloud.points for s in batch]).astype(np.float64)
    return images, points


def _observed_points(state: "TrainState", batch) -> np.ndarray:
    """Point clouds a training batch actually sees.

    With cfg.augment set, each scene's clean cloud gets a fresh sensor
    corruption and point draw instead of the stored one: the scenes stay
    fixed but no point pattern repeats, which stops the encoder from
    memorizing per-sample layouts instead of reading geometry.
    """
    if state.cfg.augment is None:
        return np.stack([s.coarse_cloud.points
                         for s in batch]).astype(np.float64)
    pts = []
    for s in batch:
        noisy = corrupt_cloud(state.rng, s.clean_cloud.points,
                              state.cfg.augment)
        cloud = downsample(PointCloud(noisy.astype(np.float32)),
                           state.cfg.point_count,
                           seed=int(state.rng.integers(2 ** 31)))
        pts.append(cloud.points)
    return np.stack(pts).astype(np.float64)


def fit_standardizer(samples) -> PoseStandardizer:
    """Center translations on the training set mean."""
    t_mean = np.mean([s.gt_pose.t for s in samples], axis=0)
    return PoseStandardizer(t_mean)


def target_pose(sample) -> Pose9D:
    """Supervision target: the ground-truth pose, with yaw-symmetric
    categories snapped to their canonical yaw so the target is unique
    rather than a circle of equally-correct rotations."""
    pose = sample.gt_pose
    if sample.category in SYMMETRIC:
        return Pose9D(pose.t, canonical_yaw(pose.R), pose.s)
    return pose


@dataclass
class TrainState:
    """Everything a resumable run owns; step counts optimizer updates."""

    cfg: PipelineConfig
    mode: str
    model: DiffusionModel
    opt: Adam
    standardizer: PoseStandardizer
    rng: np.random.Generator
    step: int = 0

    @staticmethod
    def init(cfg: PipelineConfig, standardizer: PoseStandardizer,
             mode: str = "diffusion") -> "TrainState":
        if mode not in MODES:
            raise InvalidConfigError(f"unknown mode {mode!r}")
        model = DiffusionModel(cfg)
        return TrainState(cfg=cfg, mode=mode, model=model,
                          opt=Adam(model.store),
                          standardizer=standardizer,
                          rng=np.random.default_rng(cfg.seed))

    def save(self, path) -> None:
        save_checkpoint(
            path, self.model.store, self.step, self.cfg.config_hash(),
            optimizer=self.opt.state_dict(),
            rng_state=self.rng.bit_generator.state,
            extra={"config": self.cfg.to_dict(), "mode": self.mode,
                   "standardizer": self.standardizer.to_dict()})

    @staticmethod
    def load(path) -> "TrainState":
        tensors, manifest = load_checkpoint(path)
        extra = manifest.get("extra") or {}
        if "config" not in extra:
            raise InvalidCheckpointError("checkpoint carries no config")
        cfg = PipelineConfig.from_dict(extra["config"])
        if cfg.config_hash() != manifest["config_hash"]:
            raise InvalidCheckpointError("config does not match its hash")
        state = TrainState.init(
            cfg, PoseStandardizer.from_dict(extra["standardizer"]),
            mode=extra.get("mode", "diffusion"))
        params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
        state.model.store.load_state(params)
        if manifest.get("optimizer") is not None:
            state.opt.load_state({
                "t": manifest["optimizer"]["t"],
                "m": {k[len("opt.m."):]: v for k, v in tensors.items()
                      if k.startswith("opt.m.")},
                "v": {k[len("opt.v."):]: v for k, v in tensors.items()
                      if k.startswith("opt.v.")}})
        if manifest.get("rng_state") is not None:
            state.rng.bit_generator.state = manifest["rng_state"]
        state.step = manifest["step"]
        return state


def train_step(state: TrainState, batch) -> float:
    """One optimizer update; returns the batch loss (per-entry MSE)."""
    if len(batch) == 0:
        raise EmptyBatchError("empty training batch")
    cfg, model = state.cfg, state.model
    B = len(batch)
    p0 = np.stack([state.standardizer.encode(target_pose(s)) for s in batch])
    images = np.stack([s.image for s in batch]).astype(np.float64)
    points = _observed_points(state, batch)
    if state.mode == "diffusion":
        t = state.rng.integers(1, cfg.timesteps + 1, size=B)
        eps = state.rng.standard_normal((B, 15))
        p_in = q_sample(p0, t, eps, model.sched)
        target = eps
    else:
        # baseline: constant inputs, head regresses the pose directly
        t = np.ones(B, dtype=int)
        p_in = np.zeros((B, 15))
        target = p0
    out, cache = model.forward(p_in, t, images, points)
    diff = out - target
    loss = float(np.mean(diff * diff))
    model.store.zero_grads()
    model.backward(2.0 * diff / diff.size, cache)
    lr = cyclic_lr(state.step, cfg.lr_min, cfg.lr_max, cfg.lr_cycle)
    state.opt.step(lr)
    state.step += 1
    return loss


def train_loop(state: TrainState, samples, n_steps: int,
               log_path=None) -> list[float]:
    """n_steps updates on random batches; optionally appends a JSONL log."""
    losses = []
    log = Path(log_path).open("a") if log_path is not None else None
    t0 = time.perf_counter()
    try:
        for _ in range(n_steps):
            idx = state.rng.choice(len(samples), size=state.cfg.batch_size,
                                   replace=len(samples) < state.cfg.batch_size)
            loss = train_step(state, [samples[i] for i in idx])
            losses.append(loss)
            if log is not None:
                log.write(json.dumps({
                    "step": state.step,
                    "lr": cyclic_lr(state.step - 1, state.cfg.lr_min,
                                    state.cfg.lr_max, state.cfg.lr_cycle),
                    "loss": loss,
                    "wall_time": round(time.perf_counter() - t0, 3)}) + "\n")
    finally:
        if log is not None:
            log.close()
    return losses


def oracle_eps_fn(p0_std: np.ndarray, sched):
    """The exact noise that q_sample would have used to reach p_t.

    Substituting this for the learned predictor makes the DDIM chain
    reconstruct p0_std regardless of training — a plumbing check.
    """
    p0_std = np.asarray(p0_std, dtype=np.float64)

    def fn(p_t, t):
        ab = sched.alpha_bar_at(t)
        return (p_t - np.sqrt(ab) * p0_std) / np.sqrt(1.0 - ab)

    return fn


def _sample_batch(state: TrainState, samples, n_steps, rng, eps_fn=None):
    """Reverse diffusion for a batch; returns (B, 15) standardized vectors."""
    cfg, model = state.cfg, state.model
    B = len(samples)
    if eps_fn is None:
        images, points = _batch_arrays(samples)
        static = model.cond.encode_static(images, points)
    p = rng.standard_normal((B, 15))
    for t, t_prev in ddim_step_pairs(cfg.timesteps, n_steps):
        if eps_fn is not None:
            eps_hat = eps_fn(p, t)
        else:
            c_d = model.cond.condition_at(np.full(B, t, dtype=int), static)
            c_p, _ = model.den.pose_embed.forward(p)
            eps_hat, _ = model.den.predict_eps(
                np.concatenate([c_d, c_p], axis=-1))
        if cfg.clip_x0 is not None:
            # standardized pose coordinates live in a bounded box; clamping
            # the pose estimate keeps the near-T steps (alpha_bar ~ 1e-9,
            # so the update divides the eps residual by ~2e4) from blowing
            # up the chain.  A no-op once predictions are in range.
            ab = model.sched.alpha_bar[t - 1]
            p0_hat = (p - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
            p0_hat = np.clip(p0_hat, -cfg.clip_x0, cfg.clip_x0)
            eps_hat = (p - np.sqrt(ab) * p0_hat) / np.sqrt(1.0 - ab)
        p = ddim_step(p, t, t_prev, eps_hat, model.sched)
    return p


def sample_pose(state: TrainState, sample, n_steps: int | None = None,
                seed: int = 0, eps_fn=None) -> Pose9D:
    """Deterministic (eta = 0) pose draw for one scene."""
    n = n_steps if n_steps is not None else state.cfg.ddim_steps
    rng = np.random.default_rng(seed)
    vec = _sample_batch(state, [sample], n, rng, eps_fn=eps_fn)[0]
    return state.standardizer.decode(vec)


def sample_poses(state: TrainState, samples, n_steps: int | None = None,
                 seed: int = 0, batch_size: int = 64) -> dict[str, Pose9D]:
    """Vectorized sampling across scenes; id -> Pose9D."""
    n = n_steps if n_steps is not None else state.cfg.ddim_steps
    out = {}
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        rng = np.random.default_rng([state.cfg.seed, seed, lo])
        vecs = _sample_batch(state, chunk, n, rng)
        for s, v in zip(chunk, vecs):
            out[s.sample_id] = state.standardizer.decode(v)
    return out


def regress_baseline(state: TrainState, sample) -> Pose9D:
    """Single forward pass of the diffusion-free baseline."""
    return regress_baselines(state, [sample])[sample.sample_id]


def regress_baselines(state: TrainState, samples) -> dict[str, Pose9D]:
    if state.mode != "baseline":
        raise InvalidCheckpointError(
            f"baseline regression needs a baseline checkpoint, "
            f"got mode {state.mode!r}")
    images, points = _batch_arrays(samples)
    B = len(samples)
    out, _ = state.model.forward(np.zeros((B, 15)), np.ones(B, dtype=int),
                                 images, points)
    return {s.sample_id: state.standardizer.decode(v)
            for s, v in zip(samples, out)}
