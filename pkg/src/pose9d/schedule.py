"""Cosine noise schedule, forward diffusion, reverse posterior quantities
and the deterministic (eta = 0) reduced-step update rule.

Steps are 1-indexed: t ranges over [1, T], arrays store index t-1, and
alpha_bar at t = 0 is defined as 1 so the final reverse step is noise-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidConfigError,
    ShapeMismatchError,
    StepOrderViolationError,
    StepOutOfRangeError,
)

MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-step noise tables.

    beta[t-1] is the step-t noise rate, alpha = 1 - beta, and alpha_bar is
    the running product of alpha, so the tables stay mutually consistent
    even where beta was clipped.
    """

    T: int
    s_offset: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t) -> np.ndarray:
        """alpha_bar for step t (scalar or array), with alpha_bar(0) = 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise StepOutOfRangeError(f"step {t} outside [0, {self.T}]")
        return np.where(t == 0, 1.0, self.alpha_bar[np.maximum(t, 1) - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "s_offset": self.s_offset,
                "beta": self.beta.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NoiseSchedule":
        beta = np.asarray(d["beta"], dtype=np.float64)
        alpha = 1.0 - beta
        return NoiseSchedule(int(d["T"]), float(d["s_offset"]), beta, alpha,
                             np.cumprod(alpha))


def build_cosine_schedule(T: int = 1000, s_offset: float = 0.008) -> NoiseSchedule:
    """Cosine schedule: alpha_bar tracks f(t)/f(0) with
    f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), beta clipped to <= 0.999.

    Only the final step hits the clip for any reasonable T, so beta stays
    strictly increasing and alpha_bar strictly decreasing.
    """
    if T < 2:
        raise InvalidConfigError(f"need T >= 2, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s_offset) / (1.0 + s_offset)) * np.pi / 2.0) ** 2
    ratio = f[1:] / f[:-1]
    beta = np.minimum(1.0 - ratio, MAX_BETA)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, s_offset, beta, alpha, alpha_bar)


def _check_step(t, T):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > T):
        raise StepOutOfRangeError(f"step {t} outside [1, {T}]")
    return t


def _per_sample(table_value, ndim):
    """Right-pad a per-sample coefficient so it broadcasts over vector dims."""
    c = np.asarray(table_value, dtype=np.float64)
    while c.ndim < ndim:
        c = c[..., None]
    return c


def q_sample(p0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Jump the clean vector straight to step t:
    p_t = sqrt(alpha_bar_t) p_0 + sqrt(1 - alpha_bar_t) eps."""
    p0 = np.asarray(p0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if p0.shape != eps.shape:
        raise ShapeMismatchError(f"p0 {p0.shape} vs eps {eps.shape}")
    t = _check_step(t, sched.T)
    ab = _per_sample(sched.alpha_bar[t - 1], p0.ndim)
    return np.sqrt(ab) * p0 + np.sqrt(1.0 - ab) * eps


def single_step_sample(p_prev: np.ndarray, t, eps_t: np.ndarray,
                       sched: NoiseSchedule) -> np.ndarray:
    """One forward step: p_t = sqrt(beta_t) eps_t + sqrt(1 - beta_t) p_{t-1}."""
    p_prev = np.asarray(p_prev, dtype=np.float64)
    eps_t = np.asarray(eps_t, dtype=np.float64)
    if p_prev.shape != eps_t.shape:
        raise ShapeMismatchError(f"p_prev {p_prev.shape} vs eps {eps_t.shape}")
    t = _check_step(t, sched.T)
    beta = _per_sample(sched.beta[t - 1], p_prev.ndim)
    return np.sqrt(beta) * eps_t + np.sqrt(1.0 - beta) * p_prev


def posterior_stats(p_t: np.ndarray, t, eps_hat: np.ndarray,
                    sched: NoiseSchedule):
    """Reverse-step Gaussian given the predicted noise.

    mean = (p_t - (beta_t / sqrt(1 - alpha_bar_t)) eps_hat) / sqrt(alpha_t)
    var  = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)

    At t = 1 the variance is exactly 0 (alpha_bar_0 = 1).
    """
    p_t = np.asarray(p_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if p_t.shape != eps_hat.shape:
        raise ShapeMismatchError(f"p_t {p_t.shape} vs eps_hat {eps_hat.shape}")
    t = _check_step(t, sched.T)
    beta = sched.beta[t - 1]
    alpha = sched.alpha[t - 1]
    ab_t = sched.alpha_bar[t - 1]
    ab_prev = sched.alpha_bar_at(t - 1)
    mean = (p_t - _per_sample(beta / np.sqrt(1.0 - ab_t), p_t.ndim) * eps_hat) \
        / _per_sample(np.sqrt(alpha), p_t.ndim)
    var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
    return mean, var


def ddim_step(p_t: np.ndarray, t, t_prev, eps_hat: np.ndarray,
              sched: NoiseSchedule) -> np.ndarray:
    """Deterministic reduced-step update (eta = 0):

    p0_hat = (p_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t)
    out    = sqrt(alpha_bar_prev) p0_hat + sqrt(1 - alpha_bar_prev) eps_hat
    """
    p_t = np.asarray(p_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if p_t.shape != eps_hat.shape:
        raise ShapeMismatchError(f"p_t {p_t.shape} vs eps_hat {eps_hat.shape}")
    t = _check_step(t, sched.T)
    t_prev = np.asarray(t_prev)
    if np.any(t_prev < 0) or np.any(t_prev > sched.T):
        raise StepOutOfRangeError(f"step {t_prev} outside [0, {sched.T}]")
    if np.any(t_prev >= t):
        raise StepOrderViolationError(f"t_prev {t_prev} must be < t {t}")
    ab_t = _per_sample(sched.alpha_bar[t - 1], p_t.ndim)
    ab_prev = _per_sample(sched.alpha_bar_at(t_prev), p_t.ndim)
    p0_hat = (p_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * p0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def ddim_step_pairs(T: int, num_steps: int):
    """Uniform-stride step pairs [(t, t_prev), ...] descending from T to 0.

    num_steps = T reproduces the full chain (T, T-1), ..., (1, 0).
    """
    if not (1 <= num_steps <= T):
        raise InvalidConfigError(f"num_steps must be in [1, {T}], got {num_steps}")
    bounds = np.unique(np.round(np.linspace(0, T, num_steps + 1)).astype(int))
    return [(int(bounds[i]), int(bounds[i - 1]))
            for i in range(len(bounds) - 1, 0, -1)]
