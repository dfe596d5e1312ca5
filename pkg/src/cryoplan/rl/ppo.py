"""Clipped-surrogate policy optimization over collected visit transitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .policy import PolicyNet, entropy_of, log_prob_of

__all__ = ["TrainConfig", "PpoAbort", "Batch", "discounted_returns", "ppo_update"]


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters; defaults follow the benchmark runs."""

    learning_rate: float = 3e-4
    batch_size: int = 512
    gamma: float = 0.9
    clip_epsilon: float = 0.2
    epochs_per_batch: int = 4
    entropy_weight: float = 0.01
    value_coef: float = 0.5
    total_steps: int = 40_000
    eval_every: int = 4096
    eval_cases: int = 6
    hidden: int = 128
    conv_channels: tuple[int, int] = (8, 16)
    feature_grid: tuple[int, int, int] = (16, 16, 16)
    init_log_std: float = -0.5
    log_std_min: float = -4.0
    log_std_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be >= 0 and batch_size >= 1")
        if not (0 <= self.gamma <= 1):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.clip_epsilon <= 0:
            raise ValueError(f"clip_epsilon must be > 0, got {self.clip_epsilon}")
        if self.epochs_per_batch < 1 or self.total_steps < 0 or self.eval_every < 1:
            raise ValueError("epochs_per_batch, eval_every must be >= 1 and total_steps >= 0")
        if self.entropy_weight < 0 or self.value_coef < 0:
            raise ValueError("entropy_weight and value_coef must be >= 0")
        if self.log_std_min > self.log_std_max:
            raise ValueError("log_std_min must be <= log_std_max")


class PpoAbort(RuntimeError):
    """Non-finite loss encountered; carries the offending batch index."""

    def __init__(self, batch_index: int, detail: str = ""):
        super().__init__(f"non-finite PPO loss in batch {batch_index}" + (f": {detail}" if detail else ""))
        self.batch_index = batch_index


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """returns[t] = sum_k gamma^k * rewards[t+k], by reverse recursion."""
    if not (0 <= gamma <= 1):
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class Batch:
    """Stacked transitions: policy inputs, latent actions and returns."""

    channels: torch.Tensor   # (B, C, gx, gy, gz)
    t_frac: torch.Tensor     # (B,)
    u: torch.Tensor          # (B, 4C) latent (pre-squash) actions
    log_prob_old: torch.Tensor  # (B,)
    value_old: torch.Tensor  # (B,)
    returns: torch.Tensor    # (B,)

    def __len__(self) -> int:
        return self.u.shape[0]


def _advantages(batch: Batch) -> torch.Tensor:
    """Return-minus-baseline advantages, normalized per batch (variance guarded)."""
    adv = batch.returns - batch.value_old
    centred = adv - adv.mean()
    std = centred.pow(2).mean().sqrt()
    if float(std) < 1e-12:
        return centred
    return centred / std


def _loss_terms(net: PolicyNet, batch: Batch, adv: torch.Tensor, config: TrainConfig):
    eps = config.clip_epsilon
    mean, value = net(batch.channels, batch.t_frac)
    log_prob = log_prob_of(net, mean, batch.u)
    ratio = torch.exp(log_prob - batch.log_prob_old)
    surrogate = torch.minimum(ratio * adv, ratio.clamp(1 - eps, 1 + eps) * adv).mean()
    value_loss = 0.5 * (value - batch.returns).pow(2).mean()
    entropy = entropy_of(net)
    loss = -surrogate + config.value_coef * value_loss - config.entropy_weight * entropy
    return loss, {
        "surrogate": float(surrogate.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
        "mean_ratio": float(ratio.detach().mean()),
    }


def ppo_loss(net: PolicyNet, batch: Batch, config: TrainConfig) -> torch.Tensor:
    """The exact scalar objective one update epoch descends; used by gradient checks."""
    loss, _ = _loss_terms(net, batch, _advantages(batch).detach(), config)
    return loss


def ppo_update(net: PolicyNet, optimizer: torch.optim.Optimizer, batch: Batch,
               config: TrainConfig, batch_index: int = 0) -> dict:
    """Run epochs_per_batch clipped-surrogate steps on one batch.

    Loss = -surrogate + value_coef * 0.5*MSE(value, return) - entropy_weight *
    latent-Gaussian entropy.  Raises PpoAbort on a non-finite loss before any
    parameter change in that epoch.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    adv = _advantages(batch).detach()
    stats = {}
    for _ in range(config.epochs_per_batch):
        loss, stats = _loss_terms(net, batch, adv, config)
        if not torch.isfinite(loss):
            raise PpoAbort(batch_index, f"stats={stats!r}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        stats["loss"] = float(loss.detach())
    return stats
