"""Stochastic placement policy: a small 3-D conv net over coarse occupancy.

The net maps a FeatureTensor to the mean of a diagonal Gaussian over 4C
latent values (3 centre coordinates + 1 diameter per probe slot) plus a
state value estimate; a learned state-independent log-std vector completes
the distribution.  Latents are squashed through 0.5*(1+tanh(u)) into (0, 1)
and rescaled to world millimetres, so emitted probes always lie inside the
case bounding box and diameter bounds by construction.  Log-densities are
taken over the normalized (0,1)^{4C} cube with the exact tanh change of
variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..environment import EnvConfig, EnvState, ProbeAction, VisitAction
from .features import FEATURE_CHANNELS, FeatureTensor, featurize

__all__ = ["PolicyNet", "PolicySample", "policy_sample", "PolicyPlanner"]

DTYPE = torch.float64


def _halton(index: int, base: int) -> float:
    """index-th term (1-based) of the base-b van der Corput sequence."""
    f, r = 1.0, 0.0
    while index > 0:
        f /= base
        r += f * (index % base)
        index //= base
    return r


class PolicyNet(torch.nn.Module):
    """conv(channels->c1) -> conv(c1->c2) -> dense trunk -> mean / value heads.

    Weights are float64 and initialized deterministically from `seed`.
    log_std is a free parameter clamped to log_std_range at use sites.
    """

    def __init__(self, probes_per_visit: int, grid=(16, 16, 16),
                 conv_channels=(8, 16), hidden: int = 128,
                 init_log_std: float = -0.5, log_std_range=(-4.0, 1.0),
                 seed: int = 0):
        super().__init__()
        if probes_per_visit < 1:
            raise ValueError("probes_per_visit must be >= 1")
        if min(grid) < 4:
            raise ValueError(f"policy needs a coarse grid of at least 4 per axis, got {grid}")
        self.probes_per_visit = int(probes_per_visit)
        self.grid = tuple(int(g) for g in grid)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.hidden = int(hidden)
        self.log_std_range = (float(log_std_range[0]), float(log_std_range[1]))
        self.action_dim = 4 * self.probes_per_visit

        c1, c2 = self.conv_channels
        self.conv1 = torch.nn.Conv3d(FEATURE_CHANNELS, c1, kernel_size=2, stride=2, dtype=DTYPE)
        self.conv2 = torch.nn.Conv3d(c1, c2, kernel_size=2, stride=2, dtype=DTYPE)
        flat = c2 * (grid[0] // 4) * (grid[1] // 4) * (grid[2] // 4)
        self.fc = torch.nn.Linear(flat + 1, self.hidden, dtype=DTYPE)
        self.mean_head = torch.nn.Linear(self.hidden, self.action_dim, dtype=DTYPE)
        self.value_head = torch.nn.Linear(self.hidden, 1, dtype=DTYPE)
        self.log_std = torch.nn.Parameter(
            torch.full((self.action_dim,), float(init_log_std), dtype=DTYPE)
        )
        self._init_weights(seed)

    def _init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for name, mod in (("conv1", self.conv1), ("conv2", self.conv2),
                              ("fc", self.fc), ("mean_head", self.mean_head),
                              ("value_head", self.value_head)):
                fan_in = mod.weight.shape[1] * int(np.prod(mod.weight.shape[2:]))
                bound = 1.0 / math.sqrt(fan_in)
                mod.weight.uniform_(-bound, bound, generator=gen)
                mod.bias.uniform_(-bound, bound, generator=gen)
                if name == "mean_head":
                    # Small weights keep early actions near the bias anchors.
                    # The anchors spread probe slots across the frame: slots
                    # with identical means collapse each visit to a single
                    # effective sphere, and the permutation symmetry of the
                    # joint head makes gradient-driven separation glacial.
                    mod.weight.mul_(0.01)
                    mod.bias.zero_()
                    for k in range(self.probes_per_visit):
                        for axis, base in enumerate((2, 3, 5)):
                            p = 0.15 + 0.7 * _halton(k + 1, base)
                            mod.bias[4 * k + axis] = math.atanh(2.0 * p - 1.0)

    def forward(self, channels: torch.Tensor, t_frac: torch.Tensor):
        """channels (B, C, gx, gy, gz), t_frac (B,) -> mean (B, 4C), value (B,)."""
        h = torch.tanh(self.conv1(channels))
        h = torch.tanh(self.conv2(h))
        h = torch.cat([h.flatten(1), t_frac.unsqueeze(1)], dim=1)
        h = torch.tanh(self.fc(h))
        return self.mean_head(h), self.value_head(h).squeeze(1)

    def clamped_log_std(self) -> torch.Tensor:
        return self.log_std.clamp(*self.log_std_range)


def squash(u: torch.Tensor) -> torch.Tensor:
    """Bounded map R -> (0, 1)."""
    return 0.5 * (1.0 + torch.tanh(u))


def log_prob_of(net: PolicyNet, mean: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Log-density of the squashed action a = squash(u) given the mean batch.

    Gaussian log-density of the latent u minus the log-Jacobian of the
    squash; log(da/du) = log 2 - 2u - 2*softplus(-2u) after simplification.
    """
    log_std = net.clamped_log_std()
    var_term = -0.5 * (((u - mean) / log_std.exp()) ** 2)
    base = var_term - log_std - 0.5 * math.log(2.0 * math.pi)
    jac = math.log(2.0) - 2.0 * u - 2.0 * torch.nn.functional.softplus(-2.0 * u)
    return (base - jac).sum(dim=-1)


def entropy_of(net: PolicyNet) -> torch.Tensor:
    """Closed-form entropy of the latent Gaussian (squash correction omitted)."""
    log_std = net.clamped_log_std()
    return (log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))).sum()


@dataclass
class PolicySample:
    """One sampled (or deterministic) visit and its training bookkeeping."""

    action: VisitAction
    u: np.ndarray
    log_prob: float
    value: float


def _to_visit(a_norm: np.ndarray, feat: FeatureTensor) -> VisitAction:
    lo, hi = feat.world_min, feat.world_max
    d_lo, d_hi = feat.d_bounds
    probes = []
    for c in range(feat.probes_per_visit):
        vals = a_norm[4 * c: 4 * c + 4]
        centre = lo + vals[:3] * (hi - lo)
        d = d_lo + vals[3] * (d_hi - d_lo)
        probes.append(ProbeAction(tuple(centre), float(d)))
    return VisitAction(tuple(probes))


def policy_sample(net: PolicyNet, feat: FeatureTensor, rng: np.random.Generator | None = None,
                  deterministic: bool = False) -> PolicySample:
    """Draw one visit action from the policy (or take the mean action).

    The Gaussian noise comes from the numpy generator so environment and
    policy stochasticity share one seeding scheme.
    """
    if feat.probes_per_visit != net.probes_per_visit:
        raise ValueError(
            f"policy emits {net.probes_per_visit} probes but the episode expects "
            f"{feat.probes_per_visit}"
        )
    with torch.no_grad():
        channels = torch.from_numpy(feat.channels).to(DTYPE).unsqueeze(0)
        t_frac = torch.tensor([feat.t_frac], dtype=DTYPE)
        mean, value = net(channels, t_frac)
        if not (torch.isfinite(mean).all() and torch.isfinite(value).all()):
            raise FloatingPointError("policy network produced non-finite outputs")
        if deterministic:
            u = mean
        else:
            if rng is None:
                raise ValueError("sampling mode needs an rng")
            eps = torch.from_numpy(rng.standard_normal(net.action_dim)).to(DTYPE)
            u = mean + net.clamped_log_std().exp() * eps
        logp = log_prob_of(net, mean, u)
        a_norm = squash(u).squeeze(0).numpy()
    return PolicySample(
        action=_to_visit(a_norm, feat),
        u=u.squeeze(0).numpy(),
        log_prob=float(logp),
        value=float(value),
    )


class PolicyPlanner:
    """Adapter giving a trained net the planner interface (mean action)."""

    def __init__(self, net: PolicyNet):
        self.net = net

    def plan_visit(self, state: EnvState, config: EnvConfig) -> VisitAction:
        feat = featurize(state, self.net.grid)
        return policy_sample(self.net, feat, deterministic=True).action
