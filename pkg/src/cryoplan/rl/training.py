"""The training loop: rollout collection, batched updates, periodic eval.

Episodes are collected under the same noisy environment used for
benchmarking.  Rewards are normalized by the case's initial tumour voxel
count so episode returns are comparable across phantoms.  Every
eval_every environment steps (measured in consumed batch transitions) the
current policy is scored by mean Dice on a held-out slice of the dev cases
with fixed noise seeds, and the best-scoring parameters are checkpointed.

The loop is deterministic given (seed, case order): one numpy generator
drives case choice, action sampling and environment noise, and torch runs
single-threaded.
"""

from __future__ import annotations

import copy
import logging
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from ..environment import EnvConfig, reset, step
from .checkpoint import save_checkpoint
from .features import featurize
from .policy import PolicyNet, PolicyPlanner, policy_sample
from .ppo import Batch, PpoAbort, TrainConfig, discounted_returns, ppo_update

__all__ = ["train", "evaluate_policy_dice"]

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_ABORTS = 3
REWARD_WINDOW = 100
STATE_SUFFIX = ".state.pt"


def evaluate_policy_dice(net: PolicyNet, cases, env_config: EnvConfig, seed: int) -> float:
    """Mean Dice of the deterministic policy over cases, noise per env_config."""
    from ..eval import case_seed, dice  # late import: eval builds on planners, not on rl

    planner = PolicyPlanner(net)
    scores = []
    for case in cases:
        rng = np.random.default_rng(case_seed(seed, case.id, "train-eval"))
        state = reset(case, env_config)
        while not state.finished:
            action = planner.plan_visit(state, env_config)
            step(state, action, env_config, rng)
        scores.append(dice(case.tumour, state.ablated))
    return float(np.mean(scores))


def _rollout(net, case, env_config, config, rng):
    """One episode with the stochastic policy; rows carry normalized rewards."""
    state = reset(case, env_config)
    scale = 1.0 / state.initial_tumour_count
    feats, samples, rewards = [], [], []
    while not state.finished:
        feat = featurize(state, config.feature_grid)
        samp = policy_sample(net, feat, rng)
        result = step(state, samp.action, env_config, rng)
        feats.append(feat)
        samples.append(samp)
        rewards.append(result.reward * scale)
    returns = discounted_returns(rewards, config.gamma)
    rows = [
        (feat.channels, feat.t_frac, samp.u, samp.log_prob, samp.value, ret)
        for feat, samp, ret in zip(feats, samples, returns)
    ]
    return rows, float(sum(rewards))


def _make_batch(rows) -> Batch:
    channels, t_frac, u, logp, value, rets = zip(*rows)
    return Batch(
        channels=torch.from_numpy(np.stack(channels)),
        t_frac=torch.tensor(t_frac, dtype=torch.float64),
        u=torch.from_numpy(np.stack(u)),
        log_prob_old=torch.tensor(logp, dtype=torch.float64),
        value_old=torch.tensor(value, dtype=torch.float64),
        returns=torch.tensor(rets, dtype=torch.float64),
    )


def _atomic_torch_save(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def train(cases, env_config: EnvConfig, config: TrainConfig,
          out_dir=None, resume_from=None):
    """PPO training over dev cases; returns (best policy, curve rows).

    Curve rows are (step, mean_reward, eval_dice) tuples, one per periodic
    eval.  When out_dir is given, the best checkpoint and a resumable
    training state are written there as training progresses; resume_from
    continues an interrupted run bit-exactly.
    """
    if not cases:
        raise ValueError("train needs a non-empty dev case list")
    torch.set_num_threads(1)

    n_eval = min(config.eval_cases, len(cases))
    eval_cases = list(cases[-n_eval:])
    train_cases = list(cases[:-n_eval]) or list(cases)

    net = PolicyNet(
        probes_per_visit=env_config.probes_per_visit,
        grid=config.feature_grid,
        conv_channels=config.conv_channels,
        hidden=config.hidden,
        init_log_std=config.init_log_std,
        log_std_range=(config.log_std_min, config.log_std_max),
        seed=config.seed,
    )
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    initial_state = copy.deepcopy(net.state_dict())

    steps_done = 0
    consumed = 0        # transitions consumed by updates, in exact batches
    update_idx = 0
    next_eval = config.eval_every
    curve = []
    buffer = []
    reward_window = []
    best_dice = -1.0
    best_state = None
    consecutive_aborts = 0

    if resume_from is not None:
        saved = torch.load(resume_from, weights_only=False)
        if saved.get("format") != 1:
            raise ValueError(f"{resume_from}: not a training state file")
        # total_steps may grow on resume (that is how a run is extended);
        # every other hyper-parameter must match for bit-exact continuation.
        want = {k: v for k, v in asdict(config).items() if k != "total_steps"}
        got = {k: v for k, v in saved["train_config"].items() if k != "total_steps"}
        if want != got:
            raise ValueError(
                f"{resume_from}: training config differs from the saved run; "
                "resume with the identical configuration (total_steps may change)"
            )
        net.load_state_dict(saved["net_state"])
        optimizer.load_state_dict(saved["opt_state"])
        rng.bit_generator.state = saved["rng_state"]
        steps_done = saved["steps_done"]
        consumed = saved["consumed"]
        update_idx = saved["update_idx"]
        next_eval = saved["next_eval"]
        curve = list(saved["curve"])
        buffer = list(saved["buffer"])
        reward_window = list(saved["reward_window"])
        best_dice = saved["best_dice"]
        best_state = saved["best_state"]
        consecutive_aborts = saved["consecutive_aborts"]

    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / "policy.ckpt" if out_dir else None

    def save_progress():
        if out_dir is None:
            return
        _atomic_torch_save(
            {
                "format": 1,
                "train_config": asdict(config),
                "net_state": net.state_dict(),
                "opt_state": optimizer.state_dict(),
                "rng_state": rng.bit_generator.state,
                "steps_done": steps_done,
                "consumed": consumed,
                "update_idx": update_idx,
                "next_eval": next_eval,
                "curve": curve,
                "buffer": buffer,
                "reward_window": reward_window,
                "best_dice": best_dice,
                "best_state": best_state,
                "consecutive_aborts": consecutive_aborts,
            },
            Path(str(ckpt_path) + STATE_SUFFIX),
        )

    while steps_done < config.total_steps:
        case = train_cases[int(rng.integers(len(train_cases)))]
        rows, episode_reward = _rollout(net, case, env_config, config, rng)
        steps_done += len(rows)
        buffer.extend(rows)
        reward_window.append(episode_reward)
        del reward_window[:-REWARD_WINDOW]

        while len(buffer) >= config.batch_size:
            batch_rows, buffer = buffer[: config.batch_size], buffer[config.batch_size:]
            try:
                ppo_update(net, optimizer, _make_batch(batch_rows), config, batch_index=update_idx)
                consecutive_aborts = 0
            except PpoAbort as abort:
                consecutive_aborts += 1
                log.warning("update %d aborted (%s); restoring last good parameters", update_idx, abort)
                if consecutive_aborts >= MAX_CONSECUTIVE_ABORTS:
                    raise
                net.load_state_dict(best_state if best_state is not None else initial_state)
            update_idx += 1
            consumed += config.batch_size

            while consumed >= next_eval:
                eval_dice = evaluate_policy_dice(net, eval_cases, env_config, config.seed)
                mean_reward = float(np.mean(reward_window)) if reward_window else 0.0
                curve.append((next_eval, mean_reward, eval_dice))
                log.info(
                    "step %d: mean episode reward %.4f, eval dice %.4f",
                    next_eval, mean_reward, eval_dice,
                )
                if eval_dice > best_dice:
                    best_dice = eval_dice
                    best_state = copy.deepcopy(net.state_dict())
                    if ckpt_path is not None:
                        save_checkpoint(ckpt_path, net, config, config.seed)
                next_eval += config.eval_every
                save_progress()

    if best_state is not None:
        net.load_state_dict(best_state)
    if ckpt_path is not None and best_state is None:
        save_checkpoint(ckpt_path, net, config, config.seed)
        save_progress()
    return net, curve
