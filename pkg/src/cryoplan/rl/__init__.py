"""Reinforcement-learned probe placement: features, policy net, PPO training."""
