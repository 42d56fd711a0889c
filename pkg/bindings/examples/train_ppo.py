#!/usr/bin/env python3
"""Train a shared PPO policy on the delivery environment through the
dict-per-agent bindings, then compare it against the uniform-random policy.

Self-contained PPO (clipped surrogate, GAE, shared actor-critic MLP) with
the standard defaults: lr 3e-4, gamma 0.99, GAE lambda 0.95, clip 0.2,
10 epochs x 256 minibatch, value coefficient 0.5, gradient clip 0.5. Every
UAV runs the same policy network on its own observation.

Example:
    python bindings/examples/train_ppo.py --steps 50000 --fleet-size 4 --config compact
"""

from __future__ import annotations

import argparse
import random
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from medfleet.cli import resolve_config
from medfleet.scenario import with_fleet_size
from medfleet_bindings import ParallelEnv


@dataclass
class PPOConfig:
    total_steps: int = 50_000
    rollout_steps: int = 1_024
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    epochs: int = 10
    minibatch_size: int = 256
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5


def _layer(in_dim: int, out_dim: int, gain: float) -> nn.Linear:
    layer = nn.Linear(in_dim, out_dim)
    nn.init.orthogonal_(layer.weight, gain)
    nn.init.zeros_(layer.bias)
    return layer


class ActorCritic(nn.Module):
    """Separate actor and critic MLPs: value regression on returns in the
    hundreds must not deform the policy features."""

    def __init__(self, obs_size: int, num_actions: int):
        super().__init__()
        self.actor = nn.Sequential(
            _layer(obs_size, 64, np.sqrt(2)), nn.Tanh(),
            _layer(64, 64, np.sqrt(2)), nn.Tanh(),
            _layer(64, num_actions, 0.01),
        )
        self.critic = nn.Sequential(
            _layer(obs_size, 64, np.sqrt(2)), nn.Tanh(),
            _layer(64, 64, np.sqrt(2)), nn.Tanh(),
            _layer(64, 1, 1.0),
        )

    def forward(self, obs: torch.Tensor):
        return self.actor(obs), self.critic(obs).squeeze(-1)

    @torch.no_grad()
    def act(self, obs: torch.Tensor, deterministic: bool = False):
        logits, value = self(obs)
        dist = torch.distributions.Categorical(logits=logits)
        action = logits.argmax(dim=-1) if deterministic else dist.sample()
        return action, dist.log_prob(action), value


def _obs_tensor(obs_dict, agent_ids) -> torch.Tensor:
    return torch.as_tensor(
        np.stack([obs_dict[a] for a in agent_ids]), dtype=torch.float32)


def collect_rollout(env: ParallelEnv, net: ActorCritic, cfg: PPOConfig,
                    state: dict):
    """Roll the environment for cfg.rollout_steps, auto-resetting at episode
    boundaries; returns flat agent-transition tensors plus GAE targets."""
    agent_ids = env.possible_agents
    n = len(agent_ids)
    T = cfg.rollout_steps
    obs_buf = torch.zeros((T, n, env.observation_size))
    act_buf = torch.zeros((T, n), dtype=torch.long)
    logp_buf = torch.zeros((T, n))
    val_buf = torch.zeros((T, n))
    rew_buf = torch.zeros((T, n))
    end_buf = torch.zeros((T, n))       # episode boundary after this step
    boot_buf = torch.zeros((T, n))      # bootstrap value at the boundary

    obs = state["obs"]
    for t in range(T):
        obs_t = _obs_tensor(obs, agent_ids)
        actions, logps, values = net.act(obs_t)
        action_dict = {a: int(actions[i]) for i, a in enumerate(agent_ids)}
        next_obs, rewards, term, trunc, _ = env.step(action_dict)

        obs_buf[t] = obs_t
        act_buf[t] = actions
        logp_buf[t] = logps
        val_buf[t] = values
        rew_buf[t] = torch.tensor([rewards[a] for a in agent_ids])

        if term["__all__"] or trunc["__all__"]:
            end_buf[t] = 1.0
            if trunc["__all__"]:
                # Truncation is not a real terminal: bootstrap from the
                # final observation's value.
                _, _, final_values = net.act(_obs_tensor(next_obs, agent_ids))
                boot_buf[t] = final_values
            state["episode_seed"] += 1
            next_obs = env.reset(seed=state["episode_seed"])
        obs = next_obs
    state["obs"] = obs

    # Generalized advantage estimation (time-major, then flattened).
    with torch.no_grad():
        _, _, next_values = net.act(_obs_tensor(obs, agent_ids))
    advantages = torch.zeros_like(rew_buf)
    last_gae = torch.zeros(n)
    for t in reversed(range(T)):
        if end_buf[t].any():
            next_value = boot_buf[t]       # zero when terminated
            next_nonterminal = 0.0
        else:
            next_value = next_values if t == T - 1 else val_buf[t + 1]
            next_nonterminal = 1.0
        delta = rew_buf[t] + cfg.gamma * next_value - val_buf[t]
        last_gae = delta + cfg.gamma * cfg.gae_lambda * next_nonterminal * last_gae
        advantages[t] = last_gae
    returns = advantages + val_buf

    flat = lambda x: x.reshape(-1, *x.shape[2:])
    return (flat(obs_buf), flat(act_buf), flat(logp_buf),
            flat(advantages), flat(returns))


def ppo_update(net: ActorCritic, optimizer, cfg: PPOConfig, batch) -> None:
    obs, actions, old_logps, advantages, returns = batch
    size = obs.shape[0]
    for _ in range(cfg.epochs):
        order = torch.randperm(size)
        for start in range(0, size, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            logits, values = net(obs[idx])
            dist = torch.distributions.Categorical(logits=logits)
            logps = dist.log_prob(actions[idx])
            adv = advantages[idx]
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            ratio = torch.exp(logps - old_logps[idx])
            policy_loss = -torch.min(
                ratio * adv,
                torch.clamp(ratio, 1 - cfg.clip_range, 1 + cfg.clip_range) * adv,
            ).mean()
            value_loss = nn.functional.mse_loss(values, returns[idx])
            entropy = dist.entropy().mean()
            loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(net.parameters(), cfg.max_grad_norm)
            optimizer.step()


def evaluate_policy(env: ParallelEnv, act_fn, episodes: int, seed_base: int) -> float:
    """Mean fleet return (sum of per-agent returns) over ``episodes``."""
    agent_ids = env.possible_agents
    fleet_returns = []
    for i in range(episodes):
        obs = env.reset(seed=seed_base + i)
        total = 0.0
        while True:
            actions = act_fn(obs)
            obs, rewards, term, trunc, _ = env.step(actions)
            total += sum(rewards[a] for a in agent_ids)
            if term["__all__"] or trunc["__all__"]:
                break
        fleet_returns.append(total)
    return float(np.mean(fleet_returns))


def run_training(total_steps: int = 50_000, fleet_size: int = 4, seed: int = 0,
                 eval_episodes: int = 50, config_name: str = "compact",
                 scenario=None, verbose: bool = True) -> dict:
    torch.manual_seed(seed)
    cfg = PPOConfig(total_steps=total_steps)
    if scenario is None:
        scenario = resolve_config(config_name)
    scenario = with_fleet_size(scenario, fleet_size)
    env = ParallelEnv(scenario, seed=seed)
    net = ActorCritic(env.observation_size, env.num_actions)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)

    state = {"obs": env.reset(seed=seed), "episode_seed": seed}
    steps_done = 0
    started = time.monotonic()
    while steps_done < cfg.total_steps:
        batch = collect_rollout(env, net, cfg, state)
        ppo_update(net, optimizer, cfg, batch)
        steps_done += cfg.rollout_steps
        if verbose:
            print(f"  {steps_done:>6d}/{cfg.total_steps} env steps "
                  f"({time.monotonic() - started:5.1f}s)")

    eval_env = ParallelEnv(scenario, seed=seed)
    agent_ids = eval_env.possible_agents

    torch.manual_seed(seed + 1)  # fixed evaluation sampling stream

    def trained_act(obs):
        # Evaluate the stochastic policy that was actually trained.
        actions, _, _ = net.act(_obs_tensor(obs, agent_ids))
        return {a: int(actions[i]) for i, a in enumerate(agent_ids)}

    rng = random.Random(seed)

    def random_act(obs):
        return {a: rng.randrange(eval_env.num_actions) for a in agent_ids}

    eval_base = 1_000_000
    trained_return = evaluate_policy(eval_env, trained_act, eval_episodes, eval_base)
    random_return = evaluate_policy(eval_env, random_act, eval_episodes, eval_base)
    result = {
        "trained_mean_fleet_return": trained_return,
        "random_mean_fleet_return": random_return,
        "improved": trained_return > random_return,
        "env_steps": steps_done,
        "train_seconds": time.monotonic() - started,
    }
    if verbose:
        print(f"trained policy : {trained_return:10.2f} mean fleet return")
        print(f"random policy  : {random_return:10.2f} mean fleet return")
        print(f"improved: {result['improved']}")
    return result


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=50_000)
    parser.add_argument("--fleet-size", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eval-episodes", type=int, default=50)
    parser.add_argument("--config", default="compact")
    args = parser.parse_args()
    result = run_training(total_steps=args.steps, fleet_size=args.fleet_size,
                          seed=args.seed, eval_episodes=args.eval_episodes,
                          config_name=args.config)
    return 0 if result["improved"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
