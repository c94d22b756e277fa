"""Lookahead-and-veto control for binary-action environments.

Before each real step the policy's proposed action is checked by simulating
``l_mpc`` steps of the noiseless model from the true state, with the policy
choosing every simulated action after the first. If the rollout fails the
proposal is flipped. Observation noise applies to the real policy call only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import EnvModel
from .noise import NoiseInjector, NoiseSpec, compose
from .rollout import BatchPolicy, EpisodeBatch, initial_internals, noise_blocks

FLIP_RULES = ("once", "literal")


@dataclass(frozen=True)
class MpcConfig:
    l_mpc: int = 1
    noise: NoiseSpec | None = None
    max_steps: int | None = None
    # "once": flip when any simulated step fails; "literal": flip on every
    # failing simulated step, so an even number of failures cancels out
    flip: str = "once"

    def __post_init__(self):
        if not 1 <= self.l_mpc <= 16:
            raise ValueError(f"l_mpc must lie in 1..16, got {self.l_mpc}")
        if self.flip not in FLIP_RULES:
            raise ValueError(f"flip must be one of {FLIP_RULES}")


def _check_binary(env: EnvModel):
    if env.n_actions != 2:
        raise ValueError(f"lookahead flipping needs a binary action space, {env.name} has {env.n_actions}")


def veto(policy: BatchPolicy, env: EnvModel, internal: np.ndarray, proposed: np.ndarray, config: MpcConfig):
    """Final actions for a batch of true states and proposed actions."""
    sim = internal.copy()
    action = np.asarray(proposed, dtype=np.int64)
    flip = np.zeros(len(action), dtype=bool)
    for _ in range(config.l_mpc):
        sim = env.advance(sim, action)
        done = env.terminated(sim)
        flip = flip ^ done if config.flip == "literal" else flip | done
        action = np.asarray(policy(env.observe(sim)), dtype=np.int64)
    return np.where(flip, 1 - proposed, proposed)


def run_mpc(policy: BatchPolicy, env: EnvModel, config: MpcConfig, seeds: Sequence[int]) -> EpisodeBatch:
    """Lockstep MPC episodes, one per seed; noise matches :func:`run_episodes`."""
    _check_binary(env)
    max_steps = config.max_steps or env.max_steps
    n = len(seeds)
    internal = initial_internals(env, seeds)
    obs = env.observe(internal)
    prev = obs.copy()
    raw = noise_blocks(config.noise, seeds, max_steps, env.obs_dim)
    active = np.ones(n, dtype=bool)
    terminated = np.zeros(n, dtype=bool)
    rewards = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    for t in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        seen = obs[idx] if raw is None else compose(obs[idx], prev[idx], config.noise, raw[t, idx])
        proposed = np.asarray(policy(seen), dtype=np.int64)
        actions = veto(policy, env, internal[idx], proposed, config)
        new = env.advance(internal[idx], actions)
        term = env.terminated(new)
        prev[idx] = obs[idx]
        internal[idx] = new
        obs[idx] = env.observe(new)
        rewards[idx] += env.reward_per_step
        steps[idx] += 1
        terminated[idx[term]] = True
        active[idx[term]] = False
    return EpisodeBatch(rewards=rewards, steps=steps, terminated=terminated)


def mpc_episode(policy: BatchPolicy, env: EnvModel, config: MpcConfig, seed: int = 0, injector=None) -> float:
    """One MPC episode stepped sequentially; returns the total reward.

    ``injector(obs, prev_obs)`` perturbs the real observation; by default a
    :class:`NoiseInjector` seeded like :func:`run_mpc`.
    """
    _check_binary(env)
    if injector is None and config.noise is not None and config.noise.k > 0:
        injector = NoiseInjector(config.noise, seed=seed)
    max_steps = config.max_steps or env.max_steps
    internal = initial_internals(env, [seed])
    obs = env.observe(internal)
    prev = obs.copy()
    total = 0.0
    for _ in range(max_steps):
        seen = obs if injector is None else np.asarray(injector(obs[0], prev[0]))[None]
        proposed = np.asarray(policy(seen), dtype=np.int64)
        action = veto(policy, env, internal, proposed, config)
        internal = env.advance(internal, action)
        prev, obs = obs, env.observe(internal)
        total += env.reward_per_step
        if env.terminated(internal)[0]:
            break
    return total
