"""Lockstep batched episode evaluation.

All episodes of one evaluation advance together; finished episodes drop out
of the active set. Episode ``i`` is seeded with ``seeds[i]`` alone, so the
result of an episode never depends on which other episodes share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .envs import EnvModel
from .noise import NoiseInjector, NoiseSpec, compose

# obs batch (N, obs_dim) -> integer actions (N,)
BatchPolicy = Callable[[np.ndarray], np.ndarray]


@dataclass
class EpisodeBatch:
    rewards: np.ndarray
    steps: np.ndarray
    terminated: np.ndarray

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def reward_std(self) -> float:
        return float(np.std(self.rewards))


def initial_internals(env: EnvModel, seeds: Sequence[int]) -> np.ndarray:
    return np.stack([env.sample_initial(np.random.default_rng(int(s))) for s in seeds])


def noise_blocks(spec: NoiseSpec | None, seeds: Sequence[int], n_steps: int, dim: int):
    if spec is None or spec.k == 0:
        return None
    raws = [NoiseInjector(spec, seed=int(s)).block(n_steps, dim) for s in seeds]
    return np.stack(raws, axis=1)  # (n_steps, N, dim or 1)


def run_episodes(
    env: EnvModel,
    policy: BatchPolicy,
    seeds: Sequence[int],
    noise: NoiseSpec | None = None,
    max_steps: int | None = None,
) -> EpisodeBatch:
    max_steps = env.max_steps if max_steps is None else max_steps
    n = len(seeds)
    internal = initial_internals(env, seeds)
    obs = env.observe(internal)
    prev = obs.copy()
    raw = noise_blocks(noise, seeds, max_steps, env.obs_dim)
    active = np.ones(n, dtype=bool)
    terminated = np.zeros(n, dtype=bool)
    rewards = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    for t in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        seen = obs[idx]
        if raw is not None:
            seen = compose(seen, prev[idx], noise, raw[t, idx])
        actions = np.asarray(policy(seen), dtype=np.int64)
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
