"""Classic-control environments: CartPole, Acrobot and MountainCar.

Dynamics follow the canonical public implementations. Every model is written
against arrays of shape ``(..., state_dim)`` so the same code drives a single
episode and a lockstep batch of episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class EnvError(RuntimeError):
    pass


class EnvModel:
    """Deterministic dynamics of one environment kind.

    ``internal`` is the physical state; ``observe`` maps it to what the policy
    sees (they differ only for Acrobot).
    """

    name: str
    obs_dim: int
    n_actions: int
    max_steps: int
    reward_per_step: float
    # nominal per-dimension magnitude, used as the input normalizer
    obs_range: tuple[float, ...]

    def sample_initial(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def advance(self, internal: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def terminated(self, internal: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, internal: np.ndarray) -> np.ndarray:
        return internal

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class CartPole(EnvModel):
    name = "cartpole"
    obs_dim = 4
    n_actions = 2
    reward_per_step = 1.0
    obs_range = (2.4, 3.0, 0.21, 3.5)

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    tau = 0.02
    x_threshold = 2.4

    def __init__(self, angle_limit_deg: float = 12.0, max_steps: int = 2000):
        self.angle_limit_deg = angle_limit_deg
        self.theta_threshold = angle_limit_deg * 2 * math.pi / 360
        self.max_steps = max_steps

    def sample_initial(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def advance(self, internal, action):
        x, x_dot, theta, theta_dot = np.moveaxis(np.asarray(internal, dtype=float), -1, 0)
        force = np.where(np.asarray(action) == 1, self.force_mag, -self.force_mag)
        total_mass = self.masspole + self.masscart
        polemass_length = self.masspole * self.length
        costheta = np.cos(theta)
        sintheta = np.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta**2 / total_mass)
        )
        xacc = temp - polemass_length * thetaacc * costheta / total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        return np.stack([x, x_dot, theta, theta_dot], axis=-1)

    def terminated(self, internal):
        internal = np.asarray(internal)
        return (np.abs(internal[..., 0]) > self.x_threshold) | (
            np.abs(internal[..., 2]) > self.theta_threshold
        )

    def __repr__(self):
        return f"CartPole(angle_limit_deg={self.angle_limit_deg}, max_steps={self.max_steps})"


def _wrap(x, lo, hi):
    span = hi - lo
    return lo + np.mod(x - lo, span)


class Acrobot(EnvModel):
    name = "acrobot"
    obs_dim = 6
    n_actions = 3
    reward_per_step = -1.0
    obs_range = (1.0, 1.0, 1.0, 1.0, 4 * math.pi, 9 * math.pi)

    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_pos_1 = 0.5
    link_com_pos_2 = 0.5
    link_moi = 1.0
    max_vel_1 = 4 * math.pi
    max_vel_2 = 9 * math.pi
    torques = (-1.0, 0.0, 1.0)

    def __init__(self, max_steps: int = 500):
        self.max_steps = max_steps

    def sample_initial(self, rng):
        return rng.uniform(-0.1, 0.1, size=4)

    def derivatives(self, s, torque):
        """Time derivative of ``(theta1, theta2, dtheta1, dtheta2)`` ("book" variant)."""
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1 = self.link_length_1
        lc1, lc2 = self.link_com_pos_1, self.link_com_pos_2
        i1 = i2 = self.link_moi
        g = 9.8
        theta1, theta2, dtheta1, dtheta2 = np.moveaxis(s, -1, 0)
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(theta2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * np.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - math.pi / 2)
            + phi2
        )
        ddtheta2 = (
            torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * np.sin(theta2) - phi2
        ) / (m2 * lc2**2 + i2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.stack([dtheta1, dtheta2, ddtheta1, ddtheta2], axis=-1)

    def advance(self, internal, action):
        s = np.asarray(internal, dtype=float)
        torque = np.asarray(self.torques)[np.asarray(action)]
        h = self.dt
        k1 = self.derivatives(s, torque)
        k2 = self.derivatives(s + h / 2 * k1, torque)
        k3 = self.derivatives(s + h / 2 * k2, torque)
        k4 = self.derivatives(s + h * k3, torque)
        ns = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return np.stack(
            [
                _wrap(ns[..., 0], -math.pi, math.pi),
                _wrap(ns[..., 1], -math.pi, math.pi),
                np.clip(ns[..., 2], -self.max_vel_1, self.max_vel_1),
                np.clip(ns[..., 3], -self.max_vel_2, self.max_vel_2),
            ],
            axis=-1,
        )

    def terminated(self, internal):
        s = np.asarray(internal)
        return -np.cos(s[..., 0]) - np.cos(s[..., 1] + s[..., 0]) > 1.0

    def observe(self, internal):
        s = np.asarray(internal)
        return np.stack(
            [np.cos(s[..., 0]), np.sin(s[..., 0]), np.cos(s[..., 1]), np.sin(s[..., 1]), s[..., 2], s[..., 3]],
            axis=-1,
        )

    def __repr__(self):
        return f"Acrobot(max_steps={self.max_steps})"


class MountainCar(EnvModel):
    name = "mountaincar"
    obs_dim = 2
    n_actions = 3
    reward_per_step = -1.0
    obs_range = (1.2, 0.07)

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    force = 0.001
    gravity = 0.0025

    def __init__(self, max_steps: int = 200):
        self.max_steps = max_steps

    def sample_initial(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def advance(self, internal, action):
        s = np.asarray(internal, dtype=float)
        position, velocity = s[..., 0], s[..., 1]
        velocity = velocity + (np.asarray(action) - 1) * self.force - self.gravity * np.cos(3 * position)
        velocity = np.clip(velocity, -self.max_speed, self.max_speed)
        position = np.clip(position + velocity, self.min_position, self.max_position)
        velocity = np.where((position == self.min_position) & (velocity < 0), 0.0, velocity)
        return np.stack([position, velocity], axis=-1)

    def terminated(self, internal):
        s = np.asarray(internal)
        return s[..., 0] >= self.goal_position

    def __repr__(self):
        return f"MountainCar(max_steps={self.max_steps})"


ENV_KINDS = ("cartpole", "acrobot", "mountaincar")


def make_env(kind: str, **kwargs) -> EnvModel:
    try:
        cls = {"cartpole": CartPole, "acrobot": Acrobot, "mountaincar": MountainCar}[kind]
    except KeyError:
        raise ValueError(f"unknown environment {kind!r}; expected one of {ENV_KINDS}") from None
    return cls(**kwargs)


@dataclass(frozen=True)
class EnvState:
    observation: np.ndarray
    internal: np.ndarray
    step_count: int = 0
    done: bool = False
    reward: float = 0.0
    # time-limit cut rather than a task termination
    truncated: bool = False


def reset(env: EnvModel | str, seed: int) -> EnvState:
    """Seeded initial state; the same seed always yields the same state."""
    if isinstance(env, str):
        env = make_env(env)
    internal = env.sample_initial(np.random.default_rng(seed))
    return EnvState(observation=env.observe(internal), internal=internal)


def step(env: EnvModel, state: EnvState, action: int) -> EnvState:
    if state.done:
        raise EnvError("step() called on a finished episode; call reset()")
    if not 0 <= int(action) < env.n_actions:
        raise ValueError(f"action {action} outside [0, {env.n_actions})")
    internal = env.advance(state.internal, int(action))
    terminated = bool(env.terminated(internal))
    count = state.step_count + 1
    truncated = not terminated and count >= env.max_steps
    return replace(
        state,
        observation=env.observe(internal),
        internal=internal,
        step_count=count,
        done=terminated or truncated,
        reward=env.reward_per_step,
        truncated=truncated,
    )


def cartpole_step(state: EnvState, action: int, env: CartPole | None = None) -> EnvState:
    return step(env or CartPole(), state, action)


def acrobot_step(state: EnvState, action: int, env: Acrobot | None = None) -> EnvState:
    return step(env or Acrobot(), state, action)


def mountaincar_step(state: EnvState, action: int, env: MountainCar | None = None) -> EnvState:
    return step(env or MountainCar(), state, action)
