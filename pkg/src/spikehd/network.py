"""Float MLP policies with clamp-and-quantize activations and their DQN trainer.

The CQ activation ``floor(clamp(x, 0, 1) * T) / T`` makes the float network's
hidden values take exactly the levels a T-step spike count can express, so
the trained weights convert to a spiking network with little loss. Gradients
pass straight through inside ``[0, 1]``. Distillation widens that window by
``margin`` so units that already fire stay trainable, which matters most at
T=1 where the only step sits at the top of the clamp range.

Inputs are normalized per dimension by the environment's nominal range; the
same normalizer becomes the input quantizer's ``m`` at conversion time.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import EnvModel, make_env
from .rollout import run_episodes

log = logging.getLogger(__name__)

OUTPUT_MODES = ("dense", "hdc")
ACTIVATIONS = ("cq", "relu", "clamp")

# name -> (environment, layer sizes)
PRESETS = {
    "net1": ("cartpole", (4, 10, 2)),
    "net2": ("acrobot", (6, 64, 3)),
    "net3": ("mountaincar", (2, 24, 24, 3)),
}


class TrainingError(RuntimeError):
    def __init__(self, message: str, best_reward: float, weights: "MlpWeights | None" = None):
        super().__init__(message)
        self.best_reward = best_reward
        self.weights = weights


@dataclass(frozen=True)
class PolicySpec:
    """Architecture and conversion settings of one policy."""

    env: str
    sizes: tuple[int, ...]
    T: int = 1
    n: int = 8
    q: int = 8
    output_mode: str = "hdc"
    activation: str = "cq"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2:
            raise ValueError("a policy needs at least an input and an output layer")
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"output_mode must be one of {OUTPUT_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 1 <= self.T <= 64:
            raise ValueError(f"T must lie in 1..64, got {self.T}")
        if self.n < 2 or self.q < 2:
            raise ValueError("bit widths n and q must be >= 2")
        env = make_env(self.env)
        if self.sizes[0] != env.obs_dim or self.sizes[-1] != env.n_actions:
            raise ValueError(
                f"sizes {self.sizes} do not match {self.env} "
                f"(obs_dim={env.obs_dim}, n_actions={env.n_actions})"
            )

    @classmethod
    def preset(cls, name: str, **overrides) -> "PolicySpec":
        try:
            env, sizes = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
        return cls(env=env, sizes=sizes, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        return cls(**{**d, "sizes": tuple(d["sizes"])})


def cq_activation(x, T: int = 1):
    """Clamp to [0, 1] and snap down to the levels {0, 1/T, ..., 1}."""
    return np.floor(np.clip(x, 0.0, 1.0) * T) / T


def cq_grad(x, margin: float = 0.0):
    """Straight-through gradient of :func:`cq_activation`: 1 on ``[0, 1 + margin]``."""
    x = np.asarray(x)
    return ((x >= 0.0) & (x <= 1.0 + margin)).astype(float)


@dataclass
class MlpWeights:
    """Float weights ``[(w, b), ...]`` with ``w`` shaped (out, in)."""

    layers: list
    obs_scale: np.ndarray
    activation: str = "cq"
    T: int = 1

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(w.shape[0] for w, _ in self.layers)

    def copy(self) -> "MlpWeights":
        return MlpWeights(
            [(w.copy(), b.copy()) for w, b in self.layers], self.obs_scale.copy(), self.activation, self.T
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for w, b in self.layers:
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return h.hexdigest()


def init_weights(sizes, obs_scale, rng: np.random.Generator, activation="cq", T=1) -> MlpWeights:
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)))
    return MlpWeights(layers, np.asarray(obs_scale, dtype=float), activation, T)


def _activate(z, weights: MlpWeights, use_cq: bool):
    if weights.activation == "clamp":
        return np.clip(z, 0.0, 1.0)
    return cq_activation(z, weights.T) if use_cq else np.maximum(z, 0.0)


def _activation_grad(z, activation: str, margin: float):
    if activation == "relu":
        return (z > 0).astype(float)
    return cq_grad(z, margin if activation == "cq" else 0.0)


def forward_mlp(x, weights: MlpWeights, use_cq: bool | None = None, return_hidden: bool = False):
    """Action values for raw observations ``x`` of shape (in,) or (N, in).

    ``use_cq`` defaults to the activation the weights were trained with.
    With ``return_hidden`` the list of hidden activations is returned too.
    """
    if use_cq is None:
        use_cq = weights.activation == "cq"
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != weights.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != network input width {weights.sizes[0]}")
    h = x / weights.obs_scale
    hidden = []
    for w, b in weights.layers[:-1]:
        h = _activate(h @ w.T + b, weights, use_cq)
        hidden.append(h)
    w, b = weights.layers[-1]
    out = h @ w.T + b
    return (out, hidden) if return_hidden else out


def forward_backward(x, weights: MlpWeights, dout_fn, margin: float = 0.0):
    """One forward pass plus backprop of ``dout_fn(out) -> (loss, dL/dout)``.

    ``margin`` widens the CQ straight-through window to ``[0, 1 + margin]``.
    """
    use_cq = weights.activation == "cq"
    h = np.asarray(x, dtype=float) / weights.obs_scale
    inputs, pre = [], []
    for w, b in weights.layers[:-1]:
        z = h @ w.T + b
        inputs.append(h)
        pre.append(z)
        h = _activate(z, weights, use_cq)
    w_out, b_out = weights.layers[-1]
    out = h @ w_out.T + b_out
    loss, dout = dout_fn(out)
    grads = [None] * len(weights.layers)
    grads[-1] = (dout.T @ h, dout.sum(axis=0))
    delta = dout @ w_out
    for i in range(len(weights.layers) - 2, -1, -1):
        z = pre[i]
        delta = delta * _activation_grad(z, weights.activation, margin)
        grads[i] = (delta.T @ inputs[i], delta.sum(axis=0))
        if i:
            delta = delta @ weights.layers[i][0]
    return loss, grads


class Adam:
    def __init__(self, weights: MlpWeights, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights.layers]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights.layers]
        self.t = 0

    def step(self, weights: MlpWeights, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for layer, g, m, v in zip(weights.layers, grads, self.m, self.v):
            for p, gp, mp, vp in zip(layer, g, m, v):
                mp *= self.beta1
                mp += (1 - self.beta1) * gp
                vp *= self.beta2
                vp += (1 - self.beta2) * gp * gp
                p -= self.lr * (mp / c1) / (np.sqrt(vp / c2) + self.eps)


def huber(err, delta=1.0):
    a = np.abs(err)
    loss = np.where(a <= delta, 0.5 * err**2, delta * (a - 0.5 * delta))
    grad = np.clip(err, -delta, delta)
    return loss, grad


@dataclass
class DqnConfig:
    replay_capacity: int = 50_000
    batch_size: int = 64
    gamma: float = 0.99
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 5_000
    target_sync: int = 500
    learning_starts: int = 1_000
    max_episodes: int = 600
    max_total_steps: int = 200_000
    # per-episode step cap while training (None = environment cap)
    train_step_cap: int | None = None
    eval_every: int = 10
    eval_episodes: int = 20
    # stop as soon as a greedy evaluation reaches this mean reward
    target_reward: float | None = None
    # training-only +|velocity| bonus for MountainCar
    shaping: float = 0.0
    # the final policy must reach this on the evaluation seeds
    success_bar: float | None = None
    # CQ students distilled from the clamp teacher
    distill_episodes: int = 300
    distill_explore: float = 0.2
    distill_iters: int = 24_000
    distill_batch: int = 256
    distill_lr: float = 3e-4
    # weight of the advantage term relative to plain action-value regression
    advantage_weight: float = 100.0
    # weight of the action-grouping loss on the last hidden layer
    group_weight: float = 1.0
    select_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("eps_start", "eps_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


# Defaults tuned per environment; all remain overridable.
DEFAULT_DQN = {
    "cartpole": dict(train_step_cap=500, target_reward=1990.0, success_bar=1800.0, max_episodes=800),
    "acrobot": dict(target_reward=-80.0, success_bar=-115.0, max_episodes=400),
    "mountaincar": dict(
        shaping=10.0, target_reward=-120.0, success_bar=-160.0, max_episodes=800, eps_decay_steps=20_000
    ),
}


def default_dqn_config(env: str, **overrides) -> DqnConfig:
    return DqnConfig(**{**DEFAULT_DQN.get(env, {}), **overrides})


class ReplayBuffer:
    def __init__(self, capacity, obs_dim, rng):
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity)
        self.capacity = capacity
        self.size = 0
        self.pos = 0
        self.rng = rng

    def add(self, o, a, r, o2, term):
        i = self.pos
        self.obs[i], self.actions[i], self.rewards[i], self.next_obs[i], self.terminal[i] = o, a, r, o2, term
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n):
        idx = self.rng.integers(0, self.size, n)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminal[idx]


def greedy_policy(weights: MlpWeights):
    def act(obs):
        return np.argmax(forward_mlp(obs, weights), axis=-1)

    return act


def evaluate_mlp(weights, env: EnvModel, seeds, noise=None) -> float:
    return run_episodes(env, greedy_policy(weights), seeds, noise=noise).mean_reward


@dataclass
class TrainResult:
    weights: MlpWeights
    best_reward: float
    episodes: int
    total_steps: int
    seconds: float
    history: list = field(default_factory=list)


def _dqn_phase(weights, env, config, rng, act_rng, buf, eval_seeds, max_episodes, target_reward):
    """Run DQN updates on ``weights`` in place; return (best, best_weights, history, episodes, steps)."""
    target = weights.copy()
    opt = Adam(weights, lr=config.lr)
    step_cap = config.train_step_cap or env.max_steps
    gamma = config.gamma
    rows = np.arange(config.batch_size)
    best, best_weights, history = -np.inf, weights.copy(), []
    total = 0
    episode = 0

    def td_loss(actions, targets):
        def f(out):
            err = out[rows, actions] - targets
            loss, g = huber(err)
            dout = np.zeros_like(out)
            dout[rows, actions] = g / config.batch_size
            return loss.mean(), dout

        return f

    for episode in range(1, max_episodes + 1):
        internal = env.sample_initial(act_rng)
        obs = env.observe(internal)
        for _ in range(step_cap):
            eps = max(
                config.eps_end,
                config.eps_start - (config.eps_start - config.eps_end) * total / config.eps_decay_steps,
            )
            if act_rng.random() < eps:
                action = int(act_rng.integers(env.n_actions))
            else:
                action = int(np.argmax(forward_mlp(obs, weights)))
            internal = env.advance(internal, action)
            next_obs = env.observe(internal)
            terminated = bool(env.terminated(internal))
            reward = env.reward_per_step
            if config.shaping:
                reward += config.shaping * abs(float(next_obs[1]))
            buf.add(obs, action, reward, next_obs, float(terminated))
            obs = next_obs
            total += 1
            if buf.size >= max(config.learning_starts, config.batch_size):
                o, a, r, o2, term = buf.sample(config.batch_size)
                q_next = forward_mlp(o2, target).max(axis=1)
                targets = r + gamma * (1.0 - term) * q_next
                _, grads = forward_backward(o, weights, td_loss(a, targets))
                opt.step(weights, grads)
            if total % config.target_sync == 0:
                target = weights.copy()
            if terminated:
                break
        if episode % config.eval_every == 0 and buf.size > config.learning_starts:
            score = evaluate_mlp(weights, env, eval_seeds)
            history.append((weights.activation, episode, total, score))
            log.info("[%s T=%d] episode %d steps %d greedy %.2f", weights.activation, weights.T, episode, total, score)
            if score > best:
                best, best_weights = score, weights.copy()
            if target_reward is not None and score >= target_reward:
                break
        if total >= config.max_total_steps:
            break
    return best, best_weights, history, episode, total


def teacher_states(teacher: MlpWeights, env: EnvModel, episodes: int, explore: float, rng) -> np.ndarray:
    """Observations visited by the teacher's epsilon-greedy policy."""
    internal = np.stack([env.sample_initial(rng) for _ in range(episodes)])
    active = np.ones(episodes, dtype=bool)
    states = []
    for _ in range(env.max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        obs = env.observe(internal[idx])
        states.append(obs)
        actions = np.argmax(forward_mlp(obs, teacher), axis=-1)
        flip = rng.random(idx.size) < explore
        actions = np.where(flip, rng.integers(env.n_actions, size=idx.size), actions)
        internal[idx] = env.advance(internal[idx], actions)
        active[idx[env.terminated(internal[idx])]] = False
    return np.concatenate(states)


def distill(teacher: MlpWeights, T: int, env: EnvModel, config: DqnConfig, rng, score):
    """Regress a CQ(T) student onto the teacher's action values.

    The loss is the squared error of the action values plus
    ``advantage_weight`` times the squared error of their mean-free part,
    since action gaps are tiny next to the state value. A fixed +-1 readout
    ``R`` (hidden unit ``j`` votes for action ``j mod C``) adds a cross-entropy
    term on the teacher's greedy action; it shapes the last hidden layer into
    action-grouped codes, which nearest-label classification reads well.
    ``score(weights)`` is evaluated every ``select_every`` iterations and the
    best checkpoint is returned as ``(best, weights, history)``. The
    straight-through window is widened by one level (``margin = 1/T``). Stops
    early once the score reaches ``config.target_reward``.
    """
    x = teacher_states(teacher, env, config.distill_episodes, config.distill_explore, rng)
    y = forward_mlp(x, teacher)
    onehot = np.eye(env.n_actions)[np.argmax(y, axis=-1)]
    c, width = env.n_actions, teacher.sizes[-2]
    group = np.where(np.arange(width)[None, :] % c == np.arange(c)[:, None], 1.0, -1.0)
    student = teacher.copy()
    student.activation, student.T = "cq", T
    w_out, b_out = student.layers[-1]
    student.layers[-1] = (np.vstack([w_out, group]), np.concatenate([b_out, np.zeros(c)]))
    opt = Adam(student, lr=config.distill_lr)

    def head(weights):
        out = weights.copy()
        w, b = out.layers[-1]
        out.layers[-1] = (w[:c], b[:c])
        return out

    def loss_fn(target, hot):
        def f(out):
            q, z = out[:, :c], out[:, c:]
            g = 2 * (q - target) / q.size
            adv = (q - q.mean(-1, keepdims=True)) - (target - target.mean(-1, keepdims=True))
            ga = 2 * adv / adv.size
            g = g + config.advantage_weight * (ga - ga.mean(-1, keepdims=True))
            p = np.exp(z - z.max(-1, keepdims=True))
            p /= p.sum(-1, keepdims=True)
            gz = config.group_weight * (p - hot) / len(q)
            return 0.0, np.hstack([g, gz])

        return f

    candidate = head(student)
    best, best_weights = score(candidate), candidate
    history = [("distill", 0, best)]
    for it in range(1, config.distill_iters + 1):
        idx = rng.integers(0, len(x), config.distill_batch)
        _, grads = forward_backward(x[idx], student, loss_fn(y[idx], onehot[idx]), margin=1.0 / T)
        gw, gb = grads[-1]
        gw[c:] = 0.0
        gb[c:] = 0.0
        opt.step(student, grads)
        if it % config.select_every == 0:
            candidate = head(student)
            value = score(candidate)
            history.append(("distill", it, value))
            log.info("[distill T=%d] iteration %d score %.2f", T, it, value)
            if value > best:
                best, best_weights = value, candidate
        if config.target_reward is not None and best >= config.target_reward:
            break
    return best, best_weights, history


def train_dqn(
    spec: PolicySpec,
    config: DqnConfig,
    env: EnvModel | None = None,
    require_target: bool = True,
    score=None,
) -> TrainResult:
    """Train ``spec`` with DQN; returns the best checkpoint.

    CQ policies are trained in two stages: DQN with the plain clamp
    activation (the T -> infinity limit of CQ) produces a teacher, then
    :func:`distill` fits the CQ(T) student to it. Binary T=1 units trained
    by DQN from scratch start silent and the action values never become
    state dependent.

    Checkpoints are ranked by ``score(weights)``, by default the greedy
    mean reward on fixed evaluation seeds disjoint from the 0..99 test
    seeds. Raises :class:`TrainingError` when ``require_target`` is true and
    the final score misses ``config.success_bar``.
    """
    env = env or make_env(spec.env)
    rng = np.random.default_rng(config.seed)
    weights = init_weights(spec.sizes, env.obs_range, rng, spec.activation, spec.T)
    buf = ReplayBuffer(config.replay_capacity, env.obs_dim, rng)
    eval_seeds = [10_000 + config.seed * 1_000 + i for i in range(config.eval_episodes)]
    act_rng = np.random.default_rng([config.seed, 1])
    if score is None:
        def score(w):
            return evaluate_mlp(w, env, eval_seeds)
    t0 = time.perf_counter()
    if spec.activation == "cq":
        weights.activation = "clamp"
    best, weights, history, episodes, steps = _dqn_phase(
        weights, env, config, rng, act_rng, buf, eval_seeds, config.max_episodes, config.target_reward
    )
    if spec.activation == "cq":
        best, weights, hist = distill(weights, spec.T, env, config, np.random.default_rng([config.seed, 2]), score)
        history += hist
    else:
        best = score(weights)
    seconds = time.perf_counter() - t0
    if config.success_bar is not None and best < config.success_bar and require_target:
        raise TrainingError(
            f"{spec.env}: best score {best:.2f} is below the success bar {config.success_bar} "
            f"after {episodes} episodes",
            best,
            weights,
        )
    return TrainResult(weights, float(best), episodes, steps, seconds, history)


def convert(
    weights: MlpWeights,
    spec: PolicySpec,
    env: EnvModel | None = None,
    codebook_episodes: int = 200,
    codebook_seed: int = 0,
    explore: float = 0.3,
    collapse_time: bool = False,
):
    """Quantize CQ-trained weights into a spiking policy.

    The first layer sees n-bit inputs (the per-dimension normalizer is folded
    into the input quantizer), later layers see spikes worth 1.0 each. In HDC
    mode the dense output layer is replaced by a truncated majority-rule
    codebook gathered from rollouts of the dense spiking policy.
    """
    from .hdc import collect_codebook_samples, hygen, truncate
    from .quant import InputQuantSpec, level_scale, quantize_layer
    from .snn import ConvertedNet

    if isinstance(weights, ConvertedNet):
        raise ValueError("network is already quantized")
    if not isinstance(weights, MlpWeights):
        raise TypeError(f"expected MlpWeights, got {type(weights).__name__}")
    if weights.sizes != spec.sizes:
        raise ValueError(f"weights {weights.sizes} do not match spec {spec.sizes}")
    input_spec = InputQuantSpec(spec.n, tuple(weights.obs_scale))
    scale = level_scale(spec.n)
    layers = []
    for i, (w, b) in enumerate(weights.layers):
        if i == 0:
            layer = quantize_layer(w, b, spec.q, theta_in=float(scale), bias_scale=scale)
            layers.append(layer.with_accumulator(scale, spec.T))
        else:
            layer = quantize_layer(w, b, spec.q, theta_in=1.0)
            layers.append(layer.with_accumulator(spec.T, spec.T))
    meta = {"source_digest": weights.digest(), "activation": weights.activation}
    net = ConvertedNet(input_spec, layers, spec.T, "dense", None, collapse_time, meta)
    if spec.output_mode == "hdc":
        env = env or make_env(spec.env)
        samples = collect_codebook_samples(net, env, codebook_episodes, codebook_seed, explore)
        net = net.with_codebook(truncate(hygen(samples, n_classes=env.n_actions)))
    return net
