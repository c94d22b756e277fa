"""Observation-noise injectors: Gaussian, uniform, Poisson and clock jitter.

Noise amplitude is ``k * scale`` (optionally times a per-dimension factor).
Poisson noise is mean-centred, and clock jitter is modelled as a first-order
extrapolation error ``(obs - prev_obs) * delta`` with a Gaussian timing
offset ``delta`` shared by all dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_KINDS = ("gaussian", "uniform", "poisson", "clock_jitter")

# k grids evaluated in the robustness sweeps
DEFAULT_K_GRIDS = {
    "gaussian": tuple(range(0, 10)),
    "uniform": tuple(range(3, 12)),
    "poisson": tuple(range(0, 10)),
    "clock_jitter": tuple(range(0, 9)),
}


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    k: int = 0
    scale: float = 0.01
    per_dim_scale: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.k < 0:
            raise ValueError(f"noise intensity k must be >= 0, got {self.k}")
        if not self.scale > 0:
            raise ValueError(f"noise scale must be > 0, got {self.scale}")

    @property
    def amplitude(self) -> float:
        return self.k * self.scale

    def with_k(self, k: int) -> "NoiseSpec":
        return NoiseSpec(self.kind, k, self.scale, self.per_dim_scale, self.seed)


def draw_raw(kind: str, rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-amplitude, zero-mean noise samples for ``kind``.

    For clock jitter the last axis of ``shape`` is collapsed to 1 (one timing
    offset per observation).
    """
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    if kind == "poisson":
        return rng.poisson(1.0, shape) - 1.0
    if kind == "clock_jitter":
        shape = tuple(np.atleast_1d(shape))
        return rng.standard_normal(shape[:-1] + (1,))
    raise ValueError(f"unknown noise kind {kind!r}")


def compose(obs: np.ndarray, prev_obs: np.ndarray, spec: NoiseSpec, raw: np.ndarray) -> np.ndarray:
    """Apply pre-drawn unit noise ``raw`` to ``obs`` according to ``spec``."""
    obs = np.asarray(obs, dtype=float)
    gain = spec.amplitude
    if spec.per_dim_scale is not None:
        gain = gain * np.asarray(spec.per_dim_scale, dtype=float)
    if spec.kind == "clock_jitter":
        return obs + (obs - np.asarray(prev_obs, dtype=float)) * raw * gain
    return obs + raw * gain


def apply_noise(obs, prev_obs, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite values")
    return compose(obs, prev_obs, spec, draw_raw(spec.kind, rng, obs.shape))


class NoiseInjector:
    """Seeded stateful injector; one per evaluation worker or episode."""

    def __init__(self, spec: NoiseSpec, seed: int | None = None):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed if seed is None else [spec.seed, seed])
        self.calls = 0

    def __call__(self, obs, prev_obs=None):
        self.calls += 1
        if prev_obs is None:
            prev_obs = obs
        return apply_noise(obs, prev_obs, self.spec, self.rng)

    def block(self, n_steps: int, dim: int) -> np.ndarray:
        """Pre-draw raw noise for ``n_steps`` consecutive observations."""
        return draw_raw(self.spec.kind, self.rng, (n_steps, dim))
