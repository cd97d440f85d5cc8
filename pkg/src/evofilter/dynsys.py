"""Constant-velocity system and its noise scenarios."""

import math
from dataclasses import dataclass, field

import numpy as np

SCENARIOS = ("gaussian", "half-gaussian", "delayed", "nonlinear")

# mean of |N(0, 1)|
HALF_NORMAL_MEAN = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True, eq=False)
class SystemModel:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    B: np.ndarray
    dt: float
    sigma_a: float
    sigma_z: float

    @property
    def n(self):
        return self.F.shape[0]


def make_system(dt=1.0, sigma_a=1.0, sigma_z=1.0):
    """Position/velocity model driven by white acceleration noise."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if sigma_a < 0 or sigma_z < 0:
        raise ValueError("noise standard deviations must be non-negative")
    F = np.array([[1.0, dt], [0.0, 1.0]])
    G = np.array([[dt * dt / 2.0], [dt]])
    Q = sigma_a**2 * (G @ G.T)
    R = sigma_z**2 * np.eye(2)
    return SystemModel(
        F=F,
        G=G,
        H=np.eye(2),
        Q=Q,
        R=R,
        B=np.zeros((2, 1)),
        dt=float(dt),
        sigma_a=float(sigma_a),
        sigma_z=float(sigma_z),
    )


def default_nonlinear_g(x):
    x = np.asarray(x, dtype=float).reshape(2)
    return np.array([0.05 * x[0] ** 3 - 2.0 * x[0], 0.1 * math.sin(x[1])])


@dataclass(frozen=True)
class Scenario:
    tag: str = "gaussian"
    delay_frac_range: tuple = (0.0, 1.0)
    g: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.tag not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.tag!r}; expected one of {SCENARIOS}")
        lo, hi = (float(v) for v in self.delay_frac_range)
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"delay range {self.delay_frac_range} must lie within [0, 1]")
        object.__setattr__(self, "delay_frac_range", (lo, hi))
        if self.tag == "nonlinear" and self.g is None:
            object.__setattr__(self, "g", default_nonlinear_g)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``states[k]`` and ``observations[k]`` are rows for steps 1..T."""

    states: np.ndarray
    observations: np.ndarray
    seed: object
    scenario: str = "gaussian"

    def __len__(self):
        return self.states.shape[0]


def _streams(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def simulate(sys, sc, T, seed, x0=None):
    """Simulate ``T`` steps starting from ``x0`` (default zero).

    Process, measurement and delay noise come from separate streams of
    ``seed``, so scenarios that differ only in how draws are used (for
    example the delayed case with a zero delay range) see the same draws.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    proc, meas, delay = _streams(seed)
    accel = sys.sigma_a * proc.standard_normal(T)
    noise = sys.sigma_z * meas.standard_normal((T, 2))
    if sc.tag == "half-gaussian":
        noise = np.abs(noise)
    lo, hi = sc.delay_frac_range
    frac = delay.uniform(lo, hi, T) if sc.tag == "delayed" else np.zeros(T)

    F, G, H = sys.F, sys.G[:, 0], sys.H
    x = np.zeros(2) if x0 is None else np.asarray(x0, dtype=float).reshape(2)
    states = np.empty((T, 2))
    obs = np.empty((T, 2))
    for k in range(T):
        prev = x
        base = sc.g(x) if sc.tag == "nonlinear" else x
        x = F @ base + G * accel[k]
        states[k] = x
        seen = (1.0 - frac[k]) * x + frac[k] * prev if sc.tag == "delayed" else x
        obs[k] = H @ seen + noise[k]
    return Trajectory(states, obs, seed, sc.tag)


def observation_mse(trajectories):
    """Mean over trajectories of the per-step squared observation error."""
    return float(
        np.mean([np.mean(np.sum((t.observations - t.states) ** 2, axis=1)) for t in trajectories])
    )
