"""Variance-preserving noise schedule and the discrete sampling grid.

Forward process on continuous time t in [0, 1]:

    dx = -0.5 * beta(t) * x dt + sqrt(beta(t)) dW

with the linear rate beta(t) = beta_min + t * (beta_max - beta_min).  Its
marginals are x_t = alpha(t) * x_0 + sigma(t) * eps with
alpha(t) = exp(-0.5 * int_0^t beta) and alpha^2 + sigma^2 = 1.

Discrete algorithms index time by integer steps i in {0, ..., T}; the clock
conversion is t_i = i / T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from switchdiff.errors import ConfigError, DomainError, InputError, NotFoundError


def _check_unit(t):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"t must lie in [0, 1], got {t!r}")
    return arr


@dataclass(frozen=True)
class VpSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    num_steps: int = 1000

    def __post_init__(self):
        if not (0.0 < self.beta_min <= self.beta_max):
            raise ConfigError("require 0 < beta_min <= beta_max", "schedule")
        if int(self.num_steps) != self.num_steps or self.num_steps < 1:
            raise ConfigError("num_steps must be a positive integer", "schedule.num_steps")

    def beta(self, t):
        t = _check_unit(t)
        out = self.beta_min + t * (self.beta_max - self.beta_min)
        return float(out) if out.ndim == 0 else out

    def integrated_beta(self, t):
        """Exact integral of beta over [0, t]."""
        t = _check_unit(t)
        out = self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
        return float(out) if out.ndim == 0 else out

    def marginal_coeffs(self, t):
        """Return (alpha(t), sigma(t)) from the closed-form integral."""
        big_b = np.asarray(self.integrated_beta(t))
        alpha = np.exp(-0.5 * big_b)
        # -expm1 keeps sigma accurate near t = 0 where 1 - alpha^2 cancels
        sigma = np.sqrt(-np.expm1(-big_b))
        if alpha.ndim == 0:
            return float(alpha), float(sigma)
        return alpha, sigma

    def alpha(self, t):
        return self.marginal_coeffs(t)[0]

    def sigma(self, t):
        return self.marginal_coeffs(t)[1]

    def drift_diffusion(self, x, t):
        """Forward drift f(x, t) = -0.5 beta(t) x and squared diffusion g^2 = beta(t)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InputError("x contains non-finite values")
        b = self.beta(t)
        return -0.5 * b * x, b

    def snr(self, t):
        """Signal-to-noise ratio alpha^2 / sigma^2 = 1 / expm1(int beta)."""
        t_arr = _check_unit(t)
        if np.any(t_arr <= 0.0):
            raise DomainError("snr is infinite at t = 0")
        out = 1.0 / np.expm1(np.asarray(self.integrated_beta(t_arr)))
        return float(out) if np.ndim(out) == 0 else out

    def snr_crossing(self, level: float, tol: float = 1e-9) -> float:
        """Find the unique t in (0, 1] where snr(t) == level, by bisection."""
        if not (level > 0.0) or not math.isfinite(level):
            raise DomainError(f"SNR level must be positive and finite, got {level!r}")
        lowest = self.snr(1.0)
        if level < lowest:
            raise NotFoundError(
                f"SNR level {level:g} is below snr(1) = {lowest:g}; no crossing in (0, 1]"
            )
        lo, hi = 0.0, 1.0  # snr(lo) > level >= snr(hi)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.snr(mid) > level:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def step_time(self, step: int) -> float:
        if not 0 <= step <= self.num_steps:
            raise DomainError(f"step {step} outside [0, {self.num_steps}]")
        return step / self.num_steps

    def to_dict(self) -> dict:
        return {"beta_min": self.beta_min, "beta_max": self.beta_max, "num_steps": self.num_steps}


@dataclass(frozen=True)
class TimeGrid:
    """Descending step indices {T, T-k, ..., k, 0}."""

    num_steps: int
    stride: int
    steps: tuple[int, ...]

    @property
    def eval_steps(self) -> tuple[int, ...]:
        """Steps at which a sampler evaluates scores (every grid point except 0)."""
        return self.steps[:-1]

    def __len__(self):
        return len(self.steps)

    def contains(self, step: int) -> bool:
        return 0 <= step <= self.num_steps and step % self.stride == 0

    def snap(self, step: int) -> int:
        """Nearest grid point at or below ``step`` (toward 0)."""
        if not 0 <= step <= self.num_steps:
            raise DomainError(f"step {step} outside [0, {self.num_steps}]")
        return (step // self.stride) * self.stride

    def to_dict(self) -> dict:
        return {"num_steps": self.num_steps, "stride": self.stride}


def make_grid(num_steps: int, stride: int) -> TimeGrid:
    if num_steps < 1 or stride < 1:
        raise ConfigError("num_steps and stride must be positive", "grid")
    if num_steps % stride != 0:
        raise ConfigError(f"stride {stride} does not divide T={num_steps}", "grid.stride")
    return TimeGrid(num_steps, stride, tuple(range(num_steps, -1, -stride)))
