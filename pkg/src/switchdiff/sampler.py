"""Reverse-time samplers: probability-flow ODE (default) and reverse SDE.

All samplers start from x_T ~ N(0, I) drawn from ``seed`` and take explicit
Euler steps down a ``TimeGrid``.  The step leaving grid point i evaluates the
score at t = i / T.  Conditioning strategies:

* vanilla  -- attribute s at every step;
* switched -- s0 while i > tau, s1 for i <= tau;
* mixed    -- blended conditioning (1 - p) * s0 + p * s1 at every step.

A score source is any object with ``score(x, t, s)``, ``data_dim``,
``schedule`` and ``fingerprint()``: a ``ConditionalGmm`` (exact scores) or a
``NetworkScore`` (trained denoiser).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from switchdiff.errors import ConfigError, InputError, NumericalError
from switchdiff.gmm import ATTRIBUTES, write_points_csv
from switchdiff.schedule import TimeGrid, VpSchedule


@dataclass(frozen=True)
class SwitchPolicy:
    s0: int
    s1: int
    tau: int

    def __post_init__(self):
        if self.s0 not in ATTRIBUTES or self.s1 not in ATTRIBUTES:
            raise ConfigError("s0 and s1 must be 0 or 1", "sampler.policy")
        if self.tau < 0:
            raise ConfigError("tau must be nonnegative", "sampler.tau")

    def attribute_at(self, step: int) -> int:
        return self.s0 if step > self.tau else self.s1

    def snapped(self, grid: TimeGrid) -> "SwitchPolicy":
        if self.tau > grid.num_steps:
            raise ConfigError(f"tau {self.tau} exceeds T={grid.num_steps}", "sampler.tau")
        return SwitchPolicy(self.s0, self.s1, grid.snap(self.tau))

    def to_dict(self) -> dict:
        return {"kind": "switched", "s0": self.s0, "s1": self.s1, "tau": self.tau}


@dataclass(frozen=True)
class MixPolicy:
    p: float = 0.6
    s0: int = 0
    s1: int = 1
    blend: str = "score"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("p must lie in [0, 1]", "sampler.p")
        if self.s0 not in ATTRIBUTES or self.s1 not in ATTRIBUTES:
            raise ConfigError("s0 and s1 must be 0 or 1", "sampler.policy")
        if self.blend not in ("score", "embedding"):
            raise ConfigError("blend must be 'score' or 'embedding'", "sampler.blend")

    def to_dict(self) -> dict:
        return {"kind": "mixed", "p": self.p, "s0": self.s0, "s1": self.s1, "blend": self.blend}


@dataclass
class SampleRun:
    points: np.ndarray
    assigned_attribute: int
    seed: int
    grid: TimeGrid
    policy: dict
    source: str
    trajectory: list[tuple[int, np.ndarray]] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "grid": self.grid.to_dict(),
            "policy": self.policy,
            "assigned_attribute": self.assigned_attribute,
            "score_source": self.source,
            "n": self.n,
        }

    def export(self, csv_path, json_path=None, trajectory_dir=None, extra: dict | None = None):
        labels = np.full(self.n, self.assigned_attribute)
        write_points_csv(csv_path, self.points, labels, label_column="s_assigned")
        if json_path is not None:
            doc = self.sidecar()
            if extra:
                doc.update(extra)
            Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if trajectory_dir is not None and self.trajectory:
            for step, pts in self.trajectory:
                write_points_csv(Path(trajectory_dir) / f"step_{step:06d}.csv", pts)


def ode_step(x, t: float, dt: float, score, schedule: VpSchedule) -> np.ndarray:
    """One explicit Euler step of dx = (f - 0.5 g^2 score) dt with dt < 0."""
    if not dt < 0:
        raise InputError("reverse-time step requires dt < 0")
    f, g2 = schedule.drift_diffusion(x, t)
    x_next = x + (f - 0.5 * g2 * score) * dt
    if not np.all(np.isfinite(x_next)):
        raise NumericalError(f"non-finite state after ODE step at t={t:.6g} (dt={dt:.3g})")
    return x_next


def sde_step(x, t, dt, score, schedule: VpSchedule, noise, diffusion_scale=1.0) -> np.ndarray:
    """Euler-Maruyama step of dx = (f - g^2 score) dt + g dW_bar."""
    if not dt < 0:
        raise InputError("reverse-time step requires dt < 0")
    f, g2 = schedule.drift_diffusion(x, t)
    g2 = g2 * diffusion_scale**2
    x_next = x + (f - g2 * score) * dt + np.sqrt(g2 * abs(dt)) * noise
    if not np.all(np.isfinite(x_next)):
        raise NumericalError(f"non-finite state after SDE step at t={t:.6g} (dt={dt:.3g})")
    return x_next


def _integrate(source, n, grid: TimeGrid, seed, score_at, record_every=None, sde=None):
    schedule = source.schedule
    if grid.num_steps != schedule.num_steps:
        raise ConfigError(
            f"grid T={grid.num_steps} disagrees with schedule T={schedule.num_steps}", "sampler"
        )
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, source.data_dim))
    traj = [] if record_every else None
    if n == 0:
        return x, traj
    T = grid.num_steps
    for i, nxt in zip(grid.steps[:-1], grid.steps[1:]):
        if traj is not None and i % record_every == 0:
            traj.append((i, x.copy()))
        t, dt = i / T, (nxt - i) / T
        sc = score_at(x, t, i)
        if sde is None:
            x = ode_step(x, t, dt, sc, schedule)
        else:
            x = sde_step(x, t, dt, sc, schedule, rng.standard_normal(x.shape), sde)
    if traj is not None:
        traj.append((0, x.copy()))
    return x, traj


def sample_vanilla(source, s: int, n: int, grid: TimeGrid, seed: int, record_every=None) -> SampleRun:
    if s not in ATTRIBUTES:
        raise InputError(f"attribute must be 0 or 1, got {s!r}")
    x, traj = _integrate(source, n, grid, seed, lambda x, t, i: source.score(x, t, s), record_every)
    return SampleRun(x, s, seed, grid, {"kind": "vanilla", "s": s}, source.fingerprint(), traj)


def sample_switched(
    source, policy: SwitchPolicy, n: int, grid: TimeGrid, seed: int, record_every=None
) -> SampleRun:
    """Condition on s0 for steps above tau and on s1 from tau down (tau itself uses s1)."""
    policy = policy.snapped(grid)

    def score_at(x, t, i):
        return source.score(x, t, policy.attribute_at(i))

    x, traj = _integrate(source, n, grid, seed, score_at, record_every)
    return SampleRun(x, policy.s1, seed, grid, policy.to_dict(), source.fingerprint(), traj)


def sample_mixed(source, mix: MixPolicy, n: int, grid: TimeGrid, seed: int, record_every=None) -> SampleRun:
    """Blend the two conditionings at every step; labelled with s1."""
    if mix.p == 0.0 or mix.p == 1.0:
        s = mix.s1 if mix.p == 1.0 else mix.s0

        def score_at(x, t, i):
            return source.score(x, t, s)

    elif mix.blend == "embedding":
        if not hasattr(source, "mixed_embedding_score"):
            raise ConfigError("embedding blend needs a trained score source", "sampler.blend")

        def score_at(x, t, i):
            return source.mixed_embedding_score(x, t, mix.s0, mix.s1, mix.p)

    else:

        def score_at(x, t, i):
            return (1.0 - mix.p) * source.score(x, t, mix.s0) + mix.p * source.score(x, t, mix.s1)

    x, traj = _integrate(source, n, grid, seed, score_at, record_every)
    return SampleRun(x, mix.s1, seed, grid, mix.to_dict(), source.fingerprint(), traj)


def sample_sde(
    source, s: int, n: int, grid: TimeGrid, seed: int, diffusion_scale: float = 1.0, record_every=None
) -> SampleRun:
    """Reverse SDE by Euler-Maruyama. ``diffusion_scale`` multiplies g(t); 0 leaves drift only."""
    if s not in ATTRIBUTES:
        raise InputError(f"attribute must be 0 or 1, got {s!r}")
    x, traj = _integrate(
        source, n, grid, seed, lambda x, t, i: source.score(x, t, s), record_every, sde=diffusion_scale
    )
    policy = {"kind": "sde", "s": s, "diffusion_scale": diffusion_scale}
    return SampleRun(x, s, seed, grid, policy, source.fingerprint(), traj)
