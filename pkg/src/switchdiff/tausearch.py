"""Transition-point search.

One reverse pass records the batch-mean conditional score difference

    D_i = g^2(t_i) * (score(x, t_i, s0) - score(x, t_i, s1))

at every score-evaluation step i (the same steps the sampler uses: T, T-k,
..., k).  The transition point is the grid step tau minimising

    || sum_{i <= tau} D_i - sum_{i > tau} D_i ||_2,

found by one cumulative-sum scan.  Ties go to the smallest tau.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from switchdiff.errors import ConfigError, DomainError, InputError
from switchdiff.gmm import ConditionalGmm, fmt
from switchdiff.sampler import ode_step
from switchdiff.schedule import TimeGrid, VpSchedule
from switchdiff.seeding import derive_seed

DRIVES = ("average", "s0")


def score_difference(source, x, t: float, s0: int, s1: int, schedule: VpSchedule) -> np.ndarray:
    if not t > 0:
        raise DomainError("score difference needs t > 0")
    g2 = schedule.beta(t)
    return g2 * (source.score(x, t, s0) - source.score(x, t, s1))


@dataclass
class TauSearchTrace:
    s0: int
    s1: int
    eval_steps: np.ndarray  # ascending k, 2k, ..., T
    diffs: np.ndarray  # batch-mean D at eval_steps, (m, d)
    candidates: np.ndarray  # ascending 0, k, ..., T
    cumulative: np.ndarray  # sum_{i <= tau} D_i per candidate, (m + 1, d)
    objective: np.ndarray
    tau_star: int
    batch_size: int | None
    seed: int | None
    drive: str
    degenerate: bool

    @property
    def total(self) -> np.ndarray:
        return self.cumulative[-1]

    def objective_at(self, tau: int) -> float:
        return float(self.objective[np.searchsorted(self.candidates, tau)])

    def to_dict(self) -> dict:
        return {
            "s0": self.s0,
            "s1": self.s1,
            "tau_star": self.tau_star,
            "objective_min": float(self.objective.min()),
            "batch_size": self.batch_size,
            "seed": self.seed,
            "drive": self.drive,
            "degenerate": self.degenerate,
            "num_steps": int(self.candidates[-1]),
            "stride": int(self.candidates[1] - self.candidates[0]),
        }

    def write_csv(self, path) -> None:
        """One row per candidate step: step, D components (blank at step 0), objective."""
        d = self.diffs.shape[1]
        by_step = dict(zip(self.eval_steps.tolist(), self.diffs))
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", *[f"D{j}" for j in range(d)], "objective"])
            for tau, obj in zip(self.candidates.tolist(), self.objective):
                dv = by_step.get(tau)
                cells = [fmt(v) for v in dv] if dv is not None else [""] * d
                w.writerow([tau, *cells, fmt(obj)])


def objective_from_diffs(diffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative sums and objective for diffs ordered by ascending step."""
    d = diffs.shape[1]
    cumulative = np.vstack([np.zeros((1, d)), np.cumsum(diffs, axis=0)])
    objective = np.linalg.norm(2.0 * cumulative - cumulative[-1], axis=1)
    return cumulative, objective


def _search(source, x, s0, s1, grid: TimeGrid, drive: str):
    if drive not in DRIVES:
        raise ConfigError(f"drive must be one of {DRIVES}", "tausearch.drive")
    schedule = source.schedule
    if grid.num_steps != schedule.num_steps:
        raise ConfigError("grid and schedule disagree on T", "tausearch")
    T = grid.num_steps
    diffs = []
    for i, nxt in zip(grid.steps[:-1], grid.steps[1:]):
        t, dt = i / T, (nxt - i) / T
        sc0 = source.score(x, t, s0)
        sc1 = source.score(x, t, s1)
        diffs.append((schedule.beta(t) * (sc0 - sc1)).mean(axis=0))
        driving = 0.5 * (sc0 + sc1) if drive == "average" else sc0
        x = ode_step(x, t, dt, driving, schedule)
    diffs = np.array(diffs[::-1])  # ascending step order
    return diffs


def _finish(diffs, s0, s1, grid, batch_size, seed, drive) -> TauSearchTrace:
    cumulative, objective = objective_from_diffs(diffs)
    candidates = np.array(grid.steps[::-1])
    best = int(np.argmin(objective))  # first minimiser = smallest tau
    return TauSearchTrace(
        s0, s1,
        eval_steps=np.array(grid.eval_steps[::-1]),
        diffs=diffs,
        candidates=candidates,
        cumulative=cumulative,
        objective=objective,
        tau_star=int(candidates[best]),
        batch_size=batch_size,
        seed=seed,
        drive=drive,
        degenerate=bool(np.all(diffs == 0.0)),
    )


def find_tau(
    source, s0: int, s1: int, grid: TimeGrid, batch_size: int, seed: int, drive: str = "average"
) -> TauSearchTrace:
    """Single reverse pass from a batch of N(0, I) draws; see module docstring.

    ``drive`` selects the score that advances x: the symmetric average of the
    two conditional scores (default) or the s0 score alone.
    """
    if batch_size < 1:
        raise InputError("batch_size must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch_size, source.data_dim))
    diffs = _search(source, x, s0, s1, grid, drive)
    return _finish(diffs, s0, s1, grid, batch_size, seed, drive)


def expected_trace(gmm: ConditionalGmm, s0: int, s1: int, grid: TimeGrid, drive: str = "average"):
    """Infinite-batch reference for single-Gaussian attributes.

    Each conditional score is affine in x, so both the Euler recursion and
    D_i commute with expectation: running the search on the mean state
    (zero at t = 1) gives E[D_i] exactly.
    """
    if not gmm.is_single_gaussian():
        raise InputError("closed-form expectation needs one Gaussian component per attribute")
    diffs = _search(gmm, np.zeros((1, gmm.data_dim)), s0, s1, grid, drive)
    return _finish(diffs, s0, s1, grid, None, None, drive)


def objective_curve(trace: TauSearchTrace) -> list[tuple[int, float]]:
    return [(int(t), float(o)) for t, o in zip(trace.candidates, trace.objective)]


@dataclass
class StabilityRow:
    batch_size: int
    mean_tau: float
    std_tau: float
    taus: list[int]


def tau_stability(
    source, s0, s1, grid: TimeGrid, batch_sizes, repeats: int, seed: int, drive: str = "average"
) -> list[StabilityRow]:
    """Repeat the search ``repeats`` times per batch size with derived seeds."""
    rows = []
    for b in batch_sizes:
        taus = [
            find_tau(source, s0, s1, grid, b, derive_seed(seed, f"tau_stability/b={b}/r={r}"), drive).tau_star
            for r in range(repeats)
        ]
        rows.append(StabilityRow(int(b), float(np.mean(taus)), float(np.std(taus)), taus))
    return rows


def write_stability_csv(path, rows: list[StabilityRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch_size", "mean_tau", "std_tau"])
        for r in rows:
            w.writerow([r.batch_size, fmt(r.mean_tau), fmt(r.std_tau)])


def write_trace(trace: TauSearchTrace, json_path, csv_path, extra: dict | None = None) -> None:
    doc = trace.to_dict()
    if extra:
        doc.update(extra)
    Path(json_path).parent.mkdir(parents=True, exist_ok=True)
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    trace.write_csv(csv_path)
