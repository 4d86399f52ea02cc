"""Experiment procedures shared by the CLI, the tests and notebooks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from switchdiff.config import RunConfig
from switchdiff.errors import ConfigError
from switchdiff.evaluation import avg_loglik, cross_eval, frechet_distance
from switchdiff.gmm import ConditionalGmm, LabeledSet, component
from switchdiff.sampler import (
    MixPolicy,
    SwitchPolicy,
    sample_mixed,
    sample_sde,
    sample_switched,
    sample_vanilla,
)
from switchdiff.schedule import TimeGrid, VpSchedule, make_grid
from switchdiff.scorenet import NetworkScore, load_checkpoint
from switchdiff.seeding import derive_seed
from switchdiff.tausearch import find_tau

log = logging.getLogger(__name__)


def build_schedule(cfg: RunConfig) -> VpSchedule:
    return VpSchedule(cfg.schedule.beta_min, cfg.schedule.beta_max, cfg.schedule.num_steps)


def build_gmm(cfg: RunConfig) -> ConditionalGmm:
    comps = {
        int(s): tuple(component(c.weight, c.mean, c.cov) for c in cfg.gmm.attributes[s])
        for s in cfg.gmm.attributes
    }
    if len(cfg.gmm.prior) != 2:
        raise ConfigError("prior needs two entries", "gmm.prior")
    return ConditionalGmm(comps, tuple(cfg.gmm.prior), build_schedule(cfg))


def build_source(cfg: RunConfig, gmm: ConditionalGmm | None = None):
    gmm = gmm or build_gmm(cfg)
    if cfg.score_source.kind == "analytic":
        return gmm
    model, schedule, _doc = load_checkpoint(cfg.score_source.checkpoint)
    if schedule != gmm.schedule:
        raise ConfigError("checkpoint schedule differs from config schedule", "score_source.checkpoint")
    if model.data_dim != gmm.data_dim:
        raise ConfigError("checkpoint data_dim differs from gmm", "score_source.checkpoint")
    return NetworkScore(model, schedule)


def build_grid(cfg: RunConfig) -> TimeGrid:
    return make_grid(cfg.schedule.num_steps, cfg.sampler.stride)


def synthetic_pair(
    source,
    strategy: str,
    n: int,
    grid: TimeGrid,
    seed: int,
    *,
    tau: int | None = None,
    p: float = 0.6,
    blend: str = "score",
    diffusion_scale: float = 1.0,
) -> LabeledSet:
    """Two-attribute synthetic set: one run labelled 1 and one labelled 0.

    For ``switched`` the runs are 0->1 (labelled 1) and 1->0 (labelled 0); for
    ``mixed`` the blends lean toward 1 and toward 0 respectively.
    """
    seed_a = derive_seed(seed, "pair/label=1")
    seed_b = derive_seed(seed, "pair/label=0")
    if strategy == "vanilla":
        a = sample_vanilla(source, 1, n, grid, seed_a)
        b = sample_vanilla(source, 0, n, grid, seed_b)
    elif strategy == "switched":
        if tau is None:
            raise ConfigError("switched strategy needs tau", "sampler.tau")
        a = sample_switched(source, SwitchPolicy(0, 1, tau), n, grid, seed_a)
        b = sample_switched(source, SwitchPolicy(1, 0, tau), n, grid, seed_b)
    elif strategy == "mixed":
        a = sample_mixed(source, MixPolicy(p, 0, 1, blend), n, grid, seed_a)
        b = sample_mixed(source, MixPolicy(p, 1, 0, blend), n, grid, seed_b)
    elif strategy == "sde":
        a = sample_sde(source, 1, n, grid, seed_a, diffusion_scale)
        b = sample_sde(source, 0, n, grid, seed_b, diffusion_scale)
    else:
        raise ConfigError(f"unknown strategy {strategy!r}", "sampler.strategy")
    return LabeledSet(
        np.vstack([a.points, b.points]),
        np.concatenate([np.full(a.n, a.assigned_attribute), np.full(b.n, b.assigned_attribute)]),
        seed,
    )


def search_tau(cfg: RunConfig, source, grid: TimeGrid):
    ts = cfg.tausearch
    return find_tau(source, ts.s0, ts.s1, grid, ts.batch_size, derive_seed(cfg.seed, "find_tau"), ts.drive)


def resolve_tau(cfg: RunConfig, source, grid: TimeGrid) -> int:
    """Configured tau snapped to the grid, or the searched transition point when unset."""
    if cfg.sampler.tau is not None:
        return SwitchPolicy(0, 1, cfg.sampler.tau).snapped(grid).tau
    return search_tau(cfg, source, grid).tau_star


SWEEP_COLUMNS = ("tau", "ber_syn_to_real", "ber_real_to_syn", "frechet_s0s1", "avg_loglik")


@dataclass
class SweepRow:
    tau: int
    ber_syn_to_real: float
    ber_real_to_syn: float
    frechet_s0s1: float
    avg_loglik: float

    def values(self):
        return [getattr(self, c) for c in SWEEP_COLUMNS]


def sweep_taus(cfg: RunConfig, grid: TimeGrid, tau_star: int | None = None) -> list[int]:
    if cfg.sweep.taus is not None:
        taus = [grid.snap(int(t)) for t in cfg.sweep.taus]
    else:
        raw = np.linspace(0, grid.num_steps, cfg.sweep.num_points)
        taus = [grid.snap(int(round(t))) for t in raw]
    if tau_star is not None:
        taus.append(tau_star)
    return sorted(set(taus))


def run_sweep(
    source,
    gmm: ConditionalGmm,
    grid: TimeGrid,
    taus,
    n: int,
    n_real: int,
    seed: int,
    probe: str = "linear",
) -> list[SweepRow]:
    """Switched pair at every tau, scored against one shared draw of real data.

    Each tau owns the derived seed ``sweep/tau=<tau>``.
    """
    real = gmm.sample_data(n_real, derive_seed(seed, "sweep/real"))
    rows = []
    for tau in taus:
        pair = synthetic_pair(source, "switched", n, grid, derive_seed(seed, f"sweep/tau={tau}"), tau=tau)
        syn_to_real, real_to_syn = cross_eval(pair, real, derive_seed(seed, "sweep/probe"), probe)
        rows.append(
            SweepRow(
                int(tau),
                syn_to_real.ber,
                real_to_syn.ber,
                frechet_distance(pair.subset(1), pair.subset(0)),
                avg_loglik(pair.points, gmm),
            )
        )
        log.info("tau=%d ber(syn->real)=%.3f", tau, syn_to_real.ber)
    return rows
