"""Command-line driver: ``switchdiff <command> --config <path> [--out <dir>] [--seed <int>]``.

Every command writes its artifacts and a ``manifest.json`` into the output
directory.  Exit status is 0 on success, 1 on a usage or input error and 2 on
a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from switchdiff import __version__
from switchdiff.config import SCHEMA_VERSION, RunConfig, load_config
from switchdiff.errors import NumericalError, SwitchDiffError
from switchdiff.evaluation import avg_loglik, cross_eval, frechet_details, pca_project
from switchdiff.gmm import LabeledSet, fmt
from switchdiff.pipeline import (
    SWEEP_COLUMNS,
    build_gmm,
    build_grid,
    build_schedule,
    build_source,
    resolve_tau,
    run_sweep,
    search_tau,
    sweep_taus,
    synthetic_pair,
)
from switchdiff.sampler import (
    MixPolicy,
    SwitchPolicy,
    sample_mixed,
    sample_sde,
    sample_switched,
    sample_vanilla,
)
from switchdiff.scorenet import DenoiserMlp, TrainConfig, save_checkpoint, train
from switchdiff.seeding import derive_seed
from switchdiff.tausearch import tau_stability, write_stability_csv, write_trace

log = logging.getLogger("switchdiff")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory plus bookkeeping for the manifest."""

    def __init__(self, command: str, cfg: RunConfig, config_path: Path):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config_hash = cfg.hash()
        self.inputs = {str(config_path): file_sha256(config_path)}
        self.outputs: list[Path] = []

    def read(self, path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = file_sha256(path)
        return path

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def stamp(self, doc: dict) -> dict:
        return {**doc, "schema_version": SCHEMA_VERSION, "config_hash": self.config_hash}

    def write_json(self, name: str, doc: dict) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(self.stamp(doc), indent=2, sort_keys=True) + "\n")
        return p

    def write_manifest(self) -> Path:
        outputs = {}
        for p in self.outputs:
            if p.is_dir():
                for f in sorted(p.rglob("*")):
                    if f.is_file():
                        outputs[str(f.relative_to(self.out))] = file_sha256(f)
            elif p.exists():
                outputs[str(p.relative_to(self.out))] = file_sha256(p)
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "schema_version": SCHEMA_VERSION,
            "seed": self.cfg.seed,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "outputs": outputs,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        p = self.out / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def _load_labeled(run: Run, paths) -> LabeledSet:
    return LabeledSet.concat(*[LabeledSet.from_csv(run.read(p)) for p in paths])


def _source(run: Run, gmm):
    if run.cfg.score_source.kind == "trained":
        run.read(run.cfg.score_source.checkpoint)
    return build_source(run.cfg, gmm)


# -- commands -------------------------------------------------------------


def cmd_generate(run: Run) -> None:
    cfg = run.cfg
    data = build_gmm(cfg).sample_data(cfg.generate.n, derive_seed(cfg.seed, "generate"))
    data.to_csv(run.path("real.csv"))


def cmd_train(run: Run) -> None:
    cfg, tb = run.cfg, run.cfg.train
    gmm = build_gmm(cfg)
    schedule = build_schedule(cfg)
    data = gmm.sample_data(tb.n_data, derive_seed(cfg.seed, "train/data"))
    model = DenoiserMlp(gmm.data_dim, seed=derive_seed(cfg.seed, "train/init"))
    tcfg = TrainConfig(
        lr=tb.lr, beta1=tb.beta1, beta2=tb.beta2, eps=tb.eps, batch_size=tb.batch_size,
        steps=tb.steps, seed=derive_seed(cfg.seed, "train/batches"), log_every=tb.log_every,
    )
    model, curve = train(model, data, tcfg, schedule)
    extra = {"config_hash": run.config_hash, "fingerprint": model.fingerprint()}
    save_checkpoint(run.path("checkpoint.json"), model, schedule, tcfg, extra)
    _write_rows(run.path("loss.csv"), ["step", "loss"], [(s, float(v)) for s, v in curve])


def cmd_sample(run: Run) -> None:
    cfg, sc = run.cfg, run.cfg.sampler
    gmm = build_gmm(cfg)
    source = _source(run, gmm)
    grid = build_grid(cfg)
    seed = derive_seed(cfg.seed, "sample")
    every = sc.trajectory_every
    if sc.strategy == "vanilla":
        result = sample_vanilla(source, sc.s, sc.n, grid, seed, every)
    elif sc.strategy == "switched":
        tau = resolve_tau(cfg, source, grid)
        result = sample_switched(source, SwitchPolicy(sc.s0, sc.s1, tau), sc.n, grid, seed, every)
    elif sc.strategy == "mixed":
        result = sample_mixed(source, MixPolicy(sc.p, sc.s0, sc.s1, sc.blend), sc.n, grid, seed, every)
    else:
        result = sample_sde(source, sc.s, sc.n, grid, seed, sc.diffusion_scale, every)
    traj = run.path("trajectory") if every else None
    result.export(run.path("samples.csv"), run.path("samples.json"), traj, run.stamp({}))


def cmd_find_tau(run: Run) -> None:
    cfg, ts = run.cfg, run.cfg.tausearch
    gmm = build_gmm(cfg)
    source = _source(run, gmm)
    grid = build_grid(cfg)
    trace = search_tau(cfg, source, grid)
    write_trace(trace, run.path("tau_trace.json"), run.path("tau_trace.csv"), run.stamp({}))
    if ts.stability_batch_sizes:
        rows = tau_stability(
            source, ts.s0, ts.s1, grid, ts.stability_batch_sizes, ts.stability_repeats,
            derive_seed(cfg.seed, "tau_stability"), ts.drive,
        )
        write_stability_csv(run.path("tau_stability.csv"), rows)


def cmd_sweep_tau(run: Run) -> None:
    cfg, sw = run.cfg, run.cfg.sweep
    gmm = build_gmm(cfg)
    source = _source(run, gmm)
    grid = build_grid(cfg)
    tau_star = search_tau(cfg, source, grid).tau_star if sw.include_tau_star else None
    taus = sweep_taus(cfg, grid, tau_star)
    rows = run_sweep(source, gmm, grid, taus, sw.n, sw.n_real, derive_seed(cfg.seed, "sweep"), cfg.eval.probe)
    _write_rows(run.path("sweep.csv"), SWEEP_COLUMNS, [r.values() for r in rows])
    run.write_json(
        "sweep.json",
        {"tau_star": tau_star, "rows": [dict(zip(SWEEP_COLUMNS, r.values())) for r in rows]},
    )


def cmd_evaluate(run: Run) -> None:
    cfg, ev = run.cfg, run.cfg.eval
    gmm = build_gmm(cfg)
    if ev.real_csv:
        real = _load_labeled(run, [ev.real_csv])
    else:
        real = gmm.sample_data(ev.n_real, derive_seed(cfg.seed, "evaluate/real"))
    if ev.synthetic_csv:
        syn = _load_labeled(run, ev.synthetic_csv)
    else:
        source = _source(run, gmm)
        grid = build_grid(cfg)
        sc = cfg.sampler
        tau = resolve_tau(cfg, source, grid) if sc.strategy == "switched" else None
        syn = synthetic_pair(
            source, sc.strategy, sc.n, grid, derive_seed(cfg.seed, "evaluate/synthetic"),
            tau=tau, p=sc.p, blend=sc.blend, diffusion_scale=sc.diffusion_scale,
        )
    syn_to_orig, orig_to_syn = cross_eval(syn, real, derive_seed(cfg.seed, "evaluate/probe"), ev.probe)
    run.write_json(
        "fairness.json",
        {"probe": ev.probe, "reports": [syn_to_orig.to_dict(), orig_to_syn.to_dict()]},
    )
    pairs = {
        "synthetic_s0_vs_s1": (syn.subset(0), syn.subset(1)),
        "real_s0_vs_s1": (real.subset(0), real.subset(1)),
        "synthetic_vs_real": (syn.points, real.points),
        "synthetic_vs_real_s0": (syn.subset(0), real.subset(0)),
        "synthetic_vs_real_s1": (syn.subset(1), real.subset(1)),
    }
    table = {}
    for name, (a, b) in pairs.items():
        res = frechet_details(a, b)
        table[name] = {"frechet": res.distance, "regularized": res.regularized}
    run.write_json(
        "distances.json",
        {
            "frechet": table,
            "avg_loglik": {"synthetic": avg_loglik(syn.points, gmm), "real": avg_loglik(real.points, gmm)},
        },
    )


def cmd_pca(run: Run) -> None:
    cfg = run.cfg
    gmm = build_gmm(cfg)
    reference = gmm.sample_data(cfg.pca.n_reference, derive_seed(cfg.seed, "pca/reference"))
    tags = ["reference"]
    targets = [reference.points]
    for p in cfg.pca.target_csv:
        tags.append(Path(p).stem)
        targets.append(_load_labeled(run, [p]).points)
    res = pca_project(reference, targets)
    if res.axes.shape[0] < 2:
        raise SwitchDiffError("PCA export needs data of dimension >= 2")
    with open(run.path("pca.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pc1", "pc2", "source_tag"])
        for tag, proj in zip(tags, res.projections):
            for row in proj:
                w.writerow([fmt(row[0]), fmt(row[1]), tag])
    run.write_json(
        "pca.json",
        {
            "mean": res.mean.tolist(),
            "axes": res.axes.tolist(),
            "eigenvalues": res.eigenvalues.tolist(),
            "iterations": res.iterations,
            "tags": tags,
        },
    )


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sample": cmd_sample,
    "find-tau": cmd_find_tau,
    "sweep-tau": cmd_sweep_tau,
    "evaluate": cmd_evaluate,
    "pca": cmd_pca,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="switchdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="global seed (overrides seed)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, args.seed, args.out)
        run = Run(args.command, cfg, args.config)
        COMMANDS[args.command](run)
        run.write_manifest()
    except NumericalError as exc:
        print(f"switchdiff: numerical failure: {exc}", file=sys.stderr)
        return 2
    except SwitchDiffError as exc:
        print(f"switchdiff: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"switchdiff: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
