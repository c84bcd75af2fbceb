"""Command line entry point: ``gmoe {census,train,generate,eval,registry-dump}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from gmoe import __version__
from gmoe.census import MomentVector, PartialGraphlet, dataset_targets, statistic_set
from gmoe.config import ExperimentConfig, load_config, preset_names, preset_path
from gmoe.errors import ConfigError, DataError, GmoeError
from gmoe.evaluation import (
    EvalReport,
    ProbeConfig,
    probe_from_features,
    summarize,
    summary_difference,
    summary_mmd,
    write_degree_counts,
)
from gmoe.generator import Architecture, GeneratorParams, init_params
from gmoe.graphs import Graph, build_registry
from gmoe.io import load_tu_dataset, read_edgelist, read_header, write_edgelist, write_tu_dataset
from gmoe.kernels import KernelSpec, parse_kernel
from gmoe.sampler import LazySample, SbmSpec, empty_graph, generate, iter_generate, sample_sbm
from gmoe.trainer import Problem, TrainConfig, make_weights, train

log = logging.getLogger("gmoe")

# fixed order of child random streams drawn from the experiment seed
STREAMS = ("dataset", "census", "init", "train", "generate", "eval")


def streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


# ---------------------------------------------------------------------------
# experiment assembly


def load_dataset(cfg: ExperimentConfig, rng) -> Sequence[Graph]:
    exp = cfg["experiment"]
    ds = exp["dataset"]
    size = exp["dataset_size"]
    if ds == "synthetic:empty":
        return [empty_graph(exp["n_nodes"] or 10) for _ in range(size)]
    if ds in ("synthetic:sbm2", "synthetic:sbm4"):
        spec = SbmSpec.two_block(exp["n_nodes"] or 80) if ds.endswith("2") else SbmSpec.four_block(exp["n_nodes"] or 16)
        # drawn on demand: large SBM graphs do not fit in memory all at once
        return LazySample(lambda r: sample_sbm(spec, r), size, rng, spec.n_nodes)
    if ds.startswith("tu:"):
        parts = ds.split(":")
        if len(parts) not in (3, 4):
            raise ConfigError("[experiment] dataset: expected tu:<dir>:<name>[:label]")
        label = int(parts[3]) if len(parts) == 4 else None
        return load_tu_dataset(parts[1], parts[2], label)
    if ds.startswith("edgelist:"):
        return read_edgelist(ds.split(":", 1)[1])
    raise ConfigError(f"[experiment] dataset: unknown source {ds!r}")


class Experiment:
    """Resolved objects shared by the subcommands."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rngs = streams(cfg.seed)
        m = cfg["model"]
        self.kernel_name = m["kernel"]
        kernel, order = parse_kernel(m["kernel"], m["degree"], m["eps"], m["eps_z"])
        if order is None:
            raise ConfigError("[model] kernel: include the graphlet order, e.g. DP4 or RBF3")
        self.kernel: KernelSpec = kernel
        self.order = order
        self.stars = tuple(PartialGraphlet.star(s) for s in cfg["census"]["stars"])
        probe = cfg["eval"]["probe_order"] or order + 1
        self.probe_order = probe
        self.reg = build_registry(max(6, order, probe, *(s.order for s in self.stars)))
        self._graphs = None
        self.out = Path(cfg["experiment"]["output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def provenance(self) -> dict:
        return self.cfg.provenance()

    @property
    def graphs(self) -> Sequence[Graph]:
        if self._graphs is None:
            self._graphs = load_dataset(self.cfg, self.rngs["dataset"])
            if not len(self._graphs):
                raise DataError("dataset is empty")
        return self._graphs

    def vertex_counts(self) -> set[int]:
        known = getattr(self.graphs, "num_vertices", None)
        return {known} if known is not None else {g.num_vertices for g in self.graphs}

    @property
    def n(self) -> int:
        return self.cfg["experiment"]["n_nodes"] or max(self.vertex_counts())

    def targets(self) -> MomentVector:
        path = self.out / "targets.csv"
        stats = statistic_set(self.reg, self.order, self.stars)
        if path.exists() and read_header(path).get("config_hash") == self.cfg.digest():
            return MomentVector.from_csv(path, stats)
        c = self.cfg["census"]
        t = dataset_targets(
            self.graphs, self.reg, self.order, n=self.n, J=c["samples"], partials=self.stars,
            rng=self.rngs["census"], exact_limit=c["exact_limit"], threads=self.cfg["experiment"]["threads"],
        )
        t.to_csv(path, self.reg, self.provenance)
        return t

    def architecture(self) -> Architecture:
        m = self.cfg["model"]
        train_q = m["train_q"]
        if train_q is None:
            # fixed-size datasets have a node fraction of exactly one
            train_q = len(self.vertex_counts()) > 1
        return Architecture(
            n_nodes=self.n, dim=m["dim"], input_dim=m["input_dim"], hidden=m["hidden"], head=m["head"],
            train_q=bool(train_q), communities=m["communities"], eps_z=m["eps_z"],
        )

    def train_config(self) -> TrainConfig:
        t = self.cfg["train"]
        return TrainConfig(
            order=self.order, star_orders=tuple(s.order for s in self.stars), weights=t["weights"], delta=t["delta"],
            L=t["L"], M=t["M"], draws_per_step=t["draws_per_step"], gammas=t["gammas"], thresholds=t["thresholds"],
            threshold_mode=t["threshold_mode"], max_iters=t["max_iters"], eval_every=t["eval_every"],
            eval_noise=t["eval_noise"], eval_subsets=t["eval_subsets"], penalty_lambda=t["penalty_lambda"],
            penalty_kappa=t["penalty_kappa"], revert_factor=t["revert_factor"], max_assignments=t["max_assignments"],
            seed=self.cfg.seed,
        )

    def checkpoint_extra(self) -> dict:
        return {**self.provenance, "kernel_name": self.kernel_name, "order": self.order, "n": self.n}


def load_checkpoint(path) -> tuple[GeneratorParams, KernelSpec, dict]:
    params, kdict, extra = GeneratorParams.load(path)
    if kdict is None:
        raise DataError(f"{path}: checkpoint has no kernel")
    return params, KernelSpec(**kdict), extra


# ---------------------------------------------------------------------------
# subcommands


def cmd_census(exp: Experiment, args) -> int:
    t = exp.targets()
    print(f"wrote {exp.out / 'targets.csv'} ({len(t.values)} statistics, {len(exp.graphs)} graphs)")
    for label, _, value in t.rows(exp.reg):
        print(f"{label}\t{value:.6g}")
    return 0


def cmd_train(exp: Experiment, args) -> int:
    from gmoe.plotting import trace_figure

    targets = exp.targets()
    cfg = exp.train_config()
    problem = Problem(exp.reg, exp.kernel, targets, exp.n, make_weights(targets, cfg.weights, cfg.delta))
    params = init_params(exp.architecture(), exp.rngs["init"])
    trace_path = exp.out / "trace.csv"
    fh = open(trace_path, "w", newline="")
    for k, v in exp.provenance.items():
        fh.write(f"# {k}={v}\n")
    writer = csv.writer(fh)
    writer.writerow(["iteration", "estimated_U", "phase", "wall_seconds"])

    def sink(row):
        writer.writerow([row.iteration, repr(row.estimated_U), row.phase, f"{row.wall_seconds:.3f}"])
        fh.flush()

    def on_phase(phase, p, it):
        p.save(exp.out / f"checkpoint_phase{phase}.npz", exp.kernel, {**exp.checkpoint_extra(), "iteration": it})

    try:
        res = train(params, problem, cfg, exp.rngs["train"], progress=sink, on_phase=on_phase)
    finally:
        fh.close()
    extra = {**exp.checkpoint_extra(), "converged": res.converged, "iterations": res.iterations}
    res.params.save(exp.out / "checkpoint.npz", exp.kernel, extra)
    trace_figure(exp.out / "trace.png", [r.iteration for r in res.trace], [r.estimated_U for r in res.trace],
                 [r.phase for r in res.trace])
    status = "converged" if res.converged else "stopped at max_iters (best parameters kept)"
    print(f"{status} after {res.iterations} iterations; best estimated U = {res.best_U:.3e}")
    print(f"wrote {exp.out / 'checkpoint.npz'} and {trace_path}")
    return 0


def _checkpoint_path(exp: Experiment, args) -> Path:
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else exp.out / "checkpoint.npz"
    if not path.exists():
        raise DataError(f"checkpoint {path} not found; run 'gmoe train' first")
    return path


def cmd_generate(exp: Experiment, args) -> int:
    params, kernel, _ = load_checkpoint(_checkpoint_path(exp, args))
    count = args.count or exp.cfg["generate"]["count"]
    n_nodes = exp.cfg["generate"]["n_nodes"]
    graphs = iter_generate(params, kernel, count, exp.rngs["generate"], n_nodes)
    if args.format == "tu":
        write_tu_dataset(exp.out, "generated", graphs)
        print(f"wrote {count} graphs as {exp.out / 'generated_A.txt'}")
    else:
        path = Path(args.output) if args.output else exp.out / "generated.txt"
        write_edgelist(path, graphs, exp.provenance)
        print(f"wrote {count} graphs to {path}")
    return 0


def cmd_eval(exp: Experiment, args) -> int:
    from gmoe.plotting import degree_counts_figure, graphlet_bars_figure

    e = exp.cfg["eval"]
    targets = exp.targets()
    rng = exp.rngs["eval"]
    n_nodes = exp.cfg["generate"]["n_nodes"]
    if args.graphs:
        gen = read_edgelist(args.graphs)
        n_gen, count = max(g.num_vertices for g in gen), len(gen)
    else:
        params, kernel, _ = load_checkpoint(_checkpoint_path(exp, args))
        community = params.arch.head == "community"
        n_gen = n_nodes if community and n_nodes else params.arch.n_nodes
        count = e["count"]
        # lazy, so each generated graph is dropped once summarized
        gen = iter_generate(params, kernel, count, rng, n_nodes)
    ref = exp.graphs
    # the reference side is a random subset as large as the generated sample
    pick = np.sort(rng.permutation(len(ref))[:count])
    probe_order = exp.probe_order if e["probe"] else None
    kw = dict(probe_order=probe_order, mmd_features=e["mmd"], J=e["samples"])
    s_gen = summarize(gen, exp.reg, rng, exp.order, n_gen, exp.stars, **kw)
    s_ref = summarize((ref[i] for i in pick), exp.reg, rng, **kw)
    diff = summary_difference(s_gen, targets)
    report = EvalReport(
        diff.total, diff.max, n_generated=len(s_gen), n_reference=len(s_ref),
        seeds={"seed": exp.cfg.seed}, meta=exp.provenance, difference=diff,
    )
    if e["mmd"]:
        report.mmd_degree = summary_mmd(s_ref, s_gen, "degree", e["sigma"])
        report.mmd_clustering = summary_mmd(s_ref, s_gen, "clustering", e["sigma"])
        report.mmd_orbit = summary_mmd(s_ref, s_gen, "orbit", e["sigma"])
    if e["probe"]:
        report.classifier_rate = probe_from_features(s_ref.probe, s_gen.probe, ProbeConfig(seeds=e["probe_seeds"]), rng)
    report.write_json(exp.out / "report.json")
    report.write_csv(exp.out / "report.csv")
    write_degree_counts(exp.out / "degree_hist_generated.csv", s_gen.pooled_degree_counts(), exp.provenance)
    write_degree_counts(exp.out / "degree_hist_reference.csv", s_ref.pooled_degree_counts(), exp.provenance)
    degree_counts_figure(exp.out / "degree_hist.png", s_ref.pooled_degree_counts(), s_gen.pooled_degree_counts())
    graphlet_bars_figure(exp.out / "graphlets.png", diff.labels, diff.target, diff.generated)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_registry_dump(args) -> int:
    reg = build_registry(args.max_order)
    out = Path(args.output)
    reg.dump(out)
    print(f"wrote {out}")
    for p in range(2, args.max_order + 1):
        print(f"order {p}: {reg.num_classes(p)} classes")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmoe", description="Graphlet moment estimation for kernel random graphs.")
    ap.add_argument("--version", action="version", version=f"gmoe {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI config file")
    common.add_argument("--preset", help=f"bundled experiment config, one of: {', '.join(preset_names())}")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a setting")
    common.add_argument("--seed", type=int, help="shortcut for --set experiment.seed=N")
    common.add_argument("--out", help="shortcut for --set experiment.output_dir=DIR")
    common.add_argument("--threads", type=int, help="cap worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("census", parents=[common], help="compute target graphlet moments of the dataset")
    sub.add_parser("train", parents=[common], help="fit the generator to the targets")
    g = sub.add_parser("generate", parents=[common], help="sample graphs from a checkpoint")
    g.add_argument("--checkpoint")
    g.add_argument("--count", type=int)
    g.add_argument("--format", choices=("edgelist", "tu"), default="edgelist")
    g.add_argument("-o", "--output")
    e = sub.add_parser("eval", parents=[common], help="compare generated graphs with the dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--graphs", help="evaluate an edge-list file instead of sampling")
    r = sub.add_parser("registry-dump", help="write the graphlet class registry")
    r.add_argument("--max-order", type=int, default=6)
    r.add_argument("-o", "--output", default="registry.bin")
    return ap


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["experiment.seed"] = args.seed
    if args.out is not None:
        out["experiment.output_dir"] = args.out
    if args.threads is not None:
        out["experiment.threads"] = args.threads
    return out


COMMANDS = {"census": cmd_census, "train": cmd_train, "generate": cmd_generate, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "registry-dump":
            return cmd_registry_dump(args)
        if args.config and args.preset:
            raise ConfigError("give either --config or --preset, not both")
        cfg = load_config(preset_path(args.preset) if args.preset else args.config, _overrides(args))
        return COMMANDS[args.command](Experiment(cfg), args)
    except GmoeError as exc:
        print(f"gmoe {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
