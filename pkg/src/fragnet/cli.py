"""Command-line front end: simulate, fit, predict, evaluate, diagnose.

Every command writes a JSON manifest next to its outputs holding the fully
resolved flags, seeds and input digests, so a run can be reproduced
exactly. Exit codes: 0 success, 2 usage or input error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__, evalmetrics, graphstats, models, sampler, treecore
from .errors import FragnetError, InvariantError
from .models import BetaParams, FlatPartition
from .prior import GibbsParams
from .sampler import ChainConfig

MANIFEST_FORMAT = "fragnet-manifest v1"
THETA_HEADER = "# fragnet-theta v1"
TREE_HEADER = "# fragnet-tree v1"
PARTITION_HEADER = "# fragnet-partition v1"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantError:
        sys.stderr.write("internal invariant violation; state dump follows\n")
        traceback.print_exc()
        return 3
    except (FragnetError, ValueError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fragnet",
        description="Hierarchical block structure in networks with "
                    "fragmentation-tree priors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a structure, theta and network")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--model", choices=models.MODEL_KINDS, default=models.UNPOOLED)
    p.add_argument("--structure", default=None,
                   help="planted structure file (default: drawn from the prior)")
    _model_params(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run MCMC on a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--model", choices=models.MODEL_KINDS, default=models.UNPOOLED)
    p.add_argument("--iters", type=int, default=400_000)
    p.add_argument("--burnin", type=int, default=200_000)
    p.add_argument("--thin", type=int, default=1000)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--local-prob", type=float, default=0.5)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--type1-prob", type=float, default=0.5)
    p.add_argument("--init", default="prior",
                   help="'prior', 'star', or a structure file")
    _model_params(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--debug", action="store_true",
                   help="verify caches against recomputation every step")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="per-pair predictive probabilities")
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--train-graph", required=True)
    p.add_argument("--train-mask", default=None)
    p.add_argument("--pairs", default=None,
                   help="pair file (edge-list format); default: all pairs")
    p.add_argument("--rho-plus", type=float, default=1.0)
    p.add_argument("--rho-minus", type=float, default=1.0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score link prediction on a target graph")
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--train-graph", required=True)
    p.add_argument("--train-mask", default=None)
    p.add_argument("--target-graph", required=True)
    p.add_argument("--target-mask", default=None)
    p.add_argument("--rho-plus", type=float, default=1.0)
    p.add_argument("--rho-minus", type=float, default=1.0)
    p.add_argument("--average-probs-first", action="store_true")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", help="summarize chain diagnostics")
    p.add_argument("diagnostics", nargs="+")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_diagnose)

    return parser


def _model_params(p):
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--rho-plus", type=float, default=1.0)
    p.add_argument("--rho-minus", type=float, default=1.0)


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(prefix: str, command: str, flags: dict, inputs: list,
                    outputs: list) -> str:
    manifest = {
        "format": MANIFEST_FORMAT,
        "package_version": __version__,
        "command": command,
        "flags": flags,
        "inputs": {p: _digest(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    path = prefix + ".manifest.json"
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_graph(graph_path: str, mask_path: str | None) -> graphstats.Graph:
    graph = graphstats.parse_edge_list(Path(graph_path).read_text())
    if mask_path:
        mask = graphstats.parse_mask(Path(mask_path).read_text(), graph.n)
        graph = graphstats.Graph(graph.n, graph.edges(), mask)
    return graph


def _load_structure(path: str, kind: str, n: int):
    text = Path(path).read_text()
    body = "\n".join(l for l in text.splitlines()
                     if l.strip() and not l.lstrip().startswith("#"))
    if kind == models.IRM:
        part = FlatPartition.from_text(body.strip())
        if part.n != n:
            raise ValueError(f"partition covers {part.n} vertices, expected {n}")
        return part
    tree = treecore.canonical_parse(body.strip())
    if tree.n_leaves != n:
        raise ValueError(f"tree has {tree.n_leaves} leaves, expected {n}")
    return tree


def _load_samples(paths):
    kind = None
    all_samples = []
    for path in paths:
        meta, samples = sampler.read_samples(Path(path).read_text())
        if kind is None:
            kind = meta["model"]
        elif kind != meta["model"]:
            raise ValueError("sample streams disagree on the model kind")
        all_samples.extend(samples)
    if not all_samples:
        raise ValueError("no posterior samples found")
    return kind, all_samples


# -------------------------------------------------------------------- #
# commands
# -------------------------------------------------------------------- #


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    tau = GibbsParams(args.alpha, args.beta)
    rho = BetaParams(args.rho_plus, args.rho_minus)
    if args.structure:
        structure = _load_structure(args.structure, args.model, args.n)
    elif args.model == models.IRM:
        from . import prior as prior_mod
        structure = FlatPartition(
            prior_mod.sample_crp_partition(args.n, tau, rng))
    else:
        from . import prior as prior_mod
        structure = prior_mod.sample_tree(args.n, tau, rng)

    graph, theta = models.simulate_network(structure, args.model, rho,
                                           args.n, rng)
    prefix = args.out_prefix
    outputs = []

    path = prefix + ".edges.tsv"
    Path(path).write_text(graphstats.emit_edge_list(graph))
    outputs.append(path)

    if args.model == models.IRM:
        path = prefix + ".partition.txt"
        Path(path).write_text(
            PARTITION_HEADER + "\n" + structure.to_text() + "\n")
        outputs.append(path)
    else:
        path = prefix + ".tree.txt"
        Path(path).write_text(
            TREE_HEADER + "\n" + treecore.canonical_serialize(structure) + "\n")
        outputs.append(path)
        path = prefix + ".nwk"
        Path(path).write_text(treecore.to_newick(structure) + "\n")
        outputs.append(path)

    pm = models.theta_matrix(structure, args.model, theta, args.n)
    lines = [THETA_HEADER, f"# n={args.n}"]
    lines += ["\t".join(repr(float(x)) for x in row) for row in pm]
    path = prefix + ".theta.tsv"
    Path(path).write_text("\n".join(lines) + "\n")
    outputs.append(path)

    flags = {"n": args.n, "model": args.model, "alpha": args.alpha,
             "beta": args.beta, "rho_plus": args.rho_plus,
             "rho_minus": args.rho_minus, "seed": args.seed,
             "structure": args.structure}
    outputs.append(_write_manifest(prefix, "simulate", flags,
                                   [args.structure] if args.structure else [],
                                   outputs))
    return 0


def cmd_fit(args) -> int:
    graph = _load_graph(args.graph, args.mask)
    tau = GibbsParams(args.alpha, args.beta)
    rho = BetaParams(args.rho_plus, args.rho_minus)
    init = args.init
    if init not in ("prior", "star"):
        init = _load_structure(init, args.model, graph.n)
    if args.chains < 1:
        raise ValueError("need at least one chain")

    prefix = args.out_prefix
    outputs = []
    for chain in range(args.chains):
        cfg = ChainConfig(
            iterations=args.iters, burn_in=args.burnin, thin=args.thin,
            local_move_prob=args.local_prob, local_radius=args.radius,
            type1_prob=args.type1_prob,
            seed=sampler.chain_seed(args.seed, chain),
            kind=args.model, tau=tau, rho=rho, init=init, debug=args.debug)
        samples, diag = sampler.run_chain(graph, cfg)
        meta = {"chain": chain, "seed": args.seed, "alpha": args.alpha,
                "beta": args.beta, "rho_plus": args.rho_plus,
                "rho_minus": args.rho_minus}
        path = f"{prefix}.chain{chain}.samples.tsv"
        Path(path).write_text(sampler.write_samples(samples, args.model, meta))
        outputs.append(path)
        path = f"{prefix}.chain{chain}.diagnostics.tsv"
        Path(path).write_text(sampler.write_diagnostics(diag, meta))
        outputs.append(path)

    flags = {"graph": args.graph, "mask": args.mask, "model": args.model,
             "iters": args.iters, "burnin": args.burnin, "thin": args.thin,
             "chains": args.chains, "local_prob": args.local_prob,
             "radius": args.radius, "type1_prob": args.type1_prob,
             "init": args.init, "alpha": args.alpha, "beta": args.beta,
             "rho_plus": args.rho_plus, "rho_minus": args.rho_minus,
             "seed": args.seed}
    inputs = [args.graph] + ([args.mask] if args.mask else [])
    if args.init not in ("prior", "star"):
        inputs.append(args.init)
    outputs.append(_write_manifest(prefix, "fit", flags, inputs, outputs))
    return 0


def cmd_predict(args) -> int:
    kind, samples = _load_samples(args.samples)
    train = _load_graph(args.train_graph, args.train_mask)
    rho = BetaParams(args.rho_plus, args.rho_minus)
    if args.pairs:
        pairs = graphstats.parse_mask(Path(args.pairs).read_text(), train.n)
        pairs = sorted({(min(u, v), max(u, v)) for u, v in pairs})
    else:
        pairs = [(i, j) for i in range(train.n) for j in range(i + 1, train.n)]
    rows = np.array([p[0] for p in pairs])
    cols = np.array([p[1] for p in pairs])
    mean = np.zeros(len(pairs))
    for s in samples:
        pm = models.predictive_matrix(train, s.structure, kind, rho)
        mean += pm[rows, cols]
    mean /= len(samples)

    lines = [evalmetrics.REPORT_HEADER,
             f"# model={kind} samples={len(samples)}", "u\tv\tprob"]
    lines += [f"{u}\t{v}\t{p!r}" for (u, v), p in zip(pairs, mean)]
    prefix = args.out_prefix
    path = prefix + ".pairs.tsv"
    Path(path).write_text("\n".join(lines) + "\n")
    flags = {"samples": list(args.samples), "train_graph": args.train_graph,
             "train_mask": args.train_mask, "pairs": args.pairs,
             "rho_plus": args.rho_plus, "rho_minus": args.rho_minus}
    inputs = list(args.samples) + [args.train_graph]
    inputs += [p for p in (args.train_mask, args.pairs) if p]
    _write_manifest(prefix, "predict", flags, inputs, [path])
    return 0


def cmd_evaluate(args) -> int:
    kind, samples = _load_samples(args.samples)
    train = _load_graph(args.train_graph, args.train_mask)
    target = _load_graph(args.target_graph, args.target_mask)
    if target.n != train.n:
        raise ValueError(
            f"target graph has {target.n} vertices, training graph {train.n}")
    rho = BetaParams(args.rho_plus, args.rho_minus)
    report = evalmetrics.predict_network(
        samples, train, target, kind, rho,
        average_probs_first=args.average_probs_first)
    meta = {"model": kind, "samples": len(samples),
            "target": args.target_graph}
    prefix = args.out_prefix
    path = prefix + ".report.tsv"
    Path(path).write_text(evalmetrics.write_report(report, meta))
    flags = {"samples": list(args.samples), "train_graph": args.train_graph,
             "train_mask": args.train_mask, "target_graph": args.target_graph,
             "target_mask": args.target_mask, "rho_plus": args.rho_plus,
             "rho_minus": args.rho_minus,
             "average_probs_first": args.average_probs_first}
    inputs = list(args.samples) + [args.train_graph, args.target_graph]
    inputs += [p for p in (args.train_mask, args.target_mask) if p]
    _write_manifest(prefix, "evaluate", flags, inputs, [path])
    return 0


def cmd_diagnose(args) -> int:
    diags = [sampler.read_diagnostics(Path(p).read_text())
             for p in args.diagnostics]
    lines = [sampler.DIAGNOSTICS_HEADER.replace("diagnostics", "diagnose"),
             "stat\tchain\tscope\tvalue"]
    means = []
    for i, d in enumerate(diags):
        for scope in (sampler.LOCAL, sampler.GLOBAL):
            rate = d.acceptance_rate(scope)
            lines.append(f"acceptance_rate\t{i}\t{scope}\t{rate!r}")
            rate_ns = d.acceptance_rate(scope, include_same_state=False)
            lines.append(f"acceptance_rate_excl_same\t{i}\t{scope}\t{rate_ns!r}")
        if d.trace:
            values = [v for _, v in d.trace]
            half = values[len(values) // 2:]
            mean = float(np.mean(half))
            sd = float(np.std(half, ddof=1)) if len(half) > 1 else 0.0
            means.append((mean, sd))
            lines.append(f"trace_mean_second_half\t{i}\t-\t{mean!r}")
            lines.append(f"trace_sd_second_half\t{i}\t-\t{sd!r}")
    if len(means) > 1:
        grand = float(np.mean([m for m, _ in means]))
        pooled_sd = float(np.sqrt(np.mean([s * s for _, s in means])))
        worst = max(abs(m - grand) for m, _ in means)
        z = worst / pooled_sd if pooled_sd > 0 else float("inf")
        lines.append(f"between_chain_mean_spread\t-\t-\t{worst!r}")
        lines.append(f"pooled_trace_sd\t-\t-\t{pooled_sd!r}")
        lines.append(f"dispersion_z\t-\t-\t{z!r}")
    prefix = args.out_prefix
    path = prefix + ".diagnose.tsv"
    Path(path).write_text("\n".join(lines) + "\n")
    flags = {"diagnostics": list(args.diagnostics)}
    _write_manifest(prefix, "diagnose", flags, list(args.diagnostics), [path])
    return 0


if __name__ == "__main__":
    sys.exit(main())
