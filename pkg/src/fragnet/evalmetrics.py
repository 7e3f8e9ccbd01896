"""Link-prediction scoring (AUC, predictive log-likelihood), posterior
summaries, and the synthetic-experiment harness.

Scoring protocol: each retained posterior sample yields a predictive
probability for every observed target pair from the training counts of its
structure; log-likelihood and AUC are computed per sample and then averaged
across samples. The average-probabilities-first alternative is available
behind a flag for sensitivity analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import models, prior, sampler, treecore
from .errors import MetricUndefinedError
from .graphstats import Graph
from .models import BetaParams
from .prior import GibbsParams

REPORT_HEADER = "# fragnet-report v1"
GRID_HEADER = "# fragnet-grid v1"
COANCESTRY_HEADER = "# fragnet-coancestry v1"


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    counting ties one half (the Mann-Whitney form).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs both a positive and a negative")
    ranks = rankdata(scores)  # average ranks resolve ties at 1/2
    u = float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class PredictionReport:
    """Per-sample and aggregate link-prediction scores."""

    log_liks: list[float]
    aucs: list[float]
    mean_prob: np.ndarray  # per-pair predictive probability, sample-averaged

    @property
    def mean_log_lik(self) -> float:
        return float(np.mean(self.log_liks))

    @property
    def sd_log_lik(self) -> float:
        return float(np.std(self.log_liks, ddof=1)) if len(self.log_liks) > 1 else 0.0

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def sd_auc(self) -> float:
        return float(np.std(self.aucs, ddof=1)) if len(self.aucs) > 1 else 0.0


def _observed_pair_arrays(target: Graph):
    n = target.n
    iu = np.triu_indices(n, k=1)
    keep = np.fromiter(
        (not target.is_masked(int(i), int(j)) for i, j in zip(*iu)),
        dtype=bool, count=len(iu[0]))
    rows, cols = iu[0][keep], iu[1][keep]
    labels = np.fromiter(
        (1 if target.has_edge(int(i), int(j)) else 0
         for i, j in zip(rows, cols)),
        dtype=int, count=len(rows))
    return rows, cols, labels


def predict_network(samples, train_graph: Graph, target_graph: Graph,
                    kind: str, rho: BetaParams,
                    average_probs_first: bool = False) -> PredictionReport:
    """Score every observed target pair under each posterior sample.

    With ``average_probs_first`` the per-pair probabilities are averaged
    across samples before a single log-likelihood/AUC is computed.
    """
    if target_graph.n != train_graph.n:
        raise ValueError("target and training graphs must share vertices")
    if not samples:
        raise ValueError("need at least one posterior sample")
    rows, cols, labels = _observed_pair_arrays(target_graph)
    mean_prob = np.zeros(len(rows))
    log_liks, aucs = [], []
    for s in samples:
        pm = models.predictive_matrix(train_graph, s.structure, kind, rho)
        p = pm[rows, cols]
        mean_prob += p
        if not average_probs_first:
            ll = float(np.sum(np.where(labels == 1, np.log(p), np.log1p(-p))))
            log_liks.append(ll)
            aucs.append(_auc_or_half(p, labels))
    mean_prob /= len(samples)
    if average_probs_first:
        ll = float(np.sum(np.where(labels == 1, np.log(mean_prob),
                                   np.log1p(-mean_prob))))
        log_liks = [ll]
        aucs = [_auc_or_half(mean_prob, labels)]
    return PredictionReport(log_liks, aucs, mean_prob)


def _auc_or_half(scores, labels) -> float:
    try:
        return auc(scores, labels)
    except MetricUndefinedError:
        return 0.5


@dataclass
class CoancestrySummary:
    """Posterior mean LCA depth per vertex pair and the probability that a
    pair splits below the root."""

    mean_depth: np.ndarray
    prob_below_root: np.ndarray


def coancestry(samples, n: int) -> CoancestrySummary:
    """Average LCA-depth indicators across tree samples."""
    if not samples:
        raise ValueError("need at least one posterior sample")
    depth_sum = np.zeros((n, n))
    below = np.zeros((n, n))
    for s in samples:
        tree = s.structure
        depths = {nid: tree.depth(nid) for nid in tree.internal_ids()}
        for nid, d in depths.items():
            kids = tree.children(nid)
            leaves = [np.fromiter(tree.leaves_under(c), dtype=int)
                      for c in kids]
            for x in range(len(kids)):
                for y in range(x + 1, len(kids)):
                    depth_sum[np.ix_(leaves[x], leaves[y])] += d
                    depth_sum[np.ix_(leaves[y], leaves[x])] += d
                    if d > 0:
                        below[np.ix_(leaves[x], leaves[y])] += 1
                        below[np.ix_(leaves[y], leaves[x])] += 1
    k = len(samples)
    return CoancestrySummary(depth_sum / k, below / k)


# -------------------------------------------------------------------- #
# synthetic-experiment harness
# -------------------------------------------------------------------- #


@dataclass
class GridCell:
    generator: str
    fitter: str
    mean_log_lik: float
    sd_log_lik: float
    mean_auc: float
    sd_auc: float


@dataclass
class GeneratorSpec:
    """A named generating model: kind plus a planted structure."""

    name: str
    kind: str
    structure: object  # FragTree (pooled/unpooled) or FlatPartition (irm)


def planted_partition(n: int, blocks: int) -> models.FlatPartition:
    """Vertices 0..n-1 split into ``blocks`` contiguous near-equal blocks."""
    base, extra = divmod(n, blocks)
    assign, v = [], 0
    for b in range(blocks):
        for _ in range(base + (1 if b < extra else 0)):
            assign.append(b)
    return models.FlatPartition(assign)


def planted_two_level_tree(n: int, blocks: int = 5,
                           first_group: int = 3) -> treecore.FragTree:
    """Two-level hierarchy: blocks of vertices, the first ``first_group`` of
    them under one superblock and the rest under another."""
    part = planted_partition(n, blocks)
    groups = [vs[0] if len(vs) == 1 else vs for vs in part.blocks()]
    left, right = groups[:first_group], groups[first_group:]
    if not right:
        return treecore.FragTree.from_nested(groups)
    lspec = left[0] if len(left) == 1 else left
    rspec = right[0] if len(right) == 1 else right
    return treecore.FragTree.from_nested([lspec, rspec])


def experiment_grid(generators, fit_kinds, chain_config, replicates: int,
                    seed: int = 0, rho: BetaParams | None = None):
    """Train each fit kind on one network per generator, then score
    ``replicates`` fresh networks drawn from the same theta.

    Returns a list of GridCell records (generator-major order).
    """
    rho = rho if rho is not None else chain_config.rho
    cells = []
    for gi, gen in enumerate(generators):
        rng = np.random.default_rng((seed, gi))
        n = (gen.structure.n if gen.kind == models.IRM
             else gen.structure.n_leaves)
        train, theta = models.simulate_network(gen.structure, gen.kind, rho,
                                               n, rng)
        targets = [models.simulate_from_theta(gen.structure, gen.kind, theta,
                                              n, rng)
                   for _ in range(replicates)]
        for fi, kind in enumerate(fit_kinds):
            cfg = _with(chain_config, kind=kind, seed=(seed, gi, fi))
            samples, _ = sampler.run_chain(train, cfg)
            lls, aucs = [], []
            for target in targets:
                rep = predict_network(samples, train, target, kind, cfg.rho)
                lls.append(rep.mean_log_lik)
                aucs.append(rep.mean_auc)
            cells.append(GridCell(
                gen.name, kind,
                float(np.mean(lls)),
                float(np.std(lls, ddof=1)) if len(lls) > 1 else 0.0,
                float(np.mean(aucs)),
                float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0))
    return cells


def _with(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


# -------------------------------------------------------------------- #
# text output
# -------------------------------------------------------------------- #


def write_report(report: PredictionReport, meta: dict | None = None) -> str:
    lines = [REPORT_HEADER]
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append("sample\tlog_lik\tauc")
    for i, (ll, a) in enumerate(zip(report.log_liks, report.aucs)):
        lines.append(f"{i}\t{ll!r}\t{a!r}")
    lines.append(f"mean\t{report.mean_log_lik!r}\t{report.mean_auc!r}")
    lines.append(f"sd\t{report.sd_log_lik!r}\t{report.sd_auc!r}")
    return "\n".join(lines) + "\n"


def write_grid(cells, meta: dict | None = None) -> str:
    lines = [GRID_HEADER]
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append("network\tmodel\tlog_lik_mean\tlog_lik_sd\tauc_mean\tauc_sd")
    for c in cells:
        lines.append(f"{c.generator}\t{c.fitter}\t{c.mean_log_lik!r}\t"
                     f"{c.sd_log_lik!r}\t{c.mean_auc!r}\t{c.sd_auc!r}")
    return "\n".join(lines) + "\n"


def write_coancestry(summary: CoancestrySummary,
                     meta: dict | None = None) -> str:
    lines = [COANCESTRY_HEADER]
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append("# mean LCA depth matrix, then P(LCA below root) matrix")
    for mat in (summary.mean_depth, summary.prob_below_root):
        for row in mat:
            lines.append("\t".join(repr(float(x)) for x in row))
        lines.append("")
    return "\n".join(lines)
