"""Collapsed marginal likelihoods (pooled / unpooled / IRM), joint scores,
posterior-predictive link probabilities, and generative simulation.

Link probabilities carry independent Beta priors and are always
marginalized analytically; only structures (trees or flat partitions) are
ever sampled or stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import graphstats, prior, treecore
from .graphstats import BlockStats, Graph
from .prior import GibbsParams
from .treecore import FragTree

POOLED = "pooled"
UNPOOLED = "unpooled"
IRM = "irm"
MODEL_KINDS = (POOLED, UNPOOLED, IRM)


@dataclass(frozen=True)
class BetaParams:
    """Beta prior on link probabilities. Defaults rho+ = rho- = 1."""

    rho_plus: float = 1.0
    rho_minus: float = 1.0

    def __post_init__(self):
        if self.rho_plus <= 0 or self.rho_minus <= 0:
            raise ValueError("Beta parameters must be strictly positive")

    @property
    def prior_mean(self) -> float:
        return self.rho_plus / (self.rho_plus + self.rho_minus)


class FlatPartition:
    """Block assignment of vertices 0..n-1 (the IRM latent state)."""

    __slots__ = ("assignment", "_blocks")

    def __init__(self, assignment):
        self.assignment = list(assignment)
        if not self.assignment:
            raise ValueError("partition of an empty vertex set")
        blocks: dict = {}
        for v, b in enumerate(self.assignment):
            blocks.setdefault(b, []).append(v)
        self._blocks = sorted(blocks.values(), key=lambda vs: vs[0])
        # renumber so equal partitions compare equal
        for i, vs in enumerate(self._blocks):
            for v in vs:
                self.assignment[v] = i

    @classmethod
    def from_blocks(cls, blocks, n=None):
        seen: dict[int, int] = {}
        for i, vs in enumerate(blocks):
            if not vs:
                raise ValueError("blocks must be nonempty")
            for v in vs:
                if v in seen:
                    raise ValueError(f"vertex {v} in two blocks")
                seen[v] = i
        size = max(seen) + 1 if n is None else n
        if set(seen) != set(range(size)):
            raise ValueError("blocks must cover vertices 0..n-1")
        return cls([seen[v] for v in range(size)])

    @property
    def n(self) -> int:
        return len(self.assignment)

    @property
    def n_blocks(self) -> int:
        return len(self._blocks)

    def blocks(self) -> list[list[int]]:
        return [list(vs) for vs in self._blocks]

    def sizes(self) -> list[int]:
        return [len(vs) for vs in self._blocks]

    def copy(self) -> "FlatPartition":
        return FlatPartition(self.assignment)

    def __eq__(self, other):
        return isinstance(other, FlatPartition) and self._blocks == other._blocks

    def __hash__(self):
        return hash(tuple(tuple(vs) for vs in self._blocks))

    def to_text(self) -> str:
        return "[" + ",".join(
            "[" + ",".join(map(str, vs)) + "]" for vs in self._blocks) + "]"

    @classmethod
    def from_text(cls, text: str) -> "FlatPartition":
        import json
        try:
            spec = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"malformed partition text: {e}") from None
        if not isinstance(spec, list) or not all(isinstance(b, list) for b in spec):
            raise ValueError("partition text must be a list of blocks")
        return cls.from_blocks(spec)

    def __repr__(self):
        return f"FlatPartition({self.to_text()})"


# -------------------------------------------------------------------- #
# collapsed likelihoods
# -------------------------------------------------------------------- #


def beta_bernoulli_logml(L: int, N: int, rho: BetaParams) -> float:
    """Log marginal likelihood of L links among N observed pairs sharing
    one Beta-distributed link probability.
    """
    if L < 0 or N < 0 or L > N:
        raise ValueError(f"need 0 <= L <= N, got L={L} N={N}")
    rp, rm = rho.rho_plus, rho.rho_minus
    return (_lbeta(rp + L, rm + N - L) - _lbeta(rp, rm))


def _lbeta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def node_log_marginal(stats: BlockStats, graph: Graph, tree: FragTree,
                      node, kind: str, rho: BetaParams) -> float:
    """One internal node's contribution to the collapsed log likelihood."""
    if kind == POOLED:
        L, N = stats.pooled_counts(node)
        return beta_bernoulli_logml(L, N, rho)
    if kind == UNPOOLED:
        total = 0.0
        for cell in stats.pairs[node].values():
            total += beta_bernoulli_logml(cell[0], cell[1], rho)
        ls, ns = stats.single[node]
        if ns:
            p = rho.prior_mean
            total += ls * math.log(p) + (ns - ls) * math.log1p(-p)
        return total
    raise ValueError(f"per-node likelihood undefined for kind {kind!r}")


def _irm_block_counts(graph: Graph, part: FlatPartition):
    """(links, observed pairs) per unordered block pair, diagonal included."""
    k = part.n_blocks
    sizes = part.sizes()
    assign = part.assignment
    links = {}
    masked = {}
    for u, v in graph.edges():
        key = _ordered(assign[u], assign[v])
        links[key] = links.get(key, 0) + 1
    for u, v in graph.masked_pairs():
        key = _ordered(assign[u], assign[v])
        masked[key] = masked.get(key, 0) + 1
    counts = {}
    for a in range(k):
        for b in range(a, k):
            tot = (sizes[a] * (sizes[a] - 1) // 2 if a == b
                   else sizes[a] * sizes[b])
            n_obs = tot - masked.get((a, b), 0)
            counts[(a, b)] = (links.get((a, b), 0), n_obs)
    return counts


def _ordered(a, b):
    return (a, b) if a <= b else (b, a)


def log_marginal_likelihood(graph: Graph, structure, kind: str,
                            rho: BetaParams) -> float:
    """Collapsed log p(A | structure) for the given model kind.

    ``structure`` is a FragTree for pooled/unpooled and a FlatPartition
    for irm.
    """
    if kind in (POOLED, UNPOOLED):
        if not isinstance(structure, FragTree):
            raise ValueError(f"{kind} model needs a tree structure")
        stats = BlockStats.from_graph(graph, structure)
        return sum(node_log_marginal(stats, graph, structure, nid, kind, rho)
                   for nid in structure.internal_ids())
    if kind == IRM:
        if not isinstance(structure, FlatPartition):
            raise ValueError("irm model needs a flat partition")
        if structure.n != graph.n:
            raise ValueError("partition size does not match the graph")
        counts = _irm_block_counts(graph, structure)
        return sum(beta_bernoulli_logml(L, N, rho)
                   for L, N in counts.values())
    raise ValueError(f"unknown model kind {kind!r}")


def log_joint(graph: Graph, structure, kind: str, rho: BetaParams,
              tau: GibbsParams) -> float:
    """Log p(A, structure): marginal likelihood plus structure prior."""
    ll = log_marginal_likelihood(graph, structure, kind, rho)
    if kind == IRM:
        lp = prior.crp_log_prob_sizes(structure.sizes(), tau)
    else:
        lp = prior.tree_log_prior(structure, tau)
    return ll + lp


# -------------------------------------------------------------------- #
# prediction
# -------------------------------------------------------------------- #


def predictive_link_prob(graph: Graph, structure, kind: str,
                         rho: BetaParams, i: int, j: int) -> float:
    """Posterior-predictive link probability for one vertex pair, using the
    training counts of its governing block.
    """
    if i == j or not (0 <= i < graph.n and 0 <= j < graph.n):
        raise ValueError(f"invalid vertex pair ({i},{j})")
    rp, rm = rho.rho_plus, rho.rho_minus
    if kind == IRM:
        counts = _irm_block_counts(graph, structure)
        L, N = counts[_ordered(structure.assignment[i], structure.assignment[j])]
        return (rp + L) / (rp + rm + N)
    stats = BlockStats.from_graph(graph, structure)
    node, ci, cj = treecore.lca_with_children(structure, i, j)
    if kind == POOLED:
        L, N = stats.pooled_counts(node)
    elif kind == UNPOOLED:
        L, N = stats.pair_counts(graph, structure, node, ci, cj)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return (rp + L) / (rp + rm + N)


def predictive_matrix(graph: Graph, structure, kind: str,
                      rho: BetaParams) -> np.ndarray:
    """n-by-n matrix of predictive link probabilities (diagonal zero).

    Equivalent to `predictive_link_prob` on every pair, but filled one
    governing block at a time.
    """
    n = graph.n
    rp, rm = rho.rho_plus, rho.rho_minus
    out = np.zeros((n, n))
    if kind == IRM:
        counts = _irm_block_counts(graph, structure)
        members = [np.fromiter(vs, dtype=int) for vs in structure.blocks()]
        for (a, b), (L, N) in counts.items():
            p = (rp + L) / (rp + rm + N)
            out[np.ix_(members[a], members[b])] = p
            out[np.ix_(members[b], members[a])] = p
        np.fill_diagonal(out, 0.0)
        return out
    if kind not in (POOLED, UNPOOLED):
        raise ValueError(f"unknown model kind {kind!r}")
    stats = BlockStats.from_graph(graph, structure)
    leaves = {nid: np.fromiter(structure.leaves_under(nid), dtype=int)
              for nid in structure.node_ids()}
    for nid in structure.internal_ids():
        kids = structure.children(nid)
        if kind == POOLED:
            L, N = stats.pooled_counts(nid)
            p = (rp + L) / (rp + rm + N)
        for x in range(len(kids)):
            for y in range(x + 1, len(kids)):
                if kind == UNPOOLED:
                    L, N = stats.pair_counts(graph, structure, nid,
                                             kids[x], kids[y])
                    p = (rp + L) / (rp + rm + N)
                out[np.ix_(leaves[kids[x]], leaves[kids[y]])] = p
                out[np.ix_(leaves[kids[y]], leaves[kids[x]])] = p
    return out


# -------------------------------------------------------------------- #
# simulation
# -------------------------------------------------------------------- #


def draw_theta(structure, kind: str, rho: BetaParams, rng) -> dict:
    """Draw one link probability per pooling unit of the structure."""
    rp, rm = rho.rho_plus, rho.rho_minus
    theta: dict = {}
    if kind == IRM:
        k = structure.n_blocks
        for a in range(k):
            for b in range(a, k):
                theta[(a, b)] = rng.beta(rp, rm)
        return theta
    if kind == POOLED:
        for nid in sorted(structure.internal_ids()):
            theta[nid] = rng.beta(rp, rm)
        return theta
    if kind == UNPOOLED:
        for nid in sorted(structure.internal_ids()):
            kids = structure.children(nid)
            for x in range(len(kids)):
                for y in range(x + 1, len(kids)):
                    key = _ordered(kids[x], kids[y])
                    theta[(nid,) + key] = rng.beta(rp, rm)
        return theta
    raise ValueError(f"unknown model kind {kind!r}")


def theta_matrix(structure, kind: str, theta: dict, n: int) -> np.ndarray:
    """Expand a per-unit theta draw into an n-by-n pair probability matrix."""
    out = np.zeros((n, n))
    if kind == IRM:
        members = [np.fromiter(vs, dtype=int) for vs in structure.blocks()]
        for (a, b), p in theta.items():
            out[np.ix_(members[a], members[b])] = p
            out[np.ix_(members[b], members[a])] = p
        np.fill_diagonal(out, 0.0)
        return out
    leaves = {nid: np.fromiter(structure.leaves_under(nid), dtype=int)
              for nid in structure.node_ids()}
    for nid in structure.internal_ids():
        kids = structure.children(nid)
        for x in range(len(kids)):
            for y in range(x + 1, len(kids)):
                p = (theta[nid] if kind == POOLED
                     else theta[(nid,) + _ordered(kids[x], kids[y])])
                out[np.ix_(leaves[kids[x]], leaves[kids[y]])] = p
                out[np.ix_(leaves[kids[y]], leaves[kids[x]])] = p
    return out


def simulate_from_theta(structure, kind: str, theta: dict, n: int, rng) -> Graph:
    """Draw one network from fixed per-unit link probabilities."""
    probs = theta_matrix(structure, kind, theta, n)
    iu = np.triu_indices(n, k=1)
    draws = rng.random(len(iu[0])) < probs[iu]
    edges = [(int(iu[0][t]), int(iu[1][t])) for t in np.flatnonzero(draws)]
    return Graph(n, edges)


def simulate_network(structure, kind: str, rho: BetaParams, n: int, rng):
    """Draw theta from its Beta prior, then a network given theta.

    Returns ``(graph, theta)`` so experiments can reuse the same draw for
    replicate networks.
    """
    size = structure.n if kind == IRM else structure.n_leaves
    if size != n:
        raise ValueError(f"structure covers {size} vertices, expected {n}")
    theta = draw_theta(structure, kind, rho, rng)
    return simulate_from_theta(structure, kind, theta, n, rng), theta
