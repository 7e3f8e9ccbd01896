"""Metropolis-Hastings over tree space with subtree-prune-and-regraft
proposals, a collapsed Gibbs sampler for the flat-partition baseline, chain
scheduling, and diagnostics.

Proposal bookkeeping: a move detaches a uniformly chosen non-root node and
reinserts it at a site drawn from either a local ball around the detach
anchor or the whole reduced tree. Acceptance uses the exact forward and
backward probabilities of the executed move path; forward and backward
paths pair up one-to-one (the reverse move detaches the same subtree and
reinserts it at the original, normalized site), so each paired sub-kernel
is reversible and the chain targets the collapsed posterior exactly. The
tests verify this by building the full transition matrix at small n.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import graphstats, models, prior, treecore
from .errors import FormatVersionError, InvariantError
from .graphstats import BlockStats, Graph
from .models import BetaParams, FlatPartition
from .prior import GibbsParams
from .treecore import TYPE1, TYPE2, FragTree

LOCAL = "local"
GLOBAL = "global"

SAMPLES_HEADER = "# fragnet-samples v1"
DIAGNOSTICS_HEADER = "# fragnet-diagnostics v1"

# rebuild cached totals from per-node terms this often, to stop float drift
_RESUM_EVERY = 256


@dataclass(frozen=True)
class ChainConfig:
    """One chain's schedule, move mixture, model and hyperparameters."""

    iterations: int = 400_000
    burn_in: int = 200_000
    thin: int = 1000
    local_move_prob: float = 0.5
    local_radius: int = 2
    type1_prob: float = 0.5
    seed: int | tuple = 0
    kind: str = models.UNPOOLED
    tau: GibbsParams = field(default_factory=GibbsParams)
    rho: BetaParams = field(default_factory=BetaParams)
    init: object = "prior"  # "prior", "star", or a structure to start from
    debug: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        for name in ("local_move_prob", "type1_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.local_radius < 0:
            raise ValueError("local_radius must be >= 0")
        if self.kind not in models.MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class PosteriorSample:
    iteration: int
    log_prior: float
    log_ml: float
    structure: object  # FragTree or FlatPartition

    @property
    def log_joint(self) -> float:
        return self.log_prior + self.log_ml


class Diagnostics:
    """Per-move-class proposal/acceptance counters and the thinned trace.

    Same-state proposals (reinsertion at the original site) are counted
    within their class and tallied separately.
    """

    def __init__(self):
        self.counters = {}
        for scope in (LOCAL, GLOBAL):
            for mtype in (TYPE1, TYPE2):
                self.counters[(scope, mtype)] = [0, 0, 0, 0]
        self.trace: list[tuple[int, float]] = []
        self.walltime: float = 0.0

    def record(self, scope, mtype, accepted, same_state):
        c = self.counters[(scope, mtype)]
        c[0] += 1
        c[1] += int(accepted)
        c[2] += int(same_state)
        c[3] += int(same_state and accepted)

    def acceptance_rate(self, scope, include_same_state=True) -> float:
        prop = acc = 0
        for mtype in (TYPE1, TYPE2):
            p, a, sp, sa = self.counters[(scope, mtype)]
            if include_same_state:
                prop += p
                acc += a
            else:
                prop += p - sp
                acc += a - sa
        return acc / prop if prop else float("nan")


# -------------------------------------------------------------------- #
# tree-model chain state
# -------------------------------------------------------------------- #


class TreeChainState:
    """Current tree plus its stats cache and per-node score terms."""

    def __init__(self, graph: Graph, tree: FragTree, kind: str,
                 tau: GibbsParams, rho: BetaParams, debug=False):
        if kind not in (models.POOLED, models.UNPOOLED):
            raise ValueError("tree chain requires a pooled or unpooled model")
        tree.validate(expected_leaves=range(graph.n))
        self.graph = graph
        self.tree = tree
        self.kind = kind
        self.tau = tau
        self.rho = rho
        self.debug = debug
        self.stats = BlockStats.from_graph(graph, tree)
        self.node_ml: dict[int, float] = {}
        self.node_prior: dict[int, float] = {}
        for nid in tree.internal_ids():
            self._refresh_node(nid)
        self._resum()
        self._accepts_since_resum = 0
        self.iteration = 0

    def _refresh_node(self, nid):
        self.node_ml[nid] = models.node_log_marginal(
            self.stats, self.graph, self.tree, nid, self.kind, self.rho)
        self.node_prior[nid] = prior.node_split_log_prob(
            self.tree, nid, self.tau)

    def _resum(self):
        self.log_ml = math.fsum(self.node_ml.values())
        self.log_prior = math.fsum(self.node_prior.values())

    @property
    def log_joint(self) -> float:
        return self.log_ml + self.log_prior

    def check(self):
        """Recompute everything from scratch and compare with the cache."""
        self.tree.validate(expected_leaves=range(self.graph.n))
        fresh = BlockStats.from_graph(self.graph, self.tree)
        if not fresh.equals(self.stats):
            raise InvariantError("stats cache diverged from recomputation")
        ml = models.log_marginal_likelihood(
            self.graph, self.tree, self.kind, self.rho)
        lp = prior.tree_log_prior(self.tree, self.tau)
        if abs(ml - self.log_ml) > 1e-9 or abs(lp - self.log_prior) > 1e-9:
            raise InvariantError(
                f"cached log joint {self.log_joint} != recomputed {ml + lp}")


class Proposal:
    """A tentatively applied SPR move, with exact move-path probabilities."""

    __slots__ = ("edit", "log_forward", "log_backward", "same_state",
                 "scope", "delta_log_joint", "_undo", "_score_undo",
                 "_old_totals")

    def __init__(self, edit, log_forward, log_backward, same_state, scope,
                 delta_log_joint, undo, score_undo, old_totals):
        self.edit = edit
        self.log_forward = log_forward
        self.log_backward = log_backward
        self.same_state = same_state
        self.scope = scope
        self.delta_log_joint = delta_log_joint
        self._undo = undo
        self._score_undo = score_undo
        self._old_totals = old_totals

    @property
    def log_accept_ratio(self) -> float:
        return self.delta_log_joint + self.log_backward - self.log_forward

    def revert(self, state: TreeChainState):
        if self._undo is not None:
            graphstats.undo_edit(state.stats, state.graph, state.tree,
                                 self._undo)
        for nid, ml, lp in reversed(self._score_undo):
            if ml is None:
                state.node_ml.pop(nid, None)
                state.node_prior.pop(nid, None)
            else:
                state.node_ml[nid] = ml
                state.node_prior[nid] = lp
        state.log_ml, state.log_prior = self._old_totals


def _site_log_prob(tree: FragTree, anchor, radius, cfg: ChainConfig,
                   mtype, h, ball=None) -> float:
    """Log probability of drawing insertion site (mtype, h), marginalized
    over the local/global branch choice, for the reduced tree."""
    n_all = tree.n_nodes
    n_int = sum(1 for _ in tree.internal_ids())
    p1 = cfg.type1_prob

    def branch_prob(c1, c2, in_set):
        if not in_set:
            return 0.0
        if mtype == TYPE1:
            return p1 / c1 if c1 else 0.0
        return ((1.0 - p1) if c1 else 1.0) / c2

    p_glob = branch_prob(n_int, n_all, True)
    p = (1.0 - cfg.local_move_prob) * p_glob
    if cfg.local_move_prob > 0.0:
        if ball is None:
            ball = treecore.nodes_within(tree, anchor, radius)
        c1l = sum(1 for nid in ball if not tree.is_leaf(nid))
        p_loc = branch_prob(c1l, len(ball), h in set(ball))
        p += cfg.local_move_prob * p_loc
    return math.log(p) if p > 0.0 else float("-inf")


def propose_spr(state: TreeChainState, cfg: ChainConfig, rng) -> Proposal | None:
    """Draw, tentatively apply, and score one SPR move.

    Returns None when the tree is too small to move (n <= 2 leaves never
    changes). The returned proposal has been applied to ``state``; call
    ``revert`` to reject it. ``log_forward``/``log_backward`` are the exact
    probabilities of this move path and of the paired reverse path.
    """
    tree = state.tree
    if tree.n_leaves < 3:
        return None
    root = tree.root
    candidates = [nid for nid in tree.node_ids() if nid != root]
    n_before = tree.n_nodes
    k = candidates[rng.integers(len(candidates))]

    old_ml, old_prior = state.log_ml, state.log_prior
    remove_undo = state.stats.remove_attached_subtree(state.graph, tree, k)
    sub, _, record = treecore.detach(tree, k)

    # choose the insertion site on the reduced tree
    local = rng.random() < cfg.local_move_prob
    scope = LOCAL if local else GLOBAL
    ball = treecore.nodes_within(tree, record.anchor, cfg.local_radius)
    pool = ball if local else list(tree.node_ids())
    internals = [nid for nid in pool if not tree.is_leaf(nid)]
    if internals and rng.random() < cfg.type1_prob:
        mtype, sites = TYPE1, internals
    else:
        mtype, sites = TYPE2, pool
    h = sites[rng.integers(len(sites))]

    # both proposal probabilities are computed on the reduced tree
    log_fwd = (-math.log(n_before - 1)
               + _site_log_prob(tree, record.anchor, cfg.local_radius, cfg,
                                mtype, h, ball=ball))
    contracted = record.contracted is not None
    n_after = n_before - (1 if contracted else 0) + (1 if mtype == TYPE2 else 0)
    back_type, back_site = record.site
    log_bwd = (-math.log(n_after - 1)
               + _site_log_prob(tree, h, cfg.local_radius, cfg,
                                back_type, back_site))

    if mtype == TYPE1:
        treecore.insert_type1(tree, sub, h)
        created = None
    else:
        treecore.insert_type2(tree, sub, h)
        created = tree.parent(k)
    add_undo = state.stats.add_attached_subtree(state.graph, tree, k, created)
    undo = graphstats.EditUndo(k, record, remove_undo, add_undo, created)

    # refresh score terms for every node whose stats or children changed
    score_undo = []
    for nid in undo.touched:
        old = (state.node_ml.get(nid), state.node_prior.get(nid))
        score_undo.append((nid, old[0], old[1]))
        if nid in tree._nodes:
            state._refresh_node(nid)
        else:
            state.node_ml.pop(nid, None)
            state.node_prior.pop(nid, None)
        state.log_ml += (state.node_ml.get(nid, 0.0) or 0.0) - (old[0] or 0.0)
        state.log_prior += (state.node_prior.get(nid, 0.0) or 0.0) - (old[1] or 0.0)

    delta = (state.log_ml + state.log_prior) - (old_ml + old_prior)
    same_state = (mtype, h) == record.site
    edit = graphstats.Edit(k, mtype, h)
    return Proposal(edit, log_fwd, log_bwd, same_state, scope, delta,
                    undo, score_undo, (old_ml, old_prior))


def mh_step(state: TreeChainState, cfg: ChainConfig, rng,
            diagnostics: Diagnostics | None = None) -> bool:
    """One Metropolis-Hastings step; returns True if the move was accepted."""
    proposal = propose_spr(state, cfg, rng)
    state.iteration += 1
    if proposal is None:
        return False
    log_r = proposal.log_accept_ratio
    accept = log_r >= 0.0 or rng.random() < math.exp(log_r)
    if accept:
        state._accepts_since_resum += 1
        if state._accepts_since_resum >= _RESUM_EVERY:
            state._resum()
            state._accepts_since_resum = 0
        if state.debug:
            state.check()
    else:
        proposal.revert(state)
    if diagnostics is not None:
        diagnostics.record(proposal.scope, proposal.edit.move_type,
                           accept, proposal.same_state)
    return accept


# -------------------------------------------------------------------- #
# IRM collapsed Gibbs
# -------------------------------------------------------------------- #


class IrmChainState:
    """Flat-partition state with block-pair counts for collapsed Gibbs."""

    def __init__(self, graph: Graph, assignment, tau: GibbsParams,
                 rho: BetaParams, debug=False):
        self.graph = graph
        self.tau = tau
        self.rho = rho
        self.debug = debug
        self.assign = list(assignment)
        if len(self.assign) != graph.n:
            raise ValueError("assignment length must equal the vertex count")
        self.sizes: dict[int, int] = {}
        for b in self.assign:
            self.sizes[b] = self.sizes.get(b, 0) + 1
        self.next_bid = max(self.sizes) + 1
        self.counts: dict[tuple[int, int], list[int]] = {}
        bids = sorted(self.sizes)
        masked = {}
        for u, v in graph.masked_pairs():
            key = _bkey(self.assign[u], self.assign[v])
            masked[key] = masked.get(key, 0) + 1
        for i, a in enumerate(bids):
            for b in bids[i:]:
                tot = (self.sizes[a] * (self.sizes[a] - 1) // 2 if a == b
                       else self.sizes[a] * self.sizes[b])
                self.counts[_bkey(a, b)] = [0, tot - masked.get(_bkey(a, b), 0)]
        for u, v in graph.edges():
            self.counts[_bkey(self.assign[u], self.assign[v])][0] += 1
        self.iteration = 0

    @property
    def log_ml(self) -> float:
        return math.fsum(
            models.beta_bernoulli_logml(L, N, self.rho)
            for L, N in self.counts.values())

    @property
    def log_prior(self) -> float:
        return prior.crp_log_prob_sizes(self.sizes.values(), self.tau)

    @property
    def log_joint(self) -> float:
        return self.log_ml + self.log_prior

    def partition(self) -> FlatPartition:
        return FlatPartition(self.assign)

    def check(self):
        fresh = IrmChainState(self.graph, self.assign, self.tau, self.rho)
        if fresh.counts != self.counts or fresh.sizes != self.sizes:
            raise InvariantError("IRM count cache diverged from recomputation")


def _bkey(a, b):
    return (a, b) if a <= b else (b, a)


def irm_gibbs_update(state: IrmChainState, v: int, rng) -> None:
    """Collapsed Gibbs reassignment of one vertex (exact conditional)."""
    graph = state.graph
    a_disc, b_conc = state.tau.alpha, state.tau.beta
    old = state.assign[v]

    links: dict[int, int] = {}
    for u in graph.neighbors(v):
        b = state.assign[u]
        links[b] = links.get(b, 0) + 1
    masked: dict[int, int] = {}
    for u in graph.masked_partners(v):
        b = state.assign[u]
        masked[b] = masked.get(b, 0) + 1

    # remove v from its block
    state.assign[v] = -1
    state.sizes[old] -= 1
    if state.sizes[old] == 0:
        del state.sizes[old]
    bids = sorted(state.sizes)
    obs = {b: state.sizes[b] - masked.get(b, 0) for b in bids}
    for b in bids:
        key = _bkey(old, b)
        cell = state.counts[key]
        cell[0] -= links.get(b, 0)
        cell[1] -= obs[b]
    if old not in state.sizes:
        for b in list(state.counts):
            if old in b:
                del state.counts[b]

    # candidate weights: existing blocks plus a fresh one
    kblocks = len(bids)
    logw = []
    for b in bids:
        lw = math.log(state.sizes[b] - a_disc) if state.sizes[b] > a_disc \
            else float("-inf")
        dml = 0.0
        for c in bids:
            key = _bkey(b, c)
            L, N = state.counts.get(key, (0, 0))
            dml += (models.beta_bernoulli_logml(
                        L + links.get(c, 0), N + obs[c], state.rho)
                    - models.beta_bernoulli_logml(L, N, state.rho))
        logw.append(lw + dml)
    lw_new = math.log(b_conc + kblocks * a_disc)
    dml = sum(models.beta_bernoulli_logml(links.get(c, 0), obs[c], state.rho)
              for c in bids)
    logw.append(lw_new + dml)

    m = max(logw)
    weights = [math.exp(w - m) for w in logw]
    total = sum(weights)
    r = rng.random() * total
    choice = len(weights) - 1
    for i, w in enumerate(weights):
        r -= w
        if r < 0.0:
            choice = i
            break

    if choice == len(bids):
        target = state.next_bid
        state.next_bid += 1
        state.sizes[target] = 0
        for b in bids:
            state.counts[_bkey(target, b)] = [0, 0]
        state.counts[_bkey(target, target)] = [0, 0]
    else:
        target = bids[choice]
    state.assign[v] = target
    state.sizes[target] += 1
    for c in bids:
        key = _bkey(target, c)
        cell = state.counts[key]
        cell[0] += links.get(c, 0)
        cell[1] += obs[c]
    if state.debug:
        state.check()


def irm_gibbs_sweep(state: IrmChainState, rng) -> IrmChainState:
    """One full sweep of single-vertex collapsed Gibbs updates."""
    for v in range(state.graph.n):
        irm_gibbs_update(state, v, rng)
        state.iteration += 1
    return state


# -------------------------------------------------------------------- #
# chain driver
# -------------------------------------------------------------------- #


def _initial_structure(graph: Graph, cfg: ChainConfig, rng):
    init = cfg.init
    if cfg.kind == models.IRM:
        if isinstance(init, FlatPartition):
            return init.copy()
        if init == "star":
            return FlatPartition([0] * graph.n)
        if init == "prior":
            return FlatPartition(prior.sample_crp_partition(graph.n, cfg.tau, rng))
        raise ValueError(f"unsupported init {init!r} for an irm chain")
    if isinstance(init, FragTree):
        return init.copy()
    if init == "star":
        if graph.n == 1:
            return FragTree.leaf(0)
        return FragTree.from_nested(list(range(graph.n)))
    if init == "prior":
        return prior.sample_tree(graph.n, cfg.tau, rng)
    raise ValueError(f"unsupported init {init!r} for a tree chain")


def run_chain(graph: Graph, cfg: ChainConfig):
    """Run one chain; returns (samples, diagnostics).

    States are retained every ``thin`` iterations after ``burn_in``;
    deterministic given the seed.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    diagnostics = Diagnostics()
    samples: list[PosteriorSample] = []
    structure = _initial_structure(graph, cfg, rng)

    if cfg.kind == models.IRM:
        state = IrmChainState(graph, structure.assignment, cfg.tau, cfg.rho,
                              debug=cfg.debug)
        for it in range(1, cfg.iterations + 1):
            irm_gibbs_update(state, (it - 1) % graph.n, rng)
            state.iteration = it
            _collect(state, cfg, it, samples, diagnostics,
                     lambda: state.partition())
    else:
        state = TreeChainState(graph, structure, cfg.kind, cfg.tau, cfg.rho,
                               debug=cfg.debug)
        for it in range(1, cfg.iterations + 1):
            mh_step(state, cfg, rng, diagnostics)
            _collect(state, cfg, it, samples, diagnostics,
                     lambda: state.tree.copy())

    diagnostics.walltime = time.perf_counter() - start
    return samples, diagnostics


def _collect(state, cfg, it, samples, diagnostics, snapshot):
    if it % cfg.thin == 0:
        diagnostics.trace.append((it, state.log_joint))
    if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
        samples.append(PosteriorSample(it, state.log_prior, state.log_ml,
                                       snapshot()))


def chain_seed(master_seed: int, chain_index: int):
    """Derived seed for chain ``chain_index``: the pair (master, index) fed
    to numpy's SeedSequence, so chains are independent and reproducible."""
    return (master_seed, chain_index)


# -------------------------------------------------------------------- #
# sample stream and diagnostics formats
# -------------------------------------------------------------------- #


def _structure_text(structure) -> str:
    if isinstance(structure, FragTree):
        return treecore.canonical_serialize(structure)
    return structure.to_text()


def write_samples(samples, kind: str, meta: dict | None = None) -> str:
    lines = [SAMPLES_HEADER]
    pairs = {"model": kind, **(meta or {})}
    lines.append("# " + " ".join(f"{k}={v}" for k, v in pairs.items()))
    lines.append("iteration\tlog_prior\tlog_marginal_likelihood\tstructure")
    for s in samples:
        lines.append(f"{s.iteration}\t{s.log_prior!r}\t{s.log_ml!r}\t"
                     f"{_structure_text(s.structure)}")
    return "\n".join(lines) + "\n"


def read_samples(text: str):
    """Parse a sample stream; returns (meta dict, list of samples)."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != SAMPLES_HEADER:
        raise FormatVersionError(
            f"expected sample stream header {SAMPLES_HEADER!r}")
    meta = {}
    if len(lines) > 1 and lines[1].startswith("#"):
        for tok in lines[1][1:].split():
            if "=" in tok:
                key, val = tok.split("=", 1)
                meta[key] = val
    kind = meta.get("model")
    if kind not in models.MODEL_KINDS:
        raise FormatVersionError(f"sample stream has unknown model {kind!r}")
    samples = []
    for line in lines[2:]:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("iteration\t"):
            continue
        it, lp, lml, text_struct = line.split("\t")
        structure = (FlatPartition.from_text(text_struct) if kind == models.IRM
                     else treecore.canonical_parse(text_struct))
        samples.append(PosteriorSample(int(it), float(lp), float(lml),
                                       structure))
    return meta, samples


_SCOPE_NAMES = {LOCAL: "local", GLOBAL: "global"}
_TYPE_NAMES = {TYPE1: "type1", TYPE2: "type2"}


def write_diagnostics(diag: Diagnostics, meta: dict | None = None) -> str:
    lines = [DIAGNOSTICS_HEADER]
    if meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append("counter\tscope\tmove\tproposed\taccepted\t"
                 "same_state_proposed\tsame_state_accepted")
    for (scope, mtype), c in sorted(diag.counters.items()):
        lines.append(f"counter\t{scope}\t{_TYPE_NAMES[mtype]}\t"
                     f"{c[0]}\t{c[1]}\t{c[2]}\t{c[3]}")
    for it, lj in diag.trace:
        lines.append(f"trace\t{it}\t{lj!r}")
    lines.append(f"# walltime_sec={diag.walltime:.3f}")
    return "\n".join(lines) + "\n"


def read_diagnostics(text: str) -> Diagnostics:
    lines = text.splitlines()
    if not lines or lines[0].strip() != DIAGNOSTICS_HEADER:
        raise FormatVersionError(
            f"expected diagnostics header {DIAGNOSTICS_HEADER!r}")
    diag = Diagnostics()
    names = {v: k for k, v in _TYPE_NAMES.items()}
    for line in lines[1:]:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("counter\tscope"):
            continue
        parts = line.split("\t")
        if parts[0] == "counter":
            scope, move = parts[1], names[parts[2]]
            diag.counters[(scope, move)] = [int(x) for x in parts[3:7]]
        elif parts[0] == "trace":
            diag.trace.append((int(parts[1]), float(parts[2])))
    return diag
