"""Partition and tree priors: the two-parameter splitting rule, the
fragmentation-tree prior built from it, CRP probabilities, and exact
sampling.

All probability arithmetic is done in log space. The splitting rule is
evaluated in a cancelled form in which every factor is positive on the
supported parameter box (0 < alpha <= 1, beta + alpha > 0), so it is also
well defined at beta = 0 where the raw numerator and denominator both
vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

NEG_INF = float("-inf")


@dataclass(frozen=True)
class GibbsParams:
    """Splitting-rule parameters. Defaults alpha = beta = 1/2."""

    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.beta + self.alpha <= 0.0:
            raise ValueError(
                f"beta + alpha must be positive, got {self.beta + self.alpha}")


@dataclass(frozen=True)
class SignedLogValue:
    """A real number as (sign, log magnitude); sign 0 encodes exact zero."""

    sign: int
    log_magnitude: float

    @classmethod
    def from_real(cls, x: float) -> "SignedLogValue":
        if x == 0.0:
            return cls(0, NEG_INF)
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def to_real(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_magnitude)

    def __mul__(self, other: "SignedLogValue") -> "SignedLogValue":
        if self.sign == 0 or other.sign == 0:
            return SignedLogValue(0, NEG_INF)
        return SignedLogValue(self.sign * other.sign,
                              self.log_magnitude + other.log_magnitude)

    def __add__(self, other: "SignedLogValue") -> "SignedLogValue":
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        a, b = self, other
        if b.log_magnitude > a.log_magnitude:
            a, b = b, a
        d = b.log_magnitude - a.log_magnitude
        if a.sign == b.sign:
            return SignedLogValue(a.sign, a.log_magnitude + math.log1p(math.exp(d)))
        if d == 0.0:
            return SignedLogValue(0, NEG_INF)
        return SignedLogValue(a.sign, a.log_magnitude + math.log1p(-math.exp(d)))

    def __neg__(self) -> "SignedLogValue":
        return SignedLogValue(-self.sign, self.log_magnitude)


def rising_factorial(x: float, n: int) -> SignedLogValue:
    """x^(n) = x (x+1) ... (x+n-1) as a signed log value; x^(0) = 1."""
    if n < 0:
        raise ValueError("rising factorial needs n >= 0")
    sign = 1
    logmag = 0.0
    for i in range(n):
        f = x + i
        if f == 0.0:
            return SignedLogValue(0, NEG_INF)
        if f < 0.0:
            sign = -sign
        logmag += math.log(abs(f))
    return SignedLogValue(sign, logmag)


def _log_rising_pos(x: float, n: int) -> float:
    """log x^(n) for x >= 0 (the only case the cancelled forms need)."""
    if n == 0:
        return 0.0
    if x == 0.0:
        return NEG_INF
    return math.lgamma(x + n) - math.lgamma(x)


def _log_sub_exp(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a > b."""
    if b == NEG_INF:
        return a
    return a + math.log1p(-math.exp(b - a))


def split_log_prob(sizes, params: GibbsParams) -> float:
    """Log probability that a block fragments into parts of the given sizes.

    Cancelled form of
        (beta/alpha)^(k) (-1)^k prod_i (-alpha)^(n_i)
        / [beta^(n) + (beta/alpha) (-alpha)^(n)],
    equal to
        alpha^(k-1) (1+beta/alpha)^(k-1) prod_i (1-alpha)^(n_i - 1)
        / [(1+beta)^(n-1) - (1-alpha)^(n-1)].

    Note the + in the uncancelled denominator: it is forced by multiplying
    the CRP partition probability by the geometric marginalization over
    trivial splits, and is the sign for which the rule sums to one over all
    partitions with >= 2 blocks.
    """
    sizes = list(sizes)
    k = len(sizes)
    if k < 2:
        raise ValueError("a split needs at least 2 parts")
    n = 0
    a, b = params.alpha, params.beta
    lognum = (k - 1) * math.log(a) + _log_rising_pos(1.0 + b / a, k - 1)
    for s in sizes:
        if s < 1:
            raise ValueError(f"part sizes must be >= 1, got {s}")
        n += s
        lognum += _log_rising_pos(1.0 - a, s - 1)
    logden = _log_sub_exp(_log_rising_pos(1.0 + b, n - 1),
                          _log_rising_pos(1.0 - a, n - 1))
    return lognum - logden


def split_log_prob_printed_form(sizes, params: GibbsParams) -> float:
    """The splitting rule with the denominator beta^(n) - (beta/alpha)
    (-alpha)^(n), evaluated by direct signed-log products.

    Kept as a reference: this variant does not normalize (see the regression
    test pinning the mismatch) and is not used by the models.
    """
    sizes = list(sizes)
    k = len(sizes)
    n = sum(sizes)
    a, b = params.alpha, params.beta
    num = rising_factorial(b / a, k) * SignedLogValue((-1) ** k, 0.0)
    for s in sizes:
        num = num * rising_factorial(-a, s)
    den = rising_factorial(b, n) + (-(SignedLogValue.from_real(b / a)
                                      * rising_factorial(-a, n)))
    if num.sign == 0:
        return NEG_INF
    if num.sign < 0 or den.sign <= 0:
        raise ValueError("printed-form value is not a probability here")
    return num.log_magnitude - den.log_magnitude


def consistency_residual(sizes, params: GibbsParams) -> float:
    """Residual of the one-extra-element consistency identity.

    q(n_1..n_k) minus the probability mass of all ways a partition of an
    (n+1)-set restricts to it: the new element as an extra singleton, the
    new element joining each part, or a first split into (1, n) followed by
    the original partition. Zero for a consistent rule.
    """
    sizes = list(sizes)
    q = math.exp(split_log_prob(sizes, params))
    total = math.exp(split_log_prob(sizes + [1], params))
    for i in range(len(sizes)):
        grown = list(sizes)
        grown[i] += 1
        total += math.exp(split_log_prob(grown, params))
    total += math.exp(split_log_prob([1, sum(sizes)], params)) * q
    return q - total


def tree_log_prior(tree, params: GibbsParams) -> float:
    """Log prior of a fragmentation tree: sum of splitting-rule log
    probabilities over internal nodes (singletons contribute q(1) = 1).
    """
    total = 0.0
    for nid in tree.internal_ids():
        total += split_log_prob(
            [tree.leaf_count(c) for c in tree.children(nid)], params)
    return total


def node_split_log_prob(tree, nid, params: GibbsParams) -> float:
    """Splitting-rule log probability of one internal node's children."""
    return split_log_prob([tree.leaf_count(c) for c in tree.children(nid)],
                          params)


def crp_log_prob(assignment, params: GibbsParams) -> float:
    """Log CRP probability of a partition given as a block assignment
    (one block label per element); puts mass on the one-block partition.
    """
    counts: dict = {}
    for b in assignment:
        counts[b] = counts.get(b, 0) + 1
    return crp_log_prob_sizes(counts.values(), params)


def crp_log_prob_sizes(partition_sizes, params: GibbsParams) -> float:
    """Log CRP probability of a partition with the given block sizes."""
    sizes = list(partition_sizes)
    k = len(sizes)
    if k < 1 or any(s < 1 for s in sizes):
        raise ValueError("partition must have nonempty blocks")
    n = sum(sizes)
    a, b = params.alpha, params.beta
    lp = ((k - 1) * math.log(a)
          + _log_rising_pos(1.0 + b / a, k - 1)
          - _log_rising_pos(1.0 + b, n - 1))
    for s in sizes:
        lp += _log_rising_pos(1.0 - a, s - 1)
    return lp


def trivial_partition_log_prob(n: int, params: GibbsParams) -> float:
    """Log CRP probability of the one-block partition of an n-set."""
    return crp_log_prob_sizes([n], params)


def sample_crp_partition(n: int, params: GibbsParams, rng) -> list[int]:
    """Sequential CRP over n elements; returns block index per element."""
    a, b = params.alpha, params.beta
    assign = [0]
    counts = [1]
    for m in range(1, n):
        r = rng.random() * (m + b)
        chosen = -1
        for i, c in enumerate(counts):
            r -= c - a
            if r < 0.0:
                chosen = i
                break
        if chosen < 0:
            chosen = len(counts)
            counts.append(0)
        counts[chosen] += 1
        assign.append(chosen)
    return assign


def sample_partition(n: int, params: GibbsParams, rng) -> list[int]:
    """Draw a partition of 0..n-1 with >= 2 blocks from the splitting rule.

    Runs the sequential CRP and rejects one-block outcomes, which realizes
    the geometric marginalization over trivial splits exactly.
    """
    if n < 2:
        raise ValueError("a split needs at least 2 elements")
    while True:
        assign = sample_crp_partition(n, params, rng)
        if max(assign) > 0:
            return assign


def sample_tree(n: int, params: GibbsParams, rng):
    """Draw a fragmentation tree over leaves 0..n-1 from the tree prior."""
    from .treecore import FragTree

    if n < 1:
        raise ValueError("need at least one leaf")
    if n == 1:
        return FragTree.leaf(0)

    def grow(members):
        if len(members) == 1:
            return members[0]
        assign = sample_partition(len(members), params, rng)
        blocks: dict[int, list] = {}
        for v, bid in zip(members, assign):
            blocks.setdefault(bid, []).append(v)
        return [grow(vs) for vs in blocks.values()]

    return FragTree.from_nested(grow(list(range(n))))
