"""Independent brute-force oracles used to freeze expected values.

Everything here works on fragment sets (sets of leaf sets) or raw nested
specs, deliberately avoiding the package's tree traversals so the two
routes stay independent.
"""

import itertools

from fragnet import FragTree
from fragnet.treecore import canonical_serialize


def set_partitions(items):
    """All partitions of ``items`` as lists of lists (any block count)."""
    items = list(items)
    if not items:
        return
    if len(items) == 1:
        yield [[items[0]]]
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def bell_number(n):
    return sum(1 for _ in set_partitions(range(n)))


def all_tree_specs(leafset):
    """All fragmentation trees over ``leafset`` as nested specs."""
    leafset = list(leafset)
    if len(leafset) == 1:
        yield leafset[0]
        return
    for part in set_partitions(leafset):
        if len(part) < 2:
            continue
        for combo in itertools.product(*(list(all_tree_specs(b)) for b in part)):
            yield list(combo)


def all_trees(n):
    """All fragmentation trees over leaves 0..n-1, one per canonical form."""
    seen = {}
    for spec in all_tree_specs(range(n)):
        t = FragTree.from_nested(spec)
        seen.setdefault(canonical_serialize(t), t)
    return list(seen.values())


def spec_fragments(spec):
    """Fragment set (frozenset of frozensets) of a nested spec."""
    out = set()

    def rec(s):
        if not isinstance(s, list):
            leaves = frozenset((s,))
        else:
            leaves = frozenset().union(*(rec(c) for c in s))
        out.add(leaves)
        return leaves

    rec(spec)
    return frozenset(out)


def fragment_lca(fragments, i, j):
    """Smallest fragment containing both vertices."""
    best = None
    for f in fragments:
        if i in f and j in f and (best is None or len(f) < len(best)):
            best = f
    return best


def restrict_fragments(fragments, subset):
    """Set-theoretic projection: intersect, drop empties, deduplicate."""
    subset = frozenset(subset)
    return frozenset(f & subset for f in fragments if f & subset)


def brute_force_stats(graph, tree):
    """Pooled per-node counts via fragment-set LCA, keyed by leaf set."""
    frags = tree.fragments()
    pooled = {}
    for i in range(graph.n):
        for j in range(i + 1, graph.n):
            if graph.is_masked(i, j):
                continue
            f = fragment_lca(frags, i, j)
            cell = pooled.setdefault(f, [0, 0])
            cell[0] += 1 if graph.has_edge(i, j) else 0
            cell[1] += 1
    return pooled


def node_distance_matrix(tree):
    """All-pairs tree-edge distances by BFS from every node."""
    ids = list(tree.node_ids())
    adj = {nid: [] for nid in ids}
    for nid in ids:
        p = tree.parent(nid)
        if p is not None:
            adj[nid].append(p)
            adj[p].append(nid)
    dist = {}
    for src in ids:
        d = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in d:
                        d[v] = d[u] + 1
                        nxt.append(v)
            frontier = nxt
        dist[src] = d
    return dist


def successor_edits(tree, radius=None, anchor_only=False):
    """Every (detach node, move type, site) triple and the canonical form it
    produces, enumerated on copies via the public edit API."""
    from fragnet import detach, insert_type1, insert_type2, TYPE1, TYPE2
    from fragnet.treecore import nodes_within

    base = canonical_serialize(tree)
    out = []
    ids = [nid for nid in tree.node_ids() if nid != tree.root]
    for k in ids:
        work = tree.copy()
        sub, red, rec = detach(work, k)
        if radius is None:
            pool = list(red.node_ids())
        else:
            pool = nodes_within(red, rec.anchor, radius)
        for h in pool:
            for mtype in (TYPE1, TYPE2):
                if mtype == TYPE1 and red.is_leaf(h):
                    continue
                w2 = tree.copy()
                s2, r2, _ = detach(w2, k)
                if mtype == TYPE1:
                    insert_type1(r2, s2, h)
                else:
                    insert_type2(r2, s2, h)
                r2.validate()
                out.append((k, mtype, h, canonical_serialize(r2)))
    assert canonical_serialize(tree) == base
    return out
