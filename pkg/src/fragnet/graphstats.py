"""Graph ingestion and the link/non-link count cache per tree node.

`BlockStats` attributes every observed vertex pair to the tree node at
which the pair's endpoints split apart (their LCA), keeping three views
per internal node:

* pooled:   total (links, observed pairs) crossing between its children,
* pairs:    per child pair (at least one child internal), materialized
            lazily so absent keys mean (0, 0),
* single:   the aggregate over child pairs where both children are leaves.

The leaf-leaf aggregate is what keeps worst-case flat trees cheap: each
such pair holds a single observation, so their collapsed likelihood needs
only the two totals, and an individual pair's counts can always be read
back from the graph itself.

Edits update only the nodes on the path from the moved subtree to the
root. Updates are transactional: every mutating call returns an undo log.
"""

from __future__ import annotations

import hashlib

from . import treecore
from .errors import EdgeListError

EDGE_FORMAT_HEADER = "# fragnet-edges v1"


class Graph:
    """Immutable simple undirected graph with an optional set of
    unobserved (masked) vertex pairs."""

    __slots__ = ("n", "_adj", "_mask", "n_edges", "n_masked")

    def __init__(self, n: int, edges, mask=()):
        if n < 1:
            raise ValueError("graph needs at least one vertex")
        self.n = n
        self._adj = [set() for _ in range(n)]
        self._mask = [set() for _ in range(n)]
        ne = 0
        for u, v in edges:
            self._check_pair(u, v)
            if v not in self._adj[u]:
                self._adj[u].add(v)
                self._adj[v].add(u)
                ne += 1
        nm = 0
        for u, v in mask:
            self._check_pair(u, v)
            if v not in self._mask[u]:
                self._mask[u].add(v)
                self._mask[v].add(u)
                nm += 1
        self.n_edges = ne
        self.n_masked = nm

    def _check_pair(self, u, v):
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise ValueError(f"vertex pair ({u},{v}) out of range for n={self.n}")
        if u == v:
            raise ValueError(f"self-loop at vertex {u}")

    def has_edge(self, u: int, v: int) -> bool:
        return v in self._adj[u]

    def is_masked(self, u: int, v: int) -> bool:
        return v in self._mask[u]

    def neighbors(self, u: int):
        return self._adj[u]

    def masked_partners(self, u: int):
        return self._mask[u]

    @property
    def n_observed_pairs(self) -> int:
        return self.n * (self.n - 1) // 2 - self.n_masked

    def edges(self):
        for u in range(self.n):
            for v in self._adj[u]:
                if u < v:
                    yield (u, v)

    def masked_pairs(self):
        for u in range(self.n):
            for v in self._mask[u]:
                if u < v:
                    yield (u, v)

    def with_mask(self, extra_pairs) -> "Graph":
        """A copy with additional masked pairs."""
        mask = list(self.masked_pairs()) + list(extra_pairs)
        return Graph(self.n, self.edges(), mask)

    def digest(self) -> str:
        return hashlib.sha256(emit_edge_list(self).encode()).hexdigest()


# -------------------------------------------------------------------- #
# text formats
# -------------------------------------------------------------------- #


def _parse_pairs(text: str):
    """Shared edge-list scanner: yields (u, v) pairs plus the header n."""
    n_header = None
    pairs = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("n="):
                try:
                    n_header = int(body[2:])
                except ValueError:
                    raise EdgeListError(f"bad vertex count header {line!r}", line_no)
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise EdgeListError(
                "expected exactly two columns (weighted/directed input "
                f"is not supported), got {len(tokens)}", line_no)
        try:
            u, v = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise EdgeListError(f"non-integer vertex id in {line!r}", line_no)
        if u < 0 or v < 0:
            raise EdgeListError(f"negative vertex id in {line!r}", line_no)
        if u == v:
            raise EdgeListError(f"self-loop at vertex {u}", line_no)
        pairs.append((u, v))
    return n_header, pairs


def parse_edge_list(text: str) -> Graph:
    """Parse TSV lines ``u<TAB>v`` into a graph.

    ``# n=<count>`` fixes the vertex count; other ``#`` lines are comments.
    Duplicate edges collapse. Without a header, n is one plus the largest id.
    """
    n_header, pairs = _parse_pairs(text)
    if n_header is None:
        if not pairs:
            raise EdgeListError("empty edge list without a # n= header")
        n = 1 + max(max(u, v) for u, v in pairs)
    else:
        n = n_header
    return Graph(n, pairs)


def emit_edge_list(graph: Graph) -> str:
    lines = [EDGE_FORMAT_HEADER, f"# n={graph.n}"]
    lines += [f"{u}\t{v}" for u, v in sorted(graph.edges())]
    return "\n".join(lines) + "\n"


def parse_mask(text: str, n: int) -> list[tuple[int, int]]:
    """Parse a mask file (same format as an edge list) into vertex pairs."""
    n_header, pairs = _parse_pairs(text)
    if n_header is not None and n_header != n:
        raise EdgeListError(f"mask header n={n_header} does not match graph n={n}")
    for u, v in pairs:
        if u >= n or v >= n:
            raise EdgeListError(f"masked pair ({u},{v}) out of range for n={n}")
    return pairs


def parse_label_map(text: str) -> dict[int, str]:
    """Parse ``id<TAB>name`` lines into a vertex label map."""
    labels: dict[int, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split("\t")
        if len(tokens) != 2:
            raise EdgeListError("expected id<TAB>name", line_no)
        try:
            vid = int(tokens[0])
        except ValueError:
            raise EdgeListError(f"non-integer vertex id {tokens[0]!r}", line_no)
        if vid in labels:
            raise EdgeListError(f"duplicate vertex id {vid}", line_no)
        labels[vid] = tokens[1]
    return labels


# -------------------------------------------------------------------- #
# sufficient statistics
# -------------------------------------------------------------------- #

_MISSING = object()


class StatsUndo:
    """Reverse log for BlockStats mutations (restore in reverse order)."""

    __slots__ = ("ops", "touched")

    def __init__(self):
        self.ops = []
        self.touched = set()

    def save(self, mapping, key):
        val = mapping.get(key, _MISSING)
        if isinstance(val, list):
            val = tuple(val)
        self.ops.append((mapping, key, val))

    def restore(self):
        for mapping, key, val in reversed(self.ops):
            if val is _MISSING:
                mapping.pop(key, None)
            elif isinstance(val, tuple):
                mapping[key] = list(val)
            else:
                mapping[key] = val


def _pair_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class BlockStats:
    """Per-internal-node link/non-link counts for a (graph, tree) pair."""

    __slots__ = ("pooled", "pairs", "single")

    def __init__(self):
        self.pooled: dict[int, list[int]] = {}
        self.pairs: dict[int, dict[tuple[int, int], list[int]]] = {}
        self.single: dict[int, list[int]] = {}

    # ------------------------------------------------------------ #
    # construction
    # ------------------------------------------------------------ #

    @classmethod
    def from_graph(cls, graph: Graph, tree) -> "BlockStats":
        """Exact counts by one pass over all observed vertex pairs."""
        if tree.leaf_set() != frozenset(range(graph.n)):
            raise ValueError("tree leaves must be exactly the graph vertices")
        stats = cls()
        for nid in tree.internal_ids():
            stats.pooled[nid] = [0, 0]
            stats.pairs[nid] = {}
            stats.single[nid] = [0, 0]
        for i in range(graph.n):
            for j in range(i + 1, graph.n):
                if graph.is_masked(i, j):
                    continue
                node, ci, cj = treecore.lca_with_children(tree, i, j)
                a = 1 if graph.has_edge(i, j) else 0
                stats._bump(tree, node, ci, cj, a, 1)
        return stats

    def _bump(self, tree, node, ca, cb, dl, dn):
        cell = self.pooled[node]
        cell[0] += dl
        cell[1] += dn
        if tree.is_leaf(ca) and tree.is_leaf(cb):
            cell = self.single[node]
            cell[0] += dl
            cell[1] += dn
        else:
            key = _pair_key(ca, cb)
            cell = self.pairs[node].setdefault(key, [0, 0])
            cell[0] += dl
            cell[1] += dn

    # ------------------------------------------------------------ #
    # reads
    # ------------------------------------------------------------ #

    def pooled_counts(self, node) -> tuple[int, int]:
        ln = self.pooled[node]
        return ln[0], ln[1]

    def pair_counts(self, graph: Graph, tree, node, ca, cb) -> tuple[int, int]:
        """Counts for one child pair; leaf-leaf pairs read the graph."""
        if tree.is_leaf(ca) and tree.is_leaf(cb):
            i, j = tree.vertex(ca), tree.vertex(cb)
            if graph.is_masked(i, j):
                return 0, 0
            return (1 if graph.has_edge(i, j) else 0), 1
        ln = self.pairs[node].get(_pair_key(ca, cb))
        return (0, 0) if ln is None else (ln[0], ln[1])

    def totals(self) -> tuple[int, int]:
        links = sum(ln[0] for ln in self.pooled.values())
        obs = sum(ln[1] for ln in self.pooled.values())
        return links, obs

    def equals(self, other: "BlockStats") -> bool:
        return (self.pooled == other.pooled
                and self.single == other.single
                and {k: v for k, v in self.pairs.items()}
                == {k: v for k, v in other.pairs.items()})

    def copy(self) -> "BlockStats":
        out = BlockStats()
        out.pooled = {k: list(v) for k, v in self.pooled.items()}
        out.single = {k: list(v) for k, v in self.single.items()}
        out.pairs = {k: {kk: list(vv) for kk, vv in d.items()}
                     for k, d in self.pairs.items()}
        return out

    # ------------------------------------------------------------ #
    # incremental updates
    # ------------------------------------------------------------ #

    def _cross_update(self, graph: Graph, tree, k, sign, undo: StatsUndo):
        """Add (sign=+1) or subtract (sign=-1) all contributions of pairs
        with one endpoint under ``k`` and one outside, attributed to the
        ancestors of ``k``. The subtree must be attached.
        """
        sub_leaves = list(tree.leaves_under(k))
        sub_set = set(sub_leaves)
        size = len(sub_leaves)

        link_cnt: dict[int, int] = {}
        mask_cnt: dict[int, int] = {}
        for i in sub_leaves:
            for j in graph.neighbors(i):
                if j not in sub_set:
                    link_cnt[j] = link_cnt.get(j, 0) + 1
            for j in graph.masked_partners(i):
                if j not in sub_set:
                    mask_cnt[j] = mask_cnt.get(j, 0) + 1

        # ancestor -> its child on the path down to k
        path_child: dict[int, int] = {}
        prev, cur = k, tree.parent(k)
        while cur is not None:
            path_child[cur] = prev
            prev, cur = cur, tree.parent(cur)

        # bucket external links/masked pairs by (ancestor, branch child)
        def bucket(counts):
            out: dict[tuple[int, int], int] = {}
            for j, cnt in counts.items():
                c = tree.leaf_node(j)
                p = tree.parent(c)
                while p not in path_child:
                    c, p = p, tree.parent(p)
                key = (p, c)
                out[key] = out.get(key, 0) + cnt
            return out

        lbuck = bucket(link_cnt)
        mbuck = bucket(mask_cnt)

        for anc, branch in path_child.items():
            undo.touched.add(anc)
            for other in tree.children(anc):
                if other == branch:
                    continue
                masked = mbuck.get((anc, other), 0)
                dn = size * tree.leaf_count(other) - masked
                dl = lbuck.get((anc, other), 0)
                if dn == 0 and dl == 0:
                    continue
                undo.save(self.pooled, anc)
                cell = self.pooled[anc]
                cell[0] += sign * dl
                cell[1] += sign * dn
                if tree.is_leaf(branch) and tree.is_leaf(other):
                    undo.save(self.single, anc)
                    cell = self.single[anc]
                    cell[0] += sign * dl
                    cell[1] += sign * dn
                else:
                    key = _pair_key(branch, other)
                    undo.save(self.pairs[anc], key)
                    cell = self.pairs[anc].setdefault(key, [0, 0])
                    cell[0] += sign * dl
                    cell[1] += sign * dn
                    if cell[0] == 0 and cell[1] == 0:
                        del self.pairs[anc][key]

    def _rekey_child(self, graph: Graph, tree, parent, old, new, undo: StatsUndo):
        """Child ``old`` of ``parent`` is being replaced by ``new``: move its
        pair entries, reclassifying between the lazy dict and the leaf-leaf
        aggregate as needed. Leaf counts of old and new agree by construction.
        """
        undo.touched.add(parent)
        old_leaf = old is not None and old in tree._nodes and tree.is_leaf(old)
        new_leaf = tree.is_leaf(new)
        pd = self.pairs[parent]
        for other in tree.children(parent):
            if other == new:
                continue
            other_leaf = tree.is_leaf(other)
            if old_leaf and other_leaf:
                # counts sat in the aggregate; pull this one pair out of it
                i, j = tree.vertex(old), tree.vertex(other)
                if graph.is_masked(i, j):
                    dl = dn = 0
                else:
                    dl, dn = (1 if graph.has_edge(i, j) else 0), 1
                if dn or dl:
                    undo.save(self.single, parent)
                    cell = self.single[parent]
                    cell[0] -= dl
                    cell[1] -= dn
            else:
                okey = _pair_key(old, other)
                undo.save(pd, okey)
                cell = pd.pop(okey, None)
                dl, dn = (0, 0) if cell is None else (cell[0], cell[1])
            if dn == 0 and dl == 0:
                continue
            if new_leaf and other_leaf:
                undo.save(self.single, parent)
                cell = self.single[parent]
                cell[0] += dl
                cell[1] += dn
            else:
                nkey = _pair_key(new, other)
                undo.save(pd, nkey)
                cell = pd.setdefault(nkey, [0, 0])
                cell[0] += dl
                cell[1] += dn

    def remove_attached_subtree(self, graph: Graph, tree, k) -> StatsUndo:
        """Subtract the cross contributions of the subtree at ``k`` and
        prepare node entries for the structural detach that must follow.
        """
        undo = StatsUndo()
        self._cross_update(graph, tree, k, -1, undo)
        p = tree.parent(k)
        siblings = [c for c in tree.children(p) if c != k]
        if len(siblings) == 1:
            # p will be contracted away by the detach
            sib = siblings[0]
            g = tree.parent(p)
            if g is not None:
                self._rekey_child(graph, tree, g, p, sib, undo)
            undo.save(self.pooled, p)
            undo.save(self.pairs, p)
            undo.save(self.single, p)
            cell = self.pooled.pop(p)
            if cell[0] or cell[1] or self.pairs[p] or any(self.single[p]):
                raise ValueError("stats for contracted node did not zero out")
            del self.pairs[p]
            del self.single[p]
            undo.touched.add(p)
        return undo

    def add_attached_subtree(self, graph: Graph, tree, k,
                             created=None) -> StatsUndo:
        """Add the cross contributions of the just-inserted subtree at
        ``k``; ``created`` names the fresh binary node of a type-2 insert.
        """
        undo = StatsUndo()
        if created is not None:
            h = next(c for c in tree.children(created) if c != k)
            g = tree.parent(created)
            undo.save(self.pooled, created)
            undo.save(self.pairs, created)
            undo.save(self.single, created)
            self.pooled[created] = [0, 0]
            self.pairs[created] = {}
            self.single[created] = [0, 0]
            undo.touched.add(created)
            if g is not None:
                self._rekey_child(graph, tree, g, h, created, undo)
        self._cross_update(graph, tree, k, +1, undo)
        return undo


# -------------------------------------------------------------------- #
# whole-edit transaction
# -------------------------------------------------------------------- #


class Edit:
    """A detach-and-reinsert description: which node moves, and where."""

    __slots__ = ("detach_ref", "move_type", "site_ref")

    def __init__(self, detach_ref, move_type, site_ref):
        if move_type not in (treecore.TYPE1, treecore.TYPE2):
            raise ValueError(f"unknown move type {move_type}")
        self.detach_ref = detach_ref
        self.move_type = move_type
        self.site_ref = site_ref

    def __repr__(self):
        return (f"Edit(detach={self.detach_ref}, type={self.move_type}, "
                f"site={self.site_ref})")


class EditUndo:
    __slots__ = ("k", "detach_record", "remove_undo", "add_undo", "created")

    def __init__(self, k, detach_record, remove_undo, add_undo, created):
        self.k = k
        self.detach_record = detach_record
        self.remove_undo = remove_undo
        self.add_undo = add_undo
        self.created = created

    @property
    def touched(self):
        return self.remove_undo.touched | self.add_undo.touched


def apply_edit(stats: BlockStats, graph: Graph, tree, edit: Edit) -> EditUndo:
    """Apply a detach+insert edit to the tree and its stats cache.

    Mutates both; afterwards the stats equal a fresh `BlockStats.from_graph`
    on the edited tree. Returns an undo handle for `undo_edit`. Raises (with
    no partial mutation) if the edit references stale nodes.
    """
    k = edit.detach_ref
    tree._get(k)
    if tree.parent(k) is None:
        raise ValueError("cannot move the root")
    tree._get(edit.site_ref)
    if edit.move_type == treecore.TYPE1 and tree.is_leaf(edit.site_ref):
        raise ValueError("type-1 insertion site must be internal")

    remove_undo = stats.remove_attached_subtree(graph, tree, k)
    sub, _, record = treecore.detach(tree, k)
    try:
        if edit.move_type == treecore.TYPE1:
            treecore.insert_type1(tree, sub, edit.site_ref)
            created = None
        else:
            treecore.insert_type2(tree, sub, edit.site_ref)
            created = tree.parent(k)
    except Exception:
        treecore.undo_detach(tree, sub, record)
        remove_undo.restore()
        raise
    add_undo = stats.add_attached_subtree(graph, tree, k, created)
    return EditUndo(k, record, remove_undo, add_undo, created)


def undo_edit(stats: BlockStats, graph: Graph, tree, undo: EditUndo) -> None:
    """Exact inverse of `apply_edit` (tree refs and child order restored)."""
    undo.add_undo.restore()
    sub, _, _ = treecore.detach(tree, undo.k)
    undo.remove_undo.restore()
    treecore.undo_detach(tree, sub, undo.detach_record)
