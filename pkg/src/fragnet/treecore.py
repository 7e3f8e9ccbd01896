"""Rooted multifurcating trees over integer-labelled leaves.

A tree is stored as an arena of nodes addressed by integer refs. Every
internal node has at least two children; leaves carry the vertex label.
Child order is kept for cheap edits but carries no meaning: equality,
hashing and serialization all go through the canonical form, which sorts
children by their smallest contained leaf.

Edits (`detach`, `insert_type1`, `insert_type2`) mutate the tree in place
and keep refs to untouched nodes valid; refs to removed or contracted
nodes go stale and raise `StaleNodeError` on use.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

from .errors import StaleNodeError

NodeRef = int

# SPR insertion move types: TYPE1 adds the subtree as an extra child of an
# internal node; TYPE2 splices a new binary node above any node.
TYPE1 = 1
TYPE2 = 2


class _Node:
    __slots__ = ("parent", "children", "nleaves", "vertex")

    def __init__(self, parent, children, nleaves, vertex):
        self.parent = parent
        self.children = children
        self.nleaves = nleaves
        self.vertex = vertex


class FragTree:
    """Mutable fragmentation tree; leaves are distinct non-negative ints."""

    __slots__ = ("_nodes", "_root", "_next_id", "_leaf_of")

    def __init__(self):
        self._nodes: dict[int, _Node] = {}
        self._root: int | None = None
        self._next_id = 0
        self._leaf_of: dict[int, int] = {}  # vertex -> leaf node ref

    # ---------------------------------------------------------------- #
    # construction
    # ---------------------------------------------------------------- #

    @classmethod
    def leaf(cls, vertex: int) -> "FragTree":
        t = cls()
        t._root = t._new_leaf(vertex)
        return t

    @classmethod
    def from_nested(cls, spec) -> "FragTree":
        """Build a tree from nested lists of leaf labels, e.g. ``[[0,1],2]``.

        A bare int is a single-leaf tree. Every list must have at least two
        entries (no unary nodes) and leaf labels must be distinct
        non-negative ints.
        """
        t = cls()
        t._root = t._build(spec)
        return t

    def _build(self, spec) -> int:
        # iterative post-order so arbitrarily deep nests do not hit the
        # interpreter recursion limit
        if not isinstance(spec, list):
            return self._new_leaf(self._check_label(spec))
        root = self._new_internal()
        stack = [(root, spec)]
        while stack:
            node, children = stack.pop()
            if len(children) < 2:
                raise ValueError("internal node must have at least 2 children")
            for child in children:
                if isinstance(child, list):
                    cid = self._new_internal()
                    stack.append((cid, child))
                else:
                    cid = self._new_leaf(self._check_label(child))
                self._nodes[cid].parent = node
                self._nodes[node].children.append(cid)
        # fill leaf counts bottom-up
        for nid in self._postorder(root):
            n = self._nodes[nid]
            if n.children:
                n.nleaves = sum(self._nodes[c].nleaves for c in n.children)
        return root

    def _check_label(self, label) -> int:
        if isinstance(label, bool) or not isinstance(label, int) or label < 0:
            raise ValueError(f"leaf label must be a non-negative int, got {label!r}")
        if label in self._leaf_of:
            raise ValueError(f"duplicate leaf label {label}")
        return label

    def _new_leaf(self, vertex: int) -> int:
        nid = self._next_id
        self._next_id += 1
        self._nodes[nid] = _Node(None, [], 1, vertex)
        self._leaf_of[vertex] = nid
        return nid

    def _new_internal(self) -> int:
        nid = self._next_id
        self._next_id += 1
        self._nodes[nid] = _Node(None, [], 0, None)
        return nid

    def copy(self) -> "FragTree":
        t = FragTree()
        t._root = self._root
        t._next_id = self._next_id
        t._leaf_of = dict(self._leaf_of)
        t._nodes = {
            nid: _Node(n.parent, list(n.children), n.nleaves, n.vertex)
            for nid, n in self._nodes.items()
        }
        return t

    # ---------------------------------------------------------------- #
    # queries
    # ---------------------------------------------------------------- #

    def _get(self, ref: NodeRef) -> _Node:
        try:
            return self._nodes[ref]
        except KeyError:
            raise StaleNodeError(f"node ref {ref} is not in this tree") from None

    @property
    def root(self) -> NodeRef:
        return self._root

    @property
    def n_leaves(self) -> int:
        return self._nodes[self._root].nleaves

    @property
    def n_nodes(self) -> int:
        return len(self._nodes)

    def node_ids(self):
        return self._nodes.keys()

    def internal_ids(self):
        return (nid for nid, n in self._nodes.items() if n.children)

    def is_leaf(self, ref: NodeRef) -> bool:
        return not self._get(ref).children

    def children(self, ref: NodeRef) -> tuple[NodeRef, ...]:
        return tuple(self._get(ref).children)

    def parent(self, ref: NodeRef) -> NodeRef | None:
        return self._get(ref).parent

    def leaf_count(self, ref: NodeRef) -> int:
        return self._get(ref).nleaves

    def vertex(self, ref: NodeRef) -> int:
        n = self._get(ref)
        if n.vertex is None:
            raise ValueError(f"node {ref} is not a leaf")
        return n.vertex

    def leaf_node(self, vertex: int) -> NodeRef:
        try:
            return self._leaf_of[vertex]
        except KeyError:
            raise ValueError(f"vertex {vertex} is not a leaf of this tree") from None

    def leaf_set(self) -> frozenset[int]:
        return frozenset(self._leaf_of)

    def has_vertex(self, vertex: int) -> bool:
        return vertex in self._leaf_of

    def depth(self, ref: NodeRef) -> int:
        d = 0
        p = self._get(ref).parent
        while p is not None:
            d += 1
            p = self._nodes[p].parent
        return d

    def leaves_under(self, ref: NodeRef):
        """Iterate the vertex labels below ``ref`` (including ``ref`` itself)."""
        self._get(ref)
        stack = [ref]
        while stack:
            n = self._nodes[stack.pop()]
            if n.vertex is not None:
                yield n.vertex
            else:
                stack.extend(n.children)

    def _postorder(self, start: NodeRef | None = None):
        start = self._root if start is None else start
        out, stack = [], [start]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(self._nodes[nid].children)
        return reversed(out)

    def fragments(self) -> frozenset[frozenset[int]]:
        """The tree as a set of leaf sets, one per node (its fragmentation)."""
        sets: dict[int, frozenset] = {}
        out = []
        for nid in self._postorder():
            n = self._nodes[nid]
            if n.vertex is not None:
                s = frozenset((n.vertex,))
            else:
                s = frozenset().union(*(sets[c] for c in n.children))
            sets[nid] = s
            out.append(s)
        return frozenset(out)

    def validate(self, expected_leaves=None) -> None:
        """Check all structural invariants; raise ValueError on violation."""
        if self._root is None or self._root not in self._nodes:
            raise ValueError("missing root")
        seen_vertices = {}
        reached = set()
        stack = [self._root]
        while stack:
            nid = stack.pop()
            if nid in reached:
                raise ValueError(f"node {nid} reached twice")
            reached.add(nid)
            n = self._nodes[nid]
            if n.vertex is not None:
                if n.children:
                    raise ValueError(f"leaf {nid} has children")
                if n.nleaves != 1:
                    raise ValueError(f"leaf {nid} has nleaves {n.nleaves}")
                if n.vertex in seen_vertices:
                    raise ValueError(f"vertex {n.vertex} appears twice")
                seen_vertices[n.vertex] = nid
            else:
                if len(n.children) < 2:
                    raise ValueError(f"internal node {nid} has {len(n.children)} children")
                if n.nleaves != sum(self._nodes[c].nleaves for c in n.children):
                    raise ValueError(f"node {nid} leaf count mismatch")
                for c in n.children:
                    if self._nodes[c].parent != nid:
                        raise ValueError(f"child {c} has wrong parent")
                stack.extend(n.children)
        if reached != set(self._nodes):
            raise ValueError("arena contains unreachable nodes")
        if self._nodes[self._root].parent is not None:
            raise ValueError("root has a parent")
        if seen_vertices != self._leaf_of:
            raise ValueError("leaf index out of sync")
        if expected_leaves is not None and set(seen_vertices) != set(expected_leaves):
            raise ValueError("leaf set does not match expected vertices")

    def __repr__(self):
        return f"FragTree({canonical_serialize(self)})"


# -------------------------------------------------------------------- #
# structural queries
# -------------------------------------------------------------------- #


def lca(tree: FragTree, i: int, j: int) -> NodeRef:
    """Lowest common ancestor of vertices ``i`` and ``j``."""
    return lca_with_children(tree, i, j)[0]


def lca_with_children(tree: FragTree, i: int, j: int):
    """LCA of two vertices plus the two children of it they sit under.

    Returns ``(node, child_i, child_j)``.
    """
    if i == j:
        raise ValueError("lca requires two distinct vertices")
    a = tree.leaf_node(i)
    b = tree.leaf_node(j)
    path = {a: None}
    prev, cur = None, a
    while cur is not None:
        path[cur] = prev
        prev, cur = cur, tree._nodes[cur].parent
    prev, cur = None, b
    while cur not in path:
        prev, cur = cur, tree._nodes[cur].parent
    child_i = path[cur]
    # cur cannot be either leaf because i != j
    return cur, child_i, prev


def tree_distance(tree: FragTree, a: NodeRef, b: NodeRef) -> int:
    """Number of tree edges between two nodes."""
    depth_a = {}
    d = 0
    cur = a
    while cur is not None:
        depth_a[cur] = d
        d += 1
        cur = tree._get(cur).parent
    d = 0
    cur = b
    while cur not in depth_a:
        d += 1
        cur = tree._get(cur).parent
    return d + depth_a[cur]


def project(tree: FragTree, subset) -> FragTree:
    """Restrict the tree to ``subset``: intersect every fragment with it,
    drop empties and contract unary chains.
    """
    sset = set(subset)
    if not sset:
        raise ValueError("projection subset must be nonempty")
    for v in sset:
        tree.leaf_node(v)  # raises for vertices not in the tree
    # bottom-up build of the nested representation of the restriction
    built: dict[int, object] = {}
    for nid in tree._postorder():
        n = tree._nodes[nid]
        if n.vertex is not None:
            built[nid] = n.vertex if n.vertex in sset else None
        else:
            kept = [built[c] for c in n.children if built[c] is not None]
            if not kept:
                built[nid] = None
            elif len(kept) == 1:
                built[nid] = kept[0]
            else:
                built[nid] = kept
    return FragTree.from_nested(built[tree._root])


# -------------------------------------------------------------------- #
# SPR edits
# -------------------------------------------------------------------- #


@dataclass
class DetachRecord:
    """Everything needed to identify and exactly undo a detach.

    ``site`` is the normalized reinsertion site that recreates the original
    tree: ``(TYPE1, old_parent)`` when the parent survived, ``(TYPE2,
    sibling)`` when it was contracted away. ``anchor`` equals the site node
    and seeds local candidate sets.
    """

    anchor: NodeRef
    site: tuple[int, NodeRef]
    parent: NodeRef
    child_index: int
    contracted: NodeRef | None
    contract_index: int | None
    sibling: NodeRef | None


def detach(tree: FragTree, k: NodeRef):
    """Remove the subtree rooted at ``k``, contracting its parent if that
    leaves a single child.

    Mutates ``tree`` into the reduced tree and returns ``(subtree, reduced,
    record)`` where ``subtree`` owns the removed nodes (same refs) and
    ``record`` supports exact undo via `undo_detach`.
    """
    node = tree._get(k)
    if node.parent is None:
        raise ValueError("cannot detach the root")
    p = node.parent
    pnode = tree._nodes[p]
    idx = pnode.children.index(k)
    pnode.children.pop(idx)
    node.parent = None
    nl = node.nleaves
    a = p
    while a is not None:
        tree._nodes[a].nleaves -= nl
        a = tree._nodes[a].parent

    contracted = contract_index = sibling = None
    if len(pnode.children) == 1:
        sibling = pnode.children[0]
        g = pnode.parent
        tree._nodes[sibling].parent = g
        if g is None:
            tree._root = sibling
        else:
            contract_index = tree._nodes[g].children.index(p)
            tree._nodes[g].children[contract_index] = sibling
        del tree._nodes[p]
        contracted = p
        anchor = sibling
        site = (TYPE2, sibling)
    else:
        anchor = p
        site = (TYPE1, p)

    sub = FragTree()
    sub._root = k
    sub._next_id = tree._next_id
    stack = [k]
    while stack:
        nid = stack.pop()
        n = tree._nodes.pop(nid)
        sub._nodes[nid] = n
        if n.vertex is not None:
            del tree._leaf_of[n.vertex]
            sub._leaf_of[n.vertex] = nid
        else:
            stack.extend(n.children)

    record = DetachRecord(anchor, site, p, idx, contracted, contract_index, sibling)
    return sub, tree, record


def undo_detach(reduced: FragTree, subtree: FragTree, record: DetachRecord) -> FragTree:
    """Exact inverse of `detach`: restores node refs and child order."""
    k = subtree._root
    _absorb(reduced, subtree)
    if record.contracted is not None:
        sib = record.sibling
        g = reduced._nodes[sib].parent
        pnode = _Node(g, [sib], reduced._nodes[sib].nleaves, None)
        reduced._nodes[record.contracted] = pnode
        reduced._nodes[sib].parent = record.contracted
        if g is None:
            reduced._root = record.contracted
        else:
            reduced._nodes[g].children[record.contract_index] = record.contracted
    pnode = reduced._nodes[record.parent]
    pnode.children.insert(record.child_index, k)
    reduced._nodes[k].parent = record.parent
    nl = reduced._nodes[k].nleaves
    a = record.parent
    while a is not None:
        reduced._nodes[a].nleaves += nl
        a = reduced._nodes[a].parent
    return reduced


def _absorb(tree: FragTree, subtree: FragTree) -> None:
    """Move subtree nodes into tree's arena, remapping refs on collision."""
    if not subtree._nodes:
        raise ValueError("cannot insert an empty subtree")
    for v in subtree._leaf_of:
        if v in tree._leaf_of:
            raise ValueError(f"subtree leaf {v} already present in the tree")
    collide = [nid for nid in subtree._nodes if nid in tree._nodes]
    if collide:
        remap = {}
        for nid in subtree._nodes:
            remap[nid] = tree._next_id if nid in tree._nodes else nid
            if nid in tree._nodes:
                tree._next_id += 1
        nodes = {}
        for nid, n in subtree._nodes.items():
            n.parent = None if n.parent is None else remap[n.parent]
            n.children = [remap[c] for c in n.children]
            nodes[remap[nid]] = n
        subtree._nodes = nodes
        subtree._leaf_of = {v: remap[r] for v, r in subtree._leaf_of.items()}
        subtree._root = remap[subtree._root]
    tree._nodes.update(subtree._nodes)
    tree._leaf_of.update(subtree._leaf_of)
    tree._next_id = max(tree._next_id, subtree._next_id,
                        max(subtree._nodes) + 1)
    # the subtree handle is dead from here on
    subtree._nodes = {}
    subtree._leaf_of = {}
    subtree._root = None


def insert_type1(reduced: FragTree, subtree: FragTree, h: NodeRef) -> FragTree:
    """Add the subtree as an extra child of the internal node ``h``."""
    hnode = reduced._get(h)
    if not hnode.children:
        raise ValueError("type-1 insertion requires an internal node; "
                         "use insert_type2 for leaves")
    k = subtree._root
    _absorb(reduced, subtree)
    hnode.children.append(k)
    reduced._nodes[k].parent = h
    nl = reduced._nodes[k].nleaves
    a = h
    while a is not None:
        reduced._nodes[a].nleaves += nl
        a = reduced._nodes[a].parent
    return reduced


def insert_type2(reduced: FragTree, subtree: FragTree, h: NodeRef,
                 _node_id: int | None = None) -> FragTree:
    """Replace the subtree at ``h`` by a new binary node whose children are
    the old ``h`` subtree and the inserted subtree.
    """
    hnode = reduced._get(h)
    k = subtree._root
    _absorb(reduced, subtree)
    if _node_id is None:
        p = reduced._next_id
        reduced._next_id += 1
    else:
        if _node_id in reduced._nodes:
            raise ValueError(f"node id {_node_id} already in use")
        p = _node_id
    g = hnode.parent
    knode = reduced._nodes[k]
    reduced._nodes[p] = _Node(g, [h, k], hnode.nleaves + knode.nleaves, None)
    hnode.parent = p
    knode.parent = p
    if g is None:
        reduced._root = p
    else:
        gnode = reduced._nodes[g]
        gnode.children[gnode.children.index(h)] = p
    nl = knode.nleaves
    a = g
    while a is not None:
        reduced._nodes[a].nleaves += nl
        a = reduced._nodes[a].parent
    return reduced


def candidate_sites(reduced: FragTree, anchor: NodeRef, radius: int):
    """All (move type, node) pairs within tree-edge distance ``radius`` of
    ``anchor``; type 1 only at internal nodes, type 2 everywhere.
    """
    sites = set()
    for nid in nodes_within(reduced, anchor, radius):
        if reduced._nodes[nid].children:
            sites.add((TYPE1, nid))
        sites.add((TYPE2, nid))
    return sites


def nodes_within(reduced: FragTree, anchor: NodeRef, radius: int) -> list[NodeRef]:
    """Nodes within ``radius`` edges of ``anchor``, in deterministic BFS order."""
    reduced._get(anchor)
    seen = {anchor}
    order = [anchor]
    frontier = deque(((anchor, 0),))
    while frontier:
        nid, d = frontier.popleft()
        if d == radius:
            continue
        n = reduced._nodes[nid]
        neigh = ([] if n.parent is None else [n.parent]) + n.children
        for m in neigh:
            if m not in seen:
                seen.add(m)
                order.append(m)
                frontier.append((m, d + 1))
    return order


# -------------------------------------------------------------------- #
# serialization
# -------------------------------------------------------------------- #


def canonical_serialize(tree: FragTree) -> str:
    """Order-invariant nested-list text form, children sorted by their
    smallest contained leaf, e.g. ``[[0,1],2]``. A single leaf is ``0``.
    """
    key: dict[int, int] = {}
    text: dict[int, str] = {}
    for nid in tree._postorder():
        n = tree._nodes[nid]
        if n.vertex is not None:
            key[nid] = n.vertex
            text[nid] = str(n.vertex)
        else:
            cs = sorted(n.children, key=key.__getitem__)
            key[nid] = key[cs[0]]
            text[nid] = "[" + ",".join(text[c] for c in cs) + "]"
    return text[tree._root]


def canonical_parse(text: str) -> FragTree:
    """Inverse of `canonical_serialize`; strict about structure.

    Rejects unary nodes, duplicate leaves, and leaf sets that are not
    exactly ``0..n-1``.
    """
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed tree text: {e}") from None
    tree = FragTree.from_nested(spec)  # rejects unary nodes and duplicates
    leaves = tree.leaf_set()
    if leaves != frozenset(range(len(leaves))):
        raise ValueError("tree leaves must be exactly 0..n-1")
    return tree


def to_newick(tree: FragTree) -> str:
    """Newick form with integer leaf labels and canonical child order."""
    key: dict[int, int] = {}
    text: dict[int, str] = {}
    for nid in tree._postorder():
        n = tree._nodes[nid]
        if n.vertex is not None:
            key[nid] = n.vertex
            text[nid] = str(n.vertex)
        else:
            cs = sorted(n.children, key=key.__getitem__)
            key[nid] = key[cs[0]]
            text[nid] = "(" + ",".join(text[c] for c in cs) + ")"
    return text[tree._root] + ";"


def trees_equal(a: FragTree, b: FragTree) -> bool:
    """Equality as fragmentations (ignores child order and node refs)."""
    return a.fragments() == b.fragments()
