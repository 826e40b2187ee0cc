"""Link/cut trees with write instrumentation.

Each tree of the modelled forest is decomposed into preferred paths;
each path is stored in a splay tree keyed by depth (shallowest node is
the in-order minimum).  Per node exactly one parent pointer is set:

  - internal BST node:      bst_parent = its BST parent, path_parent unset
  - root of a non-top BST:  bst_parent unset, path_parent = a node in the
                            BST one path closer to the tree root
  - root of the top BST:    bst_parent = itself, path_parent unset

The self-loop convention makes the exported pointer snapshot total (one
target per node, roots pointing at themselves).  During restructuring a
self-looped parent is read as "no BST parent"; whenever a rotation makes
a node the root of its BST, the stored encoding is normalised back to
the table above.  Lazy orientation flips (``flip`` bits) are pushed down
by ``lct_release`` exactly at the call sites of the splay/expose
routines, never eagerly.

Every assignment to ``bst_parent``/``path_parent`` is appended to
``write_log``, even when the value is unchanged; ``touch_log``
additionally records every node released or operated on, which backs the
optional widened mask semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dsu import check_priorities
from .errors import ContractViolation, InvalidArgument


@dataclass
class LctState:
    left: list[int | None]
    right: list[int | None]
    bst_parent: list[int | None]
    path_parent: list[int | None]
    flip: list[int]
    priority: list[float]
    write_log: set[int] = field(default_factory=set)
    touch_log: set[int] = field(default_factory=set)
    rotations: int = 0

    @property
    def n(self) -> int:
        return len(self.left)


def lct_new(n: int, priorities) -> LctState:
    """A forest of n singletons, each its own self-parented root."""
    pri = check_priorities(n, priorities)
    return LctState(
        left=[None] * n,
        right=[None] * n,
        bst_parent=list(range(n)),
        path_parent=[None] * n,
        flip=[0] * n,
        priority=pri,
    )


def _check_node(state: LctState, u: int) -> None:
    if not 0 <= u < state.n:
        raise InvalidArgument(f"node {u} out of range for n={state.n}")


def _set_bp(state: LctState, u: int, value: int | None) -> None:
    state.bst_parent[u] = value
    state.write_log.add(u)
    state.touch_log.add(u)


def _set_pp(state: LctState, u: int, value: int | None) -> None:
    state.path_parent[u] = value
    state.write_log.add(u)
    state.touch_log.add(u)


def _is_bst_root(state: LctState, u: int) -> bool:
    p = state.bst_parent[u]
    return p is None or p == u


def lct_release(state: LctState, u: int | None) -> None:
    """Push u's pending orientation flip one level down.  No-op on absent."""
    if u is None:
        return
    state.touch_log.add(u)
    if state.flip[u]:
        state.left[u], state.right[u] = state.right[u], state.left[u]
        if state.left[u] is not None:
            state.flip[state.left[u]] ^= 1
        if state.right[u] is not None:
            state.flip[state.right[u]] ^= 1
        state.flip[u] = 0


def lct_rotate(state: LctState, u: int) -> None:
    """Raise u one BST level (zig/zag), preserving in-order.

    Callers must have released flips at u, its parent, and its
    grandparent beforehand.
    """
    _check_node(state, u)
    v = state.bst_parent[u]
    if v is None or v == u:
        raise ContractViolation("rotate needs a node with a BST parent")
    w_raw = state.bst_parent[v]
    w = None if (w_raw is None or w_raw == v) else w_raw
    if state.left[v] == u:
        b = state.right[u]
        state.left[v] = b
        if b is not None:
            _set_bp(state, b, v)
        state.right[u] = v
    elif state.right[v] == u:
        b = state.left[u]
        state.right[v] = b
        if b is not None:
            _set_bp(state, b, v)
        state.left[u] = v
    else:
        raise ContractViolation(f"BST links corrupt at nodes {u}, {v}")
    _set_pp(state, u, state.path_parent[v])
    _set_bp(state, v, u)
    _set_pp(state, v, None)
    if w is not None:
        if state.left[w] == v:
            state.left[w] = u
        else:
            state.right[w] = u
        _set_bp(state, u, w)
    else:
        # u became its BST's root: self-loop when it heads the whole
        # tree, absent when a path-parent (just inherited from v) is set
        _set_bp(state, u, u if state.path_parent[u] is None else None)
    state.rotations += 1


def lct_splay(state: LctState, u: int) -> None:
    """Make u the root of its BST via zig / zig-zig / zig-zag rotations."""
    _check_node(state, u)
    while not _is_bst_root(state, u):
        v = state.bst_parent[u]
        w_raw = state.bst_parent[v]
        w = None if (w_raw is None or w_raw == v) else w_raw
        lct_release(state, w)
        lct_release(state, v)
        lct_release(state, u)
        if w is None:
            lct_rotate(state, u)
        elif (state.left[w] == v) == (state.left[v] == u):
            lct_rotate(state, v)
            lct_rotate(state, u)
        else:
            lct_rotate(state, u)
            lct_rotate(state, u)
    lct_release(state, u)


def lct_expose(state: LctState, u: int) -> None:
    """Make the u-to-root path preferred, with u the top BST's root.

    Afterwards u is self-parented and has no right child (it is the
    deepest node of its preferred path).
    """
    _check_node(state, u)
    while True:
        lct_splay(state, u)
        r = state.right[u]
        if r is not None:
            # deeper path nodes split into their own BST, hung off u
            _set_bp(state, r, None)
            _set_pp(state, r, u)
            state.right[u] = None
        w = state.path_parent[u]
        if w is not None:
            lct_splay(state, w)
            rw = state.right[w]
            if rw is not None:
                _set_bp(state, rw, None)
                _set_pp(state, rw, w)
            state.right[w] = u
            _set_bp(state, u, w)
            _set_pp(state, u, None)
        if state.bst_parent[u] == u:
            return


def lct_find_root(state: LctState, u: int) -> int:
    """Root of u's tree: the leftmost node of u's exposed BST."""
    _check_node(state, u)
    lct_expose(state, u)
    root = u
    lct_release(state, root)
    while state.left[root] is not None:
        root = state.left[root]
        lct_release(state, root)
    lct_expose(state, root)
    return root


def lct_link(state: LctState, u: int, v: int) -> None:
    """Attach tree root u below v.  u must head its own tree, v another."""
    _check_node(state, u)
    _check_node(state, v)
    if u == v:
        raise ContractViolation("link needs two distinct nodes")
    lct_expose(state, u)
    if state.left[u] is not None:
        raise ContractViolation(f"link: node {u} is not the root of its tree")
    lct_expose(state, v)
    if state.bst_parent[u] != u:
        raise ContractViolation(f"link: nodes {u} and {v} share a tree")
    state.left[u] = v
    _set_bp(state, v, u)


def lct_cut(state: LctState, u: int) -> None:
    """Remove the edge from u to its parent in the modelled tree."""
    _check_node(state, u)
    lct_expose(state, u)
    child = state.left[u]
    if child is None:
        raise ContractViolation(f"cut: node {u} is the root of its tree")
    _set_bp(state, child, child)
    state.left[u] = None


def lct_evert(state: LctState, u: int) -> None:
    """Re-root u's tree at u by lazily reversing the u-to-root path."""
    _check_node(state, u)
    lct_expose(state, u)
    state.flip[u] ^= 1
    lct_release(state, u)


def pointer_snapshot(state: LctState) -> list[int]:
    """One pointer target per node: bst_parent if set, else path_parent."""
    out = []
    for i in range(state.n):
        p = state.bst_parent[i]
        if p is None:
            p = state.path_parent[i]
        if p is None:
            raise ContractViolation(f"node {i} has no parent pointer")
        out.append(p)
    return out


def lct_query_toggle(
    state: LctState, u: int, v: int, mask_mode: str = "writes"
) -> tuple[int, list[int], list[int]]:
    """Toggle the edge between u and v; answer whether they were connected.

    Returns (y, mask, pointers): y = 1 iff the pair was connected (an
    edge on v's root path is cut), else 0 (u's tree is linked under v).
    mask[i] = 0 marks nodes whose parent pointer was written during the
    compound operation; mask_mode="touched" widens that to every node
    released or operated on.  Pointers are the post-operation snapshot.
    """
    _check_node(state, u)
    _check_node(state, v)
    if u == v:
        raise InvalidArgument("query_toggle needs two distinct nodes")
    if mask_mode not in ("writes", "touched"):
        raise InvalidArgument(f"unknown mask_mode {mask_mode!r}")
    state.write_log.clear()
    state.touch_log.clear()
    if state.priority[u] < state.priority[v]:
        u, v = v, u
    state.touch_log.update((u, v))
    lct_evert(state, u)
    if lct_find_root(state, v) != u:
        lct_link(state, u, v)
        answer = 0
    else:
        lct_cut(state, v)
        answer = 1
    zeroed = state.write_log if mask_mode == "writes" else (state.write_log | state.touch_log)
    mask = [0 if i in zeroed else 1 for i in range(state.n)]
    ptrs = pointer_snapshot(state)
    state.write_log.clear()
    state.touch_log.clear()
    return answer, mask, ptrs


def _inorder(state: LctState, bst_root: int) -> list[int]:
    """Flip-resolved in-order sequence of one BST, without mutating it."""
    out: list[int] = []
    stack: list[tuple[int | None, int, bool]] = [(bst_root, 0, False)]
    while stack:
        node, acc, emit = stack.pop()
        if node is None:
            continue
        if emit:
            out.append(node)
            continue
        eff = acc ^ state.flip[node]
        first, second = state.left[node], state.right[node]
        if eff:
            first, second = second, first
        stack.append((second, eff, False))
        stack.append((node, eff, True))
        stack.append((first, eff, False))
    return out


def decode_forest(state: LctState) -> list[int]:
    """Parent array of the modelled forest (roots point at themselves).

    Each BST's in-order sequence lists one preferred path from its
    shallowest node down; the shallowest node's parent is the BST's
    path-parent target (absent only for the top path, whose head is the
    tree root).
    """
    parent = list(range(state.n))
    for b in range(state.n):
        if not _is_bst_root(state, b):
            continue
        order = _inorder(state, b)
        pp = state.path_parent[b]
        if pp is not None:
            parent[order[0]] = pp
        for shallower, deeper in zip(order, order[1:]):
            parent[deeper] = shallower
    return parent


def check_state(state: LctState) -> None:
    """Raise ContractViolation unless the representation invariants hold."""
    n = state.n
    for i in range(n):
        bp, pp = state.bst_parent[i], state.path_parent[i]
        if (bp is None) == (pp is None):
            raise ContractViolation(f"node {i} must have exactly one parent pointer")
        if bp == i and pp is not None:
            raise ContractViolation(f"top root {i} must not carry a path-parent")
        if pp is not None and not _is_bst_root(state, i):
            raise ContractViolation(f"path-parent on non-root BST node {i}")
        for child in (state.left[i], state.right[i]):
            if child is not None and state.bst_parent[child] != i:
                raise ContractViolation(f"child link {i}->{child} not mirrored")
        if state.flip[i] not in (0, 1):
            raise ContractViolation(f"flip bit of node {i} out of range")


def to_dot_pointers(state: LctState) -> str:
    """Raw pointer graph: solid BST parents, dashed path-parents."""
    lines = ["digraph lct_pointers {"]
    for i in range(state.n):
        if state.bst_parent[i] is not None:
            lines.append(f"  {i} -> {state.bst_parent[i]};")
        elif state.path_parent[i] is not None:
            lines.append(f"  {i} -> {state.path_parent[i]} [style=dashed];")
    lines.append("}")
    return "\n".join(lines)


def to_dot_forest(state: LctState) -> str:
    """Decoded modelled forest as DOT text."""
    parent = decode_forest(state)
    lines = ["digraph lct_forest {"]
    for i, p in enumerate(parent):
        lines.append(f"  {i} -> {p};")
    lines.append("}")
    return "\n".join(lines)
