"""Disjoint-set union with write instrumentation.

Union by random static priority, full path compression.  Every write to
a parent pointer during an operation lands in ``write_log`` so callers
can derive step-level supervision: which nodes an operation touched and
what the pointer forest looks like afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidArgument


def check_priorities(n: int, priorities) -> list[float]:
    """Shared validation for priority vectors (also used by lct)."""
    if n < 1:
        raise InvalidArgument(f"need at least one node, got n={n}")
    pri = [float(p) for p in priorities]
    if len(pri) != n:
        raise InvalidArgument(f"expected {n} priorities, got {len(pri)}")
    if any(not 0.0 <= p < 1.0 for p in pri):
        raise InvalidArgument("priorities must lie in [0, 1)")
    if len(set(pri)) != n:
        raise InvalidArgument("priorities must be pairwise distinct")
    return pri


@dataclass
class DsuState:
    """Parent forest, static node priorities, current operation's writes."""

    parent: list[int]
    priority: list[float]
    write_log: set[int] = field(default_factory=set)

    @property
    def n(self) -> int:
        return len(self.parent)


def dsu_new(n: int, priorities) -> DsuState:
    pri = check_priorities(n, priorities)
    return DsuState(parent=list(range(n)), priority=pri)


def _check_node(state: DsuState, u: int) -> None:
    if not 0 <= u < state.n:
        raise InvalidArgument(f"node {u} out of range for n={state.n}")


def _find(state: DsuState, u: int) -> tuple[int, list[int]]:
    """Two-pass find: walk to the root, then repoint the whole path at it.

    Returns (root, path) with the path inclusive of both u and the root.
    Only non-root path nodes are rewritten (a root's own field stays),
    but rewrites happen even when the value is already the root, exactly
    like the recursive formulation assigns on every unwind.
    """
    path = [u]
    root = u
    while state.parent[root] != root:
        root = state.parent[root]
        path.append(root)
    for w in path[:-1]:
        state.parent[w] = root
        state.write_log.add(w)
    return root, path


def dsu_find(state: DsuState, u: int) -> int:
    """Root of u's set, compressing the path and logging its writes."""
    _check_node(state, u)
    root, _ = _find(state, u)
    return root


def dsu_union(state: DsuState, u: int, v: int) -> None:
    """Attach the lower-priority root under the higher-priority one."""
    _check_node(state, u)
    _check_node(state, v)
    x, _ = _find(state, u)
    y, _ = _find(state, v)
    if x == y:
        return
    if state.priority[x] < state.priority[y]:
        state.parent[x] = y
        state.write_log.add(x)
    else:
        state.parent[y] = x
        state.write_log.add(y)


def dsu_query_union(state: DsuState, u: int, v: int) -> tuple[int, list[int], list[int]]:
    """Answer "were u, v disconnected?" and union them if so.

    Returns (y, mask, parent) where y = 1 iff a union was performed,
    mask[i] = 0 exactly for the nodes visited on the two find paths
    (roots included even when their field is not rewritten), and parent
    is the post-operation snapshot.  The write log is cleared afterward.
    """
    _check_node(state, u)
    _check_node(state, v)
    if u == v:
        raise InvalidArgument("query_union needs two distinct nodes")
    x, path_u = _find(state, u)
    y_root, path_v = _find(state, v)
    if x == y_root:
        answer = 0
    else:
        answer = 1
        if state.priority[x] < state.priority[y_root]:
            state.parent[x] = y_root
            state.write_log.add(x)
        else:
            state.parent[y_root] = x
            state.write_log.add(y_root)
    visited = set(path_u) | set(path_v)
    mask = [0 if i in visited else 1 for i in range(state.n)]
    state.write_log.clear()
    return answer, mask, list(state.parent)
