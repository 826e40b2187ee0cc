"""Reference structures used to cross-check the instrumented ones.

Deliberately simple and independent of dsu/lct: an explicit edge set
with breadth-first connectivity, and a plain parent-array rooted forest
whose evert/link/cut walk whole paths.  These are the ground truth the
fast structures are validated against.
"""

from __future__ import annotations

from collections import deque

from .errors import ContractViolation, InvalidArgument


def naive_connected(edges, u: int, v: int) -> int:
    """BFS reachability over an iterable of unordered node pairs."""
    if u == v:
        return 1
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen = {u}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        for y in adj.get(x, ()):
            if y == v:
                return 1
            if y not in seen:
                seen.add(y)
                queue.append(y)
    return 0


class NaiveForest:
    """Rooted forest as a parent array; roots point at themselves."""

    def __init__(self, n: int):
        if n < 1:
            raise InvalidArgument(f"need at least one node, got n={n}")
        self.parent = list(range(n))

    @property
    def n(self) -> int:
        return len(self.parent)

    def root(self, u: int) -> int:
        seen = 0
        while self.parent[u] != u:
            u = self.parent[u]
            seen += 1
            if seen > self.n:
                raise ContractViolation("parent cycle in naive forest")
        return u

    def connected(self, u: int, v: int) -> bool:
        return self.root(u) == self.root(v)

    def evert(self, u: int) -> None:
        """Re-root u's tree at u by reversing its path to the root."""
        path = [u]
        while self.parent[path[-1]] != path[-1]:
            path.append(self.parent[path[-1]])
        for child, par in zip(path, path[1:]):
            self.parent[par] = child
        self.parent[u] = u

    def link(self, u: int, v: int) -> None:
        if self.parent[u] != u:
            raise ContractViolation("link requires u to be a root")
        if self.connected(u, v):
            raise ContractViolation("link requires distinct trees")
        self.parent[u] = v

    def cut(self, u: int) -> None:
        if self.parent[u] == u:
            raise ContractViolation("cut requires a non-root node")
        self.parent[u] = u

    def query_toggle(self, u: int, v: int, priorities) -> int:
        """Mirror of the instrumented toggle, on plain parent walks."""
        if priorities[u] < priorities[v]:
            u, v = v, u
        self.evert(u)
        if self.root(v) != u:
            self.link(u, v)
            return 0
        self.cut(v)
        return 1

    def edges(self) -> set[tuple[int, int]]:
        return {
            (min(i, p), max(i, p))
            for i, p in enumerate(self.parent)
            if p != i
        }


def components_from_parents(parent) -> list[int]:
    """Component labels (minimum member id) of an undirected pointer graph."""
    n = len(parent)
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, p in enumerate(parent):
        if p != i:
            adj[i].append(p)
            adj[p].append(i)
    label = [-1] * n
    for start in range(n):
        if label[start] != -1:
            continue
        group = [start]
        seen = {start}
        queue = deque([start])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    group.append(y)
                    queue.append(y)
        mark = min(group)
        for g in group:
            label[g] = mark
    return label


def components_from_edges(n: int, edges) -> list[int]:
    """Component labels (minimum member id) of an explicit edge set."""
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(i) for i in range(n)]
