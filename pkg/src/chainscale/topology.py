"""Datacenter topology: delay matrix, entry binding and delay-path queries."""

import heapq

from .errors import DimensionMismatchError, UnboundLocationError


class DelayMatrix:
    """n x n one-way inter-datacenter delays in milliseconds.

    Stored fully (may be asymmetric); the diagonal is always zero.
    """

    def __init__(self, values):
        n = len(values)
        for i, row in enumerate(values):
            if len(row) != n:
                raise DimensionMismatchError(f"row {i} has {len(row)} entries, expected {n}")
            for j, v in enumerate(row):
                if v < 0:
                    raise ValueError(f"delay[{i}][{j}] is negative")
        self.n = n
        self._d = [list(row) for row in values]
        for i in range(n):
            self._d[i][i] = 0.0

    def get(self, i, j):
        return self._d[i][j]

    def set(self, i, j, value):
        if i != j:
            self._d[i][j] = float(value)

    def rows(self):
        return [list(r) for r in self._d]

    def copy(self):
        return DelayMatrix(self._d)


def entry_datacenter(location_key, binding_table):
    """Resolve a user's location key to its entry datacenter, or fail loudly."""
    if not binding_table:
        raise UnboundLocationError("empty binding table")
    try:
        return binding_table[location_key]
    except KeyError:
        raise UnboundLocationError(f"unbound location {location_key!r}") from None


def path_delay(path, delays):
    """Total one-way delay of a service chain path.

    Consecutive equal entries are the same datacenter and contribute 0.
    """
    total = 0.0
    for a, b in zip(path, path[1:]):
        if a != b:
            total += delays.get(a, b)
    return total


def shortest_delay_path(entry, exit, delays, max_nodes=None):
    """Minimum-delay simple datacenter path from entry to exit.

    The mesh is complete, so a path always exists. With ``max_nodes`` the
    search is restricted to paths of at most that many datacenters (the
    direct edge is always admissible). Ties resolve to the lexicographically
    smallest path for determinism.
    """
    if entry == exit:
        raise ValueError("entry and exit must differ")
    n = delays.n
    if max_nodes is None or max_nodes >= n:
        return _dijkstra(entry, exit, delays)
    if max_nodes < 2:
        raise ValueError("max_nodes must be at least 2")
    # Hop-bounded search: best (delay, path) per node per path length.
    best = {(entry,): 0.0}
    result = None
    frontier = {(entry,): 0.0}
    for _ in range(max_nodes - 1):
        nxt = {}
        for path, dist in frontier.items():
            last = path[-1]
            for v in range(n):
                if v in path:
                    continue
                cand = dist + delays.get(last, v)
                key = path + (v,)
                if key not in nxt or cand < nxt[key]:
                    nxt[key] = cand
        frontier = nxt
        for path, dist in frontier.items():
            if path[-1] == exit:
                if result is None or (dist, path) < result:
                    result = (dist, path)
    assert result is not None
    return list(result[1])


def _dijkstra(entry, exit, delays):
    n = delays.n
    dist = {entry: 0.0}
    parent = {}
    heap = [(0.0, entry)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == exit:
            break
        for v in range(n):
            if v == u:
                continue
            nd = d + delays.get(u, v)
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    path = [exit]
    while path[-1] != entry:
        path.append(parent[path[-1]])
    path.reverse()
    return path
