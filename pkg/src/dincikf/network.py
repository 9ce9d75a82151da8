"""Communication graph, feature-augmented graph and spanning-tree layering.

An edge ``(j, i)`` means agent ``i`` receives from agent ``j`` (and, by
construction, ``j`` measures the relative pose of ``i``).
"""

from collections import deque
from dataclasses import dataclass, field

from .errors import InvalidArgument, PreconditionViolation

FEATURE_NODE = "f"


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if j == i:
                raise InvalidArgument(f"self-loop on node {i}")
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise InvalidArgument(f"edge ({j}, {i}) outside 0..{self.n - 1}")
        object.__setattr__(self, "edges", edges)


@dataclass(frozen=True)
class AugmentedGraph:
    base: Graph
    feature_agents: frozenset = field(default_factory=frozenset)  # i with (f, i)

    def __post_init__(self):
        fa = frozenset(int(i) for i in self.feature_agents)
        for i in fa:
            if not 0 <= i < self.base.n:
                raise InvalidArgument(f"feature edge to unknown agent {i}")
        object.__setattr__(self, "feature_agents", fa)


@dataclass(frozen=True)
class SpanningTree:
    layers: tuple  # layers[m-1] = sorted agents at distance m from the feature node
    parent: dict  # agent -> parent agent, or FEATURE_NODE for the first layer

    def depth(self, i):
        for m, layer in enumerate(self.layers, start=1):
            if i in layer:
                return m
        raise InvalidArgument(f"agent {i} not in tree")

    def order(self):
        """Agents listed parents-first."""
        return [i for layer in self.layers for i in layer]


@dataclass(frozen=True)
class Message:
    sender: object
    receiver: int
    payload: object
    tick: int


def neighbors(g, i):
    if not 0 <= i < g.n:
        raise InvalidArgument(f"agent id {i} out of range 0..{g.n - 1}")
    return {j for j, k in g.edges if k == i}


def _bfs(ag):
    dist = {i: 1 for i in ag.feature_agents}
    parent = {i: FEATURE_NODE for i in ag.feature_agents}
    queue = deque(sorted(ag.feature_agents))
    out = {}
    for j, i in ag.base.edges:
        out.setdefault(j, []).append(i)
    while queue:
        j = queue.popleft()
        for i in sorted(out.get(j, [])):
            if i not in dist:
                dist[i] = dist[j] + 1
                parent[i] = j
                queue.append(i)
            elif dist[i] == dist[j] + 1 and parent[i] != FEATURE_NODE and j < parent[i]:
                parent[i] = j
    return dist, parent


def check_spanning_tree_from_feature(ag):
    """Empty set when every agent is reachable from the feature node."""
    dist, _ = _bfs(ag)
    return set(range(ag.base.n)) - set(dist)


def bfs_layers(ag):
    """Layer agents by distance from the feature node; parents by lowest id."""
    unreachable = check_spanning_tree_from_feature(ag)
    if unreachable:
        raise PreconditionViolation(f"agents {sorted(unreachable)} unreachable from the feature node")
    dist, parent = _bfs(ag)
    depth = max(dist.values()) if dist else 0
    layers = tuple(tuple(sorted(i for i, d in dist.items() if d == m)) for m in range(1, depth + 1))
    return SpanningTree(layers, parent)


class MessageBus:
    """Synchronous exchange: messages posted at tick k are read at tick k only."""

    def __init__(self):
        self._tick = None
        self._inbox = {}

    def post(self, msg):
        if self._tick is None or msg.tick != self._tick:
            self._tick = msg.tick
            self._inbox = {}
        self._inbox.setdefault(msg.receiver, []).append(msg)

    def deliver(self, receiver, tick):
        if tick != self._tick:
            return []
        return list(self._inbox.get(receiver, []))
