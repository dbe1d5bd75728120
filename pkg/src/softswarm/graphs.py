"""Time-varying proximity graphs over agents and neighborhood observation sets.

Edges connect agents within a Chebyshev (king-move) radius on the grid.  Every
agent is a member of its own neighborhood, so attention downstream always has
at least one key.  A ``max_neighbors`` cap bounds fan-in; to keep adjacency
symmetric under the cap, a capped edge survives only if both endpoints keep it
(mutual-nearest pruning).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AgentGraph", "ObservationSet", "build_graph", "gather_observations",
           "GraphIntegrityError"]


class GraphIntegrityError(RuntimeError):
    pass


@dataclass
class AgentGraph:
    """Proximity graph with a group partition over the nodes.

    ``neighbors[i]`` lists node ids adjacent to node i, ascending, always
    containing i itself.  ``groups[i]`` is the group index of node i.
    """

    node_ids: list[int]
    positions: np.ndarray          # (N, 2) grid coordinates
    groups: np.ndarray             # (N,) int group index
    neighbors: list[list[int]]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) + 1 if len(self.groups) else 0

    def adjacency_mask(self) -> np.ndarray:
        """Dense boolean (N, N) mask; mask[i, j] means j is in i's neighborhood."""
        n = self.n_nodes
        mask = np.zeros((n, n), dtype=bool)
        for i, nbrs in enumerate(self.neighbors):
            mask[i, nbrs] = True
        return mask


@dataclass
class ObservationSet:
    """An agent's own observation plus those of its current neighbors.

    ``entries`` holds (agent id, group index, observation vector) triples in
    ascending id order, which fixes the downstream summation order.
    """

    self_id: int
    timestep: int
    entries: list[tuple[int, int, np.ndarray]] = field(default_factory=list)

    def ids(self) -> list[int]:
        return [i for i, _, _ in self.entries]

    def own(self) -> np.ndarray:
        for i, _, obs in self.entries:
            if i == self.self_id:
                return obs
        raise GraphIntegrityError(f"observation set for {self.self_id} lacks self entry")


def build_graph(positions, groups, radius: float, max_neighbors: int) -> AgentGraph:
    """Connect agents within ``radius`` (Chebyshev), capped at ``max_neighbors``.

    The cap keeps the nearest neighbors, ties broken by lower agent id; the
    node itself is always kept.  Capped edges are symmetrized by intersection,
    so ``j in neighbors[i]`` iff ``i in neighbors[j]`` for i != j.
    """
    pos = np.asarray(positions, dtype=np.float64)
    grp = np.asarray(groups, dtype=np.intp)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise GraphIntegrityError("positions must be (N, 2)")
    if not np.all(np.isfinite(pos)):
        raise GraphIntegrityError("positions must be finite")
    if radius < 0:
        raise GraphIntegrityError("radius must be nonnegative")
    if max_neighbors < 1:
        raise GraphIntegrityError("max_neighbors must be positive")
    n = pos.shape[0]
    if grp.shape != (n,):
        raise GraphIntegrityError("groups must have one entry per agent")

    dist = np.maximum(np.abs(pos[:, None, 0] - pos[None, :, 0]),
                      np.abs(pos[:, None, 1] - pos[None, :, 1]))
    within = dist <= radius

    kept = []
    for i in range(n):
        cand = np.flatnonzero(within[i])
        order = sorted(cand, key=lambda j: (dist[i, j], j))
        keep = set(order[:max_neighbors])
        keep.add(i)
        kept.append(keep)

    neighbors = []
    for i in range(n):
        mutual = sorted(j for j in kept[i] if i in kept[j] or j == i)
        neighbors.append(mutual)
    return AgentGraph(node_ids=list(range(n)), positions=pos.copy(),
                      groups=grp.copy(), neighbors=neighbors)


def gather_observations(graph: AgentGraph, all_obs,
                        timestep: int = 0) -> list[ObservationSet]:
    """Assemble, for every agent, the observations of its neighborhood.

    ``all_obs`` maps node id -> observation vector (sequence indexed by id is
    fine).  Raises if any node's observation is missing.
    """
    n = graph.n_nodes
    obs = []
    for i in range(n):
        try:
            o = all_obs[i]
        except (IndexError, KeyError):
            o = None
        if o is None:
            raise GraphIntegrityError(f"missing observation for node {i}")
        obs.append(np.asarray(o, dtype=np.float64))

    sets = []
    for i in range(n):
        entries = [(j, int(graph.groups[j]), obs[j]) for j in graph.neighbors[i]]
        sets.append(ObservationSet(self_id=i, timestep=timestep, entries=entries))
    return sets
