"""Graph-attention recurrent policy network over grouped agents.

Per agent group the network owns: an observation encoder MLP, two stacked
per-group attention layers with a shared query projection per layer, a fusion
matrix over the concatenated group aggregates, a skip projection over
(encoding | layer-1 | layer-2), and a GRU whose hidden state carries history.
A linear head maps the GRU state to Q-values (or to policy logits on actor
networks).

All agents of a group share one parameter set, so the same network evaluates
any number of agents; attention is computed densely per (target group, key
group) pair with adjacency masks, and several independent graphs can be
stacked block-diagonally into one forward pass for batched training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .diffcore import GruCell, Linear, Mlp, Tensor, concat
from .graphs import AgentGraph, GraphIntegrityError, ObservationSet

__all__ = [
    "NetConfig",
    "GraphRecurrentNet",
    "IntrospectionStep",
    "NetworkConfigError",
    "policy_from_q",
    "hgrn_forward",
]


class NetworkConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    """Structural description of one network (shared by online/target copies)."""

    obs_dims: tuple[int, ...]            # observation width per agent group
    n_actions: int
    encoder_hidden: int = 64
    embed_dim: int = 64                  # encoder output and attention value width
    attn_dim: int = 32
    gru_hidden: int = 64
    head: str = "q"                      # "q" for value heads, "policy" for actors
    comm_layers: tuple[bool, bool] = (True, True)   # False = self-only in that layer
    cross_group: bool = True             # False = attend within own group only
    recurrent: bool = True               # False = feed-forward projection, no memory

    @property
    def n_groups(self) -> int:
        return len(self.obs_dims)

    def validate(self) -> None:
        if not self.obs_dims:
            raise NetworkConfigError("need at least one agent group")
        if any(d < 1 for d in self.obs_dims):
            raise NetworkConfigError("observation widths must be positive")
        if self.n_actions < 1:
            raise NetworkConfigError("n_actions must be positive")
        if self.head not in ("q", "policy"):
            raise NetworkConfigError(f"unknown head kind {self.head!r}")
        if len(self.comm_layers) != 2:
            raise NetworkConfigError("comm_layers must toggle exactly two layers")


@dataclass
class IntrospectionStep:
    """Attention and gate activity of one agent at one timestep."""

    timestep: int
    agent_id: int
    layer_weights: list[dict[int, float]]   # one {neighbor id: weight} per layer
    reset_gate_mean: float

    def to_record(self) -> dict:
        return {
            "t": self.timestep,
            "agent": self.agent_id,
            "attention": [{str(k): v for k, v in lw.items()} for lw in self.layer_weights],
            "reset_gate_mean": self.reset_gate_mean,
        }


@dataclass
class ForwardResult:
    output: Tensor                 # (N, n_actions) head output in global node order
    hidden: Tensor                 # (N, gru_hidden) next hidden state
    introspection: list[IntrospectionStep] | None = None


def policy_from_q(q: np.ndarray, alpha: float) -> np.ndarray:
    """Boltzmann policy softmax(q / alpha); rows are agents."""
    if alpha <= 0:
        raise NetworkConfigError("temperature alpha must be positive")
    z = np.asarray(q, dtype=np.float64) / alpha
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class GraphRecurrentNet:
    """One parameter set per agent group, evaluated over whole graphs."""

    def __init__(self, config: NetConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        c = config
        self.encoders: list[Mlp] = []
        self.attn: list[list[dict]] = [[], []]   # [layer][group] -> projection dict
        self.mix: list[Linear] = []
        self.cells: list[GruCell | Linear] = []
        self.heads: list[Linear] = []
        head_tag = "head_q" if c.head == "q" else "head_pi"
        for g in range(c.n_groups):
            self.encoders.append(Mlp(c.obs_dims[g], c.encoder_hidden, c.embed_dim,
                                     rng, f"g{g}/encoder"))
            for layer in range(2):
                proj = {
                    "query": Linear(c.embed_dim, c.attn_dim, rng,
                                    f"g{g}/attn{layer}/query", bias=False),
                    "keys": [Linear(c.embed_dim, c.attn_dim, rng,
                                    f"g{g}/attn{layer}/key{k}", bias=False)
                             for k in range(c.n_groups)],
                    "values": [Linear(c.embed_dim, c.embed_dim, rng,
                                      f"g{g}/attn{layer}/value{k}", bias=False)
                               for k in range(c.n_groups)],
                    "fuse": Linear(c.n_groups * c.embed_dim, c.embed_dim, rng,
                                   f"g{g}/attn{layer}/fuse", bias=False),
                }
                self.attn[layer].append(proj)
            self.mix.append(Linear(3 * c.embed_dim, c.gru_hidden, rng, f"g{g}/mix"))
            if c.recurrent:
                self.cells.append(GruCell(c.gru_hidden, c.gru_hidden, rng, f"g{g}/gru"))
            else:
                self.cells.append(Linear(c.gru_hidden, c.gru_hidden, rng, f"g{g}/ff"))
            self.heads.append(Linear(c.gru_hidden, c.n_actions, rng, f"g{g}/{head_tag}"))
        self.last_relu_margin = np.inf

    # ----------------------------------------------------------- parameters

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for g in range(self.config.n_groups):
            out.extend(self.encoders[g].params())
            for layer in range(2):
                proj = self.attn[layer][g]
                out.extend(proj["query"].params())
                for lin in proj["keys"]:
                    out.extend(lin.params())
                for lin in proj["values"]:
                    out.extend(lin.params())
                out.extend(proj["fuse"].params())
            out.extend(self.mix[g].params())
            out.extend(self.cells[g].params())
            out.extend(self.heads[g].params())
        return out

    def named_params(self) -> dict[str, Tensor]:
        named = {p.name: p for p in self.params()}
        assert len(named) == len(self.params()), "duplicate parameter names"
        return named

    def state_values(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_params()
        missing = set(named) - set(state)
        if missing:
            raise NetworkConfigError(f"checkpoint missing tensors: {sorted(missing)[:3]}")
        for name, p in named.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise NetworkConfigError(
                    f"shape mismatch for tensor {name!r}: "
                    f"checkpoint {arr.shape} vs network {p.data.shape}")
            p.data[...] = arr

    def copy_from(self, other: "GraphRecurrentNet") -> None:
        self.load_state(other.state_values())

    def clone(self, rng: np.random.Generator | None = None) -> "GraphRecurrentNet":
        twin = GraphRecurrentNet(self.config, rng or np.random.default_rng(0))
        twin.copy_from(self)
        return twin

    def init_hidden(self, n_agents: int) -> np.ndarray:
        return np.zeros((n_agents, self.config.gru_hidden))

    # ----------------------------------------------------------- forward pass

    def forward(self, graphs: Sequence[AgentGraph], obs: Sequence[Sequence[np.ndarray]],
                hidden, introspect: bool = False, timestep: int = 0,
                capture: dict | None = None) -> ForwardResult:
        """Evaluate all agents of all ``graphs`` in one pass.

        ``obs[b][i]`` is the observation of node i in graph b; ``hidden`` is a
        (total nodes, gru_hidden) array or Tensor aligned with graphs laid out
        consecutively, nodes ascending.  Multiple graphs never exchange
        messages (block-diagonal adjacency).  Passing a dict as ``capture``
        stores intermediate activations (encoder embeddings, pre-fusion and
        fused attention outputs) in global node order.
        """
        c = self.config
        if introspect and len(graphs) != 1:
            raise NetworkConfigError("introspection expects a single graph")
        counts = [g.n_nodes for g in graphs]
        total = int(sum(counts))
        offsets = np.cumsum([0] + counts)

        groups_cat = np.concatenate([g.groups for g in graphs]) if graphs else np.zeros(0, np.intp)
        if groups_cat.size and groups_cat.max() >= c.n_groups:
            raise NetworkConfigError(
                f"graph contains group {int(groups_cat.max())} but network has "
                f"{c.n_groups} group(s)")

        if not isinstance(hidden, Tensor):
            hidden = Tensor(np.asarray(hidden, dtype=np.float64))
        if hidden.data.shape != (total, c.gru_hidden):
            raise GraphIntegrityError(
                f"hidden state shape {hidden.data.shape} does not match "
                f"{(total, c.gru_hidden)}")

        mask = np.zeros((total, total), dtype=bool)
        for b, g in enumerate(graphs):
            mask[offsets[b]:offsets[b + 1], offsets[b]:offsets[b + 1]] = g.adjacency_mask()

        idx = [np.flatnonzero(groups_cat == g) for g in range(c.n_groups)]
        margin = np.inf

        # encoders per group
        enc: list[Tensor | None] = []
        for g in range(c.n_groups):
            if idx[g].size == 0:
                enc.append(None)
                continue
            rows = []
            for gi in idx[g]:
                b = int(np.searchsorted(offsets, gi, side="right") - 1)
                vec = np.asarray(obs[b][gi - offsets[b]], dtype=np.float64)
                if vec.shape != (c.obs_dims[g],):
                    raise GraphIntegrityError(
                        f"observation width {vec.shape} for group {g}; expected "
                        f"({c.obs_dims[g]},)")
                rows.append(vec)
            x = Tensor(np.stack(rows))
            pre = self.encoders[g].fc1(x)
            margin = min(margin, float(np.min(np.abs(pre.data))) if pre.data.size else np.inf)
            enc.append(self.encoders[g].fc2(pre.relu()))

        weights_store: list[list[tuple[int, int, np.ndarray]]] = [[], []]

        def attention_layer(layer: int, inputs: list[Tensor | None]) -> list[Tensor | None]:
            outs: list[Tensor | None] = []
            for g in range(c.n_groups):
                if inputs[g] is None:
                    outs.append(None)
                    continue
                proj = self.attn[layer][g]
                q = proj["query"](inputs[g])
                parts: list[Tensor] = []
                for k in range(c.n_groups):
                    sub = mask[np.ix_(idx[g], idx[k])].copy()
                    if not c.comm_layers[layer]:
                        sub &= idx[g][:, None] == idx[k][None, :]
                    if not c.cross_group and k != g:
                        sub[...] = False
                    if inputs[k] is None or not sub.any():
                        parts.append(Tensor(np.zeros((idx[g].size, c.embed_dim))))
                        continue
                    keys = proj["keys"][k](inputs[k])
                    scores = q.matmul(keys.transpose())
                    alpha = scores.masked_softmax(sub)
                    if introspect:
                        weights_store[layer].append((g, k, alpha.data, sub))
                    vals = proj["values"][k](inputs[k])
                    parts.append(alpha.matmul(vals))
                outs.append(proj["fuse"](concat(parts, axis=1)))
            return outs

        layer1 = attention_layer(0, enc)
        layer2 = attention_layer(1, layer1)

        out_parts: list[Tensor] = []
        hid_parts: list[Tensor] = []
        order: list[np.ndarray] = []
        reset_means = np.zeros(total)
        for g in range(c.n_groups):
            if idx[g].size == 0:
                continue
            joined = concat([enc[g], layer1[g], layer2[g]], axis=1)
            x = self.mix[g](joined)
            if c.recurrent:
                h_prev = hidden.gather_rows(idx[g])
                h_new, r_gate, _ = self.cells[g](x, h_prev)
                reset_means[idx[g]] = r_gate.data.mean(axis=1)
            else:
                pre = self.cells[g](x)
                margin = min(margin, float(np.min(np.abs(pre.data))))
                h_new = pre.relu()
                reset_means[idx[g]] = np.nan
            out_parts.append(self.heads[g](h_new))
            hid_parts.append(h_new)
            order.append(idx[g])

        perm = np.concatenate(order) if order else np.zeros(0, np.intp)
        inv = np.empty(total, dtype=np.intp)
        inv[perm] = np.arange(total)
        output = concat(out_parts, axis=0).gather_rows(inv)
        new_hidden = concat(hid_parts, axis=0).gather_rows(inv)
        self.last_relu_margin = margin

        intro = None
        if introspect:
            intro = self._collect_introspection(graphs[0], idx, weights_store,
                                                reset_means, timestep)
        return ForwardResult(output=output, hidden=new_hidden, introspection=intro)

    def _collect_introspection(self, graph: AgentGraph, idx, weights_store,
                               reset_means, timestep: int) -> list[IntrospectionStep]:
        per_agent: list[list[dict[int, float]]] = [
            [dict(), dict()] for _ in range(graph.n_nodes)]
        for layer in range(2):
            for g, k, w, sub in weights_store[layer]:
                for a, b in np.argwhere(sub):
                    gi, kj = int(idx[g][a]), int(idx[k][b])
                    per_agent[gi][layer][kj] = float(w[a, b])
        steps = []
        for i in range(graph.n_nodes):
            steps.append(IntrospectionStep(
                timestep=timestep, agent_id=i,
                layer_weights=[dict(sorted(per_agent[i][0].items())),
                               dict(sorted(per_agent[i][1].items()))],
                reset_gate_mean=float(reset_means[i])))
        return steps

    # ----------------------------------------------------------- conveniences

    def q_values(self, *args, **kwargs) -> ForwardResult:
        if self.config.head != "q":
            raise NetworkConfigError("network has no value head")
        return self.forward(*args, **kwargs)

    def action_distribution(self, *args, **kwargs) -> tuple[np.ndarray, ForwardResult]:
        """Softmax policy over the head logits (actor networks only)."""
        if self.config.head != "policy":
            raise NetworkConfigError("action_distribution requires a policy head")
        res = self.forward(*args, **kwargs)
        z = res.output.data - res.output.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True), res


def _sets_to_graph(obs_sets: Sequence[ObservationSet]) -> tuple[AgentGraph, list[np.ndarray]]:
    """Rebuild the adjacency and observation table implied by observation sets."""
    n = len(obs_sets)
    ids = sorted(s.self_id for s in obs_sets)
    if ids != list(range(n)):
        raise GraphIntegrityError("observation sets must cover agent ids 0..N-1")
    by_id = {s.self_id: s for s in obs_sets}
    groups = np.zeros(n, dtype=np.intp)
    obs: list[np.ndarray | None] = [None] * n
    neighbors: list[list[int]] = []
    for i in range(n):
        s = by_id[i]
        nbrs = []
        for (j, grp, vec) in s.entries:
            nbrs.append(j)
            groups[j] = grp
            obs[j] = np.asarray(vec, dtype=np.float64)
        neighbors.append(sorted(nbrs))
    if any(o is None for o in obs):
        raise GraphIntegrityError("some agents never appear in any observation set")
    graph = AgentGraph(node_ids=list(range(n)),
                       positions=np.zeros((n, 2)),
                       groups=groups, neighbors=neighbors)
    return graph, [o for o in obs]  # type: ignore[list-item]


def hgrn_forward(net: GraphRecurrentNet, obs_sets: Sequence[ObservationSet],
                 hidden: dict[int, np.ndarray], introspect: bool = False):
    """Spec-shaped entry point: observation sets in, per-agent Q-rows out.

    ``hidden`` maps agent id to its recurrent state; every agent present in
    ``obs_sets`` must have an entry.  Returns (q_rows, new_hidden, intro).
    """
    graph, obs = _sets_to_graph(obs_sets)
    n = graph.n_nodes
    missing = [i for i in range(n) if i not in hidden]
    if missing:
        raise GraphIntegrityError(f"agents missing from hidden map: {missing}")
    h = np.stack([np.asarray(hidden[i], dtype=np.float64) for i in range(n)])
    ts = obs_sets[0].timestep if obs_sets else 0
    res = net.forward([graph], [obs], h, introspect=introspect, timestep=ts)
    new_hidden = {i: res.hidden.data[i].copy() for i in range(n)}
    return res.output.data.copy(), new_hidden, res.introspection
