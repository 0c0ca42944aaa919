"""The fusion network: graph message passing, gated multiscale fusion, a
state-space recurrence across layers, and injection-enhanced attention.

Layer anatomy (1-based layer index t, L layers total):

    h, z = ssm_step(h, z, g)           # g = prior from the previous fusion
                                       # layer, absent before fusion_start
    t <  fusion_start:  h = LN(h + SelfAttn(h)); h = LN(h + FFN(h))
    t >= fusion_start:  h, graph, g = iea_layer(h, graph); h = LN(h + FFN(h))

Inside ``iea_layer`` the Q/K/V projections of both streams are computed
once from the incoming states; the sequence-side cross-attention therefore
reads the PRE-update structure keys (the literal listing order). Set
``post_update_keys`` to recompute K/V from the updated structure states
instead. Only the global-anchor token (position 0) receives the pooled
prior; all other tokens see structure solely through cross-attention.

In progressive mode the graph node states are replaced after every fusion
layer and the pooled prior evolves with them; in fixed mode the initial
fused node states are pooled once and re-injected unchanged at every
fusion layer.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .errors import InvalidConfig, NotAFusionLayer, ShapeMismatch
from .smiles import ATOM_FEATURE_DIM, BOND_FEATURE_DIM
from .tensor import Tensor
from .unigraph import UnifiedGraph

RBF_MIN, RBF_MAX = 0.8, 6.0


@dataclass
class ModelConfig:
    hidden: int = 64
    n_layers: int = 8
    n_heads: int = 4
    fusion_start: int = 5          # 1-based; n_layers + 1 disables injection
    mpnn_iters: int = 3
    ffn_mult: int = 4
    vocab_size: int = 0
    max_len: int = 96
    rbf_bins: int = 16
    abf_bins: int = 8
    use_graph: bool = True
    use_geometry: bool = True
    progressive: bool = True
    pooling: str = "gtk"           # gtk | mean | max | combo
    post_update_keys: bool = False
    attn_dropout: float = 0.1

    def validate(self) -> None:
        if self.n_layers < 1:
            raise InvalidConfig("n_layers must be >= 1")
        if not 1 <= self.fusion_start <= self.n_layers + 1:
            raise InvalidConfig("fusion_start must lie in [1, n_layers + 1]")
        if self.hidden % self.n_heads:
            raise InvalidConfig("hidden must be divisible by n_heads")
        if self.vocab_size < 8:
            raise InvalidConfig("vocab_size must cover the special tokens")
        if self.pooling not in ("gtk", "mean", "max", "combo"):
            raise InvalidConfig(f"unknown pooling {self.pooling!r}")


@dataclass
class GraphState:
    node_states: Tensor
    edge_states: Tensor
    geom_embed: Tensor


@dataclass
class PriorVector:
    g: Tensor  # [n_graphs, d]


def geom_feature_dim(cfg: ModelConfig) -> int:
    return 2 * cfg.rbf_bins + cfg.abf_bins + 2


def geom_features(triplets: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Raw invariant features for [n, 3] triplets (l_ij, l_jk, theta):
    Gaussian radial bases for both lengths, a Gaussian angular basis over
    [0, pi], and cos/sin of the angle."""
    triplets = np.asarray(triplets, dtype=np.float64).reshape(-1, 3)
    r_centers = np.linspace(RBF_MIN, RBF_MAX, cfg.rbf_bins)
    r_width = (RBF_MAX - RBF_MIN) / max(cfg.rbf_bins - 1, 1)
    a_centers = np.linspace(0.0, np.pi, cfg.abf_bins)
    a_width = np.pi / max(cfg.abf_bins - 1, 1)

    def rbf(x):
        return np.exp(-((x[:, None] - r_centers[None, :]) ** 2) / (2 * r_width ** 2))

    theta = triplets[:, 2]
    abf = np.exp(-((theta[:, None] - a_centers[None, :]) ** 2) / (2 * a_width ** 2))
    return np.concatenate(
        [rbf(triplets[:, 0]), rbf(triplets[:, 1]), abf,
         np.cos(theta)[:, None], np.sin(theta)[:, None]], axis=1)


def count_params(cfg: ModelConfig) -> int:
    """Closed-form parameter count (asserted against enumeration in tests)."""
    d, f = cfg.hidden, cfg.ffn_mult
    g = geom_feature_dim(cfg)
    total = cfg.vocab_size * d + cfg.max_len * d
    total += (ATOM_FEATURE_DIM * d + d) + (BOND_FEATURE_DIM * d + d) + (g * d + d) + d
    total += cfg.mpnn_iters * (14 * d * d + 12 * d)
    total += 5 * d * d + 2 * d
    per_layer = (13 + 2 * f) * d * d + (f + 21) * d + 1
    total += cfg.n_layers * per_layer
    total += 4 * d * d + d
    return total


def init_params(cfg: ModelConfig, seed: int) -> Checkpoint:
    """Deterministic initialization: affine weights ~ N(0, 0.02^2), biases 0,
    LayerNorm scale 1 / shift 0, alpha = 0.1, raw_a = 2.0 (gate ~ 0.88)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.hidden
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def w(name, *shape):
        out[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)

    def zeros(name, *shape):
        out[name] = np.zeros(shape, dtype=np.float32)

    def ones(name, *shape):
        out[name] = np.ones(shape, dtype=np.float32)

    def ln(prefix):
        ones(prefix + ".g", d)
        zeros(prefix + ".b", d)

    def linear(prefix, din, dout):
        w(prefix + ".w", din, dout)
        zeros(prefix + ".b", dout)

    w("embed.token", cfg.vocab_size, d)
    w("embed.pos", cfg.max_len, d)
    linear("graph.node_in", ATOM_FEATURE_DIM, d)
    linear("graph.edge_in", BOND_FEATURE_DIM, d)
    linear("graph.geom_in", geom_feature_dim(cfg), d)
    w("graph.no_geom", d)
    for t in range(cfg.mpnn_iters):
        p = f"graph.it{t}"
        linear(p + ".emsg.l1", 3 * d, d)
        linear(p + ".emsg.l2", d, d)
        linear(p + ".eupd.l1", 2 * d, d)
        linear(p + ".eupd.l2", d, d)
        ln(p + ".eln")
        linear(p + ".vmsg.l1", 3 * d, d)
        linear(p + ".vmsg.l2", d, d)
        linear(p + ".vupd.l1", 2 * d, d)
        linear(p + ".vupd.l2", d, d)
        ln(p + ".vln")
    linear("fuse.gate", 3 * d, d)
    linear("fuse.mix", 2 * d, d)
    for layer in range(cfg.n_layers):
        p = f"layer{layer}"
        out[p + ".ssm.raw_a"] = np.full(d, 2.0, dtype=np.float32)
        w(p + ".ssm.bs", d, d)
        w(p + ".ssm.bg", d, d)
        w(p + ".ssm.c", d, d)
        w(p + ".ssm.d", d, d)
        for proj in ("wq", "wk", "wv", "wo"):
            linear(f"{p}.attn.{proj}", d, d)
        ln(p + ".ln_attn")
        for proj in ("wq", "wk", "wv", "wo"):
            linear(f"{p}.xf.{proj}", d, d)
        linear(p + ".xs.wo", d, d)
        ln(p + ".ln_f")
        ln(p + ".ln_x")
        ln(p + ".ln_inj")
        out[p + ".alpha"] = np.full(1, 0.1, dtype=np.float32)
        linear(p + ".ffn.l1", d, cfg.ffn_mult * d)
        linear(p + ".ffn.l2", cfg.ffn_mult * d, d)
        ln(p + ".ln_ffn")
    linear("pool.combo", 4 * d, d)
    return Checkpoint(out)


def init_head(out_dim: int, hidden: int, seed: int) -> Checkpoint:
    rng = np.random.default_rng(seed)
    entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
    entries["head.w"] = rng.normal(0.0, 0.02, size=(hidden, out_dim)).astype(np.float32)
    entries["head.b"] = np.zeros(out_dim, dtype=np.float32)
    return Checkpoint(entries)


@dataclass
class Batch:
    """One forward-ready batch: padded token ids plus the paired graphs."""
    token_ids: np.ndarray            # [B, max_len] int
    seq_mask: np.ndarray             # [B, max_len] bool
    graph: UnifiedGraph | None       # batched global graph
    sub: UnifiedGraph | None         # batched segmented graph (same nodes)
    labels: np.ndarray | None = None


class MuMo:
    """Parameter container plus the forward pass.

    ``trainable=True`` wraps every parameter as a gradient leaf; inference
    wrappers skip the tape entirely when used under ``tensor.no_grad()``.
    """

    def __init__(self, cfg: ModelConfig, checkpoint: Checkpoint,
                 trainable: bool = False, dtype=None):
        cfg.validate()
        self.cfg = cfg
        dtype = dtype or T.default_dtype()
        self.params: dict[str, Tensor] = {
            name: Tensor(value, requires_grad=trainable, dtype=dtype)
            for name, value in checkpoint.entries.items()
        }
        self.debug: dict | None = None

    # -- plumbing ----------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.params.items():
            out[name] = p.data.astype(np.float32)
        return Checkpoint(out)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _lin(self, x: Tensor, prefix: str) -> Tensor:
        return T.matmul(x, self.params[prefix + ".w"]) + self.params[prefix + ".b"]

    def _mlp(self, x: Tensor, prefix: str) -> Tensor:
        return self._lin(T.silu(self._lin(x, prefix + ".l1")), prefix + ".l2")

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return T.layer_norm(x, self.params[prefix + ".g"], self.params[prefix + ".b"])

    def _const(self, arr: np.ndarray) -> Tensor:
        return Tensor(np.asarray(arr, dtype=self.params["embed.token"].data.dtype))

    # -- structural stream -------------------------------------------------

    def embed_geometry(self, graph: UnifiedGraph) -> Tensor:
        """Rows of h_G for a graph's triplets (invariant features -> linear)."""
        feats = geom_features(graph.geom_array(), self.cfg)
        return self._lin(self._const(feats), "graph.geom_in")

    def _pair_geometry(self, graph: UnifiedGraph, h_geom: Tensor) -> Tensor:
        """Per angular pair: its embedded triplet, or the learned no-geometry
        row when the pair has none (or geometry is disabled)."""
        n_pairs = graph.C_G.shape[0]
        no_geom = T.reshape(self.params["graph.no_geom"], (1, self.cfg.hidden))
        if not self.cfg.use_geometry or len(graph.geom) == 0:
            return T.broadcast_to(no_geom, (n_pairs, self.cfg.hidden))
        table = T.concat([h_geom, no_geom], axis=0)
        idx = np.where(graph.geom_idx >= 0, graph.geom_idx, len(graph.geom))
        return T.gather(table, idx)

    def mpnn_pass(self, graph: UnifiedGraph, state: GraphState,
                  iters: int | None = None) -> GraphState:
        """Edge-centered then node-centered residual updates, ``iters`` times."""
        cfg = self.cfg
        iters = cfg.mpnn_iters if iters is None else iters
        h_v, h_e = state.node_states, state.edge_states
        if h_v.shape[0] != graph.n_nodes or h_e.shape[0] != graph.n_edges:
            raise ShapeMismatch("graph state rows disagree with graph")
        h_g_pairs = self._pair_geometry(graph, state.geom_embed)
        n_v, n_e = graph.n_nodes, graph.n_edges
        for t in range(iters):
            p = f"graph.it{t % cfg.mpnn_iters}"
            if n_e:
                if graph.C_G.shape[0]:
                    src = T.gather(h_e, graph.C_G[:, 0])
                    dst = T.gather(h_e, graph.C_G[:, 1])
                    m = self._mlp(T.concat([src, dst, h_g_pairs], axis=-1), p + ".emsg")
                    m_e = T.index_add(self._const(np.zeros((n_e, cfg.hidden))), graph.C_G[:, 0], m)
                else:
                    m_e = self._const(np.zeros((n_e, cfg.hidden)))
                h_e = self._ln(h_e + self._mlp(T.concat([h_e, m_e], axis=-1), p + ".eupd"),
                               p + ".eln")
                vi = T.gather(h_v, graph.C_E[:, 0])
                vj = T.gather(h_v, graph.C_E[:, 1])
                m = self._mlp(T.concat([vi, vj, h_e], axis=-1), p + ".vmsg")
                m_v = T.index_add(self._const(np.zeros((n_v, cfg.hidden))), graph.C_E[:, 0], m)
            else:
                m_v = self._const(np.zeros((n_v, cfg.hidden)))
            h_v = self._ln(h_v + self._mlp(T.concat([h_v, m_v], axis=-1), p + ".vupd"),
                           p + ".vln")
        return GraphState(node_states=h_v, edge_states=h_e, geom_embed=state.geom_embed)

    def initial_graph_state(self, graph: UnifiedGraph) -> GraphState:
        return GraphState(
            node_states=self._lin(self._const(graph.node_feats), "graph.node_in"),
            edge_states=self._lin(self._const(graph.edge_feats), "graph.edge_in"),
            geom_embed=self.embed_geometry(graph),
        )

    def gated_fuse(self, h: Tensor, h_sub: Tensor) -> Tensor:
        """beta-gated blend of global and substructure node states."""
        if h.shape != h_sub.shape:
            raise ShapeMismatch("gated_fuse shape mismatch")
        beta = T.sigmoid(self._lin(T.concat([h, h_sub, h - h_sub], axis=-1), "fuse.gate"))
        mixed = self._lin(T.concat([h, h_sub], axis=-1), "fuse.mix")
        return beta * h + (1.0 - beta) * mixed

    # -- attention ---------------------------------------------------------

    def _heads_split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.cfg.n_heads
        return T.transpose(T.reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))

    def _heads_join(self, x: Tensor) -> Tensor:
        b, h, t, hd = x.shape
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * hd))

    def _attention(self, q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray,
                   train: bool, rng) -> tuple[Tensor, np.ndarray]:
        """Multi-head scaled dot-product attention over projected q/k/v.

        ``key_mask`` is [B, Tk] booleans; masked keys get exactly zero
        attention mass. Returns (context [B, Tq, d], weights for debugging).
        """
        qh, kh, vh = self._heads_split(q), self._heads_split(k), self._heads_split(v)
        scale = 1.0 / np.sqrt(qh.shape[-1])
        scores = T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))) * scale
        blocked = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        scores = T.masked_fill(scores, np.broadcast_to(blocked, scores.shape), -np.inf)
        attn = T.softmax(scores, axis=-1)
        if train and self.cfg.attn_dropout > 0.0:
            keep = (rng.random(attn.shape) >= self.cfg.attn_dropout)
            attn = attn * self._const(keep / (1.0 - self.cfg.attn_dropout))
        ctx = T.matmul(attn, vh)
        return self._heads_join(ctx), attn.data

    def _self_attn_block(self, h: Tensor, layer: int, seq_mask: np.ndarray,
                         train: bool, rng) -> Tensor:
        p = f"layer{layer}.attn"
        q, k, v = self._lin(h, p + ".wq"), self._lin(h, p + ".wk"), self._lin(h, p + ".wv")
        ctx, weights = self._attention(q, k, v, seq_mask, train, rng)
        if self.debug is not None:
            self.debug.setdefault("attention", {})[f"layer{layer}.self"] = weights
        return self._ln(h + self._lin(ctx, p + ".wo"), f"layer{layer}.ln_attn")

    def _ffn_block(self, h: Tensor, layer: int) -> Tensor:
        return self._ln(h + self._mlp(h, f"layer{layer}.ffn"), f"layer{layer}.ln_ffn")

    # -- sequence/structure fusion ------------------------------------------

    def ssm_step(self, h: Tensor, z: Tensor, g: Tensor | None, layer: int) -> tuple[Tensor, Tensor]:
        """z' = a*z + B_s h + B_g g ; h' = C z' + D h, per token position.

        ``a = sigmoid(raw_a)`` keeps the latent bounded across layers. ``g``
        is the pooled prior [B, d] broadcast over token positions; ``None``
        (before any fusion layer) contributes nothing, exactly like g = 0.
        """
        p = f"layer{layer}.ssm"
        a = T.sigmoid(self.params[p + ".raw_a"])
        z_new = z * a + T.matmul(h, self.params[p + ".bs"])
        if g is not None:
            g_tok = T.reshape(T.matmul(g, self.params[p + ".bg"]), (g.shape[0], 1, self.cfg.hidden))
            z_new = z_new + T.broadcast_to(g_tok, z_new.shape)
        h_new = T.matmul(z_new, self.params[p + ".c"]) + T.matmul(h, self.params[p + ".d"])
        return h_new, z_new

    @staticmethod
    def _node_layout(graph: UnifiedGraph) -> tuple[np.ndarray, np.ndarray, int]:
        """Flat slot of each node row in the padded [n_graphs, max_nodes]
        layout, plus the node mask."""
        sizes = np.bincount(graph.batch_idx, minlength=graph.n_graphs)
        max_nodes = int(sizes.max()) if sizes.size else 0
        slot = np.zeros(graph.n_nodes, dtype=np.int64)
        cursor = np.zeros(graph.n_graphs, dtype=np.int64)
        for row, gid in enumerate(graph.batch_idx):
            slot[row] = gid * max_nodes + cursor[gid]
            cursor[gid] += 1
        mask = np.zeros((graph.n_graphs, max_nodes), dtype=bool)
        for gid, size in enumerate(sizes):
            mask[gid, :size] = True
        return slot, mask, max_nodes

    def iea_layer(self, h: Tensor, node_states: Tensor, graph: UnifiedGraph,
                  layer: int, seq_mask: np.ndarray, train: bool, rng,
                  pooled_fixed: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """One injection-enhanced attention layer.

        Returns (new sequence states, new graph node states, pooled prior).
        With ``pooled_fixed`` set (fixed-injection mode) the initial pooled
        vector is injected and the node states are returned unchanged.
        """
        if layer + 1 < self.cfg.fusion_start:
            raise NotAFusionLayer(f"layer {layer + 1} precedes fusion_start")
        cfg = self.cfg
        slot, node_mask, max_nodes = self._node_layout(graph)
        b = graph.n_graphs

        # Unbatch node states into padded sequence form (zero padding).
        flat = T.index_add(self._const(np.zeros((b * max_nodes, cfg.hidden))), slot, node_states)
        h_f = T.reshape(flat, (b, max_nodes, cfg.hidden))

        ap = f"layer{layer}.attn"
        fp = f"layer{layer}.xf"
        q_s = self._lin(h, ap + ".wq")
        k_s = self._lin(h, ap + ".wk")
        v_s = self._lin(h, ap + ".wv")
        q_f = self._lin(h_f, fp + ".wq")
        k_f = self._lin(h_f, fp + ".wk")
        v_f = self._lin(h_f, fp + ".wv")

        ctx, weights = self._attention(q_s, k_s, v_s, seq_mask, train, rng)
        h_mid = self._ln(h + self._lin(ctx, ap + ".wo"), f"layer{layer}.ln_attn")

        ctx_f, weights_f = self._attention(q_f, k_s, v_s, seq_mask, train, rng)
        h_f_new = self._ln(h_f + self._lin(ctx_f, fp + ".wo"), f"layer{layer}.ln_f")

        if cfg.post_update_keys:
            k_f = self._lin(h_f_new, fp + ".wk")
            v_f = self._lin(h_f_new, fp + ".wv")
        ctx_s, weights_s = self._attention(q_s, k_f, v_f, node_mask, train, rng)
        h_new = self._ln(h_mid + self._lin(ctx_s, f"layer{layer}.xs.wo"), f"layer{layer}.ln_x")

        if self.debug is not None:
            dbg = self.debug.setdefault("attention", {})
            dbg[f"layer{layer}.self"] = weights
            dbg[f"layer{layer}.struct_to_seq"] = weights_f
            dbg[f"layer{layer}.seq_to_struct"] = weights_s

        # Rebatch the updated structure states, pool, inject into the anchor.
        node_new = T.gather(T.reshape(h_f_new, (b * max_nodes, cfg.hidden)), slot)
        if pooled_fixed is not None:
            pooled = pooled_fixed
            node_out = node_states
        else:
            pooled = T.index_add(self._const(np.zeros((b, cfg.hidden))), graph.batch_idx, node_new)
            node_out = node_new
        alpha = self.params[f"layer{layer}.alpha"]
        gtk = self._ln(h_new[:, 0, :] + alpha * pooled, f"layer{layer}.ln_inj")
        h_out = T.concat([T.reshape(gtk, (b, 1, cfg.hidden)), h_new[:, 1:, :]], axis=1)
        return h_out, node_out, pooled

    # -- end to end ----------------------------------------------------------

    def forward(self, batch: Batch, train: bool = False, rng=None,
                collect_debug: bool = False) -> tuple[Tensor, GraphState | None]:
        """Full forward pass; returns token states and the final graph state."""
        cfg = self.cfg
        rng = rng or np.random.default_rng(0)
        self.debug = {} if collect_debug else None
        b, t_len = batch.token_ids.shape

        graph_state = None
        node_prime = None
        pooled_init = None
        if cfg.use_graph:
            if batch.graph is None or batch.sub is None:
                raise ShapeMismatch("use_graph=True needs both graph views")
            gstate = self.mpnn_pass(batch.graph, self.initial_graph_state(batch.graph))
            sstate = self.mpnn_pass(batch.sub, self.initial_graph_state(batch.sub))
            node_prime = self.gated_fuse(gstate.node_states, sstate.node_states)
            pooled_init = T.index_add(self._const(np.zeros((batch.graph.n_graphs, cfg.hidden))),
                                      batch.graph.batch_idx, node_prime)
            graph_state = GraphState(node_states=node_prime, edge_states=gstate.edge_states,
                                     geom_embed=gstate.geom_embed)

        h = T.embedding(self.params["embed.token"], batch.token_ids)
        pos = T.reshape(self.params["embed.pos"][:t_len, :], (1, t_len, cfg.hidden))
        h = h + T.broadcast_to(pos, (b, t_len, cfg.hidden))
        z = self._const(np.zeros((b, t_len, cfg.hidden)))
        prior: Tensor | None = None
        node_states = node_prime

        for layer in range(cfg.n_layers):
            h, z = self.ssm_step(h, z, prior, layer)
            is_fusion = cfg.use_graph and (layer + 1) >= cfg.fusion_start
            if is_fusion:
                fixed = None if cfg.progressive else pooled_init
                h, node_states, pooled = self.iea_layer(
                    h, node_states, batch.graph, layer, batch.seq_mask, train, rng,
                    pooled_fixed=fixed)
                prior = pooled
            else:
                h = self._self_attn_block(h, layer, batch.seq_mask, train, rng)
            h = self._ffn_block(h, layer)
            if self.debug is not None:
                self.debug.setdefault("layer_states", {})[f"layer{layer}"] = h.data.copy()

        if graph_state is not None and node_states is not None:
            graph_state = replace(graph_state, node_states=node_states)
        return h, graph_state

    def pool(self, token_states: Tensor, seq_mask: np.ndarray) -> Tensor:
        """Sequence-level readout per the configured pooling mode."""
        mode = self.cfg.pooling
        mask = np.asarray(seq_mask, dtype=bool)
        b = token_states.shape[0]

        def gtk():
            return token_states[:, 0, :]

        def masked_mean():
            m = self._const(mask[:, :, None].astype(np.float64))
            s = T.sum_(token_states * m, axis=1)
            inv = self._const((1.0 / mask.sum(axis=1))[:, None])
            return s * inv

        def masked_max():
            blocked = np.broadcast_to(~mask[:, :, None], token_states.shape)
            return T.amax(T.masked_fill(token_states, blocked, -1e30), axis=1)

        def sep():
            idx = mask.sum(axis=1) - 1
            return token_states[np.arange(b), idx]

        if mode == "gtk":
            return gtk()
        if mode == "mean":
            return masked_mean()
        if mode == "max":
            return masked_max()
        combo = T.concat([gtk(), masked_mean(), masked_max(), sep()], axis=-1)
        return self._lin(combo, "pool.combo")

    def head(self, pooled: Tensor, head_params: dict[str, Tensor]) -> Tensor:
        """Linear task head; any squashing is applied by loss/metric code."""
        return T.matmul(pooled, head_params["head.w"]) + head_params["head.b"]
