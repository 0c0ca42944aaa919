"""The unified 2D/3D graph: construction, batching, and graph<->sequence moves.

Edges are stored directed (two rows per chemical bond) because the
edge-centered message rule sums over successor edges sharing a head atom,
which only makes sense with oriented edges. The angular constraint list
``C_G`` enumerates ordered pairs of distinct directed edges (e_ij, e_jk)
with head(e_ij) = tail(e_jk) = j and i != k. Each pair may carry a
geometric triplet; pairs without one (no conformer, or a degenerate,
skipped triplet) are flagged with index -1 and pick up a learned
"no geometry" embedding downstream.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, DimensionMismatch, LengthMismatch, MaskMismatch
from .geometry import GeomTriplet, geometric_triplet, radius_edges
from .smiles import Molecule, featurize_atoms, featurize_bonds, spatial_bond_feature


@dataclass
class GraphConfig:
    radius_cutoff: float | None = None
    strict_geometry: bool = False


@dataclass
class UnifiedGraph:
    node_feats: np.ndarray                      # [n_V, d_V]
    edge_feats: np.ndarray                      # [n_E, d_E] (directed rows)
    geom: list[GeomTriplet] = field(default_factory=list)
    C_E: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    C_G: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    geom_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    batch_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    n_graphs: int = 1

    @property
    def n_nodes(self) -> int:
        return self.node_feats.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_feats.shape[0]

    def geom_array(self) -> np.ndarray:
        """Triplets as an [n_geom, 3] array of (l_ij, l_jk, theta)."""
        if not self.geom:
            return np.zeros((0, 3), dtype=np.float64)
        return np.array([[g.l_ij, g.l_jk, g.theta] for g in self.geom], dtype=np.float64)

    def to_json(self) -> str:
        """Debug dump for golden-file tests."""
        payload = {
            "node_feats": self.node_feats.tolist(),
            "edge_feats": self.edge_feats.tolist(),
            "C_E": self.C_E.tolist(),
            "C_G": self.C_G.tolist(),
            "geom": [[g.edge_ij, g.edge_jk, g.l_ij, g.l_jk, g.theta] for g in self.geom],
            "geom_idx": self.geom_idx.tolist(),
            "batch_idx": self.batch_idx.tolist(),
            "n_graphs": self.n_graphs,
        }
        return json.dumps(payload, sort_keys=True)


@dataclass
class PaddedNodeSeq:
    states: np.ndarray  # [n_graphs, max_nodes, d]
    mask: np.ndarray    # [n_graphs, max_nodes] bool


def build_unified_graph(mol: Molecule, cfg: GraphConfig | None = None) -> UnifiedGraph:
    """Assemble the unified graph for one molecule.

    Directed edge rows come in bond order, forward direction first. With a
    conformer present, every angular pair gets a triplet; degenerate ones
    are skipped with a warning (or raised under ``strict_geometry``).
    """
    cfg = cfg or GraphConfig()
    node_feats = featurize_atoms(mol)
    bond_feats = featurize_bonds(mol)

    pairs: list[tuple[int, int]] = []
    edge_rows: list[np.ndarray] = []
    for bi, bond in enumerate(mol.bonds):
        pairs.append((bond.a, bond.b))
        edge_rows.append(bond_feats[bi])
        pairs.append((bond.b, bond.a))
        edge_rows.append(bond_feats[bi])

    if cfg.radius_cutoff is not None:
        if mol.conformer is None:
            raise DegenerateGeometry("radius augmentation needs a conformer")
        bond_set = {(b.a, b.b) for b in mol.bonds}
        for a, b in radius_edges(mol.conformer, bonds=bond_set, cutoff=cfg.radius_cutoff):
            pairs.append((a, b))
            edge_rows.append(spatial_bond_feature())
            pairs.append((b, a))
            edge_rows.append(spatial_bond_feature())

    n_e = len(pairs)
    C_E = np.array(pairs, dtype=np.int64).reshape(n_e, 2)
    edge_feats = (np.stack(edge_rows) if edge_rows
                  else np.zeros((0, bond_feats.shape[1] if bond_feats.size else 6)))

    # Ordered angular pairs: successor edges out of each edge's head atom.
    out_of: dict[int, list[int]] = {}
    for ei, (i, j) in enumerate(pairs):
        out_of.setdefault(i, []).append(ei)
    cg: list[tuple[int, int]] = []
    for e1, (i, j) in enumerate(pairs):
        for e2 in out_of.get(j, ()):
            k = pairs[e2][1]
            if k != i:
                cg.append((e1, e2))
    C_G = np.array(cg, dtype=np.int64).reshape(len(cg), 2)

    geom: list[GeomTriplet] = []
    geom_idx = np.full(len(cg), -1, dtype=np.int64)
    if mol.conformer is not None:
        coords = np.asarray(mol.conformer, dtype=np.float64)
        for p, (e1, e2) in enumerate(cg):
            i, j = pairs[e1]
            k = pairs[e2][1]
            try:
                l_ij, l_jk, theta = geometric_triplet(coords, i, j, k)
            except DegenerateGeometry:
                if cfg.strict_geometry:
                    raise
                warnings.warn(f"skipping degenerate triplet at center {j}", stacklevel=2)
                continue
            geom_idx[p] = len(geom)
            geom.append(GeomTriplet(edge_ij=e1, edge_jk=e2, l_ij=l_ij, l_jk=l_jk, theta=theta))

    return UnifiedGraph(
        node_feats=node_feats,
        edge_feats=edge_feats,
        geom=geom,
        C_E=C_E,
        C_G=C_G,
        geom_idx=geom_idx,
        batch_idx=np.zeros(node_feats.shape[0], dtype=np.int64),
        n_graphs=1,
    )


def batch_graphs(graphs: list[UnifiedGraph]) -> UnifiedGraph:
    """Merge graphs into one, shifting constraint indices by running offsets."""
    if not graphs:
        raise DimensionMismatch("empty graph list")
    d_v = graphs[0].node_feats.shape[1]
    d_e = graphs[0].edge_feats.shape[1]
    for g in graphs:
        if g.node_feats.shape[1] != d_v or g.edge_feats.shape[1] != d_e:
            raise DimensionMismatch("feature dimensions differ across graphs")

    node_feats, edge_feats, ce_parts, cg_parts = [], [], [], []
    geom: list[GeomTriplet] = []
    geom_idx_parts = []
    batch_parts = []
    delta_v = 0
    delta_e = 0
    delta_g = 0
    graph_id = 0
    for g in graphs:
        node_feats.append(g.node_feats)
        edge_feats.append(g.edge_feats)
        ce_parts.append(g.C_E + delta_v)
        cg_parts.append(g.C_G + delta_e)
        shifted = g.geom_idx.copy()
        shifted[shifted >= 0] += delta_g
        geom_idx_parts.append(shifted)
        for t in g.geom:
            geom.append(GeomTriplet(edge_ij=t.edge_ij + delta_e, edge_jk=t.edge_jk + delta_e,
                                    l_ij=t.l_ij, l_jk=t.l_jk, theta=t.theta))
        for k in range(g.n_graphs):
            count = int((g.batch_idx == k).sum())
            batch_parts.append(np.full(count, graph_id, dtype=np.int64))
            graph_id += 1
        delta_v += g.n_nodes
        delta_e += g.n_edges
        delta_g += len(g.geom)

    return UnifiedGraph(
        node_feats=np.concatenate(node_feats, axis=0),
        edge_feats=np.concatenate(edge_feats, axis=0),
        geom=geom,
        C_E=np.concatenate(ce_parts, axis=0),
        C_G=np.concatenate(cg_parts, axis=0),
        geom_idx=np.concatenate(geom_idx_parts, axis=0),
        batch_idx=np.concatenate(batch_parts, axis=0),
        n_graphs=graph_id,
    )


def graph_sizes(batch_idx: np.ndarray, n_graphs: int) -> np.ndarray:
    return np.bincount(batch_idx, minlength=n_graphs)


def unbatch_node_states(states: np.ndarray, batch_idx: np.ndarray,
                        n_graphs: int | None = None) -> PaddedNodeSeq:
    """Copy per-graph node rows into a zero-padded [n_graphs, max_nodes, d]."""
    states = np.asarray(states)
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    if states.shape[0] != batch_idx.shape[0]:
        raise LengthMismatch("states and batch_idx disagree")
    if n_graphs is None:
        n_graphs = int(batch_idx.max()) + 1 if batch_idx.size else 0
    sizes = graph_sizes(batch_idx, n_graphs)
    max_nodes = int(sizes.max()) if sizes.size else 0
    out = np.zeros((n_graphs, max_nodes, states.shape[1]), dtype=states.dtype)
    mask = np.zeros((n_graphs, max_nodes), dtype=bool)
    cursor = np.zeros(n_graphs, dtype=np.int64)
    for row, g in enumerate(batch_idx):
        out[g, cursor[g]] = states[row]
        mask[g, cursor[g]] = True
        cursor[g] += 1
    return PaddedNodeSeq(states=out, mask=mask)


def rebatch_node_states(padded: PaddedNodeSeq, batch_idx: np.ndarray) -> np.ndarray:
    """Inverse of :func:`unbatch_node_states` on the masked region only."""
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    n_graphs = padded.states.shape[0]
    sizes = graph_sizes(batch_idx, n_graphs)
    if not np.array_equal(sizes, padded.mask.sum(axis=1)):
        raise MaskMismatch("mask row counts disagree with batch_idx")
    out = np.zeros((batch_idx.shape[0], padded.states.shape[2]), dtype=padded.states.dtype)
    cursor = np.zeros(n_graphs, dtype=np.int64)
    for row, g in enumerate(batch_idx):
        out[row] = padded.states[g, cursor[g]]
        cursor[g] += 1
    return out


def global_add_pool(states: np.ndarray, batch_idx: np.ndarray,
                    n_graphs: int | None = None) -> np.ndarray:
    """Per-graph sum of node rows."""
    states = np.asarray(states)
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    if n_graphs is None:
        n_graphs = int(batch_idx.max()) + 1 if batch_idx.size else 0
    out = np.zeros((n_graphs, states.shape[1]), dtype=states.dtype)
    np.add.at(out, batch_idx, states)
    return out
