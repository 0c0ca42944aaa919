"""Substructure partitioning: rule-driven bond cuts and the segmented graph.

The default cut rules are a small, data-driven stand-in for a full
retrosynthetic rule catalogue. Each rule is a predicate over one bond and
its endpoint atoms; rules never select ring bonds or bonds of order above
single. Cut decisions use 2D topology only; geometry enters through the
angular constraints pruned alongside the cut edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidEdgeIndex
from .geometry import GeomTriplet
from .smiles import Molecule
from .unigraph import UnifiedGraph

DEFAULT_RULES = ("RING_TO_CHAIN", "AMIDE_FLANK", "ESTER_FLANK", "ETHER_LINK")


@dataclass
class CutRuleSet:
    rules: tuple[str, ...] = DEFAULT_RULES

    @classmethod
    def from_json(cls, path: str) -> "CutRuleSet":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        names = tuple(payload["rules"])
        unknown = set(names) - set(DEFAULT_RULES)
        if unknown:
            raise ValueError(f"unknown cut rules: {sorted(unknown)}")
        return cls(rules=names)


def _carbonyl_carbons(mol: Molecule) -> set[int]:
    """Carbons with a double bond to oxygen."""
    out = set()
    for b in mol.bonds:
        if b.order != "double":
            continue
        for c, o in ((b.a, b.b), (b.b, b.a)):
            if mol.atoms[c].element == "C" and mol.atoms[o].element == "O":
                out.add(c)
    return out


def _single_neighbors(mol: Molecule, i: int) -> list[tuple[int, int]]:
    """(bond index, other atom) over single, acyclic bonds at atom i."""
    out = []
    for bi, b in enumerate(mol.bonds):
        if b.order != "single" or b.in_ring:
            continue
        if b.a == i:
            out.append((bi, b.b))
        elif b.b == i:
            out.append((bi, b.a))
    return out


def _flank_cuts(mol: Molecule, hetero: str) -> set[int]:
    """Bonds flanking a C(=O)-X motif (X = N for amides, O for esters/acids):
    single acyclic bonds from the carbonyl carbon to other carbons, and from
    X to atoms outside the motif."""
    cuts = set()
    for cc in _carbonyl_carbons(mol):
        xs = [j for _, j in _single_neighbors(mol, cc) if mol.atoms[j].element == hetero]
        if not xs:
            continue
        for bi, j in _single_neighbors(mol, cc):
            if mol.atoms[j].element == "C":
                cuts.add(bi)
        for x in xs:
            for bi, j in _single_neighbors(mol, x):
                if j != cc:
                    cuts.add(bi)
    return cuts


def _rule_cuts(mol: Molecule, rule: str) -> set[int]:
    cuts: set[int] = set()
    if rule == "RING_TO_CHAIN":
        for bi, b in enumerate(mol.bonds):
            if b.order != "single" or b.in_ring:
                continue
            if mol.atoms[b.a].in_ring != mol.atoms[b.b].in_ring:
                cuts.add(bi)
    elif rule == "AMIDE_FLANK":
        cuts |= _flank_cuts(mol, "N")
    elif rule == "ESTER_FLANK":
        cuts |= _flank_cuts(mol, "O")
    elif rule == "ETHER_LINK":
        for i, atom in enumerate(mol.atoms):
            if atom.element != "O" or atom.in_ring:
                continue
            nbrs = _single_neighbors(mol, i)
            carbons = [(bi, j) for bi, j in nbrs if mol.atoms[j].element == "C"]
            if len(carbons) == 2:
                cuts.update(bi for bi, _ in carbons)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return cuts


def compute_cut_set(graph: UnifiedGraph, mol: Molecule,
                    rules: CutRuleSet | None = None) -> list[int]:
    """Directed edge indices to sever, sorted; both directions of each bond."""
    rules = rules or CutRuleSet()
    bond_cuts: set[int] = set()
    for rule in rules.rules:
        bond_cuts |= _rule_cuts(mol, rule)
    # Directed rows for bond bi sit at 2*bi and 2*bi + 1 by construction.
    edge_cuts = sorted(e for bi in bond_cuts for e in (2 * bi, 2 * bi + 1))
    for e in edge_cuts:
        if e >= graph.n_edges:
            raise InvalidEdgeIndex(f"edge {e} outside graph")
    return edge_cuts


@dataclass
class SegmentedGraph:
    sub: UnifiedGraph
    fragment_idx: np.ndarray
    n_fragments: int = field(default=0)


def segment_graph(graph: UnifiedGraph, cut: list[int]) -> SegmentedGraph:
    """Remove cut edge rows plus every angular pair/triplet touching them.

    Node features and node count are untouched so multiscale fusion stays
    aligned row for row. Fragment ids come from connected components of the
    surviving edges.
    """
    cut_set = set(cut)
    for e in cut_set:
        if not 0 <= e < graph.n_edges:
            raise InvalidEdgeIndex(f"edge {e} outside graph")

    keep = [e for e in range(graph.n_edges) if e not in cut_set]
    remap = {old: new for new, old in enumerate(keep)}
    sub_edge_feats = graph.edge_feats[keep] if keep else graph.edge_feats[:0]
    sub_C_E = graph.C_E[keep] if keep else graph.C_E[:0]

    keep_pairs = []
    for p in range(graph.C_G.shape[0]):
        e1, e2 = graph.C_G[p]
        if e1 in cut_set or e2 in cut_set:
            continue
        keep_pairs.append(p)
    sub_C_G = np.array([[remap[graph.C_G[p, 0]], remap[graph.C_G[p, 1]]] for p in keep_pairs],
                       dtype=np.int64).reshape(len(keep_pairs), 2)
    sub_geom: list[GeomTriplet] = []
    sub_geom_idx = np.full(len(keep_pairs), -1, dtype=np.int64)
    for new_p, p in enumerate(keep_pairs):
        gi = graph.geom_idx[p]
        if gi >= 0:
            t = graph.geom[gi]
            sub_geom_idx[new_p] = len(sub_geom)
            sub_geom.append(GeomTriplet(edge_ij=remap[t.edge_ij], edge_jk=remap[t.edge_jk],
                                        l_ij=t.l_ij, l_jk=t.l_jk, theta=t.theta))

    # Union-find over surviving edges for fragment ids.
    parent = list(range(graph.n_nodes))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in keep:
        i, j = graph.C_E[e]
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    roots: dict[int, int] = {}
    fragment_idx = np.zeros(graph.n_nodes, dtype=np.int64)
    for v in range(graph.n_nodes):
        r = find(v)
        if r not in roots:
            roots[r] = len(roots)
        fragment_idx[v] = roots[r]

    sub = UnifiedGraph(
        node_feats=graph.node_feats,
        edge_feats=sub_edge_feats,
        geom=sub_geom,
        C_E=sub_C_E,
        C_G=sub_C_G,
        geom_idx=sub_geom_idx,
        batch_idx=graph.batch_idx,
        n_graphs=graph.n_graphs,
    )
    return SegmentedGraph(sub=sub, fragment_idx=fragment_idx, n_fragments=len(roots))


def annotate_fragments(mol: Molecule, cut_bonds: list[int]) -> list[str]:
    """Fragment SMILES with ``[*]`` at each severed attachment.

    Output is deterministic (fragments ordered by smallest atom index,
    traversal by DFS from that atom following ascending neighbor index)
    and intended for reporting only; it is never fed back into parsing.
    ``cut_bonds`` holds indices into ``mol.bonds``.
    """
    cut_set = set(cut_bonds)
    adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(mol.atoms))}
    for bi, b in enumerate(mol.bonds):
        if bi in cut_set:
            continue
        adj[b.a].append((b.b, bi))
        adj[b.b].append((b.a, bi))
    for lst in adj.values():
        lst.sort()

    stubs: dict[int, int] = {}
    for bi in cut_set:
        b = mol.bonds[bi]
        stubs[b.a] = stubs.get(b.a, 0) + 1
        stubs[b.b] = stubs.get(b.b, 0) + 1

    seen = [False] * len(mol.atoms)
    fragments: list[str] = []
    bond_sym = {"single": "", "double": "=", "triple": "#", "aromatic": ""}

    def atom_token(i: int) -> str:
        a = mol.atoms[i]
        plain = (a.formal_charge == 0 and a.isotope is None and a.explicit_h is None
                 and a.chirality is None)
        sym = a.element.lower() if a.aromatic else a.element
        if plain:
            return sym
        body = ""
        if a.isotope is not None:
            body += str(a.isotope)
        body += sym
        if a.chirality == "CCW":
            body += "@"
        elif a.chirality == "CW":
            body += "@@"
        if a.explicit_h:
            body += "H" + ("" if a.explicit_h == 1 else str(a.explicit_h))
        if a.formal_charge > 0:
            body += "+" + ("" if a.formal_charge == 1 else str(a.formal_charge))
        elif a.formal_charge < 0:
            body += "-" + ("" if a.formal_charge == -1 else str(-a.formal_charge))
        return f"[{body}]"

    for start in range(len(mol.atoms)):
        if seen[start]:
            continue
        # DFS tree of this fragment; non-tree bonds become ring closures.
        parent_bond: dict[int, int] = {start: -1}
        stack = [start]
        visited = {start}
        tree_bonds: set[int] = set()
        while stack:
            v = stack.pop()
            for to, bi in reversed(adj[v]):
                if to not in visited:
                    visited.add(to)
                    parent_bond[to] = bi
                    tree_bonds.add(bi)
                    stack.append(to)
        back_bonds = sorted({bi for v in visited for _, bi in adj[v] if bi not in tree_bonds})
        back_digits = {bi: n + 1 for n, bi in enumerate(back_bonds)}

        def digit_token(d: int) -> str:
            return str(d) if d <= 9 else f"%{d:02d}"

        opened: set[int] = set()

        def walk(v: int, via_bond: int) -> str:
            seen[v] = True
            out = bond_sym[mol.bonds[via_bond].order] if via_bond >= 0 else ""
            if v == start:
                out += "[*]" * stubs.get(v, 0)
            out += atom_token(v)
            # Ring-closure digits: bond symbol on the opening side only.
            for _, bi in adj[v]:
                if bi in back_digits:
                    if bi not in opened:
                        opened.add(bi)
                        out += bond_sym[mol.bonds[bi].order] + digit_token(back_digits[bi])
                    else:
                        out += digit_token(back_digits[bi])
            if v != start:
                out += "([*])" * stubs.get(v, 0)
            children = [(to, bi) for to, bi in adj[v]
                        if bi in tree_bonds and parent_bond.get(to) == bi and not seen[to]]
            for idx, (to, bi) in enumerate(children):
                sub = walk(to, bi)
                out += f"({sub})" if idx < len(children) - 1 else sub
            return out

        fragments.append(walk(start, -1))
    return fragments
