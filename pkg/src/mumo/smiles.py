"""SMILES parsing into a heavy-atom molecular graph, plus feature vectors.

The grammar subset: organic-subset atoms B, C, N, O, P, S, F, Cl, Br, I and
aromatic b, c, n, o, p, s; bracket atoms ``[isotope? symbol chirality?
Hcount? charge?]``; bond symbols ``- = # : / \\``; branches ``( )``;
ring-closure digits ``1``-``9`` and ``%NN``; ``.`` separates disconnected
fragments. No hydrogens are materialized and no valence model is applied;
aromaticity is syntactic (lowercase symbols).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    UnclosedBracket,
    UnclosedBranch,
    UnknownElement,
    UnmatchedRingClosure,
)

ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_SUBSET = {"b", "c", "n", "o", "p", "s"}

# Feature vocabulary: 16 named elements + OTHER.
ELEMENTS = ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I",
            "Si", "Na", "K", "Fe", "Zn", "Se", "OTHER"]
_ELEMENT_INDEX = {e: i for i, e in enumerate(ELEMENTS)}

BOND_ORDERS = ["single", "double", "triple", "aromatic", "spatial"]
_ORDER_INDEX = {o: i for i, o in enumerate(BOND_ORDERS)}

ATOM_FEATURE_DIM = len(ELEMENTS) + 6 + 5 + 1 + 1  # 30
BOND_FEATURE_DIM = len(BOND_ORDERS) + 1  # 6

_KNOWN_SYMBOLS = {
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Ti", "Cr", "Mn", "Fe", "Co",
    "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Sr", "Mo", "Tc",
    "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Ba",
    "W", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "U",
}


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    isotope: int | None = None
    explicit_h: int | None = None
    chirality: str | None = None  # "CW" (@@) or "CCW" (@)
    in_ring: bool = False


@dataclass
class Bond:
    a: int
    b: int
    order: str = "single"
    in_ring: bool = False
    direction: str | None = None  # "/" or "\\" stereo marker, features ignore it


@dataclass
class Molecule:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)
    conformer: list[np.ndarray] | None = None
    source_smiles: str = ""

    def neighbors(self, i: int) -> list[int]:
        out = []
        for b in self.bonds:
            if b.a == i:
                out.append(b.b)
            elif b.b == i:
                out.append(b.a)
        return out

    def degree(self, i: int) -> int:
        return sum(1 for b in self.bonds if b.a == i or b.b == i)


_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
                 "/": "single", "\\": "single"}


def _parse_bracket(s: str, start: int) -> tuple[Atom, int]:
    """Parse one bracket atom starting at '\\['. Returns (atom, end_index_past_bracket)."""
    end = s.find("]", start)
    if end < 0:
        raise UnclosedBracket("'[' without matching ']'", start)
    body = s[start + 1:end]
    i = 0
    isotope = None
    while i < len(body) and body[i].isdigit():
        i += 1
    if i > 0:
        isotope = int(body[:i])
    if i >= len(body):
        raise UnknownElement("bracket atom without element symbol", start)
    # Element: uppercase + optional lowercase, or a lone aromatic lowercase.
    aromatic = False
    if body[i].isupper():
        sym = body[i]
        i += 1
        if i < len(body) and body[i].islower() and body[i] not in "hH" and sym + body[i] in _KNOWN_SYMBOLS:
            sym += body[i]
            i += 1
    elif body[i] in AROMATIC_SUBSET or body[i:i + 2] == "se":
        aromatic = True
        if body[i:i + 2] == "se":
            sym = "Se"
            i += 2
        else:
            sym = body[i].upper()
            i += 1
    else:
        raise UnknownElement(f"unknown element in bracket: {body[i:]!r}", start)
    if sym not in _KNOWN_SYMBOLS:
        # The parser keeps the raw symbol; featurization maps it to OTHER.
        pass
    chirality = None
    if body[i:i + 2] == "@@":
        chirality = "CW"
        i += 2
    elif body[i:i + 1] == "@":
        chirality = "CCW"
        i += 1
    explicit_h = None
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        explicit_h = int(body[i:j]) if j > i else 1
        i = j
    charge = 0
    while i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        if j > i:
            charge += sign * int(body[i:j])
            i = j
        else:
            charge += sign
    if i != len(body):
        raise UnknownElement(f"trailing bracket content {body[i:]!r}", start)
    if not -4 <= charge <= 4:
        raise UnknownElement(f"formal charge {charge} out of [-4, 4]", start)
    atom = Atom(element=sym, aromatic=aromatic, formal_charge=charge,
                isotope=isotope, explicit_h=explicit_h, chirality=chirality)
    return atom, end + 1


def parse_smiles(s: str) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule`.

    Deterministic: atom order follows the string left to right. Ring
    membership is set afterwards by bridge detection (a bond is in a ring
    iff it is not a bridge of the graph).
    """
    if not s:
        raise EmptyInput("empty SMILES", 0)
    mol = Molecule(source_smiles=s)
    prev_atom: int | None = None
    pending_bond: str | None = None
    pending_dir: str | None = None
    branch_stack: list[int | None] = []
    # ring label -> (atom index, bond symbol at opening or None, offset)
    open_rings: dict[int, tuple[int, str | None, int]] = {}
    i = 0
    n = len(s)

    def add_atom(atom: Atom) -> None:
        nonlocal prev_atom, pending_bond, pending_dir
        mol.atoms.append(atom)
        idx = len(mol.atoms) - 1
        if prev_atom is not None:
            order = pending_bond
            if order is None:
                if mol.atoms[prev_atom].aromatic and atom.aromatic:
                    order = "aromatic"
                else:
                    order = "single"
            mol.bonds.append(Bond(prev_atom, idx, order=order, direction=pending_dir))
        prev_atom = idx
        pending_bond = None
        pending_dir = None

    def close_ring(label: int, offset: int) -> None:
        nonlocal pending_bond, pending_dir
        if prev_atom is None:
            raise UnmatchedRingClosure("ring closure before any atom", offset)
        if label in open_rings:
            other, sym, _ = open_rings.pop(label)
            if other == prev_atom:
                raise UnmatchedRingClosure("ring closure to the same atom", offset)
            if any({b.a, b.b} == {other, prev_atom} for b in mol.bonds):
                raise UnmatchedRingClosure("ring closure duplicates an existing bond", offset)
            order = pending_bond or sym
            if order is None:
                if mol.atoms[other].aromatic and mol.atoms[prev_atom].aromatic:
                    order = "aromatic"
                else:
                    order = "single"
            mol.bonds.append(Bond(other, prev_atom, order=order, direction=pending_dir))
            pending_bond = None
            pending_dir = None
        else:
            open_rings[label] = (prev_atom, pending_bond, offset)
            pending_bond = None
            pending_dir = None

    while i < n:
        c = s[i]
        if c == "[":
            atom, i = _parse_bracket(s, i)
            add_atom(atom)
        elif c == "(":
            branch_stack.append(prev_atom)
            i += 1
        elif c == ")":
            if not branch_stack:
                raise UnclosedBranch("')' without matching '('", i)
            prev_atom = branch_stack.pop()
            i += 1
        elif c in _BOND_SYMBOLS:
            pending_bond = _BOND_SYMBOLS[c]
            pending_dir = c if c in "/\\" else None
            i += 1
        elif c == "%":
            if i + 2 >= n or not (s[i + 1].isdigit() and s[i + 2].isdigit()):
                raise UnmatchedRingClosure("'%' without two digits", i)
            close_ring(int(s[i + 1:i + 3]), i)
            i += 3
        elif c.isdigit():
            close_ring(int(c), i)
            i += 1
        elif c == ".":
            prev_atom = None
            pending_bond = None
            pending_dir = None
            i += 1
        elif c.isupper():
            two = s[i:i + 2]
            if two in ("Cl", "Br"):
                add_atom(Atom(element=two))
                i += 2
            elif c in ORGANIC_SUBSET:
                add_atom(Atom(element=c))
                i += 1
            else:
                raise UnknownElement(f"element {c!r} not in organic subset", i)
        elif c in AROMATIC_SUBSET:
            add_atom(Atom(element=c.upper(), aromatic=True))
            i += 1
        else:
            raise UnknownElement(f"unexpected character {c!r}", i)

    if branch_stack:
        raise UnclosedBranch("'(' never closed", n)
    if open_rings:
        label, (_, _, offset) = next(iter(open_rings.items()))
        raise UnmatchedRingClosure(f"ring label {label} opened once", offset)
    _mark_rings(mol)
    return mol


def _mark_rings(mol: Molecule) -> None:
    """Flag ring bonds/atoms: a bond is in a ring iff it is not a bridge."""
    n = len(mol.atoms)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for bi, b in enumerate(mol.bonds):
        adj[b.a].append((b.b, bi))
        adj[b.b].append((b.a, bi))
    disc = [-1] * n
    low = [0] * n
    timer = 0
    bridges = set()
    for root in range(n):
        if disc[root] != -1:
            continue
        stack = [(root, -1, iter(adj[root]))]
        disc[root] = low[root] = timer
        timer += 1
        while stack:
            v, pedge, it = stack[-1]
            advanced = False
            for to, eid in it:
                if eid == pedge:
                    continue
                if disc[to] == -1:
                    disc[to] = low[to] = timer
                    timer += 1
                    stack.append((to, eid, iter(adj[to])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[to])
            if not advanced:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        bridges.add(pedge)
    for bi, b in enumerate(mol.bonds):
        b.in_ring = bi not in bridges
    for a in mol.atoms:
        a.in_ring = False
    for b in mol.bonds:
        if b.in_ring:
            mol.atoms[b.a].in_ring = True
            mol.atoms[b.b].in_ring = True


def featurize_atoms(mol: Molecule) -> np.ndarray:
    """Per-atom features: element one-hot (17) | degree 0-5 (6) | clipped
    charge -2..+2 (5) | aromatic | in_ring. Unknown elements hit OTHER."""
    out = np.zeros((len(mol.atoms), ATOM_FEATURE_DIM), dtype=np.float64)
    for i, atom in enumerate(mol.atoms):
        e = _ELEMENT_INDEX.get(atom.element, _ELEMENT_INDEX["OTHER"])
        out[i, e] = 1.0
        deg = min(mol.degree(i), 5)
        out[i, len(ELEMENTS) + deg] = 1.0
        q = int(np.clip(atom.formal_charge, -2, 2))
        out[i, len(ELEMENTS) + 6 + q + 2] = 1.0
        out[i, len(ELEMENTS) + 11] = 1.0 if atom.aromatic else 0.0
        out[i, len(ELEMENTS) + 12] = 1.0 if atom.in_ring else 0.0
    return out


def featurize_bonds(mol: Molecule) -> np.ndarray:
    """Per-bond features: order one-hot (5, `spatial` reserved for radius
    edges) | in_ring."""
    out = np.zeros((len(mol.bonds), BOND_FEATURE_DIM), dtype=np.float64)
    for i, b in enumerate(mol.bonds):
        out[i, _ORDER_INDEX[b.order]] = 1.0
        out[i, len(BOND_ORDERS)] = 1.0 if b.in_ring else 0.0
    return out


def spatial_bond_feature() -> np.ndarray:
    """Feature row for a radius-graph edge (spatial slot hot, ring flag 0)."""
    row = np.zeros(BOND_FEATURE_DIM, dtype=np.float64)
    row[_ORDER_INDEX["spatial"]] = 1.0
    return row
