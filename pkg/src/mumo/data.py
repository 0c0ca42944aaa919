"""Corpus IO, deterministic synthetic data, and batch assembly.

The input corpus is JSONL, one object per line:

    {"smiles": str, "coords": [[x, y, z], ...] optional (angstroms),
     "label": number or array optional}

Coordinates, when present, correspond 1:1 in order to the heavy atoms
emitted by the parser. The bundled 500-molecule corpus is generated by
:func:`generate_corpus` (see tools/make_corpus.py) and shipped as package
data so tests and the verification suite run offline from a fresh clone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DataError, ParseError
from .model import Batch, ModelConfig
from .partition import CutRuleSet, compute_cut_set, segment_graph
from .smiles import Molecule, parse_smiles
from .tokenizer import Vocab, encode
from .unigraph import GraphConfig, UnifiedGraph, batch_graphs, build_unified_graph


@dataclass
class Record:
    smiles: str
    coords: np.ndarray | None = None
    label: float | np.ndarray | None = None


def load_jsonl(path: str) -> list[Record]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            if "smiles" not in obj:
                raise DataError(f"{path}:{lineno}: missing 'smiles'")
            coords = obj.get("coords")
            records.append(Record(
                smiles=obj["smiles"],
                coords=None if coords is None else np.asarray(coords, dtype=np.float64),
                label=obj.get("label"),
            ))
    if not records:
        raise DataError(f"{path}: empty corpus")
    return records


def save_jsonl(records: list[Record], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj: dict = {"smiles": r.smiles}
            if r.coords is not None:
                obj["coords"] = np.round(np.asarray(r.coords, dtype=float), 4).tolist()
            if r.label is not None:
                obj["label"] = r.label if np.isscalar(r.label) else np.asarray(r.label).tolist()
            fh.write(json.dumps(obj) + "\n")


def bundled_corpus_path() -> str:
    return str(resources.files("mumo").joinpath("data/corpus_500.jsonl"))


def record_to_molecule(rec: Record) -> Molecule:
    try:
        mol = parse_smiles(rec.smiles)
    except ParseError as exc:
        raise DataError(f"cannot parse {rec.smiles!r}: {exc}") from exc
    if rec.coords is not None:
        if len(rec.coords) != len(mol.atoms):
            raise DataError(
                f"{rec.smiles!r}: {len(rec.coords)} coordinates for {len(mol.atoms)} atoms")
        mol.conformer = [np.asarray(c, dtype=np.float64) for c in rec.coords]
    return mol


# ---------------------------------------------------------------------------
# deterministic synthetic corpus


_PLAIN_ATOMS = ["C"] * 8 + ["N", "N", "O", "O", "S", "P", "F", "Cl", "Br", "I"]
_BRACKET_ATOMS = ["[N+]", "[O-]", "[NH2+]", "[nH]", "[13C]", "[14C]", "[C@H]", "[C@@H]",
                  "[S@]", "[Na+]", "[2H]", "[Se]", "[Si]", "[C-]", "[O+]", "[15N]"]


def _random_chain(rng: np.random.Generator, length: int, depth: int,
                  digit_alloc: list[int]) -> str:
    """Emit a grammar-valid chain of ``length`` heavy atoms."""
    parts: list[str] = []
    ring_close_at = -1
    ring_token = ""
    for pos in range(length):
        if pos > 0 and ring_close_at != pos:
            r = rng.random()
            if r < 0.10:
                parts.append("=")
            elif r < 0.13:
                parts.append("#")
        r = rng.random()
        if r < 0.10 and depth == 0 and length - pos >= 6:
            label = digit_alloc[0]
            digit_alloc[0] += 1
            d = str(label) if label <= 9 else f"%{label:02d}"
            inner = "".join("c" for _ in range(4))
            parts.append(f"c{d}{inner}c{d}")
            continue
        if r < 0.18:
            parts.append(str(rng.choice(_BRACKET_ATOMS)))
        else:
            parts.append(str(rng.choice(_PLAIN_ATOMS)))
        if ring_close_at == pos:
            parts.append(ring_token)
            ring_token = ""
        elif (ring_close_at < pos and rng.random() < 0.08
              and length - pos >= 4 and parts[-1] not in ("F", "Cl", "Br", "I")):
            label = digit_alloc[0]
            digit_alloc[0] += 1
            ring_token = str(label) if label <= 9 else f"%{label:02d}"
            parts.append(ring_token)
            ring_close_at = pos + int(rng.integers(3, min(6, length - pos)))
        if depth < 2 and rng.random() < 0.22 and pos < length - 1:
            sub_len = int(rng.integers(1, 4))
            parts.append("(" + _random_chain(rng, sub_len, depth + 1, digit_alloc) + ")")
    if ring_token:
        # The planned closure never happened; drop the dangling label.
        parts.remove(ring_token)
    return "".join(parts)


def random_smiles(rng: np.random.Generator, min_atoms: int = 3, max_atoms: int = 14) -> str:
    """One syntactically valid SMILES string from the supported subset."""
    while True:
        start = 10 if rng.random() < 0.05 else 1
        digit_alloc = [start]
        s = _random_chain(rng, int(rng.integers(min_atoms, max_atoms + 1)), 0, digit_alloc)
        try:
            mol = parse_smiles(s)
        except ParseError:
            continue
        if len(mol.atoms) >= min_atoms:
            return s


def random_conformer(mol: Molecule, rng: np.random.Generator,
                     cone: float | None = None) -> np.ndarray:
    """Synthetic 3D placement over the bond tree (ingested data stand-in).

    Atoms attach to their first-seen bonded neighbor at ~1.5 A. With
    ``cone`` set, each new direction is drawn within that half-angle of the
    continuation of the parent bond, which narrows or widens the bond
    angles; otherwise directions are uniform.
    """
    n = len(mol.atoms)
    coords = np.zeros((n, 3), dtype=np.float64)
    placed = [False] * n
    adj = [[] for _ in range(n)]
    for b in mol.bonds:
        adj[b.a].append(b.b)
        adj[b.b].append(b.a)

    def rand_unit():
        v = rng.normal(size=3)
        return v / np.linalg.norm(v)

    def cone_unit(axis):
        axis = axis / np.linalg.norm(axis)
        if cone is None:
            return rand_unit()
        ang = cone * rng.random()
        # Any perpendicular direction, rotated ang away from the axis.
        perp = np.cross(axis, rand_unit())
        while np.linalg.norm(perp) < 1e-9:
            perp = np.cross(axis, rand_unit())
        perp /= np.linalg.norm(perp)
        return np.cos(ang) * axis + np.sin(ang) * perp

    for comp_start in range(n):
        if placed[comp_start]:
            continue
        coords[comp_start] = rng.normal(scale=8.0, size=3)
        placed[comp_start] = True
        stack = [(comp_start, None)]
        while stack:
            v, parent = stack.pop()
            for to in adj[v]:
                if placed[to]:
                    continue
                length = 1.5 + rng.normal(scale=0.08)
                if parent is None:
                    direction = rand_unit()
                else:
                    direction = cone_unit(coords[v] - coords[parent])
                coords[to] = coords[v] + length * direction
                placed[to] = True
                stack.append((to, v))
    return coords


def generate_corpus(n: int = 500, seed: int = 20240501) -> list[Record]:
    """The deterministic bundled corpus: SMILES + conformer + toy label."""
    rng = np.random.default_rng(seed)
    records = []
    seen = set()
    while len(records) < n:
        s = random_smiles(rng, 3, 14)
        if s in seen:
            continue
        seen.add(s)
        mol = parse_smiles(s)
        coords = random_conformer(mol, rng)
        label = round(float(len(mol.atoms) + 2.0 * sum(b.in_ring for b in mol.bonds)
                            + rng.normal(scale=0.5)), 4)
        records.append(Record(smiles=s, coords=coords, label=label))
    return records


def mean_bond_angle(mol: Molecule) -> float:
    """Mean inter-bond angle over the molecule's angular pairs (radians)."""
    graph = build_unified_graph(mol)
    arr = graph.geom_array()
    if arr.shape[0] == 0:
        raise DataError(f"{mol.source_smiles!r} has no angular pairs")
    return float(arr[:, 2].mean())


def make_angle_task(n: int = 240, seed: int = 7) -> list[Record]:
    """Synthetic regression set whose target is the conformer's mean bond
    angle. The placement cone couples that angle partly to topology (mean
    degree) and partly to per-molecule randomness, so topology-aware models
    can explain some of the variance and geometry-aware models most of it."""
    from .tokenizer import tokenize

    rng = np.random.default_rng(seed)
    records = []
    while len(records) < n:
        s = random_smiles(rng, 6, 16)
        mol = parse_smiles(s)
        if len(mol.bonds) < 5 or len(tokenize(s)) > 44:
            continue
        degrees = [mol.degree(i) for i in range(len(mol.atoms))]
        topo = np.clip((np.mean(degrees) - 1.0) / 1.2, 0.0, 1.0)
        spread = 0.35 * topo + 0.65 * rng.random()
        cone = (0.25 + 0.65 * spread) * np.pi / 2.0
        coords = random_conformer(mol, rng, cone=cone)
        mol.conformer = [c for c in coords]
        try:
            label = mean_bond_angle(mol)
        except DataError:
            continue
        records.append(Record(smiles=s, coords=coords, label=label))
    return records


# ---------------------------------------------------------------------------
# batch assembly


@dataclass
class Example:
    record: Record
    molecule: Molecule
    token_ids: np.ndarray
    seq_mask: np.ndarray
    graph: UnifiedGraph
    sub: UnifiedGraph


def prepare_example(rec: Record, vocab: Vocab, mcfg: ModelConfig,
                    rules: CutRuleSet | None = None,
                    gcfg: GraphConfig | None = None,
                    char_level: bool = False) -> Example:
    mol = record_to_molecule(rec)
    seq, mask = encode(rec.smiles, vocab, mcfg.max_len, char_level=char_level)
    graph = build_unified_graph(mol, gcfg)
    cut = compute_cut_set(graph, mol, rules)
    sub = segment_graph(graph, cut).sub
    return Example(record=rec, molecule=mol,
                   token_ids=np.asarray(seq.ids, dtype=np.int64),
                   seq_mask=mask, graph=graph, sub=sub)


def collate(examples: list[Example]) -> Batch:
    labels = None
    if all(e.record.label is not None for e in examples):
        labels = np.asarray([e.record.label for e in examples], dtype=np.float64)
    return Batch(
        token_ids=np.stack([e.token_ids for e in examples]),
        seq_mask=np.stack([e.seq_mask for e in examples]),
        graph=batch_graphs([e.graph for e in examples]),
        sub=batch_graphs([e.sub for e in examples]),
        labels=labels,
    )
