"""One-shot verification suites: invariance, batching equivalence, torsion
reconstruction, gradient correctness, and tokenizer round-trips.

Each suite returns a :class:`SuiteResult` with the measured worst case and
its limit; the CLI prints one line per suite and exits nonzero on failure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import (
    Record,
    bundled_corpus_path,
    load_jsonl,
    prepare_example,
    collate,
    record_to_molecule,
)
from .geometry import (
    apply_rigid_transform,
    random_rotation,
    torsion_cross,
    torsion_standard,
)
from .model import ModelConfig, MuMo, init_params
from .tokenizer import build_vocab, tokenize
from .train import mlm_loss, mlm_mask
from .unigraph import build_unified_graph
from .tensor import Tensor, grad_check

# SMILES exercising the exotic token classes the tokenizer must keep atomic.
EXEMPLAR_SMILES = [
    "C[C@H](N)C(=O)O",
    "C[C@@H](O)C",
    "[N+](C)(C)C",
    "CC(=O)[O-]",
    "[13C]CO",
    "[14C]1CCCC1",
    "c1cc[nH]c1",
    "[B-](F)(F)F",
    "[Na+].[Cl-]",
    "C[S@](=O)C",
    "[Si]([Si])C",
    "[NH2+]CC",
    "[2H]C([2H])O",
    "[15N]#N",
    "ClCCBr",
    "C%10CCCCC%10",
    "C%11(CC%11)Cl",
    "C[C-](C)C",
    "[O+]C",
    "[Se]1CC1",
    "C/C=C\\C",
    "c1ccc2ccccc2c1",
]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: float
    limit: float
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<24} measured={self.measured:.3e} "
                f"limit={self.limit:.0e} ({self.seconds:.1f}s) {self.detail}")


def verify_model_config(max_len: int = 48) -> ModelConfig:
    return ModelConfig(hidden=64, n_layers=8, n_heads=4, fusion_start=5,
                       mpnn_iters=3, max_len=max_len)


def _corpus_records(max_tokens: int, limit: int, need_coords: bool = True) -> list[Record]:
    records = load_jsonl(bundled_corpus_path())
    out = []
    for rec in records:
        if need_coords and rec.coords is None:
            continue
        if len(tokenize(rec.smiles)) <= max_tokens:
            out.append(rec)
        if len(out) == limit:
            break
    return out


def _prep(records, cfg, vocab):
    return [prepare_example(r, vocab, cfg) for r in records]


def suite_invariance(n_molecules: int = 100, n_transforms: int = 20, seed: int = 0) -> SuiteResult:
    """Descriptors within 1e-9 (f64) and forward outputs within 1e-6 (f32)
    under seeded rigid transforms."""
    t0 = time.time()
    records = _corpus_records(max_tokens=44, limit=n_molecules)
    transforms = [random_rotation(seed * 1000 + t) for t in range(n_transforms)]

    worst_desc = 0.0
    base_graphs = []
    for rec in records:
        mol = record_to_molecule(rec)
        base = build_unified_graph(mol).geom_array()
        base_graphs.append(base)
        for tr in transforms:
            mol_t = record_to_molecule(rec)
            moved = apply_rigid_transform(np.asarray(rec.coords), tr)
            mol_t.conformer = [c for c in moved]
            arr = build_unified_graph(mol_t).geom_array()
            if arr.shape != base.shape:
                return SuiteResult("rotational_invariance", False, np.inf, 1e-9,
                                   f"triplet count changed for {rec.smiles}", time.time() - t0)
            if arr.size:
                worst_desc = max(worst_desc, float(np.abs(arr - base).max()))

    cfg = verify_model_config()
    vocab = build_vocab([r.smiles for r in records])
    cfg.vocab_size = vocab.size
    model = MuMo(cfg, init_params(cfg, seed=42), dtype=np.float32)
    examples = _prep(records, cfg, vocab)
    worst_fwd = 0.0
    with T.no_grad():
        base_batch = collate(examples)
        base_out, _ = model.forward(base_batch)
        for tr in transforms:
            moved = []
            for rec in records:
                r2 = Record(smiles=rec.smiles,
                            coords=apply_rigid_transform(np.asarray(rec.coords), tr),
                            label=rec.label)
                moved.append(r2)
            batch = collate(_prep(moved, cfg, vocab))
            out, _ = model.forward(batch)
            worst_fwd = max(worst_fwd, float(np.abs(out.data - base_out.data).max()))

    passed = worst_desc < 1e-9 and worst_fwd < 1e-6
    detail = f"descriptors={worst_desc:.3e} (<1e-9) forward={worst_fwd:.3e} (<1e-6)"
    return SuiteResult("rotational_invariance", passed, worst_desc, 1e-9, detail,
                       time.time() - t0)


def suite_batching(n_batches: int = 50, seed: int = 1) -> SuiteResult:
    """Batched forward equals per-graph forward within 1e-10 in 64-bit."""
    t0 = time.time()
    records = _corpus_records(max_tokens=30, limit=200)
    cfg = verify_model_config(max_len=32)
    vocab = build_vocab([r.smiles for r in records])
    cfg.vocab_size = vocab.size
    model = MuMo(cfg, init_params(cfg, seed=7), dtype=np.float64)
    examples = _prep(records, cfg, vocab)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with T.no_grad():
        for _ in range(n_batches):
            size = int(rng.integers(1, 17))
            take = rng.choice(len(examples), size=size, replace=False)
            chosen = [examples[i] for i in take]
            out, _ = model.forward(collate(chosen))
            for k, ex in enumerate(chosen):
                single, _ = model.forward(collate([ex]))
                worst = max(worst, float(np.abs(out.data[k] - single.data[0]).max()))
    return SuiteResult("batching_equivalence", worst < 1e-10, worst, 1e-10,
                       f"{n_batches} batches of 1-16", time.time() - t0)


def _ang_diff(a: float, b: float) -> float:
    """Magnitude of the angular difference, treating pi and -pi as equal."""
    return abs(np.arctan2(np.sin(a - b), np.cos(a - b)))


def suite_torsion(n_chains: int = 1000, seed: int = 2) -> SuiteResult:
    """Both torsion forms: rigid-transform invariant within 1e-9, exact
    agreement at planar fixtures, sign agreement on random chains."""
    t0 = time.time()
    trans = np.array([[0, 1, 0], [0, 0, 0], [1, 0, 0], [1, -1, 0]], dtype=np.float64)
    cis = np.array([[0, 1, 0], [0, 0, 0], [1, 0, 0], [1, 1, 0]], dtype=np.float64)
    worst = max(
        _ang_diff(torsion_cross(trans, 0, 1, 2, 3), np.pi),
        _ang_diff(torsion_standard(trans, 0, 1, 2, 3), np.pi),
        _ang_diff(torsion_cross(cis, 0, 1, 2, 3), 0.0),
        _ang_diff(torsion_standard(cis, 0, 1, 2, 3), 0.0),
        _ang_diff(torsion_cross(trans, 0, 1, 2, 3), torsion_standard(trans, 0, 1, 2, 3)),
        _ang_diff(torsion_cross(cis, 0, 1, 2, 3), torsion_standard(cis, 0, 1, 2, 3)),
    )
    rng = np.random.default_rng(seed)
    sign_mismatches = 0
    done = 0
    while done < n_chains:
        pts = rng.normal(scale=2.0, size=(4, 3))
        try:
            a = torsion_cross(pts, 0, 1, 2, 3)
            s = torsion_standard(pts, 0, 1, 2, 3)
        except Exception:
            continue
        done += 1
        if np.sign(a) != np.sign(s) and min(abs(a), abs(s)) > 1e-12:
            sign_mismatches += 1
        tr = random_rotation(seed * 31 + done)
        moved = apply_rigid_transform(pts, tr)
        worst = max(worst, _ang_diff(torsion_cross(moved, 0, 1, 2, 3), a),
                    _ang_diff(torsion_standard(moved, 0, 1, 2, 3), s))
    passed = worst < 1e-9 and sign_mismatches == 0
    return SuiteResult("torsion_reconstruction", passed, worst, 1e-9,
                       f"sign mismatches={sign_mismatches}/{n_chains}", time.time() - t0)


def _gradcheck_fixture(cfg: ModelConfig, seed: int):
    """A tiny, geometry-bearing batch plus a scalar loss with live gradients
    through every block (fusion layers, prior path, pooling, both losses)."""
    records = _corpus_records(max_tokens=cfg.max_len - 2, limit=3)
    records = records[:2] + [Record(smiles=records[2].smiles, coords=None)]
    vocab = build_vocab([r.smiles for r in records])
    cfg.vocab_size = vocab.size
    model = MuMo(cfg, init_params(cfg, seed), trainable=True, dtype=np.float64)
    examples = _prep(records, cfg, vocab)
    batch = collate(examples)
    masked = mlm_mask(batch.token_ids, batch.seq_mask, vocab.size, seed=seed)
    batch.token_ids = masked.input_ids
    rng = np.random.default_rng(seed + 5)
    out_w = Tensor(rng.normal(0.0, 0.05, size=(cfg.hidden, vocab.size)), requires_grad=True)
    out_b = Tensor(np.zeros(vocab.size), requires_grad=True)
    params = dict(model.params)
    params["out.w"] = out_w
    params["out.b"] = out_b

    def loss_fn() -> Tensor:
        states, _ = model.forward(batch, train=False)
        ce = mlm_loss(states, masked, out_w, out_b)
        pooled = model.pool(states, batch.seq_mask)
        # The 3e-4 scale conditions the check: central-difference noise on
        # near-dead coordinates scales down with the loss, while relative
        # error on live coordinates is scale-invariant, so real backward
        # bugs remain visible at the stated tolerance.
        return (ce + T.mean(pooled * pooled)) * 3e-4

    return params, loss_fn


def suite_gradcheck(seed: int = 3, full_coords_per_param: int = 2) -> SuiteResult:
    """Central-difference checks: small blocks exhaustively, the desk model
    (d=64, L=8, fusion_start=5) on a seeded coordinate sample."""
    t0 = time.time()
    with T.precision(np.float64):
        small = ModelConfig(hidden=8, n_layers=2, n_heads=2, fusion_start=2,
                            mpnn_iters=1, ffn_mult=2, max_len=24, rbf_bins=4, abf_bins=3,
                            pooling="combo")
        params, loss_fn = _gradcheck_fixture(small, seed)
        err_small = grad_check(loss_fn, params, h=1e-6)

        desk = ModelConfig(hidden=64, n_layers=8, n_heads=4, fusion_start=5,
                           max_len=24, pooling="combo")
        params, loss_fn = _gradcheck_fixture(desk, seed + 1)
        err_full = grad_check(loss_fn, params, h=1e-6,
                              max_coords_per_param=full_coords_per_param, seed=seed)
    worst = max(err_small, err_full)
    detail = f"small-block={err_small:.3e} desk-model={err_full:.3e}"
    return SuiteResult("gradient_correctness", worst < 1e-4, worst, 1e-4, detail,
                       time.time() - t0)


def suite_tokenizer() -> SuiteResult:
    """Lossless round-trip over the bundled corpus plus the exemplar strings;
    bracket atoms and %NN closures stay single tokens."""
    t0 = time.time()
    records = load_jsonl(bundled_corpus_path())
    strings = [r.smiles for r in records] + EXEMPLAR_SMILES
    bad = 0
    atomic_violations = 0
    for s in strings:
        toks = tokenize(s)
        if "".join(toks) != s:
            bad += 1
        for t in toks:
            if len(t) > 1:
                if t.startswith("["):
                    if not t.endswith("]"):
                        atomic_violations += 1
                elif t.startswith("%"):
                    if not (len(t) == 3 and t[1:].isdigit()):
                        atomic_violations += 1
                elif t not in ("Cl", "Br"):
                    atomic_violations += 1
            elif t in "[]":
                atomic_violations += 1
    failures = bad + atomic_violations
    return SuiteResult("tokenizer_losslessness", failures == 0, float(failures), 1.0,
                       f"{len(strings)} strings, {bad} round-trip faults", time.time() - t0)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        suite_tokenizer(),
        suite_torsion(seed=seed + 2),
        suite_invariance(seed=seed),
        suite_batching(seed=seed + 1),
        suite_gradcheck(seed=seed + 3),
    ]
