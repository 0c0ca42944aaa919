"""Pretraining, fine-tuning, evaluation metrics, and fingerprint similarity.

The masked-token recipe is the usual 15% selection with an 80/10/10
mask/random/keep split (at least one position per sequence). The optimizer
is bias-corrected Adam under a linear-warmup, cosine-decay schedule.
"""

from __future__ import annotations

import json
import math
import os
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .data import Example, collate
from .errors import (
    Empty,
    NoMaskedPositions,
    ShapeMismatch,
    SingleClass,
    WidthMismatch,
    ZeroVariance,
)
from .model import MuMo
from .smiles import BOND_ORDERS, Molecule
from .tensor import Tensor
from .tokenizer import SPECIAL_TOKENS

N_SPECIAL = len(SPECIAL_TOKENS)


# ---------------------------------------------------------------------------
# masked language modeling


@dataclass
class MlmBatch:
    input_ids: np.ndarray       # [B, T] with masking applied
    target_ids: np.ndarray      # [B, T] original ids
    loss_positions: np.ndarray  # [B, T] bool


def mlm_mask(ids: np.ndarray, seq_mask: np.ndarray, vocab_size: int, seed: int,
             ratio: float = 0.15) -> MlmBatch:
    """Select ~``ratio`` of the real (non-special) positions per sequence;
    of those, 80% become [MASK], 10% a random non-special token, 10% stay."""
    rng = np.random.default_rng(seed)
    ids = np.asarray(ids, dtype=np.int64)
    out = ids.copy()
    loss = np.zeros_like(ids, dtype=bool)
    mask_id = SPECIAL_TOKENS.index("[MASK]")
    for row in range(ids.shape[0]):
        real = np.where(seq_mask[row] & (ids[row] >= N_SPECIAL))[0]
        if real.size == 0:
            continue
        n_sel = max(1, int(round(ratio * real.size)))
        chosen = rng.choice(real, size=min(n_sel, real.size), replace=False)
        loss[row, chosen] = True
        for pos in chosen:
            r = rng.random()
            if r < 0.8:
                out[row, pos] = mask_id
            elif r < 0.9:
                out[row, pos] = rng.integers(N_SPECIAL, vocab_size)
    return MlmBatch(input_ids=out, target_ids=ids, loss_positions=loss)


def mlm_loss(token_states: Tensor, batch: MlmBatch, out_w: Tensor, out_b: Tensor) -> Tensor:
    """Mean cross-entropy over the selected positions (untied projection)."""
    flat_pos = np.where(batch.loss_positions.reshape(-1))[0]
    if flat_pos.size == 0:
        raise NoMaskedPositions("no positions selected for the loss")
    b, t, d = token_states.shape
    rows = T.gather(T.reshape(token_states, (b * t, d)), flat_pos)
    logits = T.matmul(rows, out_w) + out_b
    targets = batch.target_ids.reshape(-1)[flat_pos]
    return T.cross_entropy(logits, targets)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    base_lr: float
    warmup: int
    total: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def lr_schedule(step: int, base: float, warmup: int, total: int) -> float:
    """Linear warmup to ``base`` at ``step == warmup``, cosine decay after."""
    if warmup > 0 and step < warmup:
        return base * step / warmup
    if total <= warmup:
        return base
    t = min(step, total)
    return base * 0.5 * (1.0 + math.cos(math.pi * (t - warmup) / (total - warmup)))


def adam_step(params: dict[str, Tensor], state: OptimizerState) -> float:
    """One bias-corrected Adam update in place; returns the lr used.

    Parameters with no gradient this step are left untouched.
    """
    state.step += 1
    lr = lr_schedule(state.step, state.base_lr, state.warmup, state.total)
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** state.step)
        v_hat = state.v[name] / (1 - b2 ** state.step)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return lr


# ---------------------------------------------------------------------------
# metrics


def metrics_auroc(scores, labels) -> float:
    """Rank-based AUROC (Mann-Whitney) with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = ranks[pos].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def metrics_regression(preds, targets) -> dict[str, float]:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise Empty("no predictions")
    err = preds - targets
    return {"rmse": float(np.sqrt((err ** 2).mean())), "mae": float(np.abs(err).mean())}


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or x.size != y.size:
        raise Empty("pearson needs n >= 2 equal-length vectors")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc ** 2).sum() * (yc ** 2).sum())
    if denom == 0:
        raise ZeroVariance("pearson undefined for constant input")
    return float((xc * yc).sum() / denom)


# ---------------------------------------------------------------------------
# fingerprints and similarity


FP_WIDTH = 2048
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset
    width: int = FP_WIDTH
    radius: int = 2


def morgan_fp(mol: Molecule, width: int = FP_WIDTH, radius: int = 2) -> Fingerprint:
    """Circular fingerprint by iterative neighborhood hashing.

    Round 0 hashes (element, degree, charge, aromatic, in_ring) per atom;
    each later round hashes the atom's own code with the sorted list of
    (bond-order code, neighbor code) pairs, all through 64-bit FNV-1a over
    a fixed byte encoding. Every code from every round folds to
    ``code % width``. Order of atoms in the input never matters because
    neighbor lists are sorted before hashing.
    """
    n = len(mol.atoms)
    nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for b in mol.bonds:
        code = BOND_ORDERS.index(b.order) + 1
        nbrs[b.a].append((code, b.b))
        nbrs[b.b].append((code, b.a))
    codes = []
    for i, atom in enumerate(mol.atoms):
        key = f"{atom.element}|{mol.degree(i)}|{atom.formal_charge}|{int(atom.aromatic)}|{int(atom.in_ring)}"
        codes.append(_fnv1a(key.encode("utf-8")))
    bits = {c % width for c in codes}
    for _ in range(radius):
        new_codes = []
        for i in range(n):
            parts = [codes[i].to_bytes(8, "little")]
            for order_code, nbr_code in sorted((oc, codes[j]) for oc, j in nbrs[i]):
                parts.append(bytes([order_code]))
                parts.append(nbr_code.to_bytes(8, "little"))
            new_codes.append(_fnv1a(b"".join(parts)))
        codes = new_codes
        bits |= {c % width for c in codes}
    return Fingerprint(bits=frozenset(bits), width=width, radius=radius)


def similarity(fa: Fingerprint, fb: Fingerprint) -> dict[str, float]:
    """Bit-set Tanimoto distance, Dice, and cosine. Two empty sets count as
    identical (similarity 1, distance 0); one empty set scores 0 similarity."""
    if fa.width != fb.width:
        raise WidthMismatch(f"{fa.width} vs {fb.width}")
    a, b = fa.bits, fb.bits
    inter = len(a & b)
    if not a and not b:
        return {"tanimoto_distance": 0.0, "dice": 1.0, "cosine": 1.0}
    union = len(a) + len(b) - inter
    tanimoto = inter / union if union else 1.0
    dice = 2.0 * inter / (len(a) + len(b))
    cosine = inter / math.sqrt(len(a) * len(b)) if a and b else 0.0
    return {"tanimoto_distance": 1.0 - tanimoto, "dice": dice, "cosine": cosine}


def embedding_similarity_report(embed_fn, molecules: list[Molecule], n_pairs: int,
                                seed: int) -> dict[str, dict[str, float]]:
    """Pearson correlation between embedding Euclidean distance and each
    fingerprint metric over ``n_pairs`` sampled molecule pairs.

    The distance should correlate positively with Tanimoto distance and
    negatively with Dice/cosine similarity; `abs_r` is the comparison value.
    """
    if n_pairs <= 0:
        raise Empty("n_pairs must be positive")
    if len(molecules) < 2:
        raise Empty("need at least two molecules")
    rng = np.random.default_rng(seed)
    embeddings = [np.asarray(embed_fn(m), dtype=np.float64) for m in molecules]
    fps = [morgan_fp(m) for m in molecules]
    dist, tani, dice, cosine = [], [], [], []
    for _ in range(n_pairs):
        i, j = rng.choice(len(molecules), size=2, replace=False)
        dist.append(float(np.linalg.norm(embeddings[i] - embeddings[j])))
        sim = similarity(fps[i], fps[j])
        tani.append(sim["tanimoto_distance"])
        dice.append(sim["dice"])
        cosine.append(sim["cosine"])
    report = {}
    for name, values in (("tanimoto_distance", tani), ("dice", dice), ("cosine", cosine)):
        r = pearson(dist, values)
        report[name] = {"r": r, "abs_r": abs(r)}
    return report


# ---------------------------------------------------------------------------
# training loops


def _batch_feeder(examples: list[Example], batch_size: int, n_steps: int, seed: int,
                  out_queue: "queue.Queue"):
    """Producer: deterministic shuffled batches through a bounded queue."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    cursor = 0
    for _ in range(n_steps):
        if cursor + batch_size > len(order):
            order = rng.permutation(len(examples))
            cursor = 0
        take = order[cursor:cursor + batch_size]
        cursor += batch_size
        out_queue.put(collate([examples[i] for i in take]))
    out_queue.put(None)


def pretrain_mlm(model: MuMo, examples: list[Example], vocab_size: int, steps: int,
                 lr: float, warmup: int, batch_size: int, seed: int,
                 mask_ratio: float = 0.15, log_path: str | None = None,
                 checkpoint_every: int = 0, out_dir: str | None = None) -> list[dict]:
    """Masked-token pretraining. Returns the per-step log; batches are
    prepared by a producer thread behind a bounded queue while the single
    training thread owns all mutable state."""
    d = model.cfg.hidden
    rng = np.random.default_rng(seed + 1)
    out_w = Tensor(rng.normal(0.0, 0.02, size=(d, vocab_size)), requires_grad=True)
    out_b = Tensor(np.zeros(vocab_size), requires_grad=True)
    opt_params = dict(model.params)
    opt_params["mlm.out_w"] = out_w
    opt_params["mlm.out_b"] = out_b
    state = OptimizerState(base_lr=lr, warmup=warmup, total=steps)

    feed: "queue.Queue" = queue.Queue(maxsize=4)
    producer = threading.Thread(
        target=_batch_feeder, args=(examples, batch_size, steps, seed, feed), daemon=True)
    producer.start()

    log: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    while True:
        batch = feed.get()
        if batch is None:
            break
        step += 1
        masked = mlm_mask(batch.token_ids, batch.seq_mask, vocab_size,
                          seed=seed * 100003 + step, ratio=mask_ratio)
        fwd_batch = batch
        fwd_batch.token_ids = masked.input_ids
        for p in opt_params.values():
            p.zero_grad()
        states, _ = model.forward(fwd_batch, train=True,
                                  rng=np.random.default_rng(seed * 7919 + step))
        loss = mlm_loss(states, masked, out_w, out_b)
        T.backward(loss)
        used_lr = adam_step(opt_params, state)
        entry = {"step": step, "lr": used_lr, "loss": float(loss.item())}
        log.append(entry)
        if log_fh:
            log_fh.write(json.dumps(entry) + "\n")
        if checkpoint_every and out_dir and step % checkpoint_every == 0:
            model.to_checkpoint().save(os.path.join(out_dir, f"step{step:06d}.mumo"))
    if log_fh:
        log_fh.close()
    producer.join()
    return log


@dataclass
class FitResult:
    head: dict[str, Tensor]
    label_mean: float
    label_std: float
    losses: list[float]


def finetune_regression(model: MuMo, train_examples: list[Example], epochs: int,
                        lr: float, batch_size: int, seed: int, warmup: int = 20) -> FitResult:
    """Supervised regression on z-scored labels (denormalized at eval)."""
    labels = np.asarray([e.record.label for e in train_examples], dtype=np.float64)
    mu, sigma = float(labels.mean()), float(labels.std() + 1e-12)
    rng = np.random.default_rng(seed + 13)
    d = model.cfg.hidden
    head = {
        "head.w": Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True),
        "head.b": Tensor(np.zeros(1), requires_grad=True),
    }
    opt_params = dict(model.params)
    opt_params.update(head)
    steps_per_epoch = max(1, len(train_examples) // batch_size)
    total = epochs * steps_per_epoch
    state = OptimizerState(base_lr=lr, warmup=warmup, total=total)
    order_rng = np.random.default_rng(seed)
    losses = []
    step = 0
    for _ in range(epochs):
        order = order_rng.permutation(len(train_examples))
        for b0 in range(0, steps_per_epoch * batch_size, batch_size):
            take = order[b0:b0 + batch_size]
            if take.size == 0:
                continue
            step += 1
            batch = collate([train_examples[i] for i in take])
            targets = (np.asarray(batch.labels, dtype=np.float64) - mu) / sigma
            for p in opt_params.values():
                p.zero_grad()
            states, _ = model.forward(batch, train=True,
                                      rng=np.random.default_rng(seed * 31 + step))
            preds = model.head(model.pool(states, batch.seq_mask), head)
            loss = T.mse(T.reshape(preds, (preds.shape[0],)),
                         Tensor(np.asarray(targets, dtype=preds.data.dtype)))
            T.backward(loss)
            adam_step(opt_params, state)
            losses.append(float(loss.item()))
    return FitResult(head=head, label_mean=mu, label_std=sigma, losses=losses)


def predict_regression(model: MuMo, fit: FitResult, examples: list[Example],
                       batch_size: int = 32) -> np.ndarray:
    preds = []
    with T.no_grad():
        for b0 in range(0, len(examples), batch_size):
            batch = collate(examples[b0:b0 + batch_size])
            states, _ = model.forward(batch, train=False)
            out = model.head(model.pool(states, batch.seq_mask), fit.head)
            preds.append(out.data.reshape(-1))
    z = np.concatenate(preds)
    return z * fit.label_std + fit.label_mean


def finetune_binary(model: MuMo, train_examples: list[Example], epochs: int,
                    lr: float, batch_size: int, seed: int, warmup: int = 20) -> FitResult:
    """Supervised binary classification with logits + BCE."""
    rng = np.random.default_rng(seed + 13)
    d = model.cfg.hidden
    head = {
        "head.w": Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True),
        "head.b": Tensor(np.zeros(1), requires_grad=True),
    }
    opt_params = dict(model.params)
    opt_params.update(head)
    steps_per_epoch = max(1, len(train_examples) // batch_size)
    state = OptimizerState(base_lr=lr, warmup=warmup, total=epochs * steps_per_epoch)
    order_rng = np.random.default_rng(seed)
    losses = []
    step = 0
    for _ in range(epochs):
        order = order_rng.permutation(len(train_examples))
        for b0 in range(0, steps_per_epoch * batch_size, batch_size):
            take = order[b0:b0 + batch_size]
            if take.size == 0:
                continue
            step += 1
            batch = collate([train_examples[i] for i in take])
            for p in opt_params.values():
                p.zero_grad()
            states, _ = model.forward(batch, train=True,
                                      rng=np.random.default_rng(seed * 31 + step))
            logits = model.head(model.pool(states, batch.seq_mask), head)
            loss = T.bce_with_logits(T.reshape(logits, (logits.shape[0],)),
                                     np.asarray(batch.labels, dtype=np.float64))
            T.backward(loss)
            adam_step(opt_params, state)
            losses.append(float(loss.item()))
    return FitResult(head=head, label_mean=0.0, label_std=1.0, losses=losses)


def predict_scores(model: MuMo, fit: FitResult, examples: list[Example],
                   batch_size: int = 32) -> np.ndarray:
    preds = []
    with T.no_grad():
        for b0 in range(0, len(examples), batch_size):
            batch = collate(examples[b0:b0 + batch_size])
            states, _ = model.forward(batch, train=False)
            out = model.head(model.pool(states, batch.seq_mask), fit.head)
            preds.append(out.data.reshape(-1))
    return np.concatenate(preds)


def gtk_embeddings(model: MuMo, examples: list[Example], batch_size: int = 32) -> np.ndarray:
    """Pooled anchor-token embedding per example (the molecule embedding)."""
    rows = []
    with T.no_grad():
        for b0 in range(0, len(examples), batch_size):
            batch = collate(examples[b0:b0 + batch_size])
            states, _ = model.forward(batch, train=False)
            rows.append(model.pool(states, batch.seq_mask).data.copy())
    return np.concatenate(rows, axis=0)
