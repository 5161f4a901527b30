"""Loss, optimiser, learning-rate schedule and the training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, InputError, TrainingAborted
from .hoplstm import detach_carry, encode_batch
from .metrics import auc
from .model import init_params, run_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 120
    lr: float = 0.01
    lr_floor: float = 0.001
    anneal_period: int = 15
    anneal_epochs: int = 120
    anneal: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    folds: int = 5
    seed: int = 0
    sigma: float = 0.1
    patience: int = None

    def __post_init__(self):
        for name in ("batch_size", "epochs", "anneal_period", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or self.lr_floor < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lr_floor > self.lr and self.lr > 0:
            raise ConfigError(f"lr_floor {self.lr_floor} exceeds lr {self.lr}")
        if self.clip_norm <= 0 or self.sigma <= 0:
            raise ConfigError("clip_norm and sigma must be positive")

    def to_dict(self):
        return asdict(self)


# -- loss ---------------------------------------------------------------------

def loss(probs, answers, mask=None):
    """-sum(y log p + (1 - y) log(1 - p)) over unmasked positions."""
    probs = ad.as_tensor(probs)
    y = np.asarray(answers, dtype=np.float64)
    if y.shape != probs.shape:
        raise ContractError(f"{probs.shape} probabilities vs {y.shape} answers")
    m = np.ones_like(y) if mask is None else np.asarray(mask, dtype=np.float64)
    pos = ad.log(probs)
    neg = ad.log(ad.sub(1.0, probs))
    terms = ad.add(ad.mul(y * m, pos), ad.mul((1.0 - y) * m, neg))
    return ad.mul(ad.tsum(terms), -1.0)


def loss_from_logits(logits, answers, mask=None):
    """Same cross-entropy computed from logits, finite even when p rounds to 0 or 1."""
    logits = ad.as_tensor(logits)
    y = np.asarray(answers, dtype=np.float64)
    if y.shape != logits.shape:
        raise ContractError(f"{logits.shape} logits vs {y.shape} answers")
    m = np.ones_like(y) if mask is None else np.asarray(mask, dtype=np.float64)
    # -log p = softplus(-z), -log(1-p) = softplus(z)
    terms = ad.add(ad.mul(y * m, ad.softplus(ad.mul(logits, -1.0))),
                   ad.mul((1.0 - y) * m, ad.softplus(logits)))
    return ad.tsum(terms)


# -- schedule, clipping, Adam -------------------------------------------------

def lr_schedule(epoch, lr=0.01, lr_floor=0.001, period=15, anneal_epochs=120, anneal=True):
    """Cosine annealing from lr to lr_floor, restarted every ``period`` epochs,
    then held at lr_floor from ``anneal_epochs`` on."""
    if epoch < 0:
        raise InputError(f"epoch must be >= 0, got {epoch}")
    if not anneal:
        return lr
    if epoch >= anneal_epochs:
        return lr_floor
    phase = (epoch % period) / period
    # written as a decay from lr so that phase 0 returns lr exactly
    return lr - (lr - lr_floor) * (1.0 - math.cos(math.pi * phase)) / 2.0


def global_norm(params):
    return math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params if t.grad is not None))


def clip_gradients(params, clip_norm):
    """Scale every gradient by clip_norm / g when the global L2 norm g exceeds clip_norm."""
    params = list(params)
    norm = global_norm(params)
    if norm > clip_norm:
        scale = clip_norm / norm
        for t in params:
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params, state, lr):
    """In-place Adam update with bias correction; missing gradients count as zero."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- splits -----------------------------------------------------------------

def kfold_split(sequences, folds=5, seed=0):
    """(train, val) index lists per fold; students are shuffled once under ``seed``."""
    n = sequences if isinstance(sequences, int) else len(sequences)
    if folds < 2:
        raise InputError(f"folds must be >= 2, got {folds}")
    if n < folds:
        raise InputError(f"{n} students cannot be split into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, folds)
    out = []
    for k in range(folds):
        val = sorted(parts[k].tolist())
        train = sorted(np.concatenate([parts[j] for j in range(folds) if j != k]).tolist())
        out.append((train, val))
    return out


# -- evaluation and training ----------------------------------------------------

def _batches(seqs, batch_size):
    for i in range(0, len(seqs), batch_size):
        chunk = seqs[i:i + batch_size]
        yield encode_batch([s.questions for s in chunk], [s.answers for s in chunk])


def predict_dataset(params, config, dataset, batch_size=64):
    """Flattened (probabilities, answers) over every exercise of the dataset."""
    probs, labels = [], []
    for q, y, mask in _batches(dataset.sequences, batch_size):
        res = run_batch(params, config, q, y, mask)
        probs.append(res.probs[mask])
        labels.append(y[mask])
    if not probs:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.concatenate(probs), np.concatenate(labels)


def evaluate(params, config, dataset, batch_size=64):
    p, y = predict_dataset(params, config, dataset, batch_size)
    pc = np.clip(p, 1e-15, 1 - 1e-15)
    mean_loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))) if y.size else float("nan")
    return {"auc": auc(p, y), "loss": mean_loss, "n": int(y.size)}


def train_step(params, config, q, y, mask, adam, lr, clip_norm, carry=None):
    """Forward, mean cross-entropy, backward, clip and Adam on one window."""
    n = int(mask.sum())
    with ad.Tape():
        res = run_batch(params, config, q, y, mask, carry)
        total = loss_from_logits(res.logits, y, mask)
        mean = ad.mul(total, 1.0 / max(n, 1))
    value = total.item()
    if not math.isfinite(value):
        return value, n, res
    params.zero_grad()
    ad.backward(mean)
    clip_gradients(params.values(), clip_norm)
    adam_step(params, adam, lr)
    return value, n, res


def train_model(train, model_config, train_config, val=None, log_path=None,
                timing_path=None, params=None, progress=None):
    """Train with shuffled mini-batches; return (best params, per-epoch records).

    Without ``val``, the first of ``train_config.folds`` folds is held out
    (``folds=1`` trains on everything, unvalidated). The returned store is the
    one with the best validation AUC, or the final one without validation.
    """
    tc = train_config
    if val is None and tc.folds >= 2:
        tr_idx, val_idx = kfold_split(len(train), tc.folds, tc.seed)[0]
        train, val = train.subset(tr_idx, "train"), train.subset(val_idx, "val")
    if len(train) == 0:
        raise InputError("training split is empty")
    if params is None:
        params = init_params(model_config, tc.seed, tc.sigma)
    adam = AdamState(params, tc.beta1, tc.beta2, tc.eps)
    rng = np.random.default_rng(tc.seed + 1)
    L = model_config.max_seq_len
    records, best, best_auc, stale = [], None, -math.inf, 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    time_fh = open(timing_path, "w", encoding="utf-8") if timing_path else None
    try:
        for epoch in range(tc.epochs):
            started = time.perf_counter()
            lr = lr_schedule(epoch, tc.lr, tc.lr_floor, tc.anneal_period, tc.anneal_epochs, tc.anneal)
            order = rng.permutation(len(train)).tolist()
            seqs = [train.sequences[i] for i in order]
            loss_sum, count = 0.0, 0
            for bi, (q, y, mask) in enumerate(_batches(seqs, tc.batch_size)):
                carry = None
                for w0 in range(0, q.shape[1], L):
                    sl = slice(w0, w0 + L)
                    value, n, res = train_step(params, model_config, q[:, sl], y[:, sl], mask[:, sl],
                                               adam, lr, tc.clip_norm, carry)
                    if not math.isfinite(value):
                        students = [s.student for s in seqs[bi * tc.batch_size:(bi + 1) * tc.batch_size]]
                        raise TrainingAborted(
                            f"non-finite loss {value} at epoch {epoch}, batch {bi}, window {w0}; "
                            f"students {students}")
                    loss_sum += value
                    count += n
                    carry = detach_carry(res.carry)
            val_auc = evaluate(params, model_config, val)["auc"] if val is not None and len(val) else float("nan")
            rec = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / max(count, 1), "val_auc": val_auc}
            records.append(rec)
            wall_ms = int(round((time.perf_counter() - started) * 1000))
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if time_fh:
                time_fh.write(json.dumps({"epoch": epoch, "wall_ms": wall_ms}) + "\n")
                time_fh.flush()
            if progress:
                progress(rec, wall_ms)
            log.info("epoch %d lr=%.5f loss=%.4f val_auc=%.4f (%d ms)",
                     epoch, lr, rec["train_loss"], val_auc, wall_ms)
            if not math.isfinite(val_auc):
                continue
            if best is None or val_auc > best_auc:
                best, best_auc, stale = params.copy(), val_auc, 0
            else:
                stale += 1
                if tc.patience is not None and stale >= tc.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
        if time_fh:
            time_fh.close()
    if best is None:
        best = params.copy()
    best.meta["best_val_auc"] = best_auc if math.isfinite(best_auc) else None
    return best, records
