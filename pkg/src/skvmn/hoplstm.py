"""Hop-LSTM sequence layer and output layer.

The LSTM cell at step t continues from the hidden/cell state of the most recent
earlier step whose attention vector has the same identity vector, instead of
step t-1. A step with no such predecessor starts from zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kvmem
from .errors import DimensionError, InputError
from .seqdep import DEFAULT_RANGES, HopState, identity_vector

GATE_NAMES = ("g", "i", "o", "c")


@dataclass
class LstmParams:
    W_g: ad.Tensor
    W_i: ad.Tensor
    W_o: ad.Tensor
    W_c: ad.Tensor
    b_g: ad.Tensor
    b_i: ad.Tensor
    b_o: ad.Tensor
    b_c: ad.Tensor
    _fused: tuple = field(default=None, repr=False)

    @classmethod
    def from_store(cls, params):
        return cls(**{f"{p}_{g}": params[f"{p}_{g}"] for p in ("W", "b") for g in GATE_NAMES})

    @property
    def hidden_dim(self):
        return self.W_g.shape[1]

    def fused(self):
        """All four gates as one (d_h+d_f) x 4d_h matrix, built once per forward."""
        if self._fused is None:
            dims = {w.shape for w in (self.W_g, self.W_i, self.W_o, self.W_c)}
            if len(dims) != 1:
                raise DimensionError(f"LSTM gate weights disagree in shape: {sorted(dims)}")
            W = ad.concat([self.W_g, self.W_i, self.W_o, self.W_c], axis=1)
            b = ad.concat([self.b_g, self.b_i, self.b_o, self.b_c], axis=0)
            self._fused = (W, b)
        return self._fused


def cell_step(f, prev, lstm):
    """One LSTM cell fed ``[h_prev, f]``; ``prev`` is (h, c) or None for zeros.

    Returns (h_t, c_t). Accepts single vectors or batches.
    """
    W, b = lstm.fused()
    d_h = lstm.hidden_dim
    lead = f.shape[:-1]
    if prev is None:
        h_prev = ad.Tensor(np.zeros(lead + (d_h,)))
        c_prev = h_prev
    else:
        h_prev, c_prev = prev
    x = ad.concat([h_prev, f], axis=-1)
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"cell_step: input width {x.shape[-1]} vs gate weights {W.shape}")
    vec = x.ndim == 1
    if vec:
        x = ad.reshape(x, (1, x.shape[0]))
    z = ad.add(ad.matmul(x, W), b)
    g = ad.sigmoid(z[:, 0:d_h])
    i = ad.sigmoid(z[:, d_h:2 * d_h])
    o = ad.sigmoid(z[:, 2 * d_h:3 * d_h])
    c_tilde = ad.tanh(z[:, 3 * d_h:4 * d_h])
    if vec:
        g, i, o, c_tilde = (ad.reshape(t, (d_h,)) for t in (g, i, o, c_tilde))
    c = ad.add(ad.mul(g, c_prev), ad.mul(i, c_tilde))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def output_logit(h, W2, b2):
    x = h if h.ndim > 1 else ad.reshape(h, (1, h.shape[0]))
    z = ad.add(ad.matmul(x, W2), b2)
    return ad.reshape(z, (z.shape[0],)) if h.ndim > 1 else ad.reshape(z, (1,))


def predict(h, W2, b2):
    """Probability of a correct answer from the hidden state."""
    return ad.sigmoid(output_logit(h, W2, b2))


@dataclass
class Carry:
    """State handed from one window of a long sequence to the next."""
    value_matrix: ad.Tensor
    hops: list
    offset: int = 0


@dataclass
class BatchResult:
    logits: ad.Tensor          # (B, T)
    attention: np.ndarray      # (B, T, N)
    identities: np.ndarray     # (B, T, N) int8
    carry: Carry

    @property
    def probs(self):
        return 1.0 / (1.0 + np.exp(-self.logits.data))


def encode_batch(questions, answers):
    """Pad ragged question/answer lists into (B, T) arrays plus a mask.

    Padding uses question id 0 and answer 0.
    """
    B = len(questions)
    T = max((len(q) for q in questions), default=0)
    q = np.zeros((B, T), dtype=np.int64)
    y = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    for b, (qs, ys) in enumerate(zip(questions, answers)):
        if len(qs) != len(ys):
            raise InputError(f"sequence {b}: {len(qs)} questions but {len(ys)} answers")
        q[b, :len(qs)] = qs
        y[b, :len(ys)] = ys
        mask[b, :len(qs)] = True
    return q, y, mask


def run_batch(params, q, y, mask, ranges=DEFAULT_RANGES, carry=None, observer=None):
    """SKVMN forward over a padded batch of sequences, lock-step in time.

    Per step: embed, attend, read, summarise, hop lookup, LSTM cell, predict;
    then store the hop state and write (f_t, y_t) to the value matrix. The
    answer y_t is only consumed by the write, after p_t is produced.

    ``observer(t, info)`` is called at every step before the write with the
    tensors of that step; used for knowledge-state probes.
    """
    B, T = q.shape
    num_questions = params["A"].shape[0]
    lstm = LstmParams.from_store(params)
    q_safe = np.where(mask, q, 1)
    kvmem._check_questions(q_safe, num_questions)
    kvmem._check_answers(y)

    if carry is None:
        value = params["M_v0"]
        hops = [HopState() for _ in range(B)]
        offset = 0
    else:
        value, hops, offset = carry.value_matrix, carry.hops, carry.offset
    d_h = lstm.hidden_dim
    zeros_h = ad.Tensor(np.zeros((B, d_h)))

    logits, atts, idents = [], [], []
    for t in range(T):
        k = kvmem.embed_question(params["A"], q_safe[:, t])
        w = kvmem.attention(k, params["M_k"])
        r = kvmem.read(w, value)
        f = kvmem.summary(r, k, params["W_1"], params["b_1"])
        codes = identity_vector(w.data, ranges)

        sources, which = [], np.full(B, -1, dtype=np.int64)
        slot_of = {}
        for b in range(B):
            found = hops[b].lookup(codes[b])
            if found is None:
                continue
            key = id(found[0])
            if key not in slot_of:
                slot_of[key] = len(sources)
                sources.append(found)
            which[b] = slot_of[key]
        if sources:
            h_prev = ad.gather_steps([s[0] for s in sources], which, (B, d_h))
            c_prev = ad.gather_steps([s[1] for s in sources], which, (B, d_h))
        else:
            h_prev = c_prev = zeros_h

        h, c = cell_step(f, (h_prev, c_prev), lstm)
        z = output_logit(h, params["W_2"], params["b_2"])
        logits.append(ad.reshape(z, (B, 1)))
        atts.append(w.data)
        idents.append(codes)

        if observer is not None:
            observer(t, {"k": k, "w": w, "value": value, "prev": (h_prev, c_prev),
                         "lstm": lstm, "codes": codes})

        for b in range(B):
            if mask[b, t]:
                hops[b].store(codes[b], h, c, offset + t)
        v = kvmem.write_vector(f, y[:, t], params["B"])
        value = kvmem.write(value, w, v, params["W_e"], params["b_e"],
                            params["W_a"], params["b_a"])

    out = ad.concat(logits, axis=1) if logits else ad.Tensor(np.zeros((B, 0)))
    return BatchResult(
        logits=out,
        attention=np.stack(atts, axis=1) if atts else np.zeros((B, 0, params["M_k"].shape[0])),
        identities=np.stack(idents, axis=1) if idents else np.zeros((B, 0, params["M_k"].shape[0]), np.int8),
        carry=Carry(value, hops, offset + T),
    )


def detach_carry(carry):
    """Cut the graph between windows: values are kept, gradients stop here."""
    hops = []
    cache = {}
    for state in carry.hops:
        fresh = HopState()
        for key, (h, c, step) in sorted(state.items(), key=lambda kv: kv[1][2]):
            if id(h) not in cache:
                cache[id(h)] = h.detach()
            if id(c) not in cache:
                cache[id(c)] = c.detach()
            fresh._entries[key] = (cache[id(h)], cache[id(c)], step)
            fresh._last_step = step
        hops.append(fresh)
    return Carry(carry.value_matrix.detach(), hops, carry.offset)


def run_sequence(exercises, params, ranges=DEFAULT_RANGES):
    """Probabilities p_1..p_T for one student's exercises [(q, y), ...]."""
    if len(exercises) < 1:
        raise InputError("run_sequence needs at least one exercise")
    qs = [int(e[0]) for e in exercises]
    ys = [int(e[1]) for e in exercises]
    q, y, mask = encode_batch([qs], [ys])
    res = run_batch(params, q, y, mask, ranges)
    return ad.sigmoid(ad.reshape(res.logits, (len(qs),)))
