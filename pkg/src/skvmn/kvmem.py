"""Key-value memory: question embedding, attention, read, summary and write.

Every function accepts either a single example (vectors / an ``N x d`` value
matrix) or a batch with a leading axis (``B x d`` vectors, ``B x N x d`` value
matrices). A shared ``N x d_v`` initial value matrix broadcasts against a
batch on first use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DimensionError, InputError


@dataclass(frozen=True)
class MemoryConfig:
    num_questions: int
    num_slots: int
    key_dim: int
    value_dim: int

    def __post_init__(self):
        for field in ("num_questions", "num_slots", "key_dim", "value_dim"):
            value = getattr(self, field)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{field} must be a positive integer, got {value!r}")


def _check_questions(q, num_questions):
    arr = np.asarray(q, dtype=np.int64)
    if arr.size and (arr.min() < 1 or arr.max() > num_questions):
        bad = arr[(arr < 1) | (arr > num_questions)].reshape(-1)[0]
        raise InputError(f"question id {int(bad)} outside 1..{num_questions}")
    return arr


def _check_answers(y):
    arr = np.asarray(y)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise InputError(f"answers must be 0 or 1, got {arr.reshape(-1).tolist()}")
    return arr.astype(np.float64)


def _as_row(x):
    """Promote a vector to a 1-row matrix; returns (matrix, was_vector)."""
    if x.ndim == 1:
        return ad.reshape(x, (1, x.shape[0])), True
    return x, False


def embed_question(A, q):
    """Row ``q`` (1-based) of the embedding table; q may be an int or an array."""
    arr = _check_questions(q, A.shape[0])
    return ad.take_rows(A, arr - 1)


def attention(k, key_matrix):
    """Softmax over slots of the inner products between ``k`` and each key row."""
    if k.shape[-1] != key_matrix.shape[-1]:
        raise DimensionError(f"attention: key {k.shape} vs key matrix {key_matrix.shape}")
    k2, vec = _as_row(k)
    w = ad.softmax(ad.matmul(k2, ad.transpose(key_matrix)))
    return ad.reshape(w, (w.shape[-1],)) if vec else w


def read(w, value_matrix):
    """Attention-weighted sum of the value slots."""
    total = w.data.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ContractError(f"attention weights must sum to 1, got {total}")
    w2, vec = _as_row(w)
    n = w2.shape[-1]
    r = ad.matmul(ad.reshape(w2, (w2.shape[0], 1, n)), value_matrix)
    r = ad.reshape(r, (w2.shape[0], r.shape[-1]))
    return ad.reshape(r, (r.shape[-1],)) if vec else r


def summary(r, k, W1, b1):
    """tanh(W1^T [r, k] + b1): mastery of the question's concepts plus question prior."""
    x, vec = _as_row(ad.concat([r, k], axis=-1))
    if x.shape[-1] != W1.shape[0]:
        raise DimensionError(f"summary: input width {x.shape[-1]} vs W1 {W1.shape}")
    f = ad.tanh(ad.add(ad.matmul(x, W1), b1))
    return ad.reshape(f, (f.shape[-1],)) if vec else f


def write_vector(f, y, B):
    """Knowledge-growth vector B^T [f ; y] from the summary and the answer."""
    y = _check_answers(y)
    f2, vec = _as_row(f)
    ycol = ad.Tensor(y.reshape(f2.shape[0], 1))
    x = ad.concat([f2, ycol], axis=-1)
    if x.shape[-1] != B.shape[0]:
        raise DimensionError(f"write_vector: input width {x.shape[-1]} vs B {B.shape}")
    v = ad.matmul(x, B)
    return ad.reshape(v, (v.shape[-1],)) if vec else v


def write_vector_onehot(q, y, B, num_questions):
    """DKVMN-style write input: row (q + y*|Q|) of a 2|Q| x d_v table."""
    q = _check_questions(q, num_questions)
    y = _check_answers(y).astype(np.int64)
    if B.shape[0] != 2 * num_questions:
        raise DimensionError(f"write_vector_onehot: B {B.shape} needs {2 * num_questions} rows")
    return ad.take_rows(B, q - 1 + y * num_questions)


def gates(v, We, be, Wa, ba):
    """Erase (sigmoid) and add (tanh) vectors computed from the write vector."""
    v2, vec = _as_row(v)
    e = ad.sigmoid(ad.add(ad.matmul(v2, We), be))
    a = ad.tanh(ad.add(ad.matmul(v2, Wa), ba))
    if vec:
        return ad.reshape(e, (e.shape[-1],)), ad.reshape(a, (a.shape[-1],))
    return e, a


def apply_gates(value_matrix, w, e, a):
    """M'(i) = M(i) * (1 - w(i) e) + w(i) a, returned as a new tensor."""
    if w.ndim == 1:
        wcol = ad.reshape(w, (w.shape[0], 1))
        erow = ad.reshape(e, (1, e.shape[0]))
        arow = ad.reshape(a, (1, a.shape[0]))
    else:
        wcol = ad.reshape(w, (w.shape[0], w.shape[1], 1))
        erow = ad.reshape(e, (e.shape[0], 1, e.shape[1]))
        arow = ad.reshape(a, (a.shape[0], 1, a.shape[1]))
    erased = ad.mul(value_matrix, ad.sub(1.0, ad.mul(wcol, erow)))
    return ad.add(erased, ad.mul(wcol, arow))


def write(value_matrix, w, v, We, be, Wa, ba):
    e, a = gates(v, We, be, Wa, ba)
    return apply_gates(value_matrix, w, e, a)


class KeyValueMemory:
    """A static key matrix shared by all students plus one student's value matrix.

    ``value_matrix`` starts as the trainable ``initial_value`` and is replaced by
    a fresh tensor on each write; the key matrix is never touched.
    """

    def __init__(self, key_matrix, initial_value):
        if key_matrix.shape[0] != initial_value.shape[0]:
            raise DimensionError(
                f"key matrix {key_matrix.shape} and value matrix {initial_value.shape} "
                "disagree on the number of slots")
        self.key_matrix = key_matrix
        self.initial_value = initial_value
        self.value_matrix = initial_value

    def reset(self):
        self.value_matrix = self.initial_value

    def attend(self, k):
        return attention(k, self.key_matrix)

    def read(self, w):
        return read(w, self.value_matrix)

    def write(self, w, v, We, be, Wa, ba):
        self.value_matrix = write(self.value_matrix, w, v, We, be, Wa, ba)
        return self.value_matrix
