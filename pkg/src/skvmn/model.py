"""Full SKVMN network: configuration, parameters, forward pass and checkpoints.

Two modes share the memory layer:

* ``skvmn``: summary vector -> Hop-LSTM -> sigmoid output; the write input is
  ``[f_t ; y_t]`` projected by ``B`` of shape ``(d_k + 1) x d_v``.
* ``dkvmn``: the DKVMN baseline; the probability is read straight off the
  summary vector and the write input is a one-hot row of a ``2|Q| x d_v`` table.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import hoplstm, kvmem
from .errors import ConfigError, FormatError
from .kvmem import MemoryConfig
from .seqdep import DEFAULT_RANGES, TriangularRange

MODES = ("skvmn", "dkvmn")
MAGIC = b"SKVMNCK\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DIGEST = 32


@dataclass(frozen=True)
class ModelConfig:
    memory: MemoryConfig
    hidden_dim: int = None
    ranges: tuple = DEFAULT_RANGES
    mode: str = "skvmn"
    max_seq_len: int = 200

    def __post_init__(self):
        if self.hidden_dim is None:
            object.__setattr__(self, "hidden_dim", self.memory.key_dim)
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be positive, got {self.hidden_dim}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_seq_len < 1:
            raise ConfigError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        if len(self.ranges) != 3:
            raise ConfigError("exactly three triangular ranges (low, medium, high) are required")

    @classmethod
    def build(cls, num_questions, num_slots, dim, value_dim=None, **kw):
        mem = MemoryConfig(num_questions, num_slots, dim, value_dim or dim)
        return cls(memory=mem, **kw)

    def to_dict(self):
        m = self.memory
        return {
            "num_questions": m.num_questions,
            "num_slots": m.num_slots,
            "key_dim": m.key_dim,
            "value_dim": m.value_dim,
            "hidden_dim": self.hidden_dim,
            "ranges": [r.as_list() for r in self.ranges],
            "mode": self.mode,
            "max_seq_len": self.max_seq_len,
        }

    @classmethod
    def from_dict(cls, d):
        mem = MemoryConfig(d["num_questions"], d["num_slots"], d["key_dim"], d["value_dim"])
        return cls(memory=mem, hidden_dim=d["hidden_dim"],
                   ranges=tuple(TriangularRange(*r) for r in d["ranges"]),
                   mode=d["mode"], max_seq_len=d["max_seq_len"])


class ParameterStore(dict):
    """Named trainable tensors in a fixed order, plus free-form metadata."""

    def __init__(self, *args, meta=None, **kw):
        super().__init__(*args, **kw)
        self.meta = dict(meta or {})

    def tensors(self):
        return list(self.values())

    def zero_grad(self):
        ad.zero_grad(self.values())

    def count(self):
        return int(sum(t.data.size for t in self.values()))

    def copy(self):
        return ParameterStore({k: ad.Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)
                               for k, v in self.items()}, meta=self.meta)

    def same_as(self, other):
        """Bitwise equality of names, shapes and values."""
        if list(self) != list(other):
            return False
        return all(self[k].data.shape == other[k].data.shape
                   and self[k].data.tobytes() == other[k].data.tobytes() for k in self)


def param_shapes(config):
    """(name, shape, init) for every parameter, in storage order."""
    m = config.memory
    Q, N, dk, dv, dh = m.num_questions, m.num_slots, m.key_dim, m.value_dim, config.hidden_dim
    write_rows = 2 * Q if config.mode == "dkvmn" else dk + 1
    shapes = [
        ("A", (Q, dk), "gauss"),
        ("B", (write_rows, dv), "gauss"),
        ("M_k", (N, dk), "gauss"),
        ("M_v0", (N, dv), "gauss"),
        ("W_1", (dv + dk, dk), "glorot"),
        ("b_1", (dk,), "zeros"),
        ("W_e", (dv, dv), "glorot"),
        ("b_e", (dv,), "zeros"),
        ("W_a", (dv, dv), "glorot"),
        ("b_a", (dv,), "zeros"),
    ]
    if config.mode == "skvmn":
        for g in hoplstm.GATE_NAMES:
            shapes.append((f"W_{g}", (dh + dk, dh), "glorot"))
        for g in hoplstm.GATE_NAMES:
            shapes.append((f"b_{g}", (dh,), "zeros"))
        shapes.append(("W_2", (dh, 1), "glorot"))
    else:
        shapes.append(("W_2", (dk, 1), "glorot"))
    shapes.append(("b_2", (1,), "zeros"))
    return shapes


def parameter_count(config):
    return int(sum(np.prod(s) for _, s, _ in param_shapes(config)))


def glorot_bound(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config, seed=0, sigma=0.1):
    """Gaussian N(0, sigma) for memories and embeddings, Glorot uniform for
    layer weights, zero biases. Fully determined by ``seed``."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    store = ParameterStore(meta={"config": config.to_dict(), "seed": seed, "sigma": sigma})
    for name, shape, kind in param_shapes(config):
        if kind == "gauss":
            data = rng.normal(0.0, sigma, size=shape)
        elif kind == "glorot":
            bound = glorot_bound(*shape)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        store[name] = ad.Tensor(data, requires_grad=True, name=name)
    return store


def run_dkvmn_batch(params, q, y, mask, carry=None):
    """DKVMN forward: p_t = sigmoid(W_2^T f_t + b_2), one-hot write input."""
    B, T = q.shape
    num_questions = params["A"].shape[0]
    q_safe = np.where(mask, q, 1)
    value = params["M_v0"] if carry is None else carry.value_matrix
    offset = 0 if carry is None else carry.offset
    logits, atts = [], []
    for t in range(T):
        k = kvmem.embed_question(params["A"], q_safe[:, t])
        w = kvmem.attention(k, params["M_k"])
        r = kvmem.read(w, value)
        f = kvmem.summary(r, k, params["W_1"], params["b_1"])
        z = hoplstm.output_logit(f, params["W_2"], params["b_2"])
        logits.append(ad.reshape(z, (B, 1)))
        atts.append(w.data)
        v = kvmem.write_vector_onehot(q_safe[:, t], y[:, t], params["B"], num_questions)
        value = kvmem.write(value, w, v, params["W_e"], params["b_e"],
                            params["W_a"], params["b_a"])
    N = params["M_k"].shape[0]
    out = ad.concat(logits, axis=1) if logits else ad.Tensor(np.zeros((B, 0)))
    att = np.stack(atts, axis=1) if atts else np.zeros((B, 0, N))
    return hoplstm.BatchResult(out, att, np.zeros(att.shape, np.int8),
                               hoplstm.Carry(value, [], offset + T))


def run_batch(params, config, q, y, mask, carry=None, observer=None):
    if config.mode == "dkvmn":
        return run_dkvmn_batch(params, q, y, mask, carry)
    return hoplstm.run_batch(params, q, y, mask, config.ranges, carry, observer)


def _as_pairs(seq):
    exercises = getattr(seq, "exercises", seq)
    return ([int(e[0]) for e in exercises], [int(e[1]) for e in exercises])


def forward(batch, params, config):
    """Per-sequence probability arrays for a list of sequences.

    Each sequence is an ``ExerciseSequence`` or a list of ``(q, y)`` pairs.
    """
    if len(batch) == 0:
        return []
    pairs = [_as_pairs(s) for s in batch]
    q, y, mask = hoplstm.encode_batch([p[0] for p in pairs], [p[1] for p in pairs])
    res = run_batch(params, config, q, y, mask)
    probs = res.probs
    return [probs[b, :len(pairs[b][0])].copy() for b in range(len(batch))]


# -- checkpoints ------------------------------------------------------------

def save(params, path, meta=None):
    """Write the store as: prefix (magic, version, header length), JSON header,
    little-endian float64 payload, SHA-256 of everything before it."""
    header_meta = dict(params.meta)
    if meta:
        header_meta.update(meta)
    table, offset, chunks = [], 0, []
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": header_meta, "tensors": table}, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    return loads(blob)


def loads(blob):
    if len(blob) < _PREFIX.size:
        raise FormatError("file too short for checkpoint prefix", offset=len(blob))
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError("not an SKVMN checkpoint (bad magic)", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}",
                          offset=8)
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise FormatError("truncated header", offset=len(blob))
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", getattr(exc, "start", 0))
        raise FormatError(f"corrupt header: {exc}", offset=start + pos) from None
    data_start = start + header_len
    payload = sum(e["nbytes"] for e in header["tensors"])
    expected = data_start + payload + _DIGEST
    if len(blob) != expected:
        raise FormatError(f"checkpoint is {len(blob)} bytes, header implies {expected}",
                          offset=min(len(blob), expected))
    body = blob[:-_DIGEST]
    if hashlib.sha256(body).digest() != blob[-_DIGEST:]:
        raise FormatError("checksum mismatch", offset=len(body))
    store = ParameterStore(meta=header["meta"])
    for entry in header["tensors"]:
        lo = data_start + entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=entry["nbytes"] // 8, offset=lo)
        arr = arr.astype(np.float64).reshape(entry["shape"])
        store[entry["name"]] = ad.Tensor(arr, requires_grad=True, name=entry["name"])
    return store


def config_from_store(store):
    if "config" not in store.meta:
        raise FormatError("checkpoint carries no model config")
    return ModelConfig.from_dict(store.meta["config"])
