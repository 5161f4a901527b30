"""Triangular-membership discretisation of attention vectors and hop bookkeeping.

Each attention weight is mapped to low (0), medium (1) or high (2) by the
largest of three triangular memberships. Exercises whose attention vectors map
to the same code tuple are linked: a Hop-LSTM cell continues from the most
recent earlier cell with the same identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

LOW, MEDIUM, HIGH = 0, 1, 2


@dataclass(frozen=True)
class TriangularRange:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a < self.b < self.c):
            raise ConfigError(f"triangular range needs a < b < c, got ({self.a}, {self.b}, {self.c})")

    @classmethod
    def parse(cls, text):
        """Build from ``"a,b,c"``."""
        try:
            a, b, c = (float(t) for t in str(text).split(","))
        except ValueError:
            raise ConfigError(f"expected three comma-separated numbers, got {text!r}") from None
        return cls(a, b, c)

    def as_list(self):
        return [self.a, self.b, self.c]


DEFAULT_RANGES = (
    TriangularRange(-0.5, 0.0, 0.5),
    TriangularRange(0.0, 0.5, 1.0),
    TriangularRange(0.5, 1.0, 1.5),
)


def membership(x, r):
    """max(min((x-a)/(b-a), (c-x)/(c-b)), 0); works elementwise on arrays."""
    if not (r.a < r.b < r.c):
        raise ConfigError(f"degenerate triangular range ({r.a}, {r.b}, {r.c})")
    x = np.asarray(x, dtype=np.float64)
    up = (x - r.a) / (r.b - r.a)
    down = (r.c - x) / (r.c - r.b)
    out = np.maximum(np.minimum(up, down), 0.0)
    return float(out) if out.ndim == 0 else out


def identity_vector(w, ranges=DEFAULT_RANGES):
    """Code each attention component by its strongest membership.

    ``np.argmax`` returns the first maximum, so ties go to the lower code.
    Accepts ``(N,)`` or ``(B, N)`` and returns int8 codes of the same shape.
    """
    w = np.asarray(w, dtype=np.float64)
    scores = np.stack([membership(w, r) for r in ranges], axis=-1)
    return np.argmax(scores, axis=-1).astype(np.int8)


def identity_key(codes):
    return tuple(np.asarray(codes).reshape(-1).tolist())


class HopState:
    """Most recent (hidden, cell, step) seen for each identity vector of one sequence."""

    def __init__(self):
        self._entries = {}
        self._last_step = None

    def __len__(self):
        return len(self._entries)

    def __contains__(self, codes):
        return identity_key(codes) in self._entries

    def lookup(self, codes):
        """Stored (hidden, cell, step) for this identity, or None."""
        return self._entries.get(identity_key(codes))

    def store(self, codes, hidden, cell, step):
        if self._last_step is not None and step <= self._last_step:
            raise ContractError(f"hop step {step} is not after the last stored step {self._last_step}")
        self._entries[identity_key(codes)] = (hidden, cell, step)
        self._last_step = step
        return self

    def items(self):
        return self._entries.items()


def lookup_hop(state, codes):
    found = state.lookup(codes)
    return None if found is None else (found[0], found[1])


def store_hop(state, codes, hidden, cell, step):
    return state.store(codes, hidden, cell, step)


def predecessors(identities):
    """For each position, the index of its hop predecessor (the most recent
    earlier position with the same identity), or -1. Replays the HopState
    bookkeeping used by the sequence layer."""
    state = HopState()
    out = []
    for t, ident in enumerate(identities):
        found = state.lookup(ident)
        out.append(-1 if found is None else found[2])
        state.store(ident, None, None, t)
    return out


def partition(identities):
    """Split positions into hop chains, ordered by first occurrence."""
    chains = []
    chain_of = {}
    for t, prev in enumerate(predecessors(identities)):
        if prev < 0:
            chain_of[t] = len(chains)
            chains.append([t])
        else:
            chain_of[t] = chain_of[prev]
            chains[chain_of[t]].append(t)
    return chains
