"""Straight-line numpy forward pass for a single student, without the tape.

Written independently of ``kvmem``/``hoplstm`` so that finite differences
taken through it check both the analytic gradients and the taped forward
computation itself.
"""

import numpy as np


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _tri(x, a, b, c):
    return max(min((x - a) / (b - a), (c - x) / (c - b)), 0.0)


def _codes(w, ranges):
    out = []
    for x in w:
        scores = [_tri(x, r[0], r[1], r[2]) for r in ranges]
        best = 0
        for j in (1, 2):
            if scores[j] > scores[best]:
                best = j
        out.append(best)
    return tuple(out)


def forward(P, questions, answers, ranges, mode="skvmn"):
    """Return (probabilities, identity codes per step). ``P`` maps names to arrays."""
    Q = P["A"].shape[0]
    Mv = P["M_v0"].copy()
    hop = {}
    probs, codes = [], []
    for t, (q, y) in enumerate(zip(questions, answers)):
        k = P["A"][q - 1]
        w = _softmax(np.array([k @ P["M_k"][i] for i in range(P["M_k"].shape[0])]))
        r = np.zeros(Mv.shape[1])
        for i in range(len(w)):
            r += w[i] * Mv[i]
        f = np.tanh(np.concatenate([r, k]) @ P["W_1"] + P["b_1"])
        if mode == "skvmn":
            d = _codes(w, ranges)
            codes.append(d)
            dh = P["W_g"].shape[1]
            h_prev, c_prev = hop.get(d, (np.zeros(dh), np.zeros(dh)))
            x = np.concatenate([h_prev, f])
            g = _sig(x @ P["W_g"] + P["b_g"])
            i_ = _sig(x @ P["W_i"] + P["b_i"])
            o = _sig(x @ P["W_o"] + P["b_o"])
            c_tilde = np.tanh(x @ P["W_c"] + P["b_c"])
            c = g * c_prev + i_ * c_tilde
            h = o * np.tanh(c)
            hop[d] = (h, c)
            p = _sig(h @ P["W_2"][:, 0] + P["b_2"][0])
            v = np.concatenate([f, [float(y)]]) @ P["B"]
        else:
            p = _sig(f @ P["W_2"][:, 0] + P["b_2"][0])
            v = P["B"][q - 1 + y * Q]
        probs.append(p)
        e = _sig(v @ P["W_e"] + P["b_e"])
        a = np.tanh(v @ P["W_a"] + P["b_a"])
        new = np.empty_like(Mv)
        for i in range(Mv.shape[0]):
            new[i] = Mv[i] * (1.0 - w[i] * e) + w[i] * a
        Mv = new
    return np.array(probs), codes


def cross_entropy(probs, answers):
    y = np.asarray(answers, dtype=np.float64)
    return float(-np.sum(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs)))
