"""AUC / ROC and tab-separated analysis exports (knowledge states, question clusters)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from . import hoplstm, kvmem
from .errors import InputError, UndefinedMetricError
from .seqdep import identity_vector


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise InputError(f"{scores.size} scores but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise InputError("labels must be 0 or 1")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    return scores, labels, n_pos, labels.size - n_pos


def auc(scores, labels):
    """Mann-Whitney AUC: P(positive outscores negative), ties count one half."""
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class RocCurve:
    points: list
    auc: float


def roc_curve(scores, labels):
    """ROC points from (0, 0) to (1, 1), one point per distinct threshold."""
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    fp = np.cumsum(~lab)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    area = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(list(zip(fpr.tolist(), tpr.tolist())), area)


def write_roc(curve, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr\ttpr\n")
        for x, y in curve.points:
            fh.write(f"{x:.6f}\t{y:.6f}\n")


def read_table(path):
    """Parse one of our TSV exports back into (header, rows of strings)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split("\t")
    return header, [line.split("\t") for line in lines[1:]]


def knowledge_states(params, config, sequence):
    """T x N concept-state matrix for one student.

    Cell (t, i) is the predicted probability at step t when the attention is
    replaced by a one-hot on slot i: the read returns slot i of the current
    value matrix, which goes through the usual summary and output layers (for
    SKVMN through the LSTM cell with the step's hop predecessor).
    """
    from .model import run_batch  # circular at import time

    qs = [int(e[0]) for e in sequence]
    ys = [int(e[1]) for e in sequence]
    q, y, mask = hoplstm.encode_batch([qs], [ys])
    N = config.memory.num_slots
    rows = []

    def probe(t, info):
        eye = ad.Tensor(np.eye(N))
        k = ad.Tensor(np.repeat(info["k"].data, N, axis=0))
        value = info["value"].data
        value = value[0] if value.ndim == 3 else value
        r = kvmem.read(eye, ad.Tensor(np.broadcast_to(value, (N,) + value.shape).copy()))
        f = kvmem.summary(r, k, params["W_1"], params["b_1"])
        if config.mode == "dkvmn":
            z = hoplstm.output_logit(f, params["W_2"], params["b_2"])
        else:
            h_prev, c_prev = (ad.Tensor(np.repeat(x.data, N, axis=0)) for x in info["prev"])
            h, _ = hoplstm.cell_step(f, (h_prev, c_prev), info["lstm"])
            z = hoplstm.output_logit(h, params["W_2"], params["b_2"])
        rows.append(1.0 / (1.0 + np.exp(-z.data)))

    if config.mode == "dkvmn":
        _dkvmn_probe(params, q, y, mask, probe)
    else:
        run_batch(params, config, q, y, mask, observer=probe)
    return np.array(rows).reshape(len(qs), N)


def _dkvmn_probe(params, q, y, mask, probe):
    # DKVMN runner has no observer hook; replay the memory trajectory here
    num_questions = params["A"].shape[0]
    value = params["M_v0"]
    for t in range(q.shape[1]):
        k = kvmem.embed_question(params["A"], q[:, t])
        w = kvmem.attention(k, params["M_k"])
        probe(t, {"k": k, "w": w, "value": value})
        v = kvmem.write_vector_onehot(q[:, t], y[:, t], params["B"], num_questions)
        value = kvmem.write(value, w, v, params["W_e"], params["b_e"], params["W_a"], params["b_a"])


def export_knowledge_states(params, config, sequence, path):
    states = knowledge_states(params, config, sequence)
    N = states.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["step", "question", "answer"] + [f"slot_{i + 1}" for i in range(N)]) + "\n")
        for t, (e, row) in enumerate(zip(sequence, states)):
            cells = [str(t + 1), str(int(e[0])), str(int(e[1]))] + [f"{v:.6f}" for v in row]
            fh.write("\t".join(cells) + "\n")
    return states


def question_clusters(params, config):
    """Attention vector, identity codes and cluster label for every question."""
    Q = config.memory.num_questions
    k = kvmem.embed_question(params["A"], np.arange(1, Q + 1))
    w = kvmem.attention(k, params["M_k"]).data
    codes = identity_vector(w, config.ranges)
    labels = ["".join(str(int(c)) for c in row) for row in codes]
    return w, codes, labels


def export_question_clusters(params, config, path):
    w, codes, labels = question_clusters(params, config)
    N = w.shape[1]
    header = (["question"] + [f"w_{i + 1}" for i in range(N)]
              + [f"d_{i + 1}" for i in range(N)] + ["cluster"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for q in range(w.shape[0]):
            cells = ([str(q + 1)] + [f"{v:.6f}" for v in w[q]]
                     + [str(int(c)) for c in codes[q]] + [labels[q]])
            fh.write("\t".join(cells) + "\n")
    return w, codes, labels
