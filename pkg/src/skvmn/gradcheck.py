"""Finite-difference check of every parameter gradient on a seeded toy model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import reference
from .model import ModelConfig, init_params, run_batch
from .train import loss_from_logits


@dataclass
class GradcheckReport:
    per_param: dict = field(default_factory=dict)   # name -> max relative error
    worst_param: str = None
    worst_error: float = 0.0
    forward_gap: float = 0.0
    identities: int = 0
    seconds: float = 0.0
    tolerance: float = 1e-4
    skipped: int = 0

    @property
    def passed(self):
        return self.worst_error < self.tolerance and self.forward_gap < 1e-8

    def lines(self):
        out = [f"{name:6s} max_rel_err={err:.3e}" for name, err in self.per_param.items()]
        out.append(f"forward gap vs reference: {self.forward_gap:.3e}")
        out.append(f"distinct identity vectors: {self.identities}")
        if self.skipped:
            out.append(f"elements skipped (identity flip under perturbation): {self.skipped}")
        out.append(f"worst: {self.worst_param} {self.worst_error:.3e} (tolerance {self.tolerance:g})")
        out.append(f"{'PASS' if self.passed else 'FAIL'} in {self.seconds:.2f}s")
        return out


def toy_problem(seed=0, num_questions=6, num_slots=4, dim=5, length=8, mode="skvmn", sigma=1.0):
    """A seeded tiny model and sequence whose identity vectors take >= 2 values.

    The seed is advanced until the sequence spans two or more hop chains.
    """
    config = ModelConfig.build(num_questions, num_slots, dim, mode=mode)
    for s in range(seed, seed + 1000):
        params = init_params(config, seed=s, sigma=sigma)
        rng = np.random.default_rng(s)
        qs = rng.integers(1, num_questions + 1, size=length).tolist()
        ys = rng.integers(0, 2, size=length).tolist()
        _, codes = reference.forward(_arrays(params), qs, ys, _ranges(config), mode)
        if mode != "skvmn" or len(set(codes)) >= 2:
            return config, params, qs, ys
    raise RuntimeError("no seed produced two identity chains")


def _arrays(params):
    return {k: v.data.copy() for k, v in params.items()}


def _ranges(config):
    return [r.as_list() for r in config.ranges]


def analytic_loss_and_grads(params, config, qs, ys):
    q = np.array([qs]); y = np.array([ys]); mask = np.ones_like(q, dtype=bool)
    params.zero_grad()
    with ad.Tape():
        res = run_batch(params, config, q, y, mask)
        loss = loss_from_logits(res.logits, y, mask)
    ad.backward(loss)
    return loss.item(), {k: v.grad.copy() if v.grad is not None else np.zeros_like(v.data)
                         for k, v in params.items()}


def run_gradcheck(seed=0, h=1e-5, tolerance=1e-4, mode="skvmn", **toy):
    started = time.perf_counter()
    config, params, qs, ys = toy_problem(seed, mode=mode, **toy)
    ranges = _ranges(config)
    P = _arrays(params)
    ref_probs, base_codes = reference.forward(P, qs, ys, ranges, mode)
    ref_loss = reference.cross_entropy(ref_probs, ys)
    model_loss, grads = analytic_loss_and_grads(params, config, qs, ys)

    report = GradcheckReport(tolerance=tolerance)
    report.forward_gap = abs(model_loss - ref_loss) / max(abs(ref_loss), 1.0)
    report.identities = len(set(base_codes))
    for name, arr in P.items():
        worst = 0.0
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            p_plus, c_plus = reference.forward(P, qs, ys, ranges, mode)
            flat[j] = orig - h
            p_minus, c_minus = reference.forward(P, qs, ys, ranges, mode)
            flat[j] = orig
            if c_plus != base_codes or c_minus != base_codes:
                report.skipped += 1
                continue
            fd = (reference.cross_entropy(p_plus, ys) - reference.cross_entropy(p_minus, ys)) / (2 * h)
            a = grads[name].reshape(-1)[j]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
        report.per_param[name] = worst
        if worst >= report.worst_error:
            report.worst_error, report.worst_param = worst, name
    report.seconds = time.perf_counter() - started
    return report
