"""Supervised cross-entropy, confidence-gated character-level consistency,
and the weighted overall training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KL_FLOOR = 1e-12  # inside the log, against exactly-zero probabilities


def kl_divergence(p, q, floor=KL_FLOOR):
    """KL(p || q) between two probability vectors, numpy values only."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(p * (np.log(np.maximum(p, floor)) - np.log(np.maximum(q, floor)))))


def ce_loss(trace_tf, labels):
    """Mean negative log-likelihood of the forced tokens, EOS step included."""
    labels = list(labels)
    if len(labels) != trace_tf.length:
        raise ValueError(f"ce_loss: trace length {trace_tf.length} != labels length {len(labels)}")
    if labels != trace_tf.tokens:
        raise ValueError("ce_loss: trace was not produced by forcing these labels")
    total = trace_tf.chosen_log_probs[0]
    for lp in trace_tf.chosen_log_probs[1:]:
        total = ad.add(total, lp)
    return ad.mul(total, -1.0 / len(labels))


def ccr_loss(teacher_trace_weak, student_trace_strong, tau):
    """Per-step KL(teacher || student), gated by teacher confidence.

    Teacher distributions are detached constants; at or below the confidence
    threshold the loss is a plain zero with no graph attached, so gated-off
    samples contribute bit-zero gradients.
    """
    if teacher_trace_weak.length != student_trace_strong.length:
        raise ValueError(
            f"ccr_loss: teacher length {teacher_trace_weak.length} != student length {student_trace_strong.length}"
        )
    if teacher_trace_weak.confidence <= tau:
        return ad.constant(0.0)
    terms = []
    for p_teacher, student_logp in zip(teacher_trace_weak.probs, student_trace_strong.log_probs):
        p_hat = p_teacher.data
        entropy = float(np.sum(p_hat * np.log(np.maximum(p_hat, KL_FLOOR))))
        cross = ad.mul(ad.constant(p_hat), student_logp).sum()
        terms.append(ad.sub(ad.constant(entropy), cross))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


@dataclass
class LossBreakdown:
    """Scalar values of each objective component plus the weighted total."""

    ce: float
    ccr: float
    wvcr: float
    scst: float
    total: float
    gate_pass_fraction: float


def total_loss(ce, ccr, wvcr, scst, lambda1, lambda2, lambda3, gate_pass_fraction=0.0):
    """Weighted sum of the four components.

    Components may be None (disabled), which is treated as zero and keeps the
    corresponding metrics column at exactly zero. Returns (tensor, breakdown).
    """
    for name, lam in (("lambda1", lambda1), ("lambda2", lambda2), ("lambda3", lambda3)):
        if lam < 0:
            raise ValueError(f"total_loss: {name} must be non-negative, got {lam}")
    total = ce
    for term, lam in ((ccr, lambda1), (wvcr, lambda2), (scst, lambda3)):
        if term is not None and lam != 0.0:
            total = ad.add(total, ad.mul(term, lam))
    breakdown = LossBreakdown(
        ce=ce.item(),
        ccr=0.0 if ccr is None else ccr.item(),
        wvcr=0.0 if wvcr is None else wvcr.item(),
        scst=0.0 if scst is None else scst.item(),
        total=total.item(),
        gate_pass_fraction=gate_pass_fraction,
    )
    return total, breakdown
