"""Uncertainty, contrastive distillation and task losses.

The plain-numpy functions (``entropy``, ``infonce_loss``, ``task_loss``) are
the reference definitions; ``infonce_rows`` and ``distill_loss`` are the
differentiable versions used during training.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .chain import chain_edges
from .student import edge_reps, project

PROB_EPS = 1e-12


def entropy(probs) -> float:
    """Natural-log entropy with 0 * log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability distribution: {p}")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)) + 0.0)


def entropies(probs: np.ndarray) -> np.ndarray:
    """Row-wise ``entropy`` for an ``(n, B)`` probability matrix."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1) + 0.0


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm vector in similarity")
    return float(np.dot(a, b) / (na * nb))


def infonce_loss(teacher_vec, student_batch, match_index: int, delta: float) -> float:
    """-log softmax_j(cos(T, s_j) / delta) evaluated at ``match_index``.

    The denominator runs over the whole batch, the match included.
    """
    student_batch = [np.asarray(s, dtype=np.float64) for s in student_batch]
    if len(student_batch) < 2:
        raise ValueError("InfoNCE needs at least two candidates")
    if not 0 <= match_index < len(student_batch):
        raise IndexError("match_index out of range")
    if delta <= 0:
        raise ValueError("temperature must be positive")
    t = np.asarray(teacher_vec, dtype=np.float64)
    logits = np.array([_cos(t, s) for s in student_batch]) / delta
    m = logits.max()
    lse = m + np.log(np.sum(np.exp(logits - m)))
    return float(max(0.0, lse - logits[match_index]))


def task_loss(p_miscite, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(p_miscite, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("task loss over an empty edge set")
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def infonce_rows(teachers: np.ndarray, students, delta: float):
    """Per-teacher InfoNCE where teacher i matches student i; shape ``(n,)``."""
    t_hat = ag.Tensor(teachers / np.linalg.norm(teachers, axis=1, keepdims=True))
    s_hat = ag.normalize_rows(students)
    logits = ag.scale(ag.matmul(t_hat, ag.transpose(s_hat)), 1.0 / delta)
    return ag.cross_entropy_rows(logits, np.arange(teachers.shape[0]))


def hop_student_vectors(model, states, graph, traces, edge_matrix, h, P):
    """Projected hop-h student vectors, one row per trace.

    Each row is the mean of layer-h edge representations over the chain edges
    joining hop h-1 and hop h (the root edge alone for h = 1).
    """
    all_edges, segs = [], []
    for i, tr in enumerate(traces):
        ce = chain_edges(graph, tr.chain, h)
        all_edges.extend(ce)
        segs.extend([i] * len(ce))
    reps = edge_reps(model, states, all_edges, edge_matrix, h, P)
    pooled = ag.segment_mean(reps, np.asarray(segs), len(traces))
    return project(model, pooled, h, P)


def distill_loss(model, traces, states, graph, edge_matrix, lambdas, delta, P=None):
    """sum_h lambda_h * mean over the batch of hop-h InfoNCE.

    Traces whose chain is shorter than h contribute zero at hop h; a hop with
    fewer than two contributing traces (no in-batch negatives) is skipped.
    Returns ``(loss tensor, {hop: unweighted hop loss})``.
    """
    traces = list(traces)
    B = len(traces)
    terms, per_hop = [], {}
    for h in range(1, model.K + 1):
        lam = float(lambdas[h - 1])
        members = [t for t in traces if t.k_eff >= h]
        if lam == 0.0 or len(members) < 2:
            continue
        students = hop_student_vectors(model, states, graph, members, edge_matrix, h, P)
        teachers = np.stack([t.teacher_vectors[h - 1] for t in members])
        hop_loss = ag.scale(ag.total(infonce_rows(teachers, students, delta)), 1.0 / B)
        per_hop[h] = float(hop_loss.data)
        terms.append(ag.scale(hop_loss, lam))
    return ag.add_scalars(terms), per_hop
