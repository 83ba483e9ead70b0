"""Independent brute-force oracles.

These deliberately share no code with the production implementations: CTC by
exhaustive path enumeration, EER by a naive per-threshold counting sweep.
The finite-difference gradient oracle lives in tensor.finite_diff_check.
They back the test suite and the CLI selfcheck.
"""

from __future__ import annotations

import itertools

import numpy as np


def ctc_collapse(path, blank=0):
    """CTC label collapse: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return tuple(out)


def ctc_loss_enumeration(log_probs, target, blank=0):
    """-log P(target) by summing over every |V|^T alignment path."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T_, V = log_probs.shape
    target = tuple(target)
    total = -np.inf
    for path in itertools.product(range(V), repeat=T_):
        if ctc_collapse(path, blank) != target:
            continue
        lp = sum(log_probs[t, c] for t, c in enumerate(path))
        total = np.logaddexp(total, lp)
    return -total


def eer_sweep_oracle(labels, scores):
    """EER by evaluating FAR/FRR at every candidate threshold and linearly
    interpolating at the sign change of FAR - FRR."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need both positive and negative trials")

    thresholds = sorted(set(scores.tolist()), reverse=True)
    points = [(0.0, 1.0)]  # threshold above every score: reject all
    for th in thresholds:
        far = float(sum(1 for s in neg if s >= th)) / len(neg)
        frr = float(sum(1 for s in pos if s < th)) / len(pos)
        points.append((far, frr))
    points.append((1.0, 0.0))

    for i in range(len(points)):
        far, frr = points[i]
        if far == frr:
            return far
        if far > frr:
            f0, r0 = points[i - 1]
            f1, r1 = points[i]
            t = (r0 - f0) / ((f1 - f0) - (r1 - r0))
            return f0 + t * (f1 - f0)
    raise AssertionError("FAR/FRR never crossed")
