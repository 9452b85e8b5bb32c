"""Finite-difference verification of the analytic episode backward pass.

The oracle perturbs every coordinate of every input representation, re-runs
the full vectorized forward, and compares central differences against the
analytic gradients.  It deliberately shares nothing with ``backward_episode``
beyond the forward function it differentiates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EpisodeGradients, backward_episode, forward_episode, loss_from_forward
from .numerics import DEFAULT_EPS

REL_ERR_FLOOR = 1e-6  # coordinates below this magnitude are compared absolutely


def random_episode_arrays(rng, n_way: int, k_shot: int, n_query_per_class: int, d: int):
    """Random representations and a label matrix shaped like a sampled episode."""
    q_count = n_way * n_query_per_class
    V = rng.normal(size=(n_way, k_shot, d))
    vc = rng.normal(size=(n_way, d))
    vq = rng.normal(size=(q_count, d))
    labels = np.zeros((q_count, n_way))
    for qi in range(q_count):
        labels[qi, qi % n_way] = 1.0
        # some queries are multi-label
        if rng.random() < 0.3:
            labels[qi, int(rng.integers(n_way))] = 1.0
    return V, vc, vq, labels


def finite_difference_grads(V, vc, vq, labels, eps: float = DEFAULT_EPS,
                            step: float = 1e-5) -> EpisodeGradients:
    """Central finite differences of the episode loss w.r.t. every input coordinate."""

    def loss_at(V_, vc_, vq_):
        return loss_from_forward(forward_episode(V_, vc_, vq_, eps), labels)

    def fd(base, rebuild):
        grad = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = rebuild()
            flat[i] = orig - step
            down = rebuild()
            flat[i] = orig
            grad.reshape(-1)[i] = (up - down) / (2.0 * step)
        return grad

    V = np.array(V, dtype=np.float64)
    vc = np.array(vc, dtype=np.float64)
    vq = np.array(vq, dtype=np.float64)
    dV = fd(V, lambda: loss_at(V, vc, vq))
    dvc = fd(vc, lambda: loss_at(V, vc, vq))
    dvq = fd(vq, lambda: loss_at(V, vc, vq))
    return EpisodeGradients(dV=dV, dvc=dvc, dvq=dvq)


def max_relative_error(analytic: EpisodeGradients, numeric: EpisodeGradients) -> float:
    worst = 0.0
    for a, f in (
        (analytic.dV, numeric.dV),
        (analytic.dvc, numeric.dvc),
        (analytic.dvq, numeric.dvq),
    ):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_ERR_FLOOR)
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


@dataclass
class GradcheckResult:
    episodes: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def run_gradcheck(episodes: int = 100, n_way: int = 5, k_shot: int = 5,
                  n_query_per_class: int = 5, d: int = 16, seed: int = 0,
                  step: float = 1e-5, tolerance: float = 1e-4,
                  eps: float = DEFAULT_EPS) -> GradcheckResult:
    """Compare analytic and finite-difference gradients over random episodes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(episodes):
        V, vc, vq, labels = random_episode_arrays(rng, n_way, k_shot, n_query_per_class, d)
        fwd = forward_episode(V, vc, vq, eps)
        analytic = backward_episode(fwd, labels)
        numeric = finite_difference_grads(V, vc, vq, labels, eps, step)
        worst = max(worst, max_relative_error(analytic, numeric))
    return GradcheckResult(episodes=episodes, max_rel_err=worst, tolerance=tolerance)
