"""Episodic evaluation: per-episode Macro-F1 and one-vs-rest ROC AUC, averaged.

Metrics are computed per episode and then averaged across episodes, never
pooled.  AUC uses the rank formulation of the Mann-Whitney statistic with
average ranks for ties; classes that are all-positive or all-negative among
an episode's queries are skipped, and an episode where every class is
degenerate contributes no AUC (recorded as null, excluded from the mean).
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetricError, InvalidArgumentError
from .inference import ThresholdParams, predict
from .model import encode_episode, forward_episode
from .episodes import episode_seed, sample_episode
from .numerics import DEFAULT_EPS


def macro_f1(preds, golds, n_classes: int) -> float:
    """Mean per-class F1 from query-level confusion counts; 0/0 counts as 0."""
    preds = list(preds)
    golds = list(golds)
    if not preds or len(preds) != len(golds):
        raise InvalidArgumentError(
            f"need equally many predictions and gold vectors, got {len(preds)}/{len(golds)}"
        )
    f1s = []
    for c in range(n_classes):
        tp = fp = fn = 0
        for pred, gold in zip(preds, golds):
            predicted = c in pred
            actual = bool(gold[c])
            if predicted and actual:
                tp += 1
            elif predicted:
                fp += 1
            elif actual:
                fn += 1
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def _rank_auc(scores: np.ndarray, gold: np.ndarray) -> float:
    """One-vs-rest ROC AUC via average ranks (ties count half)."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    pos = gold.astype(bool)
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc(scores, golds, n_classes: int) -> float:
    """Macro one-vs-rest ROC AUC over classes with both positives and negatives."""
    score_mat = np.asarray(scores, dtype=np.float64)
    gold_mat = np.asarray(golds, dtype=np.float64)
    if score_mat.ndim != 2 or score_mat.shape != gold_mat.shape:
        raise InvalidArgumentError(
            f"scores {score_mat.shape} and golds {gold_mat.shape} must be equal 2-D arrays"
        )
    if score_mat.shape[1] != n_classes:
        raise InvalidArgumentError(f"expected {n_classes} classes, got {score_mat.shape[1]}")
    per_class = []
    for c in range(n_classes):
        gold = gold_mat[:, c]
        if gold.min() == gold.max():
            continue  # all-positive or all-negative: undefined, skipped
        per_class.append(_rank_auc(score_mat[:, c], gold))
    if not per_class:
        raise DegenerateMetricError("every class is single-sided; episode AUC undefined")
    return float(np.mean(per_class))


# ---------------------------------------------------------------------------
# Episode evaluation
# ---------------------------------------------------------------------------


@dataclass
class EpisodeOutcome:
    y_hat: np.ndarray  # (Q, N)
    preds: list  # per-query frozensets of class indices
    golds: np.ndarray  # (Q, N)
    f1: float
    auc: float | None


@dataclass(frozen=True)
class EvalProtocol:
    n_way: int = 5
    k_shot: int = 5
    n_query: int = 5
    episodes: int = 600
    seed: int = 0


@dataclass
class Report:
    macro_f1: float
    auc: float | None
    per_episode: list  # (f1, auc-or-None) tuples
    protocol: dict
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "auc": self.auc,
            "episodes": [{"f1": f1, "auc": a} for f1, a in self.per_episode],
            "protocol": self.protocol,
            "seed": self.seed,
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def evaluate_episode(encoder, provider, templates, episode,
                     threshold: ThresholdParams, fallback: str,
                     eps: float = DEFAULT_EPS) -> EpisodeOutcome:
    batch = encode_episode(encoder, provider, templates, episode)
    fwd = forward_episode(batch.V, batch.vc, batch.vq, eps)
    preds = [predict(fwd.y_hat[qi], threshold, fallback).positives
             for qi in range(fwd.y_hat.shape[0])]
    f1 = macro_f1(preds, batch.labels, episode.n_way)
    try:
        episode_auc = auc(fwd.y_hat, batch.labels, episode.n_way)
    except DegenerateMetricError:
        episode_auc = None
    return EpisodeOutcome(y_hat=fwd.y_hat, preds=preds, golds=batch.labels,
                          f1=f1, auc=episode_auc)


def evaluate(encoder, provider, templates, corpus, labels, protocol: EvalProtocol,
             threshold: ThresholdParams, fallback: str = "argmax",
             workers: int = 1, eps: float = DEFAULT_EPS) -> Report:
    """Run the episodic evaluation protocol and aggregate per-episode metrics.

    Deterministic given the protocol seed and the encoder snapshot: episodes
    are derived from per-index sub-seeds and the reduction runs in episode
    order, so ``workers`` only affects wall time.
    """
    # resolve all descriptions up front so worker threads only read the cache
    provider.resolve_all(labels)

    def run_one(index: int) -> EpisodeOutcome:
        rng = np.random.Generator(np.random.PCG64(episode_seed(protocol.seed, index)))
        episode = sample_episode(rng, corpus, labels, protocol.n_way,
                                 protocol.k_shot, protocol.n_query)
        return evaluate_episode(encoder, provider, templates, episode,
                                threshold, fallback, eps)

    indices = range(protocol.episodes)
    if workers <= 1:
        outcomes = [run_one(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, indices))

    per_episode = [(o.f1, o.auc) for o in outcomes]
    f1_mean = float(np.mean([f1 for f1, _ in per_episode]))
    auc_values = [a for _, a in per_episode if a is not None]
    auc_mean = float(np.mean(auc_values)) if auc_values else None
    return Report(
        macro_f1=f1_mean,
        auc=auc_mean,
        per_episode=per_episode,
        protocol={
            "n_way": protocol.n_way,
            "k_shot": protocol.k_shot,
            "n_query": protocol.n_query,
            "episodes": protocol.episodes,
            "alpha": threshold.alpha,
            "beta": threshold.beta,
            "gamma": threshold.gamma,
            "fallback": fallback,
        },
        seed=protocol.seed,
    )
