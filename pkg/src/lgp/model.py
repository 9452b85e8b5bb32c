"""Forward pass and analytic backward for description-guided prototype scoring.

Per episode: support sentences and the category description are rendered into
prompts and encoded into mean-pooled mask representations.  The description
representation attends over the K support representations to form the class
prototype; each query builds a prototype-specific representation via feature
attention; raw cosines between prototype and attended query are standardized
across the episode's N classes; the multi-label loss compares standardized
scores against the label bits.

Two equivalent routes exist: per-operation functions mirroring the individual
equations (``support_attention``, ``prototype``, ``query_attention``,
``episode_scores``, ``episode_loss``) and a vectorized episode engine
(``forward_episode`` / ``backward_episode``) used by training, evaluation,
and the gradient check.  Tests pin them to each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, ShapeError
from .numerics import (
    DEFAULT_EPS,
    as_matrix,
    as_vector,
    cosine,
    logsumexp,
    mean_over_features,
    mean_over_rows,
    softmax,
    standardize,
)
from .prompts import PromptTemplateSet, RenderedPrompt, render_description


def sentence_rep(encoder, prompt: RenderedPrompt) -> np.ndarray:
    """Mean pooling of the mask-position hidden states."""
    return mean_over_rows(encoder.encode(prompt))


def support_attention(v_c, V) -> np.ndarray:
    """Importance of each support representation under the description.

    softmax of the feature-mean of the row-wise Hadamard product between the
    description representation and the support matrix; identical to
    softmax((1/d) * V @ v_c).
    """
    v_c = as_vector(v_c, "v_c")
    V = as_matrix(V, "V")
    if V.shape[1] != v_c.shape[0]:
        raise ShapeError(f"support matrix width {V.shape[1]} != description dim {v_c.shape[0]}")
    return softmax(mean_over_features(V * v_c[None, :]))


def prototype(a, V) -> np.ndarray:
    """Attention-weighted combination of support representations: r = a @ V."""
    a = as_vector(a, "a")
    V = as_matrix(V, "V")
    if a.shape[0] != V.shape[0]:
        raise ShapeError(f"attention length {a.shape[0]} != support count {V.shape[0]}")
    if abs(float(a.sum()) - 1.0) > 1e-6:
        raise InvalidArgumentError(f"attention weights must sum to 1, got {a.sum()!r}")
    return a @ V


def query_attention(r, v_q) -> np.ndarray:
    """Prototype-specific query representation.

    Feature weights are the softmax over the d components of tanh(r) * v_q;
    the attended representation is those weights times v_q elementwise.
    """
    r = as_vector(r, "r")
    v_q = as_vector(v_q, "v_q")
    if r.shape != v_q.shape:
        raise ShapeError(f"prototype dim {r.shape} != query dim {v_q.shape}")
    w = softmax(np.tanh(r) * v_q)
    return w * v_q


@dataclass(frozen=True)
class ClassBundle:
    """Everything derived for one episode class."""

    label: str
    description: str
    v_c: np.ndarray  # (d,)
    V: np.ndarray  # (K, d)
    a: np.ndarray  # (K,)
    r: np.ndarray  # (d,)


def class_bundle(encoder, provider, templates: PromptTemplateSet, label: str,
                 support_reps) -> ClassBundle:
    """Build a class prototype from its support representations and description."""
    V = as_matrix(support_reps, "support_reps")
    description = provider.get(label)
    desc_prompt = render_description(templates, description, label)
    v_c = sentence_rep(encoder, desc_prompt)
    a = support_attention(v_c, V)
    r = prototype(a, V)
    return ClassBundle(label=label, description=description, v_c=v_c, V=V, a=a, r=r)


@dataclass(frozen=True)
class QueryScore:
    """Scores of one query against the episode's N prototypes."""

    attended: np.ndarray  # (N, d) prototype-specific query representations
    raw_cos: np.ndarray  # (N,)
    mu: float
    sigma: float
    y_hat: np.ndarray  # (N,)


def episode_scores(bundles, v_q, eps: float = DEFAULT_EPS) -> QueryScore:
    """Raw cosines of one query against every prototype, standardized across classes."""
    if not bundles:
        raise InvalidArgumentError("episode needs at least one class")
    v_q = as_vector(v_q, "v_q")
    attended = []
    raw = []
    for bundle in bundles:
        v_iq = query_attention(bundle.r, v_q)
        attended.append(v_iq)
        raw.append(cosine(bundle.r, v_iq))
    raw = np.asarray(raw)
    y_hat, mu, sigma = standardize(raw, eps)
    return QueryScore(attended=np.stack(attended), raw_cos=raw, mu=mu, sigma=sigma, y_hat=y_hat)


def query_loss(y_hat, labels) -> float:
    """Multi-label loss of one query: -(1/N) sum_i y_i (yhat_i - logsumexp(yhat))."""
    y_hat = as_vector(y_hat, "y_hat")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"label vector {y.shape} != score vector {y_hat.shape}")
    lse = logsumexp(y_hat)
    n = y_hat.shape[0]
    return float(-(y * (y_hat - lse)).sum() / n)


def episode_loss(scores, labels) -> float:
    """Mean of the per-query losses over the episode's query set."""
    if len(scores) != len(labels):
        raise ShapeError(f"{len(scores)} score vectors vs {len(labels)} label vectors")
    if not scores:
        raise InvalidArgumentError("episode needs at least one query")
    return float(np.mean([query_loss(s, y) for s, y in zip(scores, labels)]))


# ---------------------------------------------------------------------------
# Vectorized episode engine
# ---------------------------------------------------------------------------


@dataclass
class EpisodeForward:
    """Record of one episode forward pass; inputs plus every intermediate."""

    V: np.ndarray  # (N, K, d) support representations
    vc: np.ndarray  # (N, d) description representations
    vq: np.ndarray  # (Q, d) query representations
    eps: float
    a: np.ndarray  # (N, K) support attention
    r: np.ndarray  # (N, d) prototypes
    t: np.ndarray  # (N, d) tanh(r)
    w: np.ndarray  # (Q, N, d) query feature attention
    g: np.ndarray  # (Q, N, d) attended query representations
    r_norm: np.ndarray  # (N,)
    g_norm: np.ndarray  # (Q, N)
    cos: np.ndarray  # (Q, N)
    mu: np.ndarray  # (Q,)
    sigma: np.ndarray  # (Q,)
    y_hat: np.ndarray  # (Q, N)


def _softmax_last(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward_episode(V, vc, vq, eps: float = DEFAULT_EPS) -> EpisodeForward:
    """Vectorized forward over all N classes and Q queries of one episode."""
    V = np.asarray(V, dtype=np.float64)
    vc = np.asarray(vc, dtype=np.float64)
    vq = np.asarray(vq, dtype=np.float64)
    if V.ndim != 3 or vc.ndim != 2 or vq.ndim != 2:
        raise ShapeError(
            f"expected V (N,K,d), vc (N,d), vq (Q,d); got {V.shape}, {vc.shape}, {vq.shape}"
        )
    n, k, d = V.shape
    if vc.shape != (n, d) or vq.shape[1] != d:
        raise ShapeError(f"inconsistent dims: V {V.shape}, vc {vc.shape}, vq {vq.shape}")

    s = np.einsum("nkd,nd->nk", V, vc) / d
    a = _softmax_last(s)
    r = np.einsum("nk,nkd->nd", a, V)
    t = np.tanh(r)
    z = t[None, :, :] * vq[:, None, :]
    w = _softmax_last(z)
    g = w * vq[:, None, :]

    r_norm = np.linalg.norm(r, axis=1)
    g_norm = np.linalg.norm(g, axis=2)
    if np.any(r_norm == 0.0):
        raise DegenerateInputError("zero-norm prototype in episode forward")
    if np.any(g_norm == 0.0):
        raise DegenerateInputError("zero-norm attended query representation")
    cos = np.einsum("nd,qnd->qn", r, g) / (r_norm[None, :] * g_norm)

    mu = cos.mean(axis=1)
    sigma = np.sqrt(((cos - mu[:, None]) ** 2).mean(axis=1))
    denom = np.maximum(sigma, eps)
    y_hat = (cos - mu[:, None]) / denom[:, None]

    return EpisodeForward(
        V=V, vc=vc, vq=vq, eps=eps, a=a, r=r, t=t, w=w, g=g,
        r_norm=r_norm, g_norm=g_norm, cos=cos, mu=mu, sigma=sigma, y_hat=y_hat,
    )


def loss_from_forward(fwd: EpisodeForward, labels) -> float:
    y = _labels_array(fwd, labels)
    n = fwd.y_hat.shape[1]
    m = fwd.y_hat.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(fwd.y_hat - m).sum(axis=1, keepdims=True)))[:, 0]
    per_query = -(y * (fwd.y_hat - lse[:, None])).sum(axis=1) / n
    return float(per_query.mean())


def _labels_array(fwd: EpisodeForward, labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != fwd.y_hat.shape:
        raise ShapeError(f"labels {y.shape} must match scores {fwd.y_hat.shape}")
    return y


@dataclass
class EpisodeGradients:
    """Loss gradients w.r.t. every input representation of an episode."""

    dV: np.ndarray  # (N, K, d)
    dvc: np.ndarray  # (N, d)
    dvq: np.ndarray  # (Q, d)


def backward_episode(fwd: EpisodeForward, labels) -> EpisodeGradients:
    """Exact reverse-mode gradients of the episode loss w.r.t. V, vc, and vq."""
    y = _labels_array(fwd, labels)
    q_count, n = fwd.y_hat.shape
    d = fwd.V.shape[2]

    # loss -> standardized scores
    p = _softmax_last(fwd.y_hat)
    positives = y.sum(axis=1, keepdims=True)
    gy = -(y - positives * p) / (n * q_count)

    # standardized scores -> raw cosines
    g_cos = np.empty_like(gy)
    for qi in range(q_count):
        gyq = gy[qi]
        if fwd.sigma[qi] > fwd.eps:
            yh = fwd.y_hat[qi]
            g_cos[qi] = (gyq - gyq.mean() - yh * np.mean(gyq * yh)) / fwd.sigma[qi]
        else:
            g_cos[qi] = (gyq - gyq.mean()) / fwd.eps

    # raw cosines -> prototypes and attended queries
    rn = fwd.r_norm[None, :, None]
    gn = fwd.g_norm[:, :, None]
    r_b = fwd.r[None, :, :]
    c_b = fwd.cos[:, :, None]
    gc = g_cos[:, :, None]
    dr_from_cos = (gc * (fwd.g / (rn * gn) - c_b * r_b / rn**2)).sum(axis=0)
    dg = gc * (r_b / (rn * gn) - c_b * fwd.g / gn**2)

    # attended query -> feature attention, prototype, and raw query
    vq_b = fwd.vq[:, None, :]
    dw = dg * vq_b
    dz = fwd.w * (dw - (dw * fwd.w).sum(axis=2, keepdims=True))
    dvq = (dg * fwd.w + dz * fwd.t[None, :, :]).sum(axis=1)
    dt = (dz * vq_b).sum(axis=0)
    dr = dr_from_cos + dt * (1.0 - fwd.t**2)

    # prototype -> support attention and supports
    da = np.einsum("nd,nkd->nk", dr, fwd.V)
    dV = fwd.a[:, :, None] * dr[:, None, :]

    # support attention -> pre-softmax scores -> supports and descriptions
    ds = fwd.a * (da - (da * fwd.a).sum(axis=1, keepdims=True))
    dV += ds[:, :, None] * fwd.vc[:, None, :] / d
    dvc = np.einsum("nk,nkd->nd", ds, fwd.V) / d

    return EpisodeGradients(dV=dV, dvc=dvc, dvq=dvq)


# ---------------------------------------------------------------------------
# Episode representations through an encoder
# ---------------------------------------------------------------------------


@dataclass
class EpisodeBatch:
    """Rendered prompts and stacked representations for one episode."""

    classes: tuple
    descriptions: tuple  # description text per class
    support_prompts: list  # (N, K) nested
    description_prompts: list  # N
    query_prompts: list  # Q
    V: np.ndarray  # (N, K, d)
    vc: np.ndarray  # (N, d)
    vq: np.ndarray  # (Q, d)
    labels: np.ndarray  # (Q, N) label bits


def encode_episode(encoder, provider, templates: PromptTemplateSet, episode) -> EpisodeBatch:
    """Render and encode every prompt an episode needs."""
    from .prompts import render_query, render_support

    support_prompts = []
    support_reps = []
    for cls, group in zip(episode.classes, episode.support):
        row_prompts = [render_support(templates, item.sentence.text, cls) for item in group]
        support_prompts.append(row_prompts)
        support_reps.append([sentence_rep(encoder, p) for p in row_prompts])

    descriptions = tuple(provider.get(cls) for cls in episode.classes)
    description_prompts = [
        render_description(templates, desc, cls)
        for cls, desc in zip(episode.classes, descriptions)
    ]
    vc = np.stack([sentence_rep(encoder, p) for p in description_prompts])

    query_prompts = [render_query(templates, q.sentence.text) for q in episode.queries]
    vq = np.stack([sentence_rep(encoder, p) for p in query_prompts])

    labels = np.asarray([q.label_bits for q in episode.queries], dtype=np.float64)
    V = np.asarray([[rep for rep in row] for row in support_reps])

    return EpisodeBatch(
        classes=episode.classes,
        descriptions=descriptions,
        support_prompts=support_prompts,
        description_prompts=description_prompts,
        query_prompts=query_prompts,
        V=V,
        vc=vc,
        vq=vq,
        labels=labels,
    )


def export_prototype_records(batch: EpisodeBatch, fwd: EpisodeForward):
    """(label, prototype) pairs in export order for one episode."""
    return [(label, fwd.r[i]) for i, label in enumerate(batch.classes)]
