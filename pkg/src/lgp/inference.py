"""Dynamic-threshold multi-label prediction over standardized scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import as_vector

FALLBACK_NONE = "none"
FALLBACK_ARGMAX = "argmax"


@dataclass(frozen=True)
class ThresholdParams:
    """Coefficients of the dynamic threshold; defaults follow the evaluation protocol."""

    alpha: float = 0.3
    beta: float = 0.7
    gamma: float = 0.7

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"threshold coefficient {name} must be finite")


@dataclass(frozen=True)
class Prediction:
    positives: frozenset  # class indices with score strictly above the threshold
    threshold: float
    fallback_used: bool


def dynamic_threshold(y_hat, params: ThresholdParams) -> float:
    """alpha*mean + beta*std + gamma*max + (1-gamma)*min of the score vector.

    std is the population standard deviation, 0 for a single score.
    """
    y = as_vector(y_hat, "y_hat")
    mean = float(y.mean())
    std = float(np.sqrt(np.mean((y - mean) ** 2)))
    return (
        params.alpha * mean
        + params.beta * std
        + params.gamma * float(y.max())
        + (1.0 - params.gamma) * float(y.min())
    )


def predict(y_hat, params: ThresholdParams, fallback: str = FALLBACK_ARGMAX) -> Prediction:
    """Classes scoring strictly above the dynamic threshold.

    Ties at the threshold are excluded.  When nothing clears it and
    ``fallback`` is "argmax", the top-scoring class is returned with the
    fallback flag set, so evaluation never sees an empty prediction.
    """
    if fallback not in (FALLBACK_NONE, FALLBACK_ARGMAX):
        raise InvalidArgumentError(f"unknown fallback {fallback!r}")
    y = as_vector(y_hat, "y_hat")
    t = dynamic_threshold(y, params)
    positives = {int(i) for i in np.flatnonzero(y > t)}
    fallback_used = False
    if not positives and fallback == FALLBACK_ARGMAX:
        positives = {int(np.argmax(y))}
        fallback_used = True
    return Prediction(positives=frozenset(positives), threshold=t, fallback_used=fallback_used)
