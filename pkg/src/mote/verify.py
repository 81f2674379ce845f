"""Score probes against model templates and apply the threshold rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch
from .net import Mlp, forward
from .store import ModelTemplate


@dataclass(frozen=True)
class Decision:
    score: float
    threshold: float
    outcome: str  # "Genuine" | "Impostor"

    def to_dict(self) -> dict:
        return {"score": self.score, "threshold": self.threshold, "outcome": self.outcome}


class Scorer:
    """Eval-mode network for one template, weights pre-converted to float64."""

    def __init__(self, template: ModelTemplate):
        self.identity = template.identity
        self.mlp = Mlp.from_flat(template.weights, template.layer_dims)
        self._w = [w.astype(np.float64) for w in self.mlp.weights]
        self._b = [b.astype(np.float64) for b in self.mlp.biases]

    def logits(self, probes) -> np.ndarray:
        a = np.atleast_2d(np.asarray(probes, dtype=np.float64))
        if a.shape[1] != self._w[0].shape[1]:
            raise DimensionMismatch(f"probe dim {a.shape[1]} != {self._w[0].shape[1]}")
        for w, b in zip(self._w[:-1], self._b[:-1]):
            a = np.maximum(a @ w.T + b, 0.0)
        return (a @ self._w[-1].T + self._b[-1])[:, 0]

    def scores(self, probes) -> np.ndarray:
        return expit(self.logits(probes))


def score(template: ModelTemplate, probe) -> float:
    """Probability that ``probe`` belongs to the template's identity."""
    mlp = Mlp.from_flat(template.weights, template.layer_dims)
    logit, _ = forward(mlp, np.asarray(probe, dtype=np.float64).ravel())
    return float(expit(logit))


def decide(score: float, tau: float) -> Decision:
    if not 0.0 < tau < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return Decision(float(score), float(tau), "Genuine" if score >= tau else "Impostor")
