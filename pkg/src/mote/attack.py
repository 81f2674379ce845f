"""Gender inference attack on vector templates and on model templates.

The attacker compares a target against known-gender gallery samples, averages
the comparison scores per gender and predicts the gender with the higher mean.
Against model templates only black-box scores are available.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import EmptyGallery, MissingTruth
from .store import ATTRIBUTES, ModelTemplate
from .verify import Scorer


@dataclass(frozen=True, eq=False)
class AttackGallery:
    female_probes: np.ndarray
    male_probes: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.female_probes, dtype=np.float64))
        m = np.atleast_2d(np.asarray(self.male_probes, dtype=np.float64))
        if f.size == 0 or m.size == 0:
            raise EmptyGallery("gallery needs at least one female and one male probe")
        object.__setattr__(self, "female_probes", f)
        object.__setattr__(self, "male_probes", m)


@dataclass
class AttackResult:
    predictions: dict
    balanced_accuracy: float
    prediction_class_histogram: dict

    @property
    def concentration(self) -> float:
        total = sum(self.prediction_class_histogram.values())
        return max(self.prediction_class_histogram.values()) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "prediction_class_histogram": dict(self.prediction_class_histogram),
            "concentration": self.concentration,
            "predictions": dict(sorted(self.predictions.items())),
        }


def balanced_accuracy(predictions: Mapping[str, str], truth: Mapping[str, str]) -> float:
    """Mean per-class recall over the classes present in ``truth``."""
    missing = [k for k in predictions if k not in truth]
    if missing:
        raise MissingTruth(f"no truth label for {missing[:5]}")
    hits, counts = Counter(), Counter()
    for k, p in predictions.items():
        counts[truth[k]] += 1
        hits[truth[k]] += p == truth[k]
    if not counts:
        return 0.0
    return float(np.mean([hits[c] / counts[c] for c in sorted(counts)]))


def make_gallery(embeddings, attributes_per_row, per_gender: int = 100, seed: int = 0) -> AttackGallery:
    """Seeded sample of ``per_gender`` known-gender probes of each gender."""
    emb = np.asarray(embeddings)
    attrs = np.asarray(attributes_per_row)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x617474]))
    picks = {}
    for g in ATTRIBUTES:
        idx = np.flatnonzero(attrs == g)
        if idx.size == 0:
            raise EmptyGallery(f"no {g} samples available for the gallery")
        picks[g] = np.sort(rng.choice(idx, size=min(per_gender, idx.size), replace=False))
    return AttackGallery(emb[picks["Female"]], emb[picks["Male"]])


def _predict(mean_f: float, mean_m: float) -> str:
    # ties go to the first label
    return "Male" if mean_m > mean_f else "Female"


def _run(targets, compare: Callable, gallery: AttackGallery, truth) -> AttackResult:
    preds = {}
    for ident, target in targets.items():
        preds[ident] = _predict(float(np.mean(compare(target, gallery.female_probes))),
                                float(np.mean(compare(target, gallery.male_probes))))
    hist = {g: 0 for g in ATTRIBUTES}
    hist.update(Counter(preds.values()))
    return AttackResult(preds, balanced_accuracy(preds, truth), hist)


def cosine_similarity(target, probes) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64).ravel()
    p = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    return (p @ t) / (np.linalg.norm(p, axis=1) * np.linalg.norm(t))


def attack_vector_baseline(targets: Mapping[str, np.ndarray], gallery: AttackGallery,
                           true_labels: Mapping[str, str]) -> AttackResult:
    return _run(targets, cosine_similarity, gallery, true_labels)


def attack_mote(templates: Mapping[str, ModelTemplate], gallery: AttackGallery,
                true_labels: Mapping[str, str]) -> AttackResult:
    """Black-box attack: score every gallery probe through each model template."""
    scorers = {k: Scorer(t) for k, t in templates.items()}
    return _run(scorers, lambda sc, probes: sc.scores(probes), gallery, true_labels)
