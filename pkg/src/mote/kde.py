"""Identity-normalized residuals, attribute-split Gaussian KDEs, and
synthetic template generation around a single reference embedding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyGrid, EmptyGroup, MissingCentroid, MissingKde, TooFewSamples

LOG_2PI = float(np.log(2.0 * np.pi))


def group_by_identity(embeddings, identities: Sequence[str]) -> dict[str, np.ndarray]:
    emb = np.asarray(embeddings)
    ids = np.asarray(identities)
    return {i: emb[ids == i] for i in dict.fromkeys(identities)}


def compute_centroids(groups: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Arithmetic mean of each identity's embeddings."""
    out = {}
    for ident, x in groups.items():
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or len(x) == 0:
            raise EmptyGroup(f"identity {ident!r} has no embeddings")
        out[ident] = x.mean(axis=0)
    return out


def normalize_residuals(embeddings, identities: Sequence[str], centroids: Mapping[str, np.ndarray],
                        attributes: Mapping[str, str] | None = None):
    """Subtract each row's identity centroid.

    Returns ``(residuals, tags)`` where ``tags`` holds the attribute of each
    row's identity (or ``None`` entries when ``attributes`` is omitted).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    missing = [i for i in dict.fromkeys(identities) if i not in centroids]
    if missing:
        raise MissingCentroid(f"no centroid for identities {missing[:5]}")
    c = np.stack([centroids[i] for i in identities]) if len(identities) else np.zeros_like(emb)
    tags = [attributes[i] if attributes is not None else None for i in identities]
    return emb - c, tags


def default_bandwidth_grid(residuals, size: int = 20, lo: float = 0.05, hi: float = 2.0) -> np.ndarray:
    sigma = float(np.mean(np.std(np.asarray(residuals, dtype=np.float64), axis=0)))
    if not sigma > 0:
        sigma = 1.0
    return np.geomspace(lo * sigma, hi * sigma, size)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _log_density(sq: np.ndarray, n: int, dim: int, h: float) -> np.ndarray:
    return logsumexp(-sq / (2.0 * h * h), axis=1) - np.log(n) - dim * (np.log(h) + 0.5 * LOG_2PI)


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Isotropic product-Gaussian KDE over stored residuals."""

    attribute: str | None
    residuals: np.ndarray
    bandwidth: float
    cv_scores: tuple[float, ...] | None = field(default=None, repr=False)
    bandwidth_grid: tuple[float, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        r = np.ascontiguousarray(self.residuals, dtype=np.float32)
        if r.ndim != 2 or len(r) < 1:
            raise TooFewSamples("a KDE needs at least one residual row")
        if not np.all(np.isfinite(r)):
            raise ValueError("residuals must be finite")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "residuals", r)

    @property
    def dim(self) -> int:
        return self.residuals.shape[1]

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    def log_density(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        r = self.residuals.astype(np.float64)
        out = _log_density(_sq_dists(x, r), self.n, self.dim, self.bandwidth)
        return float(out[0]) if single else out

    def density(self, x):
        return np.exp(self.log_density(x))

    def mean(self) -> np.ndarray:
        return self.residuals.astype(np.float64).mean(axis=0)


def fit_kde(residuals, cv_folds: int = 5, bandwidth_grid=None, attribute: str | None = None,
            seed: int = 0) -> KdeModel:
    """Choose the bandwidth maximizing mean held-out log-density (k-fold CV).

    Rows are put in canonical (lexicographic) order before folds are
    assigned, so the result does not depend on the order they are supplied in.  Ties go to the
    smaller bandwidth.
    """
    x = np.asarray(residuals, dtype=np.float64)
    if x.ndim != 2:
        raise TooFewSamples("residuals must be a 2-d array")
    n, dim = x.shape
    if cv_folds < 2:
        raise ValueError("cv_folds must be >= 2")
    if n < max(2, cv_folds):
        raise TooFewSamples(f"{n} residual rows for {cv_folds}-fold cross-validation")
    # canonical row order makes every reduction below order-independent
    x = x[np.lexsort(x.T[::-1])]
    grid = default_bandwidth_grid(x) if bandwidth_grid is None else np.asarray(bandwidth_grid, float)
    if grid.size == 0:
        raise EmptyGrid("bandwidth grid is empty")
    if np.any(grid <= 0):
        raise ValueError("bandwidths must be positive")
    grid = np.sort(grid)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6B6465]))
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % cv_folds

    total = np.zeros(grid.size)
    for k in range(cv_folds):
        test, train = x[fold_of == k], x[fold_of != k]
        sq = _sq_dists(test, train)
        for gi, h in enumerate(grid):
            total[gi] += _log_density(sq, len(train), dim, h).sum()
    scores = total / n
    best = int(np.argmax(scores))
    return KdeModel(attribute, x, float(grid[best]), tuple(scores.tolist()), tuple(grid.tolist()))


def sample_residuals(model: KdeModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` samples: a random stored residual plus N(0, h^2 I) noise."""
    if count < 0:
        raise ValueError("count must be >= 0")
    idx = rng.integers(0, model.n, size=count)
    noise = rng.standard_normal((count, model.dim)) * model.bandwidth
    return model.residuals[idx].astype(np.float64) + noise


def male_count(b: float, total: int) -> int:
    # Python's round() is round-half-to-even
    return int(round(b * total))


def synth_templates(reference, female_kde: KdeModel | None, male_kde: KdeModel | None, b: float,
                    total: int, rng: np.random.Generator, return_sources: bool = False):
    """Synthesize ``total`` templates as ``reference + residual``.

    ``b`` is the fraction drawn from the male KDE.  With
    ``return_sources=True`` also returns a label array ("Male"/"Female") in
    output order.
    """
    if total < 1:
        raise ValueError("total must be >= 1")
    if not 0.0 <= b <= 1.0:
        raise ValueError("balancing factor must lie in [0, 1]")
    n_male = male_count(b, total)
    n_female = total - n_male
    if n_male and male_kde is None:
        raise MissingKde("balancing factor requires a male KDE")
    if n_female and female_kde is None:
        raise MissingKde("balancing factor requires a female KDE")
    ref = np.asarray(reference, dtype=np.float64).ravel()
    parts, labels = [], []
    if n_male:
        parts.append(sample_residuals(male_kde, n_male, rng))
        labels += ["Male"] * n_male
    if n_female:
        parts.append(sample_residuals(female_kde, n_female, rng))
        labels += ["Female"] * n_female
    res = np.concatenate(parts)
    if res.shape[1] != ref.size:
        raise ValueError(f"reference dim {ref.size} != KDE dim {res.shape[1]}")
    perm = rng.permutation(total)
    out = ref[None, :] + res[perm]
    if return_sources:
        return out, np.asarray(labels)[perm]
    return out


@dataclass(frozen=True)
class AttributeKdes:
    female: KdeModel | None
    male: KdeModel | None

    def for_attribute(self, attr: str) -> KdeModel:
        kde = self.male if attr == "Male" else self.female
        if kde is None:
            raise MissingKde(f"no KDE fitted for {attr}")
        return kde


def fit_attribute_kdes(embeddings, identities: Sequence[str], attributes: Mapping[str, str],
                       cv_folds: int = 5, grid_size: int = 20, grid_lo: float = 0.05,
                       grid_hi: float = 2.0, seed: int = 0) -> tuple[AttributeKdes, dict]:
    """Centroids, residuals, attribute split and one KDE per attribute."""
    centroids = compute_centroids(group_by_identity(embeddings, identities))
    res, tags = normalize_residuals(embeddings, identities, centroids, attributes)
    tags = np.asarray(tags)
    models = {}
    for attr in ("Female", "Male"):
        r = res[tags == attr]
        if len(r) >= max(2, cv_folds):
            grid = default_bandwidth_grid(r, grid_size, grid_lo, grid_hi)
            models[attr] = fit_kde(r, cv_folds, grid, attribute=attr, seed=seed)
    kdes = AttributeKdes(models.get("Female"), models.get("Male"))
    return kdes, centroids
