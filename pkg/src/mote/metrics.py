"""Verification and fairness metrics over genuine/imposter score sets."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyScoreSet, SingleGroup

log = logging.getLogger(__name__)


class ResolutionWarning(UserWarning):
    """Too few imposter scores to resolve the requested FMR."""


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    imposter: np.ndarray
    genuine_attr: np.ndarray | None = None
    imposter_attr: np.ndarray | None = None

    def __post_init__(self):
        for name in ("genuine", "imposter"):
            a = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} scores must be finite")
            object.__setattr__(self, name, a)
        for name, ref in (("genuine_attr", self.genuine), ("imposter_attr", self.imposter)):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v)
                if v.shape != ref.shape:
                    raise ValueError(f"{name} length does not match scores")
                object.__setattr__(self, name, v)

    def require(self) -> None:
        if self.genuine.size == 0 or self.imposter.size == 0:
            raise EmptyScoreSet("both genuine and imposter scores are required")

    def groups(self) -> list:
        if self.genuine_attr is None or self.imposter_attr is None:
            return []
        return sorted(set(self.genuine_attr.tolist()) | set(self.imposter_attr.tolist()))

    def subset(self, group) -> "ScoreSet":
        g = self.genuine_attr == group
        i = self.imposter_attr == group
        return ScoreSet(self.genuine[g], self.imposter[i], self.genuine_attr[g], self.imposter_attr[i])


def rates_at_threshold(s: ScoreSet, tau: float) -> tuple[float, float]:
    """``(fmr, fnmr)``: imposters with score >= tau, genuines with score < tau."""
    s.require()
    fmr = np.count_nonzero(s.imposter >= tau) / s.imposter.size
    fnmr = np.count_nonzero(s.genuine < tau) / s.genuine.size
    return float(fmr), float(fnmr)


def _fmr_candidates(imposter: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    distinct = np.unique(imposter)
    mids = distinct[:-1] + (distinct[1:] - distinct[:-1]) / 2.0
    lo = np.nextafter(distinct[0], -np.inf)
    hi = np.nextafter(distinct[-1], np.inf)
    cand = np.unique(np.concatenate([[lo], mids, [hi]]))
    srt = np.sort(imposter)
    fmr = (srt.size - np.searchsorted(srt, cand, side="left")) / srt.size
    return cand, fmr


def threshold_at_fmr(s: ScoreSet, target_fmr: float) -> tuple[float, float]:
    """Smallest candidate threshold whose FMR does not exceed ``target_fmr``.

    Candidates are midpoints between consecutive distinct imposter scores plus
    one value just below the minimum and one just above the maximum.  Returns
    ``(tau, achieved_fmr)``.  Warns with :class:`ResolutionWarning` when there
    are fewer than ``1 / target_fmr`` imposter scores.
    """
    if s.imposter.size == 0:
        raise EmptyScoreSet("imposter scores are required")
    if not 0.0 < target_fmr <= 1.0:
        raise ValueError("target_fmr must lie in (0, 1]")
    if s.imposter.size < 1.0 / target_fmr:
        msg = (f"{s.imposter.size} imposter scores cannot resolve FMR={target_fmr:g} "
               f"(need >= {int(np.ceil(1.0 / target_fmr))})")
        log.warning(msg)
        warnings.warn(msg, ResolutionWarning, stacklevel=2)
    cand, fmr = _fmr_candidates(s.imposter)
    ok = np.flatnonzero(fmr <= target_fmr)
    k = ok[0]
    return float(cand[k]), float(fmr[k])


def roc_curve(s: ScoreSet) -> list[tuple[float, float]]:
    """(fmr, fnmr) at every distinct observed score, plus the two extremes."""
    s.require()
    scores = np.unique(np.concatenate([s.genuine, s.imposter]))
    taus = np.concatenate([scores, [np.nextafter(scores[-1], np.inf)]])
    imp, gen = np.sort(s.imposter), np.sort(s.genuine)
    fmr = (imp.size - np.searchsorted(imp, taus, side="left")) / imp.size
    fnmr = np.searchsorted(gen, taus, side="left") / gen.size
    return list(zip(fmr.tolist(), fnmr.tolist()))


def auc_rank(s: ScoreSet) -> float:
    """P(random genuine > random imposter), ties counted one half."""
    s.require()
    ranks = rankdata(np.concatenate([s.genuine, s.imposter]))
    n_g, n_i = s.genuine.size, s.imposter.size
    u = ranks[:n_g].sum() - n_g * (n_g + 1) / 2.0
    return float(u / (n_g * n_i))


def roc_auc(s: ScoreSet):
    return roc_curve(s), auc_rank(s)


def pair_accuracy(s: ScoreSet, tau: float) -> float:
    s.require()
    correct = np.count_nonzero(s.genuine >= tau) + np.count_nonzero(s.imposter < tau)
    return correct / (s.genuine.size + s.imposter.size)


def per_group_rates(s: ScoreSet, tau: float) -> dict:
    out = {}
    for g in s.groups():
        sub = s.subset(g)
        fmr = np.count_nonzero(sub.imposter >= tau) / sub.imposter.size if sub.imposter.size else 0.0
        fnmr = np.count_nonzero(sub.genuine < tau) / sub.genuine.size if sub.genuine.size else 0.0
        out[g] = (float(fmr), float(fnmr))
    return out


def _check_groups(rates: Mapping) -> tuple[np.ndarray, np.ndarray]:
    if len(rates) < 2:
        raise SingleGroup("fairness metrics need at least two groups")
    fmr = np.array([v[0] for v in rates.values()], dtype=np.float64)
    fnmr = np.array([v[1] for v in rates.values()], dtype=np.float64)
    return fmr, fnmr


def _max_gap(x: np.ndarray) -> float:
    return max(abs(a - b) for a, b in itertools.combinations(x.tolist(), 2))


def fdr(rates: Mapping, alpha: float = 0.5) -> float:
    """Fairness discrepancy rate from per-group ``(fmr, fnmr)``; 1.0 is perfectly fair."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    fmr, fnmr = _check_groups(rates)
    return 1.0 - alpha * _max_gap(fmr) - (1.0 - alpha) * _max_gap(fnmr)


def gini(x: Sequence[float]) -> float:
    """Bias-corrected Gini coefficient; 0 when the mean is 0."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    mean = x.mean()
    if n < 2 or mean == 0:
        return 0.0
    total = np.abs(x[:, None] - x[None, :]).sum()
    return float(n / (n - 1) * total / (2.0 * n * n * mean))


def igarbe(rates: Mapping, alpha: float = 0.5) -> float:
    """One minus the Gini aggregation of group error rates; 1.0 is perfectly fair."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    fmr, fnmr = _check_groups(rates)
    return 1.0 - (alpha * gini(fmr) + (1.0 - alpha) * gini(fnmr))


def symmetrize_groups(s: ScoreSet) -> ScoreSet:
    """Copy every score under every group label so all groups share one distribution."""
    groups = s.groups()
    if not groups:
        raise SingleGroup("score set carries no group labels")
    k = len(groups)
    return ScoreSet(
        np.tile(s.genuine, k),
        np.tile(s.imposter, k),
        np.repeat(np.asarray(groups), s.genuine.size),
        np.repeat(np.asarray(groups), s.imposter.size),
    )
