"""Single-reference enrollment: synthesize a training pool, train, persist."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Mapping, Sequence

import numpy as np

from .errors import AlreadyEnrolled, KdeUnavailable, MissingKde
from .kde import AttributeKdes, male_count, sample_residuals, synth_templates
from .net import Mlp, TrainConfig, TrainReport, train
from .store import LAYER_DIMS, ModelTemplate, TemplateStore

IMPOSTER_SOURCES = ("AuxiliaryRaw", "SyntheticAroundAuxiliaryCentroids", "Mixed")


@dataclass(frozen=True)
class EnrollmentConfig:
    balancing_factor: float = 0.5
    n_genuine_synth: int = 512
    n_imposter: int = 512
    imposter_source: str = "Mixed"
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        self.train.validate()
        if not 0.0 <= self.balancing_factor <= 1.0:
            raise ValueError("balancing_factor must lie in [0, 1]")
        if self.n_genuine_synth < 2 / self.train.validation_fraction:
            raise ValueError("n_genuine_synth too small for a nonempty validation split")
        if self.n_imposter < 1:
            raise ValueError("n_imposter must be >= 1")
        if self.imposter_source not in IMPOSTER_SOURCES:
            raise ValueError(f"imposter_source must be one of {IMPOSTER_SOURCES}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class AuxiliaryPool:
    """The auxiliary split: raw embeddings plus per-identity centroids."""

    embeddings: np.ndarray
    identities: tuple[str, ...]
    attributes: Mapping[str, str]
    centroids: Mapping[str, np.ndarray]

    def __post_init__(self):
        if len(self.embeddings) == 0:
            raise ValueError("auxiliary pool is empty")

    def rows_with(self, attr: str) -> np.ndarray:
        return np.flatnonzero([self.attributes[i] == attr for i in self.identities])

    def centroid_ids(self, attr: str) -> list[str]:
        return [i for i in self.centroids if self.attributes[i] == attr]


def identity_seed(master_seed: int, identity: str) -> np.random.SeedSequence:
    h = int.from_bytes(hashlib.sha256(identity.encode("utf-8")).digest()[:8], "little")
    return np.random.SeedSequence([master_seed & (2**64 - 1), h])


def _pick(pool: np.ndarray, count: int, rng) -> np.ndarray:
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if len(pool) == 0:
        raise ValueError("cannot sample from an empty pool")
    return rng.choice(pool, size=count, replace=count > len(pool))


def _split_by_attr(count: int, b: float, aux: AuxiliaryPool, have) -> tuple[int, int]:
    n_male = male_count(b, count)
    n_female = count - n_male
    # fall back to the other attribute when one is absent from the pool
    if not have("Male"):
        n_male, n_female = 0, count
    elif not have("Female"):
        n_male, n_female = count, 0
    return n_male, n_female


def sample_imposters(aux: AuxiliaryPool, kdes: AttributeKdes, cfg: EnrollmentConfig, rng) -> np.ndarray:
    b = cfg.balancing_factor
    if cfg.imposter_source == "AuxiliaryRaw":
        n_raw, n_syn = cfg.n_imposter, 0
    elif cfg.imposter_source == "SyntheticAroundAuxiliaryCentroids":
        n_raw, n_syn = 0, cfg.n_imposter
    else:
        n_raw = cfg.n_imposter // 2
        n_syn = cfg.n_imposter - n_raw
    parts = []
    if n_raw:
        nm, nf = _split_by_attr(n_raw, b, aux, lambda a: len(aux.rows_with(a)) > 0)
        idx = np.concatenate([_pick(aux.rows_with("Male"), nm, rng),
                              _pick(aux.rows_with("Female"), nf, rng)])
        parts.append(np.asarray(aux.embeddings, dtype=np.float64)[idx])
    if n_syn:
        have = lambda a: bool(aux.centroid_ids(a)) and getattr(kdes, a.lower()) is not None
        nm, nf = _split_by_attr(n_syn, b, aux, have)
        for attr, k in (("Male", nm), ("Female", nf)):
            if not k:
                continue
            ids = aux.centroid_ids(attr)
            centres = np.stack([aux.centroids[ids[j]] for j in rng.integers(0, len(ids), size=k)])
            parts.append(centres + sample_residuals(kdes.for_attribute(attr), k, rng))
    return np.concatenate(parts)


@dataclass
class EnrollResult:
    template: ModelTemplate
    report: TrainReport
    enroll_seconds: float


def enroll_identity(reference, identity: str, kdes: AttributeKdes, aux: AuxiliaryPool,
                    cfg: EnrollmentConfig, store: TemplateStore | None = None,
                    master_seed: int = 0, overwrite: bool = False) -> tuple[ModelTemplate, TrainReport]:
    """Train and (optionally) persist the model template for one identity."""
    res = _enroll(reference, identity, kdes, aux, cfg, store, master_seed, overwrite)
    return res.template, res.report


def _enroll(reference, identity, kdes, aux, cfg, store, master_seed, overwrite) -> EnrollResult:
    cfg.validate()
    if store is not None and not overwrite and identity in store:
        raise AlreadyEnrolled(f"identity {identity!r} is already enrolled")
    t0 = time.perf_counter()
    ss = identity_seed(master_seed, identity)
    s_data, s_init, s_train = ss.spawn(3)
    rng = np.random.default_rng(s_data)
    ref = np.asarray(reference, dtype=np.float64).ravel()
    try:
        genuine = synth_templates(ref, kdes.female, kdes.male, cfg.balancing_factor,
                                  cfg.n_genuine_synth, rng)
        imposter = sample_imposters(aux, kdes, cfg, rng)
    except MissingKde as e:
        raise KdeUnavailable(str(e)) from e
    train_seed = int(s_train.generate_state(1, dtype=np.uint64)[0])
    tcfg = replace(cfg.train, seed=train_seed)
    mlp = Mlp.init(LAYER_DIMS, np.random.default_rng(s_init))
    mlp, report = train(mlp, genuine, imposter, tcfg, anchors=ref[None, :])
    template = ModelTemplate(
        identity=identity,
        weights=mlp.to_flat(),
        train_config_digest=cfg.digest(),
        balancing_factor=cfg.balancing_factor,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    elapsed = time.perf_counter() - t0
    result = EnrollResult(template, report, elapsed)
    if store is not None:
        _persist(store, result)
    return result


def _persist(store: TemplateStore, r: EnrollResult) -> None:
    n_bytes = store.save(r.template)
    store.append_log({
        "identity": r.template.identity,
        "created_at": r.template.created_at,
        "balancing_factor": r.template.balancing_factor,
        "digest": r.template.train_config_digest,
        "bytes": n_bytes,
        "epochs_run": r.report.epochs_run,
        "best_val_loss": r.report.best_val_loss,
        "train_seconds": r.report.wall_time_seconds,
        "enroll_seconds": r.enroll_seconds,
    })


def _enroll_job(args):
    return _enroll(*args)


def enroll_many(references: Mapping[str, np.ndarray], kdes: AttributeKdes, aux: AuxiliaryPool,
                cfg: EnrollmentConfig, store: TemplateStore | None = None, master_seed: int = 0,
                overwrite: bool = False, jobs: int = 1) -> dict[str, EnrollResult]:
    """Enroll every identity in ``references``; results keyed by identity.

    Each identity's randomness derives from ``master_seed`` and its id, so
    the outcome does not depend on order or ``jobs``.
    """
    ids: Sequence[str] = sorted(references)
    if store is not None and not overwrite:
        taken = [i for i in ids if i in store]
        if taken:
            raise AlreadyEnrolled(f"already enrolled: {taken[:5]}")
    if jobs <= 1:
        out = {}
        for i in ids:
            out[i] = _enroll(references[i], i, kdes, aux, cfg, None, master_seed, True)
    else:
        args = [(references[i], i, kdes, aux, cfg, None, master_seed, True) for i in ids]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = dict(zip(ids, ex.map(_enroll_job, args)))
    if store is not None:
        for i in ids:
            _persist(store, out[i])
    return out
