"""Synthetic face-embedding corpora with one linear gender direction."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateConfig
from .store import DatasetManifest, ManifestRow, save_embedding_file, save_manifest

CORPUS_EMB = "corpus.emb"
CORPUS_MANIFEST = "corpus.manifest.json"


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 200
    samples_per_identity: int = 10
    dim: int = 512
    male_fraction: float = 0.5
    identity_spread: float = 0.05
    gender_offset: float = 0.5
    aux_fraction: float = 0.4
    seed: int = 0

    def validate(self) -> None:
        if self.n_identities < 1 or self.dim < 1 or self.samples_per_identity < 1:
            raise DegenerateConfig("n_identities, dim and samples_per_identity must be positive")
        if not self.identity_spread > 0:
            raise DegenerateConfig("identity_spread must be > 0")
        if self.gender_offset < 0:
            raise DegenerateConfig("gender_offset must be >= 0")
        if not 0.0 <= self.male_fraction <= 1.0 or not 0.0 <= self.aux_fraction <= 1.0:
            raise DegenerateConfig("male_fraction and aux_fraction must lie in [0, 1]")
        if self.samples_per_identity < 2 and _n_aux(self) < self.n_identities:
            raise DegenerateConfig("enroll identities need >= 2 samples (reference + probe)")

    def to_dict(self) -> dict:
        return asdict(self)


def _n_aux(cfg: SynthConfig) -> int:
    return int(round(cfg.aux_fraction * cfg.n_identities))


def gender_direction(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E6472]))
    g = rng.standard_normal(dim)
    return g / np.linalg.norm(g)


def _identity_samples(cfg: SynthConfig, index: int, sign: float, g: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, index]))
    u = rng.standard_normal(cfg.dim)
    centre = u / np.linalg.norm(u) + sign * cfg.gender_offset * g
    x = centre + cfg.identity_spread * rng.standard_normal((cfg.samples_per_identity, cfg.dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def gen_corpus(cfg: SynthConfig) -> tuple[np.ndarray, DatasetManifest]:
    """Generate ``(embeddings, manifest)``; deterministic given ``cfg``.

    Identities are split per attribute so the auxiliary population has the
    same gender mix as the whole corpus.  Each non-auxiliary identity gets
    one ``Enroll`` reference row; its remaining rows are ``Probe``.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    n = cfg.n_identities
    n_male = int(round(cfg.male_fraction * n))
    order = rng.permutation(n)
    is_male = np.zeros(n, dtype=bool)
    is_male[order[:n_male]] = True

    is_aux = np.zeros(n, dtype=bool)
    for group in (np.flatnonzero(is_male), np.flatnonzero(~is_male)):
        k = int(round(cfg.aux_fraction * len(group)))
        is_aux[rng.permutation(group)[:k]] = True

    g = gender_direction(cfg.dim, cfg.seed)
    width = len(str(n - 1))
    blocks, rows = [], []
    for i in range(n):
        ident = f"id{i:0{width}d}"
        attr = "Male" if is_male[i] else "Female"
        blocks.append(_identity_samples(cfg, i, 1.0 if is_male[i] else -1.0, g))
        for j in range(cfg.samples_per_identity):
            if is_aux[i]:
                split = "Auxiliary"
            else:
                split = "Enroll" if j == 0 else "Probe"
            rows.append(ManifestRow(len(rows), ident, attr, split))
    emb = np.concatenate(blocks).astype(np.float32)
    return emb, DatasetManifest(cfg.dim, True, tuple(rows))


def write_corpus(cfg: SynthConfig, out_dir) -> tuple[Path, Path]:
    emb, manifest = gen_corpus(cfg)
    out = Path(out_dir)
    emb_path, man_path = out / CORPUS_EMB, out / CORPUS_MANIFEST
    save_embedding_file(emb_path, emb)
    save_manifest(man_path, manifest)
    return emb_path, man_path
