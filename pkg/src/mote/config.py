"""Run configuration: nested dataclasses rendered to / parsed from JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .enroll import EnrollmentConfig
from .errors import ConfigParse
from .net import TrainConfig
from .synth import SynthConfig

DEFAULT_SWEEP = (0.0, 0.4, 0.5, 0.6, 1.0)


@dataclass(frozen=True)
class KdeConfig:
    cv_folds: int = 5
    grid_size: int = 20
    grid_lo: float = 0.05
    grid_hi: float = 2.0


@dataclass(frozen=True)
class EvalConfig:
    target_fmr: float = 1e-3
    operating_fmr: float = 1e-2
    max_imposter_pairs: int = 1_000_000
    gallery_per_gender: int = 100
    fairness_alpha: float = 0.5
    figures: bool = True
    # count every score under every group label so group distributions are identical
    pool_groups: bool = False


@dataclass(frozen=True)
class BenchConfig:
    n_identities: int = 5
    repeats: int = 10
    n_probes: int = 10_000


@dataclass(frozen=True)
class PathsConfig:
    workdir: str = "mote-run"
    embeddings: str | None = None
    manifest: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    kde: KdeConfig = field(default_factory=KdeConfig)
    enroll: EnrollmentConfig = field(default_factory=EnrollmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    sweep: tuple[float, ...] = DEFAULT_SWEEP
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        self.synth.validate()
        self.enroll.validate()
        if any(not 0.0 <= b <= 1.0 for b in self.sweep):
            raise ConfigParse("sweep values must lie in [0, 1]")
        if not 0.0 < self.eval.target_fmr <= 1.0 or not 0.0 < self.eval.operating_fmr <= 1.0:
            raise ConfigParse("FMR targets must lie in (0, 1]")
        if self.kde.cv_folds < 2 or self.kde.grid_size < 1:
            raise ConfigParse("kde.cv_folds must be >= 2 and kde.grid_size >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def render(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("paths")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @property
    def workdir(self) -> Path:
        return Path(self.paths.workdir)

    @property
    def embeddings_path(self) -> Path:
        return Path(self.paths.embeddings) if self.paths.embeddings else self.workdir / "data" / "corpus.emb"

    @property
    def manifest_path(self) -> Path:
        if self.paths.manifest:
            return Path(self.paths.manifest)
        return self.workdir / "data" / "corpus.manifest.json"

    def store_dir(self, balancing_factor: float | None = None) -> Path:
        b = self.enroll.balancing_factor if balancing_factor is None else balancing_factor
        return self.workdir / "store" / f"b{b:.2f}"

    @property
    def report_dir(self) -> Path:
        return self.workdir / "reports"

    def with_balancing_factor(self, b: float) -> "RunConfig":
        return dataclasses.replace(self, enroll=dataclasses.replace(self.enroll, balancing_factor=b))


def _build(cls, data, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigParse(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigParse(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        hint = hints[k]
        path = f"{where}.{k}" if where else k
        if dataclasses.is_dataclass(hint):
            kwargs[k] = _build(hint, v, path)
        elif typing.get_origin(hint) is tuple:
            kwargs[k] = tuple(float(x) for x in v)
        else:
            kwargs[k] = _coerce(hint, v, path)
    return cls(**kwargs)


def _coerce(hint, v, where):
    try:
        if hint is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        if hint is int:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        if hint is float:
            return float(v)
        if hint is str:
            return str(v)
    except (TypeError, ValueError):
        raise ConfigParse(f"{where}: cannot interpret {v!r} as {hint.__name__}") from None
    return v  # optional / union fields pass through


def parse_config(text: str | dict) -> RunConfig:
    if isinstance(text, str):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigParse(f"invalid JSON: {e}") from e
    else:
        data = text
    try:
        return _build(RunConfig, data, "")
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigParse):
            raise
        raise ConfigParse(str(e)) from e


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``key.path=value`` overrides; values are JSON literals or bare strings."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigParse(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigParse(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigParse(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return parse_config(data)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParse(f"cannot read config: {e}") from e
    return parse_config(text)
