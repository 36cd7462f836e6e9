"""Pipeline configuration: defaults, TOML files, flag overrides, run ids and derived seeds."""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .errors import ConfigError
from .features import FEATURE_SETS, SCORE_FEATURE
from .ingest import MonthId
from .model import HyperParamGrid, SplitSpec

SCHEMA_VERSION = 1


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage seed: master seed plus a CRC32 of the stage name, folded into 31 bits."""
    return (int(seed) + zlib.crc32(stage.encode("utf-8"))) % (2 ** 31)


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    events: str | None = None          # default <data_dir>/events.jsonl
    follows: str | None = None         # default <data_dir>/follows
    out_dir: str = "out"
    train_ref: str | None = None       # default: first month with a full n-month lookback
    eval_ref: str | None = None        # optional second cohort, at least m months after train_ref
    kinds: tuple[str, ...] = ("spreader", "broker")
    feature_sets: tuple[str, ...] = ("all", "follow", "rt", "score-only")
    m: int = 6
    n: int = 4
    m_values: tuple[int, ...] = (2, 3, 4, 5, 6)
    n_values: tuple[int, ...] = (1, 2, 3, 4)
    fraction: float = 0.10
    both_change_rates: bool = False
    seed: int = 0
    train_fraction: float = 0.7
    cv_folds: int = 5
    grid: dict = field(default_factory=lambda: asdict(HyperParamGrid()))
    importance_repeats: int = 30
    importance_rows: str = "test"
    workers: int = 1
    plot_data: bool = False
    synth: dict = field(default_factory=dict)

    # ---- derived paths and objects

    def events_path(self) -> Path:
        return Path(self.events) if self.events else Path(self.data_dir) / "events.jsonl"

    def follows_path(self) -> Path:
        return Path(self.follows) if self.follows else Path(self.data_dir) / "follows"

    def hyper_grid(self) -> HyperParamGrid:
        return HyperParamGrid(**self.grid)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_fraction, self.cv_folds, derive_seed(self.seed, "split"))

    def validate(self) -> "PipelineConfig":
        for kind in self.kinds:
            if kind not in SCORE_FEATURE:
                raise ConfigError(f"unknown influencer kind {kind!r}")
        for fs in self.feature_sets:
            if fs not in FEATURE_SETS:
                raise ConfigError(f"unknown feature set {fs!r}; choose from {sorted(FEATURE_SETS)}")
        if self.m < 1 or self.n < 1:
            raise ConfigError("m and n must be at least 1")
        if any(v < 1 for v in self.m_values) or any(v < 1 for v in self.n_values):
            raise ConfigError("sweep values must be at least 1")
        if not 0 < self.fraction < 1:
            raise ConfigError("fraction must lie strictly between 0 and 1")
        if self.importance_rows not in ("test", "train"):
            raise ConfigError("importance_rows must be 'test' or 'train'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.importance_repeats < 1:
            raise ConfigError("importance_repeats must be at least 1")
        unknown = set(self.grid) - {f.name for f in fields(HyperParamGrid)}
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        self.hyper_grid()
        self.split_spec()
        refs = {}
        for name in ("train_ref", "eval_ref"):
            value = getattr(self, name)
            if value is not None:
                try:
                    refs[name] = MonthId.parse(value)
                except ValueError as exc:
                    raise ConfigError(f"{name}: {exc}") from None
        if "train_ref" in refs and "eval_ref" in refs:
            if refs["eval_ref"] < refs["train_ref"].shift(self.m):
                raise ConfigError(
                    f"eval_ref {refs['eval_ref']} must be at least m={self.m} months after train_ref "
                    f"{refs['train_ref']} so the two cohorts' label windows do not overlap"
                )
        return self

    def run_id(self) -> str:
        """Hash of everything that shapes artifacts; selectors like kind, n and m live in file names."""
        keyed = {
            "events": str(self.events_path()), "follows": str(self.follows_path()),
            "train_ref": self.train_ref, "eval_ref": self.eval_ref, "fraction": self.fraction,
            "both_change_rates": self.both_change_rates, "seed": self.seed,
            "train_fraction": self.train_fraction, "cv_folds": self.cv_folds,
            "grid": asdict(self.hyper_grid()), "importance_repeats": self.importance_repeats,
            "importance_rows": self.importance_rows,
        }
        blob = json.dumps(keyed, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_id()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = asdict(self.hyper_grid())
        return d


_TUPLE_FIELDS = {"kinds", "feature_sets", "m_values", "n_values"}


def _coerce(name: str, value):
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        value = tuple(value)
        if name in ("m_values", "n_values"):
            value = tuple(int(v) for v in value)
    return value


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the TOML file (if any), then non-None overrides."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            values = tomli.loads(path.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = PipelineConfig()
    updates = {k: _coerce(k, v) for k, v in values.items()}
    if "grid" in updates:
        updates["grid"] = {**cfg.grid, **updates["grid"]}
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in known:
            raise ConfigError(f"unknown setting {k!r}")
        updates[k] = _coerce(k, v)
    return replace(cfg, **updates).validate()
