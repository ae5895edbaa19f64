"""Run configuration (flat ``key=value`` files) and dataset manifests."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .aggregation import STRATEGIES
from .errors import ConfigurationError, ManifestError
from .mwfd import DEFAULT_DELTA_WIDTHS
from .training import TrainConfig

CACHE_ENV = "SCENENET_CACHE"

DCASE2016_SCENES = (
    "beach", "bus", "cafe/restaurant", "car", "city_center", "forest_path", "grocery_store",
    "home", "library", "metro_station", "office", "park", "residential_area", "train", "tram",
)

KEY_DOCS = {
    "learning_rate_init": "initial SGD learning rate",
    "lr_decrement_per_epoch": "amount subtracted from the learning rate after every epoch",
    "lr_floor": "smallest learning rate the schedule may reach",
    "momentum": "Nesterov momentum coefficient",
    "batch_size": "mini-batch size",
    "validation_fraction": "fraction of training windows held out for early stopping",
    "early_stop_patience": "epochs without validation improvement before stopping",
    "max_epochs": "hard cap on training epochs",
    "restore_best": "return best-validation parameters instead of the last epoch's",
    "chunk_size": "examples per forward/backward chunk inside a mini-batch (memory bound)",
    "seed": "master seed for splits, initialisation, shuffling and dropout",
    "delta_widths": "comma-separated odd frequency-delta widths",
    "augmentation": "'mwfd' (static plus deltas) or 'static'",
    "aggregation": "clip aggregation strategy, S1 or S2",
    "renormalize_s2": "rescale each window's S2 product to unit mass",
    "repeats": "independently seeded models per fold (ensembled at evaluation)",
    "scenes": "comma-separated scene vocabulary; sorted alphabetically for the softmax order",
    "cache_dir": "directory for SCNW window caches",
    "checkpoint_dir": "directory for SCNM checkpoints and training histories",
    "report_dir": "directory for evaluation reports",
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    learning_rate_init: float = 0.02
    lr_decrement_per_epoch: float = 0.0001
    lr_floor: float = 1e-6
    momentum: float = 0.9
    batch_size: int = 128
    validation_fraction: float = 0.15
    early_stop_patience: int = 15
    max_epochs: int = 500
    restore_best: bool = True
    chunk_size: int = 32
    seed: int = 0
    delta_widths: tuple = DEFAULT_DELTA_WIDTHS
    augmentation: str = "mwfd"
    aggregation: str = "S2"
    renormalize_s2: bool = True
    repeats: int = 3
    scenes: tuple = DCASE2016_SCENES
    cache_dir: str = "cache"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"

    def __post_init__(self):
        self.delta_widths = tuple(int(w) for w in self.delta_widths)
        self.scenes = tuple(sorted(self.scenes))
        for w in self.delta_widths:
            if w < 3 or w > 255 or w % 2 == 0:
                raise ConfigurationError(f"delta widths must be odd and within 3..255, got {w}")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be at least 1")
        if self.aggregation not in STRATEGIES:
            raise ConfigurationError(f"aggregation must be one of {STRATEGIES}, got {self.aggregation!r}")
        if self.augmentation not in ("mwfd", "static"):
            raise ConfigurationError(f"augmentation must be 'mwfd' or 'static', got {self.augmentation!r}")
        if len(set(self.scenes)) != len(self.scenes) or len(self.scenes) < 2:
            raise ConfigurationError("scene vocabulary needs at least two distinct names")
        self.train  # validates the training fields

    @property
    def train(self) -> TrainConfig:
        names = TrainConfig.field_names()
        return TrainConfig(**{n: getattr(self, n) for n in names})

    @property
    def classes(self) -> list[str]:
        return list(self.scenes)

    @property
    def cache_root(self) -> Path:
        return Path(os.environ.get(CACHE_ENV) or self.cache_dir)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        types = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
            default = types[key].default
            try:
                if isinstance(default, bool):
                    values[key] = _parse_bool(value)
                elif isinstance(default, tuple):
                    items = [v.strip() for v in value.split(",") if v.strip()]
                    values[key] = tuple(int(v) for v in items) if key == "delta_widths" else tuple(items)
                else:
                    values[key] = type(default)(value)
            except ValueError as exc:
                raise ConfigurationError(f"config line {lineno}: bad value for {key}: {exc}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            out.append((f.name, ",".join(str(v) for v in value) if isinstance(value, tuple) else str(value)))
        return out

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def echo(self) -> str:
        """One-line rendering embedded in report headers."""
        return "config: " + ";".join(f"{k}={v}" for k, v in self.items())


@dataclass
class ManifestRow:
    path: Path
    scene: str
    fold: str
    clip_id: str


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    source: Optional[Path] = None
    folds: list[str] = field(default_factory=list)

    @classmethod
    def load(cls, path, scenes=None) -> "DatasetManifest":
        """Read ``path<TAB>scene<TAB>fold`` rows; relative paths resolve against the manifest's directory."""
        path = Path(path)
        base = path.parent
        with open(path, encoding="utf-8", newline="") as fh:
            lines = list(csv.reader(fh, delimiter="\t"))
        if not lines or [c.strip().lower() for c in lines[0]] != ["path", "scene", "fold"]:
            raise ManifestError(f"{path}: header must be 'path<TAB>scene<TAB>fold'")
        rows = []
        for lineno, cols in enumerate(lines[1:], start=2):
            if not cols or all(not c.strip() for c in cols):
                continue
            if len(cols) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            audio, scene, fold = (c.strip() for c in cols)
            rows.append(ManifestRow((base / audio) if not os.path.isabs(audio) else Path(audio), scene, fold, audio))
        return cls.from_rows(rows, scenes, path)

    @classmethod
    def from_rows(cls, rows, scenes=None, source=None) -> "DatasetManifest":
        seen = set()
        for row in rows:
            if row.clip_id in seen:
                raise ManifestError(f"duplicate manifest path {row.clip_id!r}")
            seen.add(row.clip_id)
            if scenes is not None and row.scene not in scenes:
                raise ManifestError(f"scene {row.scene!r} of {row.clip_id!r} is not in the vocabulary")
        if not rows:
            raise ManifestError("manifest has no clips")
        folds = sorted({r.fold for r in rows}, key=_fold_key)
        return cls(list(rows), source, folds)

    def fold_rows(self, fold: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.fold == fold]

    def training_rows(self, fold: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.fold != fold]


def _fold_key(fold: str):
    return (0, int(fold), "") if fold.isdigit() else (1, 0, fold)


def write_manifest(path, rows: list[tuple[str, str, str]]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["path", "scene", "fold"])
        out.writerows(rows)
