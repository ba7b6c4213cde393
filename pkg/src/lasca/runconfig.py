"""Declarative YAML run configuration: paths, grid axes, and hyperparameters."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .encoding import EncoderSpec
from .errors import ConfigError
from .protocol import (
    MODALITY_CHOICES,
    REPRESENTATION_CHOICES,
    SPLIT_MODES,
    ExperimentConfig,
    TrainParams,
)

__all__ = ["RunConfig", "load_config", "build_cells", "config_digest"]

RUN_DIR_ENV = "LASCA_RUN_DIR"

ALLOWED_WINDOWS = (3, 5)


@dataclass
class RunConfig:
    """Validated contents of one run configuration file."""

    frames: dict[str, Path]  # modality ("facial"/"audio") -> CSV path
    annotations: Path
    lexicons: dict[str, Path]
    lexicon_mode: str
    strict_lexicon: bool
    encoder: EncoderSpec
    store_path: Path | None
    model_path: Path | None
    dimensions: list[str]
    window_lens: list[float]
    taus: list[float]
    modalities: list[str]
    representations: list[str]
    split_mode: str
    folds_or_seeds: int
    seed_base: int
    test_fraction: float
    epsilon: float
    training: TrainParams
    run_root: Path
    raw: dict = field(repr=False, default_factory=dict)

    def needed_frame_modalities(self) -> set[str]:
        needed: set[str] = set()
        for modality in self.modalities:
            if modality in ("visual", "multimodal"):
                needed.add("facial")
            if modality in ("audio", "multimodal"):
                needed.add("audio")
        return needed


def _expect(mapping: dict, key: str, kind, where: str):
    if key not in mapping:
        raise ConfigError(f"missing '{key}' in {where}")
    value = mapping[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"'{key}' in {where} must be {kind}")
    return value


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises ConfigError for unreadable or inconsistent files. Referenced data
    paths must resolve at validation time.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else (base / candidate)

    data = _expect(doc, "data", dict, "config")
    frames_raw = _expect(data, "frames", dict, "data")
    frames: dict[str, Path] = {}
    for modality, p in frames_raw.items():
        if modality not in ("facial", "audio"):
            raise ConfigError(f"unknown frame modality '{modality}'")
        frames[modality] = resolve(str(p))
    annotations = resolve(str(_expect(data, "annotations", str, "data")))

    lex = _expect(doc, "lexicons", dict, "config")
    lexicons: dict[str, Path] = {}
    for modality in ("facial", "audio"):
        if modality in lex:
            lexicons[modality] = resolve(str(lex[modality]))
    lexicon_mode = lex.get("mode", "affect_aware")
    if lexicon_mode not in ("affect_aware", "feature_name"):
        raise ConfigError(f"unknown lexicon mode '{lexicon_mode}'")
    strict_lexicon = bool(lex.get("strict", False))

    enc = doc.get("encoder", {})
    if not isinstance(enc, dict):
        raise ConfigError("'encoder' must be a mapping")
    try:
        encoder = EncoderSpec(
            name=enc.get("name", "hashing-384"),
            dim=int(enc.get("dim", 384)),
            pooling=enc.get("pooling", "mean"),
            backend=enc.get("backend", "hashing"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    store_path = resolve(str(enc["store"])) if "store" in enc else None
    model_path = resolve(str(enc["model_path"])) if "model_path" in enc else None
    if encoder.backend == "precomputed" and store_path is None:
        raise ConfigError("precomputed backend requires encoder.store")
    if encoder.backend == "external" and model_path is None:
        raise ConfigError("external backend requires encoder.model_path")

    grid = _expect(doc, "grid", dict, "config")
    dimensions = list(grid.get("dimensions", ["valence", "arousal"]))
    window_lens = [float(w) for w in grid.get("window_lens", [3, 5])]
    taus = [float(t) for t in grid.get("taus", [0.10, 0.20])]
    modalities = list(grid.get("modalities", ["visual"]))
    representations = list(grid.get("representations", ["features_only", "fused"]))
    for dim in dimensions:
        if dim not in ("valence", "arousal"):
            raise ConfigError(f"unknown affect dimension '{dim}'")
    for w in window_lens:
        if w not in ALLOWED_WINDOWS:
            raise ConfigError(f"window length {w} not in {ALLOWED_WINDOWS}")
    for t in taus:
        if not t > 0:
            raise ConfigError(f"tau must be positive, got {t}")
    for m in modalities:
        if m not in MODALITY_CHOICES:
            raise ConfigError(f"unknown modality '{m}'")
    for r in representations:
        if r not in REPRESENTATION_CHOICES:
            raise ConfigError(f"unknown representation '{r}'")
    if not dimensions or not window_lens or not taus or not modalities:
        raise ConfigError("grid axes must be non-empty")

    split = doc.get("split", {})
    split_mode = split.get("mode", "kfold")
    if split_mode not in SPLIT_MODES:
        raise ConfigError(f"unknown split mode '{split_mode}'")
    folds_or_seeds = int(split.get("folds_or_seeds", 15))
    if folds_or_seeds < 2:
        raise ConfigError("folds_or_seeds must be >= 2")
    seed_base = int(split.get("seed_base", 0))
    test_fraction = float(split.get("test_fraction", 0.2))
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")

    tr = doc.get("training", {})
    training = TrainParams(
        learning_rate=float(tr.get("learning_rate", 1e-3)),
        l2_alpha=float(tr.get("l2_alpha", 1.0)),
        max_epochs=int(tr.get("max_epochs", 25)),
        tol=float(tr.get("tol", 1e-3)),
        patience=int(tr.get("patience", 3)),
        batch_size=tr.get("batch_size"),
    )
    epsilon = float(doc.get("pairing", {}).get("epsilon", 1e-6))
    if not epsilon > 0:
        raise ConfigError("pairing.epsilon must be positive")

    out = doc.get("output", {})
    run_root = resolve(str(out.get("run_dir", "runs")))
    env_root = os.environ.get(RUN_DIR_ENV)
    if env_root:
        run_root = Path(env_root)

    cfg = RunConfig(
        frames=frames,
        annotations=annotations,
        lexicons=lexicons,
        lexicon_mode=lexicon_mode,
        strict_lexicon=strict_lexicon,
        encoder=encoder,
        store_path=store_path,
        model_path=model_path,
        dimensions=dimensions,
        window_lens=window_lens,
        taus=taus,
        modalities=modalities,
        representations=representations,
        split_mode=split_mode,
        folds_or_seeds=folds_or_seeds,
        seed_base=seed_base,
        test_fraction=test_fraction,
        epsilon=epsilon,
        training=training,
        run_root=run_root,
        raw=doc,
    )
    _check_paths(cfg)
    return cfg


def _check_paths(cfg: RunConfig) -> None:
    for modality in cfg.needed_frame_modalities():
        p = cfg.frames.get(modality)
        if p is None:
            raise ConfigError(f"grid needs '{modality}' frames but none configured")
        if not p.exists():
            raise ConfigError(f"frame file not found: {p}")
        lp = cfg.lexicons.get(modality)
        if lp is None:
            raise ConfigError(f"grid needs a '{modality}' lexicon but none configured")
        if not lp.exists():
            raise ConfigError(f"lexicon file not found: {lp}")
    if not cfg.annotations.exists():
        raise ConfigError(f"annotation file not found: {cfg.annotations}")
    if cfg.store_path is not None and not cfg.store_path.exists():
        raise ConfigError(f"embedding store not found: {cfg.store_path}")


def build_cells(cfg: RunConfig) -> list[ExperimentConfig]:
    """Cartesian grid of experiment cells, in deterministic order."""
    cells: list[ExperimentConfig] = []
    for modality in cfg.modalities:
        for representation in cfg.representations:
            for dimension in cfg.dimensions:
                for window_len in cfg.window_lens:
                    for tau in cfg.taus:
                        cells.append(
                            ExperimentConfig(
                                dimension=dimension,
                                window_len=window_len,
                                tau=tau,
                                modality=modality,
                                representation=representation,
                                encoder=cfg.encoder,
                                lexicon_mode=cfg.lexicon_mode,
                                folds_or_seeds=cfg.folds_or_seeds,
                                seed_base=cfg.seed_base,
                                split_mode=cfg.split_mode,
                                test_fraction=cfg.test_fraction,
                                epsilon=cfg.epsilon,
                                training=cfg.training,
                            )
                        )
    return cells


def _jsonable(obj):
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "__dict__"):
        return {k: _jsonable(v) for k, v in vars(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_digest(obj) -> str:
    """Stable sha256 over the canonical JSON encoding of a config object."""
    canonical = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
