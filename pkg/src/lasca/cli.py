"""Command-line interface driving the full pipeline from a YAML config.

Subcommands: validate, templates, encode, pairs, train, eval, report, run.
Exit codes: 0 success, 1 data/validation error, 2 usage/config error.
Run output lands under a directory keyed by the config digest, one JSON Lines
file of fold results per grid cell, so sweeps are resumable; completed cells
are skipped unless --force is given. All files are written atomically
(write-temp-then-rename) and contain no timestamps, which keeps reruns
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import encoding, ingest, learner, lexicon, preference, protocol
from .errors import ConfigError, LascaError
from .runconfig import RUN_DIR_ENV, RunConfig, build_cells, config_digest, load_config

log = logging.getLogger("lasca")

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE = 2


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _config(args) -> RunConfig:
    """Load the config file and apply command-line overrides."""
    cfg = load_config(args.config)
    if getattr(args, "strict_lexicon", False):
        cfg.strict_lexicon = True
    if getattr(args, "seed_base", None) is not None:
        cfg.seed_base = args.seed_base
    return cfg


@dataclass
class LoadedData:
    """Everything loadable from a run config, with window caching."""

    cfg: RunConfig
    frames: dict[str, list[ingest.FrameRecord]]
    annotations: list[ingest.AffectSample]
    lexicons: dict[str, lexicon.SemanticLexicon]
    _encoder: object | None = None
    _window_cache: dict[tuple[str, float], list[ingest.FeatureWindow]] = field(
        default_factory=dict
    )

    @property
    def encoder(self):
        if self._encoder is None:
            self._encoder = encoding.build_encoder(
                self.cfg.encoder,
                store_path=self.cfg.store_path,
                model_path=self.cfg.model_path,
            )
        return self._encoder

    def windows_for(self, modality: str, window_len: float) -> list[ingest.FeatureWindow]:
        key = (modality, window_len)
        if key not in self._window_cache:
            if modality == "visual":
                ws = ingest.segment_windows(
                    self.frames["facial"], self.annotations, window_len
                )
            elif modality == "audio":
                ws = ingest.segment_windows(
                    self.frames["audio"], self.annotations, window_len
                )
            else:
                ws = ingest.merge_windows(
                    ingest.segment_windows(
                        self.frames["facial"], self.annotations, window_len
                    ),
                    ingest.segment_windows(
                        self.frames["audio"], self.annotations, window_len
                    ),
                )
            self._window_cache[key] = ws
        return self._window_cache[key]

    def experiment_data(self, cell: protocol.ExperimentConfig) -> protocol.ExperimentData:
        return protocol.ExperimentData(
            windows=self.windows_for(cell.modality, cell.window_len),
            lexicons=self.lexicons,
            encoder=self.encoder,
            strict_lexicon=self.cfg.strict_lexicon,
        )


def load_all(cfg: RunConfig) -> LoadedData:
    frames = {
        modality: ingest.load_frames(path, modality)
        for modality, path in cfg.frames.items()
        if modality in cfg.needed_frame_modalities()
    }
    lexicons = {
        modality: lexicon.load_lexicon(cfg.lexicons[modality], cfg.lexicon_mode)
        for modality in cfg.needed_frame_modalities()
    }
    return LoadedData(
        cfg=cfg,
        frames=frames,
        annotations=ingest.load_annotations(cfg.annotations),
        lexicons=lexicons,
    )


def enumerate_templates(data: LoadedData) -> list[tuple[str, int]]:
    """Unique template texts with window occurrence counts, most frequent first.

    Enumeration uses normalization statistics fitted on the full dataset (the
    per-fold statistics of an actual run can, in principle, produce variants;
    a precomputed store missing one fails loudly at encode time).
    """
    counts: Counter[str] = Counter()
    cfg = data.cfg
    for modality in cfg.modalities:
        for window_len in cfg.window_lens:
            windows = data.windows_for(modality, window_len)
            if not windows:
                continue
            stats = ingest.fit_normalizer(windows)
            for tpl in protocol.window_templates(
                windows, stats, data.lexicons, strict=cfg.strict_lexicon
            ):
                counts[tpl.text] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    cfg = _config(args)
    errors: list[str] = []
    warnings: list[str] = []
    data = None
    try:
        data = load_all(cfg)
    except LascaError as exc:
        errors.append(str(exc))

    if data is not None:
        for modality, lex in data.lexicons.items():
            frame_list = data.frames.get(modality, [])
            if not frame_list:
                warnings.append(f"no {modality} frames loaded")
                continue
            report = lexicon.validate_coverage(
                lex, list(frame_list[0].features.keys())
            )
            warnings.extend(f"{modality}: {w}" for w in report.warnings())
        if cfg.encoder.backend == "precomputed":
            try:
                stored = encoding.load_embedding_store(
                    cfg.store_path, expect_model=cfg.encoder.name, expect_dim=cfg.encoder.dim
                )
                for text, _count in enumerate_templates(data):
                    if text not in stored:
                        errors.append(
                            "embedding store missing template with digest "
                            + encoding.text_digest(text)
                        )
            except LascaError as exc:
                errors.append(str(exc))

    for line in warnings:
        print(f"WARNING: {line}")
    for line in errors:
        print(f"ERROR: {line}")
    print(f"validation: {len(errors)} error(s), {len(warnings)} warning(s)")
    return EXIT_OK if not errors else EXIT_DATA_ERROR


def cmd_templates(args) -> int:
    cfg = _config(args)
    data = load_all(cfg)
    entries = enumerate_templates(data)
    out = Path(args.out)
    lines = [
        json.dumps({"text": text, "count": count}, sort_keys=True)
        for text, count in entries
    ]
    _atomic_write(out, "\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(entries)} unique templates to {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    data = load_all(cfg)
    entries = enumerate_templates(data)
    spec = cfg.encoder
    records = []
    for text, _count in entries:
        emb = data.encoder.encode(text)
        records.append(
            json.dumps(
                {
                    "text": text,
                    "model": spec.name,
                    "dim": spec.dim,
                    "vector": emb.vector.tolist(),
                },
                sort_keys=True,
            )
        )
    out = Path(args.out)
    _atomic_write(out, "\n".join(records) + ("\n" if records else ""))
    print(f"wrote {len(records)} embeddings to {out}")
    return EXIT_OK


def cmd_pairs(args) -> int:
    cfg = _config(args)
    data = load_all(cfg)
    lines: list[str] = []
    for modality in cfg.modalities:
        for window_len in cfg.window_lens:
            windows = data.windows_for(modality, window_len)
            for dimension in cfg.dimensions:
                for tau in cfg.taus:
                    pair_cfg = preference.PairConfig(
                        dimension=dimension, tau=tau, epsilon=cfg.epsilon
                    )
                    for pair in preference.build_pairs(windows, None, pair_cfg):
                        w_first = windows[pair.first]
                        w_second = windows[pair.second]
                        a_first = w_first.affect(dimension)
                        a_second = w_second.affect(dimension)
                        lines.append(
                            json.dumps(
                                {
                                    "modality": modality,
                                    "window_len": window_len,
                                    "tau": tau,
                                    "dimension": dimension,
                                    "first": pair.first,
                                    "second": pair.second,
                                    "subject_id": w_first.subject_id,
                                    "video_id": w_first.video_id,
                                    "t_first": w_first.t_start,
                                    "t_second": w_second.t_start,
                                    "a_first": a_first,
                                    "a_second": a_second,
                                    "gate_ratio": preference.gate_ratio(
                                        a_first, a_second, cfg.epsilon
                                    ),
                                    "label": pair.label,
                                },
                                sort_keys=True,
                            )
                        )
    out = Path(args.out)
    _atomic_write(out, "\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} pair records to {out}")
    return EXIT_OK


def _cell_from_args(cfg: RunConfig, args) -> protocol.ExperimentConfig:
    return protocol.ExperimentConfig(
        dimension=args.dimension or cfg.dimensions[0],
        window_len=float(args.window_len or cfg.window_lens[0]),
        tau=float(args.tau or cfg.taus[0]),
        modality=args.modality or cfg.modalities[0],
        representation=args.representation or cfg.representations[0],
        encoder=cfg.encoder,
        lexicon_mode=cfg.lexicon_mode,
        folds_or_seeds=cfg.folds_or_seeds,
        seed_base=cfg.seed_base,
        split_mode=cfg.split_mode,
        test_fraction=cfg.test_fraction,
        epsilon=cfg.epsilon,
        training=cfg.training,
    )


def _all_data_pairs(data: LoadedData, cell: protocol.ExperimentConfig):
    """Pairs over the whole dataset under full-data normalization (train/eval)."""
    windows = data.windows_for(cell.modality, cell.window_len)
    if not windows:
        raise LascaError("no windows available for the selected cell")
    stats = ingest.fit_normalizer(windows)
    zs = protocol.build_representations(
        windows, stats, data.experiment_data(cell), cell.representation
    )
    pair_cfg = preference.PairConfig(
        dimension=cell.dimension, tau=cell.tau, epsilon=cell.epsilon
    )
    return preference.build_pairs(windows, zs, pair_cfg)


def cmd_train(args) -> int:
    cfg = _config(args)
    data = load_all(cfg)
    cell = _cell_from_args(cfg, args)
    pairs = _all_data_pairs(data, cell)
    if not pairs:
        print("ERROR: no preference pairs under this cell's gating")
        return EXIT_DATA_ERROR
    head_cfg = learner.HeadConfig(
        input_dim=int(pairs[0].delta_z.shape[0]),
        l2_alpha=cell.training.l2_alpha,
        max_epochs=cell.training.max_epochs,
        tol=cell.training.tol,
        patience=cell.training.patience,
        learning_rate=cell.training.learning_rate,
        batch_size=cell.training.batch_size,
        seed=cell.seed_base,
    )
    trained = learner.train(learner.init_head(head_cfg), pairs, head_cfg)
    learner.save_head(trained, args.out)
    print(
        f"trained on {len(pairs)} pairs, {trained.epochs_run} epochs, "
        f"final loss {trained.final_loss:.6f}; checkpoint at {args.out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    data = load_all(cfg)
    cell = _cell_from_args(cfg, args)
    head = learner.load_head(args.checkpoint)
    pairs = _all_data_pairs(data, cell)
    if not pairs:
        print("ERROR: no preference pairs under this cell's gating")
        return EXIT_DATA_ERROR
    acc = learner.accuracy(head, pairs)
    print(f"accuracy {acc:.4f} over {len(pairs)} pairs")
    return EXIT_OK


def _fold_result_line(r: protocol.FoldResult) -> str:
    return json.dumps(
        {
            "fold": r.fold,
            "train_subjects": list(r.train_subjects),
            "test_subjects": list(r.test_subjects),
            "accuracy": r.accuracy,
            "n_train_pairs": r.n_train_pairs,
            "n_test_pairs": r.n_test_pairs,
            "epochs_run": r.epochs_run,
            "skipped": r.skipped,
            "skip_reason": r.skip_reason,
        },
        sort_keys=True,
    )


def _cell_meta(cell: protocol.ExperimentConfig, digest: str, summary: dict) -> dict:
    return {
        "digest": digest,
        "cell": {
            "dimension": cell.dimension,
            "window_len": cell.window_len,
            "tau": cell.tau,
            "modality": cell.modality,
            "representation": cell.representation,
            "encoder": cell.encoder.name,
            "lexicon_mode": cell.lexicon_mode,
            "model": cell.model_label(),
        },
        "summary": summary,
        "status": "complete",
    }


def _load_cell_results(run_dir: Path) -> list[tuple[dict, list[dict]]]:
    """Read (meta, fold records) for every completed cell under a run dir."""
    out = []
    cell_dir = run_dir / "cells"
    if not cell_dir.is_dir():
        raise LascaError(f"no cells directory under {run_dir}")
    for meta_path in sorted(cell_dir.glob("*.meta.json")):
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("status") != "complete":
            continue
        jsonl = cell_dir / (meta["digest"] + ".jsonl")
        folds = [
            json.loads(line)
            for line in jsonl.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        out.append((meta, folds))
    return out


def _report_cells(loaded: list[tuple[dict, list[dict]]]) -> list[protocol.ReportCell]:
    cells = []
    for meta, folds in loaded:
        scored = [f for f in folds if not f["skipped"]]
        cells.append(
            protocol.ReportCell(
                modality=meta["cell"]["modality"],
                model=meta["cell"]["model"],
                dimension=meta["cell"]["dimension"],
                window_len=float(meta["cell"]["window_len"]),
                tau=float(meta["cell"]["tau"]),
                fold_indices=tuple(f["fold"] for f in scored),
                fold_accuracies=tuple(f["accuracy"] for f in scored),
                mean_accuracy=meta["summary"]["mean_accuracy"],
            )
        )
    return cells


def _write_report(run_dir: Path) -> None:
    cells = _report_cells(_load_cell_results(run_dir))
    markdown, csv_text = protocol.render_report(cells)
    _atomic_write(run_dir / "report.md", markdown)
    _atomic_write(run_dir / "report.csv", csv_text)


def cmd_run(args) -> int:
    cfg = _config(args)
    data = load_all(cfg)
    cells = build_cells(cfg)
    run_digest = config_digest(cfg)[:16]
    run_dir = cfg.run_root / run_digest
    cell_dir = run_dir / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)

    # Materialize window caches up front so parallel cells only read.
    for cell in cells:
        data.windows_for(cell.modality, cell.window_len)

    def run_cell(cell: protocol.ExperimentConfig) -> tuple[str, str | None]:
        digest = config_digest(cell)[:16]
        meta_path = cell_dir / f"{digest}.meta.json"
        jsonl_path = cell_dir / f"{digest}.jsonl"
        if meta_path.exists() and jsonl_path.exists() and not args.force:
            try:
                if json.loads(meta_path.read_text())["status"] == "complete":
                    log.info("cell %s cached, skipping", digest)
                    return digest, None
            except (json.JSONDecodeError, KeyError):
                pass
        try:
            results, summary = protocol.run_experiment(cell, data.experiment_data(cell))
        except (LascaError, ValueError) as exc:
            return digest, str(exc)
        _atomic_write(
            jsonl_path, "\n".join(_fold_result_line(r) for r in results) + "\n"
        )
        _atomic_write(
            meta_path,
            json.dumps(_cell_meta(cell, digest, summary), sort_keys=True, indent=1),
        )
        return digest, None

    failures: list[dict] = []
    completed: list[str] = []
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(cell) for cell in cells]
    for digest, error in outcomes:
        if error is None:
            completed.append(digest)
        else:
            failures.append({"digest": digest, "error": error})

    manifest = {
        "run_digest": run_digest,
        "n_cells": len(cells),
        "completed": sorted(completed),
        "failed": sorted(failures, key=lambda f: f["digest"]),
    }
    _atomic_write(run_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
    _write_report(run_dir)
    print(f"run directory: {run_dir}")
    print(f"cells completed: {len(completed)}/{len(cells)}")
    if failures:
        for f in failures:
            print(f"ERROR: cell {f['digest']}: {f['error']}")
        return EXIT_DATA_ERROR
    return EXIT_OK


def cmd_report(args) -> int:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        cfg = load_config(args.config)
        run_dir = cfg.run_root / config_digest(cfg)[:16]
    _write_report(run_dir)
    print(f"report regenerated under {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_cell_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--modality", choices=protocol.MODALITY_CHOICES)
    sub.add_argument("--representation", choices=protocol.REPRESENTATION_CHOICES)
    sub.add_argument("--dimension", choices=("valence", "arousal"))
    sub.add_argument("--window-len", type=float, dest="window_len")
    sub.add_argument("--tau", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lasca",
        description=(
            "Windowed behavioral features to salience-masked semantic text, "
            "frozen sentence embeddings, and preference learning over "
            "valence/arousal change direction."
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument(
            "--strict-lexicon",
            action="store_true",
            help="error (rather than skip) on active features without labels",
        )
        return p

    common(sub.add_parser("validate", help="check schemas, coverage, and stores"))
    p = common(sub.add_parser("templates", help="dump unique templates with counts"))
    p.add_argument("--out", required=True)
    p = common(sub.add_parser("encode", help="encode unique templates to a store"))
    p.add_argument("--out", required=True)
    p = common(sub.add_parser("pairs", help="dump gated preference pairs for audit"))
    p.add_argument("--out", required=True)
    p = common(sub.add_parser("train", help="train one head on the full dataset"))
    p.add_argument("--out", required=True)
    _add_cell_flags(p)
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on the full dataset"))
    p.add_argument("--checkpoint", required=True)
    _add_cell_flags(p)
    p = common(sub.add_parser("run", help="run the full evaluation grid"))
    p.add_argument("--force", action="store_true", help="recompute cached cells")
    p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    p.add_argument("--seed-base", type=int, dest="seed_base", default=None)
    p = sub.add_parser("report", help="regenerate the report from persisted results")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--run-dir", help="existing run directory")
    return parser


_HANDLERS = {
    "validate": cmd_validate,
    "templates": cmd_templates,
    "encode": cmd_encode,
    "pairs": cmd_pairs,
    "train": cmd_train,
    "eval": cmd_eval,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "report" and not (args.run_dir or args.config):
            parser.error("report needs --run-dir or --config")
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"CONFIG ERROR: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LascaError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
