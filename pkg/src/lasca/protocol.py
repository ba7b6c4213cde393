"""Subject-independent evaluation protocol and significance testing.

For every fold (or seeded split), normalization statistics are fitted on the
training subjects' windows only, representations are built for all windows
under those statistics, preference pairs are constructed per stream, and a
fresh head is trained and scored on the held-out subjects' pairs. Folds with
no usable pairs are marked skipped, excluded from the mean, and always
reported. Per-cell accuracies are compared with a Wilcoxon signed-rank test,
exact for small samples and normal-approximated with tie correction beyond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoding import EncoderSpec, fuse
from .ingest import FeatureWindow, NormStats, apply_normalizer, fit_normalizer
from .learner import HeadConfig, accuracy, init_head, train
from .lexicon import SemanticLexicon, TemplateText, compose_multimodal, compose_template
from .preference import PairConfig, build_pairs
from .salience import salience_mask

__all__ = [
    "TrainParams",
    "ExperimentConfig",
    "ExperimentData",
    "FoldResult",
    "WilcoxonResult",
    "ReportCell",
    "subject_folds",
    "random_splits",
    "window_templates",
    "build_representations",
    "run_experiment",
    "wilcoxon_signed_rank",
    "render_report",
]

MODALITY_CHOICES = ("visual", "audio", "multimodal")
REPRESENTATION_CHOICES = ("features_only", "text_only", "fused")
SPLIT_MODES = ("kfold", "random")

# Exact sign-assignment enumeration is used up to this sample size.
EXACT_WILCOXON_MAX_N = 20


@dataclass(frozen=True)
class TrainParams:
    """Head-training hyperparameters surfaced in the run configuration."""

    learning_rate: float = 1e-3
    l2_alpha: float = 1.0
    max_epochs: int = 25
    tol: float = 1e-3
    patience: int = 3
    batch_size: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of the evaluation grid."""

    dimension: str
    window_len: float
    tau: float
    modality: str
    representation: str
    encoder: EncoderSpec
    lexicon_mode: str = "affect_aware"
    folds_or_seeds: int = 15
    seed_base: int = 0
    split_mode: str = "kfold"
    test_fraction: float = 0.2
    epsilon: float = 1e-6
    training: TrainParams = field(default_factory=TrainParams)

    def __post_init__(self):
        if self.dimension not in ("valence", "arousal"):
            raise ValueError(f"unknown dimension '{self.dimension}'")
        if self.modality not in MODALITY_CHOICES:
            raise ValueError(f"unknown modality '{self.modality}'")
        if self.representation not in REPRESENTATION_CHOICES:
            raise ValueError(f"unknown representation '{self.representation}'")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"unknown split mode '{self.split_mode}'")
        if self.folds_or_seeds < 2:
            raise ValueError("folds_or_seeds must be >= 2")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def model_label(self) -> str:
        """Row label in reports: features / encoder name / encoder name (F)."""
        if self.representation == "features_only":
            return "features"
        if self.representation == "text_only":
            return self.encoder.name
        return f"{self.encoder.name} (F)"


@dataclass
class ExperimentData:
    """Windows for one (modality, window length) plus shared resources."""

    windows: list[FeatureWindow]
    lexicons: dict[str, SemanticLexicon]
    encoder: object
    strict_lexicon: bool = False


@dataclass
class FoldResult:
    fold: int
    train_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]
    accuracy: float | None
    n_train_pairs: int
    n_test_pairs: int
    epochs_run: int
    skipped: bool = False
    skip_reason: str | None = None

    def __post_init__(self):
        overlap = set(self.train_subjects) & set(self.test_subjects)
        if overlap:
            raise ValueError(f"subject leakage between train and test: {overlap}")


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str
    degenerate: bool = False


def subject_folds(
    subjects: Sequence[str], k: int, seed: int
) -> list[tuple[str, ...]]:
    """Partition subjects into k disjoint test folds, sizes differing by <= 1."""
    uniq = sorted(set(subjects))
    if k > len(uniq):
        raise ValueError(f"cannot make {k} folds from {len(uniq)} subjects")
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng([seed, 0])
    order = [uniq[i] for i in rng.permutation(len(uniq))]
    base, extra = divmod(len(order), k)
    folds: list[tuple[str, ...]] = []
    at = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(tuple(order[at : at + size]))
        at += size
    return folds


def random_splits(
    subjects: Sequence[str], n_seeds: int, seed: int, test_fraction: float
) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Seeded subject-level train/test splits with a fixed test fraction."""
    uniq = sorted(set(subjects))
    if len(uniq) < 2:
        raise ValueError("need at least 2 subjects to split")
    n_test = max(1, int(len(uniq) * test_fraction))
    if n_test >= len(uniq):
        n_test = len(uniq) - 1
    splits = []
    for i in range(n_seeds):
        rng = np.random.default_rng([seed, i])
        order = [uniq[j] for j in rng.permutation(len(uniq))]
        splits.append((tuple(sorted(order[n_test:])), tuple(sorted(order[:n_test]))))
    return splits


def _splits_for(cfg: ExperimentConfig, subjects: Sequence[str]):
    if cfg.split_mode == "kfold":
        folds = subject_folds(subjects, cfg.folds_or_seeds, cfg.seed_base)
        uniq = sorted(set(subjects))
        return [
            (tuple(s for s in uniq if s not in set(fold)), fold) for fold in folds
        ]
    return random_splits(
        subjects, cfg.folds_or_seeds, cfg.seed_base, cfg.test_fraction
    )


def window_templates(
    windows: Sequence[FeatureWindow],
    stats: NormStats,
    lexicons: dict[str, SemanticLexicon],
    strict: bool = False,
) -> list[TemplateText]:
    """Final template per window: per-modality masks, joined when multimodal."""
    out: list[TemplateText] = []
    for w in windows:
        x_norm = apply_normalizer(stats, w.x_raw)
        parts: dict[str, TemplateText] = {}
        for modality, start, stop in w.blocks:
            mask = salience_mask(x_norm[start:stop])
            parts[modality] = compose_template(
                mask, w.feature_names[start:stop], lexicons[modality], strict=strict
            )
        if len(parts) == 1:
            out.append(next(iter(parts.values())))
        else:
            out.append(compose_multimodal(parts["facial"], parts["audio"]))
    return out


def build_representations(
    windows: Sequence[FeatureWindow],
    stats: NormStats,
    data: ExperimentData,
    representation: str,
) -> list[np.ndarray]:
    """Representation vector per window under the given normalizer."""
    xs = [apply_normalizer(stats, w.x_raw) for w in windows]
    if representation == "features_only":
        return xs
    templates = window_templates(
        windows, stats, data.lexicons, strict=data.strict_lexicon
    )
    embeddings = [data.encoder.encode(t) for t in templates]
    if representation == "text_only":
        return [e.vector for e in embeddings]
    return [fuse(x, e).z for x, e in zip(xs, embeddings)]


def run_experiment(
    cfg: ExperimentConfig, data: ExperimentData
) -> tuple[list[FoldResult], dict]:
    """Run every fold of one grid cell and summarize the mean accuracy."""
    windows = data.windows
    if not windows:
        raise ValueError("no windows to evaluate")
    subjects = sorted({w.subject_id for w in windows})
    pair_cfg = PairConfig(dimension=cfg.dimension, tau=cfg.tau, epsilon=cfg.epsilon)

    results: list[FoldResult] = []
    for fold_idx, (train_subjects, test_subjects) in enumerate(
        _splits_for(cfg, subjects)
    ):
        train_set = set(train_subjects)
        test_set = set(test_subjects)
        train_windows = [w for w in windows if w.subject_id in train_set]
        test_windows = [w for w in windows if w.subject_id in test_set]

        def skipped(reason: str, n_train=0, n_test=0) -> FoldResult:
            return FoldResult(
                fold=fold_idx,
                train_subjects=tuple(train_subjects),
                test_subjects=tuple(test_subjects),
                accuracy=None,
                n_train_pairs=n_train,
                n_test_pairs=n_test,
                epochs_run=0,
                skipped=True,
                skip_reason=reason,
            )

        if not train_windows:
            results.append(skipped("no training windows"))
            continue
        if not test_windows:
            results.append(skipped("no test windows"))
            continue

        stats = fit_normalizer(train_windows)
        z_train = build_representations(train_windows, stats, data, cfg.representation)
        z_test = build_representations(test_windows, stats, data, cfg.representation)
        train_pairs = build_pairs(train_windows, z_train, pair_cfg)
        test_pairs = build_pairs(test_windows, z_test, pair_cfg)
        if not train_pairs:
            results.append(skipped("no training pairs", 0, len(test_pairs)))
            continue
        if not test_pairs:
            results.append(skipped("no test pairs", len(train_pairs), 0))
            continue

        head_cfg = HeadConfig(
            input_dim=int(z_train[0].shape[0]),
            l2_alpha=cfg.training.l2_alpha,
            max_epochs=cfg.training.max_epochs,
            tol=cfg.training.tol,
            patience=cfg.training.patience,
            learning_rate=cfg.training.learning_rate,
            batch_size=cfg.training.batch_size,
            seed=cfg.seed_base + fold_idx,
        )
        trained = train(init_head(head_cfg), train_pairs, head_cfg)
        results.append(
            FoldResult(
                fold=fold_idx,
                train_subjects=tuple(train_subjects),
                test_subjects=tuple(test_subjects),
                accuracy=accuracy(trained, test_pairs),
                n_train_pairs=len(train_pairs),
                n_test_pairs=len(test_pairs),
                epochs_run=trained.epochs_run,
            )
        )

    used = [r.accuracy for r in results if not r.skipped]
    summary = {
        "mean_accuracy": float(np.mean(used)) if used else None,
        "folds_used": len(used),
        "folds_skipped": len(results) - len(used),
    }
    return results, summary


def _signed_ranks(d: np.ndarray) -> np.ndarray:
    """Average ranks of |d| (ties share the mean rank)."""
    mags = np.abs(d)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(len(mags), dtype=np.float64)
    i = 0
    sorted_mags = mags[order]
    while i < len(mags):
        j = i
        while j + 1 < len(mags) and sorted_mags[j + 1] == sorted_mags[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(
    a: Sequence[float], b: Sequence[float]
) -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped. Up to n = 20 the p-value is exact over all
    2^n sign assignments (ties handled through average ranks); larger samples
    use the normal approximation with tie correction. All-zero differences
    report p = 1.0 with the degenerate flag set.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape or a_arr.ndim != 1:
        raise ValueError("paired samples must be flat arrays of equal length")
    d = a_arr - b_arr
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", degenerate=True)

    ranks = _signed_ranks(d)
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_MAX_N:
        # Average ranks are multiples of 1/2; doubling gives exact integers.
        ranks2 = [int(round(2.0 * r)) for r in ranks]
        total2 = sum(ranks2)
        dist = np.zeros(total2 + 1, dtype=np.float64)
        dist[0] = 1.0
        for r2 in ranks2:
            shifted = np.zeros_like(dist)
            shifted[r2:] = dist[: total2 + 1 - r2]
            dist = dist + shifted
        w2 = int(round(2.0 * w_plus))
        count_le = float(dist[: w2 + 1].sum())
        count_ge = float(dist[w2:].sum())
        p = min(1.0, 2.0 * min(count_le, count_ge) / (2.0**n))
        return WilcoxonResult(w_plus, p, n, "exact")

    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # Tie correction over groups of equal |d|.
    _, counts = np.unique(np.abs(d), return_counts=True)
    var -= float(np.sum(counts.astype(np.float64) ** 3 - counts)) / 48.0
    if var <= 0:
        return WilcoxonResult(w_plus, 1.0, n, "approx", degenerate=True)
    z = (w_plus - mu) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(w_plus, min(1.0, p), n, "approx")


@dataclass(frozen=True)
class ReportCell:
    """Per-cell results feeding the rendered accuracy matrix."""

    modality: str
    model: str
    dimension: str
    window_len: float
    tau: float
    fold_indices: tuple[int, ...]
    fold_accuracies: tuple[float, ...]
    mean_accuracy: float | None

    @property
    def column(self) -> tuple[str, float, float]:
        return (self.dimension, self.window_len, self.tau)


def _on_par_markers(cells: list[ReportCell]) -> dict[int, str]:
    """Marker per cell index: 'best', 'on_par', or ''.

    Cells compete within their (modality, dimension, window, tau) group. The
    best cell has the highest mean; others are on par when the two-sided
    Wilcoxon p over common folds is >= 0.05.
    """
    markers = {i: "" for i in range(len(cells))}
    groups: dict[tuple, list[int]] = {}
    for i, cell in enumerate(cells):
        groups.setdefault((cell.modality, *cell.column), []).append(i)
    for idx_list in groups.values():
        scored = [i for i in idx_list if cells[i].mean_accuracy is not None]
        if not scored:
            continue
        best = max(scored, key=lambda i: cells[i].mean_accuracy)
        markers[best] = "best"
        best_by_fold = dict(
            zip(cells[best].fold_indices, cells[best].fold_accuracies)
        )
        for i in scored:
            if i == best:
                continue
            common = [f for f in cells[i].fold_indices if f in best_by_fold]
            if not common:
                continue
            mine = dict(zip(cells[i].fold_indices, cells[i].fold_accuracies))
            res = wilcoxon_signed_rank(
                [mine[f] for f in common], [best_by_fold[f] for f in common]
            )
            if res.p_value >= 0.05:
                markers[i] = "on_par"
    return markers


def _format_cell(mean: float | None, marker: str) -> str:
    if mean is None:
        return "n/a"
    text = f"{mean:.4f}"
    if marker == "best":
        return f"**{text}**"
    if marker == "on_par":
        return f"_{text}_"
    return text


def render_report(cells: Sequence[ReportCell]) -> tuple[str, str]:
    """Render the accuracy matrix as (markdown, csv).

    Rows are models grouped per modality; columns are (dimension, window,
    tau) combinations. Best cells are bold, statistically on-par cells are
    italicized. Output is deterministic for a given cell set.
    """
    cells = list(cells)
    markers = _on_par_markers(cells)

    columns = sorted({c.column for c in cells})
    modalities = sorted({c.modality for c in cells})

    md: list[str] = ["# Accuracy report", ""]
    md.append("Best cells are **bold**; cells statistically on par with the")
    md.append("best (two-sided Wilcoxon p >= 0.05 over folds) are _italic_.")
    md.append("")
    for modality in modalities:
        md.append(f"## {modality}")
        md.append("")
        header = ["model"] + [
            f"{dim} {win:g}s τ={tau:g}" for dim, win, tau in columns
        ]
        md.append("| " + " | ".join(header) + " |")
        md.append("|" + "---|" * len(header))
        models = sorted(
            {c.model for c in cells if c.modality == modality},
            key=lambda m: (m != "features", m),
        )
        by_key = {
            (c.modality, c.model, *c.column): i for i, c in enumerate(cells)
        }
        for model in models:
            row = [model]
            for col in columns:
                i = by_key.get((modality, model, *col))
                if i is None:
                    row.append("")
                else:
                    row.append(_format_cell(cells[i].mean_accuracy, markers[i]))
            md.append("| " + " | ".join(row) + " |")
        md.append("")

    csv_lines = ["modality,model,dimension,window_len,tau,mean_accuracy,n_folds,marker"]
    for i, c in sorted(
        enumerate(cells), key=lambda pair: (pair[1].modality, pair[1].model, pair[1].column)
    ):
        mean = "" if c.mean_accuracy is None else repr(c.mean_accuracy)
        csv_lines.append(
            f"{c.modality},{c.model},{c.dimension},{c.window_len:g},{c.tau:g},"
            f"{mean},{len(c.fold_accuracies)},{markers[i]}"
        )
    return "\n".join(md) + "\n", "\n".join(csv_lines) + "\n"
