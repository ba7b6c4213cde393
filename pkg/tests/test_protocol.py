from __future__ import annotations

import itertools

import numpy as np
import pytest

import synthdata
from lasca import ingest, protocol
from lasca.encoding import EncoderSpec, build_encoder
from lasca.lexicon import load_lexicon
from lasca.protocol import (
    ExperimentConfig,
    ExperimentData,
    FoldResult,
    ReportCell,
    random_splits,
    render_report,
    run_experiment,
    subject_folds,
    wilcoxon_signed_rank,
)


def brute_force_wilcoxon(a, b):
    """Full 2^n enumeration of the signed-rank null, average ranks for ties."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 1.0
    mags = np.abs(d)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(n)
    i = 0
    sm = mags[order]
    while i < n:
        j = i
        while j + 1 < n and sm[j + 1] == sm[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    w_obs = ranks[d > 0].sum()
    count_le = count_ge = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for s, r in zip(signs, ranks) if s)
        if w <= w_obs:
            count_le += 1
        if w >= w_obs:
            count_ge += 1
    return min(1.0, 2.0 * min(count_le, count_ge) / 2.0**n)


# ------------------------------------------------------------------ splits


def test_leave_one_subject_out():
    subjects = [f"s{i:02d}" for i in range(15)]
    folds = subject_folds(subjects, 15, seed=0)
    assert len(folds) == 15
    assert all(len(f) == 1 for f in folds)
    assert sorted(s for f in folds for s in f) == subjects


def test_sixteen_subjects_fifteen_folds():
    subjects = [f"s{i:02d}" for i in range(16)]
    folds = subject_folds(subjects, 15, seed=1)
    sizes = sorted(len(f) for f in folds)
    assert sizes == [1] * 14 + [2]


def test_folds_deterministic_and_seed_sensitive():
    subjects = [f"s{i}" for i in range(9)]
    assert subject_folds(subjects, 3, seed=5) == subject_folds(subjects, 3, seed=5)
    assert subject_folds(subjects, 3, seed=5) != subject_folds(subjects, 3, seed=6)


def test_too_many_folds_rejected():
    with pytest.raises(ValueError):
        subject_folds(["a", "b"], 3, seed=0)


def test_random_splits_disjoint_and_deterministic():
    subjects = [f"s{i}" for i in range(10)]
    splits = random_splits(subjects, 5, seed=3, test_fraction=0.2)
    assert splits == random_splits(subjects, 5, seed=3, test_fraction=0.2)
    for train, test in splits:
        assert set(train) & set(test) == set()
        assert len(test) == 2
        assert sorted(train + test) == subjects


# ---------------------------------------------------------------- wilcoxon


def test_wilcoxon_identical_samples():
    res = wilcoxon_signed_rank([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.p_value == 1.0
    assert res.degenerate


def test_wilcoxon_n5_all_positive():
    res = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.p_value == pytest.approx(0.0625, abs=1e-12)
    assert res.statistic == 15.0
    assert res.method == "exact"


def test_wilcoxon_symmetric_under_swap():
    rng = np.random.default_rng(0)
    a = rng.normal(size=10)
    b = rng.normal(size=10)
    assert wilcoxon_signed_rank(a, b).p_value == wilcoxon_signed_rank(b, a).p_value


def test_wilcoxon_matches_bruteforce_with_ties():
    cases = [
        ([1, 1, 2, 3, 3, 4], [0, 0, 0, 0, 0, 0]),
        ([0.5, 0.5, -0.5, 1.0, 2.0], [0, 0, 0, 0, 0]),
        ([1, 2, 2, 2, 5, 5, 7], [2, 1, 4, 0, 0, 9, 7]),
    ]
    for a, b in cases:
        got = wilcoxon_signed_rank(a, b).p_value
        want = brute_force_wilcoxon(a, b)
        assert got == pytest.approx(want, abs=1e-12)


def test_wilcoxon_approx_branch():
    rng = np.random.default_rng(4)
    a = rng.normal(size=30)
    b = a + rng.normal(scale=0.1, size=30) + 0.2
    res = wilcoxon_signed_rank(a, b)
    assert res.method == "approx"
    assert 0.0 < res.p_value < 0.05


def test_wilcoxon_shape_checked():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2], [1, 2, 3])


# ----------------------------------------------------------- experiments


def small_data(tmp_path, decouple=False, seed=77):
    spec = synthdata.PlantedSpec(
        n_subjects=4, segments=9, seed=seed, decouple=decouple
    )
    paths = synthdata.write_dataset(spec, tmp_path)
    frames = ingest.load_frames(paths["frames_facial"], "facial")
    anns = ingest.load_annotations(paths["annotations"])
    windows = ingest.segment_windows(frames, anns, 3.0)
    lex = load_lexicon(paths["lexicon_facial"])
    encoder = build_encoder(EncoderSpec(name="hashing-96", dim=96))
    return ExperimentData(
        windows=windows, lexicons={"facial": lex}, encoder=encoder
    )


def small_config(representation="fused", folds=4):
    return ExperimentConfig(
        dimension="valence",
        window_len=3.0,
        tau=0.2,
        modality="visual",
        representation=representation,
        encoder=EncoderSpec(name="hashing-96", dim=96),
        folds_or_seeds=folds,
        seed_base=5,
    )


def test_run_experiment_smoke(tmp_path):
    data = small_data(tmp_path)
    results, summary = run_experiment(small_config(), data)
    assert len(results) == 4
    assert summary["folds_used"] + summary["folds_skipped"] == 4
    assert 0.0 <= summary["mean_accuracy"] <= 1.0
    for r in results:
        assert set(r.train_subjects) & set(r.test_subjects) == set()
        if not r.skipped:
            assert r.n_train_pairs > 0 and r.n_test_pairs > 0
            assert r.epochs_run <= 25


def test_run_experiment_deterministic(tmp_path):
    data = small_data(tmp_path)
    cfg = small_config()
    r1, s1 = run_experiment(cfg, data)
    r2, s2 = run_experiment(cfg, data)
    assert [r.accuracy for r in r1] == [r.accuracy for r in r2]
    assert s1 == s2


def outlier_windows():
    """Three subjects; s_hot's windows extend every feature's range, so
    pooled statistics provably differ from any fold that holds s_hot out."""
    windows = []
    traces = {
        "s_a": [0.1, 0.3, 0.1, 0.3],
        "s_b": [0.3, 0.1, 0.3, 0.1],
        "s_hot": [0.1, 0.9, 0.1, 0.9],
    }
    scale = {"s_a": 1.0, "s_b": 2.0, "s_hot": 9.0}
    for subject, values in traces.items():
        for i, a in enumerate(values):
            windows.append(
                ingest.FeatureWindow(
                    subject_id=subject,
                    video_id=f"{subject}_v",
                    t_start=float(i * 3),
                    t_end=float(i * 3 + 3),
                    x_raw=np.array([a * scale[subject], scale[subject]]),
                    a_valence=a,
                    a_arousal=a,
                    feature_names=("f0", "f1"),
                    blocks=(("facial", 0, 2),),
                )
            )
    return windows


def test_normalizer_fitted_on_train_only(monkeypatch):
    from lasca.lexicon import SemanticLexicon

    windows = outlier_windows()
    data = ExperimentData(
        windows=windows,
        lexicons={
            "facial": SemanticLexicon(
                tuple((f, f"cue {f}") for f in ("f0", "f1")), "facial", "affect_aware"
            )
        },
        encoder=build_encoder(EncoderSpec(name="hashing-32", dim=32)),
    )
    cfg = ExperimentConfig(
        dimension="valence",
        window_len=3.0,
        tau=0.2,
        modality="visual",
        representation="features_only",
        encoder=EncoderSpec(name="hashing-32", dim=32),
        folds_or_seeds=3,
        seed_base=1,
    )
    seen: list[set[str]] = []
    real_fit = protocol.fit_normalizer

    def spy(train_windows):
        seen.append({w.subject_id for w in train_windows})
        return real_fit(train_windows)

    monkeypatch.setattr(protocol, "fit_normalizer", spy)
    results, _ = run_experiment(cfg, data)
    assert seen, "normalizer never fitted"
    for fitted_subjects, result in zip(seen, results):
        assert fitted_subjects == set(result.train_subjects)
        assert fitted_subjects.isdisjoint(result.test_subjects)
    # The guard is observable: pooling in the held-out outlier would change
    # the statistics of its fold.
    hot_out = [w for w in windows if w.subject_id != "s_hot"]
    assert not np.array_equal(real_fit(hot_out).maxs, real_fit(windows).maxs)


def test_fold_with_unpaired_subject_is_skipped():
    # Subject s_flat has constant affect, so its test fold yields no pairs.
    windows = []
    for subject, values in (
        ("s_a", [0.1, 0.3, 0.5, 0.3]),
        ("s_b", [0.5, 0.3, 0.1, 0.3]),
        ("s_flat", [0.4, 0.4, 0.4, 0.4]),
    ):
        for i, a in enumerate(values):
            windows.append(
                ingest.FeatureWindow(
                    subject_id=subject,
                    video_id=f"{subject}_v",
                    t_start=float(i * 3),
                    t_end=float(i * 3 + 3),
                    x_raw=np.array([a, 1.0 - a]),
                    a_valence=a,
                    a_arousal=a,
                    feature_names=("f0", "f1"),
                    blocks=(("facial", 0, 2),),
                )
            )
    lex_entries = tuple((f, f"cue {f}") for f in ("f0", "f1"))
    from lasca.lexicon import SemanticLexicon

    data = ExperimentData(
        windows=windows,
        lexicons={"facial": SemanticLexicon(lex_entries, "facial", "affect_aware")},
        encoder=build_encoder(EncoderSpec(name="hashing-32", dim=32)),
    )
    cfg = ExperimentConfig(
        dimension="valence",
        window_len=3.0,
        tau=0.2,
        modality="visual",
        representation="fused",
        encoder=EncoderSpec(name="hashing-32", dim=32),
        folds_or_seeds=3,
        seed_base=1,
    )
    results, summary = run_experiment(cfg, data)
    skipped = [r for r in results if r.skipped]
    assert len(skipped) == 1
    assert skipped[0].skip_reason == "no test pairs"
    assert skipped[0].test_subjects == ("s_flat",)
    assert summary["folds_used"] == 2
    assert summary["folds_skipped"] == 1


def test_fold_result_rejects_subject_overlap():
    with pytest.raises(ValueError, match="leakage"):
        FoldResult(
            fold=0,
            train_subjects=("a", "b"),
            test_subjects=("b",),
            accuracy=0.5,
            n_train_pairs=1,
            n_test_pairs=1,
            epochs_run=1,
        )


# ------------------------------------------------------------------ report


def cell(model, mean, accs, modality="visual", dim="valence", win=3.0, tau=0.1):
    return ReportCell(
        modality=modality,
        model=model,
        dimension=dim,
        window_len=win,
        tau=tau,
        fold_indices=tuple(range(len(accs))),
        fold_accuracies=tuple(accs),
        mean_accuracy=mean,
    )


def test_report_single_cell_is_best():
    md, csv_text = render_report([cell("features", 0.7, [0.7] * 5)])
    assert "**0.7000**" in md
    assert "visual,features,valence,3,0.1,0.7,5,best" in csv_text


def test_report_identical_cells_on_par():
    accs = [0.6, 0.7, 0.8, 0.7, 0.6]
    md, csv_text = render_report(
        [cell("features", 0.68, accs), cell("enc (F)", 0.68, accs)]
    )
    assert md.count("**0.6800**") == 1
    assert "_0.6800_" in md
    lines = csv_text.strip().splitlines()
    markers = {line.split(",")[1]: line.split(",")[-1] for line in lines[1:]}
    assert sorted(markers.values()) == ["best", "on_par"]


def test_report_regeneration_is_byte_identical():
    cells = [
        cell("features", 0.61, [0.6, 0.62, 0.61]),
        cell("enc (F)", 0.8, [0.79, 0.81, 0.8]),
        cell("enc (F)", 0.75, [0.7, 0.8, 0.75], tau=0.2),
    ]
    assert render_report(cells) == render_report(cells)


def test_report_clearly_worse_cell_not_on_par():
    best = cell("enc (F)", 0.9, [0.9, 0.91, 0.89, 0.9, 0.92, 0.88])
    worse = cell("features", 0.5, [0.5, 0.52, 0.49, 0.51, 0.5, 0.48])
    md, csv_text = render_report([best, worse])
    row = [l for l in csv_text.splitlines() if l.startswith("visual,features")][0]
    assert row.endswith(",")  # empty marker


def test_run_experiment_text_only(tmp_path):
    data = small_data(tmp_path)
    results, summary = run_experiment(small_config(representation="text_only"), data)
    assert summary["folds_used"] >= 1
    assert 0.0 <= summary["mean_accuracy"] <= 1.0


def test_run_experiment_random_split_mode(tmp_path):
    data = small_data(tmp_path)
    cfg = ExperimentConfig(
        dimension="valence",
        window_len=3.0,
        tau=0.2,
        modality="visual",
        representation="features_only",
        encoder=EncoderSpec(name="hashing-96", dim=96),
        folds_or_seeds=5,
        seed_base=2,
        split_mode="random",
        test_fraction=0.25,
    )
    results, summary = run_experiment(cfg, data)
    assert len(results) == 5
    for r in results:
        assert set(r.train_subjects) & set(r.test_subjects) == set()
        assert len(r.test_subjects) == 1  # 25% of 4 subjects
    r2, s2 = run_experiment(cfg, data)
    assert [r.accuracy for r in results] == [r.accuracy for r in r2]
