import json
from dataclasses import replace

import numpy as np
import pytest

import argctx.experiment as experiment
from argctx.context import ContextSpec, LocalPosition
from argctx.corpus import make_folds
from argctx.errors import DataError
from argctx.experiment import (
    ExperimentConfig,
    Resources,
    SweepGrid,
    TrainingConfig,
    carve_dev,
    cross_validate,
    evaluate,
    load_experiment_config,
    load_sweep_grid,
    read_result_rows,
    significance,
    sweep,
    sweep_cells,
    train,
    write_curve_files,
    write_result_rows,
)
from argctx.features import bundled_lexicons
from argctx.model import build_examples, init_model
from argctx.synth import SynthConfig, generate, generate_vectors

TINY_MODEL = {
    "token_dim": 12,
    "filter_widths": [2],
    "filters_per_width": 4,
    "speaker_filter_widths": [2],
    "speaker_filters_per_width": 4,
    "lstm_hidden": 4,
}


def synth_resources(**overrides) -> Resources:
    params = dict(
        n_discussions=6,
        speakers_per_discussion=3,
        adus_per_discussion=40,
        vocab_size=30,
        marker_noise=0.0,
        vector_dim=12,
        seed=5,
    )
    params.update(overrides)
    config = SynthConfig(**params)
    return Resources(
        corpus=generate(config),
        lexicons=bundled_lexicons(),
        word_vectors=generate_vectors(config),
    )


def tiny_config(**overrides) -> ExperimentConfig:
    defaults = dict(
        context=ContextSpec(),
        training=TrainingConfig(epochs=2, batch_size=32, learning_rate=3e-3,
                                early_stop_patience=3, seed=7),
        folds=2,
        model=TINY_MODEL,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


# --- configuration -----------------------------------------------------------


def test_training_config_validation_and_round_trip():
    cfg = TrainingConfig(epochs=3, class_weights=(1.0, 2.0, 0.5))
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg
    assert TrainingConfig(epochs=0).epochs == 0  # evaluate-only runs allowed
    with pytest.raises(DataError, match="epochs"):
        TrainingConfig(epochs=-1)
    with pytest.raises(DataError, match="positive"):
        TrainingConfig(batch_size=0)
    with pytest.raises(DataError, match="class_weights"):
        TrainingConfig(class_weights=(1.0, 2.0))
    with pytest.raises(DataError, match="unknown training config"):
        TrainingConfig.from_dict({"epochs": 1, "momentum": 0.9})


def test_experiment_config_validation_and_round_trip():
    cfg = tiny_config(context=ContextSpec(local_size=2, speaker_size=3))
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    model_cfg = cfg.model_config()
    assert model_cfg.token_dim == 12 and model_cfg.context == cfg.context
    with pytest.raises(DataError, match="folds"):
        tiny_config(folds=1)
    with pytest.raises(DataError, match="pipeline"):
        tiny_config(pipeline="joint")
    with pytest.raises(DataError, match="unknown experiment config"):
        ExperimentConfig.from_dict({"folds": 2, "optimizer": "adam"})
    with pytest.raises(DataError, match="unknown path keys"):
        ExperimentConfig.from_dict({"paths": {"corpus": "x.csv", "cache": "/tmp"}})


def test_load_experiment_config_errors(tmp_path):
    with pytest.raises(DataError, match="cannot read config"):
        load_experiment_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataError, match="not valid JSON"):
        load_experiment_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(DataError, match="JSON object"):
        load_experiment_config(arr)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(tiny_config().to_dict()), encoding="utf-8")
    assert load_experiment_config(good) == tiny_config()


def test_carve_dev_takes_trailing_discussions():
    discs = list(synth_resources().corpus.discussions)
    fit, dev = carve_dev(discs)
    assert fit + dev == discs  # order preserved, dev from the tail
    assert len(dev) == 1
    fit20, dev20 = carve_dev(discs * 4)  # 24 discussions -> 10% is 2
    assert len(dev20) == 2
    both = carve_dev(discs[:2])
    assert (len(both[0]), len(both[1])) == (1, 1)
    with pytest.raises(DataError, match="at least 2"):
        carve_dev(discs[:1])


# --- training ----------------------------------------------------------------


def test_training_learns_separable_markers():
    # small vocabulary and roomy vectors keep the marker linearly separable
    resources = synth_resources(n_discussions=8, adus_per_discussion=50,
                                vocab_size=10, vector_dim=24)
    discs = list(resources.corpus.discussions)
    config = tiny_config(
        training=TrainingConfig(epochs=60, batch_size=32, learning_rate=3e-2,
                                early_stop_patience=12, seed=1),
        model={**TINY_MODEL, "token_dim": 24, "filters_per_width": 8},
    )
    trained = train(config, discs[:6], discs[6:7], resources)
    assert trained.history[-1]["train_loss"] < 0.1
    best = trained.history[trained.best_epoch - 1]
    assert best["dev_f_score"] > 0.95
    # early stopping kicked in once dev F plateaued
    assert len(trained.history) < 60

    test_examples = build_examples(discs[7:], config.context, trained.featurizer)
    conf = evaluate(trained.model, test_examples)
    assert np.trace(conf) / conf.sum() > 0.9


def test_featurizer_idf_sees_only_train_and_dev():
    resources = synth_resources()
    discs = list(resources.corpus.discussions)
    trained = train(tiny_config(), discs[:4], discs[4:5], resources)
    expected_docs = sum(len(d.adus) for d in discs[:5])
    assert trained.featurizer.idf.doc_count == expected_docs


def test_train_is_deterministic_in_the_seed():
    resources = synth_resources()
    discs = list(resources.corpus.discussions)
    runs = [train(tiny_config(), discs[:4], discs[4:5], resources) for _ in range(2)]
    assert runs[0].history == runs[1].history
    for key in runs[0].model.params:
        np.testing.assert_array_equal(runs[0].model.params[key], runs[1].model.params[key])
    other = train(tiny_config(), discs[:4], discs[4:5], resources, seed=99)
    assert other.history != runs[0].history


def test_zero_epochs_returns_initial_parameters():
    resources = synth_resources()
    discs = list(resources.corpus.discussions)
    config = tiny_config(training=TrainingConfig(epochs=0, seed=3))
    trained = train(config, discs[:4], discs[4:5], resources)
    assert trained.history == [] and trained.best_epoch == 0
    fresh = init_model(config.model_config(), seed=3)
    for key in fresh.params:
        np.testing.assert_array_equal(trained.model.params[key], fresh.params[key])


def test_train_rejects_empty_splits():
    resources = synth_resources()
    discs = list(resources.corpus.discussions)
    with pytest.raises(DataError, match="non-empty"):
        train(tiny_config(), [], discs[:1], resources)
    with pytest.raises(DataError, match="non-empty"):
        train(tiny_config(), discs[:1], [], resources)


def test_evaluate_requires_labels():
    resources = synth_resources()
    discs = list(resources.corpus.discussions)
    trained = train(tiny_config(), discs[:4], discs[4:5], resources)
    examples = build_examples(discs[5:], ContextSpec(), trained.featurizer,
                              require_labels=False)
    stripped = [replace(ex, label=None) for ex in examples]
    with pytest.raises(DataError, match="labeled"):
        evaluate(trained.model, stripped)


# --- cross-validation ----------------------------------------------------------


def test_cross_validation_covers_every_adu_once():
    resources = synth_resources()
    config = tiny_config()
    report = cross_validate(config, resources, fold_seed=21)
    assert [fm.fold for fm in report.per_fold] == [0, 1]
    assert report.confusion.sum() == resources.corpus.n_adus
    np.testing.assert_array_equal(
        report.confusion,
        np.sum([fm.confusion for fm in report.per_fold], axis=0),
    )


def test_cross_validation_is_reproducible():
    resources = synth_resources()
    a = cross_validate(tiny_config(), resources, fold_seed=21)
    b = cross_validate(tiny_config(), resources, fold_seed=21)
    np.testing.assert_array_equal(a.confusion, b.confusion)
    assert a.kappa == b.kappa
    assert [f.to_dict() for f in a.per_fold] == [f.to_dict() for f in b.per_fold]


def test_cross_validation_never_builds_idf_from_test_folds(monkeypatch):
    resources = synth_resources()
    config = tiny_config()
    fold_seed = 21
    seen: list[set[str]] = []
    real = experiment.make_featurizer

    def spy(cfg, res, idf_discussions):
        seen.append({d.id for d in idf_discussions})
        return real(cfg, res, idf_discussions)

    monkeypatch.setattr(experiment, "make_featurizer", spy)
    cross_validate(config, resources, fold_seed=fold_seed)

    plan = make_folds(resources.corpus, config.folds, fold_seed)
    assert len(seen) == config.folds
    for fold, idf_ids in enumerate(seen):
        train_d, test_d = plan.split(resources.corpus, fold)
        assert idf_ids == {d.id for d in train_d}
        assert idf_ids.isdisjoint({d.id for d in test_d})


# --- significance ----------------------------------------------------------------


def test_significance_exact_enumeration():
    assert significance([0.5] * 10, [0.5] * 10) == 1.0
    base = np.linspace(0.5, 0.6, 10)
    assert significance(base + 0.05, base) == pytest.approx(2 / 1024)
    assert significance(base, base + 0.05) == pytest.approx(2 / 1024)
    # hand-enumerated three-pair case: |sum| >= 6 for 2 of 8 sign patterns
    assert significance([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]) == pytest.approx(2 / 8)
    # zero differences always reach the observed statistic
    assert significance([1.0, 0.3, 0.3], [0.0, 0.3, 0.3]) == 1.0


def test_significance_validates_input():
    with pytest.raises(DataError, match="share length"):
        significance([0.1, 0.2], [0.1])
    with pytest.raises(DataError, match="at least 2"):
        significance([0.1], [0.2])


def test_significance_monte_carlo_beyond_exact_limit():
    n = 25
    rng = np.random.default_rng(8)
    base = rng.uniform(0.4, 0.6, size=n)
    assert significance(base, base) == 1.0
    p = significance(base + 0.05, base)
    assert 0.0 < p < 1e-4
    assert p == significance(base + 0.05, base)  # seeded draw, stable


# --- sweep harness ----------------------------------------------------------------


def test_sweep_cells_order_and_dedup():
    grid = SweepGrid.from_dict({
        "local_positions": ["prior"],
        "local_sizes": [1, 2, 2],
        "speaker_sizes": [1],
        "local_attention": True,
    })
    cells = sweep_cells(grid)
    assert cells[0] == ("hybrid", ContextSpec())
    specs = [spec for _, spec in cells]
    assert specs[1:3] == [
        ContextSpec(local_size=1, local_position=LocalPosition.PRIOR),
        ContextSpec(local_size=2, local_position=LocalPosition.PRIOR),
    ]
    assert specs[3] == ContextSpec(speaker_size=1)
    assert specs[4].local_attention and len(cells) == 5
    with pytest.raises(DataError, match="unknown sweep grid"):
        SweepGrid.from_dict({"sizes": [1]})


def test_result_rows_round_trip(tmp_path):
    rows = [
        {"pipeline": "hybrid", "local_position": "both", "local_size": 2,
         "speaker_size": 0, "local_attention": False, "speaker_attention": True,
         "fold": 0, "kappa": 1 / 3, "precision": 5 / 9, "recall": 17 / 30,
         "f_score": 331 / 594, "seed": 41},
    ]
    path = tmp_path / "results.csv"
    write_result_rows(path, rows)
    assert read_result_rows(path) == rows  # repr round-trips floats exactly

    (tmp_path / "híjacked.csv").write_text("kappa,fold\n1,2\n", encoding="utf-8")
    with pytest.raises(DataError, match="expected result columns"):
        read_result_rows(tmp_path / "híjacked.csv")


def test_curve_files_from_aggregate_rows(tmp_path):
    def row(fold, local_size=0, speaker_size=0, position="both", **extra):
        base = {"pipeline": "hybrid", "local_position": position,
                "local_size": local_size, "speaker_size": speaker_size,
                "local_attention": False, "speaker_attention": False,
                "fold": fold, "kappa": 0.5, "precision": 0.5, "recall": 0.5,
                "f_score": 0.5, "seed": 1}
        base.update(extra)
        return base

    rows = [
        row(-1),  # baseline: not part of any curve
        row(0, local_size=2, position="prior"),  # per-fold rows skipped
        row(-1, local_size=2, position="prior", kappa=0.61),
        row(-1, local_size=1, position="prior", kappa=0.58),
        row(-1, speaker_size=10, kappa=0.57),
        row(-1, local_size=6, local_attention=True),  # attention excluded
    ]
    written = {p.name for p in write_curve_files(tmp_path, rows)}
    assert written == {"curve_local_hybrid.csv", "curve_speaker_hybrid.csv"}
    local = (tmp_path / "curve_local_hybrid.csv").read_text(encoding="utf-8").splitlines()
    assert local[0] == "series,context_size,kappa,precision,recall,f_score"
    assert local[1].startswith("prior,1,0.58") and local[2].startswith("prior,2,0.61")
    speaker = (tmp_path / "curve_speaker_hybrid.csv").read_text(encoding="utf-8")
    assert "speaker,10,0.57" in speaker


@pytest.fixture(scope="module")
def sweep_setup(tmp_path_factory):
    resources = synth_resources(n_discussions=4, adus_per_discussion=30)
    corpus_path = tmp_path_factory.mktemp("sweepdata") / "corpus.csv"
    vectors_path = corpus_path.with_name("vectors.txt")
    from argctx.corpus import serialize_corpus
    from argctx.embeddings import save_word_vectors

    serialize_corpus(resources.corpus, corpus_path)
    save_word_vectors(resources.word_vectors, vectors_path)
    config = tiny_config(
        training=TrainingConfig(epochs=1, batch_size=32, learning_rate=3e-3,
                                early_stop_patience=3, seed=7),
        corpus_path=str(corpus_path),
        vectors_path=str(vectors_path),
    )
    grid = SweepGrid.from_dict({"local_positions": ["prior"], "local_sizes": [1],
                                "speaker_sizes": [2]})
    return config, grid


def test_sweep_writes_cells_results_and_curves(tmp_path, sweep_setup):
    config, grid = sweep_setup
    out = tmp_path / "run"
    rows = sweep(config, grid, out)
    # 3 cells x (2 folds + 1 aggregate)
    assert len(rows) == 9
    assert (out / "results.csv").exists()
    assert (out / "sweep_manifest.json").exists()
    assert sorted(p.name for p in (out / "cells").glob("*.csv")) == [
        "cell_0000.csv", "cell_0001.csv", "cell_0002.csv",
    ]
    assert read_result_rows(out / "results.csv") == rows
    assert (out / "curve_local_hybrid.csv").exists()
    assert (out / "curve_speaker_hybrid.csv").exists()

    manifest = json.loads((out / "sweep_manifest.json").read_text(encoding="utf-8"))
    assert [c["context"]["local_size"] for c in manifest["cells"]] == [0, 1, 0]
    # per-cell seeds are recorded so any cell can be reproduced standalone
    assert len({c["seed"] for c in manifest["cells"]}) == 3


def test_sweep_is_deterministic_across_directories(tmp_path, sweep_setup):
    config, grid = sweep_setup
    sweep(config, grid, tmp_path / "a")
    sweep(config, grid, tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_bytes() == \
        (tmp_path / "b" / "results.csv").read_bytes()


def test_sweep_resumes_from_finished_cells(tmp_path, sweep_setup):
    config, grid = sweep_setup
    out = tmp_path / "run"
    first = sweep(config, grid, out)
    (out / "cells" / "cell_0001.csv").unlink()
    (out / "results.csv").unlink()
    again = sweep(config, grid, out)
    assert again == first

    with pytest.raises(DataError, match="manifest mismatch"):
        sweep(config, SweepGrid.from_dict({"local_sizes": []}), out)


def test_sweep_cell_reproducible_from_manifest(tmp_path, sweep_setup):
    config, grid = sweep_setup
    out = tmp_path / "run"
    rows = sweep(config, grid, out)
    manifest = json.loads((out / "sweep_manifest.json").read_text(encoding="utf-8"))
    entry = manifest["cells"][1]
    cell_config = replace(
        config,
        context=ContextSpec.from_dict(entry["context"]),
        training=replace(config.training, seed=entry["seed"]),
    )
    report = cross_validate(cell_config, fold_seed=config.training.seed)
    recorded = [r for r in rows
                if r["local_size"] == 1 and r["fold"] >= 0]
    assert [r["kappa"] for r in recorded] == [fm.kappa for fm in report.per_fold]
    assert [r["f_score"] for r in recorded] == [fm.f_score for fm in report.per_fold]


def test_load_sweep_grid_errors(tmp_path):
    with pytest.raises(DataError, match="cannot read grid"):
        load_sweep_grid(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("]", encoding="utf-8")
    with pytest.raises(DataError, match="not valid JSON"):
        load_sweep_grid(bad)
    good = tmp_path / "grid.json"
    good.write_text(json.dumps({"speaker_sizes": [5, 10]}), encoding="utf-8")
    assert load_sweep_grid(good).speaker_sizes == (5, 10)
