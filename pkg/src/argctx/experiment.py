"""Training, ten-fold cross-validation, metrics, significance testing, and
the context-sweep harness.

Aggregation policy: headline metrics come from the confusion matrix pooled
across folds; per-fold metrics are retained for the paired significance
test.  Macro-averaged P/R/F is the default report, micro is emitted
alongside.  All randomness derives from the experiment seed: fold
assignment uses it directly, each fold trains with a seed spawned from
(seed, fold), and each sweep cell runs with a seed spawned from
(seed, cell index) so any cell can be reproduced standalone.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from argctx.context import ContextSpec, LocalPosition, MAX_SPEAKER_SIZE
from argctx.corpus import Corpus, Discussion, make_folds, parse_corpus
from argctx.embeddings import (
    PrecomputedAduEmbeddings,
    WordVectorTable,
    load_precomputed,
    load_word_vectors,
)
from argctx.errors import DataError
from argctx.features import LexiconBundle, bundled_lexicons, compute_idf, load_lexicons
from argctx.model import (
    PIPELINE_HYBRID,
    PIPELINE_POOLED,
    PIPELINES,
    HybridFeaturizer,
    Model,
    ModelConfig,
    PooledFeaturizer,
    build_examples,
    init_model,
    loss_and_gradients,
    predict,
    restore_params,
    snapshot_params,
)
from argctx.neural import AdamConfig, AdamState, optimizer_step

N_CLASSES = 3


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    early_stop_patience: int = 10
    seed: int = 0
    class_weights: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if self.batch_size <= 0 or self.learning_rate <= 0 or self.early_stop_patience <= 0:
            raise DataError("batch_size, learning_rate and early_stop_patience must be positive")
        if self.class_weights is not None and len(self.class_weights) != N_CLASSES:
            raise DataError(f"class_weights needs {N_CLASSES} entries")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "class_weights": None if self.class_weights is None else list(self.class_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown training config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if kwargs.get("class_weights") is not None:
            kwargs["class_weights"] = tuple(float(w) for w in kwargs["class_weights"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str = PIPELINE_HYBRID
    context: ContextSpec = field(default_factory=ContextSpec)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    folds: int = 10
    corpus_path: str | None = None
    lexicons_path: str | None = None  # None -> bundled stand-in lexicons
    vectors_path: str | None = None
    embeddings_path: str | None = None
    model: dict = field(default_factory=dict)  # ModelConfig overrides

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise DataError(f"unknown pipeline {self.pipeline!r}; use one of {PIPELINES}")
        if self.folds < 2:
            raise DataError("folds must be >= 2")

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(
            {"pipeline": self.pipeline, "context": self.context.to_dict(), **self.model}
        )

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "context": self.context.to_dict(),
            "training": self.training.to_dict(),
            "folds": self.folds,
            "paths": {
                "corpus": self.corpus_path,
                "lexicons": self.lexicons_path,
                "vectors": self.vectors_path,
                "embeddings": self.embeddings_path,
            },
            "model": dict(self.model),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"pipeline", "context", "training", "folds", "paths", "model"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown experiment config keys: {sorted(unknown)}")
        paths = d.get("paths", {})
        bad_paths = set(paths) - {"corpus", "lexicons", "vectors", "embeddings"}
        if bad_paths:
            raise DataError(f"unknown path keys: {sorted(bad_paths)}")
        return cls(
            pipeline=d.get("pipeline", PIPELINE_HYBRID),
            context=ContextSpec.from_dict(d.get("context", {})),
            training=TrainingConfig.from_dict(d.get("training", {})),
            folds=int(d.get("folds", 10)),
            corpus_path=paths.get("corpus"),
            lexicons_path=paths.get("lexicons"),
            vectors_path=paths.get("vectors"),
            embeddings_path=paths.get("embeddings"),
            model=dict(d.get("model", {})),
        )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(raw)


@dataclass
class Resources:
    """Loaded inputs shared across folds; IDF is NOT here on purpose, it is
    recomputed per fold from training data only."""

    corpus: Corpus
    lexicons: LexiconBundle
    word_vectors: WordVectorTable | None = None
    embeddings: PrecomputedAduEmbeddings | None = None


def load_resources(config: ExperimentConfig) -> Resources:
    if config.corpus_path is None:
        raise DataError("config has no corpus path")
    corpus = parse_corpus(config.corpus_path)
    lexicons = (
        load_lexicons(config.lexicons_path) if config.lexicons_path else bundled_lexicons()
    )
    word_vectors = None
    embeddings = None
    if config.pipeline == PIPELINE_HYBRID:
        if config.vectors_path is None:
            raise DataError("hybrid pipeline requires a word-vector path")
        word_vectors = load_word_vectors(config.vectors_path)
    else:
        if config.embeddings_path is None:
            raise DataError("pooled_embedding pipeline requires an embeddings path")
        embeddings = load_precomputed(config.embeddings_path, corpus)
    return Resources(
        corpus=corpus, lexicons=lexicons, word_vectors=word_vectors, embeddings=embeddings
    )


def make_featurizer(
    config: ExperimentConfig, resources: Resources, idf_discussions: list[Discussion]
):
    if config.pipeline == PIPELINE_HYBRID:
        idf = compute_idf([adu for d in idf_discussions for adu in d.adus])
        return HybridFeaturizer(resources.lexicons, idf, resources.word_vectors)
    return PooledFeaturizer(resources.embeddings)


# ---------------------------------------------------------------------------
# Metrics


def confusion_matrix(gold, predicted, n_classes: int = N_CLASSES) -> np.ndarray:
    gold = np.asarray(gold, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if gold.shape != predicted.shape:
        raise DataError(f"gold/predicted length mismatch: {gold.shape} vs {predicted.shape}")
    conf = np.zeros((n_classes, n_classes), dtype=int)
    for g, p in zip(gold, predicted):
        conf[g, p] += 1
    return conf


def cohen_kappa(confusion) -> float:
    conf = np.asarray(confusion, dtype=float)
    n = conf.sum()
    if n <= 0:
        raise DataError("empty confusion matrix")
    p_o = np.trace(conf) / n
    p_e = float(conf.sum(axis=1) @ conf.sum(axis=0)) / (n * n)
    if p_e == 1.0:
        # only reachable when all mass sits in one diagonal cell, so p_o = 1
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))


def prf(confusion) -> tuple[float, float, float]:
    """Macro-averaged precision, recall, F1; zero-denominator classes score 0."""
    conf = np.asarray(confusion, dtype=float)
    if conf.sum() <= 0:
        raise DataError("empty confusion matrix")
    ps, rs, fs = [], [], []
    for c in range(conf.shape[0]):
        tp = conf[c, c]
        col = conf[:, c].sum()
        row = conf[c, :].sum()
        p = tp / col if col > 0 else 0.0
        r = tp / row if row > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs))


def micro_prf(confusion) -> tuple[float, float, float]:
    """Micro-averaged P/R/F; for single-label data all three equal accuracy."""
    conf = np.asarray(confusion, dtype=float)
    n = conf.sum()
    if n <= 0:
        raise DataError("empty confusion matrix")
    acc = float(np.trace(conf) / n)
    return acc, acc, acc


@dataclass
class FoldMetrics:
    fold: int
    confusion: np.ndarray
    kappa: float
    precision: float
    recall: float
    f_score: float

    @classmethod
    def from_confusion(cls, fold: int, confusion: np.ndarray) -> "FoldMetrics":
        p, r, f = prf(confusion)
        return cls(fold=fold, confusion=confusion, kappa=cohen_kappa(confusion),
                   precision=p, recall=r, f_score=f)

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "confusion": np.asarray(self.confusion, dtype=int).tolist(),
            "kappa": self.kappa,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
        }


@dataclass
class MetricsReport:
    confusion: np.ndarray  # pooled across folds, rows gold / columns predicted
    kappa: float
    precision: float
    recall: float
    f_score: float
    micro_precision: float
    micro_recall: float
    micro_f_score: float
    per_fold: list[FoldMetrics]

    @classmethod
    def from_folds(cls, per_fold: list[FoldMetrics]) -> "MetricsReport":
        pooled = np.sum([np.asarray(f.confusion, dtype=int) for f in per_fold], axis=0)
        p, r, f = prf(pooled)
        mp, mr, mf = micro_prf(pooled)
        return cls(
            confusion=pooled, kappa=cohen_kappa(pooled),
            precision=p, recall=r, f_score=f,
            micro_precision=mp, micro_recall=mr, micro_f_score=mf,
            per_fold=per_fold,
        )

    def to_dict(self) -> dict:
        return {
            "confusion": np.asarray(self.confusion, dtype=int).tolist(),
            "kappa": self.kappa,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f_score": self.micro_f_score,
            "per_fold": [f.to_dict() for f in self.per_fold],
        }


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainedModel:
    model: Model
    featurizer: object
    history: list[dict]
    best_epoch: int


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def evaluate(model: Model, examples: list) -> np.ndarray:
    gold = [ex.label for ex in examples]
    if any(g is None for g in gold):
        raise DataError("evaluation requires labeled examples")
    return confusion_matrix(gold, predict(model, examples))


def train(
    config: ExperimentConfig,
    train_discussions: list[Discussion],
    dev_discussions: list[Discussion],
    resources: Resources,
    seed: int | None = None,
) -> TrainedModel:
    """Mini-batch training with early stopping on dev macro-F.

    The featurizer (and its IDF table) is built from the train+dev
    discussions only, and is returned so callers evaluate held-out data
    under the same, training-side statistics.
    """
    if not train_discussions or not dev_discussions:
        raise DataError("train and dev splits must both be non-empty")
    tcfg = config.training
    seed = tcfg.seed if seed is None else seed
    featurizer = make_featurizer(config, resources, train_discussions + dev_discussions)
    train_examples = build_examples(train_discussions, config.context, featurizer)
    dev_examples = build_examples(dev_discussions, config.context, featurizer)

    model = init_model(config.model_config(), seed=seed)
    adam_state = AdamState.for_params(model.params)
    adam_config = AdamConfig(learning_rate=tcfg.learning_rate)
    weights = None if tcfg.class_weights is None else np.asarray(tcfg.class_weights)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    best = snapshot_params(model)
    best_f = -1.0
    best_epoch = 0
    bad = 0
    history: list[dict] = []
    n = len(train_examples)
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            batch = [train_examples[i] for i in order[start : start + tcfg.batch_size]]
            loss, grads = loss_and_gradients(model, batch, weights)
            optimizer_step(model.params, grads, adam_state, adam_config)
            losses.append(loss)
        dev_conf = evaluate(model, dev_examples)
        _, _, dev_f = prf(dev_conf)
        dev_kappa = cohen_kappa(dev_conf)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)),
             "dev_f_score": dev_f, "dev_kappa": dev_kappa}
        )
        if dev_f > best_f:
            best = snapshot_params(model)
            best_f = dev_f
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad >= tcfg.early_stop_patience:
                break
    restore_params(model, best)
    return TrainedModel(model=model, featurizer=featurizer, history=history, best_epoch=best_epoch)


def carve_dev(train_discussions: list[Discussion]) -> tuple[list[Discussion], list[Discussion]]:
    """Last ~10% of the training fold's discussions become the dev split."""
    if len(train_discussions) < 2:
        raise DataError("need at least 2 training discussions to carve a dev split")
    dev_n = max(1, round(0.1 * len(train_discussions)))
    dev_n = min(dev_n, len(train_discussions) - 1)
    return train_discussions[:-dev_n], train_discussions[-dev_n:]


def cross_validate(
    config: ExperimentConfig,
    resources: Resources | None = None,
    fold_seed: int | None = None,
) -> MetricsReport:
    """Discussion-level k-fold CV; IDF and features rebuilt per fold from
    training data only; headline metrics from the pooled confusion matrix.

    fold_seed pins the fold assignment independently of the training seed
    so sweep cells with distinct seeds stay paired fold-for-fold.
    """
    if resources is None:
        resources = load_resources(config)
    corpus = resources.corpus
    plan = make_folds(corpus, config.folds, config.training.seed if fold_seed is None else fold_seed)
    per_fold = []
    for fold in range(config.folds):
        train_d, test_d = plan.split(corpus, fold)
        fit_d, dev_d = carve_dev(train_d)
        trained = train(config, fit_d, dev_d, resources,
                        seed=_derived_seed(config.training.seed, fold))
        test_examples = build_examples(test_d, config.context, trained.featurizer)
        per_fold.append(FoldMetrics.from_confusion(fold, evaluate(trained.model, test_examples)))
    return MetricsReport.from_folds(per_fold)


# ---------------------------------------------------------------------------
# Significance: exact two-sided paired sign-flip permutation test.


_EXACT_LIMIT = 20
_TIE_EPS = 1e-12


def significance(per_fold_a, per_fold_b) -> float:
    """Two-sided p-value for paired fold metrics under sign-flipping.

    Exact enumeration of all 2^n flips for n <= 20; a seeded Monte Carlo
    estimate (200,000 draws) beyond that.
    """
    a = np.asarray(per_fold_a, dtype=float)
    b = np.asarray(per_fold_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"paired vectors must share length, got {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise DataError("need at least 2 paired folds")
    d = a - b
    t_obs = abs(d.sum())
    if n <= _EXACT_LIMIT:
        inner_n = min(n, 10)
        outer_n = n - inner_n
        idx = np.arange(2**inner_n)
        inner_signs = 1 - 2 * ((idx[:, None] >> np.arange(inner_n)) & 1)
        inner_sums = inner_signs @ d[:inner_n]
        count = 0
        for pattern in range(2**outer_n):
            outer = 0.0
            for j in range(outer_n):
                outer += d[inner_n + j] * (1 - 2 * ((pattern >> j) & 1))
            count += int(np.sum(np.abs(outer + inner_sums) >= t_obs - _TIE_EPS))
        return count / 2**n
    rng = np.random.default_rng(np.random.SeedSequence([0x5167, n]))
    draws = 200_000
    signs = rng.integers(0, 2, size=(draws, n)) * 2 - 1
    t = np.abs(signs @ d)
    return (1 + int(np.sum(t >= t_obs - _TIE_EPS))) / (1 + draws)


# ---------------------------------------------------------------------------
# Sweep harness


RESULT_COLUMNS = (
    "pipeline", "local_position", "local_size", "speaker_size",
    "local_attention", "speaker_attention",
    "fold", "kappa", "precision", "recall", "f_score", "seed",
)


@dataclass(frozen=True)
class SweepGrid:
    pipelines: tuple[str, ...] = (PIPELINE_HYBRID,)
    local_positions: tuple[LocalPosition, ...] = ()
    local_sizes: tuple[int, ...] = ()
    speaker_sizes: tuple[int, ...] = ()
    combined: tuple[ContextSpec, ...] = ()
    local_attention: bool = False
    speaker_attention: bool = False

    def __post_init__(self):
        for p in self.pipelines:
            if p not in PIPELINES:
                raise DataError(f"unknown pipeline {p!r} in grid")
        if not self.pipelines:
            raise DataError("grid needs at least one pipeline")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        known = {
            "pipelines", "local_positions", "local_sizes", "speaker_sizes",
            "combined", "local_attention", "speaker_attention",
        }
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown sweep grid keys: {sorted(unknown)}")
        return cls(
            pipelines=tuple(d.get("pipelines", [PIPELINE_HYBRID])),
            local_positions=tuple(
                LocalPosition.parse(p) for p in d.get("local_positions", [])
            ),
            local_sizes=tuple(int(s) for s in d.get("local_sizes", [])),
            speaker_sizes=tuple(int(s) for s in d.get("speaker_sizes", [])),
            combined=tuple(ContextSpec.from_dict(c) for c in d.get("combined", [])),
            local_attention=bool(d.get("local_attention", False)),
            speaker_attention=bool(d.get("speaker_attention", False)),
        )

    def to_dict(self) -> dict:
        return {
            "pipelines": list(self.pipelines),
            "local_positions": [p.value for p in self.local_positions],
            "local_sizes": list(self.local_sizes),
            "speaker_sizes": list(self.speaker_sizes),
            "combined": [c.to_dict() for c in self.combined],
            "local_attention": self.local_attention,
            "speaker_attention": self.speaker_attention,
        }


def load_sweep_grid(path: str | Path) -> SweepGrid:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read grid {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None
    return SweepGrid.from_dict(raw)


def sweep_cells(grid: SweepGrid) -> list[tuple[str, ContextSpec]]:
    """Deterministic cell ordering: per pipeline, the baseline first, then
    local position x size, speaker sizes, combined specs, attention
    variants.  Duplicate (pipeline, spec) cells keep their first slot."""
    cells: list[tuple[str, ContextSpec]] = []
    seen = set()

    def add(pipeline: str, spec: ContextSpec) -> None:
        key = (pipeline, tuple(sorted(spec.to_dict().items())))
        if key not in seen:
            seen.add(key)
            cells.append((pipeline, spec))

    for pipeline in grid.pipelines:
        add(pipeline, ContextSpec())
        for position in grid.local_positions:
            for size in grid.local_sizes:
                add(pipeline, ContextSpec(local_size=size, local_position=position))
        for k in grid.speaker_sizes:
            add(pipeline, ContextSpec(speaker_size=k))
        for spec in grid.combined:
            add(pipeline, spec)
        if grid.local_attention:
            add(pipeline, ContextSpec(local_size=6, local_position=LocalPosition.BOTH,
                                      local_attention=True))
        if grid.speaker_attention:
            add(pipeline, ContextSpec(speaker_size=MAX_SPEAKER_SIZE, speaker_attention=True))
    return cells


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_rows(
    pipeline: str, spec: ContextSpec, seed: int, report: MetricsReport
) -> list[dict]:
    base = {
        "pipeline": pipeline,
        "local_position": spec.local_position.value,
        "local_size": spec.local_size,
        "speaker_size": spec.speaker_size,
        "local_attention": spec.local_attention,
        "speaker_attention": spec.speaker_attention,
        "seed": seed,
    }
    rows = []
    for fm in report.per_fold:
        rows.append({**base, "fold": fm.fold, "kappa": fm.kappa, "precision": fm.precision,
                     "recall": fm.recall, "f_score": fm.f_score})
    rows.append({**base, "fold": -1, "kappa": report.kappa, "precision": report.precision,
                 "recall": report.recall, "f_score": report.f_score})
    return rows


def write_result_rows(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_format_value(row[c]) for c in RESULT_COLUMNS])


def read_result_rows(path: str | Path) -> list[dict]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != RESULT_COLUMNS:
                raise DataError(f"{path}: expected result columns {','.join(RESULT_COLUMNS)}")
            rows = []
            for line_no, raw in enumerate(reader, start=2):
                if len(raw) != len(RESULT_COLUMNS):
                    raise DataError(f"{path}:{line_no}: expected {len(RESULT_COLUMNS)} fields")
                row = dict(zip(RESULT_COLUMNS, raw))
                try:
                    for key in ("local_size", "speaker_size", "fold", "seed"):
                        row[key] = int(row[key])
                    for key in ("kappa", "precision", "recall", "f_score"):
                        row[key] = float(row[key])
                    for key in ("local_attention", "speaker_attention"):
                        row[key] = {"true": True, "false": False}[row[key]]
                except (ValueError, KeyError) as exc:
                    raise DataError(f"{path}:{line_no}: bad value: {exc}") from None
                rows.append(row)
    except OSError as exc:
        raise DataError(f"cannot read results {path}: {exc}") from None
    return rows


def _run_cell_task(payload: dict) -> None:
    """Worker entry: run one sweep cell and flush its rows to its own file."""
    config = ExperimentConfig.from_dict(payload["config"])
    report = cross_validate(config, fold_seed=payload["fold_seed"])
    rows = _cell_rows(
        config.pipeline, config.context, config.training.seed, report
    )
    tmp = payload["cell_file"] + ".tmp"
    write_result_rows(tmp, rows)
    os.replace(tmp, payload["cell_file"])


def _curve_rows(rows: list[dict], pipeline: str) -> dict[str, list[dict]]:
    """Figure-style series from aggregate rows: metric vs context size, one
    series per local position, plus the speaker-size curve."""
    agg = [r for r in rows if r["fold"] == -1 and r["pipeline"] == pipeline]
    curves: dict[str, list[dict]] = {"local": [], "speaker": []}
    for r in sorted(agg, key=lambda r: (r["local_position"], r["local_size"])):
        if r["local_size"] > 0 and r["speaker_size"] == 0 and not r["local_attention"]:
            curves["local"].append(
                {"series": r["local_position"], "context_size": r["local_size"],
                 "kappa": r["kappa"], "precision": r["precision"],
                 "recall": r["recall"], "f_score": r["f_score"]}
            )
    for r in sorted(agg, key=lambda r: r["speaker_size"]):
        if r["speaker_size"] > 0 and r["local_size"] == 0 and not r["speaker_attention"]:
            curves["speaker"].append(
                {"series": "speaker", "context_size": r["speaker_size"],
                 "kappa": r["kappa"], "precision": r["precision"],
                 "recall": r["recall"], "f_score": r["f_score"]}
            )
    return {name: series for name, series in curves.items() if series}


CURVE_COLUMNS = ("series", "context_size", "kappa", "precision", "recall", "f_score")


def write_curve_files(out_dir: str | Path, rows: list[dict]) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for pipeline in sorted({r["pipeline"] for r in rows}):
        for name, series in _curve_rows(rows, pipeline).items():
            path = out_dir / f"curve_{name}_{pipeline}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(CURVE_COLUMNS)
                for row in series:
                    writer.writerow([_format_value(row[c]) for c in CURVE_COLUMNS])
            written.append(path)
    return written


def sweep(
    config: ExperimentConfig,
    grid: SweepGrid,
    out_dir: str | Path,
    jobs: int = 1,
) -> list[dict]:
    """Run cross_validate per grid cell; flush each finished cell to its own
    file (so an aborted sweep resumes by skipping finished cells), then
    assemble results.csv and the curve series deterministically."""
    out_dir = Path(out_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(grid)

    manifest = {
        "config": config.to_dict(),
        "grid": grid.to_dict(),
        "cells": [
            {"index": i, "pipeline": pipeline, "context": spec.to_dict(),
             "seed": _derived_seed(config.training.seed, i)}
            for i, (pipeline, spec) in enumerate(cells)
        ],
    }
    manifest_path = out_dir / "sweep_manifest.json"
    manifest_blob = json.dumps(manifest, indent=2, sort_keys=True)
    if manifest_path.exists():
        if manifest_path.read_text(encoding="utf-8") != manifest_blob:
            raise DataError(
                f"{out_dir} holds a different sweep (manifest mismatch); "
                "use a fresh output directory"
            )
    else:
        manifest_path.write_text(manifest_blob, encoding="utf-8")

    payloads = []
    for entry, (pipeline, spec) in zip(manifest["cells"], cells):
        cell_file = cells_dir / f"cell_{entry['index']:04d}.csv"
        if cell_file.exists():
            continue
        cell_config = replace(
            config,
            pipeline=pipeline,
            context=spec,
            training=replace(config.training, seed=entry["seed"]),
        )
        payloads.append(
            {"config": cell_config.to_dict(), "fold_seed": config.training.seed,
             "cell_file": str(cell_file)}
        )

    if jobs <= 1 or len(payloads) <= 1:
        for payload in payloads:
            _run_cell_task(payload)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for _ in pool.map(_run_cell_task, payloads):
                pass

    rows: list[dict] = []
    for entry in manifest["cells"]:
        cell_file = cells_dir / f"cell_{entry['index']:04d}.csv"
        if not cell_file.exists():
            raise DataError(f"sweep cell {entry['index']} produced no output")
        rows.extend(read_result_rows(cell_file))
    write_result_rows(out_dir / "results.csv", rows)
    write_curve_files(out_dir, rows)
    return rows
