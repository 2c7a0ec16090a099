"""End-to-end classification model: ADU encoders composed with context
aggregators and a softmax classifier.

Two pipelines share all context machinery:

* ``hybrid``: each ADU is a 114-dim handcrafted block concatenated with a
  convolutional encoding of its token vectors (2,400-dim at defaults);
  speaker-context ADUs use a separate reduced conv encoder (200-dim).
* ``pooled_embedding``: each ADU is a precomputed average-pooled
  contextual vector (768-dim at defaults), consumed as a constant.

The classifier input is assembled per the context spec: flat
concatenation [prior slots, target, next slots, presence flags] or an
attended local vector, plus an LSTM- or attention-aggregated speaker
block.  Gradients flow back into every trainable block; ADU inputs
(tokens, handcrafted scalars, pooled vectors) are constants.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from argctx import neural
from argctx.context import ContextSpec, context_windows
from argctx.corpus import Adu, Discussion
from argctx.embeddings import PrecomputedAduEmbeddings, WordVectorTable
from argctx.errors import DataError
from argctx.features import SCALAR_NAMES, IdfTable, LexiconBundle, handcrafted, tokenize
from argctx.neural import (
    AdamState,
    AttentionParams,
    ClassifierParams,
    ConvEncoderParams,
    LstmParams,
    attention_aggregate,
    attention_backward,
    classifier_backward,
    classify,
    conv_backward,
    conv_encode,
    cross_entropy,
    lstm_aggregate,
    lstm_backward,
)

PIPELINE_HYBRID = "hybrid"
PIPELINE_POOLED = "pooled_embedding"
PIPELINES = (PIPELINE_HYBRID, PIPELINE_POOLED)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters plus the context spec.

    Defaults reproduce the reference dimensions: 114 + 2,400 = 2,514 per
    ADU for the hybrid pipeline, 200 per speaker-context ADU, LSTM output
    100, pooled vectors 768.
    """

    pipeline: str = PIPELINE_HYBRID
    context: ContextSpec = field(default_factory=ContextSpec)
    token_dim: int = 100
    filter_widths: tuple[int, ...] = (2, 3, 4, 5)
    filters_per_width: int = 600
    speaker_filter_widths: tuple[int, ...] = (2, 3, 4, 5)
    speaker_filters_per_width: int = 50
    lstm_hidden: int = 100
    pooled_dim: int = 768
    n_classes: int = 3

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise DataError(f"unknown pipeline {self.pipeline!r}; use one of {PIPELINES}")
        for name in (
            "token_dim", "filters_per_width", "speaker_filters_per_width",
            "lstm_hidden", "pooled_dim", "n_classes",
        ):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if not self.filter_widths or not self.speaker_filter_widths:
            raise DataError("filter width lists must be non-empty")

    @property
    def handcrafted_dim(self) -> int:
        return self.token_dim + len(SCALAR_NAMES)

    @property
    def conv_output_dim(self) -> int:
        return len(self.filter_widths) * self.filters_per_width

    @property
    def adu_dim(self) -> int:
        """Per-ADU encoding size for the target and local-context slots."""
        if self.pipeline == PIPELINE_HYBRID:
            return self.handcrafted_dim + self.conv_output_dim
        return self.pooled_dim

    @property
    def speaker_adu_dim(self) -> int:
        """Per-ADU encoding size inside the speaker-context sequence."""
        if self.pipeline == PIPELINE_HYBRID:
            return len(self.speaker_filter_widths) * self.speaker_filters_per_width
        return self.pooled_dim

    @property
    def classifier_input_dim(self) -> int:
        ctx = self.context
        dim = self.adu_dim
        if ctx.local_attention:
            dim += self.adu_dim
        elif ctx.local_size > 0:
            # slot vectors plus one 0/1 presence flag per slot so the
            # classifier can tell padding from genuinely zero encodings
            dim += ctx.local_size * self.adu_dim + ctx.local_size
        if ctx.speaker_attention:
            dim += self.speaker_adu_dim
        elif ctx.speaker_size > 0:
            dim += self.lstm_hidden
        return dim

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "context": self.context.to_dict(),
            "token_dim": self.token_dim,
            "filter_widths": list(self.filter_widths),
            "filters_per_width": self.filters_per_width,
            "speaker_filter_widths": list(self.speaker_filter_widths),
            "speaker_filters_per_width": self.speaker_filters_per_width,
            "lstm_hidden": self.lstm_hidden,
            "pooled_dim": self.pooled_dim,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        if "context" in kwargs:
            kwargs["context"] = ContextSpec.from_dict(kwargs["context"])
        for key in ("filter_widths", "speaker_filter_widths"):
            if key in kwargs:
                kwargs[key] = tuple(int(w) for w in kwargs[key])
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(kwargs) - known
        if unknown:
            raise DataError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Per-ADU input tensors and featurizers.  A featurizer caches by
# (discussion_id, global_index) so each ADU is processed once no matter how
# many context windows include it.


@dataclass(frozen=True)
class AduTensors:
    """Raw inputs for one ADU; which fields are set depends on pipeline."""

    key: tuple[str, int]
    tokens: np.ndarray | None = None  # (T, token_dim)
    handcrafted: np.ndarray | None = None  # (handcrafted_dim,)
    pooled: np.ndarray | None = None  # (pooled_dim,)


@dataclass(frozen=True)
class ExampleTensors:
    """One target ADU with slot-aligned local context and speaker history."""

    target: AduTensors
    label: int | None
    local_slots: tuple[AduTensors | None, ...]
    prior_slots: int
    speaker: tuple[AduTensors, ...]

    @property
    def local_mask(self) -> np.ndarray:
        return np.array([t is not None for t in self.local_slots], dtype=bool)


class HybridFeaturizer:
    """Token vectors + handcrafted block per ADU, built from train-side
    resources (the IDF table must come from training data only)."""

    def __init__(
        self,
        lexicons: LexiconBundle,
        idf: IdfTable,
        word_vectors: WordVectorTable,
    ):
        self.lexicons = lexicons
        self.idf = idf
        self.word_vectors = word_vectors
        self._cache: dict[tuple[str, int], AduTensors] = {}

    def adu(self, adu: Adu) -> AduTensors:
        key = (adu.discussion_id, adu.global_index)
        hit = self._cache.get(key)
        if hit is None:
            lowers = [t.lower for t in tokenize(adu.text)]
            tokens, _ = self.word_vectors.lookup_all(lowers)
            hand = handcrafted(adu, self.lexicons, self.idf, self.word_vectors)
            hit = AduTensors(key=key, tokens=tokens, handcrafted=hand.values)
            self._cache[key] = hit
        return hit


class PooledFeaturizer:
    """Precomputed average-pooled vector per ADU."""

    def __init__(self, embeddings: PrecomputedAduEmbeddings):
        self.embeddings = embeddings

    def adu(self, adu: Adu) -> AduTensors:
        key = (adu.discussion_id, adu.global_index)
        return AduTensors(key=key, pooled=self.embeddings.pooled_vector(*key))


def build_examples(
    discussions: list[Discussion],
    spec: ContextSpec,
    featurizer,
    require_labels: bool = True,
) -> list[ExampleTensors]:
    """One example per ADU, in corpus order."""
    examples = []
    for disc in discussions:
        for i in range(len(disc.adus)):
            win = context_windows(disc, i, spec)
            label = win.target.label
            if label is None and require_labels:
                raise DataError(
                    f"ADU ({disc.id!r}, {win.target.global_index}) has no label"
                )
            examples.append(
                ExampleTensors(
                    target=featurizer.adu(win.target),
                    label=None if label is None else label.value,
                    local_slots=tuple(
                        featurizer.adu(a) if a is not None else None
                        for a in win.local_slots
                    ),
                    prior_slots=win.prior_slots,
                    speaker=tuple(featurizer.adu(a) for a in win.speaker_history),
                )
            )
    return examples


# ---------------------------------------------------------------------------
# Model = parameter blocks tied together by a fixed assembly plan.


@dataclass
class Model:
    config: ModelConfig
    conv: ConvEncoderParams | None
    sconv: ConvEncoderParams | None
    lstm: LstmParams | None
    attn_local: AttentionParams | None
    attn_speaker: AttentionParams | None
    classifier: ClassifierParams
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            blocks = [
                self.conv, self.sconv, self.lstm,
                self.attn_local, self.attn_speaker, self.classifier,
            ]
            for block in blocks:
                if block is not None:
                    self.params.update(block.named_arrays())


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    ctx = config.context
    conv = sconv = lstm = attn_local = attn_speaker = None
    if config.pipeline == PIPELINE_HYBRID:
        conv = ConvEncoderParams.create(
            "conv", rng, config.token_dim, config.filter_widths, config.filters_per_width
        )
        if ctx.speaker_size > 0:
            sconv = ConvEncoderParams.create(
                "sconv", rng, config.token_dim,
                config.speaker_filter_widths, config.speaker_filters_per_width,
            )
    if ctx.speaker_size > 0 and not ctx.speaker_attention:
        lstm = LstmParams.create("lstm", rng, config.speaker_adu_dim, config.lstm_hidden)
    if ctx.local_attention:
        attn_local = AttentionParams.create("attn_local", rng, config.adu_dim, config.adu_dim)
    if ctx.speaker_attention:
        attn_speaker = AttentionParams.create(
            "attn_speaker", rng, config.adu_dim, config.speaker_adu_dim
        )
    classifier = ClassifierParams.create(
        "cls", rng, config.classifier_input_dim, config.n_classes
    )
    return Model(
        config=config, conv=conv, sconv=sconv, lstm=lstm,
        attn_local=attn_local, attn_speaker=attn_speaker, classifier=classifier,
    )


def snapshot_params(model: Model) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.params.items()}


def restore_params(model: Model, snap: dict[str, np.ndarray]) -> None:
    for k, v in model.params.items():
        v[...] = snap[k]


@dataclass
class _ExampleCache:
    x: np.ndarray
    probs: np.ndarray
    target_vec: np.ndarray
    target_cache: object
    local_vecs: np.ndarray  # (n_slots, adu_dim), zero rows where masked
    local_caches: list
    local_mask: np.ndarray
    attn_local_cache: object
    speaker_mat: np.ndarray
    speaker_caches: list
    lstm_cache: object
    attn_speaker_cache: object
    offsets: dict[str, tuple[int, int]]


def _encode_adu(model: Model, t: AduTensors) -> tuple[np.ndarray, object]:
    cfg = model.config
    if cfg.pipeline == PIPELINE_HYBRID:
        if t.tokens is None or t.handcrafted is None:
            raise DataError(f"hybrid pipeline needs tokens+handcrafted for ADU {t.key}")
        if t.handcrafted.shape != (cfg.handcrafted_dim,):
            raise DataError(
                f"handcrafted block {t.handcrafted.shape} != ({cfg.handcrafted_dim},) "
                f"for ADU {t.key}"
            )
        vec, cache = conv_encode(t.tokens, model.conv)
        return np.concatenate([t.handcrafted, vec]), cache
    if t.pooled is None:
        raise DataError(f"pooled pipeline needs a pooled vector for ADU {t.key}")
    if t.pooled.shape != (cfg.pooled_dim,):
        raise DataError(f"pooled vector {t.pooled.shape} != ({cfg.pooled_dim},) for ADU {t.key}")
    return t.pooled, None


def _encode_speaker_adu(model: Model, t: AduTensors) -> tuple[np.ndarray, object]:
    if model.config.pipeline == PIPELINE_HYBRID:
        vec, cache = conv_encode(t.tokens, model.sconv)
        return vec, cache
    return t.pooled, None


def forward_example(model: Model, ex: ExampleTensors) -> tuple[np.ndarray, _ExampleCache]:
    cfg = model.config
    ctx = cfg.context
    target_vec, target_cache = _encode_adu(model, ex.target)

    mask = ex.local_mask
    local_vecs = np.zeros((len(ex.local_slots), cfg.adu_dim))
    local_caches: list = [None] * len(ex.local_slots)
    for i, slot in enumerate(ex.local_slots):
        if slot is not None:
            local_vecs[i], local_caches[i] = _encode_adu(model, slot)

    speaker_caches: list = []
    if ex.speaker:
        rows = []
        for t in ex.speaker:
            vec, cache = _encode_speaker_adu(model, t)
            rows.append(vec)
            speaker_caches.append(cache)
        speaker_mat = np.stack(rows)
    else:
        speaker_mat = np.zeros((0, cfg.speaker_adu_dim))

    pieces: list[np.ndarray] = []
    offsets: dict[str, tuple[int, int]] = {}
    pos = 0

    def add(name: str, arr: np.ndarray) -> None:
        nonlocal pos
        pieces.append(arr)
        offsets[name] = (pos, pos + arr.size)
        pos += arr.size

    attn_local_cache = None
    if ctx.local_attention:
        add("target", target_vec)
        if mask.any():
            att, attn_local_cache = attention_aggregate(
                target_vec, local_vecs, mask, model.attn_local
            )
        else:
            att = np.zeros(cfg.adu_dim)
        add("attn_local", att)
    elif ctx.local_size > 0:
        pr = ex.prior_slots
        add("prior", local_vecs[:pr].ravel())
        add("target", target_vec)
        add("next", local_vecs[pr:].ravel())
        add("flags", mask.astype(float))
    else:
        add("target", target_vec)

    lstm_cache = None
    attn_speaker_cache = None
    if ctx.speaker_attention:
        if ex.speaker:
            spk, attn_speaker_cache = attention_aggregate(
                target_vec, speaker_mat,
                np.ones(len(ex.speaker), dtype=bool), model.attn_speaker,
            )
        else:
            spk = np.zeros(cfg.speaker_adu_dim)
        add("speaker", spk)
    elif ctx.speaker_size > 0:
        h, lstm_cache = lstm_aggregate(speaker_mat, model.lstm)
        add("speaker", h)

    x = np.concatenate(pieces)
    probs = classify(x, model.classifier)
    return probs, _ExampleCache(
        x=x, probs=probs,
        target_vec=target_vec, target_cache=target_cache,
        local_vecs=local_vecs, local_caches=local_caches, local_mask=mask,
        attn_local_cache=attn_local_cache,
        speaker_mat=speaker_mat, speaker_caches=speaker_caches,
        lstm_cache=lstm_cache, attn_speaker_cache=attn_speaker_cache,
        offsets=offsets,
    )


def _route_adu_grad(
    model: Model, d_vec: np.ndarray, cache: object, grads: dict[str, np.ndarray]
) -> None:
    """Push an ADU-encoding gradient into the conv filters (hybrid only);
    the handcrafted/pooled part is a constant input."""
    if model.config.pipeline == PIPELINE_HYBRID:
        conv_backward(d_vec[model.config.handcrafted_dim :], cache, model.conv, grads)


def backward_example(
    model: Model,
    ex: ExampleTensors,
    cache: _ExampleCache,
    dlogits: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    cfg = model.config
    ctx = cfg.context
    dx = classifier_backward(dlogits, cache.x, model.classifier, grads)

    def seg(name: str) -> np.ndarray:
        lo, hi = cache.offsets[name]
        return dx[lo:hi]

    d_target = seg("target").copy()

    d_local = np.zeros_like(cache.local_vecs)
    if ctx.local_attention:
        if cache.attn_local_cache is not None:
            dq, dkeys = attention_backward(
                seg("attn_local"), cache.attn_local_cache, model.attn_local, grads
            )
            d_target += dq
            d_local += dkeys
    elif ctx.local_size > 0:
        pr = ex.prior_slots
        d_local[:pr] = seg("prior").reshape(pr, cfg.adu_dim)
        d_local[pr:] = seg("next").reshape(-1, cfg.adu_dim)

    d_speaker = np.zeros_like(cache.speaker_mat)
    if ctx.speaker_attention:
        if cache.attn_speaker_cache is not None:
            dq, dkeys = attention_backward(
                seg("speaker"), cache.attn_speaker_cache, model.attn_speaker, grads
            )
            d_target += dq
            d_speaker += dkeys
    elif ctx.speaker_size > 0:
        d_speaker = lstm_backward(seg("speaker"), cache.lstm_cache, model.lstm, grads)

    _route_adu_grad(model, d_target, cache.target_cache, grads)
    for i, slot_cache in enumerate(cache.local_caches):
        if cache.local_mask[i]:
            _route_adu_grad(model, d_local[i], slot_cache, grads)
    if cfg.pipeline == PIPELINE_HYBRID:
        for i, sc in enumerate(cache.speaker_caches):
            conv_backward(d_speaker[i], sc, model.sconv, grads)


def loss_and_gradients(
    model: Model,
    batch: list[ExampleTensors],
    class_weights: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean (optionally class-weighted) cross-entropy over a batch, with
    gradients for every parameter block."""
    if not batch:
        raise DataError("empty batch")
    grads = neural.zero_grads(model.params)
    total = 0.0
    n = len(batch)
    for ex in batch:
        if ex.label is None:
            raise DataError(f"unlabeled example for ADU {ex.target.key}")
        probs, cache = forward_example(model, ex)
        loss, dlogits = cross_entropy(probs, ex.label)
        w = 1.0 if class_weights is None else float(class_weights[ex.label])
        total += w * loss
        backward_example(model, ex, cache, dlogits * (w / n), grads)
    mean_loss = total / n
    neural.check_finite(mean_loss, grads)
    return mean_loss, grads


def predict_proba(model: Model, examples: list[ExampleTensors]) -> np.ndarray:
    return np.stack([forward_example(model, ex)[0] for ex in examples])


def predict(model: Model, examples: list[ExampleTensors]) -> np.ndarray:
    """Argmax class per example (first index on exact ties)."""
    return np.array(
        [int(np.argmax(forward_example(model, ex)[0])) for ex in examples], dtype=int
    )


# ---------------------------------------------------------------------------
# Vector-level encoders for context.assemble_example (frozen parameters).


class HybridEncoder:
    """AduEncoder over the hybrid pipeline at the model's current weights."""

    def __init__(self, model: Model, featurizer: HybridFeaturizer):
        if model.config.pipeline != PIPELINE_HYBRID:
            raise DataError("HybridEncoder requires a hybrid-pipeline model")
        self.model = model
        self.featurizer = featurizer

    @property
    def dim(self) -> int:
        return self.model.config.adu_dim

    @property
    def speaker_dim(self) -> int:
        return self.model.config.speaker_adu_dim

    def encode(self, adu: Adu) -> np.ndarray:
        vec, _ = _encode_adu(self.model, self.featurizer.adu(adu))
        return vec

    def encode_speaker(self, adu: Adu) -> np.ndarray:
        if self.model.sconv is None:
            raise DataError("model has no speaker-context encoder (speaker_size is 0)")
        vec, _ = _encode_speaker_adu(self.model, self.featurizer.adu(adu))
        return vec


class PooledEncoder:
    """AduEncoder over precomputed pooled vectors (no trainable parts)."""

    def __init__(self, embeddings: PrecomputedAduEmbeddings):
        self.embeddings = embeddings

    @property
    def dim(self) -> int:
        return self.embeddings.dim

    @property
    def speaker_dim(self) -> int:
        return self.embeddings.dim

    def encode(self, adu: Adu) -> np.ndarray:
        return self.embeddings.pooled_vector(adu.discussion_id, adu.global_index)

    encode_speaker = encode


# ---------------------------------------------------------------------------
# Checkpoints: magic, JSON header (config echo + array names/shapes),
# then raw little-endian float64 payload.  Round-trips bit-exactly.

CHECKPOINT_MAGIC = b"ARGCTX01"


def save_checkpoint(
    path: str | Path,
    model: Model,
    optimizer: AdamState | None = None,
    meta: dict | None = None,
) -> None:
    names = list(model.params)
    header = {
        "config": model.config.to_dict(),
        "arrays": [{"name": k, "shape": list(model.params[k].shape)} for k in names],
        "optimizer": None if optimizer is None else {"t": optimizer.t},
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())
        if optimizer is not None:
            for k in names:
                fh.write(np.ascontiguousarray(optimizer.m[k], dtype="<f8").tobytes())
            for k in names:
                fh.write(np.ascontiguousarray(optimizer.v[k], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Model, AdamState | None]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        model = init_model(ModelConfig.from_dict(header["config"]), seed=0)
        declared = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
        actual = [(k, v.shape) for k, v in model.params.items()]
        if declared != actual:
            raise DataError(
                f"{path}: checkpoint blocks {declared} do not match config-derived "
                f"blocks {actual}"
            )

        def read_into(shape: tuple[int, ...]) -> np.ndarray:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated checkpoint payload")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

        for k, v in model.params.items():
            v[...] = read_into(v.shape)
        optimizer = None
        if header.get("optimizer") is not None:
            optimizer = AdamState.for_params(model.params)
            optimizer.t = int(header["optimizer"]["t"])
            for k, v in model.params.items():
                optimizer.m[k] = read_into(v.shape)
            for k, v in model.params.items():
                optimizer.v[k] = read_into(v.shape)
        trailing = fh.read(1)
        if trailing:
            raise DataError(f"{path}: trailing bytes after checkpoint payload")
    return model, optimizer


def checkpoint_header(path: str | Path) -> dict:
    """The JSON header (config echo, block shapes, meta) without the payload."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(hlen).decode("utf-8"))
