"""Synthetic multi-party discussion generator with controllable label
dependence on local and speaker context.

Label process per ADU, drawn from a three-way mixture:

* with probability ``local_signal_strength`` the label follows the fixed
  cycle claim -> evidence -> warrant -> claim applied to the previous
  ADU's label (first ADU falls back to the base draw);
* with probability ``speaker_signal_strength`` the speaker's preferred
  label is used;
* otherwise the label is drawn i.i.d. from the base distribution.

Each ADU's text carries one marker token that names the true label with
probability ``1 - marker_noise`` and one of the other two labels
otherwise, plus random filler words.  The marker noise puts a ceiling on
what a context-free model can achieve while context-aware models can
recover the planted structure.  A companion random word-vector table
covers the whole generated vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from argctx.corpus import Adu, Corpus, Discussion, Label, LABEL_NAMES
from argctx.embeddings import WordVectorTable
from argctx.errors import DataError

_MARKER_VARIANTS = 3
_MIN_FILLERS = 3
_MAX_FILLERS = 8


def marker_token(label: int, variant: int) -> str:
    return f"mk{LABEL_NAMES[label]}{variant}"


def cycle_label(previous: int) -> int:
    """claim -> evidence -> warrant -> claim."""
    return (previous + 1) % 3


@dataclass(frozen=True)
class SynthConfig:
    n_discussions: int = 20
    speakers_per_discussion: int = 5
    adus_per_discussion: int = 150
    vocab_size: int = 200
    base_label_distribution: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    local_signal_strength: float = 0.0
    speaker_signal_strength: float = 0.0
    marker_noise: float = 0.3
    vector_dim: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("n_discussions", "speakers_per_discussion", "adus_per_discussion",
                     "vocab_size", "vector_dim"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        dist = self.base_label_distribution
        if len(dist) != 3 or any(p < 0 for p in dist) or abs(sum(dist) - 1.0) > 1e-9:
            raise DataError("base_label_distribution must be 3 non-negative values summing to 1")
        for name in ("local_signal_strength", "speaker_signal_strength", "marker_noise"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise DataError(f"{name} must be in [0, 1], got {value}")
        if self.local_signal_strength + self.speaker_signal_strength > 1.0 + 1e-9:
            raise DataError("local + speaker signal strengths must not exceed 1")

    def to_dict(self) -> dict:
        return {
            "n_discussions": self.n_discussions,
            "speakers_per_discussion": self.speakers_per_discussion,
            "adus_per_discussion": self.adus_per_discussion,
            "vocab_size": self.vocab_size,
            "base_label_distribution": list(self.base_label_distribution),
            "local_signal_strength": self.local_signal_strength,
            "speaker_signal_strength": self.speaker_signal_strength,
            "marker_noise": self.marker_noise,
            "vector_dim": self.vector_dim,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown synth config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "base_label_distribution" in kwargs:
            kwargs["base_label_distribution"] = tuple(
                float(p) for p in kwargs["base_label_distribution"]
            )
        return cls(**kwargs)


def load_synth_config(path: str | Path) -> SynthConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return SynthConfig.from_dict(raw)


def _generate_discussion(config: SynthConfig, index: int) -> Discussion:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    base = np.asarray(config.base_label_distribution)
    m = config.speakers_per_discussion
    preferred = rng.choice(3, size=m, p=base)
    # skewed speaker activity so per-speaker ADU counts vary
    weights = 1.0 / np.arange(1, m + 1)
    weights /= weights.sum()

    adus = []
    prev_label: int | None = None
    for t in range(config.adus_per_discussion):
        speaker = int(rng.choice(m, p=weights))
        u = rng.random()
        if u < config.local_signal_strength and prev_label is not None:
            label = cycle_label(prev_label)
        elif u < config.local_signal_strength + config.speaker_signal_strength:
            label = int(preferred[speaker])
        else:
            label = int(rng.choice(3, p=base))

        if rng.random() < config.marker_noise:
            shown = int(rng.choice([c for c in range(3) if c != label]))
        else:
            shown = label
        marker = marker_token(shown, int(rng.integers(_MARKER_VARIANTS)))
        n_fillers = int(rng.integers(_MIN_FILLERS, _MAX_FILLERS + 1))
        words = [f"w{int(rng.integers(config.vocab_size))}" for _ in range(n_fillers)]
        words.insert(int(rng.integers(n_fillers + 1)), marker)

        adus.append(
            Adu(
                discussion_id=f"d{index:03d}",
                global_index=t,
                speaker_id=f"s{speaker}",
                text=" ".join(words),
                label=Label(label),
            )
        )
        prev_label = label
    return Discussion(id=f"d{index:03d}", adus=tuple(adus))


def generate(config: SynthConfig) -> Corpus:
    """Deterministic corpus for the given config; discussions use
    independently derived seeds so generation order cannot matter."""
    return Corpus(
        discussions=tuple(
            _generate_discussion(config, i) for i in range(config.n_discussions)
        )
    )


def generate_vectors(config: SynthConfig) -> WordVectorTable:
    """Random word vectors covering every token the generator can emit."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EC]))
    tokens = [
        marker_token(label, variant)
        for label in range(3)
        for variant in range(_MARKER_VARIANTS)
    ] + [f"w{i}" for i in range(config.vocab_size)]
    vectors = {
        tok: rng.uniform(-0.5, 0.5, size=config.vector_dim) for tok in tokens
    }
    return WordVectorTable(dim=config.vector_dim, vectors=vectors)
