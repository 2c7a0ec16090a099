"""Shared fixtures: the classroom excerpt corpus, tiny vector tables, and
a finite-difference gradient checker used by the neural and model tests."""

from pathlib import Path

import numpy as np
import pytest

from argctx.corpus import Adu, Corpus, Discussion, Label, parse_corpus
from argctx.embeddings import WordVectorTable

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def excerpt_path() -> Path:
    return DATA_DIR / "classroom_excerpt.csv"


@pytest.fixture(scope="session")
def excerpt_corpus(excerpt_path) -> Corpus:
    return parse_corpus(excerpt_path)


def make_corpus(rows) -> Corpus:
    """Build a corpus from (discussion_id, speaker_id, text, label) tuples."""
    by_disc: dict[str, list[Adu]] = {}
    for did, speaker, text, label in rows:
        adus = by_disc.setdefault(did, [])
        adus.append(
            Adu(
                discussion_id=did,
                global_index=len(adus),
                speaker_id=str(speaker),
                text=text,
                label=Label.parse(label) if label is not None else None,
            )
        )
    return Corpus(
        discussions=tuple(
            Discussion(id=did, adus=tuple(adus)) for did, adus in by_disc.items()
        )
    )


def random_vectors(tokens, dim, seed=0) -> WordVectorTable:
    rng = np.random.default_rng(seed)
    return WordVectorTable(
        dim=dim,
        vectors={t: rng.uniform(-0.5, 0.5, size=dim) for t in tokens},
    )


def finite_difference(loss_fn, arrays: dict[str, np.ndarray], eps: float = 1e-4,
                      max_entries: int = 64, seed: int = 0) -> dict[str, np.ndarray]:
    """Central-difference gradients of loss_fn() w.r.t. the given live arrays.

    Perturbs entries in place and restores them, so loss_fn must read the same
    array objects. Arrays larger than max_entries are subsampled; untouched
    entries are returned as NaN so callers compare only where computed.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        grad = np.full(flat.shape, np.nan)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            grad[i] = (up - down) / (2 * eps)
        out[name] = grad.reshape(arr.shape)
    return out


def max_relative_error(analytic: dict[str, np.ndarray],
                       numeric: dict[str, np.ndarray],
                       floor: float = 1e-8) -> float:
    """Worst |analytic - numeric| / max(|analytic|, |numeric|, floor).

    The floor keeps near-zero entries from dividing rounding noise by
    rounding noise; raise it when loss_fn itself carries more float error
    than a single layer (full-model assemblies)."""
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        mask = ~np.isnan(num)
        denom = np.maximum(np.maximum(np.abs(ana[mask]), np.abs(num[mask])), floor)
        rel = np.abs(ana[mask] - num[mask]) / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
