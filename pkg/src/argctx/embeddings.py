"""Token vectors and pooled ADU embeddings.

Two vector sources feed the classifiers: a GloVe-style text table of static
word vectors (consumed by the convolutional encoder and by the handcrafted
feature block), and a JSONL file of precomputed contextual token vectors,
one record per ADU, pooled into a fixed-size ADU embedding by averaging.
The contextual vectors are produced offline by a sidecar script; this
module only consumes the file.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from argctx.corpus import Corpus
from argctx.errors import DataError

log = logging.getLogger(__name__)


@dataclass
class WordVectorTable:
    """Static token -> vector map with a zero-vector fallback for unknowns."""

    dim: int
    vectors: dict[str, np.ndarray]
    _zero: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._zero = np.zeros(self.dim)
        self._zero.flags.writeable = False

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def lookup(self, token: str) -> np.ndarray:
        """Unknown tokens map to the zero vector; never raises."""
        return self.vectors.get(token, self._zero)

    def lookup_all(self, tokens: list[str]) -> tuple[np.ndarray, int]:
        """(T, dim) matrix for a token list, plus the out-of-vocabulary count."""
        mat = np.zeros((len(tokens), self.dim))
        oov = 0
        for i, tok in enumerate(tokens):
            vec = self.vectors.get(tok)
            if vec is None:
                oov += 1
            else:
                mat[i] = vec
        return mat, oov

    def __len__(self) -> int:
        return len(self.vectors)


def load_word_vectors(path: str | Path) -> WordVectorTable:
    """Load a text file of `token v1 ... vd` lines with a consistent d.

    Duplicate tokens keep the first occurrence (logged as a warning).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"word vector file not found: {path}")
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            token, fields = parts[0], parts[1:]
            if dim is None:
                dim = len(fields)
                if dim == 0:
                    raise DataError(f"line {lineno}: no vector components")
            elif len(fields) != dim:
                raise DataError(
                    f"line {lineno}: expected {dim} components, got {len(fields)}"
                )
            try:
                vec = np.array([float(x) for x in fields])
            except ValueError:
                raise DataError(f"line {lineno}: non-numeric vector component") from None
            if token in vectors:
                log.warning("duplicate token %r at line %d kept first occurrence", token, lineno)
                continue
            vectors[token] = vec
    if dim is None:
        raise DataError(f"{path}: empty word vector file")
    return WordVectorTable(dim=dim, vectors=vectors)


def save_word_vectors(table: WordVectorTable, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def average_pool(token_vectors) -> np.ndarray:
    """Elementwise arithmetic mean of a non-empty list of same-length vectors."""
    if len(token_vectors) == 0:
        raise DataError("average_pool of an empty vector list")
    try:
        mat = np.asarray(token_vectors, dtype=float)
    except ValueError:
        raise DataError("average_pool requires vectors of identical length") from None
    if mat.ndim != 2:
        raise DataError("average_pool requires vectors of identical length")
    if (mat == mat[0]).all():
        return mat[0].copy()  # keep pool([v, v, v]) == v exact; summing drifts an ulp
    return mat.mean(axis=0)


@dataclass
class PrecomputedAduEmbeddings:
    """Per-ADU contextual token vectors keyed by (discussion_id, global_index)."""

    dim: int
    vectors: dict[tuple[str, int], np.ndarray]
    pooled: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.pooled:
            self.pooled = {k: average_pool(v) for k, v in self.vectors.items()}

    def pooled_vector(self, discussion_id: str, global_index: int) -> np.ndarray:
        try:
            return self.pooled[(discussion_id, global_index)]
        except KeyError:
            raise DataError(
                f"no precomputed embedding for ({discussion_id!r}, {global_index})"
            ) from None


def load_precomputed(path: str | Path, corpus: Corpus) -> PrecomputedAduEmbeddings:
    """Load the JSONL embedding sidecar and check full corpus coverage.

    One record per ADU: {"discussion_id", "global_index", "vectors": [[...], ...]}.
    Keys must match corpus ADUs bit-exactly; every corpus ADU must be covered.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    corpus_keys = {
        (adu.discussion_id, adu.global_index) for adu in corpus.all_adus()
    }
    vectors: dict[tuple[str, int], np.ndarray] = {}
    dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            try:
                key = (str(rec["discussion_id"]), int(rec["global_index"]))
                token_vecs = rec["vectors"]
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"line {lineno}: malformed record ({e})") from None
            if key not in corpus_keys:
                raise DataError(f"line {lineno}: key {key} references no corpus ADU")
            if key in vectors:
                raise DataError(f"line {lineno}: duplicate key {key}")
            if not token_vecs:
                raise DataError(f"line {lineno}: empty vector list for {key}")
            mat = np.asarray(token_vecs, dtype=float)
            if mat.ndim != 2:
                raise DataError(f"line {lineno}: ragged token vectors for {key}")
            if dim is None:
                dim = mat.shape[1]
            elif mat.shape[1] != dim:
                raise DataError(
                    f"line {lineno}: vector length {mat.shape[1]} != expected {dim}"
                )
            vectors[key] = mat
    missing = sorted(corpus_keys - set(vectors))
    if missing:
        shown = ", ".join(f"({d!r}, {i})" for d, i in missing[:10])
        more = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
        raise DataError(f"embeddings missing for {len(missing)} ADU(s): {shown}{more}")
    assert dim is not None
    return PrecomputedAduEmbeddings(dim=dim, vectors=vectors)
