"""Handcrafted lexical feature block for one ADU.

The block is 114-dimensional by default: a 100-dim average of static word
vectors followed by 14 named scalars (counts against lexicon resources,
orthographic counts, ratio features, familiarity and IDF statistics).
Lexicons ship as plain word-list files so the restricted originals can be
substituted without code changes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from argctx.corpus import Adu, Corpus
from argctx.embeddings import WordVectorTable
from argctx.errors import DataError


class Token(NamedTuple):
    surface: str
    lower: str


_NUMBER_RE = re.compile(r"^[+-]?\d+(?:[.,]\d+)*$")


def _is_word_char(ch: str) -> bool:
    return ch.isalnum()


def tokenize(text: str) -> list[Token]:
    """Split on whitespace, then detach boundary punctuation as own tokens.

    Internal apostrophes and hyphens stay inside their token ("i'd",
    "well-known"); a chunk like "(see" yields "(" and "see".  Deterministic;
    whitespace-only text yields an empty list.
    """
    tokens: list[Token] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and not _is_word_char(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and not _is_word_char(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        for ch in lead:
            tokens.append(Token(ch, ch.lower()))
        if chunk:
            tokens.append(Token(chunk, chunk.lower()))
        for ch in reversed(trail):
            tokens.append(Token(ch, ch.lower()))
    return tokens


@dataclass(frozen=True)
class LexiconBundle:
    """Word lists and familiarity norms backing the scalar features."""

    connectives: frozenset[str]
    stopwords: frozenset[str]
    subjective: frozenset[str]
    polar: frozenset[str]
    familiarity: dict[str, float]

    def __post_init__(self):
        for name in ("connectives", "stopwords", "subjective", "polar"):
            bad = [t for t in getattr(self, name) if t != t.lower()]
            if bad:
                raise DataError(f"{name} lexicon contains non-lowercase entries: {bad[:3]}")
        for tok, score in self.familiarity.items():
            if tok != tok.lower():
                raise DataError(f"familiarity lexicon entry not lowercase: {tok!r}")
            if not (score >= 0.0):
                raise DataError(f"negative familiarity score for {tok!r}: {score}")


def _read_wordlist(path: Path) -> frozenset[str]:
    entries = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entries.add(line.lower())
    return frozenset(entries)


def _read_familiarity(path: Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path.name} line {lineno}: expected token<TAB>score")
        try:
            score = float(parts[1])
        except ValueError:
            raise DataError(f"{path.name} line {lineno}: non-numeric score {parts[1]!r}") from None
        scores[parts[0].lower()] = score
    return scores


_LEXICON_FILES = {
    "connectives": "connectives.txt",
    "stopwords": "stopwords.txt",
    "subjective": "subjective.txt",
    "polar": "polar.txt",
    "familiarity": "familiarity.tsv",
}


def load_lexicons(directory: str | Path) -> LexiconBundle:
    """Load the five lexicon files from one directory."""
    directory = Path(directory)
    paths = {}
    for key, fname in _LEXICON_FILES.items():
        p = directory / fname
        if not p.exists():
            raise DataError(f"missing lexicon file: {p}")
        paths[key] = p
    return LexiconBundle(
        connectives=_read_wordlist(paths["connectives"]),
        stopwords=_read_wordlist(paths["stopwords"]),
        subjective=_read_wordlist(paths["subjective"]),
        polar=_read_wordlist(paths["polar"]),
        familiarity=_read_familiarity(paths["familiarity"]),
    )


def bundled_lexicons() -> LexiconBundle:
    """The stand-in lexicons shipped with the package."""
    with resources.as_file(resources.files("argctx") / "data") as directory:
        return load_lexicons(directory)


@dataclass(frozen=True)
class IdfTable:
    """Document frequencies with the ADU as the document unit.

    idf(t) = ln(doc_count / df(t)); tokens never seen during construction
    get the df=1 ceiling ln(doc_count).  Construction takes an explicit ADU
    subset so that a table built on a training fold cannot see test ADUs.
    """

    doc_count: int
    df: dict[str, int]

    def __post_init__(self):
        if self.doc_count <= 0:
            raise DataError("IdfTable needs a positive document count")
        for tok, n in self.df.items():
            if not (0 < n <= self.doc_count):
                raise DataError(f"df[{tok!r}] = {n} outside (0, {self.doc_count}]")

    def value(self, token: str) -> float:
        n = self.df.get(token)
        if n is None:
            return math.log(self.doc_count)
        return math.log(self.doc_count / n)


def compute_idf(source: Corpus | Sequence[Adu]) -> IdfTable:
    """Build an IdfTable from a corpus or from an explicit ADU subset."""
    adus: Iterable[Adu] = source.all_adus() if isinstance(source, Corpus) else source
    df: dict[str, int] = {}
    count = 0
    for adu in adus:
        count += 1
        for tok in {t.lower for t in tokenize(adu.text)}:
            df[tok] = df.get(tok, 0) + 1
    if count == 0:
        raise DataError("cannot build IDF statistics from an empty ADU set")
    return IdfTable(doc_count=count, df=df)


SCALAR_NAMES = (
    "n_connectives",
    "n_words",
    "n_numbers",
    "n_symbols",
    "n_capitals",
    "stopword_ratio",
    "n_subjective",
    "n_polar",
    "avg_familiarity",
    "avg_chars_per_word",
    "idf_min",
    "idf_max",
    "oov_ratio",
    "familiarity_coverage",
)

HANDCRAFTED_DIM = 100 + len(SCALAR_NAMES)  # 114 with the default 100-dim vectors


@dataclass(frozen=True)
class HandcraftedVector:
    """Feature block: averaged word vector followed by the named scalars."""

    values: np.ndarray
    vector_dim: int

    def __post_init__(self):
        if len(self.values) != self.vector_dim + len(SCALAR_NAMES):
            raise DataError(
                f"expected {self.vector_dim + len(SCALAR_NAMES)} values, got {len(self.values)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite handcrafted feature value")

    @property
    def avg_word_vector(self) -> np.ndarray:
        return self.values[: self.vector_dim]

    def scalar(self, name: str) -> float:
        return float(self.values[self.vector_dim + SCALAR_NAMES.index(name)])

    def feature_names(self) -> list[str]:
        return [f"avg_wv_{i:03d}" for i in range(self.vector_dim)] + list(SCALAR_NAMES)


def handcrafted(
    adu: Adu,
    lexicons: LexiconBundle,
    idf: IdfTable,
    word_vectors: WordVectorTable,
) -> HandcraftedVector:
    """Extract the handcrafted block for one ADU.

    All lexicon matching happens on lowercase forms.  Averages over empty
    supports fall back to 0 with the corresponding coverage/OOV ratio
    recording how much of the ADU the average actually saw.
    """
    tokens = tokenize(adu.text)
    if not tokens:
        raise DataError(f"ADU ({adu.discussion_id!r}, {adu.global_index}) has no tokens")
    n = len(tokens)
    lowers = [t.lower for t in tokens]

    in_vocab = [lo for lo in lowers if lo in word_vectors]
    if in_vocab:
        avg_vec = np.mean([word_vectors.lookup(lo) for lo in in_vocab], axis=0)
    else:
        avg_vec = np.zeros(word_vectors.dim)
    oov_ratio = (n - len(in_vocab)) / n

    word_tokens = [t for t in tokens if any(_is_word_char(c) for c in t.surface)]
    fam_scores = [lexicons.familiarity[lo] for lo in lowers if lo in lexicons.familiarity]
    idf_values = [idf.value(lo) for lo in lowers]

    scalars = {
        "n_connectives": sum(lo in lexicons.connectives for lo in lowers),
        "n_words": len(word_tokens),
        "n_numbers": sum(bool(_NUMBER_RE.match(t.surface)) for t in tokens),
        "n_symbols": n - len(word_tokens),
        "n_capitals": sum(ch.isupper() for ch in adu.text),
        "stopword_ratio": sum(lo in lexicons.stopwords for lo in lowers) / n,
        "n_subjective": sum(lo in lexicons.subjective for lo in lowers),
        "n_polar": sum(lo in lexicons.polar for lo in lowers),
        "avg_familiarity": float(np.mean(fam_scores)) if fam_scores else 0.0,
        "avg_chars_per_word": (
            float(np.mean([len(t.surface) for t in word_tokens])) if word_tokens else 0.0
        ),
        "idf_min": min(idf_values),
        "idf_max": max(idf_values),
        "oov_ratio": oov_ratio,
        "familiarity_coverage": len(fam_scores) / n,
    }
    values = np.concatenate([avg_vec, [scalars[name] for name in SCALAR_NAMES]])
    return HandcraftedVector(values=values, vector_dim=word_vectors.dim)
