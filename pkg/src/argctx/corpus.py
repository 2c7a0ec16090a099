"""Discussion corpus: parsing, validation, indexing, and fold generation.

A corpus is a set of discussions; each discussion is an ordered sequence of
argumentative discourse units (ADUs) carrying a speaker id and one of three
gold labels (claim / evidence / warrant).  Cross-validation folds are built
at the discussion level so that no discussion contributes ADUs to both the
training and the test side of a fold.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from argctx.errors import DataError

LABEL_NAMES = ("claim", "evidence", "warrant")


class Label(Enum):
    CLAIM = 0
    EVIDENCE = 1
    WARRANT = 2

    @classmethod
    def parse(cls, raw: str) -> "Label":
        """Case-insensitive parse with surrounding whitespace stripped."""
        name = raw.strip().lower()
        try:
            return cls(LABEL_NAMES.index(name))
        except ValueError:
            raise DataError(
                f"unknown label {raw!r}; expected one of {', '.join(LABEL_NAMES)}"
            ) from None

    def __str__(self) -> str:
        return LABEL_NAMES[self.value]


@dataclass(frozen=True)
class Adu:
    """One argumentative discourse unit within a discussion."""

    discussion_id: str
    global_index: int
    speaker_id: str
    text: str
    label: Label | None = None


@dataclass(frozen=True)
class Discussion:
    """Ordered ADU sequence from one session."""

    id: str
    adus: tuple[Adu, ...]

    def __len__(self) -> int:
        return len(self.adus)


@dataclass(frozen=True)
class Corpus:
    discussions: tuple[Discussion, ...]
    label_histogram: dict[Label, int] = field(default_factory=dict)

    def __post_init__(self):
        recount = Counter(
            adu.label for d in self.discussions for adu in d.adus if adu.label is not None
        )
        if not self.label_histogram:
            object.__setattr__(self, "label_histogram", dict(recount))
        elif dict(recount) != dict(self.label_histogram):
            raise DataError("label_histogram does not match a recount over all ADUs")

    @property
    def n_adus(self) -> int:
        return sum(len(d) for d in self.discussions)

    def all_adus(self) -> list[Adu]:
        return [adu for d in self.discussions for adu in d.adus]

    def discussion(self, discussion_id: str) -> Discussion:
        for d in self.discussions:
            if d.id == discussion_id:
                return d
        raise KeyError(discussion_id)


@dataclass(frozen=True)
class FoldPlan:
    """Discussion-level fold assignment for k-fold cross-validation."""

    k: int
    assignments: dict[str, int]

    def fold_discussions(self, fold: int) -> list[str]:
        return sorted(d for d, f in self.assignments.items() if f == fold)

    def split(self, corpus: Corpus, fold: int) -> tuple[list[Discussion], list[Discussion]]:
        """(train discussions, test discussions) for one fold, corpus order."""
        train = [d for d in corpus.discussions if self.assignments[d.id] != fold]
        test = [d for d in corpus.discussions if self.assignments[d.id] == fold]
        return train, test


CSV_COLUMNS = ("discussion_id", "speaker_id", "text", "label")


def _build_corpus(rows: list[tuple[int, dict]], require_labels: bool) -> Corpus:
    """Assemble discussions from (line_number, record) pairs, file order.

    global_index is assigned sequentially per discussion; a file may carry
    an explicit global_index field, in which case it must agree with file
    order (this is what surfaces duplicated or shuffled indices as errors).
    """
    by_discussion: dict[str, list[Adu]] = {}
    seen: set[tuple[str, int]] = set()
    for lineno, rec in rows:
        for key in CSV_COLUMNS[:3]:
            if rec.get(key) is None:
                raise DataError(f"line {lineno}: missing field {key!r}")
        text = rec["text"]
        if not text.strip():
            raise DataError(f"line {lineno}: empty text field")
        raw_label = rec.get("label")
        if raw_label is None or raw_label.strip() == "":
            if require_labels:
                raise DataError(f"line {lineno}: missing field 'label'")
            label = None
        else:
            try:
                label = Label.parse(raw_label)
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from None
        did = rec["discussion_id"]
        adus = by_discussion.setdefault(did, [])
        declared = rec.get("global_index")
        if declared is not None and declared != "":
            try:
                declared_idx = int(declared)
            except ValueError:
                raise DataError(f"line {lineno}: non-integer global_index {declared!r}") from None
            if (did, declared_idx) in seen:
                raise DataError(f"line {lineno}: duplicate ({did!r}, {declared_idx})")
            if declared_idx != len(adus):
                raise DataError(
                    f"line {lineno}: global_index {declared_idx} out of order, expected {len(adus)}"
                )
            seen.add((did, declared_idx))
        adus.append(
            Adu(
                discussion_id=did,
                global_index=len(adus),
                speaker_id=rec["speaker_id"],
                text=text,
                label=label,
            )
        )
    discussions = tuple(
        Discussion(id=did, adus=tuple(adus)) for did, adus in by_discussion.items()
    )
    return Corpus(discussions=discussions)


def parse_corpus(path: str | Path, format: str | None = None, require_labels: bool = True) -> Corpus:
    """Parse a corpus file (csv or jsonl) into an indexed Corpus.

    ADU order within each discussion follows file order and global_index is
    assigned sequentially from 0.  Every error message carries the offending
    line number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv"
    if format not in ("csv", "jsonl"):
        raise DataError(f"unknown corpus format {format!r}")

    try:
        raw = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: non-UTF-8 bytes at offset {e.start}") from None

    rows: list[tuple[int, dict]] = []
    if format == "csv":
        reader = csv.reader(io.StringIO(raw))
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        missing = [c for c in CSV_COLUMNS[:3] if c not in header]
        if missing:
            raise DataError(f"{path}: header missing column(s) {', '.join(missing)}")
        idx = {c: header.index(c) for c in (*CSV_COLUMNS, "global_index") if c in header}
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} columns, got {len(row)}")
            rows.append((lineno, {c: row[i] for c, i in idx.items()}))
    else:
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"line {lineno}: expected a JSON object per line")
            rec = {k: (str(v) if v is not None else None) for k, v in rec.items()}
            rows.append((lineno, rec))

    corpus = _build_corpus(rows, require_labels)
    if not corpus.discussions:
        raise DataError(f"{path}: no ADUs found")
    return corpus


def serialize_corpus(corpus: Corpus, path: str | Path, format: str = "csv") -> None:
    """Write a corpus back out in one of the two interchange formats."""
    path = Path(path)
    if format == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for adu in corpus.all_adus():
                writer.writerow(
                    [adu.discussion_id, adu.speaker_id, adu.text,
                     "" if adu.label is None else str(adu.label)]
                )
    elif format == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for adu in corpus.all_adus():
                fh.write(json.dumps({
                    "discussion_id": adu.discussion_id,
                    "speaker_id": adu.speaker_id,
                    "text": adu.text,
                    "label": None if adu.label is None else str(adu.label),
                }) + "\n")
    else:
        raise DataError(f"unknown corpus format {format!r}")


@dataclass(frozen=True)
class ValidationReport:
    n_adus: int
    n_discussions: int
    label_counts: dict[str, int]
    label_proportions_pct: dict[str, float]
    speakers_per_discussion: dict[str, int]
    adus_per_speaker: dict[str, int]
    single_speaker_discussions: list[str]

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Report-only corpus statistics: counts, label skew, speaker structure.

    Proportions are rounded to one decimal place.  Discussions with a single
    speaker are flagged because speaker context degenerates there.
    """
    counts = {name: 0 for name in LABEL_NAMES}
    for adu in corpus.all_adus():
        if adu.label is not None:
            counts[str(adu.label)] += 1
    total_labeled = sum(counts.values())
    proportions = {
        name: round(100.0 * counts[name] / total_labeled, 1) if total_labeled else 0.0
        for name in LABEL_NAMES
    }
    speakers_per_discussion = {
        d.id: len({adu.speaker_id for adu in d.adus}) for d in corpus.discussions
    }
    adus_per_speaker: Counter = Counter()
    for d in corpus.discussions:
        for adu in d.adus:
            adus_per_speaker[f"{d.id}/{adu.speaker_id}"] += 1
    return ValidationReport(
        n_adus=corpus.n_adus,
        n_discussions=len(corpus.discussions),
        label_counts=counts,
        label_proportions_pct=proportions,
        speakers_per_discussion=speakers_per_discussion,
        adus_per_speaker=dict(adus_per_speaker),
        single_speaker_discussions=[
            d for d, n in speakers_per_discussion.items() if n == 1
        ],
    )


def make_folds(corpus: Corpus, k: int, seed: int) -> FoldPlan:
    """Assign discussions to k folds with a seeded shuffle.

    Fold sizes differ by at most one discussion; the assignment is
    deterministic for a fixed seed.
    """
    ids = [d.id for d in corpus.discussions]
    if k <= 0:
        raise DataError(f"fold count must be positive, got {k}")
    if k > len(ids):
        raise DataError(f"cannot make {k} folds from {len(ids)} discussions")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    assignments = {ids[int(pos)]: i % k for i, pos in enumerate(order)}
    return FoldPlan(k=k, assignments=assignments)


def make_adu_folds(corpus: Corpus, k: int, seed: int) -> dict[tuple[str, int], int]:
    """ADU-level fold assignment, for leakage comparisons only.

    Splitting individual ADUs lets local and speaker context of a test ADU
    appear in training; the harness folds by discussion by default.
    """
    keys = [(adu.discussion_id, adu.global_index) for adu in corpus.all_adus()]
    if k > len(keys):
        raise DataError(f"cannot make {k} folds from {len(keys)} ADUs")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    return {keys[int(pos)]: i % k for i, pos in enumerate(order)}
