"""Local and speaker context assembly around a target ADU.

Local context is the neighbouring ADUs regardless of speaker; speaker
context is the most recent earlier ADUs voiced by the target's speaker.
`local_context`/`speaker_context` answer "which ADUs are in the context";
`context_windows` lays context out into a fixed slot geometry (with
explicit padding) that encoders and classifiers can consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from argctx.corpus import Adu, Discussion
from argctx.errors import DataError

MAX_LOCAL_SIZE = 6
MAX_SPEAKER_SIZE = 40


class LocalPosition(Enum):
    PRIOR = "prior"
    NEXT = "next"
    BOTH = "both"

    @classmethod
    def parse(cls, raw: str) -> "LocalPosition":
        try:
            return cls(raw.strip().lower())
        except ValueError:
            raise DataError(f"unknown local position {raw!r}; use prior|next|both") from None


@dataclass(frozen=True)
class ContextSpec:
    """Context configuration for one experimental setting.

    Attention variants pin the corresponding size to its maximum: the layer
    is meant to discover the useful size/position on its own, so it always
    sees the widest window.
    """

    local_size: int = 0
    local_position: LocalPosition = LocalPosition.BOTH
    speaker_size: int = 0
    local_attention: bool = False
    speaker_attention: bool = False

    def __post_init__(self):
        if not (0 <= self.local_size <= MAX_LOCAL_SIZE):
            raise DataError(f"local_size must be in [0, {MAX_LOCAL_SIZE}], got {self.local_size}")
        if not (0 <= self.speaker_size <= MAX_SPEAKER_SIZE):
            raise DataError(
                f"speaker_size must be in [0, {MAX_SPEAKER_SIZE}], got {self.speaker_size}"
            )
        if self.local_attention and (
            self.local_position is not LocalPosition.BOTH or self.local_size != MAX_LOCAL_SIZE
        ):
            raise DataError("local attention requires position=both and local_size=6")
        if self.speaker_attention and self.speaker_size != MAX_SPEAKER_SIZE:
            raise DataError("speaker attention requires speaker_size=40")

    @classmethod
    def from_dict(cls, d: dict) -> "ContextSpec":
        position = d.get("local_position", "both")
        if isinstance(position, str):
            position = LocalPosition.parse(position)
        return cls(
            local_size=int(d.get("local_size", 0)),
            local_position=position,
            speaker_size=int(d.get("speaker_size", 0)),
            local_attention=bool(d.get("local_attention", False)),
            speaker_attention=bool(d.get("speaker_attention", False)),
        )

    def to_dict(self) -> dict:
        return {
            "local_size": self.local_size,
            "local_position": self.local_position.value,
            "speaker_size": self.speaker_size,
            "local_attention": self.local_attention,
            "speaker_attention": self.speaker_attention,
        }


def _check_target(discussion: Discussion, target_index: int) -> None:
    if not (0 <= target_index < len(discussion.adus)):
        raise DataError(
            f"target index {target_index} outside discussion {discussion.id!r} "
            f"of length {len(discussion.adus)}"
        )


def local_context(
    discussion: Discussion,
    target_index: int,
    size: int,
    position: LocalPosition,
) -> list[Adu]:
    """The `size` ADUs around the target, in discussion order, never the target.

    PRIOR/NEXT take the immediately preceding/following ADUs, truncated at
    the discussion boundary.  BOTH takes the `size` nearest ADUs overall,
    preferring the prior side on distance ties, so near a boundary the
    window fills up from whichever side still has ADUs.
    """
    _check_target(discussion, target_index)
    if size < 0:
        raise DataError(f"context size must be non-negative, got {size}")
    n = len(discussion.adus)
    if position is LocalPosition.PRIOR:
        picked = range(max(0, target_index - size), target_index)
    elif position is LocalPosition.NEXT:
        picked = range(target_index + 1, min(n, target_index + 1 + size))
    else:
        chosen: list[int] = []
        for dist in range(1, n):
            if len(chosen) >= size:
                break
            if target_index - dist >= 0:
                chosen.append(target_index - dist)
            if len(chosen) >= size:
                break
            if target_index + dist < n:
                chosen.append(target_index + dist)
        picked = sorted(chosen[:size])
    return [discussion.adus[i] for i in picked]


def speaker_context(discussion: Discussion, target_index: int, k: int) -> list[Adu]:
    """The k most recent prior ADUs by the target's speaker, ascending order."""
    _check_target(discussion, target_index)
    if k < 0:
        raise DataError(f"speaker context size must be non-negative, got {k}")
    speaker = discussion.adus[target_index].speaker_id
    prior = [
        adu for adu in discussion.adus[:target_index] if adu.speaker_id == speaker
    ]
    return prior[-k:] if k else []


def slot_capacities(size: int, position: LocalPosition) -> tuple[int, int]:
    """(prior slots, next slots); BOTH splits size with the extra slot prior."""
    if position is LocalPosition.PRIOR:
        return size, 0
    if position is LocalPosition.NEXT:
        return 0, size
    return math.ceil(size / 2), math.floor(size / 2)


@dataclass(frozen=True)
class ContextWindows:
    """Slot-aligned context for one target ADU.

    local_slots follows the concatenation layout: prior slots oldest to
    newest, then next slots nearest to farthest.  Missing slots are None
    (zero-padded and masked downstream); the target is never a slot.
    speaker_history is ascending in discussion order.
    """

    target: Adu
    local_slots: tuple[Adu | None, ...]
    slot_labels: tuple[str, ...]
    prior_slots: int
    speaker_history: tuple[Adu, ...]

    @property
    def local_mask(self) -> np.ndarray:
        return np.array([adu is not None for adu in self.local_slots], dtype=bool)


def context_windows(
    discussion: Discussion, target_index: int, spec: ContextSpec
) -> ContextWindows:
    """Fixed-geometry context assembly for one target ADU."""
    _check_target(discussion, target_index)
    n = len(discussion.adus)
    pr, nx = slot_capacities(spec.local_size, spec.local_position)
    slots: list[Adu | None] = []
    labels: list[str] = []
    for r in range(pr):
        idx = target_index - (pr - r)
        slots.append(discussion.adus[idx] if idx >= 0 else None)
        labels.append(f"prior_{pr - r}")
    for j in range(nx):
        idx = target_index + 1 + j
        slots.append(discussion.adus[idx] if idx < n else None)
        labels.append(f"next_{j + 1}")
    history = speaker_context(discussion, target_index, spec.speaker_size)
    return ContextWindows(
        target=discussion.adus[target_index],
        local_slots=tuple(slots),
        slot_labels=tuple(labels),
        prior_slots=pr,
        speaker_history=tuple(history),
    )


class AduEncoder(Protocol):
    """Maps an ADU to fixed-size vectors at frozen parameters."""

    @property
    def dim(self) -> int: ...

    @property
    def speaker_dim(self) -> int: ...

    def encode(self, adu: Adu) -> np.ndarray: ...

    def encode_speaker(self, adu: Adu) -> np.ndarray: ...


@dataclass(frozen=True)
class AssembledInput:
    """Encoded context for one target ADU.

    `local` holds one row per slot in layout order with zero rows at masked
    slots; `speaker` is the unpadded history sequence (empty array when the
    speaker has no prior ADUs).
    """

    target: np.ndarray
    local: np.ndarray
    local_mask: np.ndarray
    prior_slots: int
    speaker: np.ndarray

    @property
    def speaker_empty(self) -> bool:
        return self.speaker.shape[0] == 0

    def flat_vector(self) -> np.ndarray:
        """[prior slots oldest->newest, target, next slots nearest->farthest]."""
        pr = self.prior_slots
        return np.concatenate(
            [self.local[:pr].ravel(), self.target, self.local[pr:].ravel()]
        )


def assemble_example(
    discussion: Discussion,
    target_index: int,
    spec: ContextSpec,
    encoder: AduEncoder,
) -> AssembledInput:
    """Encode a target ADU with its context into padded, masked arrays."""
    windows = context_windows(discussion, target_index, spec)
    target_vec = np.asarray(encoder.encode(windows.target), dtype=float)
    if target_vec.shape != (encoder.dim,):
        raise DataError(
            f"encoder produced shape {target_vec.shape}, expected ({encoder.dim},)"
        )
    local = np.zeros((len(windows.local_slots), encoder.dim))
    for row, adu in enumerate(windows.local_slots):
        if adu is not None:
            vec = np.asarray(encoder.encode(adu), dtype=float)
            if vec.shape != (encoder.dim,):
                raise DataError(
                    f"encoder produced shape {vec.shape}, expected ({encoder.dim},)"
                )
            local[row] = vec
    if windows.speaker_history:
        speaker = np.stack(
            [np.asarray(encoder.encode_speaker(adu), dtype=float) for adu in windows.speaker_history]
        )
        if speaker.shape[1] != encoder.speaker_dim:
            raise DataError(
                f"speaker encoder produced dim {speaker.shape[1]}, expected {encoder.speaker_dim}"
            )
    else:
        speaker = np.zeros((0, encoder.speaker_dim))
    return AssembledInput(
        target=target_vec,
        local=local,
        local_mask=windows.local_mask,
        prior_slots=windows.prior_slots,
        speaker=speaker,
    )
