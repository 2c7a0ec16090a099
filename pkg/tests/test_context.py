import numpy as np
import pytest

from argctx.context import (
    MAX_LOCAL_SIZE,
    MAX_SPEAKER_SIZE,
    AssembledInput,
    ContextSpec,
    LocalPosition,
    assemble_example,
    context_windows,
    local_context,
    slot_capacities,
    speaker_context,
)
from argctx.errors import DataError

from conftest import make_corpus


def indices(adus):
    return [a.global_index for a in adus]


# --- worked example from the excerpt file: target is the last row ---------

def test_local_context_excerpt_target_row5(excerpt_corpus):
    disc = excerpt_corpus.discussions[0]
    ctx = local_context(disc, 4, size=3, position=LocalPosition.BOTH)
    assert indices(ctx) == [1, 2, 3]


def test_speaker_context_excerpt_target_row5(excerpt_corpus):
    disc = excerpt_corpus.discussions[0]
    ctx = speaker_context(disc, 4, k=3)
    assert indices(ctx) == [0, 1, 2]  # row 4 is another speaker, skipped
    assert all(a.speaker_id == "7" for a in ctx)


# --- boundary behaviour ----------------------------------------------------

@pytest.fixture
def plain_discussion():
    corpus = make_corpus(
        [("d0", f"s{i % 2}", f"adu {i}", "claim") for i in range(8)]
    )
    return corpus.discussions[0]


def test_local_context_prior_at_start_is_empty(plain_discussion):
    assert local_context(plain_discussion, 0, 2, LocalPosition.PRIOR) == []


def test_local_context_next_at_end_is_empty(plain_discussion):
    assert local_context(plain_discussion, 7, 2, LocalPosition.NEXT) == []


def test_local_context_size_zero(plain_discussion):
    for pos in LocalPosition:
        assert local_context(plain_discussion, 3, 0, pos) == []


def test_local_context_prior_and_next_windows(plain_discussion):
    assert indices(local_context(plain_discussion, 4, 3, LocalPosition.PRIOR)) == [1, 2, 3]
    assert indices(local_context(plain_discussion, 4, 2, LocalPosition.NEXT)) == [5, 6]


def test_local_context_both_interior_split(plain_discussion):
    # interior target: ceil(size/2) prior, floor(size/2) next
    assert indices(local_context(plain_discussion, 4, 3, LocalPosition.BOTH)) == [2, 3, 5]
    assert indices(local_context(plain_discussion, 4, 4, LocalPosition.BOTH)) == [2, 3, 5, 6]


def test_local_context_never_contains_target(plain_discussion):
    for pos in LocalPosition:
        for size in range(MAX_LOCAL_SIZE + 1):
            for t in range(len(plain_discussion.adus)):
                assert t not in indices(local_context(plain_discussion, t, size, pos))


def test_local_context_invalid_target(plain_discussion):
    with pytest.raises(DataError, match="target index"):
        local_context(plain_discussion, 8, 2, LocalPosition.PRIOR)
    with pytest.raises(DataError, match="target index"):
        local_context(plain_discussion, -1, 2, LocalPosition.PRIOR)


def test_speaker_context_first_adu_of_speaker(plain_discussion):
    assert speaker_context(plain_discussion, 0, 3) == []
    assert speaker_context(plain_discussion, 1, 3) == []  # s1's first ADU


def test_speaker_context_truncates_to_available(plain_discussion):
    ctx = speaker_context(plain_discussion, 6, 40)
    assert indices(ctx) == [0, 2, 4]


def _both_oracle(n, t, size):
    # nearest ADUs overall, prior wins distance ties, then ascending
    order = sorted(
        (i for i in range(n) if i != t),
        key=lambda i: (abs(i - t), 0 if i < t else 1),
    )
    return sorted(order[:size])


def _speaker_oracle(disc, t, k):
    same = [a.global_index for a in disc.adus
            if a.speaker_id == disc.adus[t].speaker_id and a.global_index < t]
    return same[-k:] if k else []


def test_context_matches_brute_force_oracles():
    rng = np.random.default_rng(17)
    for trial in range(30):
        n = int(rng.integers(1, 12))
        rows = [
            ("d0", f"s{int(rng.integers(0, 3))}", f"adu {i}", "claim")
            for i in range(n)
        ]
        disc = make_corpus(rows).discussions[0]
        for t in range(n):
            for size in range(MAX_LOCAL_SIZE + 1):
                got = indices(local_context(disc, t, size, LocalPosition.BOTH))
                assert got == _both_oracle(n, t, size), (trial, n, t, size)
            for k in (0, 1, 2, 5, MAX_SPEAKER_SIZE):
                got = indices(speaker_context(disc, t, k))
                assert got == _speaker_oracle(disc, t, k), (trial, n, t, k)


def test_speaker_context_output_ordering_properties(plain_discussion):
    for t in range(1, 8):
        ctx = speaker_context(plain_discussion, t, 40)
        idx = indices(ctx)
        assert idx == sorted(idx)
        assert all(i < t for i in idx)
        assert len({a.speaker_id for a in ctx} | {plain_discussion.adus[t].speaker_id}) == 1


# --- spec validation and slot geometry --------------------------------------

def test_context_spec_bounds():
    with pytest.raises(DataError, match="local_size"):
        ContextSpec(local_size=7)
    with pytest.raises(DataError, match="speaker_size"):
        ContextSpec(speaker_size=41)


def test_context_spec_attention_pins_sizes():
    ContextSpec(local_attention=True, local_size=6, local_position=LocalPosition.BOTH)
    ContextSpec(speaker_attention=True, speaker_size=40)
    with pytest.raises(DataError, match="local attention"):
        ContextSpec(local_attention=True, local_size=4)
    with pytest.raises(DataError, match="speaker attention"):
        ContextSpec(speaker_attention=True, speaker_size=10)


def test_context_spec_dict_round_trip():
    spec = ContextSpec(local_size=3, local_position=LocalPosition.PRIOR, speaker_size=5)
    assert ContextSpec.from_dict(spec.to_dict()) == spec


def test_local_position_parse():
    assert LocalPosition.parse(" Both ") is LocalPosition.BOTH
    with pytest.raises(DataError, match="middle"):
        LocalPosition.parse("middle")


def test_slot_capacities():
    assert slot_capacities(4, LocalPosition.PRIOR) == (4, 0)
    assert slot_capacities(4, LocalPosition.NEXT) == (0, 4)
    assert slot_capacities(4, LocalPosition.BOTH) == (2, 2)
    assert slot_capacities(3, LocalPosition.BOTH) == (2, 1)  # odd favours prior


def test_context_windows_layout_and_mask(plain_discussion):
    spec = ContextSpec(local_size=4, local_position=LocalPosition.BOTH)
    win = context_windows(plain_discussion, 0, spec)
    assert win.slot_labels == ("prior_2", "prior_1", "next_1", "next_2")
    assert win.prior_slots == 2
    assert [a.global_index if a else None for a in win.local_slots] == [None, None, 1, 2]
    np.testing.assert_array_equal(win.local_mask, [False, False, True, True])


class StubEncoder:
    """Deterministic per-index vectors so layout is readable in asserts."""

    def __init__(self, dim=3, speaker_dim=2):
        self._dim = dim
        self._speaker_dim = speaker_dim

    @property
    def dim(self):
        return self._dim

    @property
    def speaker_dim(self):
        return self._speaker_dim

    def encode(self, adu):
        return np.full(self._dim, float(adu.global_index + 1))

    def encode_speaker(self, adu):
        return np.full(self._speaker_dim, float(-(adu.global_index + 1)))


def test_assemble_example_flat_layout(plain_discussion):
    spec = ContextSpec(local_size=4, local_position=LocalPosition.BOTH)
    out = assemble_example(plain_discussion, 4, spec, StubEncoder(dim=2))
    # [prior oldest..newest, target, next nearest..farthest]
    expected = np.repeat([3.0, 4.0, 5.0, 6.0, 7.0], 2)
    np.testing.assert_array_equal(out.flat_vector(), expected)
    assert out.flat_vector().shape == (5 * 2,)


def test_assemble_example_pads_and_masks_missing_slots(plain_discussion):
    spec = ContextSpec(local_size=4, local_position=LocalPosition.BOTH)
    out = assemble_example(plain_discussion, 0, spec, StubEncoder(dim=3))
    np.testing.assert_array_equal(out.local_mask, [False, False, True, True])
    np.testing.assert_array_equal(out.local[0], np.zeros(3))
    np.testing.assert_array_equal(out.local[2], np.full(3, 2.0))


def test_assemble_example_all_context_missing():
    corpus = make_corpus([("d0", "s9", "only adu", "claim")])
    disc = corpus.discussions[0]
    spec = ContextSpec(local_size=2, local_position=LocalPosition.BOTH, speaker_size=3)
    out = assemble_example(disc, 0, spec, StubEncoder())
    assert not out.local_mask.any()
    np.testing.assert_array_equal(out.local, np.zeros_like(out.local))
    assert out.speaker_empty
    assert out.speaker.shape == (0, 2)


def test_assemble_example_speaker_block(plain_discussion):
    spec = ContextSpec(speaker_size=2)
    out = assemble_example(plain_discussion, 6, spec, StubEncoder(speaker_dim=4))
    assert out.speaker.shape == (2, 4)
    np.testing.assert_array_equal(out.speaker[0], np.full(4, -3.0))  # index 2
    np.testing.assert_array_equal(out.speaker[1], np.full(4, -5.0))  # index 4


def test_assemble_example_dimension_mismatch(plain_discussion):
    class BadEncoder(StubEncoder):
        def encode(self, adu):
            return np.zeros(self._dim + 1)

    spec = ContextSpec(local_size=2, local_position=LocalPosition.PRIOR)
    with pytest.raises(DataError, match="expected"):
        assemble_example(plain_discussion, 3, spec, BadEncoder())


def test_assemble_example_total_over_corpus(excerpt_corpus):
    # every ADU of every discussion yields an input
    spec = ContextSpec(local_size=4, local_position=LocalPosition.BOTH, speaker_size=6)
    enc = StubEncoder()
    for disc in excerpt_corpus.discussions:
        for t in range(len(disc.adus)):
            out = assemble_example(disc, t, spec, enc)
            assert isinstance(out, AssembledInput)
            assert out.flat_vector().shape == (5 * enc.dim,)
