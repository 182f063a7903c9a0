import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_candidates, random_tree, subtree_via_head_chains
from mtcoverage.conllu import DepSentence, DepToken, reconstruct_text
from mtcoverage.spans import (
    DEFAULT_POS_OF_INTEREST,
    ErrorSpanCandidate,
    PosConfig,
    SpanMismatchError,
    extract_spans,
    make_partial,
    prune_subtrees,
    subtree_ids,
    token_level_spans,
)


def chain_sentence():
    return DepSentence(
        tokens=(
            DepToken(1, "a", "NOUN", 2, "dep"),
            DepToken(2, "b", "NOUN", 3, "dep"),
            DepToken(3, "c", "VERB", 0, "root"),
        ),
        sent_id="chain",
    )


def test_subtree_of_root_is_whole_chain():
    assert subtree_ids(chain_sentence(), 3) == frozenset({1, 2, 3})


def test_subtree_of_leaf_is_itself():
    assert subtree_ids(chain_sentence(), 1) == frozenset({1})


def test_subtree_unknown_id():
    with pytest.raises(KeyError):
        subtree_ids(chain_sentence(), 9)


def test_subtrees_match_head_chain_oracle(example_sentence):
    for tok in example_sentence.tokens:
        assert subtree_ids(example_sentence, tok.id) == subtree_via_head_chains(
            example_sentence, tok.id
        )


def test_no_pos_of_interest_no_candidates():
    sentence = DepSentence(
        tokens=(
            DepToken(1, "of", "ADP", 2, "case"),
            DepToken(2, "it", "PRON", 0, "root"),
        )
    )
    assert extract_spans(sentence) == []


def test_apple_fixture_candidates(apple_sentence):
    # Frozen expectation, cross-checked against the brute-force enumerator:
    # every subtree of the 7 tokens filtered by the three conditions.
    got = extract_spans(apple_sentence)
    assert [(c.head_id, tuple(sorted(c.token_ids)), c.text) for c in got] == [
        (2, (2,), "quickly"),
        (6, (4, 5, 6), "the red apple"),
        (5, (5,), "red"),
    ]
    assert {c.token_ids for c in got} == brute_force_candidates(
        apple_sentence, DEFAULT_POS_OF_INTEREST
    )


def test_candidates_pass_conditions_when_rechecked(apple_sentence, german_sentence):
    for sentence in (apple_sentence, german_sentence):
        n = len(sentence.tokens)
        for cand in extract_spans(sentence):
            assert cand.token_ids == subtree_via_head_chains(sentence, cand.head_id)
            assert sorted(cand.token_ids) == list(
                range(min(cand.token_ids), max(cand.token_ids) + 1)
            )
            assert any(
                sentence.token(i).upos in DEFAULT_POS_OF_INTEREST for i in cand.token_ids
            )
            assert len(cand.token_ids) < n


def test_whole_sentence_subtree_excluded():
    sentence = chain_sentence()
    assert all(c.head_id != 3 for c in extract_spans(sentence))


def test_char_ranges_slice_the_full_text(german_sentence):
    text = reconstruct_text(german_sentence)
    for cand in extract_spans(german_sentence):
        assert text[cand.char_range[0]:cand.char_range[1]] == cand.text


def test_candidate_ordering_start_then_longest_first():
    sentence = DepSentence(
        tokens=(
            DepToken(1, "big", "ADJ", 2, "amod"),
            DepToken(2, "dogs", "NOUN", 3, "nsubj"),
            DepToken(3, "run", "VERB", 0, "root"),
        )
    )
    got = [(min(c.token_ids), -len(c.token_ids)) for c in extract_spans(sentence)]
    assert got == sorted(got)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12))
def test_extract_spans_equals_brute_force_on_random_trees(seed, n):
    sentence = random_tree(random.Random(seed), n)
    got = {c.token_ids for c in extract_spans(sentence)}
    assert got == brute_force_candidates(sentence, DEFAULT_POS_OF_INTEREST)
    assert len(got) <= n


def test_make_partial_deletes_adjunct_phrase(landing_sentence):
    (cand,) = [c for c in extract_spans(landing_sentence) if c.text == "after landing"]
    assert make_partial(landing_sentence, cand) == "The plane was evacuated ."


def test_make_partial_two_token_sentence():
    sentence = DepSentence(
        tokens=(
            DepToken(1, "birds", "NOUN", 2, "nsubj"),
            DepToken(2, "sing", "VERB", 0, "root"),
        )
    )
    (cand,) = extract_spans(sentence)
    assert cand.text == "birds"
    assert make_partial(sentence, cand) == "sing"


def test_make_partial_matches_manual_deletion(example_sentence):
    for cand in extract_spans(example_sentence):
        expected = reconstruct_text(example_sentence, set(cand.token_ids))
        assert make_partial(example_sentence, cand) == expected


def test_make_partial_rejects_foreign_span(example_sentence):
    foreign = ErrorSpanCandidate(
        head_id=9, token_ids=frozenset({9, 10}), char_range=(0, 4), text="none"
    )
    with pytest.raises(SpanMismatchError):
        make_partial(example_sentence, foreign)


def test_token_level_spans_cover_every_token(apple_sentence):
    cands = token_level_spans(apple_sentence)
    assert [sorted(c.token_ids) for c in cands] == [[i] for i in range(1, 8)]
    text = reconstruct_text(apple_sentence)
    for cand in cands:
        assert text[cand.char_range[0]:cand.char_range[1]] == cand.text


def test_pos_config_from_file(tmp_path):
    path = tmp_path / "pos.txt"
    path.write_text("NOUN\nVERB  # verbs\n# comment line\nADJ\n", encoding="utf-8")
    assert PosConfig.from_file(path).pos_of_interest == frozenset({"NOUN", "VERB", "ADJ"})


def test_pos_config_rejects_empty():
    with pytest.raises(ValueError):
        PosConfig(frozenset())


def test_prune_subtrees_renumbers(apple_sentence):
    pruned = prune_subtrees(apple_sentence, {4, 5, 6})
    assert [t.form for t in pruned.tokens] == ["She", "quickly", "ate", "."]
    assert [t.id for t in pruned.tokens] == [1, 2, 3, 4]
    assert [t.head for t in pruned.tokens] == [3, 3, 0, 3]


def test_prune_subtrees_rejects_orphaning(apple_sentence):
    with pytest.raises(ValueError, match="complete subtrees"):
        prune_subtrees(apple_sentence, {6})  # deletes apple but keeps its children
