import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ScriptedScorer, translate_tree
from mtcoverage.conllu import DepSentence, DepToken, reconstruct_text
from mtcoverage.detector import (
    BackendPair,
    DetectionError,
    DetectorConfig,
    MissingParseError,
    SegmentPair,
    detect,
    detect_additions,
    detect_omissions,
    result_to_record,
)
from mtcoverage.scoring import CachingScorer, Direction, LexiconScorer, ScoreError
from mtcoverage.spans import extract_spans


def apple_np_sentence():
    """the red apple fell -- candidates: {the red apple}, {red}."""
    return DepSentence(
        tokens=(
            DepToken(1, "the", "DET", 3, "det"),
            DepToken(2, "red", "ADJ", 3, "amod"),
            DepToken(3, "apple", "NOUN", 4, "nsubj"),
            DepToken(4, "fell", "VERB", 0, "root"),
        ),
        sent_id="np",
    )


def test_flags_span_with_positive_delta(example_sentence):
    full = reconstruct_text(example_sentence)
    backend = ScriptedScorer(
        {
            (full, "die katze"): (-1.2,),
            ("chased the cat.", "die katze"): (-0.9,),    # minus "The dog"
            ("The dog chased .", "die katze"): (-1.5,),   # minus "the cat"
        }
    )
    detections = detect_omissions(example_sentence, "die katze", backend)
    assert [d.span.text for d in detections] == ["The dog"]
    assert detections[0].delta == pytest.approx(0.3)
    assert detections[0].full_score == -1.2
    assert detections[0].partial_score == -0.9


def test_lexicon_flags_untranslated_adjective():
    sentence = apple_np_sentence()
    backend = LexiconScorer({"apple": {"apfel"}, "fell": {"fiel"}, "the": {"der"}})
    detections = detect_omissions(sentence, "der apfel fiel", backend)
    assert [d.span.text for d in detections] == ["red"]
    assert all(d.delta > 0 for d in detections)


def test_fully_covered_translation_yields_no_detections():
    sentence = DepSentence(
        tokens=(
            DepToken(1, "the", "DET", 2, "det"),
            DepToken(2, "apple", "NOUN", 3, "nsubj"),
            DepToken(3, "fell", "VERB", 0, "root"),
        ),
        sent_id="covered",
    )
    backend = LexiconScorer({"apple": {"apfel"}, "fell": {"fiel"}, "the": {"der"}})
    assert detect_omissions(sentence, "der apfel fiel", backend) == []


def test_addition_flags_extra_translation_word():
    src_tree = apple_np_sentence()
    mapping = {"the": "der", "red": "rote", "apple": "apfel", "fell": "fiel"}
    tgt_tree = translate_tree(src_tree, mapping)
    forward = LexiconScorer({s: {t} for s, t in mapping.items()})
    reverse = forward.inverted()
    # Source lost the word "red": its translation "rote" is superfluous.
    detections = detect_additions("the apple fell", tgt_tree, reverse)
    assert [d.span.text for d in detections] == ["rote"]
    assert all(d.kind == "addition" for d in detections)


def test_addition_without_candidates_is_empty():
    tgt_tree = DepSentence(
        tokens=(
            DepToken(1, "von", "ADP", 2, "case"),
            DepToken(2, "es", "PRON", 0, "root"),
        ),
        sent_id="nocand",
    )
    reverse = LexiconScorer({}, direction=Direction("de", "en"))
    assert detect_additions("anything here", tgt_tree, reverse) == []


def test_addition_flags_unmatched_phrase(german_sentence):
    reverse = LexiconScorer(
        {
            "aber": {"but"},
            "sie": {"they"},
            "haben": {"haven't"},
            "gespielt": {"played"},
            ".": {"."},
        },
        direction=Direction("de", "en"),
    )
    detections = detect_additions("But they haven't played .", german_sentence, reverse)
    assert [d.span.text for d in detections] == ["gegen ein Team wie uns"]


def make_pair(seg_id="seg"):
    src = apple_np_sentence()
    mapping = {"the": "der", "red": "rote", "apple": "apfel", "fell": "fiel"}
    tgt = translate_tree(src, mapping)
    forward = CachingScorer(LexiconScorer({s: {t} for s, t in mapping.items()}))
    reverse = CachingScorer(forward.inner.inverted())
    return (
        SegmentPair(seg_id=seg_id, source=src, translation=tgt),
        BackendPair(forward=forward, reverse=reverse),
    )


def test_detect_accounting_cold_cache():
    pair, backends = make_pair()
    n_src = len(extract_spans(pair.source))
    n_tgt = len(extract_spans(pair.translation))
    result = detect(pair, backends)
    assert result.score_calls == n_src + n_tgt + 2
    assert result.modes == ("omission", "addition")


def test_detect_no_candidates_still_scores_full_texts():
    src = DepSentence(
        tokens=(DepToken(1, "of", "ADP", 2, "case"), DepToken(2, "it", "PRON", 0, "root")),
        sent_id="empty",
    )
    tgt = DepSentence(
        tokens=(DepToken(1, "von", "ADP", 2, "case"), DepToken(2, "es", "PRON", 0, "root")),
        sent_id="empty",
    )
    forward = CachingScorer(LexiconScorer({"of": {"von"}, "it": {"es"}}))
    reverse = CachingScorer(forward.inner.inverted())
    result = detect(
        SegmentPair(seg_id="empty", source=src, translation=tgt),
        BackendPair(forward=forward, reverse=reverse),
    )
    assert result.detections == ()
    assert result.score_calls == 2


def test_overlap_policy_keeps_maximal_delta():
    sentence = apple_np_sentence()
    full = reconstruct_text(sentence)
    table = {
        (full, "x"): (-1.0,),
        ("fell", "x"): (-0.7,),          # delete "the red apple": delta 0.3
        ("the apple fell", "x"): (-0.9,),  # delete "red": delta 0.1
    }
    pair = SegmentPair(seg_id="s", source=sentence, translation_text="x")

    report_all = detect(
        pair,
        BackendPair(forward=_counting(ScriptedScorer(dict(table)))),
        DetectorConfig(overlap_policy="report_all"),
        modes=("omission",),
    )
    assert {d.span.text for d in report_all.detections} == {"the red apple", "red"}

    pruned = detect(
        pair,
        BackendPair(forward=_counting(ScriptedScorer(dict(table)))),
        DetectorConfig(overlap_policy="maximal_delta_nonoverlapping"),
        modes=("omission",),
    )
    assert [d.span.text for d in pruned.detections] == ["the red apple"]


def _counting(backend):
    return backend  # ScriptedScorer already tracks .calls


def test_missing_parse_is_configuration_error():
    pair = SegmentPair(seg_id="x", translation_text="text only")
    with pytest.raises(MissingParseError, match="source parse"):
        detect(pair, BackendPair(forward=LexiconScorer({})), modes=("omission",))


def test_missing_translation_text_is_configuration_error():
    pair = SegmentPair(seg_id="x", source=apple_np_sentence())
    with pytest.raises(MissingParseError, match="translation text"):
        detect(pair, BackendPair(forward=LexiconScorer({})), modes=("omission",))


class _FailOnPartial:
    """Scores the full text fine, errors on one specific partial."""

    name = "flaky"
    direction = Direction("en", "de")

    def __init__(self, failing_conditioning):
        self.failing = failing_conditioning
        self.calls = 0

    def score_batch(self, reqs):
        out = []
        for req in reqs:
            self.calls += 1
            if req.conditioning_text == self.failing:
                out.append(ScoreError("backend exploded", req.id))
            else:
                out.append((-1.0,))
        return out


def test_backend_error_carries_offending_span():
    sentence = apple_np_sentence()
    backend = _FailOnPartial("the apple fell")  # the partial with "red" deleted
    with pytest.raises(DetectionError, match="red") as err:
        detect_omissions(sentence, "der apfel", backend)
    assert err.value.span is not None and err.value.span.text == "red"


def test_determinism_modulo_wall_time():
    pair_a, backends_a = make_pair()
    pair_b, backends_b = make_pair()
    first = detect(pair_a, backends_a)
    second = detect(pair_b, backends_b)
    assert first.detections == second.detections
    assert first.score_calls == second.score_calls
    assert first.backend == second.backend


def _random_contrast_fixture(rng, n_candidates):
    """A scripted one-direction fixture over a random source tree."""
    scores = {"full": -rng.uniform(0.5, 3.0)}
    for i in range(n_candidates):
        scores[f"c{i}"] = -rng.uniform(0.1, 4.0)
    return scores


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_margin_monotonicity_on_random_scores(seed):
    rng = random.Random(seed)
    sentence = apple_np_sentence()
    full = reconstruct_text(sentence)
    candidates = extract_spans(sentence)
    table = {(full, "y"): (round(-rng.uniform(0.5, 3.0), 6),)}
    for cand in candidates:
        partial = reconstruct_text(sentence, cand.token_ids)
        table[(partial, "y")] = (round(-rng.uniform(0.1, 4.0), 6),)
    m1, m2 = sorted((rng.uniform(0, 1), rng.uniform(0, 1)))
    flagged_low = {
        d.span.token_ids
        for d in detect_omissions(sentence, "y", ScriptedScorer(table), DetectorConfig(margin=m1))
    }
    flagged_high = {
        d.span.token_ids
        for d in detect_omissions(sentence, "y", ScriptedScorer(table), DetectorConfig(margin=m2))
    }
    assert flagged_high <= flagged_low


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1),
       scale=st.floats(min_value=0.01, max_value=100, allow_nan=False))
def test_flagged_set_invariant_under_positive_scaling(seed, scale):
    rng = random.Random(seed)
    sentence = apple_np_sentence()
    full = reconstruct_text(sentence)
    table = {(full, "y"): tuple(round(-rng.uniform(0.1, 3.0), 6) for _ in range(3))}
    for cand in extract_spans(sentence):
        partial = reconstruct_text(sentence, cand.token_ids)
        table[(partial, "y")] = tuple(round(-rng.uniform(0.1, 3.0), 6) for _ in range(3))
    scaled = {key: tuple(v * scale for v in values) for key, values in table.items()}
    base_flags = {
        d.span.token_ids for d in detect_omissions(sentence, "y", ScriptedScorer(table))
    }
    scaled_flags = {
        d.span.token_ids for d in detect_omissions(sentence, "y", ScriptedScorer(scaled))
    }
    assert base_flags == scaled_flags


def test_result_record_shape(example_sentence):
    pair, backends = make_pair("rec")
    result = detect(pair, backends)
    record = result_to_record(result, pair)
    assert record["segment_id"] == "rec"
    assert set(record["directions"]) == {"omission", "addition"}
    assert isinstance(record["wall_time_ms"], float)
    assert record["source_text"] == "the red apple fell"
    for det in record["detections"]:
        assert det["kind"] in ("omission", "addition")
        assert det["side"] in ("source", "translation")
        assert det["char_range"][0] < det["char_range"][1]
