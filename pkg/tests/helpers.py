"""Shared test utilities: independent oracles, random trees, toy corpora.

The oracles here deliberately re-derive expectations with different
algorithms than the library (head-chain walks instead of child expansion,
explicit confusion-matrix recounts, and so on) so they can vouch for it.
"""
from __future__ import annotations

import random

from mtcoverage.conllu import DepSentence, DepToken
from mtcoverage.scoring import Direction
from mtcoverage.synthgen import WordSubstitutionTranslator

INTEREST_POOL = ("NOUN", "PROPN", "VERB", "ADJ", "NUM", "ADV", "INTJ")
OTHER_POOL = ("DET", "ADP", "AUX", "PRON", "PART", "PUNCT", "SCONJ", "CCONJ", "X")
FULL_POOL = INTEREST_POOL + OTHER_POOL


def serialize_conllu(sentence: DepSentence) -> str:
    """Minimal CoNLL-U writer used to exercise the parse round trip."""
    lines = [f"# sent_id = {sentence.sent_id}"]
    if sentence.text is not None:
        lines.append(f"# text = {sentence.text}")
    for tok in sorted(sentence.tokens, key=lambda t: t.id):
        misc = "_" if tok.space_after else "SpaceAfter=No"
        lines.append(
            "\t".join(
                [str(tok.id), tok.form, "_", tok.upos, "_", "_", str(tok.head), tok.deprel, "_", misc]
            )
        )
    return "\n".join(lines) + "\n\n"


def random_tree(
    rng: random.Random,
    n_tokens: int,
    sent_id: str = "rnd",
    upos_pool: tuple[str, ...] = FULL_POOL,
    vocab: str = "w",
) -> DepSentence:
    """A uniformly shuffled single-rooted tree with random attachments."""
    order = list(range(1, n_tokens + 1))
    rng.shuffle(order)
    heads = {order[0]: 0}
    for i, tok_id in enumerate(order[1:], start=1):
        heads[tok_id] = order[rng.randrange(i)]
    return DepSentence(
        tokens=tuple(
            DepToken(
                id=i,
                form=f"{vocab}{i}",
                upos=rng.choice(upos_pool),
                head=heads[i],
                deprel="dep" if heads[i] else "root",
            )
            for i in range(1, n_tokens + 1)
        ),
        sent_id=sent_id,
    )


def subtree_via_head_chains(sentence: DepSentence, head_id: int) -> frozenset[int]:
    """Oracle: token i is in the subtree iff head_id lies on i's head chain."""
    by_id = {t.id: t for t in sentence.tokens}
    members = set()
    for tok in sentence.tokens:
        node = tok.id
        while node != 0:
            if node == head_id:
                members.add(tok.id)
                break
            node = by_id[node].head
    return frozenset(members)


def brute_force_candidates(sentence: DepSentence, pos_of_interest) -> set[frozenset[int]]:
    """Oracle: filter all n subtrees against the three span conditions."""
    n = len(sentence.tokens)
    keep: set[frozenset[int]] = set()
    for tok in sentence.tokens:
        ids = subtree_via_head_chains(sentence, tok.id)
        if len(ids) == n:
            continue
        if sorted(ids) != list(range(min(ids), max(ids) + 1)):
            continue
        if not any(sentence.token(i).upos in pos_of_interest for i in ids):
            continue
        keep.add(ids)
    return keep


class ScriptedScorer:
    """Backend replaying a fixed (conditioning, scored) -> logprobs table."""

    def __init__(self, table, direction=Direction("src", "tgt"), name="scripted"):
        self.table = dict(table)
        self.direction = direction
        self.name = name
        self.calls = 0

    def score_batch(self, reqs):
        out = []
        for req in reqs:
            self.calls += 1
            out.append(tuple(self.table[(req.conditioning_text, req.scored_text)]))
        return out


def translate_tree(sentence: DepSentence, mapping: dict[str, str]) -> DepSentence:
    """Mirror a source tree through a word-for-word mapping."""
    return DepSentence(
        tokens=tuple(
            DepToken(
                id=t.id,
                form=mapping.get(t.form, t.form),
                upos=t.upos,
                head=t.head,
                deprel=t.deprel,
                space_after=t.space_after,
            )
            for t in sentence.tokens
        ),
        sent_id=sentence.sent_id,
    )


def toy_corpus(
    n_sentences: int,
    rng: random.Random,
    min_tokens: int = 5,
    max_tokens: int = 10,
):
    """Sentences with globally unique words plus a consistent toy translator.

    Every word (per sentence position) is unique across the corpus and the
    translator maps each to a unique target word, so the implied lexicon
    covers the translations exactly: matching is unambiguous by design.
    """
    sentences = []
    mapping: dict[str, str] = {}
    for i in range(n_sentences):
        n = rng.randint(min_tokens, max_tokens)
        # Bias toward content words so most sentences have candidates.
        pool = INTEREST_POOL * 3 + OTHER_POOL
        sentence = random_tree(
            rng, n, sent_id=f"toy{i}", upos_pool=tuple(pool), vocab=f"s{i}w"
        )
        sentences.append(sentence)
        for tok in sentence.tokens:
            mapping[tok.form] = f"{tok.form}x"
    translator = WordSubstitutionTranslator(mapping)
    return sentences, translator, mapping
